#ifndef CHRS_CONFIG_HPP
#define CHRS_CONFIG_HPP

#include <string>

#include "chrs/losses.hpp"
#include "chrs/model.hpp"
#include "chrs/synth.hpp"
#include "chrs/train.hpp"

namespace chrs {

// Everything the CLI can configure, in one place.
struct PipelineConfig {
    ModelConfig model;
    TrainConfig train;
    LossWeights loss;
    GeneratorConfig synth;
};

// Applies one "section.key = value" assignment; unknown keys are errors.
void apply_config_kv(PipelineConfig& cfg, const std::string& key, const std::string& value);

// Flat key=value text, '#' comments, blank lines ignored.
PipelineConfig load_config_file(const std::string& path);
void merge_config_file(PipelineConfig& cfg, const std::string& path);

}  // namespace chrs

#endif
