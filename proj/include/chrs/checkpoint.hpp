#ifndef CHRS_CHECKPOINT_HPP
#define CHRS_CHECKPOINT_HPP

#include <string>

#include "chrs/model.hpp"

namespace chrs {

// Versioned checkpoint container: magic "CHRW", version byte, a length-
// prefixed JSON header echoing the model config and the tensor manifest
// (names + shapes), then the tensor data as little-endian float32 in
// manifest order. save(load(f)) is byte-identical to f.
void save_checkpoint(const std::string& path, const ModelConfig& cfg, const Weights& weights);

struct Checkpoint {
    ModelConfig config;
    Weights weights;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace chrs

#endif
