#ifndef CHRS_SYNTH_HPP
#define CHRS_SYNTH_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "chrs/deform.hpp"
#include "chrs/image.hpp"

namespace chrs {

// Synthesis parameter ranges. All draws inside make_pair are a pure
// function of (straight image, seed, this config).
struct GeneratorConfig {
    double v_frac_min = 0.05;        // |v| as a fraction of skeleton arclength
    double v_frac_max = 0.20;
    double alpha_slight_min = 1.0;
    double alpha_slight_max = 3.0;
    double alpha_strong_min = 0.1;
    double alpha_strong_max = 0.5;
    double middle_frac = 0.8;        // control points stay in this central span
    double binarize_threshold = 0.1;
    double invert_tol = 0.05;
    int invert_max_iter = 50;
    // Tie-break kind when a pair draws an odd number of control points;
    // build_dataset alternates it to keep the dataset-level tally 1:1.
    FalloffKind majority_hint = FalloffKind::slight;
};

struct KindTally {
    int slight = 0;
    int strong = 0;
};

struct PairRecord {
    std::string pair_id;
    std::string straight_path;  // relative to the manifest's directory
    std::string curved_path;
    std::string mesh_path;
    DeformationRecipe recipe;
    double straight_length = 0.0;  // skeleton pixel counts
    double curved_length = 0.0;
    KindTally kind_tally;
};

struct Manifest {
    std::vector<PairRecord> records;
    std::uint64_t global_seed = 0;
    GeneratorConfig generator_config;
    std::string split_tag = "all";
};

struct PairResult {
    Image curved;
    MeshField gt_mesh;
    PairRecord record;  // file paths left empty; caller fills them
};

// Number of control points the pair at this seed will draw (the first draw
// of make_pair); exposed so build_dataset can plan kind balancing.
int peek_control_point_count(std::uint64_t seed);

// One synthetic curved variant plus its ground-truth straightening mesh.
// Throws input_error when skeleton extraction fails and inversion_error
// when the ground-truth mesh cannot be recovered.
PairResult make_pair(const Image& straight, std::uint64_t seed, const GeneratorConfig& config);

// Generates per_image variants for every PNG in input_dir, writes curved
// PNGs + CHRM meshes + a JSONL manifest into output_dir. Individual pair
// failures are skipped with a diagnostic on stderr.
Manifest build_dataset(const std::string& input_dir, const std::string& output_dir,
                       int per_image, std::uint64_t global_seed,
                       const GeneratorConfig& config = {});

// Groups records by source chromosome, shuffles the groups and partitions
// them 10:1:1 so no source appears in two splits. Remainders go to train.
struct SplitResult {
    Manifest train;
    Manifest val;
    Manifest test;
};
SplitResult split_manifest(const Manifest& manifest, std::uint64_t seed);

// JSONL persistence: one record object per line, schema_version included.
void write_manifest(const std::string& path, const Manifest& manifest);
Manifest read_manifest(const std::string& path);

// Source-chromosome group key of a record ("<stem>_vNNN" -> "<stem>").
std::string source_key(const std::string& pair_id);

}  // namespace chrs

#endif
