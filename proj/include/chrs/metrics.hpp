#ifndef CHRS_METRICS_HPP
#define CHRS_METRICS_HPP

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "chrs/image.hpp"
#include "chrs/synth.hpp"

namespace chrs {

// Straightness score: skeletonize, sample n+1 uniform points, 1 minus the
// rotated-frame deviation, clamped to [0,1]. Unskeletonizable input scores 0
// and sets *flagged.
double s_score(const Image& y, int n = 6, bool* flagged = nullptr);

// Length score: 1 - |len(y) - len(x)| / len(x) over skeleton pixel counts,
// clamped to [0,1]. Throws input_error when x has no skeletonizable
// foreground; an empty y counts as length 0.
double l_score(const Image& y, const Image& x);

// Banding-texture similarity proxy: mean intensity in a 5 px disc at 128
// uniform skeleton positions of each image, then (1 + correlation)/2.
double tex_sim(const Image& y, const Image& reference, bool* flagged = nullptr);

struct ScoreRow {
    std::string pair_id;
    double s = 0.0;      // reported x100
    double l = 0.0;
    double t = 0.0;
    std::string flags;   // comma-separated diagnostics, empty when clean
    bool failed = false; // row-level error
};

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0;
};

struct ScoreReport {
    std::vector<ScoreRow> rows;
    Aggregate s, l, t;  // over non-failed rows, x100 scale
    std::size_t failed_rows = 0;
    void recompute();
};

// Scores every manifest record: y comes from `straightener`, the length
// reference is the curved input, and tex_sim compares against the straight
// ground truth when present (else the curved input, flagged "no-reference").
ScoreReport evaluate_manifest(
    const Manifest& manifest, const std::string& manifest_dir,
    const std::function<Image(const PairRecord&, const Image& curved)>& straightener, int n = 6);

// CSV: proxy note, header pair_id,s_score,l_score,tex_sim,flags, rows in
// pair_id order, then "#AGG mean±std" aggregate lines.
void write_report_csv(const std::string& path, const ScoreReport& report);

}  // namespace chrs

#endif
