#ifndef CHRS_LOSSES_HPP
#define CHRS_LOSSES_HPP

#include <vector>

#include "chrs/autodiff.hpp"
#include "chrs/image.hpp"
#include "chrs/skeleton.hpp"

namespace chrs {

struct LossWeights {
    double alpha_tex = 1.0;
    double beta_len = 0.1;
    double theta_str = 0.1;
};

struct LossReport {
    double l_tex = 0.0;
    double l_len = 0.0;
    double l_str = 0.0;
    double l_all = 0.0;
};

// Straightness deviation of an ordered point sequence: rotate so the
// endpoint chord lies on the axial direction, then average the absolute
// segment slopes in that frame. Coincident endpoints return the cap 1.0.
double straightness_deviation(const std::vector<Vec2>& samples);

// --- plain (non-tape) losses, used for reporting and by the metrics module

double loss_tex(const Image& y, const Image& target);

// First-order inverse of the backward map at k resampled path points:
// q_i = u_i - D(u_i), D bilinearly interpolated with border clamping.
std::vector<Vec2> surrogate_skeleton(const MeshField& mesh, const SkeletonPath& path, int k = 64);

double loss_len(const MeshField& mesh, const SkeletonPath& path, double target_len, int k = 64);
double loss_str(const MeshField& mesh, const SkeletonPath& path, int n = 6);
double loss_all(const LossReport& components, const LossWeights& w);

// --- tape versions; mesh is a [2,H,W] Var, y/target are [N,1,H,W] Vars

ad::Var loss_tex_t(ad::Graph& g, ad::Var y, ad::Var target);
ad::Var surrogate_skeleton_t(ad::Graph& g, ad::Var mesh, const std::vector<Vec2>& points);  // [k,2]
ad::Var loss_len_t(ad::Graph& g, ad::Var mesh, const SkeletonPath& path, double target_len,
                   int k = 64);
ad::Var loss_str_t(ad::Graph& g, ad::Var mesh, const SkeletonPath& path, int n = 6);

// Straightness of a [k,2] point-sequence Var in the rotated frame.
ad::Var straightness_deviation_t(ad::Graph& g, ad::Var samples);

}  // namespace chrs

#endif
