#include "chrs/losses.hpp"

#include <cmath>

#include "chrs/errors.hpp"

namespace chrs {

double straightness_deviation(const std::vector<Vec2>& samples) {
    if (samples.size() < 2) throw input_error("straightness: need at least 2 samples");
    const std::size_t n = samples.size() - 1;
    Vec2 chord = samples.back() - samples.front();
    double len = chord.norm();
    if (len == 0.0) return 1.0;  // coincident endpoints: maximally bent
    Vec2 e = chord * (1.0 / len);
    double acc = 0.0;
    for (std::size_t i = 1; i <= n; ++i) {
        Vec2 d = samples[i] - samples[i - 1];
        double axial = d.dot(e);
        double perp = e.cross(d);
        acc += std::fabs(perp / axial);
    }
    return acc / static_cast<double>(n);
}

double loss_tex(const Image& y, const Image& target) {
    if (!y.same_shape(target)) throw input_error("loss_tex: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < y.pixels().size(); ++i)
        acc += std::fabs(y.pixels()[i] - target.pixels()[i]);
    return acc / static_cast<double>(y.pixels().size());
}

std::vector<Vec2> surrogate_skeleton(const MeshField& mesh, const SkeletonPath& path, int k) {
    std::vector<Vec2> u = resample_uniform(path, k);
    std::vector<Vec2> q;
    q.reserve(u.size());
    for (const Vec2& p : u) {
        double dy, dx;
        mesh.sample_clamped(p.y, p.x, dy, dx);
        q.push_back(Vec2(p.y - dy, p.x - dx));
    }
    return q;
}

double loss_len(const MeshField& mesh, const SkeletonPath& path, double target_len, int k) {
    if (target_len <= 0.0) throw input_error("loss_len: target length must be positive");
    std::vector<Vec2> q = surrogate_skeleton(mesh, path, k);
    double l = 0.0;
    for (std::size_t i = 1; i < q.size(); ++i) l += (q[i] - q[i - 1]).norm();
    return std::fabs(l - target_len) / target_len;
}

double loss_str(const MeshField& mesh, const SkeletonPath& path, int n) {
    if (n < 2) throw input_error("loss_str: n must be >= 2");
    return straightness_deviation(surrogate_skeleton(mesh, path, n + 1));
}

double loss_all(const LossReport& c, const LossWeights& w) {
    return w.alpha_tex * c.l_tex + w.beta_len * c.l_len + w.theta_str * c.l_str;
}

// ------------------------------------------------------------------ tape side

ad::Var loss_tex_t(ad::Graph& g, ad::Var y, ad::Var target) {
    if (g.value(y).shape != g.value(target).shape) throw input_error("loss_tex: shape mismatch");
    return g.mean(g.abs(g.sub(y, target)));
}

ad::Var surrogate_skeleton_t(ad::Graph& g, ad::Var mesh, const std::vector<Vec2>& points) {
    ad::Var d = g.mesh_sample(mesh, points);  // [k,2]
    ad::Tensor u({static_cast<std::int64_t>(points.size()), 2});
    for (std::size_t i = 0; i < points.size(); ++i) {
        u[static_cast<std::int64_t>(i) * 2 + 0] = points[i].y;
        u[static_cast<std::int64_t>(i) * 2 + 1] = points[i].x;
    }
    return g.sub(g.constant(std::move(u)), d);
}

namespace {

// columns of a [k,2] tensor as two [k] vectors
std::pair<ad::Var, ad::Var> split_yx(ad::Graph& g, ad::Var pts) {
    ad::Var t = g.permute(pts, {1, 0});  // [2,k]
    return {g.select_front(t, 0), g.select_front(t, 1)};
}

// consecutive differences of a [k] vector -> [k-1]
ad::Var diffs(ad::Graph& g, ad::Var v) {
    const std::int64_t k = g.value(v).numel();
    return g.sub(g.slice_front(v, 1, k), g.slice_front(v, 0, k - 1));
}

}  // namespace

ad::Var straightness_deviation_t(ad::Graph& g, ad::Var samples) {
    const auto& shape = g.value(samples).shape;
    if (shape.size() != 2 || shape[1] != 2 || shape[0] < 2)
        throw input_error("straightness_t: expects [k,2] with k >= 2");
    const std::int64_t k = shape[0];

    auto [ys, xs] = split_yx(g, samples);
    ad::Var cy = g.sub(g.element(ys, k - 1), g.element(ys, 0));
    ad::Var cx = g.sub(g.element(xs, k - 1), g.element(xs, 0));
    ad::Var clen = g.sqrt(g.add(g.mul(cy, cy), g.mul(cx, cx)));
    ad::Var ey = g.div(cy, clen);
    ad::Var ex = g.div(cx, clen);

    ad::Var dy = diffs(g, ys);  // [k-1]
    ad::Var dx = diffs(g, xs);
    // axial = d . e ; perp = e x d (z-component in the (y,x) plane)
    ad::Var axial = g.add(g.mul(dy, ey), g.mul(dx, ex));
    ad::Var perp = g.sub(g.mul(ey, dx), g.mul(ex, dy));
    return g.mean(g.abs(g.div(perp, axial)));
}

ad::Var loss_len_t(ad::Graph& g, ad::Var mesh, const SkeletonPath& path, double target_len, int k) {
    if (target_len <= 0.0) throw input_error("loss_len: target length must be positive");
    ad::Var q = surrogate_skeleton_t(g, mesh, resample_uniform(path, k));
    auto [ys, xs] = split_yx(g, q);
    ad::Var dy = diffs(g, ys);
    ad::Var dx = diffs(g, xs);
    ad::Var seglen = g.sqrt(g.add(g.mul(dy, dy), g.mul(dx, dx)));
    ad::Var l = g.sum(seglen);
    return g.scale(g.abs(g.add_const(l, -target_len)), 1.0 / target_len);
}

ad::Var loss_str_t(ad::Graph& g, ad::Var mesh, const SkeletonPath& path, int n) {
    if (n < 2) throw input_error("loss_str: n must be >= 2");
    ad::Var q = surrogate_skeleton_t(g, mesh, resample_uniform(path, n + 1));
    return straightness_deviation_t(g, q);
}

}  // namespace chrs
