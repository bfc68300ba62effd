#include "chrs/deform.hpp"

#include <algorithm>
#include <cmath>

#include "chrs/errors.hpp"

namespace chrs {

double falloff(FalloffKind kind, double d, double alpha) {
    if (alpha <= 0.0) throw input_error("falloff: alpha must be positive");
    d = std::clamp(d, 0.0, 1.0);
    if (kind == FalloffKind::slight) return 1.0 - std::pow(d, alpha);
    return alpha / (d + alpha);
}

double axial_distance(const Vec2& q, const Vec2& p, const Vec2& tangent, double d_max) {
    if (d_max <= 0.0) throw input_error("axial_distance: d_max must be positive");
    double d = std::fabs((q - p).dot(tangent)) / d_max;
    return std::min(1.0, d);
}

double default_normalizer(const SkeletonPath& path, const Vec2& p, const Vec2& tangent) {
    double m = 0.0;
    for (const Vec2& u : path.points) m = std::max(m, std::fabs((u - p).dot(tangent)));
    return m;
}

namespace {

// Index of the path point closest to p, and that distance.
std::pair<std::size_t, double> nearest_on_path(const SkeletonPath& path, const Vec2& p) {
    std::size_t best = 0;
    double best_d = (path.points[0] - p).norm();
    for (std::size_t i = 1; i < path.points.size(); ++i) {
        double d = (path.points[i] - p).norm();
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return {best, best_d};
}

}  // namespace

MeshField single_field(int height, int width, const ControlPointSpec& cp,
                       const SkeletonPath& path, double d_max) {
    if (path.points.size() < 2) throw input_error("single_field: path too short");
    if (cp.v.norm() <= 0.0) throw input_error("single_field: |v| must be positive");
    if (cp.alpha_falloff <= 0.0) throw input_error("single_field: alpha must be positive");
    if (cp.kind == FalloffKind::slight && cp.alpha_falloff < 1.0)
        throw input_error("single_field: slight falloff needs alpha >= 1");
    if (d_max <= 0.0) throw input_error("single_field: d_max must be positive");

    auto [idx, dist] = nearest_on_path(path, cp.p);
    if (dist > 1.0) throw input_error("single_field: control point not on path");
    Vec2 tangent = tangent_at(path, idx);

    // v must be perpendicular to the skeleton within 5 degrees
    double cosang = std::fabs(tangent.dot(cp.v.normalized()));
    if (cosang > std::sin(5.0 * M_PI / 180.0))
        throw input_error("single_field: v is not perpendicular to the skeleton");

    MeshField mesh(height, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double d = axial_distance(Vec2(y, x), cp.p, tangent, d_max);
            double w = falloff(cp.kind, d, cp.alpha_falloff);
            mesh.dy(y, x) = -w * cp.v.y;
            mesh.dx(y, x) = -w * cp.v.x;
        }
    }
    return mesh;
}

MeshField compose_fields(const MeshField& a, const MeshField& b) {
    if (!a.same_shape(b)) throw input_error("compose_fields: shape mismatch");
    MeshField out(a.height(), a.width());
    for (int y = 0; y < a.height(); ++y) {
        for (int x = 0; x < a.width(); ++x) {
            double by = b.dy(y, x), bx = b.dx(y, x);
            double ay, ax;
            a.sample_clamped(y + by, x + bx, ay, ax);
            out.dy(y, x) = by + ay;
            out.dx(y, x) = bx + ax;
        }
    }
    return out;
}

namespace {

// |s + D(s) - q| for the current iterate.
double inversion_residual(const MeshField& f, double sy, double sx, double qy, double qx) {
    double dy, dx;
    f.sample_clamped(sy, sx, dy, dx);
    return std::hypot(sy + dy - qy, sx + dx - qx);
}

}  // namespace

InvertResult invert_field(const MeshField& f, double tol, int max_iter) {
    const int h = f.height(), w = f.width();
    InvertResult res;
    res.field = MeshField(h, w);
    res.valid.assign(static_cast<std::size_t>(h) * w, 1);

    std::size_t in_bounds = 0, converged = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double qy = y, qx = x;
            double sy = qy, sx = qx;  // iterate toward the source of q
            double resid = inversion_residual(f, sy, sx, qy, qx);
            double lambda = 1.0;  // step damping, shrunk when a step regresses
            bool ok = resid <= tol;
            for (int it = 0; it < max_iter && !ok; ++it) {
                double dy, dx;
                f.sample_clamped(sy, sx, dy, dx);
                double ny = sy + lambda * (qy - dy - sy);
                double nx = sx + lambda * (qx - dx - sx);
                double nresid = inversion_residual(f, ny, nx, qy, qx);
                if (nresid < resid) {
                    sy = ny;
                    sx = nx;
                    resid = nresid;
                    lambda = std::min(1.0, lambda * 1.25);
                    ok = resid <= tol;
                } else {
                    lambda *= 0.5;
                    if (lambda < 1e-3) break;
                }
            }
            bool inside = sy >= 0.0 && sy <= h - 1 && sx >= 0.0 && sx <= w - 1;
            std::size_t idx = static_cast<std::size_t>(y) * w + x;
            if (!inside) {
                // source lies off the grid; keep the clamped estimate
                res.valid[idx] = 0;
            } else {
                ++in_bounds;
                if (ok) ++converged;
            }
            res.field.dy(y, x) = sy - qy;
            res.field.dx(y, x) = sx - qx;
        }
    }
    res.converged_fraction = in_bounds > 0 ? static_cast<double>(converged) / in_bounds : 1.0;
    if (in_bounds > 0 && res.converged_fraction < 0.95)
        throw inversion_error("invert_field: fixed-point iteration failed on more than 5% of pixels");
    return res;
}

}  // namespace chrs
