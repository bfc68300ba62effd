#ifndef CHRS_DEFORM_HPP
#define CHRS_DEFORM_HPP

#include <cstdint>
#include <vector>

#include "chrs/geometry.hpp"
#include "chrs/image.hpp"
#include "chrs/skeleton.hpp"

namespace chrs {

enum class FalloffKind { slight, strong };

// One bending center: a skeleton point p pushed along v (perpendicular to
// the skeleton), with a falloff profile controlling how far the bend
// propagates along the chromosome axis.
struct ControlPointSpec {
    Vec2 p;                     // skeleton point, pixel units
    Vec2 v;                     // deformation vector, |v| = strength in pixels
    FalloffKind kind = FalloffKind::slight;
    double alpha_falloff = 2.0; // propagation constant, > 0 (slight needs >= 1)
};

// Fully determines one synthetic curved variant.
struct DeformationRecipe {
    std::vector<ControlPointSpec> control_points;  // 1..3
    std::uint64_t seed = 0;
    double normalizer = 1.0;  // d_max, pixels
};

// Falloff weight at normalized axial distance d in [0,1]:
//   slight: 1 - d^alpha      strong: alpha / (d + alpha)
double falloff(FalloffKind kind, double d, double alpha);

// Normalized distance of q from the line through p along v, which equals the
// axial offset along the skeleton tangent: min(1, |dot(q-p, tangent)|/d_max).
double axial_distance(const Vec2& q, const Vec2& p, const Vec2& tangent, double d_max);

// Axial half-extent of the path as seen from p: max_u |dot(u-p, tangent)|.
double default_normalizer(const SkeletonPath& path, const Vec2& p, const Vec2& tangent);

// Backward field bending the image around cp.p: displacement(q) =
// -falloff(kind, d(q), alpha) * v, so the curved image pulls from the
// straight one. Validates that p lies on the path (within 1 px) and that v
// is perpendicular to the local tangent (within 5 degrees).
MeshField single_field(int height, int width, const ControlPointSpec& cp,
                       const SkeletonPath& path, double d_max);

// Sequential composition: source(q) = Sa(Sb(q)), i.e.
// result(q) = b(q) + a interpolated at q + b(q), border-clamped.
MeshField compose_fields(const MeshField& a, const MeshField& b);

struct InvertResult {
    MeshField field;
    std::vector<std::uint8_t> valid;  // 1 where the iterate stayed in bounds
    double converged_fraction = 0.0;  // of in-bounds pixels
};

// Numeric inverse of a backward field by damped fixed-point iteration
// s <- q - D(s). Throws inversion_error when more than 5% of in-bounds
// pixels fail to reach tol within max_iter.
InvertResult invert_field(const MeshField& f, double tol = 0.05, int max_iter = 50);

}  // namespace chrs

#endif
