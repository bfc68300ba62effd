#ifndef CHRS_SKELETON_HPP
#define CHRS_SKELETON_HPP

#include <cstdint>
#include <vector>

#include "chrs/geometry.hpp"
#include "chrs/image.hpp"

namespace chrs {

// Row-major boolean raster; after cleanup exactly one 8-connected component.
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int height, int width)
        : h_(height), w_(width), bits_(static_cast<std::size_t>(height) * width, 0) {}

    int height() const { return h_; }
    int width() const { return w_; }
    bool get(int y, int x) const { return bits_[static_cast<std::size_t>(y) * w_ + x] != 0; }
    void set(int y, int x, bool v) { bits_[static_cast<std::size_t>(y) * w_ + x] = v ? 1 : 0; }
    const std::vector<std::uint8_t>& bits() const { return bits_; }

    std::size_t count() const;

private:
    int h_ = 0;
    int w_ = 0;
    std::vector<std::uint8_t> bits_;
};

// Thinned mask, one pixel wide: no fully-set 2x2 neighborhood remains.
using SkeletonMask = BinaryMask;

// Ordered medial-axis polyline from one endpoint to the other. Consecutive
// points are 8-neighbors; points never repeat.
struct SkeletonPath {
    std::vector<Vec2> points;

    std::size_t size() const { return points.size(); }
    // Euclidean polyline length in pixels.
    double arclength() const;
};

// Threshold, keep the largest 8-connected component, drop isolated pixels.
BinaryMask binarize(const Image& img, double threshold = 0.1);

// Zhang-Suen iterative thinning to a fixpoint, plus a final pass that
// removes redundant pixels of any remaining fully-set 2x2 block.
SkeletonMask thin(const BinaryMask& mask);

std::size_t pixel_length(const SkeletonMask& skel);

// Diameter path of the 8-connected skeleton graph via double BFS. Side
// branches are excluded. Ties break toward the smallest (y,x) endpoint.
SkeletonPath longest_path(const SkeletonMask& skel);

// k points at equal arclength spacing along the polyline; first and last
// coincide with the path endpoints.
std::vector<Vec2> resample_uniform(const SkeletonPath& path, int k);

// Unit tangent from a central difference over a +-window (clamped at ends).
Vec2 tangent_at(const SkeletonPath& path, std::size_t index, int window = 5);

// Unit perpendicular to the local tangent; of the two choices the one with
// positive y (tie: positive x) is returned.
Vec2 normal_at(const SkeletonPath& path, std::size_t index, int window = 5);

// Convenience: binarize -> thin -> longest_path.
SkeletonPath extract_path(const Image& img, double threshold = 0.1);

}  // namespace chrs

#endif
