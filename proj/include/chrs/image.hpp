#ifndef CHRS_IMAGE_HPP
#define CHRS_IMAGE_HPP

#include <cstdint>
#include <vector>

#include "chrs/errors.hpp"

namespace chrs {

// How center_pad placed (and possibly rescaled) the content.
struct PadInfo {
    int offset_y = 0;   // top-left of the content bounding box in the canvas
    int offset_x = 0;
    double scale = 1.0; // uniform downscale applied before padding
};

// Single-channel raster. Intensities live in [0,1]; 0 is background,
// foreground is strictly positive.
class Image {
public:
    Image() = default;
    Image(int height, int width, double fill = 0.0)
        : h_(height), w_(width), px_(static_cast<std::size_t>(height) * width, fill) {
        if (height <= 0 || width <= 0) throw input_error("Image: non-positive dimensions");
    }
    Image(int height, int width, std::vector<double> pixels);

    int height() const { return h_; }
    int width() const { return w_; }

    double at(int y, int x) const { return px_[static_cast<std::size_t>(y) * w_ + x]; }
    double& at(int y, int x) { return px_[static_cast<std::size_t>(y) * w_ + x]; }

    const std::vector<double>& pixels() const { return px_; }
    std::vector<double>& pixels() { return px_; }

    const PadInfo& pad_info() const { return pad_; }
    void set_pad_info(const PadInfo& p) { pad_ = p; }

    bool same_shape(const Image& o) const { return h_ == o.h_ && w_ == o.w_; }

    // Throws input_error if any intensity is non-finite or outside [0,1].
    void validate() const;

private:
    int h_ = 0;
    int w_ = 0;
    std::vector<double> px_;
    PadInfo pad_;
};

// Per-pixel backward displacement field: the output pixel q samples the
// source coordinate q + displacement(q). Channel order is (dy, dx).
class MeshField {
public:
    MeshField() = default;
    MeshField(int height, int width)
        : h_(height), w_(width),
          dy_(static_cast<std::size_t>(height) * width, 0.0),
          dx_(static_cast<std::size_t>(height) * width, 0.0) {
        if (height <= 0 || width <= 0) throw input_error("MeshField: non-positive dimensions");
    }

    int height() const { return h_; }
    int width() const { return w_; }

    double dy(int y, int x) const { return dy_[static_cast<std::size_t>(y) * w_ + x]; }
    double dx(int y, int x) const { return dx_[static_cast<std::size_t>(y) * w_ + x]; }
    double& dy(int y, int x) { return dy_[static_cast<std::size_t>(y) * w_ + x]; }
    double& dx(int y, int x) { return dx_[static_cast<std::size_t>(y) * w_ + x]; }

    const std::vector<double>& dy_plane() const { return dy_; }
    const std::vector<double>& dx_plane() const { return dx_; }
    std::vector<double>& dy_plane() { return dy_; }
    std::vector<double>& dx_plane() { return dx_; }

    bool same_shape(const MeshField& o) const { return h_ == o.h_ && w_ == o.w_; }

    // Displacement interpolated at a real-valued coordinate; samples outside
    // the grid clamp to the nearest border displacement.
    void sample_clamped(double y, double x, double& out_dy, double& out_dx) const;

    // Finite and within the |d| <= max(H, W) sanity bound.
    void validate() const;

private:
    int h_ = 0;
    int w_ = 0;
    std::vector<double> dy_;
    std::vector<double> dx_;
};

// Raw decoded raster before normalization (any 8/16-bit range).
struct RawRaster {
    int height = 0;
    int width = 0;
    std::vector<std::uint16_t> values;
};

// Min-max rescale to [0,1]; optionally flip polarity so that chromosomes on
// light backgrounds come out light-on-dark. Constant rasters map to all-zero.
Image normalize_ingest(const RawRaster& raw, bool invert_polarity);

// Center the foreground bounding box in a target x target zero canvas,
// uniformly downscaling first when the box does not fit. Idempotent.
Image center_pad(const Image& img, int target = 256);

// Bilinear interpolation with zero outside the grid.
double bilinear_sample(const Image& img, double y, double x);

// out(q) = bilinear_sample(img, q + displacement(q)).
Image apply_mesh(const Image& img, const MeshField& mesh);

}  // namespace chrs

#endif
