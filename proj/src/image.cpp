#include "chrs/image.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace chrs {

Image::Image(int height, int width, std::vector<double> pixels)
    : h_(height), w_(width), px_(std::move(pixels)) {
    if (height <= 0 || width <= 0) throw input_error("Image: non-positive dimensions");
    if (px_.size() != static_cast<std::size_t>(height) * width)
        throw input_error("Image: pixel buffer size does not match dimensions");
}

void Image::validate() const {
    for (double v : px_) {
        if (!std::isfinite(v) || v < 0.0 || v > 1.0)
            throw input_error("Image: intensity outside [0,1]");
    }
}

void MeshField::sample_clamped(double y, double x, double& out_dy, double& out_dx) const {
    double yc = std::clamp(y, 0.0, static_cast<double>(h_ - 1));
    double xc = std::clamp(x, 0.0, static_cast<double>(w_ - 1));
    int y0 = static_cast<int>(std::floor(yc));
    int x0 = static_cast<int>(std::floor(xc));
    if (y0 >= h_ - 1) y0 = h_ - 2 < 0 ? 0 : h_ - 2;
    if (x0 >= w_ - 1) x0 = w_ - 2 < 0 ? 0 : w_ - 2;
    int y1 = std::min(y0 + 1, h_ - 1);
    int x1 = std::min(x0 + 1, w_ - 1);
    double fy = yc - y0;
    double fx = xc - x0;
    double w00 = (1.0 - fy) * (1.0 - fx);
    double w01 = (1.0 - fy) * fx;
    double w10 = fy * (1.0 - fx);
    double w11 = fy * fx;
    out_dy = w00 * dy(y0, x0) + w01 * dy(y0, x1) + w10 * dy(y1, x0) + w11 * dy(y1, x1);
    out_dx = w00 * dx(y0, x0) + w01 * dx(y0, x1) + w10 * dx(y1, x0) + w11 * dx(y1, x1);
}

void MeshField::validate() const {
    const double bound = static_cast<double>(std::max(h_, w_));
    for (double v : dy_) {
        if (!std::isfinite(v) || std::fabs(v) > bound)
            throw input_error("MeshField: dy component out of sanity bound");
    }
    for (double v : dx_) {
        if (!std::isfinite(v) || std::fabs(v) > bound)
            throw input_error("MeshField: dx component out of sanity bound");
    }
}

Image normalize_ingest(const RawRaster& raw, bool invert_polarity) {
    if (raw.height <= 0 || raw.width <= 0 || raw.values.empty())
        throw input_error("normalize_ingest: empty raster");
    if (raw.values.size() != static_cast<std::size_t>(raw.height) * raw.width)
        throw input_error("normalize_ingest: raster buffer size mismatch");

    auto [mn_it, mx_it] = std::minmax_element(raw.values.begin(), raw.values.end());
    double mn = *mn_it, mx = *mx_it;

    Image out(raw.height, raw.width);
    if (mx > mn) {
        double inv = 1.0 / (mx - mn);
        for (std::size_t i = 0; i < raw.values.size(); ++i) {
            double v = (raw.values[i] - mn) * inv;
            out.pixels()[i] = invert_polarity ? 1.0 - v : v;
        }
    }
    // constant raster stays all-zero regardless of polarity
    return out;
}

namespace {

struct BBox {
    int y0 = 0, x0 = 0, y1 = -1, x1 = -1;  // inclusive; empty when y1 < y0
    bool empty() const { return y1 < y0 || x1 < x0; }
    int height() const { return y1 - y0 + 1; }
    int width() const { return x1 - x0 + 1; }
};

BBox foreground_bbox(const Image& img) {
    BBox b{img.height(), img.width(), -1, -1};
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            if (img.at(y, x) > 0.0) {
                b.y0 = std::min(b.y0, y);
                b.x0 = std::min(b.x0, x);
                b.y1 = std::max(b.y1, y);
                b.x1 = std::max(b.x1, x);
            }
    return b;
}

// Uniform bilinear downscale of a sub-rectangle into out_h x out_w.
Image downscale_region(const Image& img, const BBox& b, int out_h, int out_w) {
    Image out(out_h, out_w);
    double sy = static_cast<double>(b.height()) / out_h;
    double sx = static_cast<double>(b.width()) / out_w;
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            double src_y = b.y0 + (y + 0.5) * sy - 0.5;
            double src_x = b.x0 + (x + 0.5) * sx - 0.5;
            out.at(y, x) = bilinear_sample(img, src_y, src_x);
        }
    }
    return out;
}

}  // namespace

Image center_pad(const Image& img, int target) {
    if (target < 1) throw input_error("center_pad: target must be >= 1");

    BBox box = foreground_bbox(img);
    Image content;
    double scale = 1.0;
    if (box.empty()) {
        Image out(target, target);
        out.set_pad_info({0, 0, 1.0});
        return out;
    }

    if (box.height() > target || box.width() > target) {
        scale = static_cast<double>(target) / std::max(box.height(), box.width());
        int out_h = std::max(1, static_cast<int>(std::lround(box.height() * scale)));
        int out_w = std::max(1, static_cast<int>(std::lround(box.width() * scale)));
        content = downscale_region(img, box, out_h, out_w);
        // re-measure: interpolation can shave the extreme rows/columns
        BBox cb = foreground_bbox(content);
        if (!cb.empty() && (cb.y0 > 0 || cb.x0 > 0 || cb.y1 < content.height() - 1 ||
                            cb.x1 < content.width() - 1)) {
            Image trimmed(cb.height(), cb.width());
            for (int y = 0; y < cb.height(); ++y)
                for (int x = 0; x < cb.width(); ++x)
                    trimmed.at(y, x) = content.at(cb.y0 + y, cb.x0 + x);
            content = std::move(trimmed);
        }
    } else {
        content = Image(box.height(), box.width());
        for (int y = 0; y < box.height(); ++y)
            for (int x = 0; x < box.width(); ++x)
                content.at(y, x) = img.at(box.y0 + y, box.x0 + x);
    }

    int off_y = (target - content.height() + 1) / 2;
    int off_x = (target - content.width() + 1) / 2;
    Image out(target, target);
    for (int y = 0; y < content.height(); ++y)
        for (int x = 0; x < content.width(); ++x)
            out.at(off_y + y, off_x + x) = content.at(y, x);
    out.set_pad_info({off_y, off_x, scale});
    return out;
}

double bilinear_sample(const Image& img, double y, double x) {
    if (!std::isfinite(y) || !std::isfinite(x))
        throw input_error("bilinear_sample: non-finite coordinates");

    int y0 = static_cast<int>(std::floor(y));
    int x0 = static_cast<int>(std::floor(x));
    int y1 = y0 + 1;
    int x1 = x0 + 1;
    const int h = img.height(), w = img.width();
    if (y1 < 0 || y0 > h - 1 || x1 < 0 || x0 > w - 1) return 0.0;

    double fy = y - y0;
    double fx = x - x0;
    auto px = [&](int yy, int xx) -> double {
        return (yy < 0 || yy >= h || xx < 0 || xx >= w) ? 0.0 : img.at(yy, xx);
    };
    double top = (1.0 - fx) * px(y0, x0) + fx * px(y0, x1);
    double bot = (1.0 - fx) * px(y1, x0) + fx * px(y1, x1);
    return (1.0 - fy) * top + fy * bot;
}

Image apply_mesh(const Image& img, const MeshField& mesh) {
    if (img.height() != mesh.height() || img.width() != mesh.width())
        throw input_error("apply_mesh: image/mesh dimension mismatch");
    Image out(img.height(), img.width());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            out.at(y, x) = bilinear_sample(img, y + mesh.dy(y, x), x + mesh.dx(y, x));
    return out;
}

}  // namespace chrs
