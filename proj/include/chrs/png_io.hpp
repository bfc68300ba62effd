#ifndef CHRS_PNG_IO_HPP
#define CHRS_PNG_IO_HPP

#include <string>

#include "chrs/image.hpp"

namespace chrs {

// Decode any libpng-readable file to a grayscale raster. Color inputs are
// reduced to luminance; 16-bit depth is preserved in the 16-bit values.
RawRaster read_png_raw(const std::string& path);

// Load an already-normalized pipeline image: 8-bit grayscale, v/255.
Image read_png_image(const std::string& path);

// Write 8-bit grayscale; quantizes by round(v*255).
void write_png_image(const std::string& path, const Image& img);

}  // namespace chrs

#endif
