#ifndef CHRS_MESH_IO_HPP
#define CHRS_MESH_IO_HPP

#include <string>

#include "chrs/image.hpp"

namespace chrs {

// CHRM displacement-field container:
//   bytes 0-3   magic "CHRM"
//   byte  4     version (1)
//   bytes 5-8   H, little-endian uint32
//   bytes 9-12  W, little-endian uint32
//   H*W float32 LE dy values, row-major, then H*W float32 LE dx values.
// Values are quantized to float32 on write; the round-trip is bit-exact.
void write_chrm(const std::string& path, const MeshField& mesh);
MeshField read_chrm(const std::string& path);

}  // namespace chrs

#endif
