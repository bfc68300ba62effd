#include "chrs/mesh_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace chrs {

namespace {

constexpr char kMagic[4] = {'C', 'H', 'R', 'M'};
constexpr std::uint8_t kVersion = 1;

void put_u32le(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    buf.push_back(static_cast<std::uint8_t>(v & 0xff));
    buf.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    buf.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    buf.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

void put_f32le(std::vector<std::uint8_t>& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32le(buf, bits);
}

std::uint32_t get_u32le(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

float get_f32le(const std::uint8_t* p) {
    std::uint32_t bits = get_u32le(p);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

void write_chrm(const std::string& path, const MeshField& mesh) {
    const std::size_t n = static_cast<std::size_t>(mesh.height()) * mesh.width();
    std::vector<std::uint8_t> buf;
    buf.reserve(13 + 8 * n);
    buf.insert(buf.end(), kMagic, kMagic + 4);
    buf.push_back(kVersion);
    put_u32le(buf, static_cast<std::uint32_t>(mesh.height()));
    put_u32le(buf, static_cast<std::uint32_t>(mesh.width()));
    for (double v : mesh.dy_plane()) put_f32le(buf, static_cast<float>(v));
    for (double v : mesh.dx_plane()) put_f32le(buf, static_cast<float>(v));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open CHRM for writing: " + path);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw io_error("short write to CHRM: " + path);
}

MeshField read_chrm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open CHRM for reading: " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
    if (buf.size() < 13 || std::memcmp(buf.data(), kMagic, 4) != 0)
        throw io_error("not a CHRM file: " + path);
    if (buf[4] != kVersion) throw io_error("unsupported CHRM version in " + path);

    std::uint32_t h = get_u32le(buf.data() + 5);
    std::uint32_t w = get_u32le(buf.data() + 9);
    if (h == 0 || w == 0) throw io_error("CHRM with zero dimension: " + path);
    const std::size_t n = static_cast<std::size_t>(h) * w;
    if (buf.size() != 13 + 8 * n) throw io_error("CHRM payload size mismatch: " + path);

    MeshField mesh(static_cast<int>(h), static_cast<int>(w));
    const std::uint8_t* p = buf.data() + 13;
    for (std::size_t i = 0; i < n; ++i, p += 4) mesh.dy_plane()[i] = get_f32le(p);
    for (std::size_t i = 0; i < n; ++i, p += 4) mesh.dx_plane()[i] = get_f32le(p);
    mesh.validate();
    return mesh;
}

}  // namespace chrs
