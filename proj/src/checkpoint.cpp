#include "chrs/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include <nlohmann/json.hpp>

namespace chrs {

using json = nlohmann::ordered_json;

namespace {

constexpr char kMagic[4] = {'C', 'H', 'R', 'W'};
constexpr std::uint8_t kVersion = 1;

json config_to_json(const ModelConfig& c) {
    return {{"input_size", c.input_size},
            {"encoder_stages", c.encoder_stages},
            {"base_channels", c.base_channels},
            {"patch_size", c.patch_size},
            {"embed_dim", c.embed_dim},
            {"attn_layers", c.attn_layers},
            {"attn_heads", c.attn_heads},
            {"refine_iters", c.refine_iters},
            {"refine_base_channels", c.refine_base_channels}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.input_size = j.at("input_size").get<int>();
    c.encoder_stages = j.at("encoder_stages").get<int>();
    c.base_channels = j.at("base_channels").get<int>();
    c.patch_size = j.at("patch_size").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.attn_layers = j.at("attn_layers").get<int>();
    c.attn_heads = j.at("attn_heads").get<int>();
    c.refine_iters = j.at("refine_iters").get<int>();
    c.refine_base_channels = j.at("refine_base_channels").get<int>();
    return c;
}

void put_u32le(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32le(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw io_error("checkpoint: truncated header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const Weights& weights) {
    json manifest = json::array();
    for (const auto& [name, t] : weights.entries())
        manifest.push_back({{"name", name}, {"shape", t.shape}});
    json header = {{"schema_version", 1}, {"config", config_to_json(cfg)}, {"tensors", manifest}};
    std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open checkpoint for writing: " + path);
    out.write(kMagic, 4);
    out.put(static_cast<char>(kVersion));
    put_u32le(out, static_cast<std::uint32_t>(hs.size()));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));

    std::vector<unsigned char> buf;
    for (const auto& [_, t] : weights.entries()) {
        buf.resize(static_cast<std::size_t>(t.numel()) * 4);
        for (std::int64_t i = 0; i < t.numel(); ++i) {
            float f = static_cast<float>(t[i]);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            buf[static_cast<std::size_t>(i) * 4 + 0] = static_cast<unsigned char>(bits & 0xff);
            buf[static_cast<std::size_t>(i) * 4 + 1] = static_cast<unsigned char>((bits >> 8) & 0xff);
            buf[static_cast<std::size_t>(i) * 4 + 2] = static_cast<unsigned char>((bits >> 16) & 0xff);
            buf[static_cast<std::size_t>(i) * 4 + 3] = static_cast<unsigned char>((bits >> 24) & 0xff);
        }
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }
    if (!out) throw io_error("short write to checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw io_error("not a checkpoint file: " + path);
    int version = in.get();
    if (version != kVersion) throw io_error("unsupported checkpoint version in " + path);
    std::uint32_t hlen = get_u32le(in);
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw io_error("checkpoint: truncated header json");

    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception& e) {
        throw io_error(std::string("checkpoint: bad header json: ") + e.what());
    }

    Checkpoint ck;
    ck.config = config_from_json(header.at("config"));
    for (const auto& entry : header.at("tensors")) {
        std::string name = entry.at("name").get<std::string>();
        std::vector<std::int64_t> shape = entry.at("shape").get<std::vector<std::int64_t>>();
        ad::Tensor t(shape);
        std::vector<unsigned char> buf(static_cast<std::size_t>(t.numel()) * 4);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!in) throw io_error("checkpoint: truncated tensor data for " + name);
        for (std::int64_t i = 0; i < t.numel(); ++i) {
            std::uint32_t bits = static_cast<std::uint32_t>(buf[static_cast<std::size_t>(i) * 4]) |
                                 (static_cast<std::uint32_t>(buf[static_cast<std::size_t>(i) * 4 + 1]) << 8) |
                                 (static_cast<std::uint32_t>(buf[static_cast<std::size_t>(i) * 4 + 2]) << 16) |
                                 (static_cast<std::uint32_t>(buf[static_cast<std::size_t>(i) * 4 + 3]) << 24);
            float f;
            std::memcpy(&f, &bits, 4);
            t[i] = static_cast<double>(f);
        }
        ck.weights.add(name, std::move(t));
    }
    return ck;
}

}  // namespace chrs
