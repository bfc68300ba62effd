#include "chrs/model.hpp"

#include <cmath>

#include "chrs/rng.hpp"

namespace chrs {

int token_count(int h, int w, int p) {
    if (p <= 0 || h <= 0 || w <= 0) throw config_error("token_count: non-positive sizes");
    if (h % p != 0 || w % p != 0)
        throw config_error("token_count: patch size must divide the feature grid");
    return (h / p) * (w / p);
}

int ModelConfig::tokens() const { return token_count(feature_grid(), feature_grid(), patch_size); }

void ModelConfig::validate() const {
    if (encoder_stages < 1) throw config_error("model: encoder_stages must be >= 1");
    if (input_size % (1 << encoder_stages) != 0)
        throw config_error("model: input_size must be divisible by 2^encoder_stages");
    if (input_size % 4 != 0) throw config_error("model: input_size must be divisible by 4");
    int g = feature_grid();
    if (g < patch_size) throw config_error("model: feature grid smaller than patch size");
    if (g % patch_size != 0) throw config_error("model: patch size must divide the feature grid");
    if (embed_dim % attn_heads != 0) throw config_error("model: embed_dim must divide by attn_heads");
    if (attn_layers < 0 || attn_heads < 1) throw config_error("model: bad attention sizes");
    if (refine_iters < 0) throw config_error("model: refine_iters must be >= 0");
    if (base_channels < 1 || refine_base_channels < 1) throw config_error("model: bad channel counts");
}

void Weights::add(const std::string& name, ad::Tensor t) {
    if (index_.count(name)) throw config_error("Weights: duplicate tensor " + name);
    index_[name] = tensors_.size();
    tensors_.emplace_back(name, std::move(t));
}

bool Weights::has(const std::string& name) const { return index_.count(name) > 0; }

ad::Tensor& Weights::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw config_error("Weights: missing tensor " + name);
    return tensors_[it->second].second;
}

const ad::Tensor& Weights::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw config_error("Weights: missing tensor " + name);
    return tensors_[it->second].second;
}

std::int64_t Weights::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.numel();
    return n;
}

namespace {

ad::Tensor randn(Rng& rng, std::vector<std::int64_t> shape, double stddev) {
    ad::Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
    return t;
}

void add_conv(Weights& w, Rng& rng, const std::string& name, int co, int ci, int k) {
    double std = std::sqrt(2.0 / (static_cast<double>(ci) * k * k));
    w.add(name + ".w", randn(rng, {co, ci, k, k}, std));
    w.add(name + ".b", ad::Tensor({co}, 0.0));
}

void add_linear(Weights& w, Rng& rng, const std::string& name, int in, int out) {
    double std = std::sqrt(2.0 / static_cast<double>(in));
    w.add(name + ".w", randn(rng, {in, out}, std));
    w.add(name + ".b", ad::Tensor({out}, 0.0));
}

void add_layernorm(Weights& w, const std::string& name, int dim) {
    w.add(name + ".g", ad::Tensor({dim}, 1.0));
    w.add(name + ".b", ad::Tensor({dim}, 0.0));
}

}  // namespace

Weights init_weights(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(mix_seed(seed, 0x57454947));
    Weights w;

    int in_ch = 1;
    for (int s = 0; s < cfg.encoder_stages; ++s) {
        int c = cfg.stage_channels(s);
        add_conv(w, rng, "enc" + std::to_string(s) + ".a", c, in_ch, 3);
        add_conv(w, rng, "enc" + std::to_string(s) + ".d", c, c, 3);
        in_ch = c;
    }

    if (cfg.attn_layers > 0) {
        const int c_top = cfg.stage_channels(cfg.encoder_stages - 1);
        const int feat = cfg.patch_size * cfg.patch_size * c_top;
        add_linear(w, rng, "tok.proj", feat, cfg.embed_dim);
        w.add("tok.pos", randn(rng, {cfg.tokens(), cfg.embed_dim}, 0.02));
        for (int l = 0; l < cfg.attn_layers; ++l) {
            std::string p = "attn" + std::to_string(l);
            add_layernorm(w, p + ".ln1", cfg.embed_dim);
            add_linear(w, rng, p + ".qkv", cfg.embed_dim, 3 * cfg.embed_dim);
            add_linear(w, rng, p + ".proj", cfg.embed_dim, cfg.embed_dim);
            add_layernorm(w, p + ".ln2", cfg.embed_dim);
            add_linear(w, rng, p + ".ff1", cfg.embed_dim, 4 * cfg.embed_dim);
            add_linear(w, rng, p + ".ff2", 4 * cfg.embed_dim, cfg.embed_dim);
        }
        add_linear(w, rng, "tok.out", cfg.embed_dim, feat);
    }

    for (int s = cfg.encoder_stages - 1; s >= 0; --s) {
        int carry = cfg.stage_channels(std::min(s + 1, cfg.encoder_stages - 1));
        add_conv(w, rng, "dec" + std::to_string(s), cfg.stage_channels(s),
                 carry + cfg.stage_channels(s), 3);
    }

    add_conv(w, rng, "head.pre", cfg.stage_channels(0), cfg.stage_channels(0), 3);
    w.add("head.out.w", ad::Tensor({ModelConfig::mesh_channels, cfg.stage_channels(0), 1, 1}, 0.0));
    w.add("head.out.b", ad::Tensor({ModelConfig::mesh_channels}, 0.0));

    if (cfg.refine_iters > 0) {
        const int rb = cfg.refine_base_channels;
        add_conv(w, rng, "ref.enc0", rb, 1 + ModelConfig::mesh_channels, 3);
        add_conv(w, rng, "ref.enc1", 2 * rb, rb, 3);
        add_conv(w, rng, "ref.enc2", 4 * rb, 2 * rb, 3);
        add_conv(w, rng, "ref.dec1", 2 * rb, 4 * rb + 2 * rb, 3);
        add_conv(w, rng, "ref.dec0", rb, 2 * rb + rb, 3);
        w.add("ref.out.w", ad::Tensor({ModelConfig::mesh_channels, rb, 1, 1}, 0.0));
        w.add("ref.out.b", ad::Tensor({ModelConfig::mesh_channels}, 0.0));
    }
    return w;
}

BoundWeights::BoundWeights(ad::Graph& g, const Weights& w, bool trainable) {
    for (const auto& [name, t] : w.entries()) {
        ad::Var v = trainable ? g.param(t) : g.constant(t);
        index_[name] = vars_.size();
        vars_.emplace_back(name, v);
    }
}

ad::Var BoundWeights::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw config_error("BoundWeights: missing tensor " + name);
    return vars_[it->second].second;
}

namespace {

ad::Var conv_block(ad::Graph& g, ad::Var x, const BoundWeights& w, const std::string& name,
                   int stride) {
    return g.gelu(g.conv2d(x, w.at(name + ".w"), w.at(name + ".b"), stride, 1));
}

// Multi-head self-attention + feed-forward, pre-norm residual wiring.
ad::Var transformer_layer(ad::Graph& g, ad::Var z, const BoundWeights& w, const std::string& p,
                          int heads) {
    const auto& zshape = g.value(z).shape;
    const std::int64_t n = zshape[0], t = zshape[1], e = zshape[2];
    const std::int64_t dh = e / heads;

    ad::Var zn = g.layernorm(z, w.at(p + ".ln1.g"), w.at(p + ".ln1.b"));
    ad::Var qkv = g.linear(zn, w.at(p + ".qkv.w"), w.at(p + ".qkv.b"));  // [N,T,3E]
    qkv = g.reshape(qkv, {n, t, 3, heads, dh});
    qkv = g.permute(qkv, {2, 0, 3, 1, 4});  // [3,N,H,T,dh]
    ad::Var q = g.reshape(g.select_front(qkv, 0), {n * heads, t, dh});
    ad::Var k = g.reshape(g.select_front(qkv, 1), {n * heads, t, dh});
    ad::Var v = g.reshape(g.select_front(qkv, 2), {n * heads, t, dh});

    ad::Var scores = g.scale(g.bmm(q, g.permute(k, {0, 2, 1})), 1.0 / std::sqrt(static_cast<double>(dh)));
    ad::Var att = g.softmax_lastdim(scores);
    ad::Var o = g.bmm(att, v);                         // [N*H,T,dh]
    o = g.permute(g.reshape(o, {n, heads, t, dh}), {0, 2, 1, 3});
    o = g.reshape(o, {n, t, e});
    z = g.add(z, g.linear(o, w.at(p + ".proj.w"), w.at(p + ".proj.b")));

    ad::Var zn2 = g.layernorm(z, w.at(p + ".ln2.g"), w.at(p + ".ln2.b"));
    ad::Var ff = g.linear(g.gelu(g.linear(zn2, w.at(p + ".ff1.w"), w.at(p + ".ff1.b"))),
                          w.at(p + ".ff2.w"), w.at(p + ".ff2.b"));
    return g.add(z, ff);
}

}  // namespace

RegressionOut forward_regression(ad::Graph& g, ad::Var x, const BoundWeights& w,
                                 const ModelConfig& cfg) {
    const auto& xs = g.value(x).shape;
    if (xs.size() != 4 || xs[1] != 1 || xs[2] != cfg.input_size || xs[3] != cfg.input_size)
        throw config_error("forward_regression: input shape does not match config");

    RegressionOut out;
    ad::Var h = x;
    for (int s = 0; s < cfg.encoder_stages; ++s) {
        std::string p = "enc" + std::to_string(s);
        ad::Var skip = conv_block(g, h, w, p + ".a", 1);
        out.skips.push_back(skip);
        h = conv_block(g, skip, w, p + ".d", 2);
    }
    out.f_m = h;  // [N, C_top, g, g]

    ad::Var d = h;
    if (cfg.attn_layers > 0) {
        const int gsz = cfg.feature_grid();
        const int c_top = cfg.stage_channels(cfg.encoder_stages - 1);
        ad::Var tok = g.patchify(h, cfg.patch_size);  // [N,Nk,p*p*C]
        ad::Var z = g.linear(tok, w.at("tok.proj.w"), w.at("tok.proj.b"));
        z = g.add_broadcast(z, w.at("tok.pos"));
        for (int l = 0; l < cfg.attn_layers; ++l)
            z = transformer_layer(g, z, w, "attn" + std::to_string(l), cfg.attn_heads);
        ad::Var back = g.linear(z, w.at("tok.out.w"), w.at("tok.out.b"));
        d = g.unpatchify(back, c_top, gsz / cfg.patch_size, gsz / cfg.patch_size, cfg.patch_size);
    }

    for (int s = cfg.encoder_stages - 1; s >= 0; --s) {
        d = g.upsample2(d);
        d = g.concat_channels(d, out.skips[static_cast<std::size_t>(s)]);
        d = conv_block(g, d, w, "dec" + std::to_string(s), 1);
    }

    ad::Var pre = conv_block(g, d, w, "head.pre", 1);
    ad::Var raw = g.conv2d(pre, w.at("head.out.w"), w.at("head.out.b"), 1, 0);
    out.m1 = g.scale(g.tanh(raw), cfg.mesh_scale());
    return out;
}

ad::Var refine_once(ad::Graph& g, ad::Var x, ad::Var mesh, const BoundWeights& w,
                    const ModelConfig& cfg) {
    ad::Var m_norm = g.scale(mesh, 1.0 / cfg.mesh_scale());
    ad::Var inp = g.concat_channels(x, m_norm);  // [N,3,S,S]
    ad::Var e0 = conv_block(g, inp, w, "ref.enc0", 1);
    ad::Var e1 = conv_block(g, e0, w, "ref.enc1", 2);
    ad::Var e2 = conv_block(g, e1, w, "ref.enc2", 2);
    ad::Var d1 = conv_block(g, g.concat_channels(g.upsample2(e2), e1), w, "ref.dec1", 1);
    ad::Var d0 = conv_block(g, g.concat_channels(g.upsample2(d1), e0), w, "ref.dec0", 1);
    ad::Var raw = g.conv2d(d0, w.at("ref.out.w"), w.at("ref.out.b"), 1, 0);
    return g.add(mesh, g.scale(g.tanh(raw), cfg.refine_scale()));
}

ForwardTrace forward(ad::Graph& g, ad::Var x, const BoundWeights& w, const ModelConfig& cfg) {
    RegressionOut reg = forward_regression(g, x, w, cfg);
    ForwardTrace tr;
    tr.f_m = reg.f_m;
    tr.m1 = reg.m1;
    ad::Var m = reg.m1;
    ad::Var m2 = reg.m1;
    for (int i = 0; i < cfg.refine_iters; ++i) {
        m = refine_once(g, x, m, w, cfg);
        if (i == 0) m2 = m;
    }
    tr.m2 = m2;
    tr.m3 = m;
    tr.y = g.warp(x, tr.m3);
    return tr;
}

ad::Tensor image_to_tensor(const Image& img) {
    ad::Tensor t({1, 1, img.height(), img.width()});
    std::copy(img.pixels().begin(), img.pixels().end(), t.data.begin());
    return t;
}

Image tensor_to_image(const ad::Tensor& t, std::int64_t batch_index) {
    if (t.rank() != 4 || t.dim(1) != 1) throw input_error("tensor_to_image: expects [N,1,H,W]");
    const std::int64_t h = t.dim(2), w = t.dim(3);
    Image img(static_cast<int>(h), static_cast<int>(w));
    const double* p = t.data.data() + batch_index * h * w;
    for (std::int64_t i = 0; i < h * w; ++i) {
        double v = p[i];
        img.pixels()[static_cast<std::size_t>(i)] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    }
    return img;
}

MeshField tensor_to_mesh(const ad::Tensor& t, std::int64_t batch_index) {
    if (t.rank() != 4 || t.dim(1) != 2) throw input_error("tensor_to_mesh: expects [N,2,H,W]");
    const std::int64_t h = t.dim(2), w = t.dim(3);
    MeshField m(static_cast<int>(h), static_cast<int>(w));
    const double* base = t.data.data() + batch_index * 2 * h * w;
    std::copy(base, base + h * w, m.dy_plane().begin());
    std::copy(base + h * w, base + 2 * h * w, m.dx_plane().begin());
    return m;
}

InferenceResult forward_image(const Image& x, const Weights& w, const ModelConfig& cfg) {
    ad::Graph g;
    ad::Var xv = g.constant(image_to_tensor(x));
    BoundWeights bw(g, w, /*trainable=*/false);
    ForwardTrace tr = forward(g, xv, bw, cfg);
    InferenceResult r;
    r.y = tensor_to_image(g.value(tr.y));
    r.m1 = tensor_to_mesh(g.value(tr.m1));
    r.m2 = tensor_to_mesh(g.value(tr.m2));
    r.m3 = tensor_to_mesh(g.value(tr.m3));
    return r;
}

}  // namespace chrs
