#ifndef CHRS_MODEL_HPP
#define CHRS_MODEL_HPP

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "chrs/autodiff.hpp"
#include "chrs/image.hpp"

namespace chrs {

// Architecture hyperparameters. Defaults are sized for CPU training and stay
// under one million parameters.
struct ModelConfig {
    int input_size = 256;
    int encoder_stages = 3;   // each stage halves resolution
    int base_channels = 16;   // doubles per stage: 16/32/64
    int patch_size = 2;       // token patch on the feature grid
    int embed_dim = 96;
    int attn_layers = 4;      // 0 bypasses tokenization entirely
    int attn_heads = 4;
    int refine_iters = 2;     // shared-weight refinement passes (M2, M3)
    int refine_base_channels = 8;
    static constexpr int mesh_channels = 2;

    int feature_grid() const { return input_size >> encoder_stages; }
    int stage_channels(int s) const { return base_channels << s; }
    double mesh_scale() const { return input_size / 4.0; }       // tanh output bound
    double refine_scale() const { return mesh_scale() / 4.0; }   // residual bound per pass
    int tokens() const;

    void validate() const;  // throws config_error
};

// N_k = h*w / p^2; throws config_error when p does not divide h and w.
int token_count(int h, int w, int p);

// Named parameter tensors in a fixed order; shapes derive from ModelConfig.
class Weights {
public:
    void add(const std::string& name, ad::Tensor t);
    bool has(const std::string& name) const;
    ad::Tensor& at(const std::string& name);
    const ad::Tensor& at(const std::string& name) const;

    std::size_t size() const { return tensors_.size(); }
    const std::vector<std::pair<std::string, ad::Tensor>>& entries() const { return tensors_; }
    std::vector<std::pair<std::string, ad::Tensor>>& entries() { return tensors_; }

    std::int64_t parameter_count() const;

private:
    std::vector<std::pair<std::string, ad::Tensor>> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Seeded initialization; the mesh head and refinement output layers start at
// exact zeros so a fresh model is the identity map.
Weights init_weights(const ModelConfig& cfg, std::uint64_t seed);

// Parameters registered on a graph; trainable ones accumulate gradients.
class BoundWeights {
public:
    BoundWeights(ad::Graph& g, const Weights& w, bool trainable);
    ad::Var at(const std::string& name) const;
    const std::vector<std::pair<std::string, ad::Var>>& entries() const { return vars_; }

private:
    std::vector<std::pair<std::string, ad::Var>> vars_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct RegressionOut {
    ad::Var m1;                  // [N,2,S,S] in pixel units
    ad::Var f_m;                 // encoder feature map [N,C,g,g]
    std::vector<ad::Var> skips;  // per-stage features for the decoder
};

// Encoder -> tokens -> self-attention -> decoder with skips -> mesh head.
RegressionOut forward_regression(ad::Graph& g, ad::Var x, const BoundWeights& w,
                                 const ModelConfig& cfg);

// One shared-weight refinement pass: concat(x, mesh) -> residual displacement.
ad::Var refine_once(ad::Graph& g, ad::Var x, ad::Var mesh, const BoundWeights& w,
                    const ModelConfig& cfg);

struct ForwardTrace {
    ad::Var f_m;
    ad::Var m1;
    ad::Var m2;
    ad::Var m3;
    ad::Var y;  // warp(x, m3)
};

// Full forward pass; x is [N,1,S,S].
ForwardTrace forward(ad::Graph& g, ad::Var x, const BoundWeights& w, const ModelConfig& cfg);

// Inference on one image, no gradients.
struct InferenceResult {
    Image y;
    MeshField m1, m2, m3;
};
InferenceResult forward_image(const Image& x, const Weights& w, const ModelConfig& cfg);

// [N,1,H,W] tensor from images / back.
ad::Tensor image_to_tensor(const Image& img);
Image tensor_to_image(const ad::Tensor& t, std::int64_t batch_index = 0);
MeshField tensor_to_mesh(const ad::Tensor& t, std::int64_t batch_index = 0);

}  // namespace chrs

#endif
