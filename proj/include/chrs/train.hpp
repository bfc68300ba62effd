#ifndef CHRS_TRAIN_HPP
#define CHRS_TRAIN_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "chrs/losses.hpp"
#include "chrs/model.hpp"
#include "chrs/synth.hpp"

namespace chrs {

struct TrainConfig {
    double lr_start = 5e-4;
    double lr_end = 1e-5;
    int batch_size = 24;
    int patience = 20;       // epochs without validation improvement
    int max_epochs = 200;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    int str_sample_count = 6;   // n segments for the straightness loss
    int len_sample_count = 64;  // surrogate points for the length loss

    void validate() const;
};

// Cosine decay from lr_start at epoch 0 to lr_end at the final epoch.
double cosine_lr(double lr_start, double lr_end, int epoch, int max_epochs);

struct TrainSample {
    std::string pair_id;
    ad::Tensor x;        // curved input [1,1,S,S]
    ad::Tensor target;   // straight ground truth [1,1,S,S]
    SkeletonPath path;   // skeleton of the curved input
    double target_len;   // its polyline arclength (the length to preserve)
};

struct TrainDataset {
    std::vector<TrainSample> samples;
    int image_size = 0;
};

// Loads curved/straight images and precomputes skeleton paths. Records whose
// skeleton cannot be extracted are dropped with a diagnostic.
TrainDataset load_dataset(const Manifest& manifest, const std::string& manifest_dir,
                          double binarize_threshold = 0.1);

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    double train_tex = 0.0;
    double train_len = 0.0;
    double train_str = 0.0;
    double train_all = 0.0;
    double val_all = 0.0;
};

struct TrainResult {
    Weights best_weights;
    int best_epoch = -1;
    double best_val = 0.0;
    int epochs_run = 0;
    std::vector<EpochStats> history;
    std::size_t skipped_steps = 0;
    std::size_t total_steps = 0;
};

// Adam over a Weights set; all state in doubles, deterministic.
class Adam {
public:
    Adam(const Weights& w, double beta1, double beta2, double eps);
    void step(Weights& w, const std::vector<ad::Tensor>& grads, double lr);

private:
    double beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<ad::Tensor> m_, v_;
};

// Mini-batch loop with per-epoch reshuffling, cosine learning rate,
// validation after every epoch and patience-based early stopping. The
// best-validation weights are retained. Fully deterministic given the seed.
TrainResult train_loop(const ModelConfig& model_cfg, const TrainDataset& train,
                       const TrainDataset& val, const TrainConfig& cfg, const LossWeights& lw,
                       const std::function<void(const EpochStats&)>& on_epoch = {},
                       std::int64_t max_steps = 0);

// CSV with header epoch,lr,train_tex,train_len,train_str,train_all,val_all.
void write_history_csv(const std::string& path, const std::vector<EpochStats>& history);

// Central finite differences against a supplied analytic gradient. Returns
// the max over checked coordinates of |a-n| / max(1e-8, |a|+|n|).
struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t evaluated = 0;
};
GradCheckResult grad_check(const std::function<double(const std::vector<double>&)>& value_fn,
                           const std::vector<double>& analytic_grad,
                           const std::vector<double>& point,
                           const std::vector<std::size_t>& coords, double epsilon = 1e-4);

// Full-model gradient gate on a small config: checks d(L_all)/d(parameter)
// for sampled coordinates of every tensor. Deterministic given the seed.
struct GateResult {
    double max_rel_err = 0.0;
    std::size_t coords_checked = 0;
};
GateResult model_gradient_gate(const ModelConfig& cfg, std::uint64_t seed,
                               int coords_per_tensor = 4, double epsilon = 1e-4);

}  // namespace chrs

#endif
