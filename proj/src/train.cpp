#include "chrs/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "chrs/png_io.hpp"
#include "chrs/rng.hpp"

namespace fs = std::filesystem;

namespace chrs {

void TrainConfig::validate() const {
    if (!(lr_start > lr_end && lr_end > 0.0)) throw config_error("train: need lr_start > lr_end > 0");
    if (batch_size < 1) throw config_error("train: batch_size must be >= 1");
    if (patience < 1 || max_epochs < 1) throw config_error("train: bad patience/max_epochs");
    if (str_sample_count < 2) throw config_error("train: str_sample_count must be >= 2");
    if (len_sample_count < 2) throw config_error("train: len_sample_count must be >= 2");
}

double cosine_lr(double lr_start, double lr_end, int epoch, int max_epochs) {
    if (max_epochs <= 1) return lr_start;
    double t = static_cast<double>(std::clamp(epoch, 0, max_epochs - 1)) / (max_epochs - 1);
    return lr_end + (lr_start - lr_end) * 0.5 * (1.0 + std::cos(M_PI * t));
}

TrainDataset load_dataset(const Manifest& manifest, const std::string& manifest_dir,
                          double binarize_threshold) {
    TrainDataset ds;
    for (const auto& r : manifest.records) {
        try {
            Image curved = read_png_image((fs::path(manifest_dir) / r.curved_path).string());
            Image straight = read_png_image((fs::path(manifest_dir) / r.straight_path).string());
            if (!curved.same_shape(straight))
                throw input_error("curved/straight shape mismatch");
            TrainSample s;
            s.pair_id = r.pair_id;
            s.path = extract_path(curved, binarize_threshold);
            if (s.path.points.size() < 2) throw input_error("degenerate skeleton");
            s.target_len = s.path.arclength();
            s.x = image_to_tensor(curved);
            s.target = image_to_tensor(straight);
            if (ds.image_size == 0) ds.image_size = curved.height();
            if (curved.height() != ds.image_size || curved.width() != ds.image_size)
                throw input_error("dataset images must share one square size");
            ds.samples.push_back(std::move(s));
        } catch (const input_error& e) {
            std::cerr << "load_dataset: dropping " << r.pair_id << ": " << e.what() << "\n";
        }
    }
    return ds;
}

Adam::Adam(const Weights& w, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [_, t] : w.entries()) {
        m_.emplace_back(t.shape, 0.0);
        v_.emplace_back(t.shape, 0.0);
    }
}

void Adam::step(Weights& w, const std::vector<ad::Tensor>& grads, double lr) {
    if (grads.size() != w.size()) throw input_error("Adam: gradient count mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < grads.size(); ++i) {
        ad::Tensor& p = w.entries()[i].second;
        const ad::Tensor& g = grads[i];
        ad::Tensor& m = m_[i];
        ad::Tensor& v = v_[i];
        for (std::int64_t j = 0; j < p.numel(); ++j) {
            double gj = g[j];
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

namespace {

struct BatchLoss {
    ad::Var all;
    double tex = 0.0, len = 0.0, str = 0.0;
};

// Builds the combined loss over a batch of sample indices.
BatchLoss batch_loss(ad::Graph& g, const ForwardTrace& tr, ad::Var target,
                     const TrainDataset& ds, const std::vector<std::size_t>& idx,
                     const TrainConfig& cfg, const LossWeights& lw) {
    const auto b = static_cast<double>(idx.size());
    BatchLoss out;
    ad::Var ltex = loss_tex_t(g, tr.y, target);
    ad::Var lens, strs;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const TrainSample& s = ds.samples[idx[i]];
        ad::Var mesh = g.select_front(tr.m3, static_cast<std::int64_t>(i));
        ad::Var li = loss_len_t(g, mesh, s.path, s.target_len, cfg.len_sample_count);
        ad::Var si = loss_str_t(g, mesh, s.path, cfg.str_sample_count);
        lens = i == 0 ? li : g.add(lens, li);
        strs = i == 0 ? si : g.add(strs, si);
    }
    ad::Var len_mean = g.scale(lens, 1.0 / b);
    ad::Var str_mean = g.scale(strs, 1.0 / b);
    out.all = g.add(g.scale(ltex, lw.alpha_tex),
                    g.add(g.scale(len_mean, lw.beta_len), g.scale(str_mean, lw.theta_str)));
    out.tex = g.value(ltex)[0];
    out.len = g.value(len_mean)[0];
    out.str = g.value(str_mean)[0];
    return out;
}

ad::Tensor gather_batch(const TrainDataset& ds, const std::vector<std::size_t>& idx, bool target) {
    const std::int64_t s = ds.image_size;
    ad::Tensor out({static_cast<std::int64_t>(idx.size()), 1, s, s});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const ad::Tensor& src = target ? ds.samples[idx[i]].target : ds.samples[idx[i]].x;
        std::copy(src.data.begin(), src.data.end(), out.data.begin() + static_cast<std::int64_t>(i) * s * s);
    }
    return out;
}

// Validation loss with frozen weights.
double validation_loss(const ModelConfig& mc, const Weights& w, const TrainDataset& val,
                       const TrainConfig& cfg, const LossWeights& lw) {
    if (val.samples.empty()) return 0.0;
    double acc = 0.0;
    std::size_t count = 0;
    std::vector<std::size_t> order(val.samples.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t pos = 0; pos < order.size(); pos += static_cast<std::size_t>(cfg.batch_size)) {
        std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                     order.begin() + static_cast<std::ptrdiff_t>(std::min(
                                         order.size(), pos + static_cast<std::size_t>(cfg.batch_size))));
        ad::Graph g;
        BoundWeights bw(g, w, /*trainable=*/false);
        ad::Var x = g.constant(gather_batch(val, idx, false));
        ad::Var t = g.constant(gather_batch(val, idx, true));
        ForwardTrace tr = forward(g, x, bw, mc);
        BatchLoss bl = batch_loss(g, tr, t, val, idx, cfg, lw);
        acc += g.value(bl.all)[0] * static_cast<double>(idx.size());
        count += idx.size();
    }
    return acc / static_cast<double>(count);
}

}  // namespace

TrainResult train_loop(const ModelConfig& model_cfg, const TrainDataset& train,
                       const TrainDataset& val, const TrainConfig& cfg, const LossWeights& lw,
                       const std::function<void(const EpochStats&)>& on_epoch,
                       std::int64_t max_steps) {
    model_cfg.validate();
    cfg.validate();
    if (train.samples.empty()) throw input_error("train_loop: empty training set");
    if (train.image_size != model_cfg.input_size)
        throw config_error("train_loop: dataset size does not match model input_size");
    if (lw.alpha_tex == 0.0 && lw.beta_len == 0.0 && lw.theta_str == 0.0)
        throw config_error("train_loop: all loss weights are zero");

    Weights weights = init_weights(model_cfg, cfg.seed);
    Adam adam(weights, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

    TrainResult res;
    res.best_weights = weights;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    bool stop = false;

    std::vector<std::size_t> order(train.samples.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.max_epochs && !stop; ++epoch) {
        const double lr = cosine_lr(cfg.lr_start, cfg.lr_end, epoch, cfg.max_epochs);
        Rng shuffle_rng(mix_seed(cfg.seed, 0x45504F43 + static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double e_tex = 0.0, e_len = 0.0, e_str = 0.0, e_all = 0.0;
        std::size_t e_batches = 0;
        for (std::size_t pos = 0; pos < order.size(); pos += static_cast<std::size_t>(cfg.batch_size)) {
            if (max_steps > 0 && static_cast<std::int64_t>(res.total_steps) >= max_steps) {
                stop = true;
                break;
            }
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(
                                             order.size(), pos + static_cast<std::size_t>(cfg.batch_size))));
            ad::Graph g;
            BoundWeights bw(g, weights, /*trainable=*/true);
            ad::Var x = g.constant(gather_batch(train, idx, false));
            ad::Var t = g.constant(gather_batch(train, idx, true));
            ForwardTrace tr = forward(g, x, bw, model_cfg);
            BatchLoss bl = batch_loss(g, tr, t, train, idx, cfg, lw);

            ++res.total_steps;
            double lval = g.value(bl.all)[0];
            if (!std::isfinite(lval)) {
                ++res.skipped_steps;
                if (res.skipped_steps * 100 > res.total_steps && res.total_steps >= 100)
                    throw training_error("train_loop: more than 1% of steps produced non-finite loss");
                continue;
            }

            g.backward(bl.all);
            std::vector<ad::Tensor> grads;
            grads.reserve(bw.entries().size());
            for (const auto& [_, v] : bw.entries()) grads.push_back(g.grad(v));
            adam.step(weights, grads, lr);

            e_tex += bl.tex;
            e_len += bl.len;
            e_str += bl.str;
            e_all += lval;
            ++e_batches;
        }
        if (e_batches == 0 && stop) break;

        EpochStats st;
        st.epoch = epoch;
        st.lr = lr;
        if (e_batches > 0) {
            st.train_tex = e_tex / static_cast<double>(e_batches);
            st.train_len = e_len / static_cast<double>(e_batches);
            st.train_str = e_str / static_cast<double>(e_batches);
            st.train_all = e_all / static_cast<double>(e_batches);
        }
        st.val_all = val.samples.empty()
                         ? st.train_all
                         : validation_loss(model_cfg, weights, val, cfg, lw);
        res.history.push_back(st);
        res.epochs_run = epoch + 1;
        if (on_epoch) on_epoch(st);

        if (st.val_all < best_val) {
            best_val = st.val_all;
            best_epoch = epoch;
            res.best_weights = weights;
        } else if (epoch - best_epoch >= cfg.patience) {
            stop = true;
        }
    }

    if (res.skipped_steps * 100 > res.total_steps)
        throw training_error("train_loop: more than 1% of steps produced non-finite loss");
    res.best_epoch = best_epoch;
    res.best_val = best_val;
    return res;
}

void write_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot open history csv: " + path);
    out << "epoch,lr,train_tex,train_len,train_str,train_all,val_all\n";
    char buf[256];
    for (const auto& h : history) {
        std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", h.epoch, h.lr,
                      h.train_tex, h.train_len, h.train_str, h.train_all, h.val_all);
        out << buf;
    }
    if (!out) throw io_error("short write to history csv: " + path);
}

GradCheckResult grad_check(const std::function<double(const std::vector<double>&)>& value_fn,
                           const std::vector<double>& analytic_grad,
                           const std::vector<double>& point,
                           const std::vector<std::size_t>& coords, double epsilon) {
    if (analytic_grad.size() != point.size()) throw input_error("grad_check: size mismatch");
    GradCheckResult res;
    std::vector<double> p = point;
    for (std::size_t c : coords) {
        if (c >= p.size()) throw input_error("grad_check: coordinate out of range");
        const double saved = p[c];
        p[c] = saved + epsilon;
        double fp = value_fn(p);
        p[c] = saved - epsilon;
        double fm = value_fn(p);
        p[c] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw input_error("grad_check: non-finite function value");
        double numeric = (fp - fm) / (2.0 * epsilon);
        double analytic = analytic_grad[c];
        double denom = std::max(1e-8, std::fabs(analytic) + std::fabs(numeric));
        res.max_rel_err = std::max(res.max_rel_err, std::fabs(analytic - numeric) / denom);
        ++res.evaluated;
    }
    return res;
}

namespace {

// Flatten/unflatten helpers between a Weights set and one parameter vector.
std::vector<double> flatten_weights(const Weights& w) {
    std::vector<double> out;
    for (const auto& [_, t] : w.entries()) out.insert(out.end(), t.data.begin(), t.data.end());
    return out;
}

void unflatten_weights(Weights& w, const std::vector<double>& v) {
    std::size_t off = 0;
    for (auto& [_, t] : w.entries()) {
        std::copy(v.begin() + static_cast<std::ptrdiff_t>(off),
                  v.begin() + static_cast<std::ptrdiff_t>(off + t.data.size()), t.data.begin());
        off += t.data.size();
    }
}

}  // namespace

GateResult model_gradient_gate(const ModelConfig& cfg, std::uint64_t seed, int coords_per_tensor,
                               double epsilon) {
    cfg.validate();
    const int s = cfg.input_size;

    // Generic random operating point: perturbed weights, then the mesh-head
    // and refinement biases shifted so sampling positions sit away from the
    // bilinear interpolation breakpoints.
    Weights weights = init_weights(cfg, mix_seed(seed, 1));
    Rng prng(mix_seed(seed, 2));
    for (auto& [name, t] : weights.entries())
        for (std::int64_t i = 0; i < t.numel(); ++i) t[i] += prng.normal(0.0, 0.02);
    const double off_main = std::atanh(0.30 / cfg.mesh_scale());
    weights.at("head.out.b")[0] = off_main;
    weights.at("head.out.b")[1] = off_main;
    if (weights.has("ref.out.b")) {
        const double off_ref = std::atanh(0.10 / cfg.refine_scale());
        weights.at("ref.out.b")[0] = off_ref;
        weights.at("ref.out.b")[1] = off_ref;
    }

    // Random strictly-positive image and target: no exact L1 ties.
    Rng drng(mix_seed(seed, 3));
    ad::Tensor x({1, 1, s, s});
    ad::Tensor target({1, 1, s, s});
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = drng.uniform(0.05, 0.95);
    for (std::int64_t i = 0; i < target.numel(); ++i) target[i] = drng.uniform(0.05, 0.95);

    // A gently bent constant path through the interior.
    SkeletonPath path;
    for (int i = 0; i < s; ++i) {
        double y = s / 2.0 + 3.0 * std::sin(static_cast<double>(i) / s * 3.0) + 0.25;
        path.points.push_back(Vec2(y, i + 0.25));
    }

    const LossWeights lw{1.0, 0.5, 0.5};
    TrainConfig tc;
    tc.seed = seed;

    // Freeze l' at a value away from the operating point's surrogate length;
    // recomputing it per evaluation would couple the target to the
    // parameters and corrupt the finite differences.
    double lprime;
    {
        InferenceResult inf = forward_image(tensor_to_image(x), weights, cfg);
        std::vector<Vec2> q = surrogate_skeleton(inf.m3, path, tc.len_sample_count);
        double l0 = 0.0;
        for (std::size_t i = 1; i < q.size(); ++i) l0 += (q[i] - q[i - 1]).norm();
        lprime = 0.9 * l0;
    }

    auto eval = [&](const std::vector<double>& pv, bool with_grad,
                    std::vector<double>* grad_out) -> double {
        Weights w = weights;
        unflatten_weights(w, pv);
        ad::Graph g;
        BoundWeights bw(g, w, with_grad);
        ad::Var xv = g.constant(x);
        ad::Var tv = g.constant(target);
        ForwardTrace tr = forward(g, xv, bw, cfg);
        ad::Var mesh = g.select_front(tr.m3, 0);
        ad::Var l_len = loss_len_t(g, mesh, path, lprime, tc.len_sample_count);
        ad::Var l_str = loss_str_t(g, mesh, path, tc.str_sample_count);
        ad::Var l_tex = loss_tex_t(g, tr.y, tv);
        ad::Var all = g.add(g.scale(l_tex, lw.alpha_tex),
                            g.add(g.scale(l_len, lw.beta_len), g.scale(l_str, lw.theta_str)));
        if (with_grad) {
            g.backward(all);
            grad_out->clear();
            for (const auto& [_, v] : bw.entries()) {
                const ad::Tensor& gr = g.grad(v);
                grad_out->insert(grad_out->end(), gr.data.begin(), gr.data.end());
            }
        }
        return g.value(all)[0];
    };

    std::vector<double> point = flatten_weights(weights);
    std::vector<double> analytic;
    eval(point, true, &analytic);

    // Per tensor: the strongest coordinates plus seeded picks among
    // well-scaled entries (tiny gradients drown in quadrature noise).
    Rng crng(mix_seed(seed, 4));
    std::vector<std::size_t> coords;
    std::size_t off = 0;
    double gmax = 0.0;
    for (double v : analytic) gmax = std::max(gmax, std::fabs(v));
    for (const auto& [name, t] : weights.entries()) {
        const std::size_t n = t.data.size();
        std::vector<std::size_t> local(n);
        std::iota(local.begin(), local.end(), 0);
        std::sort(local.begin(), local.end(), [&](std::size_t a, std::size_t b) {
            return std::fabs(analytic[off + a]) > std::fabs(analytic[off + b]);
        });
        int picked = 0;
        for (std::size_t i = 0; i < n && picked < coords_per_tensor; ++i) {
            std::size_t cand = i < 2 ? local[i]
                                     : static_cast<std::size_t>(crng.uniform_int(
                                           0, static_cast<std::int64_t>(n) - 1));
            if (std::fabs(analytic[off + cand]) < 1e-6 * std::max(1.0, gmax)) continue;
            coords.push_back(off + cand);
            ++picked;
        }
        off += n;
    }

    auto value_only = [&](const std::vector<double>& pv) -> double { return eval(pv, false, nullptr); };
    GradCheckResult r = grad_check(value_only, analytic, point, coords, epsilon);
    return GateResult{r.max_rel_err, r.evaluated};
}

}  // namespace chrs
