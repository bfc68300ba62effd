#include "chrs/config.hpp"

#include <algorithm>
#include <fstream>

namespace chrs {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

int to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw config_error("config: bad integer for " + key + ": '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw config_error("config: bad number for " + key + ": '" + v + "'");
    }
}

}  // namespace

void apply_config_kv(PipelineConfig& cfg, const std::string& key, const std::string& value) {
    // model
    if (key == "model.input_size") cfg.model.input_size = to_int(key, value);
    else if (key == "model.encoder_stages") cfg.model.encoder_stages = to_int(key, value);
    else if (key == "model.base_channels") cfg.model.base_channels = to_int(key, value);
    else if (key == "model.patch_size") cfg.model.patch_size = to_int(key, value);
    else if (key == "model.embed_dim") cfg.model.embed_dim = to_int(key, value);
    else if (key == "model.attn_layers") cfg.model.attn_layers = to_int(key, value);
    else if (key == "model.attn_heads") cfg.model.attn_heads = to_int(key, value);
    else if (key == "model.refine_iters") cfg.model.refine_iters = to_int(key, value);
    else if (key == "model.refine_base_channels") cfg.model.refine_base_channels = to_int(key, value);
    // train
    else if (key == "train.lr_start") cfg.train.lr_start = to_double(key, value);
    else if (key == "train.lr_end") cfg.train.lr_end = to_double(key, value);
    else if (key == "train.batch_size") cfg.train.batch_size = to_int(key, value);
    else if (key == "train.patience") cfg.train.patience = to_int(key, value);
    else if (key == "train.max_epochs") cfg.train.max_epochs = to_int(key, value);
    else if (key == "train.str_sample_count") cfg.train.str_sample_count = to_int(key, value);
    else if (key == "train.len_sample_count") cfg.train.len_sample_count = to_int(key, value);
    // loss
    else if (key == "loss.alpha_tex") cfg.loss.alpha_tex = to_double(key, value);
    else if (key == "loss.beta_len") cfg.loss.beta_len = to_double(key, value);
    else if (key == "loss.theta_str") cfg.loss.theta_str = to_double(key, value);
    // synth
    else if (key == "synth.v_frac_min") cfg.synth.v_frac_min = to_double(key, value);
    else if (key == "synth.v_frac_max") cfg.synth.v_frac_max = to_double(key, value);
    else if (key == "synth.alpha_slight_min") cfg.synth.alpha_slight_min = to_double(key, value);
    else if (key == "synth.alpha_slight_max") cfg.synth.alpha_slight_max = to_double(key, value);
    else if (key == "synth.alpha_strong_min") cfg.synth.alpha_strong_min = to_double(key, value);
    else if (key == "synth.alpha_strong_max") cfg.synth.alpha_strong_max = to_double(key, value);
    else if (key == "synth.middle_frac") cfg.synth.middle_frac = to_double(key, value);
    else if (key == "synth.binarize_threshold") cfg.synth.binarize_threshold = to_double(key, value);
    else if (key == "synth.invert_tol") cfg.synth.invert_tol = to_double(key, value);
    else if (key == "synth.invert_max_iter") cfg.synth.invert_max_iter = to_int(key, value);
    else throw config_error("config: unknown key '" + key + "'");
}

void merge_config_file(PipelineConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config file: " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw config_error("config " + path + " line " + std::to_string(lineno) +
                               ": expected key = value");
        std::string key = trim(s.substr(0, eq));
        std::string value = trim(s.substr(eq + 1));
        if (key.empty() || value.empty())
            throw config_error("config " + path + " line " + std::to_string(lineno) +
                               ": empty key or value");
        apply_config_kv(cfg, key, value);
    }
}

PipelineConfig load_config_file(const std::string& path) {
    PipelineConfig cfg;
    merge_config_file(cfg, path);
    return cfg;
}

}  // namespace chrs
