#include "chrs/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <nlohmann/json.hpp>

#include "chrs/errors.hpp"
#include "chrs/mesh_io.hpp"
#include "chrs/png_io.hpp"
#include "chrs/rng.hpp"
#include "chrs/skeleton.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace chrs {

namespace {

constexpr int kSchemaVersion = 1;

const char* kind_name(FalloffKind k) { return k == FalloffKind::slight ? "slight" : "strong"; }

FalloffKind kind_from_name(const std::string& s) {
    if (s == "slight") return FalloffKind::slight;
    if (s == "strong") return FalloffKind::strong;
    throw io_error("manifest: unknown falloff kind '" + s + "'");
}

}  // namespace

int peek_control_point_count(std::uint64_t seed) {
    Rng rng(seed);
    return static_cast<int>(rng.uniform_int(1, 3));
}

PairResult make_pair(const Image& straight, std::uint64_t seed, const GeneratorConfig& config) {
    Rng rng(seed);
    const int count = static_cast<int>(rng.uniform_int(1, 3));

    SkeletonPath path = extract_path(straight, config.binarize_threshold);
    if (path.points.size() < 12) throw input_error("make_pair: skeleton too short");
    const double arclen = path.arclength();

    // balanced-as-possible kind multiset; the hint breaks odd-count ties
    FalloffKind other = config.majority_hint == FalloffKind::slight ? FalloffKind::strong
                                                                    : FalloffKind::slight;
    std::vector<FalloffKind> kinds;
    if (count == 1)
        kinds = {config.majority_hint};
    else if (count == 2)
        kinds = {FalloffKind::slight, FalloffKind::strong};
    else
        kinds = {config.majority_hint, config.majority_hint, other};
    rng.shuffle(kinds);

    const std::size_t n = path.points.size();
    const double margin = (1.0 - config.middle_frac) / 2.0;
    const auto lo = static_cast<std::int64_t>(std::ceil(margin * (n - 1)));
    const auto hi = static_cast<std::int64_t>(std::floor((1.0 - margin) * (n - 1)));

    DeformationRecipe recipe;
    recipe.seed = seed;
    std::vector<double> d_maxes;
    for (int i = 0; i < count; ++i) {
        std::size_t idx = static_cast<std::size_t>(rng.uniform_int(lo, std::max(lo, hi)));
        Vec2 p = path.points[idx];
        Vec2 normal = normal_at(path, idx);
        double sign = rng.coin() ? 1.0 : -1.0;
        double mag = rng.uniform(config.v_frac_min, config.v_frac_max) * arclen;

        ControlPointSpec cp;
        cp.p = p;
        cp.v = normal * (sign * mag);
        cp.kind = kinds[static_cast<std::size_t>(i)];
        cp.alpha_falloff = cp.kind == FalloffKind::slight
                               ? rng.uniform(config.alpha_slight_min, config.alpha_slight_max)
                               : rng.uniform(config.alpha_strong_min, config.alpha_strong_max);
        recipe.control_points.push_back(cp);
        d_maxes.push_back(default_normalizer(path, p, tangent_at(path, idx)));
    }
    recipe.normalizer = *std::max_element(d_maxes.begin(), d_maxes.end());

    MeshField forward;
    for (int i = 0; i < count; ++i) {
        MeshField f = single_field(straight.height(), straight.width(),
                                   recipe.control_points[static_cast<std::size_t>(i)], path,
                                   d_maxes[static_cast<std::size_t>(i)]);
        forward = i == 0 ? std::move(f) : compose_fields(forward, f);
    }

    PairResult out;
    out.curved = apply_mesh(straight, forward);
    out.gt_mesh = invert_field(forward, config.invert_tol, config.invert_max_iter).field;

    out.record.recipe = recipe;
    out.record.straight_length = static_cast<double>(pixel_length(thin(binarize(straight, config.binarize_threshold))));
    out.record.curved_length = static_cast<double>(pixel_length(thin(binarize(out.curved, config.binarize_threshold))));
    for (const auto& cp : recipe.control_points) {
        if (cp.kind == FalloffKind::slight)
            ++out.record.kind_tally.slight;
        else
            ++out.record.kind_tally.strong;
    }
    return out;
}

namespace {

json recipe_to_json(const DeformationRecipe& r) {
    json cps = json::array();
    for (const auto& cp : r.control_points) {
        cps.push_back({{"p", {cp.p.y, cp.p.x}},
                       {"v", {cp.v.y, cp.v.x}},
                       {"kind", kind_name(cp.kind)},
                       {"alpha_falloff", cp.alpha_falloff}});
    }
    return {{"control_points", std::move(cps)}, {"seed", r.seed}, {"normalizer", r.normalizer}};
}

DeformationRecipe recipe_from_json(const json& j) {
    DeformationRecipe r;
    for (const auto& c : j.at("control_points")) {
        ControlPointSpec cp;
        cp.p = Vec2(c.at("p")[0].get<double>(), c.at("p")[1].get<double>());
        cp.v = Vec2(c.at("v")[0].get<double>(), c.at("v")[1].get<double>());
        cp.kind = kind_from_name(c.at("kind").get<std::string>());
        cp.alpha_falloff = c.at("alpha_falloff").get<double>();
        r.control_points.push_back(cp);
    }
    r.seed = j.at("seed").get<std::uint64_t>();
    r.normalizer = j.at("normalizer").get<double>();
    return r;
}

}  // namespace

void write_manifest(const std::string& path, const Manifest& manifest) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot open manifest for writing: " + path);
    for (const auto& r : manifest.records) {
        json line = {{"schema_version", kSchemaVersion},
                     {"pair_id", r.pair_id},
                     {"straight_path", r.straight_path},
                     {"curved_path", r.curved_path},
                     {"mesh_path", r.mesh_path},
                     {"recipe", recipe_to_json(r.recipe)},
                     {"straight_length", r.straight_length},
                     {"curved_length", r.curved_length},
                     {"kind_tally", {{"slight", r.kind_tally.slight}, {"strong", r.kind_tally.strong}}}};
        out << line.dump() << "\n";
    }
    if (!out) throw io_error("short write to manifest: " + path);
}

Manifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open manifest: " + path);
    Manifest m;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw io_error("manifest " + path + " line " + std::to_string(lineno) + ": " + e.what());
        }
        PairRecord r;
        r.pair_id = j.at("pair_id").get<std::string>();
        r.straight_path = j.at("straight_path").get<std::string>();
        r.curved_path = j.at("curved_path").get<std::string>();
        r.mesh_path = j.at("mesh_path").get<std::string>();
        r.recipe = recipe_from_json(j.at("recipe"));
        r.straight_length = j.at("straight_length").get<double>();
        r.curved_length = j.at("curved_length").get<double>();
        r.kind_tally.slight = j.at("kind_tally").at("slight").get<int>();
        r.kind_tally.strong = j.at("kind_tally").at("strong").get<int>();
        m.records.push_back(std::move(r));
    }
    return m;
}

std::string source_key(const std::string& pair_id) {
    auto pos = pair_id.rfind("_v");
    return pos == std::string::npos ? pair_id : pair_id.substr(0, pos);
}

Manifest build_dataset(const std::string& input_dir, const std::string& output_dir,
                       int per_image, std::uint64_t global_seed, const GeneratorConfig& config) {
    if (per_image < 0) throw input_error("build_dataset: per_image must be >= 0");
    std::error_code ec;
    if (!fs::is_directory(input_dir, ec)) throw io_error("build_dataset: cannot read input dir " + input_dir);

    std::vector<fs::path> inputs;
    for (const auto& entry : fs::directory_iterator(input_dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png")
            inputs.push_back(entry.path());
    }
    std::sort(inputs.begin(), inputs.end());
    if (inputs.empty()) throw io_error("build_dataset: no PNG inputs in " + input_dir);

    fs::create_directories(output_dir);

    struct Planned {
        std::string pair_id;
        std::size_t input_index;
        std::uint64_t seed;
        int count;
        FalloffKind hint = FalloffKind::slight;
    };
    std::vector<Planned> plan;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        std::string stem = inputs[i].stem().string();
        for (int v = 0; v < per_image; ++v) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "_v%03d", v);
            Planned p;
            p.pair_id = stem + buf;
            p.input_index = i;
            p.seed = mix_seed(global_seed, fnv1a64(p.pair_id));
            p.count = peek_control_point_count(p.seed);
            plan.push_back(std::move(p));
        }
    }
    std::sort(plan.begin(), plan.end(),
              [](const Planned& a, const Planned& b) { return a.pair_id < b.pair_id; });
    // alternate the odd-count tie-break so the slight:strong tally stays 1:1
    int odd_counter = 0;
    for (auto& p : plan)
        if (p.count % 2 == 1)
            p.hint = (odd_counter++ % 2 == 0) ? FalloffKind::slight : FalloffKind::strong;

    std::vector<Image> straights;
    std::vector<std::string> straight_files(inputs.size());
    straights.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        straights.push_back(read_png_image(inputs[i].string()));
        std::string name = inputs[i].stem().string() + "_straight.png";
        if (per_image > 0) write_png_image((fs::path(output_dir) / name).string(), straights.back());
        straight_files[i] = name;
    }

    Manifest manifest;
    manifest.global_seed = global_seed;
    manifest.generator_config = config;

    for (const auto& p : plan) {
        GeneratorConfig cfg = config;
        cfg.majority_hint = p.hint;
        PairResult pr;
        bool made = false;
        for (int attempt = 0; attempt < 5 && !made; ++attempt) {
            std::uint64_t seed = attempt == 0 ? p.seed : mix_seed(p.seed, static_cast<std::uint64_t>(attempt));
            try {
                pr = make_pair(straights[p.input_index], seed, cfg);
                made = true;
            } catch (const inversion_error& e) {
                std::cerr << "build_dataset: " << p.pair_id << " attempt " << attempt
                          << " inversion failed, resampling (" << e.what() << ")\n";
            } catch (const input_error& e) {
                std::cerr << "build_dataset: skipping " << p.pair_id << ": " << e.what() << "\n";
                break;
            }
        }
        if (!made) {
            std::cerr << "build_dataset: skipping " << p.pair_id << " after repeated failures\n";
            continue;
        }
        pr.record.pair_id = p.pair_id;
        pr.record.straight_path = straight_files[p.input_index];
        pr.record.curved_path = p.pair_id + "_curved.png";
        pr.record.mesh_path = p.pair_id + "_mesh.chrm";
        write_png_image((fs::path(output_dir) / pr.record.curved_path).string(), pr.curved);
        write_chrm((fs::path(output_dir) / pr.record.mesh_path).string(), pr.gt_mesh);
        manifest.records.push_back(std::move(pr.record));
    }

    std::sort(manifest.records.begin(), manifest.records.end(),
              [](const PairRecord& a, const PairRecord& b) { return a.pair_id < b.pair_id; });
    write_manifest((fs::path(output_dir) / "manifest.jsonl").string(), manifest);
    return manifest;
}

SplitResult split_manifest(const Manifest& manifest, std::uint64_t seed) {
    if (manifest.records.empty()) throw input_error("split: empty manifest");

    std::map<std::string, std::vector<const PairRecord*>> groups;
    for (const auto& r : manifest.records) groups[source_key(r.pair_id)].push_back(&r);

    std::vector<std::string> keys;
    for (const auto& [k, _] : groups) keys.push_back(k);
    Rng rng(seed);
    rng.shuffle(keys);

    const std::size_t g = keys.size();
    if (g < 12)
        std::cerr << "split: only " << g << " source groups; split is degenerate\n";
    std::size_t n_val = g / 12;
    std::size_t n_test = g / 12;
    std::size_t n_train = g - n_val - n_test;

    auto collect = [&](std::size_t lo, std::size_t hi, const std::string& tag) {
        Manifest m;
        m.global_seed = manifest.global_seed;
        m.generator_config = manifest.generator_config;
        m.split_tag = tag;
        for (std::size_t i = lo; i < hi; ++i)
            for (const PairRecord* r : groups[keys[i]]) m.records.push_back(*r);
        std::sort(m.records.begin(), m.records.end(),
                  [](const PairRecord& a, const PairRecord& b) { return a.pair_id < b.pair_id; });
        return m;
    };

    SplitResult out;
    out.train = collect(0, n_train, "train");
    out.val = collect(n_train, n_train + n_val, "val");
    out.test = collect(n_train + n_val, g, "test");
    return out;
}

}  // namespace chrs
