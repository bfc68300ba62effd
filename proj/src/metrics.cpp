#include "chrs/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "chrs/losses.hpp"
#include "chrs/png_io.hpp"
#include "chrs/skeleton.hpp"

namespace fs = std::filesystem;

namespace chrs {

namespace {

constexpr double kBinarizeThreshold = 0.1;
constexpr int kProfilePositions = 128;
constexpr double kProfileRadius = 5.0;

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

// Mean intensity over the disc around (cy, cx), clipped to the image.
double disc_mean(const Image& img, double cy, double cx, double radius) {
    int lo_y = std::max(0, static_cast<int>(std::floor(cy - radius)));
    int hi_y = std::min(img.height() - 1, static_cast<int>(std::ceil(cy + radius)));
    int lo_x = std::max(0, static_cast<int>(std::floor(cx - radius)));
    int hi_x = std::min(img.width() - 1, static_cast<int>(std::ceil(cx + radius)));
    double acc = 0.0;
    std::size_t count = 0;
    for (int y = lo_y; y <= hi_y; ++y)
        for (int x = lo_x; x <= hi_x; ++x)
            if (sqr(y - cy) + sqr(x - cx) <= radius * radius) {
                acc += img.at(y, x);
                ++count;
            }
    return count > 0 ? acc / static_cast<double>(count) : 0.0;
}

std::vector<double> band_profile(const Image& img) {
    SkeletonPath path = extract_path(img, kBinarizeThreshold);
    if (path.points.size() < 2) throw input_error("band_profile: degenerate skeleton");
    std::vector<Vec2> pts = resample_uniform(path, kProfilePositions);
    std::vector<double> profile;
    profile.reserve(pts.size());
    for (const Vec2& p : pts) profile.push_back(disc_mean(img, p.y, p.x, kProfileRadius));
    return profile;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        cov += (a[i] - ma) * (b[i] - mb);
        va += sqr(a[i] - ma);
        vb += sqr(b[i] - mb);
    }
    if (va < 1e-24 || vb < 1e-24) {
        if (va < 1e-24 && vb < 1e-24) {
            // two flat profiles: identical or not
            double diff = 0.0;
            for (std::size_t i = 0; i < n; ++i) diff = std::max(diff, std::fabs(a[i] - b[i]));
            return diff < 1e-12 ? 1.0 : 0.0;
        }
        return 0.0;  // one flat profile carries no band signal
    }
    return cov / std::sqrt(va * vb);
}

}  // namespace

double s_score(const Image& y, int n, bool* flagged) {
    if (flagged) *flagged = false;
    try {
        SkeletonPath path = extract_path(y, kBinarizeThreshold);
        if (path.points.size() < static_cast<std::size_t>(n) + 1)
            throw input_error("s_score: skeleton shorter than sample count");
        std::vector<Vec2> samples = resample_uniform(path, n + 1);
        return clamp01(1.0 - straightness_deviation(samples));
    } catch (const input_error&) {
        if (flagged) *flagged = true;
        return 0.0;
    }
}

double l_score(const Image& y, const Image& x) {
    std::size_t len_x = pixel_length(thin(binarize(x, kBinarizeThreshold)));  // throws if empty
    std::size_t len_y = 0;
    try {
        len_y = pixel_length(thin(binarize(y, kBinarizeThreshold)));
    } catch (const input_error&) {
        len_y = 0;
    }
    double lx = static_cast<double>(len_x);
    double ly = static_cast<double>(len_y);
    return clamp01(1.0 - std::fabs(ly - lx) / lx);
}

double tex_sim(const Image& y, const Image& reference, bool* flagged) {
    if (flagged) *flagged = false;
    try {
        std::vector<double> py = band_profile(y);
        std::vector<double> pr = band_profile(reference);
        return clamp01(0.5 * (1.0 + correlation(py, pr)));
    } catch (const input_error&) {
        if (flagged) *flagged = true;
        return 0.0;
    }
}

void ScoreReport::recompute() {
    auto agg = [&](auto getter) {
        Aggregate a;
        std::size_t n = 0;
        for (const auto& r : rows)
            if (!r.failed) {
                a.mean += getter(r);
                ++n;
            }
        if (n == 0) return a;
        a.mean /= static_cast<double>(n);
        for (const auto& r : rows)
            if (!r.failed) a.stddev += sqr(getter(r) - a.mean);
        a.stddev = n > 1 ? std::sqrt(a.stddev / static_cast<double>(n)) : 0.0;
        return a;
    };
    s = agg([](const ScoreRow& r) { return r.s; });
    l = agg([](const ScoreRow& r) { return r.l; });
    t = agg([](const ScoreRow& r) { return r.t; });
    failed_rows = static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(),
                                                         [](const ScoreRow& r) { return r.failed; }));
}

ScoreReport evaluate_manifest(
    const Manifest& manifest, const std::string& manifest_dir,
    const std::function<Image(const PairRecord&, const Image& curved)>& straightener, int n) {
    ScoreReport report;
    for (const auto& rec : manifest.records) {
        ScoreRow row;
        row.pair_id = rec.pair_id;
        try {
            Image curved = read_png_image((fs::path(manifest_dir) / rec.curved_path).string());
            Image y = straightener(rec, curved);

            bool s_flag = false, t_flag = false;
            row.s = 100.0 * s_score(y, n, &s_flag);
            row.l = 100.0 * l_score(y, curved);

            bool no_reference = rec.straight_path.empty();
            Image reference = no_reference
                                  ? curved
                                  : read_png_image((fs::path(manifest_dir) / rec.straight_path).string());
            row.t = 100.0 * tex_sim(y, reference, &t_flag);

            std::vector<std::string> flags;
            if (s_flag) flags.push_back("empty-skeleton");
            if (t_flag) flags.push_back("no-texture");
            if (no_reference) flags.push_back("no-reference");
            for (std::size_t i = 0; i < flags.size(); ++i)
                row.flags += (i ? ";" : "") + flags[i];
        } catch (const std::exception& e) {
            row.failed = true;
            row.flags = std::string("error:") + e.what();
        }
        report.rows.push_back(std::move(row));
    }
    std::sort(report.rows.begin(), report.rows.end(),
              [](const ScoreRow& a, const ScoreRow& b) { return a.pair_id < b.pair_id; });
    report.recompute();
    return report;
}

void write_report_csv(const std::string& path, const ScoreReport& report) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot open report csv: " + path);
    out << "# tex_sim is a band-profile correlation proxy (substitute for LPIPS; "
           "no pretrained perceptual network)\n";
    out << "pair_id,s_score,l_score,tex_sim,flags\n";
    char buf[512];
    for (const auto& r : report.rows) {
        if (r.failed) {
            out << r.pair_id << ",,,," << r.flags << "\n";
            continue;
        }
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%s\n", r.pair_id.c_str(), r.s, r.l, r.t,
                      r.flags.c_str());
        out << buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "#AGG mean±std s_score=%.2f±%.2f l_score=%.2f±%.2f tex_sim=%.2f±%.2f\n",
                  report.s.mean, report.s.stddev, report.l.mean, report.l.stddev, report.t.mean,
                  report.t.stddev);
    out << buf;
    if (!out) throw io_error("short write to report csv: " + path);
}

}  // namespace chrs
