#include "chrs/skeleton.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <numeric>

#include "chrs/errors.hpp"

namespace chrs {

namespace {

// 8-neighborhood in Zhang-Suen order: P2..P9 clockwise from north.
constexpr int kNbrY[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
constexpr int kNbrX[8] = {0, 1, 1, 1, 0, -1, -1, -1};

// Neighbor scan order for BFS: fixed for deterministic parents/ties.
constexpr int kScanY[8] = {-1, -1, -1, 0, 0, 1, 1, 1};
constexpr int kScanX[8] = {-1, 0, 1, -1, 1, -1, 0, 1};

}  // namespace

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

double SkeletonPath::arclength() const {
    double total = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) total += (points[i] - points[i - 1]).norm();
    return total;
}

BinaryMask binarize(const Image& img, double threshold) {
    if (threshold <= 0.0 || threshold >= 1.0)
        throw input_error("binarize: threshold must be in (0,1)");

    const int h = img.height(), w = img.width();
    BinaryMask raw(h, w);
    bool any = false;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (img.at(y, x) > threshold) {
                raw.set(y, x, true);
                any = true;
            }
    if (!any) throw input_error("binarize: no foreground above threshold");

    // label 8-connected components, keep the largest (ties: first seen in scan order)
    std::vector<int> label(static_cast<std::size_t>(h) * w, -1);
    std::vector<std::size_t> sizes;
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!raw.get(y, x) || label[static_cast<std::size_t>(y) * w + x] >= 0) continue;
            int id = static_cast<int>(sizes.size());
            sizes.push_back(0);
            queue.push_back({y, x});
            label[static_cast<std::size_t>(y) * w + x] = id;
            while (!queue.empty()) {
                auto [cy, cx] = queue.front();
                queue.pop_front();
                ++sizes[id];
                for (int k = 0; k < 8; ++k) {
                    int ny = cy + kScanY[k], nx = cx + kScanX[k];
                    if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                    std::size_t idx = static_cast<std::size_t>(ny) * w + nx;
                    if (raw.get(ny, nx) && label[idx] < 0) {
                        label[idx] = id;
                        queue.push_back({ny, nx});
                    }
                }
            }
        }
    }

    int best = 0;
    for (int id = 1; id < static_cast<int>(sizes.size()); ++id)
        if (sizes[id] > sizes[best]) best = id;
    if (sizes[best] <= 1) throw input_error("binarize: only isolated pixels above threshold");

    BinaryMask out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out.set(y, x, label[static_cast<std::size_t>(y) * w + x] == best);
    return out;
}

namespace {

inline bool at(const BinaryMask& m, int y, int x) {
    return y >= 0 && y < m.height() && x >= 0 && x < m.width() && m.get(y, x);
}

// One Zhang-Suen subiteration; returns true if any pixel was removed.
bool zhang_suen_pass(BinaryMask& m, int pass) {
    const int h = m.height(), w = m.width();
    std::vector<std::pair<int, int>> to_clear;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!m.get(y, x)) continue;
            int p[8];
            for (int k = 0; k < 8; ++k) p[k] = at(m, y + kNbrY[k], x + kNbrX[k]) ? 1 : 0;
            int b = p[0] + p[1] + p[2] + p[3] + p[4] + p[5] + p[6] + p[7];
            if (b < 2 || b > 6) continue;
            int a = 0;
            for (int k = 0; k < 8; ++k)
                if (p[k] == 0 && p[(k + 1) % 8] == 1) ++a;
            if (a != 1) continue;
            // p[0]=P2(N), p[2]=P4(E), p[4]=P6(S), p[6]=P8(W)
            if (pass == 0) {
                if (p[0] * p[2] * p[4] != 0) continue;
                if (p[2] * p[4] * p[6] != 0) continue;
            } else {
                if (p[0] * p[2] * p[6] != 0) continue;
                if (p[0] * p[4] * p[6] != 0) continue;
            }
            to_clear.push_back({y, x});
        }
    }
    for (auto [y, x] : to_clear) m.set(y, x, false);
    return !to_clear.empty();
}

// Count 0->1 transitions around (y,x); 1 means removal keeps the component whole.
int transitions(const BinaryMask& m, int y, int x) {
    int p[8];
    for (int k = 0; k < 8; ++k) p[k] = at(m, y + kNbrY[k], x + kNbrX[k]) ? 1 : 0;
    int a = 0;
    for (int k = 0; k < 8; ++k)
        if (p[k] == 0 && p[(k + 1) % 8] == 1) ++a;
    return a;
}

int neighbor_count(const BinaryMask& m, int y, int x) {
    int b = 0;
    for (int k = 0; k < 8; ++k) b += at(m, y + kNbrY[k], x + kNbrX[k]) ? 1 : 0;
    return b;
}

// Clear leftover fully-set 2x2 blocks (staircase artifacts) without
// breaking connectivity.
void remove_square_blocks(BinaryMask& m) {
    const int h = m.height(), w = m.width();
    bool changed = true;
    while (changed) {
        changed = false;
        for (int y = 0; y + 1 < h && !changed; ++y) {
            for (int x = 0; x + 1 < w && !changed; ++x) {
                if (!(m.get(y, x) && m.get(y, x + 1) && m.get(y + 1, x) && m.get(y + 1, x + 1)))
                    continue;
                const int cy[4] = {y, y, y + 1, y + 1};
                const int cx[4] = {x, x + 1, x, x + 1};
                for (int c = 0; c < 4; ++c) {
                    if (transitions(m, cy[c], cx[c]) == 1 && neighbor_count(m, cy[c], cx[c]) > 1) {
                        m.set(cy[c], cx[c], false);
                        changed = true;
                        break;
                    }
                }
            }
        }
    }
}

}  // namespace

SkeletonMask thin(const BinaryMask& mask) {
    if (mask.count() == 0) throw input_error("thin: empty mask");
    BinaryMask m = mask;
    bool changed = true;
    while (changed) {
        bool c0 = zhang_suen_pass(m, 0);
        bool c1 = zhang_suen_pass(m, 1);
        changed = c0 || c1;
    }
    remove_square_blocks(m);
    return m;
}

std::size_t pixel_length(const SkeletonMask& skel) { return skel.count(); }

namespace {

struct BfsResult {
    std::vector<int> dist;    // -1 where unreachable
    std::vector<int> parent;  // flat index of BFS parent, -1 at root
    int far_index = -1;       // farthest reached pixel, ties to smallest (y,x)
};

BfsResult bfs(const SkeletonMask& skel, int start_y, int start_x) {
    const int h = skel.height(), w = skel.width();
    BfsResult r;
    r.dist.assign(static_cast<std::size_t>(h) * w, -1);
    r.parent.assign(static_cast<std::size_t>(h) * w, -1);
    std::deque<int> queue;
    int start = start_y * w + start_x;
    r.dist[start] = 0;
    queue.push_back(start);
    int best = start, best_d = 0;
    while (!queue.empty()) {
        int cur = queue.front();
        queue.pop_front();
        int cy = cur / w, cx = cur % w;
        if (r.dist[cur] > best_d || (r.dist[cur] == best_d && cur < best)) {
            best = cur;
            best_d = r.dist[cur];
        }
        for (int k = 0; k < 8; ++k) {
            int ny = cy + kScanY[k], nx = cx + kScanX[k];
            if (ny < 0 || ny >= h || nx < 0 || nx >= w || !skel.get(ny, nx)) continue;
            int ni = ny * w + nx;
            if (r.dist[ni] < 0) {
                r.dist[ni] = r.dist[cur] + 1;
                r.parent[ni] = cur;
                queue.push_back(ni);
            }
        }
    }
    r.far_index = best;
    return r;
}

}  // namespace

SkeletonPath longest_path(const SkeletonMask& skel) {
    const int h = skel.height(), w = skel.width();
    int first = -1;
    std::size_t set_count = 0;
    for (int i = 0; i < h * w; ++i) {
        if (skel.bits()[i]) {
            ++set_count;
            if (first < 0) first = i;
        }
    }
    if (first < 0) throw input_error("longest_path: empty skeleton");

    BfsResult a = bfs(skel, first / w, first % w);
    std::size_t reached = 0;
    for (int d : a.dist)
        if (d >= 0) ++reached;
    if (reached != set_count) throw input_error("longest_path: skeleton is disconnected");

    BfsResult b = bfs(skel, a.far_index / w, a.far_index % w);
    // endpoints ordered so the path starts at the smaller (y,x)
    int u = a.far_index, v = b.far_index;

    SkeletonPath path;
    for (int cur = v; cur >= 0; cur = b.parent[cur])
        path.points.push_back(Vec2(cur / w, cur % w));
    // path currently runs v -> u; normalize direction by endpoint order
    Vec2 front = path.points.front(), back = path.points.back();
    bool front_smaller = (front.y < back.y) || (front.y == back.y && front.x <= back.x);
    if (!front_smaller) std::reverse(path.points.begin(), path.points.end());
    (void)u;
    return path;
}

std::vector<Vec2> resample_uniform(const SkeletonPath& path, int k) {
    if (k < 2) throw input_error("resample_uniform: k must be >= 2");
    if (path.points.size() < 2) throw input_error("resample_uniform: path has fewer than 2 points");

    const auto& pts = path.points;
    std::vector<double> cum(pts.size(), 0.0);
    for (std::size_t i = 1; i < pts.size(); ++i)
        cum[i] = cum[i - 1] + (pts[i] - pts[i - 1]).norm();
    const double total = cum.back();

    std::vector<Vec2> out;
    out.reserve(k);
    out.push_back(pts.front());
    std::size_t seg = 0;
    for (int i = 1; i < k - 1; ++i) {
        double target = total * i / (k - 1);
        while (seg + 1 < cum.size() && cum[seg + 1] < target) ++seg;
        double seg_len = cum[seg + 1] - cum[seg];
        double t = seg_len > 0.0 ? (target - cum[seg]) / seg_len : 0.0;
        out.push_back(pts[seg] + (pts[seg + 1] - pts[seg]) * t);
    }
    out.push_back(pts.back());
    return out;
}

Vec2 tangent_at(const SkeletonPath& path, std::size_t index, int window) {
    if (path.points.size() < 2) throw input_error("tangent_at: path shorter than 2 points");
    if (index >= path.points.size()) throw input_error("tangent_at: index out of range");
    std::size_t lo = index >= static_cast<std::size_t>(window) ? index - window : 0;
    std::size_t hi = std::min(index + static_cast<std::size_t>(window), path.points.size() - 1);
    Vec2 t = path.points[hi] - path.points[lo];
    if (t.norm() == 0.0) throw input_error("tangent_at: degenerate window");
    return t.normalized();
}

Vec2 normal_at(const SkeletonPath& path, std::size_t index, int window) {
    Vec2 t = tangent_at(path, index, window);
    Vec2 n{t.x, -t.y};  // rotate 90 degrees in the (y,x) plane
    if (n.y < 0.0 || (n.y == 0.0 && n.x < 0.0)) n = -n;
    return n;
}

SkeletonPath extract_path(const Image& img, double threshold) {
    return longest_path(thin(binarize(img, threshold)));
}

}  // namespace chrs
