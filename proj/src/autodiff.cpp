#include "chrs/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <thread>

namespace chrs::ad {

namespace {

using RM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RM>;
using MapCRM = Eigen::Map<const RM>;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

int hw_threads() {
    static const int n = std::max(1u, std::thread::hardware_concurrency());
    return n;
}

// Runs fn(block, lo, hi) over a fixed partition of [0,n). The partition
// depends only on n and the core count, so accumulations keyed by block
// index reduce in a deterministic order.
template <typename Fn>
void parallel_blocks(std::int64_t n, const Fn& fn) {
    if (n <= 0) return;
    int nb = static_cast<int>(std::min<std::int64_t>(hw_threads(), n));
    if (nb <= 1) {
        fn(0, 0, n);
        return;
    }
    std::int64_t chunk = (n + nb - 1) / nb;
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(nb));
    for (int b = 0; b < nb; ++b) {
        std::int64_t lo = b * chunk;
        std::int64_t hi = std::min<std::int64_t>(n, lo + chunk);
        if (lo >= hi) break;
        threads.emplace_back([&fn, b, lo, hi] { fn(b, lo, hi); });
    }
    for (auto& t : threads) t.join();
}

double gelu_fwd(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

// Bilinear weights and corner indices for a border-clamped read of an HxW
// grid at (y, x). At the high border the base cell shifts inward so all four
// corners stay valid.
struct ClampedCell {
    int y0, x0, y1, x1;
    double fy, fx;
};

ClampedCell clamped_cell(double y, double x, int h, int w) {
    double yc = std::clamp(y, 0.0, static_cast<double>(h - 1));
    double xc = std::clamp(x, 0.0, static_cast<double>(w - 1));
    int y0 = static_cast<int>(std::floor(yc));
    int x0 = static_cast<int>(std::floor(xc));
    y0 = std::min(y0, std::max(0, h - 2));
    x0 = std::min(x0, std::max(0, w - 2));
    ClampedCell c;
    c.y0 = y0;
    c.x0 = x0;
    c.y1 = std::min(y0 + 1, h - 1);
    c.x1 = std::min(x0 + 1, w - 1);
    c.fy = yc - y0;
    c.fx = xc - x0;
    return c;
}

}  // namespace

Var Graph::make(Tensor value, bool requires_grad, std::function<void(Graph&)> backward_fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward_fn = requires_grad ? std::move(backward_fn) : std::function<void(Graph&)>{};
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Graph::Node& Graph::node(Var v) {
    if (!v.valid() || v.graph != this) throw input_error("Graph: foreign or invalid Var");
    return nodes_[static_cast<std::size_t>(v.id)];
}

const Graph::Node& Graph::node(Var v) const {
    if (!v.valid() || v.graph != this) throw input_error("Graph: foreign or invalid Var");
    return nodes_[static_cast<std::size_t>(v.id)];
}

Tensor& Graph::ensure_grad(std::int32_t id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad_ready) {
        n.grad = Tensor(n.value.shape, 0.0);
        n.grad_ready = true;
    }
    return n.grad;
}

const Tensor& Graph::value(Var v) const { return node(v).value; }

const Tensor& Graph::grad(Var v) const {
    const Node& n = node(v);
    if (!n.grad_ready) {
        static thread_local Tensor zero;
        zero = Tensor(n.value.shape, 0.0);
        return zero;
    }
    return n.grad;
}

Var Graph::constant(Tensor v) { return make(std::move(v), false, {}); }

Var Graph::param(Tensor v) { return make(std::move(v), true, {}); }

void Graph::backward(Var loss) {
    Node& ln = node(loss);
    if (ln.value.numel() != 1) throw input_error("backward: loss must be scalar");
    ensure_grad(loss.id)[0] = 1.0;
    for (std::int32_t i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.grad_ready && n.backward_fn) n.backward_fn(*this);
    }
}

// ---------------------------------------------------------------- elementwise

namespace {
enum class BinKind { add, sub, mul, div };
}

Var Graph::add(Var a, Var b) { return bin_op(a, b, 0); }
Var Graph::sub(Var a, Var b) { return bin_op(a, b, 1); }
Var Graph::mul(Var a, Var b) { return bin_op(a, b, 2); }
Var Graph::div(Var a, Var b) { return bin_op(a, b, 3); }

Var Graph::bin_op(Var a, Var b, int kind_tag) {
    const BinKind kind = static_cast<BinKind>(kind_tag);
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!(av.shape == bv.shape || av.numel() == 1 || bv.numel() == 1))
        throw input_error("elementwise op: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());

    const bool as = av.numel() == 1 && bv.numel() != 1;
    const bool bs = bv.numel() == 1 && av.numel() != 1;
    Tensor out(as ? bv.shape : av.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        double x = av[as ? 0 : i], y = bv[bs ? 0 : i];
        switch (kind) {
            case BinKind::add: out[i] = x + y; break;
            case BinKind::sub: out[i] = x - y; break;
            case BinKind::mul: out[i] = x * y; break;
            case BinKind::div: out[i] = x / y; break;
        }
    }

    bool need = rg(a) || rg(b);
    Var o = make(std::move(out), need, {});
    if (!need) return o;
    std::int32_t oid = o.id, aid = a.id, bid = b.id;
    node(o).backward_fn = [oid, aid, bid, as, bs, kind](Graph& g) {
        const Tensor& dout = g.nodes_[static_cast<std::size_t>(oid)].grad;
        const Tensor& av = g.nodes_[static_cast<std::size_t>(aid)].value;
        const Tensor& bv = g.nodes_[static_cast<std::size_t>(bid)].value;
        const bool need_a = g.nodes_[static_cast<std::size_t>(aid)].requires_grad;
        const bool need_b = g.nodes_[static_cast<std::size_t>(bid)].requires_grad;
        Tensor* da = need_a ? &g.ensure_grad(aid) : nullptr;
        Tensor* db = need_b ? &g.ensure_grad(bid) : nullptr;
        for (std::int64_t i = 0; i < dout.numel(); ++i) {
            double go = dout[i];
            double x = av[as ? 0 : i], y = bv[bs ? 0 : i];
            double gx = 0.0, gy = 0.0;
            switch (kind) {
                case BinKind::add: gx = go; gy = go; break;
                case BinKind::sub: gx = go; gy = -go; break;
                case BinKind::mul: gx = go * y; gy = go * x; break;
                case BinKind::div: gx = go / y; gy = -go * x / (y * y); break;
            }
            if (da) (*da)[as ? 0 : i] += gx;
            if (db) (*db)[bs ? 0 : i] += gy;
        }
    };
    return o;
}

Var Graph::add_broadcast(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (bv.rank() >= av.rank() || bv.rank() == 0)
        throw input_error("add_broadcast: b must have strictly smaller rank");
    for (int i = 0; i < bv.rank(); ++i)
        if (bv.shape[static_cast<std::size_t>(i)] !=
            av.shape[static_cast<std::size_t>(av.rank() - bv.rank() + i)])
            throw input_error("add_broadcast: b is not a trailing suffix of a");

    const std::int64_t inner = bv.numel();
    const std::int64_t reps = av.numel() / inner;
    Tensor out(av.shape);
    for (std::int64_t r = 0; r < reps; ++r)
        for (std::int64_t i = 0; i < inner; ++i) out[r * inner + i] = av[r * inner + i] + bv[i];

    bool need = rg(a) || rg(b);
    Var o = make(std::move(out), need, {});
    if (!need) return o;
    std::int32_t oid = o.id, aid = a.id, bid = b.id;
    node(o).backward_fn = [oid, aid, bid, inner, reps](Graph& g) {
        const Tensor& dout = g.nodes_[static_cast<std::size_t>(oid)].grad;
        if (g.nodes_[static_cast<std::size_t>(aid)].requires_grad) {
            Tensor& da = g.ensure_grad(aid);
            for (std::int64_t i = 0; i < dout.numel(); ++i) da[i] += dout[i];
        }
        if (g.nodes_[static_cast<std::size_t>(bid)].requires_grad) {
            Tensor& db = g.ensure_grad(bid);
            for (std::int64_t r = 0; r < reps; ++r)
                for (std::int64_t i = 0; i < inner; ++i) db[i] += dout[r * inner + i];
        }
    };
    return o;
}

namespace {
enum class UnKind { scale_add, abs_v, sqrt_v, tanh_v, gelu_v };
}

Var Graph::unary_op(Var a, int kind_tag, double s, double c) {
    const UnKind kind = static_cast<UnKind>(kind_tag);
    const Tensor& av = value(a);
    Tensor out(av.shape);
    for (std::int64_t i = 0; i < av.numel(); ++i) {
        double x = av[i];
        switch (kind) {
            case UnKind::scale_add: out[i] = s * x + c; break;
            case UnKind::abs_v: out[i] = std::fabs(x); break;
            case UnKind::sqrt_v: out[i] = std::sqrt(x); break;
            case UnKind::tanh_v: out[i] = std::tanh(x); break;
            case UnKind::gelu_v: out[i] = gelu_fwd(x); break;
        }
    }
    bool need = rg(a);
    Var o = make(std::move(out), need, {});
    if (!need) return o;
    std::int32_t oid = o.id, aid = a.id;
    node(o).backward_fn = [oid, aid, kind, s](Graph& g) {
        const Tensor& dout = g.nodes_[static_cast<std::size_t>(oid)].grad;
        const Tensor& av = g.nodes_[static_cast<std::size_t>(aid)].value;
        const Tensor& ov = g.nodes_[static_cast<std::size_t>(oid)].value;
        Tensor& da = g.ensure_grad(aid);
        for (std::int64_t i = 0; i < dout.numel(); ++i) {
            double d = 0.0;
            switch (kind) {
                case UnKind::scale_add: d = s; break;
                case UnKind::abs_v: d = av[i] > 0.0 ? 1.0 : (av[i] < 0.0 ? -1.0 : 0.0); break;
                case UnKind::sqrt_v: d = 0.5 / ov[i]; break;
                case UnKind::tanh_v: d = 1.0 - ov[i] * ov[i]; break;
                case UnKind::gelu_v: d = gelu_grad(av[i]); break;
            }
            da[i] += dout[i] * d;
        }
    };
    return o;
}

Var Graph::scale(Var a, double s) { return unary_op(a, 0, s, 0.0); }
Var Graph::add_const(Var a, double c) { return unary_op(a, 0, 1.0, c); }
Var Graph::abs(Var a) { return unary_op(a, 1, 0.0, 0.0); }
Var Graph::sqrt(Var a) { return unary_op(a, 2, 0.0, 0.0); }
Var Graph::tanh(Var a) { return unary_op(a, 3, 0.0, 0.0); }
Var Graph::gelu(Var a) { return unary_op(a, 4, 0.0, 0.0); }

Var Graph::sum(Var a) {
    const Tensor& av = value(a);
    double s = 0.0;
    for (std::int64_t i = 0; i < av.numel(); ++i) s += av[i];
    bool need = rg(a);
    Var o = make(Tensor::scalar(s), need, {});
    if (!need) return o;
    std::int32_t oid = o.id, aid = a.id;
    node(o).backward_fn = [oid, aid](Graph& g) {
        double go = g.nodes_[static_cast<std::size_t>(oid)].grad[0];
        Tensor& da = g.ensure_grad(aid);
        for (std::int64_t i = 0; i < da.numel(); ++i) da[i] += go;
    };
    return o;
}

Var Graph::mean(Var a) {
    std::int64_t n = value(a).numel();
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

// ------------------------------------------------------------------- reshape

Var Graph::reshape(Var a, std::vector<std::int64_t> shape) {
    const Tensor& av = value(a);
    if (numel_of(shape) != av.numel()) throw input_error("reshape: element count mismatch");
    Tensor out = av;
    out.shape = std::move(shape);
    bool need = rg(a);
    Var o = make(std::move(out), need, {});
    if (!need) return o;
    std::int32_t oid = o.id, aid = a.id;
    node(o).backward_fn = [oid, aid](Graph& g) {
        const Tensor& dout = g.nodes_[static_cast<std::size_t>(oid)].grad;
        Tensor& da = g.ensure_grad(aid);
        for (std::int64_t i = 0; i < dout.numel(); ++i) da[i] += dout[i];
    };
    return o;
}

namespace {

std::vector<std::int64_t> strides_of(const std::vector<std::int64_t>& shape) {
    std::vector<std::int64_t> st(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
        st[static_cast<std::size_t>(i)] =
            st[static_cast<std::size_t>(i + 1)] * shape[static_cast<std::size_t>(i + 1)];
    return st;
}

// flat index mapping out -> in for a permutation of axes
void permute_copy(const Tensor& in, const std::vector<int>& axes, Tensor& out,
                  std::vector<std::int64_t>& out_to_in) {
    const auto in_strides = strides_of(in.shape);
    const auto out_strides = strides_of(out.shape);
    const int r = in.rank();
    out_to_in.resize(static_cast<std::size_t>(out.numel()));
    for (std::int64_t oi = 0; oi < out.numel(); ++oi) {
        std::int64_t rem = oi, ii = 0;
        for (int d = 0; d < r; ++d) {
            std::int64_t coord = rem / out_strides[static_cast<std::size_t>(d)];
            rem %= out_strides[static_cast<std::size_t>(d)];
            ii += coord * in_strides[static_cast<std::size_t>(axes[static_cast<std::size_t>(d)])];
        }
        out.data[static_cast<std::size_t>(oi)] = in.data[static_cast<std::size_t>(ii)];
        out_to_in[static_cast<std::size_t>(oi)] = ii;
    }
}

}  // namespace

Var Graph::permute(Var a, std::vector<int> axes) {
    const Tensor& av = value(a);
    if (static_cast<int>(axes.size()) != av.rank()) throw input_error("permute: axes rank mismatch");
    std::vector<std::int64_t> shape(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i)
        shape[i] = av.shape[static_cast<std::size_t>(axes[i])];
    Tensor out(shape);
    auto mapping = std::make_shared<std::vector<std::int64_t>>();
    permute_copy(av, axes, out, *mapping);
    bool need = rg(a);
    Var o = make(std::move(out), need, {});
    if (!need) return o;
    std::int32_t oid = o.id, aid = a.id;
    node(o).backward_fn = [oid, aid, mapping](Graph& g) {
        const Tensor& dout = g.nodes_[static_cast<std::size_t>(oid)].grad;
        Tensor& da = g.ensure_grad(aid);
        for (std::int64_t oi = 0; oi < dout.numel(); ++oi)
            da[(*mapping)[static_cast<std::size_t>(oi)]] += dout[oi];
    };
    return o;
}

Var Graph::slice_front(Var a, std::int64_t lo, std::int64_t hi) {
    const Tensor& av = value(a);
    if (av.rank() < 1 || lo < 0 || hi > av.dim(0) || lo >= hi)
        throw input_error("slice_front: bad range");
    std::int64_t inner = av.numel() / av.dim(0);
    std::vector<std::int64_t> shape = av.shape;
    shape[0] = hi - lo;
    Tensor out(shape);
    std::copy(av.data.begin() + lo * inner, av.data.begin() + hi * inner, out.data.begin());
    bool need = rg(a);
    Var o = make(std::move(out), need, {});
    if (!need) return o;
    std::int32_t oid = o.id, aid = a.id;
    node(o).backward_fn = [oid, aid, lo, inner](Graph& g) {
        const Tensor& dout = g.nodes_[static_cast<std::size_t>(oid)].grad;
        Tensor& da = g.ensure_grad(aid);
        for (std::int64_t i = 0; i < dout.numel(); ++i) da[lo * inner + i] += dout[i];
    };
    return o;
}

Var Graph::select_front(Var a, std::int64_t i) {
    Var s = slice_front(a, i, i + 1);
    std::vector<std::int64_t> shape(value(a).shape.begin() + 1, value(a).shape.end());
    return reshape(s, std::move(shape));
}

Var Graph::element(Var a, std::int64_t flat_index) {
    const Tensor& av = value(a);
    if (flat_index < 0 || flat_index >= av.numel()) throw input_error("element: index out of range");
    bool need = rg(a);
    Var o = make(Tensor::scalar(av[flat_index]), need, {});
    if (!need) return o;
    std::int32_t oid = o.id, aid = a.id;
    node(o).backward_fn = [oid, aid, flat_index](Graph& g) {
        g.ensure_grad(aid)[flat_index] += g.nodes_[static_cast<std::size_t>(oid)].grad[0];
    };
    return o;
}

Var Graph::concat_front(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.rank() != bv.rank() || av.rank() < 1) throw input_error("concat_front: rank mismatch");
    for (int i = 1; i < av.rank(); ++i)
        if (av.dim(i) != bv.dim(i)) throw input_error("concat_front: trailing shape mismatch");
    std::vector<std::int64_t> shape = av.shape;
    shape[0] += bv.dim(0);
    Tensor out(shape);
    std::copy(av.data.begin(), av.data.end(), out.data.begin());
    std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + av.numel());
    bool need = rg(a) || rg(b);
    Var o = make(std::move(out), need, {});
    if (!need) return o;
    std::int32_t oid = o.id, aid = a.id, bid = b.id;
    std::int64_t an = av.numel();
    node(o).backward_fn = [oid, aid, bid, an](Graph& g) {
        const Tensor& dout = g.nodes_[static_cast<std::size_t>(oid)].grad;
        if (g.nodes_[static_cast<std::size_t>(aid)].requires_grad) {
            Tensor& da = g.ensure_grad(aid);
            for (std::int64_t i = 0; i < an; ++i) da[i] += dout[i];
        }
        if (g.nodes_[static_cast<std::size_t>(bid)].requires_grad) {
            Tensor& db = g.ensure_grad(bid);
            for (std::int64_t i = an; i < dout.numel(); ++i) db[i - an] += dout[i];
        }
    };
    return o;
}

// -------------------------------------------------------------------- linear

Var Graph::matmul(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
        throw input_error("matmul: incompatible shapes");
    const std::int64_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor out({m, n});
    MapCRM A(av.data.data(), m, k);
    MapCRM B(bv.data.data(), k, n);
    MapRM O(out.data.data(), m, n);
    O.noalias() = A * B;
    bool need = rg(a) || rg(b);
    Var o = make(std::move(out), need, {});
    if (!need) return o;
    std::int32_t oid = o.id, aid = a.id, bid = b.id;
    node(o).backward_fn = [oid, aid, bid, m, k, n](Graph& g) {
        const Tensor& dout = g.nodes_[static_cast<std::size_t>(oid)].grad;
        MapCRM D(dout.data.data(), m, n);
        if (g.nodes_[static_cast<std::size_t>(aid)].requires_grad) {
            MapCRM B(g.nodes_[static_cast<std::size_t>(bid)].value.data.data(), k, n);
            MapRM DA(g.ensure_grad(aid).data.data(), m, k);
            DA.noalias() += D * B.transpose();
        }
        if (g.nodes_[static_cast<std::size_t>(bid)].requires_grad) {
            MapCRM A(g.nodes_[static_cast<std::size_t>(aid)].value.data.data(), m, k);
            MapRM DB(g.ensure_grad(bid).data.data(), k, n);
            DB.noalias() += A.transpose() * D;
        }
    };
    return o;
}

Var Graph::bmm(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1))
        throw input_error("bmm: incompatible shapes");
    const std::int64_t bb = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
    Tensor out({bb, m, n});
    parallel_blocks(bb, [&](int, std::int64_t lo, std::int64_t hi) {
        for (std::int64_t i = lo; i < hi; ++i) {
            MapCRM A(av.data.data() + i * m * k, m, k);
            MapCRM B(bv.data.data() + i * k * n, k, n);
            MapRM O(out.data.data() + i * m * n, m, n);
            O.noalias() = A * B;
        }
    });
    bool need = rg(a) || rg(b);
    Var o = make(std::move(out), need, {});
    if (!need) return o;
    std::int32_t oid = o.id, aid = a.id, bid = b.id;
    node(o).backward_fn = [oid, aid, bid, bb, m, k, n](Graph& g) {
        const Tensor& dout = g.nodes_[static_cast<std::size_t>(oid)].grad;
        const Tensor& av = g.nodes_[static_cast<std::size_t>(aid)].value;
        const Tensor& bv = g.nodes_[static_cast<std::size_t>(bid)].value;
        const bool na = g.nodes_[static_cast<std::size_t>(aid)].requires_grad;
        const bool nb = g.nodes_[static_cast<std::size_t>(bid)].requires_grad;
        Tensor* da = na ? &g.ensure_grad(aid) : nullptr;
        Tensor* db = nb ? &g.ensure_grad(bid) : nullptr;
        parallel_blocks(bb, [&](int, std::int64_t lo, std::int64_t hi) {
            for (std::int64_t i = lo; i < hi; ++i) {
                MapCRM D(dout.data.data() + i * m * n, m, n);
                if (da) {
                    MapCRM B(bv.data.data() + i * k * n, k, n);
                    MapRM DA(da->data.data() + i * m * k, m, k);
                    DA.noalias() += D * B.transpose();
                }
                if (db) {
                    MapCRM A(av.data.data() + i * m * k, m, k);
                    MapRM DB(db->data.data() + i * k * n, k, n);
                    DB.noalias() += A.transpose() * D;
                }
            }
        });
    };
    return o;
}

Var Graph::linear(Var x, Var w, Var b) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    if (wv.rank() != 2 || xv.rank() < 1) throw input_error("linear: bad ranks");
    const std::int64_t k = wv.dim(0), n = wv.dim(1);
    if (xv.shape.back() != k) throw input_error("linear: inner dimension mismatch");
    const std::int64_t rows = xv.numel() / k;

    Tensor out([&] {
        auto s = xv.shape;
        s.back() = n;
        return s;
    }());
    MapCRM X(xv.data.data(), rows, k);
    MapCRM W(wv.data.data(), k, n);
    MapRM O(out.data.data(), rows, n);
    O.noalias() = X * W;
    if (b.valid()) {
        const Tensor& bv = value(b);
        if (bv.numel() != n) throw input_error("linear: bias size mismatch");
        for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < n; ++j) out[r * n + j] += bv[j];
    }

    bool need = rg(x) || rg(w) || (b.valid() && rg(b));
    Var o = make(std::move(out), need, {});
    if (!need) return o;
    std::int32_t oid = o.id, xid = x.id, wid = w.id, bid = b.valid() ? b.id : -1;
    node(o).backward_fn = [oid, xid, wid, bid, rows, k, n](Graph& g) {
        const Tensor& dout = g.nodes_[static_cast<std::size_t>(oid)].grad;
        MapCRM D(dout.data.data(), rows, n);
        if (g.nodes_[static_cast<std::size_t>(xid)].requires_grad) {
            MapCRM W(g.nodes_[static_cast<std::size_t>(wid)].value.data.data(), k, n);
            MapRM DX(g.ensure_grad(xid).data.data(), rows, k);
            DX.noalias() += D * W.transpose();
        }
        if (g.nodes_[static_cast<std::size_t>(wid)].requires_grad) {
            MapCRM X(g.nodes_[static_cast<std::size_t>(xid)].value.data.data(), rows, k);
            MapRM DW(g.ensure_grad(wid).data.data(), k, n);
            DW.noalias() += X.transpose() * D;
        }
        if (bid >= 0 && g.nodes_[static_cast<std::size_t>(bid)].requires_grad) {
            Tensor& db = g.ensure_grad(bid);
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t j = 0; j < n; ++j) db[j] += dout[r * n + j];
        }
    };
    return o;
}

Var Graph::layernorm(Var x, Var gamma, Var beta, double eps) {
    const Tensor& xv = value(x);
    const Tensor& gv = value(gamma);
    const Tensor& bv = value(beta);
    const std::int64_t e = xv.shape.back();
    if (gv.numel() != e || bv.numel() != e) throw input_error("layernorm: affine size mismatch");
    const std::int64_t rows = xv.numel() / e;

    Tensor out(xv.shape);
    auto xhat = std::make_shared<Tensor>(xv.shape);
    auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xp = xv.data.data() + r * e;
        double mu = 0.0;
        for (std::int64_t i = 0; i < e; ++i) mu += xp[i];
        mu /= static_cast<double>(e);
        double var = 0.0;
        for (std::int64_t i = 0; i < e; ++i) var += (xp[i] - mu) * (xp[i] - mu);
        var /= static_cast<double>(e);
        double is = 1.0 / std::sqrt(var + eps);
        (*inv_sigma)[static_cast<std::size_t>(r)] = is;
        for (std::int64_t i = 0; i < e; ++i) {
            double xh = (xp[i] - mu) * is;
            (*xhat)[r * e + i] = xh;
            out[r * e + i] = xh * gv[i] + bv[i];
        }
    }

    bool need = rg(x) || rg(gamma) || rg(beta);
    Var o = make(std::move(out), need, {});
    if (!need) return o;
    std::int32_t oid = o.id, xid = x.id, gid = gamma.id, bid = beta.id;
    node(o).backward_fn = [oid, xid, gid, bid, rows, e, xhat, inv_sigma](Graph& g) {
        const Tensor& dout = g.nodes_[static_cast<std::size_t>(oid)].grad;
        const Tensor& gv = g.nodes_[static_cast<std::size_t>(gid)].value;
        const bool nx = g.nodes_[static_cast<std::size_t>(xid)].requires_grad;
        const bool ng = g.nodes_[static_cast<std::size_t>(gid)].requires_grad;
        const bool nb = g.nodes_[static_cast<std::size_t>(bid)].requires_grad;
        Tensor* dx = nx ? &g.ensure_grad(xid) : nullptr;
        Tensor* dg = ng ? &g.ensure_grad(gid) : nullptr;
        Tensor* db = nb ? &g.ensure_grad(bid) : nullptr;
        for (std::int64_t r = 0; r < rows; ++r) {
            const double is = (*inv_sigma)[static_cast<std::size_t>(r)];
            double sum_dg = 0.0, sum_dgx = 0.0;
            for (std::int64_t i = 0; i < e; ++i) {
                double dy = dout[r * e + i];
                double xh = (*xhat)[r * e + i];
                if (dg) (*dg)[i] += dy * xh;
                if (db) (*db)[i] += dy;
                double dgi = dy * gv[i];
                sum_dg += dgi;
                sum_dgx += dgi * xh;
            }
            if (dx) {
                const double inv_e = 1.0 / static_cast<double>(e);
                for (std::int64_t i = 0; i < e; ++i) {
                    double dgi = dout[r * e + i] * gv[i];
                    double xh = (*xhat)[r * e + i];
                    (*dx)[r * e + i] += is * (dgi - inv_e * sum_dg - xh * inv_e * sum_dgx);
                }
            }
        }
    };
    return o;
}

Var Graph::softmax_lastdim(Var x) {
    const Tensor& xv = value(x);
    const std::int64_t e = xv.shape.back();
    const std::int64_t rows = xv.numel() / e;
    Tensor out(xv.shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xp = xv.data.data() + r * e;
        double mx = xp[0];
        for (std::int64_t i = 1; i < e; ++i) mx = std::max(mx, xp[i]);
        double z = 0.0;
        for (std::int64_t i = 0; i < e; ++i) {
            double v = std::exp(xp[i] - mx);
            out[r * e + i] = v;
            z += v;
        }
        double inv = 1.0 / z;
        for (std::int64_t i = 0; i < e; ++i) out[r * e + i] *= inv;
    }
    bool need = rg(x);
    Var o = make(std::move(out), need, {});
    if (!need) return o;
    std::int32_t oid = o.id, xid = x.id;
    node(o).backward_fn = [oid, xid, rows, e](Graph& g) {
        const Tensor& dout = g.nodes_[static_cast<std::size_t>(oid)].grad;
        const Tensor& ov = g.nodes_[static_cast<std::size_t>(oid)].value;
        Tensor& dx = g.ensure_grad(xid);
        for (std::int64_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::int64_t i = 0; i < e; ++i) dot += dout[r * e + i] * ov[r * e + i];
            for (std::int64_t i = 0; i < e; ++i)
                dx[r * e + i] += (dout[r * e + i] - dot) * ov[r * e + i];
        }
    };
    return o;
}

// --------------------------------------------------------------- convolution

namespace {

struct ConvDims {
    std::int64_t n, c, h, w, co, kh, kw, ho, wo, ckk;
    int stride, pad;
};

void im2col(const double* x, const ConvDims& d, double* col) {
    // col is [ckk, ho*wo]
    for (std::int64_t c = 0; c < d.c; ++c) {
        for (std::int64_t ky = 0; ky < d.kh; ++ky) {
            for (std::int64_t kx = 0; kx < d.kw; ++kx) {
                double* row = col + ((c * d.kh + ky) * d.kw + kx) * (d.ho * d.wo);
                for (std::int64_t oy = 0; oy < d.ho; ++oy) {
                    std::int64_t iy = oy * d.stride - d.pad + ky;
                    if (iy < 0 || iy >= d.h) {
                        std::fill(row + oy * d.wo, row + (oy + 1) * d.wo, 0.0);
                        continue;
                    }
                    const double* xrow = x + (c * d.h + iy) * d.w;
                    for (std::int64_t ox = 0; ox < d.wo; ++ox) {
                        std::int64_t ix = ox * d.stride - d.pad + kx;
                        row[oy * d.wo + ox] = (ix < 0 || ix >= d.w) ? 0.0 : xrow[ix];
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, const ConvDims& d, double* dx) {
    for (std::int64_t c = 0; c < d.c; ++c) {
        for (std::int64_t ky = 0; ky < d.kh; ++ky) {
            for (std::int64_t kx = 0; kx < d.kw; ++kx) {
                const double* row = col + ((c * d.kh + ky) * d.kw + kx) * (d.ho * d.wo);
                for (std::int64_t oy = 0; oy < d.ho; ++oy) {
                    std::int64_t iy = oy * d.stride - d.pad + ky;
                    if (iy < 0 || iy >= d.h) continue;
                    double* xrow = dx + (c * d.h + iy) * d.w;
                    for (std::int64_t ox = 0; ox < d.wo; ++ox) {
                        std::int64_t ix = ox * d.stride - d.pad + kx;
                        if (ix >= 0 && ix < d.w) xrow[ix] += row[oy * d.wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Var Graph::conv2d(Var x, Var w, Var b, int stride, int pad) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    if (xv.rank() != 4 || wv.rank() != 4) throw input_error("conv2d: expects 4-D tensors");
    if (xv.dim(1) != wv.dim(1)) throw input_error("conv2d: channel mismatch");
    if (stride < 1 || pad < 0) throw input_error("conv2d: bad stride/pad");

    ConvDims d;
    d.n = xv.dim(0);
    d.c = xv.dim(1);
    d.h = xv.dim(2);
    d.w = xv.dim(3);
    d.co = wv.dim(0);
    d.kh = wv.dim(2);
    d.kw = wv.dim(3);
    d.stride = stride;
    d.pad = pad;
    d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
    d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
    d.ckk = d.c * d.kh * d.kw;
    if (d.ho <= 0 || d.wo <= 0) throw input_error("conv2d: empty output");

    const Tensor* bias = b.valid() ? &value(b) : nullptr;
    if (bias && bias->numel() != d.co) throw input_error("conv2d: bias size mismatch");

    Tensor out({d.n, d.co, d.ho, d.wo});
    const std::int64_t in_sz = d.c * d.h * d.w;
    const std::int64_t out_sz = d.co * d.ho * d.wo;
    parallel_blocks(d.n, [&](int, std::int64_t lo, std::int64_t hi) {
        std::vector<double> col(static_cast<std::size_t>(d.ckk * d.ho * d.wo));
        for (std::int64_t i = lo; i < hi; ++i) {
            im2col(xv.data.data() + i * in_sz, d, col.data());
            MapCRM W(wv.data.data(), d.co, d.ckk);
            MapCRM C(col.data(), d.ckk, d.ho * d.wo);
            MapRM O(out.data.data() + i * out_sz, d.co, d.ho * d.wo);
            O.noalias() = W * C;
            if (bias)
                for (std::int64_t co = 0; co < d.co; ++co)
                    for (std::int64_t px = 0; px < d.ho * d.wo; ++px)
                        out[i * out_sz + co * d.ho * d.wo + px] += (*bias)[co];
        }
    });

    bool need = rg(x) || rg(w) || (b.valid() && rg(b));
    Var o = make(std::move(out), need, {});
    if (!need) return o;
    std::int32_t oid = o.id, xid = x.id, wid = w.id, bid = b.valid() ? b.id : -1;
    node(o).backward_fn = [oid, xid, wid, bid, d, in_sz, out_sz](Graph& g) {
        const Tensor& dout = g.nodes_[static_cast<std::size_t>(oid)].grad;
        const Tensor& xv = g.nodes_[static_cast<std::size_t>(xid)].value;
        const Tensor& wv = g.nodes_[static_cast<std::size_t>(wid)].value;
        const bool nx = g.nodes_[static_cast<std::size_t>(xid)].requires_grad;
        const bool nw = g.nodes_[static_cast<std::size_t>(wid)].requires_grad;
        const bool nb = bid >= 0 && g.nodes_[static_cast<std::size_t>(bid)].requires_grad;
        Tensor* dx = nx ? &g.ensure_grad(xid) : nullptr;
        Tensor* dw = nw ? &g.ensure_grad(wid) : nullptr;
        Tensor* db = nb ? &g.ensure_grad(bid) : nullptr;

        const int nblocks =
            static_cast<int>(std::min<std::int64_t>(hw_threads(), std::max<std::int64_t>(d.n, 1)));
        std::vector<Tensor> dw_part, db_part;
        if (dw) dw_part.assign(static_cast<std::size_t>(nblocks), Tensor(wv.shape, 0.0));
        if (db) db_part.assign(static_cast<std::size_t>(nblocks), Tensor({d.co}, 0.0));

        parallel_blocks(d.n, [&](int blk, std::int64_t lo, std::int64_t hi) {
            std::vector<double> col(static_cast<std::size_t>(d.ckk * d.ho * d.wo));
            std::vector<double> dcol(static_cast<std::size_t>(d.ckk * d.ho * d.wo));
            for (std::int64_t i = lo; i < hi; ++i) {
                MapCRM D(dout.data.data() + i * out_sz, d.co, d.ho * d.wo);
                if (dx) {
                    MapCRM W(wv.data.data(), d.co, d.ckk);
                    MapRM DC(dcol.data(), d.ckk, d.ho * d.wo);
                    DC.noalias() = W.transpose() * D;
                    col2im_add(dcol.data(), d, dx->data.data() + i * in_sz);
                }
                if (dw) {
                    im2col(xv.data.data() + i * in_sz, d, col.data());
                    MapCRM C(col.data(), d.ckk, d.ho * d.wo);
                    MapRM DW(dw_part[static_cast<std::size_t>(blk)].data.data(), d.co, d.ckk);
                    DW.noalias() += D * C.transpose();
                }
                if (db) {
                    Tensor& dbp = db_part[static_cast<std::size_t>(blk)];
                    for (std::int64_t co = 0; co < d.co; ++co)
                        for (std::int64_t px = 0; px < d.ho * d.wo; ++px)
                            dbp[co] += dout[i * out_sz + co * d.ho * d.wo + px];
                }
            }
        });
        // fixed-order reduction keeps the result deterministic
        if (dw)
            for (int blk = 0; blk < nblocks; ++blk)
                for (std::int64_t i = 0; i < dw->numel(); ++i)
                    (*dw)[i] += dw_part[static_cast<std::size_t>(blk)][i];
        if (db)
            for (int blk = 0; blk < nblocks; ++blk)
                for (std::int64_t i = 0; i < db->numel(); ++i)
                    (*db)[i] += db_part[static_cast<std::size_t>(blk)][i];
    };
    return o;
}

Var Graph::upsample2(Var x) {
    const Tensor& xv = value(x);
    if (xv.rank() != 4) throw input_error("upsample2: expects [N,C,H,W]");
    const std::int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    Tensor out({n, c, 2 * h, 2 * w});
    for (std::int64_t i = 0; i < n * c; ++i) {
        const double* xp = xv.data.data() + i * h * w;
        double* op = out.data.data() + i * 4 * h * w;
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t xcol = 0; xcol < w; ++xcol) {
                double v = xp[y * w + xcol];
                op[(2 * y) * 2 * w + 2 * xcol] = v;
                op[(2 * y) * 2 * w + 2 * xcol + 1] = v;
                op[(2 * y + 1) * 2 * w + 2 * xcol] = v;
                op[(2 * y + 1) * 2 * w + 2 * xcol + 1] = v;
            }
    }
    bool need = rg(x);
    Var o = make(std::move(out), need, {});
    if (!need) return o;
    std::int32_t oid = o.id, xid = x.id;
    node(o).backward_fn = [oid, xid, n, c, h, w](Graph& g) {
        const Tensor& dout = g.nodes_[static_cast<std::size_t>(oid)].grad;
        Tensor& dx = g.ensure_grad(xid);
        for (std::int64_t i = 0; i < n * c; ++i) {
            double* dxp = dx.data.data() + i * h * w;
            const double* dop = dout.data.data() + i * 4 * h * w;
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t xcol = 0; xcol < w; ++xcol)
                    dxp[y * w + xcol] += dop[(2 * y) * 2 * w + 2 * xcol] +
                                         dop[(2 * y) * 2 * w + 2 * xcol + 1] +
                                         dop[(2 * y + 1) * 2 * w + 2 * xcol] +
                                         dop[(2 * y + 1) * 2 * w + 2 * xcol + 1];
        }
    };
    return o;
}

Var Graph::concat_channels(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.rank() != 4 || bv.rank() != 4 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) ||
        av.dim(3) != bv.dim(3))
        throw input_error("concat_channels: shape mismatch");
    const std::int64_t n = av.dim(0), ca = av.dim(1), cb = bv.dim(1), hw = av.dim(2) * av.dim(3);
    Tensor out({n, ca + cb, av.dim(2), av.dim(3)});
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy(av.data.begin() + i * ca * hw, av.data.begin() + (i + 1) * ca * hw,
                  out.data.begin() + i * (ca + cb) * hw);
        std::copy(bv.data.begin() + i * cb * hw, bv.data.begin() + (i + 1) * cb * hw,
                  out.data.begin() + i * (ca + cb) * hw + ca * hw);
    }
    bool need = rg(a) || rg(b);
    Var o = make(std::move(out), need, {});
    if (!need) return o;
    std::int32_t oid = o.id, aid = a.id, bid = b.id;
    node(o).backward_fn = [oid, aid, bid, n, ca, cb, hw](Graph& g) {
        const Tensor& dout = g.nodes_[static_cast<std::size_t>(oid)].grad;
        if (g.nodes_[static_cast<std::size_t>(aid)].requires_grad) {
            Tensor& da = g.ensure_grad(aid);
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < ca * hw; ++j)
                    da[i * ca * hw + j] += dout[i * (ca + cb) * hw + j];
        }
        if (g.nodes_[static_cast<std::size_t>(bid)].requires_grad) {
            Tensor& db = g.ensure_grad(bid);
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < cb * hw; ++j)
                    db[i * cb * hw + j] += dout[i * (ca + cb) * hw + ca * hw + j];
        }
    };
    return o;
}

Var Graph::patchify(Var x, int p) {
    const Tensor& xv = value(x);
    if (xv.rank() != 4) throw input_error("patchify: expects [N,C,H,W]");
    const std::int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    if (p <= 0 || h % p != 0 || w % p != 0) throw input_error("patchify: patch size must divide h and w");
    const std::int64_t gh = h / p, gw = w / p, nk = gh * gw, f = static_cast<std::int64_t>(p) * p * c;

    // token t = gy*gw+gx; feature index = (c*p + py)*p + px
    Tensor out({n, nk, f});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t xx = 0; xx < w; ++xx) {
                    std::int64_t t = (y / p) * gw + (xx / p);
                    std::int64_t feat = (ch * p + y % p) * p + xx % p;
                    out[(i * nk + t) * f + feat] = xv[((i * c + ch) * h + y) * w + xx];
                }
    bool need = rg(x);
    Var o = make(std::move(out), need, {});
    if (!need) return o;
    std::int32_t oid = o.id, xid = x.id;
    std::int64_t pp = p;
    node(o).backward_fn = [oid, xid, n, c, h, w, gw, nk, f, pp](Graph& g) {
        const Tensor& dout = g.nodes_[static_cast<std::size_t>(oid)].grad;
        Tensor& dx = g.ensure_grad(xid);
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t ch = 0; ch < c; ++ch)
                for (std::int64_t y = 0; y < h; ++y)
                    for (std::int64_t xx = 0; xx < w; ++xx) {
                        std::int64_t t = (y / pp) * gw + (xx / pp);
                        std::int64_t feat = (ch * pp + y % pp) * pp + xx % pp;
                        dx[((i * c + ch) * h + y) * w + xx] += dout[(i * nk + t) * f + feat];
                    }
    };
    return o;
}

Var Graph::unpatchify(Var t, int c, int gh, int gw, int p) {
    const Tensor& tv = value(t);
    if (tv.rank() != 3) throw input_error("unpatchify: expects [N,Nk,F]");
    const std::int64_t n = tv.dim(0), nk = tv.dim(1), f = tv.dim(2);
    if (nk != static_cast<std::int64_t>(gh) * gw || f != static_cast<std::int64_t>(p) * p * c)
        throw input_error("unpatchify: shape inconsistent with (c, gh, gw, p)");
    const std::int64_t h = static_cast<std::int64_t>(gh) * p, w = static_cast<std::int64_t>(gw) * p;

    Tensor out({n, c, h, w});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t xx = 0; xx < w; ++xx) {
                    std::int64_t tok = (y / p) * gw + (xx / p);
                    std::int64_t feat = (ch * p + y % p) * p + xx % p;
                    out[((i * c + ch) * h + y) * w + xx] = tv[(i * nk + tok) * f + feat];
                }
    bool need = rg(t);
    Var o = make(std::move(out), need, {});
    if (!need) return o;
    std::int32_t oid = o.id, tid = t.id;
    std::int64_t pp = p, cc = c;
    node(o).backward_fn = [oid, tid, n, cc, h, w, gw, nk, f, pp](Graph& g) {
        const Tensor& dout = g.nodes_[static_cast<std::size_t>(oid)].grad;
        Tensor& dt = g.ensure_grad(tid);
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t ch = 0; ch < cc; ++ch)
                for (std::int64_t y = 0; y < h; ++y)
                    for (std::int64_t xx = 0; xx < w; ++xx) {
                        std::int64_t tok = (y / pp) * gw + (xx / pp);
                        std::int64_t feat = (ch * pp + y % pp) * pp + xx % pp;
                        dt[(i * nk + tok) * f + feat] += dout[((i * cc + ch) * h + y) * w + xx];
                    }
    };
    return o;
}

// -------------------------------------------------------------------- warping

Var Graph::warp(Var img, Var mesh) {
    const Tensor& iv = value(img);
    const Tensor& mv = value(mesh);
    if (iv.rank() != 4 || iv.dim(1) != 1) throw input_error("warp: img must be [N,1,H,W]");
    if (mv.rank() != 4 || mv.dim(1) != 2) throw input_error("warp: mesh must be [N,2,H,W]");
    if (iv.dim(0) != mv.dim(0) || iv.dim(2) != mv.dim(2) || iv.dim(3) != mv.dim(3))
        throw input_error("warp: img/mesh shape mismatch");

    const std::int64_t n = iv.dim(0), h = iv.dim(2), w = iv.dim(3), hw = h * w;
    Tensor out({n, 1, h, w});
    parallel_blocks(n, [&](int, std::int64_t lo, std::int64_t hi) {
        for (std::int64_t i = lo; i < hi; ++i) {
            const double* ip = iv.data.data() + i * hw;
            const double* my = mv.data.data() + i * 2 * hw;
            const double* mx = my + hw;
            double* op = out.data.data() + i * hw;
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t x = 0; x < w; ++x) {
                    double sy = static_cast<double>(y) + my[y * w + x];
                    double sx = static_cast<double>(x) + mx[y * w + x];
                    std::int64_t y0 = static_cast<std::int64_t>(std::floor(sy));
                    std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
                    if (y0 + 1 < 0 || y0 > h - 1 || x0 + 1 < 0 || x0 > w - 1) {
                        op[y * w + x] = 0.0;
                        continue;
                    }
                    double fy = sy - static_cast<double>(y0);
                    double fx = sx - static_cast<double>(x0);
                    auto px = [&](std::int64_t yy, std::int64_t xx) -> double {
                        return (yy < 0 || yy >= h || xx < 0 || xx >= w) ? 0.0 : ip[yy * w + xx];
                    };
                    double top = (1.0 - fx) * px(y0, x0) + fx * px(y0, x0 + 1);
                    double bot = (1.0 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1);
                    op[y * w + x] = (1.0 - fy) * top + fy * bot;
                }
        }
    });

    bool need = rg(img) || rg(mesh);
    Var o = make(std::move(out), need, {});
    if (!need) return o;
    std::int32_t oid = o.id, iid = img.id, mid = mesh.id;
    node(o).backward_fn = [oid, iid, mid, n, h, w, hw](Graph& g) {
        const Tensor& dout = g.nodes_[static_cast<std::size_t>(oid)].grad;
        const Tensor& iv = g.nodes_[static_cast<std::size_t>(iid)].value;
        const Tensor& mv = g.nodes_[static_cast<std::size_t>(mid)].value;
        const bool ni = g.nodes_[static_cast<std::size_t>(iid)].requires_grad;
        const bool nm = g.nodes_[static_cast<std::size_t>(mid)].requires_grad;
        Tensor* di = ni ? &g.ensure_grad(iid) : nullptr;
        Tensor* dm = nm ? &g.ensure_grad(mid) : nullptr;
        parallel_blocks(n, [&](int, std::int64_t lo, std::int64_t hi) {
            for (std::int64_t i = lo; i < hi; ++i) {
                const double* ip = iv.data.data() + i * hw;
                const double* my = mv.data.data() + i * 2 * hw;
                const double* mx = my + hw;
                const double* dop = dout.data.data() + i * hw;
                double* dmy = dm ? dm->data.data() + i * 2 * hw : nullptr;
                double* dmx = dmy ? dmy + hw : nullptr;
                double* dip = di ? di->data.data() + i * hw : nullptr;
                for (std::int64_t y = 0; y < h; ++y)
                    for (std::int64_t x = 0; x < w; ++x) {
                        double go = dop[y * w + x];
                        if (go == 0.0) continue;
                        double sy = static_cast<double>(y) + my[y * w + x];
                        double sx = static_cast<double>(x) + mx[y * w + x];
                        std::int64_t y0 = static_cast<std::int64_t>(std::floor(sy));
                        std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
                        if (y0 + 1 < 0 || y0 > h - 1 || x0 + 1 < 0 || x0 > w - 1) continue;
                        double fy = sy - static_cast<double>(y0);
                        double fx = sx - static_cast<double>(x0);
                        auto inb = [&](std::int64_t yy, std::int64_t xx) {
                            return yy >= 0 && yy < h && xx >= 0 && xx < w;
                        };
                        auto px = [&](std::int64_t yy, std::int64_t xx) -> double {
                            return inb(yy, xx) ? ip[yy * w + xx] : 0.0;
                        };
                        double p00 = px(y0, x0), p01 = px(y0, x0 + 1);
                        double p10 = px(y0 + 1, x0), p11 = px(y0 + 1, x0 + 1);
                        if (dmy) {
                            double dv_dy = ((1.0 - fx) * p10 + fx * p11) - ((1.0 - fx) * p00 + fx * p01);
                            double dv_dx = (1.0 - fy) * (p01 - p00) + fy * (p11 - p10);
                            dmy[y * w + x] += go * dv_dy;
                            dmx[y * w + x] += go * dv_dx;
                        }
                        if (dip) {
                            if (inb(y0, x0)) dip[y0 * w + x0] += go * (1.0 - fy) * (1.0 - fx);
                            if (inb(y0, x0 + 1)) dip[y0 * w + x0 + 1] += go * (1.0 - fy) * fx;
                            if (inb(y0 + 1, x0)) dip[(y0 + 1) * w + x0] += go * fy * (1.0 - fx);
                            if (inb(y0 + 1, x0 + 1)) dip[(y0 + 1) * w + x0 + 1] += go * fy * fx;
                        }
                    }
            }
        });
    };
    return o;
}

Var Graph::mesh_sample(Var mesh, const std::vector<Vec2>& points) {
    const Tensor& mv = value(mesh);
    if (mv.rank() != 3 || mv.dim(0) != 2) throw input_error("mesh_sample: mesh must be [2,H,W]");
    const int h = static_cast<int>(mv.dim(1)), w = static_cast<int>(mv.dim(2));
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    const std::int64_t k = static_cast<std::int64_t>(points.size());
    if (k == 0) throw input_error("mesh_sample: no points");

    auto cells = std::make_shared<std::vector<ClampedCell>>();
    cells->reserve(points.size());
    Tensor out({k, 2});
    for (std::int64_t i = 0; i < k; ++i) {
        ClampedCell c = clamped_cell(points[static_cast<std::size_t>(i)].y,
                                     points[static_cast<std::size_t>(i)].x, h, w);
        cells->push_back(c);
        double w00 = (1.0 - c.fy) * (1.0 - c.fx), w01 = (1.0 - c.fy) * c.fx;
        double w10 = c.fy * (1.0 - c.fx), w11 = c.fy * c.fx;
        for (int ch = 0; ch < 2; ++ch) {
            const double* plane = mv.data.data() + ch * hw;
            out[i * 2 + ch] = w00 * plane[c.y0 * w + c.x0] + w01 * plane[c.y0 * w + c.x1] +
                              w10 * plane[c.y1 * w + c.x0] + w11 * plane[c.y1 * w + c.x1];
        }
    }
    bool need = rg(mesh);
    Var o = make(std::move(out), need, {});
    if (!need) return o;
    std::int32_t oid = o.id, mid = mesh.id;
    node(o).backward_fn = [oid, mid, cells, hw, w, k](Graph& g) {
        const Tensor& dout = g.nodes_[static_cast<std::size_t>(oid)].grad;
        Tensor& dm = g.ensure_grad(mid);
        for (std::int64_t i = 0; i < k; ++i) {
            const ClampedCell& c = (*cells)[static_cast<std::size_t>(i)];
            double w00 = (1.0 - c.fy) * (1.0 - c.fx), w01 = (1.0 - c.fy) * c.fx;
            double w10 = c.fy * (1.0 - c.fx), w11 = c.fy * c.fx;
            for (int ch = 0; ch < 2; ++ch) {
                double go = dout[i * 2 + ch];
                double* plane = dm.data.data() + ch * hw;
                plane[c.y0 * w + c.x0] += go * w00;
                plane[c.y0 * w + c.x1] += go * w01;
                plane[c.y1 * w + c.x0] += go * w10;
                plane[c.y1 * w + c.x1] += go * w11;
            }
        }
    };
    return o;
}

}  // namespace chrs::ad
