#ifndef CHRS_AUTODIFF_HPP
#define CHRS_AUTODIFF_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "chrs/geometry.hpp"
#include "chrs/tensor.hpp"

namespace chrs::ad {

class Graph;

// Handle to a node in a Graph; cheap to copy.
struct Var {
    Graph* graph = nullptr;
    std::int32_t id = -1;
    bool valid() const { return graph != nullptr && id >= 0; }
};

// Define-by-run reverse-mode tape over dense double tensors. Nodes are
// created by the op methods; backward() walks them in reverse creation
// order, so a Graph instance is single-threaded by construction.
class Graph {
public:
    Var constant(Tensor v);
    Var param(Tensor v);  // leaf that accumulates a gradient

    const Tensor& value(Var v) const;
    const Tensor& grad(Var v) const;  // valid after backward(); zeros if untouched

    // elementwise; shapes must match, or one side may be a scalar
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    // b's shape must be a trailing suffix of a's shape
    Var add_broadcast(Var a, Var b);

    Var scale(Var a, double s);
    Var add_const(Var a, double c);
    Var neg(Var a) { return scale(a, -1.0); }

    Var abs(Var a);
    Var sqrt(Var a);
    Var tanh(Var a);
    Var gelu(Var a);

    Var sum(Var a);   // -> scalar
    Var mean(Var a);  // -> scalar

    Var reshape(Var a, std::vector<std::int64_t> shape);
    Var permute(Var a, std::vector<int> axes);
    Var slice_front(Var a, std::int64_t lo, std::int64_t hi);  // first-dim range
    Var select_front(Var a, std::int64_t i);                   // drop first dim
    Var element(Var a, std::int64_t flat_index);               // -> scalar
    Var concat_front(Var a, Var b);

    Var matmul(Var a, Var b);                      // [M,K]x[K,N]
    Var bmm(Var a, Var b);                         // [B,M,K]x[B,K,N]
    Var linear(Var x, Var w, Var b);               // [...,K]x[K,N]+[N]; b may be invalid
    Var layernorm(Var x, Var gamma, Var beta, double eps = 1e-5);  // over last dim
    Var softmax_lastdim(Var x);

    Var conv2d(Var x, Var w, Var b, int stride, int pad);  // x [N,C,H,W], w [Co,C,kh,kw]
    Var upsample2(Var x);                                  // nearest, x2
    Var concat_channels(Var a, Var b);                     // along dim 1 of [N,C,H,W]
    Var patchify(Var x, int p);    // [N,C,H,W] -> [N, (H/p)*(W/p), p*p*C]
    Var unpatchify(Var t, int c, int gh, int gw, int p);  // inverse of patchify

    // out(q) = bilinear(img, q + mesh(q)), zero outside; img [N,1,H,W],
    // mesh [N,2,H,W] with channel 0 = dy, channel 1 = dx.
    Var warp(Var img, Var mesh);

    // Border-clamped bilinear read of a [2,H,W] mesh at fixed points -> [k,2].
    Var mesh_sample(Var mesh, const std::vector<Vec2>& points);

    // Accumulates d(loss)/d(node) for every node reachable from loss.
    void backward(Var loss);

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool grad_ready = false;
        std::function<void(Graph&)> backward_fn;
    };

    std::vector<Node> nodes_;

    Var make(Tensor value, bool requires_grad, std::function<void(Graph&)> backward_fn);
    Node& node(Var v);
    const Node& node(Var v) const;
    Tensor& ensure_grad(std::int32_t id);
    bool rg(Var v) const { return node(v).requires_grad; }
    Var bin_op(Var a, Var b, int kind_tag);
    Var unary_op(Var a, int kind_tag, double s, double c);

    friend struct GraphTestAccess;
};

}  // namespace chrs::ad

#endif
