#pragma once

#include <functional>
#include <vector>

#include "sdkd/spectral.hpp"
#include "sdkd/tensor.hpp"

namespace sdkd::nn {

// Reverse-mode tape over whole tensors. A graph is built per step: leaves are
// inputs (no gradient) or parameters (gradient tracked), interior nodes carry
// a backward closure that scatters the node's gradient into its parents.
//
// The op set is fixed: dense, conv2d (stride 1/2), transposed conv2d, layer
// norm, softmax attention, GELU, add, reshape/transpose, mean-style
// reductions, and the spectral band filters used by the distillation losses.

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

class Graph {
public:
    Var input(Tensor value);  // constant leaf
    Var param(Tensor value);  // gradient-tracked leaf

    const Tensor& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
    bool requires_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].requires_grad; }

    // Gradient of the last backward() root w.r.t. v (zeros if untouched).
    const Tensor& grad(Var v);

    // Clears all gradients, seeds d(root)/d(root) = 1 and propagates. root
    // must be scalar.
    void backward(Var root);

    size_t size() const { return nodes_.size(); }

    // --- internals used by op implementations -----------------------------
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::function<void(Graph&)> backprop;  // empty for leaves
    };
    Var emplace(Tensor value, bool requires_grad, std::function<void(Graph&)> backprop);
    void set_backprop(Var v, std::function<void(Graph&)> backprop);
    Tensor& grad_buffer(int id);  // allocates zeros on first touch
    const Tensor& node_grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
    const Tensor& node_value(int id) const { return nodes_[static_cast<size_t>(id)].value; }

private:
    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Ops. All shape errors throw std::invalid_argument.
// ---------------------------------------------------------------------------

Var add(Graph& g, Var a, Var b);            // same shape
Var sub(Graph& g, Var a, Var b);
Var scale(Graph& g, Var x, double s);
Var gelu(Graph& g, Var x);                  // exact erf form
Var reshape(Graph& g, Var x, std::vector<int> shape);

// y = x W^T (+ b); x: [..., in], W: [out, in], b: [out]
Var dense(Graph& g, Var x, Var w, Var b);
Var dense(Graph& g, Var x, Var w);

// x: [B, Cin, H, W], w: [Cout, Cin, K, K], b: [Cout]
Var conv2d(Graph& g, Var x, Var w, Var b, int stride, int pad);

// x: [B, Cin, H, W], w: [Cin, Cout, K, K], b: [Cout]; out spatial (H-1)*s + K - 2p
Var conv2d_transpose(Graph& g, Var x, Var w, Var b, int stride, int pad);

// normalizes over the trailing axis; gamma/beta: [D]
Var layer_norm(Graph& g, Var x, Var gamma, Var beta, double eps = 1e-5);

// [B, C, H, W] <-> [B, H*W, C]
Var to_tokens(Graph& g, Var x);
Var from_tokens(Graph& g, Var x, int h, int w);
Var transpose_last2(Graph& g, Var x);  // [B, N, D] -> [B, D, N]

// fused multi-head softmax attention; q, k, v: [B, N, D], D % heads == 0,
// per-head scale 1/sqrt(D/heads)
Var attention(Graph& g, Var q, Var k, Var v, int heads);

// spectral band projections (linear, self-adjoint)
Var band_low(Graph& g, Var x, const spectral::SpectralConfig& cfg);
Var band_high(Graph& g, Var x, const spectral::SpectralConfig& cfg);

// reductions to scalars (shape [1])
Var mean_sq(Graph& g, Var x);        // sum(x^2) / numel
Var ssq_per_slice(Graph& g, Var x);  // sum(x^2) / (numel / (H*W))

// activation-boundary hinge vs a fixed teacher tensor; mean per-element
// penalty: (s - m)^2 where t > 0 and s < m, (s + m)^2 where t <= 0 and s > -m
Var ab_hinge(Graph& g, Var s, const Tensor& t, double margin);

// non-tape softmax over rows of an [R, C] matrix (used inside attention)
void softmax_rows(const double* in, double* out, int rows, int cols);

}  // namespace sdkd::nn
