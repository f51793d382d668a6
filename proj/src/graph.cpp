#include "sdkd/graph.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace sdkd::nn {

// ===========================================================================
// Tape
// ===========================================================================

Var Graph::emplace(Tensor value, bool requires_grad, std::function<void(Graph&)> backprop) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Graph::set_backprop(Var v, std::function<void(Graph&)> backprop) {
    nodes_[static_cast<size_t>(v.id)].backprop = std::move(backprop);
}

Var Graph::input(Tensor value) { return emplace(std::move(value), false, nullptr); }
Var Graph::param(Tensor value) { return emplace(std::move(value), true, nullptr); }

Tensor& Graph::grad_buffer(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor::zeros_like(n.value);
    return n.grad;
}

const Tensor& Graph::grad(Var v) { return grad_buffer(v.id); }

void Graph::backward(Var root) {
    Node& r = nodes_[static_cast<size_t>(root.id)];
    if (r.value.numel() != 1)
        throw std::invalid_argument("backward: root must be scalar, got " + r.value.shape_str());
    for (Node& n : nodes_) n.grad = Tensor();
    grad_buffer(root.id)[0] = 1.0;
    // tape order is topological; walk it backwards
    for (int id = root.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.grad.empty() && n.backprop && n.requires_grad) n.backprop(*this);
    }
}

// ===========================================================================
// Small shared kernels
// ===========================================================================

namespace {

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
    throw std::invalid_argument(op + ": " + detail);
}

void check(bool ok, const char* op, const std::string& detail) {
    if (!ok) shape_error(op, detail);
}

// C[m,n] += A[m,k] * B[k,n]
void mm_nn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<int64_t>(i) * k;
        double* ci = c + static_cast<int64_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T  (dot products of contiguous rows)
void mm_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<int64_t>(i) * k;
        double* ci = c + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* bj = b + static_cast<int64_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

// C[m,n] += A[k,m]^T * B[k,n]
void mm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        const double* ap = a + static_cast<int64_t>(p) * m;
        const double* bp = b + static_cast<int64_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const double av = ap[i];
            if (av == 0.0) continue;
            double* ci = c + static_cast<int64_t>(i) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

int64_t rows_of(const Tensor& t) { return t.numel() / t.dim(t.ndim() - 1); }

// valid output range [lo, hi) for one kernel tap: indices where
// o*stride + tap - pad lands inside [0, extent)
void tap_range(int tap, int pad, int stride, int in_extent, int out_extent, int& lo, int& hi) {
    lo = 0;
    while (lo < out_extent && lo * stride + tap - pad < 0) ++lo;
    hi = out_extent;
    while (hi > lo && (hi - 1) * stride + tap - pad >= in_extent) --hi;
}

}  // namespace

void softmax_rows(const double* in, double* out, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const double* x = in + static_cast<int64_t>(r) * cols;
        double* y = out + static_cast<int64_t>(r) * cols;
        double mx = x[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
        double z = 0.0;
        for (int c = 0; c < cols; ++c) {
            y[c] = std::exp(x[c] - mx);
            z += y[c];
        }
        const double inv = 1.0 / z;
        for (int c = 0; c < cols; ++c) y[c] *= inv;
    }
}

// ===========================================================================
// Elementwise / structural ops
// ===========================================================================

Var add(Graph& g, Var a, Var b) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    check(av.same_shape(bv), "add", "shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    Tensor out = av;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    const bool rg = g.requires_grad(a) || g.requires_grad(b);
    Var y = g.emplace(std::move(out), rg, nullptr);
    if (rg) {
        g.set_backprop(y, [y, a, b](Graph& gr) {
            const Tensor& dy = gr.node_grad(y.id);
            for (Var p : {a, b}) {
                if (!gr.requires_grad(p)) continue;
                Tensor& dp = gr.grad_buffer(p.id);
                for (int64_t i = 0; i < dy.numel(); ++i) dp[i] += dy[i];
            }
        });
    }
    return y;
}

Var sub(Graph& g, Var a, Var b) { return add(g, a, scale(g, b, -1.0)); }

Var scale(Graph& g, Var x, double s) {
    Tensor out = g.value(x);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
    const bool rg = g.requires_grad(x);
    Var y = g.emplace(std::move(out), rg, nullptr);
    if (rg) {
        g.set_backprop(y, [y, x, s](Graph& gr) {
            const Tensor& dy = gr.node_grad(y.id);
            Tensor& dx = gr.grad_buffer(x.id);
            for (int64_t i = 0; i < dy.numel(); ++i) dx[i] += s * dy[i];
        });
    }
    return y;
}

Var gelu(Graph& g, Var x) {
    static constexpr double kInvSqrt2 = 0.70710678118654752440;
    static constexpr double kNormPdf = 0.39894228040143267794;  // 1/sqrt(2*pi)
    const Tensor& xv = g.value(x);
    Tensor out = xv;
    for (int64_t i = 0; i < out.numel(); ++i) {
        const double v = xv[i];
        out[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    }
    const bool rg = g.requires_grad(x);
    Var y = g.emplace(std::move(out), rg, nullptr);
    if (rg) {
        g.set_backprop(y, [y, x](Graph& gr) {
            const Tensor& dy = gr.node_grad(y.id);
            const Tensor& xv2 = gr.node_value(x.id);
            Tensor& dx = gr.grad_buffer(x.id);
            for (int64_t i = 0; i < dy.numel(); ++i) {
                const double v = xv2[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                const double pdf = kNormPdf * std::exp(-0.5 * v * v);
                dx[i] += dy[i] * (cdf + v * pdf);
            }
        });
    }
    return y;
}

Var reshape(Graph& g, Var x, std::vector<int> shape) {
    Tensor out = g.value(x).reshaped(shape);
    const bool rg = g.requires_grad(x);
    Var y = g.emplace(std::move(out), rg, nullptr);
    if (rg) {
        g.set_backprop(y, [y, x](Graph& gr) {
            const Tensor& dy = gr.node_grad(y.id);
            Tensor& dx = gr.grad_buffer(x.id);
            for (int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
        });
    }
    return y;
}

// ===========================================================================
// Dense
// ===========================================================================

static Var dense_impl(Graph& g, Var x, Var w, Var b, bool has_bias) {
    const Tensor& xv = g.value(x);
    const Tensor& wv = g.value(w);
    check(xv.ndim() >= 1 && wv.ndim() == 2, "dense", "expected x [..., in], w [out, in]");
    const int in = xv.dim(xv.ndim() - 1);
    const int out_dim = wv.dim(0);
    check(wv.dim(1) == in, "dense",
          "weight in-dim " + std::to_string(wv.dim(1)) + " vs input " + std::to_string(in));
    const int64_t rows = rows_of(xv);

    std::vector<int> out_shape = xv.shape();
    out_shape.back() = out_dim;
    Tensor out(out_shape);
    if (has_bias) {
        const Tensor& bv = g.value(b);
        check(bv.ndim() == 1 && bv.dim(0) == out_dim, "dense", "bias shape mismatch");
        for (int64_t r = 0; r < rows; ++r)
            for (int o = 0; o < out_dim; ++o) out[r * out_dim + o] = bv[o];
    }
    mm_nt_acc(xv.data(), wv.data(), out.data(), static_cast<int>(rows), in, out_dim);

    const bool rg = g.requires_grad(x) || g.requires_grad(w) || (has_bias && g.requires_grad(b));
    Var y = g.emplace(std::move(out), rg, nullptr);
    if (rg) {
        g.set_backprop(y, [y, x, w, b, has_bias, rows, in, out_dim](Graph& gr) {
            const Tensor& dy = gr.node_grad(y.id);
            if (gr.requires_grad(x))  // dx = dy * W
                mm_nn_acc(dy.data(), gr.node_value(w.id).data(), gr.grad_buffer(x.id).data(),
                          static_cast<int>(rows), out_dim, in);
            if (gr.requires_grad(w))  // dW = dy^T * x
                mm_tn_acc(dy.data(), gr.node_value(x.id).data(), gr.grad_buffer(w.id).data(),
                          out_dim, static_cast<int>(rows), in);
            if (has_bias && gr.requires_grad(b)) {
                Tensor& db = gr.grad_buffer(b.id);
                for (int64_t r = 0; r < rows; ++r)
                    for (int o = 0; o < out_dim; ++o) db[o] += dy[r * out_dim + o];
            }
        });
    }
    return y;
}

Var dense(Graph& g, Var x, Var w, Var b) { return dense_impl(g, x, w, b, true); }
Var dense(Graph& g, Var x, Var w) { return dense_impl(g, x, w, Var{}, false); }

// ===========================================================================
// Convolutions
// ===========================================================================

Var conv2d(Graph& g, Var x, Var w, Var b, int stride, int pad) {
    const Tensor& xv = g.value(x);
    const Tensor& wv = g.value(w);
    const Tensor& bv = g.value(b);
    check(xv.ndim() == 4, "conv2d", "input must be [B, C, H, W], got " + xv.shape_str());
    check(wv.ndim() == 4, "conv2d", "kernel must be [Cout, Cin, K, K]");
    check(stride == 1 || stride == 2, "conv2d", "stride must be 1 or 2");
    const int batch = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), w_in = xv.dim(3);
    const int cout = wv.dim(0), k = wv.dim(2);
    check(wv.dim(1) == cin, "conv2d",
          "channel mismatch: input " + std::to_string(cin) + ", kernel " + std::to_string(wv.dim(1)));
    check(wv.dim(3) == k, "conv2d", "kernel must be square");
    check(bv.ndim() == 1 && bv.dim(0) == cout, "conv2d", "bias shape mismatch");
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (w_in + 2 * pad - k) / stride + 1;
    check(oh > 0 && ow > 0, "conv2d", "kernel larger than padded input");

    Tensor out({batch, cout, oh, ow});
    {
        const double* xp = xv.data();
        const double* wp = wv.data();
        double* op = out.data();
        const int64_t xc = static_cast<int64_t>(h) * w_in;
        const int64_t oc = static_cast<int64_t>(oh) * ow;
        for (int n = 0; n < batch; ++n)
            for (int co = 0; co < cout; ++co) {
                double* obase = op + (static_cast<int64_t>(n) * cout + co) * oc;
                for (int64_t i = 0; i < oc; ++i) obase[i] = bv[co];
                for (int ci = 0; ci < cin; ++ci) {
                    const double* xbase = xp + (static_cast<int64_t>(n) * cin + ci) * xc;
                    const double* wbase = wp + (static_cast<int64_t>(co) * cin + ci) * k * k;
                    for (int ky = 0; ky < k; ++ky) {
                        int oy_lo, oy_hi;
                        tap_range(ky, pad, stride, h, oh, oy_lo, oy_hi);
                        for (int kx = 0; kx < k; ++kx) {
                            const double wgt = wbase[ky * k + kx];
                            if (wgt == 0.0) continue;
                            int ox_lo, ox_hi;
                            tap_range(kx, pad, stride, w_in, ow, ox_lo, ox_hi);
                            for (int oy = oy_lo; oy < oy_hi; ++oy) {
                                const double* xrow =
                                    xbase + static_cast<int64_t>(oy * stride + ky - pad) * w_in +
                                    kx - pad;
                                double* orow = obase + static_cast<int64_t>(oy) * ow;
                                for (int ox = ox_lo; ox < ox_hi; ++ox)
                                    orow[ox] += wgt * xrow[static_cast<int64_t>(ox) * stride];
                            }
                        }
                    }
                }
            }
    }

    const bool rg = g.requires_grad(x) || g.requires_grad(w) || g.requires_grad(b);
    Var y = g.emplace(std::move(out), rg, nullptr);
    if (rg) {
        g.set_backprop(y, [=](Graph& gr) {
            const Tensor& dy = gr.node_grad(y.id);
            const Tensor& xv2 = gr.node_value(x.id);
            const Tensor& wv2 = gr.node_value(w.id);
            const bool need_dx = gr.requires_grad(x);
            const bool need_dw = gr.requires_grad(w);
            Tensor* dx = need_dx ? &gr.grad_buffer(x.id) : nullptr;
            Tensor* dw = need_dw ? &gr.grad_buffer(w.id) : nullptr;
            if (gr.requires_grad(b)) {
                Tensor& db = gr.grad_buffer(b.id);
                for (int n = 0; n < batch; ++n)
                    for (int co = 0; co < cout; ++co)
                        for (int oy = 0; oy < oh; ++oy)
                            for (int ox = 0; ox < ow; ++ox) db[co] += dy.at(n, co, oy, ox);
            }
            if (!need_dx && !need_dw) return;
            const double* xp = xv2.data();
            const double* wp = wv2.data();
            const double* dyp = dy.data();
            double* dxp = need_dx ? dx->data() : nullptr;
            double* dwp = need_dw ? dw->data() : nullptr;
            const int64_t xc = static_cast<int64_t>(h) * w_in;
            const int64_t oc = static_cast<int64_t>(oh) * ow;
            for (int n = 0; n < batch; ++n)
                for (int co = 0; co < cout; ++co) {
                    const double* dybase = dyp + (static_cast<int64_t>(n) * cout + co) * oc;
                    for (int ci = 0; ci < cin; ++ci) {
                        const int64_t xoff = (static_cast<int64_t>(n) * cin + ci) * xc;
                        const double* xbase = xp + xoff;
                        double* dxbase = need_dx ? dxp + xoff : nullptr;
                        const int64_t woff = (static_cast<int64_t>(co) * cin + ci) * k * k;
                        for (int ky = 0; ky < k; ++ky) {
                            int oy_lo, oy_hi;
                            tap_range(ky, pad, stride, h, oh, oy_lo, oy_hi);
                            for (int kx = 0; kx < k; ++kx) {
                                const double wgt = wp[woff + ky * k + kx];
                                int ox_lo, ox_hi;
                                tap_range(kx, pad, stride, w_in, ow, ox_lo, ox_hi);
                                double wacc = 0.0;
                                for (int oy = oy_lo; oy < oy_hi; ++oy) {
                                    const int64_t irow =
                                        static_cast<int64_t>(oy * stride + ky - pad) * w_in + kx -
                                        pad;
                                    const double* dyrow = dybase + static_cast<int64_t>(oy) * ow;
                                    if (need_dx) {
                                        double* dxrow = dxbase + irow;
                                        for (int ox = ox_lo; ox < ox_hi; ++ox)
                                            dxrow[static_cast<int64_t>(ox) * stride] +=
                                                wgt * dyrow[ox];
                                    }
                                    const double* xrow = xbase + irow;
                                    for (int ox = ox_lo; ox < ox_hi; ++ox)
                                        wacc += dyrow[ox] * xrow[static_cast<int64_t>(ox) * stride];
                                }
                                if (need_dw) dwp[woff + ky * k + kx] += wacc;
                            }
                        }
                    }
                }
        });
    }
    return y;
}

Var conv2d_transpose(Graph& g, Var x, Var w, Var b, int stride, int pad) {
    const Tensor& xv = g.value(x);
    const Tensor& wv = g.value(w);
    const Tensor& bv = g.value(b);
    check(xv.ndim() == 4, "conv2d_transpose", "input must be [B, C, H, W]");
    check(wv.ndim() == 4, "conv2d_transpose", "kernel must be [Cin, Cout, K, K]");
    const int batch = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), w_in = xv.dim(3);
    const int cout = wv.dim(1), k = wv.dim(2);
    check(wv.dim(0) == cin, "conv2d_transpose",
          "channel mismatch: input " + std::to_string(cin) + ", kernel " + std::to_string(wv.dim(0)));
    check(bv.ndim() == 1 && bv.dim(0) == cout, "conv2d_transpose", "bias shape mismatch");
    const int oh = (h - 1) * stride + k - 2 * pad;
    const int ow = (w_in - 1) * stride + k - 2 * pad;
    check(oh > 0 && ow > 0, "conv2d_transpose", "empty output");

    Tensor out({batch, cout, oh, ow});
    {
        const double* xp = xv.data();
        const double* wp = wv.data();
        double* op = out.data();
        const int64_t xc = static_cast<int64_t>(h) * w_in;
        const int64_t oc = static_cast<int64_t>(oh) * ow;
        for (int n = 0; n < batch; ++n)
            for (int co = 0; co < cout; ++co) {
                double* obase = op + (static_cast<int64_t>(n) * cout + co) * oc;
                for (int64_t i = 0; i < oc; ++i) obase[i] = bv[co];
                for (int ci = 0; ci < cin; ++ci) {
                    const double* xbase = xp + (static_cast<int64_t>(n) * cin + ci) * xc;
                    const double* wbase = wp + (static_cast<int64_t>(ci) * cout + co) * k * k;
                    for (int ky = 0; ky < k; ++ky) {
                        int iy_lo, iy_hi;
                        tap_range(ky, pad, stride, oh, h, iy_lo, iy_hi);
                        for (int kx = 0; kx < k; ++kx) {
                            const double wgt = wbase[ky * k + kx];
                            if (wgt == 0.0) continue;
                            int ix_lo, ix_hi;
                            tap_range(kx, pad, stride, ow, w_in, ix_lo, ix_hi);
                            for (int iy = iy_lo; iy < iy_hi; ++iy) {
                                const double* xrow = xbase + static_cast<int64_t>(iy) * w_in;
                                double* orow =
                                    obase + static_cast<int64_t>(iy * stride + ky - pad) * ow +
                                    kx - pad;
                                for (int ix = ix_lo; ix < ix_hi; ++ix)
                                    orow[static_cast<int64_t>(ix) * stride] += wgt * xrow[ix];
                            }
                        }
                    }
                }
            }
    }

    const bool rg = g.requires_grad(x) || g.requires_grad(w) || g.requires_grad(b);
    Var y = g.emplace(std::move(out), rg, nullptr);
    if (rg) {
        g.set_backprop(y, [=](Graph& gr) {
            const Tensor& dy = gr.node_grad(y.id);
            const Tensor& xv2 = gr.node_value(x.id);
            const Tensor& wv2 = gr.node_value(w.id);
            const bool need_dx = gr.requires_grad(x);
            const bool need_dw = gr.requires_grad(w);
            Tensor* dx = need_dx ? &gr.grad_buffer(x.id) : nullptr;
            Tensor* dw = need_dw ? &gr.grad_buffer(w.id) : nullptr;
            if (gr.requires_grad(b)) {
                Tensor& db = gr.grad_buffer(b.id);
                for (int n = 0; n < batch; ++n)
                    for (int co = 0; co < cout; ++co)
                        for (int oy = 0; oy < oh; ++oy)
                            for (int ox = 0; ox < ow; ++ox) db[co] += dy.at(n, co, oy, ox);
            }
            if (!need_dx && !need_dw) return;
            const double* xp = xv2.data();
            const double* wp = wv2.data();
            const double* dyp = dy.data();
            double* dxp = need_dx ? dx->data() : nullptr;
            double* dwp = need_dw ? dw->data() : nullptr;
            const int64_t xc = static_cast<int64_t>(h) * w_in;
            const int64_t oc = static_cast<int64_t>(oh) * ow;
            for (int n = 0; n < batch; ++n)
                for (int ci = 0; ci < cin; ++ci) {
                    const int64_t xoff = (static_cast<int64_t>(n) * cin + ci) * xc;
                    const double* xbase = xp + xoff;
                    double* dxbase = need_dx ? dxp + xoff : nullptr;
                    for (int co = 0; co < cout; ++co) {
                        const double* dybase = dyp + (static_cast<int64_t>(n) * cout + co) * oc;
                        const int64_t woff = (static_cast<int64_t>(ci) * cout + co) * k * k;
                        for (int ky = 0; ky < k; ++ky) {
                            int iy_lo, iy_hi;
                            tap_range(ky, pad, stride, oh, h, iy_lo, iy_hi);
                            for (int kx = 0; kx < k; ++kx) {
                                const double wgt = wp[woff + ky * k + kx];
                                int ix_lo, ix_hi;
                                tap_range(kx, pad, stride, ow, w_in, ix_lo, ix_hi);
                                double wacc = 0.0;
                                for (int iy = iy_lo; iy < iy_hi; ++iy) {
                                    const double* dyrow =
                                        dybase + static_cast<int64_t>(iy * stride + ky - pad) * ow +
                                        kx - pad;
                                    const double* xrow = xbase + static_cast<int64_t>(iy) * w_in;
                                    double* dxrow = need_dx ? dxbase + static_cast<int64_t>(iy) * w_in
                                                            : nullptr;
                                    for (int ix = ix_lo; ix < ix_hi; ++ix) {
                                        const double gv = dyrow[static_cast<int64_t>(ix) * stride];
                                        if (need_dx) dxrow[ix] += wgt * gv;
                                        wacc += gv * xrow[ix];
                                    }
                                }
                                if (need_dw) dwp[woff + ky * k + kx] += wacc;
                            }
                        }
                    }
                }
        });
    }
    return y;
}

// ===========================================================================
// Layer norm (trailing axis)
// ===========================================================================

Var layer_norm(Graph& g, Var x, Var gamma, Var beta, double eps) {
    const Tensor& xv = g.value(x);
    const Tensor& gv = g.value(gamma);
    const Tensor& bv = g.value(beta);
    const int d = xv.dim(xv.ndim() - 1);
    check(gv.ndim() == 1 && gv.dim(0) == d && bv.ndim() == 1 && bv.dim(0) == d, "layer_norm",
          "gamma/beta must be [D] with D = trailing axis");
    const int64_t rows = rows_of(xv);

    Tensor out = Tensor::zeros_like(xv);
    Tensor xhat = Tensor::zeros_like(xv);      // saved for backward
    std::vector<double> inv_std(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const double* xp = xv.data() + r * d;
        double mu = 0.0;
        for (int i = 0; i < d; ++i) mu += xp[i];
        mu /= d;
        double var = 0.0;
        for (int i = 0; i < d; ++i) var += (xp[i] - mu) * (xp[i] - mu);
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(r)] = is;
        for (int i = 0; i < d; ++i) {
            const double xh = (xp[i] - mu) * is;
            xhat[r * d + i] = xh;
            out[r * d + i] = gv[i] * xh + bv[i];
        }
    }

    const bool rg = g.requires_grad(x) || g.requires_grad(gamma) || g.requires_grad(beta);
    Var y = g.emplace(std::move(out), rg, nullptr);
    if (rg) {
        auto xhat_s = std::make_shared<Tensor>(std::move(xhat));
        auto istd_s = std::make_shared<std::vector<double>>(std::move(inv_std));
        g.set_backprop(y, [y, x, gamma, beta, d, rows, xhat_s, istd_s](Graph& gr) {
            const Tensor& dy = gr.node_grad(y.id);
            const Tensor& gv2 = gr.node_value(gamma.id);
            if (gr.requires_grad(gamma)) {
                Tensor& dg = gr.grad_buffer(gamma.id);
                for (int64_t r = 0; r < rows; ++r)
                    for (int i = 0; i < d; ++i) dg[i] += dy[r * d + i] * (*xhat_s)[r * d + i];
            }
            if (gr.requires_grad(beta)) {
                Tensor& db = gr.grad_buffer(beta.id);
                for (int64_t r = 0; r < rows; ++r)
                    for (int i = 0; i < d; ++i) db[i] += dy[r * d + i];
            }
            if (gr.requires_grad(x)) {
                Tensor& dx = gr.grad_buffer(x.id);
                for (int64_t r = 0; r < rows; ++r) {
                    const double is = (*istd_s)[static_cast<size_t>(r)];
                    double m1 = 0.0, m2 = 0.0;  // mean(g*dy), mean(g*dy*xhat)
                    for (int i = 0; i < d; ++i) {
                        const double gd = gv2[i] * dy[r * d + i];
                        m1 += gd;
                        m2 += gd * (*xhat_s)[r * d + i];
                    }
                    m1 /= d;
                    m2 /= d;
                    for (int i = 0; i < d; ++i) {
                        const double gd = gv2[i] * dy[r * d + i];
                        dx[r * d + i] += is * (gd - m1 - (*xhat_s)[r * d + i] * m2);
                    }
                }
            }
        });
    }
    return y;
}

// ===========================================================================
// Layout permutes
// ===========================================================================

Var to_tokens(Graph& g, Var x) {
    const Tensor& xv = g.value(x);
    check(xv.ndim() == 4, "to_tokens", "expected [B, C, H, W]");
    const int batch = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const int n = h * w;
    Tensor out({batch, n, c});
    for (int bb = 0; bb < batch; ++bb)
        for (int cc = 0; cc < c; ++cc)
            for (int p = 0; p < n; ++p)
                out.at(bb, p, cc) = xv[((static_cast<int64_t>(bb) * c + cc) * n) + p];
    const bool rg = g.requires_grad(x);
    Var y = g.emplace(std::move(out), rg, nullptr);
    if (rg) {
        g.set_backprop(y, [y, x, batch, c, n](Graph& gr) {
            const Tensor& dy = gr.node_grad(y.id);
            Tensor& dx = gr.grad_buffer(x.id);
            for (int bb = 0; bb < batch; ++bb)
                for (int cc = 0; cc < c; ++cc)
                    for (int p = 0; p < n; ++p)
                        dx[((static_cast<int64_t>(bb) * c + cc) * n) + p] += dy.at(bb, p, cc);
        });
    }
    return y;
}

Var from_tokens(Graph& g, Var x, int h, int w) {
    const Tensor& xv = g.value(x);
    check(xv.ndim() == 3, "from_tokens", "expected [B, N, C]");
    const int batch = xv.dim(0), n = xv.dim(1), c = xv.dim(2);
    check(n == h * w, "from_tokens", "token count != h*w");
    Tensor out({batch, c, h, w});
    for (int bb = 0; bb < batch; ++bb)
        for (int p = 0; p < n; ++p)
            for (int cc = 0; cc < c; ++cc)
                out[((static_cast<int64_t>(bb) * c + cc) * n) + p] = xv.at(bb, p, cc);
    const bool rg = g.requires_grad(x);
    Var y = g.emplace(std::move(out), rg, nullptr);
    if (rg) {
        g.set_backprop(y, [y, x, batch, c, n](Graph& gr) {
            const Tensor& dy = gr.node_grad(y.id);
            Tensor& dx = gr.grad_buffer(x.id);
            for (int bb = 0; bb < batch; ++bb)
                for (int p = 0; p < n; ++p)
                    for (int cc = 0; cc < c; ++cc)
                        dx.at(bb, p, cc) += dy[((static_cast<int64_t>(bb) * c + cc) * n) + p];
        });
    }
    return y;
}

Var transpose_last2(Graph& g, Var x) {
    const Tensor& xv = g.value(x);
    check(xv.ndim() == 3, "transpose_last2", "expected [B, N, D]");
    const int batch = xv.dim(0), n = xv.dim(1), d = xv.dim(2);
    Tensor out({batch, d, n});
    for (int bb = 0; bb < batch; ++bb)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) out.at(bb, j, i) = xv.at(bb, i, j);
    const bool rg = g.requires_grad(x);
    Var y = g.emplace(std::move(out), rg, nullptr);
    if (rg) {
        g.set_backprop(y, [y, x, batch, n, d](Graph& gr) {
            const Tensor& dy = gr.node_grad(y.id);
            Tensor& dx = gr.grad_buffer(x.id);
            for (int bb = 0; bb < batch; ++bb)
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j) dx.at(bb, i, j) += dy.at(bb, j, i);
        });
    }
    return y;
}

// ===========================================================================
// Attention
// ===========================================================================

Var attention(Graph& g, Var q, Var k, Var v, int heads) {
    const Tensor& qv = g.value(q);
    const Tensor& kv = g.value(k);
    const Tensor& vv = g.value(v);
    check(qv.ndim() == 3, "attention", "expected q, k, v of shape [B, N, D]");
    check(qv.same_shape(kv) && qv.same_shape(vv), "attention", "q/k/v shape mismatch");
    const int batch = qv.dim(0), n = qv.dim(1), d = qv.dim(2);
    check(heads >= 1 && d % heads == 0, "attention", "D must be divisible by heads");
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // per (batch, head) attention matrices saved for backward
    auto attn = std::make_shared<std::vector<double>>(
        static_cast<size_t>(batch) * heads * n * n);
    Tensor out({batch, n, d});
    std::vector<double> qh(static_cast<size_t>(n) * dh), kh(qh.size()), vh(qh.size()),
        oh(qh.size()), s(static_cast<size_t>(n) * n);

    auto gather = [&](const Tensor& src, int bb, int head, std::vector<double>& dst) {
        const int off = head * dh;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < dh; ++j) dst[static_cast<size_t>(i) * dh + j] = src.at(bb, i, off + j);
    };

    for (int bb = 0; bb < batch; ++bb)
        for (int head = 0; head < heads; ++head) {
            gather(qv, bb, head, qh);
            gather(kv, bb, head, kh);
            gather(vv, bb, head, vh);
            std::fill(s.begin(), s.end(), 0.0);
            mm_nt_acc(qh.data(), kh.data(), s.data(), n, dh, n);
            for (double& e : s) e *= scale;
            double* a = attn->data() + (static_cast<size_t>(bb) * heads + head) * n * n;
            softmax_rows(s.data(), a, n, n);
            std::fill(oh.begin(), oh.end(), 0.0);
            mm_nn_acc(a, vh.data(), oh.data(), n, n, dh);
            const int off = head * dh;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < dh; ++j) out.at(bb, i, off + j) = oh[static_cast<size_t>(i) * dh + j];
        }

    const bool rg = g.requires_grad(q) || g.requires_grad(k) || g.requires_grad(v);
    Var y = g.emplace(std::move(out), rg, nullptr);
    if (rg) {
        g.set_backprop(y, [y, q, k, v, batch, n, d, heads, dh, scale, attn](Graph& gr) {
            const Tensor& dy = gr.node_grad(y.id);
            const Tensor& qv2 = gr.node_value(q.id);
            const Tensor& kv2 = gr.node_value(k.id);
            const Tensor& vv2 = gr.node_value(v.id);
            Tensor& dq = gr.grad_buffer(q.id);
            Tensor& dk = gr.grad_buffer(k.id);
            Tensor& dv = gr.grad_buffer(v.id);
            std::vector<double> qh(static_cast<size_t>(n) * dh), kh(qh.size()), vh(qh.size()),
                doh(qh.size()), da(static_cast<size_t>(n) * n), ds(da.size()), buf(qh.size());
            auto gather = [&](const Tensor& src, int bb, int head, std::vector<double>& dst) {
                const int off = head * dh;
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < dh; ++j)
                        dst[static_cast<size_t>(i) * dh + j] = src.at(bb, i, off + j);
            };
            auto scatter_add = [&](Tensor& dst, int bb, int head, const std::vector<double>& src) {
                const int off = head * dh;
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < dh; ++j)
                        dst.at(bb, i, off + j) += src[static_cast<size_t>(i) * dh + j];
            };
            for (int bb = 0; bb < batch; ++bb)
                for (int head = 0; head < heads; ++head) {
                    gather(qv2, bb, head, qh);
                    gather(kv2, bb, head, kh);
                    gather(vv2, bb, head, vh);
                    gather(dy, bb, head, doh);
                    const double* a = attn->data() + (static_cast<size_t>(bb) * heads + head) * n * n;
                    // dA = dO V^T
                    std::fill(da.begin(), da.end(), 0.0);
                    mm_nt_acc(doh.data(), vh.data(), da.data(), n, dh, n);
                    // dV = A^T dO
                    std::fill(buf.begin(), buf.end(), 0.0);
                    mm_tn_acc(a, doh.data(), buf.data(), n, n, dh);
                    scatter_add(dv, bb, head, buf);
                    // softmax backward rows: dS_i = A_i o (dA_i - <dA_i, A_i>)
                    for (int i = 0; i < n; ++i) {
                        const double* ai = a + static_cast<size_t>(i) * n;
                        double dot = 0.0;
                        for (int j = 0; j < n; ++j) dot += da[static_cast<size_t>(i) * n + j] * ai[j];
                        for (int j = 0; j < n; ++j)
                            ds[static_cast<size_t>(i) * n + j] =
                                ai[j] * (da[static_cast<size_t>(i) * n + j] - dot);
                    }
                    // dQ = dS K * scale ; dK = dS^T Q * scale
                    std::fill(buf.begin(), buf.end(), 0.0);
                    mm_nn_acc(ds.data(), kh.data(), buf.data(), n, n, dh);
                    for (double& e : buf) e *= scale;
                    scatter_add(dq, bb, head, buf);
                    std::fill(buf.begin(), buf.end(), 0.0);
                    mm_tn_acc(ds.data(), qh.data(), buf.data(), n, n, dh);
                    for (double& e : buf) e *= scale;
                    scatter_add(dk, bb, head, buf);
                }
        });
    }
    return y;
}

// ===========================================================================
// Spectral band projections
// ===========================================================================

static Var band_filter(Graph& g, Var x, const spectral::SpectralConfig& cfg, bool low) {
    const Tensor& xv = g.value(x);
    auto apply = [cfg, low](const Tensor& t) {
        spectral::SpectralFeatures f = spectral::band_split(t, cfg);
        return low ? std::move(f.low_component) : std::move(f.high_component);
    };
    Tensor out = apply(xv);
    const bool rg = g.requires_grad(x);
    Var y = g.emplace(std::move(out), rg, nullptr);
    if (rg) {
        // the projection is self-adjoint: pull the same filter through
        g.set_backprop(y, [y, x, apply](Graph& gr) {
            Tensor filtered = apply(gr.node_grad(y.id));
            Tensor& dx = gr.grad_buffer(x.id);
            for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += filtered[i];
        });
    }
    return y;
}

Var band_low(Graph& g, Var x, const spectral::SpectralConfig& cfg) {
    return band_filter(g, x, cfg, true);
}
Var band_high(Graph& g, Var x, const spectral::SpectralConfig& cfg) {
    return band_filter(g, x, cfg, false);
}

// ===========================================================================
// Reductions and hinge
// ===========================================================================

static Var scaled_ssq(Graph& g, Var x, double inv_scale) {
    const Tensor& xv = g.value(x);
    double s = 0.0;
    for (int64_t i = 0; i < xv.numel(); ++i) s += xv[i] * xv[i];
    Tensor out({1});
    out[0] = s * inv_scale;
    const bool rg = g.requires_grad(x);
    Var y = g.emplace(std::move(out), rg, nullptr);
    if (rg) {
        g.set_backprop(y, [y, x, inv_scale](Graph& gr) {
            const double seed = gr.node_grad(y.id)[0];
            const Tensor& xv2 = gr.node_value(x.id);
            Tensor& dx = gr.grad_buffer(x.id);
            const double c = 2.0 * inv_scale * seed;
            for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += c * xv2[i];
        });
    }
    return y;
}

Var mean_sq(Graph& g, Var x) {
    return scaled_ssq(g, x, 1.0 / static_cast<double>(g.value(x).numel()));
}

Var ssq_per_slice(Graph& g, Var x) {
    const Tensor& xv = g.value(x);
    check(xv.ndim() >= 2, "ssq_per_slice", "need trailing [H, W] axes");
    const int64_t hw = static_cast<int64_t>(xv.dim(xv.ndim() - 2)) * xv.dim(xv.ndim() - 1);
    return scaled_ssq(g, x, static_cast<double>(hw) / static_cast<double>(xv.numel()));
}

Var ab_hinge(Graph& g, Var s, const Tensor& t, double margin) {
    const Tensor& sv = g.value(s);
    check(sv.same_shape(t), "ab_hinge",
          "shape mismatch " + sv.shape_str() + " vs " + t.shape_str());
    const double inv_n = 1.0 / static_cast<double>(sv.numel());
    double loss = 0.0;
    for (int64_t i = 0; i < sv.numel(); ++i) {
        if (t[i] > 0.0 && sv[i] < margin) {
            const double r = sv[i] - margin;
            loss += r * r;
        } else if (t[i] <= 0.0 && sv[i] > -margin) {
            const double r = sv[i] + margin;
            loss += r * r;
        }
    }
    Tensor out({1});
    out[0] = loss * inv_n;
    const bool rg = g.requires_grad(s);
    Var y = g.emplace(std::move(out), rg, nullptr);
    if (rg) {
        auto t_s = std::make_shared<Tensor>(t);
        g.set_backprop(y, [y, s, t_s, margin, inv_n](Graph& gr) {
            const double seed = gr.node_grad(y.id)[0];
            const Tensor& sv2 = gr.node_value(s.id);
            Tensor& ds = gr.grad_buffer(s.id);
            for (int64_t i = 0; i < sv2.numel(); ++i) {
                if ((*t_s)[i] > 0.0 && sv2[i] < margin)
                    ds[i] += seed * 2.0 * inv_n * (sv2[i] - margin);
                else if ((*t_s)[i] <= 0.0 && sv2[i] > -margin)
                    ds[i] += seed * 2.0 * inv_n * (sv2[i] + margin);
            }
        });
    }
    return y;
}

}  // namespace sdkd::nn
