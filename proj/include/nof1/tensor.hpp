#ifndef NOF1_TENSOR_HPP
#define NOF1_TENSOR_HPP

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nof1/common.hpp"

namespace nof1 {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

namespace detail {

struct TensorData {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;   // empty when absent
    bool tracked = false;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

/// N-dimensional double array, the value type of the autodiff graph.
///
/// Copying a Tensor copies the handle, not the buffer: ops hold their
/// operands through these shared handles so gradients land in the caller's
/// tensors. Use clone() for an independent buffer.
class Tensor {
public:
    Tensor() : d_(std::make_shared<detail::TensorData>()) {}

    static Tensor zeros(Shape shape) {
        Tensor t;
        t.d_->data.assign(shape_numel(shape), 0.0);
        t.d_->shape = std::move(shape);
        return t;
    }

    static Tensor full(Shape shape, double value) {
        Tensor t = zeros(std::move(shape));
        for (double& x : t.d_->data) x = value;
        return t;
    }

    static Tensor from(Shape shape, std::vector<double> values) {
        if (shape_numel(shape) != values.size())
            throw UsageError("Tensor::from: " + shape_str(shape) + " needs " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(values.size()));
        if (!all_finite(values)) throw NumericError("Tensor::from: non-finite input");
        Tensor t;
        t.d_->shape = std::move(shape);
        t.d_->data = std::move(values);
        return t;
    }

    static Tensor scalar(double v) { return from({1}, {v}); }

    const Shape& shape() const { return d_->shape; }
    std::size_t size() const { return d_->data.size(); }

    std::vector<double>& data() { return d_->data; }
    const std::vector<double>& data() const { return d_->data; }

    bool has_grad() const { return d_->grad.size() == d_->data.size(); }
    std::vector<double>& grad() {
        if (!has_grad()) throw UsageError("Tensor::grad: no gradient buffer (tensor not tracked)");
        return d_->grad;
    }
    const std::vector<double>& grad() const {
        return const_cast<Tensor*>(this)->grad();
    }

    bool tracked() const { return d_->tracked; }

    /// Marks the tensor as a differentiable leaf and allocates its gradient.
    Tensor& set_tracked(bool on = true) {
        d_->tracked = on;
        if (on) d_->ensure_grad();
        return *this;
    }

    void zero_grad() {
        if (has_grad()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
    }

    double item() const {
        if (size() != 1) throw UsageError("Tensor::item: tensor has " + std::to_string(size()) + " elements");
        return d_->data[0];
    }

    /// Deep copy; the copy is an untracked leaf.
    Tensor clone() const {
        Tensor t;
        t.d_->shape = d_->shape;
        t.d_->data = d_->data;
        return t;
    }

    bool same_buffer(const Tensor& other) const { return d_ == other.d_; }

    std::shared_ptr<detail::TensorData> impl() const { return d_; }

private:
    std::shared_ptr<detail::TensorData> d_;
};

/// Records executed operations so a scalar loss can be differentiated.
///
/// Ops append themselves in execution order, which is a topological order of
/// the graph by construction. backward() replays the recorded rules in
/// reverse; leaf gradients accumulate across calls, intermediate gradients
/// are reset per pass.
class Tape {
public:
    void record(std::shared_ptr<detail::TensorData> output, std::function<void()> backward_rule) {
        ops_.push_back({std::move(output), std::move(backward_rule)});
    }

    std::size_t size() const { return ops_.size(); }

    void clear() { ops_.clear(); }

    /// Seeds d(loss)/d(loss) = 1 and propagates to every tracked leaf.
    /// Repeated calls without zeroing leaf grads accumulate into them.
    void backward(const Tensor& loss) {
        if (loss.size() != 1) throw UsageError("Tape::backward: loss must be scalar, got " + shape_str(loss.shape()));
        bool found = false;
        for (const auto& op : ops_) {
            if (op.output == loss.impl()) {
                found = true;
                break;
            }
        }
        if (!found) throw UsageError("Tape::backward: loss was not produced on this tape");
        // Intermediate grads are scratch space for this pass; leaves (never
        // an op output) keep their accumulated values.
        for (auto& op : ops_) {
            op.output->ensure_grad();
            std::fill(op.output->grad.begin(), op.output->grad.end(), 0.0);
        }
        loss.impl()->grad[0] = 1.0;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward();
    }

private:
    struct Op {
        std::shared_ptr<detail::TensorData> output;
        std::function<void()> backward;
    };
    std::vector<Op> ops_;
};

namespace detail {

inline void check_finite_output(const Tensor& t, const char* op_name) {
    if (!all_finite(t.data())) throw NumericError(std::string(op_name) + ": non-finite value in output");
}

inline bool track_output(Tensor& out, Tape* tape, std::initializer_list<const Tensor*> inputs) {
    if (!tape) return false;
    bool any = false;
    for (const Tensor* t : inputs) any = any || t->tracked();
    if (any) {
        out.set_tracked(true);
    }
    return any;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Differentiable operations. Each takes an optional Tape; when a tape is
// given and any input is tracked, a backward rule is recorded. Backward
// rules accumulate (+=) into input gradients so fan-out sums correctly.
// ---------------------------------------------------------------------------

/// 2-D cross-correlation. input [N,Cin,H,W], kernel [Cout,Cin,kH,kW],
/// bias [Cout] -> [N,Cout,H',W'] with H' = (H + 2*padding - kH)/stride + 1.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                     int stride, int padding, Tape* tape = nullptr) {
    const Shape& is = input.shape();
    const Shape& ks = kernel.shape();
    if (is.size() != 4 || ks.size() != 4)
        throw ConfigError("conv2d: input must be [N,Cin,H,W] and kernel [Cout,Cin,kH,kW], got " +
                          shape_str(is) + " and " + shape_str(ks));
    if (is[1] != ks[1])
        throw ConfigError("conv2d: channel mismatch, input Cin=" + std::to_string(is[1]) +
                          " kernel Cin=" + std::to_string(ks[1]));
    if (bias.shape() != Shape{ks[0]})
        throw ConfigError("conv2d: bias must be [Cout]=" + std::to_string(ks[0]) + ", got " + shape_str(bias.shape()));
    if (stride < 1 || padding < 0) throw ConfigError("conv2d: stride must be >= 1 and padding >= 0");
    const std::size_t N = is[0], Cin = is[1], H = is[2], W = is[3];
    const std::size_t Cout = ks[0], kH = ks[2], kW = ks[3];
    if (H + 2 * static_cast<std::size_t>(padding) < kH || W + 2 * static_cast<std::size_t>(padding) < kW)
        throw ConfigError("conv2d: kernel " + shape_str(ks) + " larger than padded input " + shape_str(is));
    const std::size_t Ho = (H + 2 * padding - kH) / stride + 1;
    const std::size_t Wo = (W + 2 * padding - kW) / stride + 1;

    Tensor out = Tensor::zeros({N, Cout, Ho, Wo});
    const double* in = input.data().data();
    const double* k = kernel.data().data();
    const double* b = bias.data().data();
    double* o = out.data().data();

    parallel_for(N * Cout, [&](std::size_t nc) {
        const std::size_t n = nc / Cout, co = nc % Cout;
        double* oslice = o + (n * Cout + co) * Ho * Wo;
        for (std::size_t i = 0; i < Ho * Wo; ++i) oslice[i] = b[co];
        for (std::size_t ci = 0; ci < Cin; ++ci) {
            const double* islice = in + (n * Cin + ci) * H * W;
            const double* kslice = k + (co * Cin + ci) * kH * kW;
            for (std::size_t ky = 0; ky < kH; ++ky) {
                for (std::size_t kx = 0; kx < kW; ++kx) {
                    const double kv = kslice[ky * kW + kx];
                    for (std::size_t oy = 0; oy < Ho; ++oy) {
                        const long iy = static_cast<long>(oy) * stride - padding + static_cast<long>(ky);
                        if (iy < 0 || iy >= static_cast<long>(H)) continue;
                        const double* irow = islice + iy * W;
                        double* orow = oslice + oy * Wo;
                        for (std::size_t ox = 0; ox < Wo; ++ox) {
                            const long ix = static_cast<long>(ox) * stride - padding + static_cast<long>(kx);
                            if (ix < 0 || ix >= static_cast<long>(W)) continue;
                            orow[ox] += kv * irow[ix];
                        }
                    }
                }
            }
        }
    });
    detail::check_finite_output(out, "conv2d");

    if (detail::track_output(out, tape, {&input, &kernel, &bias})) {
        auto di = input.impl();
        auto dk = kernel.impl();
        auto db = bias.impl();
        auto dout = out.impl();
        tape->record(dout, [=]() {
            const double* go = dout->grad.data();
            const double* in2 = di->data.data();
            const double* k2 = dk->data.data();
            if (di->tracked || di->grad.size() == di->data.size()) {
                di->ensure_grad();
                double* gi = di->grad.data();
                parallel_for(N, [&](std::size_t n) {
                    for (std::size_t co = 0; co < Cout; ++co) {
                        const double* goslice = go + (n * Cout + co) * Ho * Wo;
                        for (std::size_t ci = 0; ci < Cin; ++ci) {
                            double* gislice = gi + (n * Cin + ci) * H * W;
                            const double* kslice = k2 + (co * Cin + ci) * kH * kW;
                            for (std::size_t ky = 0; ky < kH; ++ky) {
                                for (std::size_t kx = 0; kx < kW; ++kx) {
                                    const double kv = kslice[ky * kW + kx];
                                    for (std::size_t oy = 0; oy < Ho; ++oy) {
                                        const long iy = static_cast<long>(oy) * stride - padding + static_cast<long>(ky);
                                        if (iy < 0 || iy >= static_cast<long>(H)) continue;
                                        for (std::size_t ox = 0; ox < Wo; ++ox) {
                                            const long ix = static_cast<long>(ox) * stride - padding + static_cast<long>(kx);
                                            if (ix < 0 || ix >= static_cast<long>(W)) continue;
                                            gislice[iy * W + ix] += kv * goslice[oy * Wo + ox];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            if (dk->tracked || dk->grad.size() == dk->data.size()) {
                dk->ensure_grad();
                double* gk = dk->grad.data();
                parallel_for(Cout * Cin, [&](std::size_t cc) {
                    const std::size_t co = cc / Cin, ci = cc % Cin;
                    double* gkslice = gk + (co * Cin + ci) * kH * kW;
                    for (std::size_t n = 0; n < N; ++n) {
                        const double* goslice = go + (n * Cout + co) * Ho * Wo;
                        const double* islice = in2 + (n * Cin + ci) * H * W;
                        for (std::size_t ky = 0; ky < kH; ++ky) {
                            for (std::size_t kx = 0; kx < kW; ++kx) {
                                double acc = 0.0;
                                for (std::size_t oy = 0; oy < Ho; ++oy) {
                                    const long iy = static_cast<long>(oy) * stride - padding + static_cast<long>(ky);
                                    if (iy < 0 || iy >= static_cast<long>(H)) continue;
                                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                                        const long ix = static_cast<long>(ox) * stride - padding + static_cast<long>(kx);
                                        if (ix < 0 || ix >= static_cast<long>(W)) continue;
                                        acc += goslice[oy * Wo + ox] * islice[iy * W + ix];
                                    }
                                }
                                gkslice[ky * kW + kx] += acc;
                            }
                        }
                    }
                });
            }
            if (db->tracked || db->grad.size() == db->data.size()) {
                db->ensure_grad();
                double* gb = db->grad.data();
                for (std::size_t co = 0; co < Cout; ++co) {
                    double acc = 0.0;
                    for (std::size_t n = 0; n < N; ++n) {
                        const double* goslice = go + (n * Cout + co) * Ho * Wo;
                        for (std::size_t i = 0; i < Ho * Wo; ++i) acc += goslice[i];
                    }
                    gb[co] += acc;
                }
            }
        });
    }
    return out;
}

/// Transposed 2-D convolution, the adjoint of conv2d with the same geometry.
/// input [N,Cin,H,W], kernel [Cin,Cout,kH,kW], bias [Cout]
/// -> [N,Cout,H',W'] with H' = (H-1)*stride - 2*padding + kH.
inline Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                               int stride, int padding, Tape* tape = nullptr) {
    const Shape& is = input.shape();
    const Shape& ks = kernel.shape();
    if (is.size() != 4 || ks.size() != 4)
        throw ConfigError("conv_transpose2d: input must be [N,Cin,H,W] and kernel [Cin,Cout,kH,kW], got " +
                          shape_str(is) + " and " + shape_str(ks));
    if (is[1] != ks[0])
        throw ConfigError("conv_transpose2d: channel mismatch, input Cin=" + std::to_string(is[1]) +
                          " kernel Cin=" + std::to_string(ks[0]));
    if (bias.shape() != Shape{ks[1]})
        throw ConfigError("conv_transpose2d: bias must be [Cout]=" + std::to_string(ks[1]) + ", got " +
                          shape_str(bias.shape()));
    if (stride < 1 || padding < 0) throw ConfigError("conv_transpose2d: stride must be >= 1 and padding >= 0");
    const std::size_t N = is[0], Cin = is[1], H = is[2], W = is[3];
    const std::size_t Cout = ks[1], kH = ks[2], kW = ks[3];
    const long Ho_l = static_cast<long>(H - 1) * stride - 2 * padding + static_cast<long>(kH);
    const long Wo_l = static_cast<long>(W - 1) * stride - 2 * padding + static_cast<long>(kW);
    if (Ho_l < 1 || Wo_l < 1)
        throw ConfigError("conv_transpose2d: output would be empty for input " + shape_str(is));
    const std::size_t Ho = static_cast<std::size_t>(Ho_l), Wo = static_cast<std::size_t>(Wo_l);

    Tensor out = Tensor::zeros({N, Cout, Ho, Wo});
    const double* in = input.data().data();
    const double* k = kernel.data().data();
    const double* b = bias.data().data();
    double* o = out.data().data();

    parallel_for(N * Cout, [&](std::size_t nc) {
        const std::size_t n = nc / Cout, co = nc % Cout;
        double* oslice = o + (n * Cout + co) * Ho * Wo;
        for (std::size_t i = 0; i < Ho * Wo; ++i) oslice[i] = b[co];
        for (std::size_t ci = 0; ci < Cin; ++ci) {
            const double* islice = in + (n * Cin + ci) * H * W;
            const double* kslice = k + (ci * Cout + co) * kH * kW;
            for (std::size_t iy = 0; iy < H; ++iy) {
                for (std::size_t ix = 0; ix < W; ++ix) {
                    const double iv = islice[iy * W + ix];
                    for (std::size_t ky = 0; ky < kH; ++ky) {
                        const long oy = static_cast<long>(iy) * stride - padding + static_cast<long>(ky);
                        if (oy < 0 || oy >= static_cast<long>(Ho)) continue;
                        for (std::size_t kx = 0; kx < kW; ++kx) {
                            const long ox = static_cast<long>(ix) * stride - padding + static_cast<long>(kx);
                            if (ox < 0 || ox >= static_cast<long>(Wo)) continue;
                            oslice[oy * Wo + ox] += iv * kslice[ky * kW + kx];
                        }
                    }
                }
            }
        }
    });
    detail::check_finite_output(out, "conv_transpose2d");

    if (detail::track_output(out, tape, {&input, &kernel, &bias})) {
        auto di = input.impl();
        auto dk = kernel.impl();
        auto db = bias.impl();
        auto dout = out.impl();
        tape->record(dout, [=]() {
            const double* go = dout->grad.data();
            const double* in2 = di->data.data();
            const double* k2 = dk->data.data();
            if (di->tracked || di->grad.size() == di->data.size()) {
                di->ensure_grad();
                double* gi = di->grad.data();
                // gather: grad of input is a conv2d of grad-out with the kernel
                parallel_for(N * Cin, [&](std::size_t nc2) {
                    const std::size_t n = nc2 / Cin, ci = nc2 % Cin;
                    double* gislice = gi + (n * Cin + ci) * H * W;
                    for (std::size_t co = 0; co < Cout; ++co) {
                        const double* goslice = go + (n * Cout + co) * Ho * Wo;
                        const double* kslice = k2 + (ci * Cout + co) * kH * kW;
                        for (std::size_t iy = 0; iy < H; ++iy) {
                            for (std::size_t ix = 0; ix < W; ++ix) {
                                double acc = 0.0;
                                for (std::size_t ky = 0; ky < kH; ++ky) {
                                    const long oy = static_cast<long>(iy) * stride - padding + static_cast<long>(ky);
                                    if (oy < 0 || oy >= static_cast<long>(Ho)) continue;
                                    for (std::size_t kx = 0; kx < kW; ++kx) {
                                        const long ox = static_cast<long>(ix) * stride - padding + static_cast<long>(kx);
                                        if (ox < 0 || ox >= static_cast<long>(Wo)) continue;
                                        acc += goslice[oy * Wo + ox] * kslice[ky * kW + kx];
                                    }
                                }
                                gislice[iy * W + ix] += acc;
                            }
                        }
                    }
                });
            }
            if (dk->tracked || dk->grad.size() == dk->data.size()) {
                dk->ensure_grad();
                double* gk = dk->grad.data();
                parallel_for(Cin * Cout, [&](std::size_t cc) {
                    const std::size_t ci = cc / Cout, co = cc % Cout;
                    double* gkslice = gk + (ci * Cout + co) * kH * kW;
                    for (std::size_t n = 0; n < N; ++n) {
                        const double* islice = in2 + (n * Cin + ci) * H * W;
                        const double* goslice = go + (n * Cout + co) * Ho * Wo;
                        for (std::size_t ky = 0; ky < kH; ++ky) {
                            for (std::size_t kx = 0; kx < kW; ++kx) {
                                double acc = 0.0;
                                for (std::size_t iy = 0; iy < H; ++iy) {
                                    const long oy = static_cast<long>(iy) * stride - padding + static_cast<long>(ky);
                                    if (oy < 0 || oy >= static_cast<long>(Ho)) continue;
                                    for (std::size_t ix = 0; ix < W; ++ix) {
                                        const long ox = static_cast<long>(ix) * stride - padding + static_cast<long>(kx);
                                        if (ox < 0 || ox >= static_cast<long>(Wo)) continue;
                                        acc += islice[iy * W + ix] * goslice[oy * Wo + ox];
                                    }
                                }
                                gkslice[ky * kW + kx] += acc;
                            }
                        }
                    }
                });
            }
            if (db->tracked || db->grad.size() == db->data.size()) {
                db->ensure_grad();
                double* gb = db->grad.data();
                for (std::size_t co = 0; co < Cout; ++co) {
                    double acc = 0.0;
                    for (std::size_t n = 0; n < N; ++n) {
                        const double* goslice = go + (n * Cout + co) * Ho * Wo;
                        for (std::size_t i = 0; i < Ho * Wo; ++i) acc += goslice[i];
                    }
                    gb[co] += acc;
                }
            }
        });
    }
    return out;
}

/// Affine map: input [N,Fin], weight [Fout,Fin], bias [Fout] -> [N,Fout].
inline Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias, Tape* tape = nullptr) {
    const Shape& is = input.shape();
    const Shape& ws = weight.shape();
    if (is.size() != 2 || ws.size() != 2 || is[1] != ws[1])
        throw ConfigError("linear: need input [N,Fin] and weight [Fout,Fin] with matching Fin, got " +
                          shape_str(is) + " and " + shape_str(ws));
    if (bias.shape() != Shape{ws[0]})
        throw ConfigError("linear: bias must be [Fout]=" + std::to_string(ws[0]) + ", got " + shape_str(bias.shape()));
    const std::size_t N = is[0], Fin = is[1], Fout = ws[0];

    Tensor out = Tensor::zeros({N, Fout});
    const double* in = input.data().data();
    const double* w = weight.data().data();
    const double* b = bias.data().data();
    double* o = out.data().data();
    parallel_for(N, [&](std::size_t n) {
        const double* irow = in + n * Fin;
        double* orow = o + n * Fout;
        for (std::size_t fo = 0; fo < Fout; ++fo) {
            const double* wrow = w + fo * Fin;
            double acc = b[fo];
            for (std::size_t fi = 0; fi < Fin; ++fi) acc += wrow[fi] * irow[fi];
            orow[fo] = acc;
        }
    });
    detail::check_finite_output(out, "linear");

    if (detail::track_output(out, tape, {&input, &weight, &bias})) {
        auto di = input.impl();
        auto dw = weight.impl();
        auto db = bias.impl();
        auto dout = out.impl();
        tape->record(dout, [=]() {
            const double* go = dout->grad.data();
            const double* in2 = di->data.data();
            const double* w2 = dw->data.data();
            if (di->tracked || di->grad.size() == di->data.size()) {
                di->ensure_grad();
                double* gi = di->grad.data();
                parallel_for(N, [&](std::size_t n) {
                    const double* gorow = go + n * Fout;
                    double* girow = gi + n * Fin;
                    for (std::size_t fo = 0; fo < Fout; ++fo) {
                        const double g = gorow[fo];
                        const double* wrow = w2 + fo * Fin;
                        for (std::size_t fi = 0; fi < Fin; ++fi) girow[fi] += g * wrow[fi];
                    }
                });
            }
            if (dw->tracked || dw->grad.size() == dw->data.size()) {
                dw->ensure_grad();
                double* gw = dw->grad.data();
                parallel_for(Fout, [&](std::size_t fo) {
                    double* gwrow = gw + fo * Fin;
                    for (std::size_t n = 0; n < N; ++n) {
                        const double g = go[n * Fout + fo];
                        const double* irow = in2 + n * Fin;
                        for (std::size_t fi = 0; fi < Fin; ++fi) gwrow[fi] += g * irow[fi];
                    }
                });
            }
            if (db->tracked || db->grad.size() == db->data.size()) {
                db->ensure_grad();
                double* gb = db->grad.data();
                for (std::size_t fo = 0; fo < Fout; ++fo) {
                    double acc = 0.0;
                    for (std::size_t n = 0; n < N; ++n) acc += go[n * Fout + fo];
                    gb[fo] += acc;
                }
            }
        });
    }
    return out;
}

/// max(x, 0) elementwise; subgradient at 0 is 0.
inline Tensor relu(const Tensor& input, Tape* tape = nullptr) {
    Tensor out = Tensor::zeros(input.shape());
    const std::size_t n = input.size();
    const double* in = input.data().data();
    double* o = out.data().data();
    for (std::size_t i = 0; i < n; ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
    detail::check_finite_output(out, "relu");

    if (detail::track_output(out, tape, {&input})) {
        auto di = input.impl();
        auto dout = out.impl();
        tape->record(dout, [=]() {
            di->ensure_grad();
            const double* go = dout->grad.data();
            const double* in2 = di->data.data();
            double* gi = di->grad.data();
            for (std::size_t i = 0; i < n; ++i)
                if (in2[i] > 0.0) gi[i] += go[i];
        });
    }
    return out;
}

/// Logistic function, numerically stable on both tails; output in (0,1).
inline Tensor sigmoid(const Tensor& input, Tape* tape = nullptr) {
    Tensor out = Tensor::zeros(input.shape());
    const std::size_t n = input.size();
    const double* in = input.data().data();
    double* o = out.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        const double x = in[i];
        if (x >= 0.0) {
            o[i] = 1.0 / (1.0 + std::exp(-x));
        } else {
            const double e = std::exp(x);
            o[i] = e / (1.0 + e);
        }
    }
    detail::check_finite_output(out, "sigmoid");

    if (detail::track_output(out, tape, {&input})) {
        auto di = input.impl();
        auto dout = out.impl();
        tape->record(dout, [=]() {
            di->ensure_grad();
            const double* go = dout->grad.data();
            const double* s = dout->data.data();
            double* gi = di->grad.data();
            for (std::size_t i = 0; i < n; ++i) gi[i] += go[i] * s[i] * (1.0 - s[i]);
        });
    }
    return out;
}

/// Mean squared error over all elements: (1/n) * sum((pred - target)^2).
inline Tensor mse_loss(const Tensor& pred, const Tensor& target, Tape* tape = nullptr) {
    if (pred.shape() != target.shape())
        throw ConfigError("mse_loss: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    const std::size_t n = pred.size();
    if (n == 0) throw UsageError("mse_loss: empty tensors");
    const double* p = pred.data().data();
    const double* t = target.data().data();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = p[i] - t[i];
        acc += d * d;
    }
    Tensor out = Tensor::scalar(acc / static_cast<double>(n));
    detail::check_finite_output(out, "mse_loss");

    if (detail::track_output(out, tape, {&pred, &target})) {
        auto dp = pred.impl();
        auto dt = target.impl();
        auto dout = out.impl();
        tape->record(dout, [=]() {
            const double g = dout->grad[0] * 2.0 / static_cast<double>(n);
            const double* p2 = dp->data.data();
            const double* t2 = dt->data.data();
            if (dp->tracked || dp->grad.size() == dp->data.size()) {
                dp->ensure_grad();
                double* gp = dp->grad.data();
                for (std::size_t i = 0; i < n; ++i) gp[i] += g * (p2[i] - t2[i]);
            }
            if (dt->tracked) {
                dt->ensure_grad();
                double* gt = dt->grad.data();
                for (std::size_t i = 0; i < n; ++i) gt[i] -= g * (p2[i] - t2[i]);
            }
        });
    }
    return out;
}

/// Sum of all elements as a scalar.
inline Tensor sum(const Tensor& input, Tape* tape = nullptr) {
    double acc = 0.0;
    for (double x : input.data()) acc += x;
    Tensor out = Tensor::scalar(acc);
    detail::check_finite_output(out, "sum");
    if (detail::track_output(out, tape, {&input})) {
        auto di = input.impl();
        auto dout = out.impl();
        const std::size_t n = input.size();
        tape->record(dout, [=]() {
            di->ensure_grad();
            const double g = dout->grad[0];
            double* gi = di->grad.data();
            for (std::size_t i = 0; i < n; ++i) gi[i] += g;
        });
    }
    return out;
}

/// Same elements, new shape (copies the buffer).
inline Tensor reshape(const Tensor& input, Shape new_shape, Tape* tape = nullptr) {
    if (shape_numel(new_shape) != input.size())
        throw ConfigError("reshape: " + shape_str(input.shape()) + " cannot become " + shape_str(new_shape));
    Tensor out = Tensor::from(new_shape, input.data());
    if (detail::track_output(out, tape, {&input})) {
        auto di = input.impl();
        auto dout = out.impl();
        const std::size_t n = input.size();
        tape->record(dout, [=]() {
            di->ensure_grad();
            const double* go = dout->grad.data();
            double* gi = di->grad.data();
            for (std::size_t i = 0; i < n; ++i) gi[i] += go[i];
        });
    }
    return out;
}

/// Convenience wrapper mirroring the usual loss.backward() call site.
inline void backward(Tape& tape, const Tensor& loss) { tape.backward(loss); }

}  // namespace nof1

#endif
