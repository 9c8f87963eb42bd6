#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>

#include "emvae/nn/gemm.hpp"
#include "emvae/nn/tensor.hpp"

namespace emvae::nn {

enum class LayerKind { dense, conv1d, convtranspose1d, activation, flatten, reshape };
enum class Padding { valid, same };
enum class Activation { relu, tanh, linear };

inline std::string to_string(Activation a) {
    switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::linear: return "linear";
    }
    return "?";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "linear") return Activation::linear;
    throw ConfigError("unknown activation '" + s + "'");
}

// Static description of one layer. For dense layers the channel fields hold
// the feature counts. Reshape targets are per-sample extents.
struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 1;
    std::size_t stride = 1;
    Padding padding = Padding::valid;
    Activation activation = Activation::linear;
    Shape target;

    static LayerSpec dense(std::size_t in, std::size_t out) {
        LayerSpec s;
        s.kind = LayerKind::dense;
        s.in_channels = in;
        s.out_channels = out;
        return s;
    }
    static LayerSpec conv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
                            Padding padding = Padding::valid) {
        LayerSpec s;
        s.kind = LayerKind::conv1d;
        s.in_channels = in;
        s.out_channels = out;
        s.kernel = kernel;
        s.stride = stride;
        s.padding = padding;
        return s;
    }
    static LayerSpec convtranspose1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1) {
        LayerSpec s;
        s.kind = LayerKind::convtranspose1d;
        s.in_channels = in;
        s.out_channels = out;
        s.kernel = kernel;
        s.stride = stride;
        return s;
    }
    static LayerSpec act(Activation a) {
        LayerSpec s;
        s.kind = LayerKind::activation;
        s.activation = a;
        return s;
    }
    static LayerSpec flatten() {
        LayerSpec s;
        s.kind = LayerKind::flatten;
        return s;
    }
    static LayerSpec reshape(Shape target) {
        LayerSpec s;
        s.kind = LayerKind::reshape;
        s.target = std::move(target);
        return s;
    }

    bool trainable() const noexcept {
        return kind == LayerKind::dense || kind == LayerKind::conv1d || kind == LayerKind::convtranspose1d;
    }

    void validate() const {
        if (kernel < 1) throw GeometryError("kernel must be >= 1");
        if (stride < 1) throw GeometryError("stride must be >= 1");
        if (trainable() && (in_channels == 0 || out_channels == 0))
            throw GeometryError("channel counts must be positive");
        if (kind == LayerKind::conv1d && padding == Padding::same && stride != 1)
            throw GeometryError("same padding requires stride 1");
        if (kind == LayerKind::reshape && (target.empty() || shape_volume(target) == 0))
            throw GeometryError("reshape target must have positive extents");
    }
};

inline std::size_t conv1d_output_length(std::size_t length, const LayerSpec& spec) {
    if (spec.padding == Padding::same) return length;
    if (length < spec.kernel)
        throw GeometryError("input length " + std::to_string(length) + " shorter than kernel " +
                            std::to_string(spec.kernel));
    return (length - spec.kernel) / spec.stride + 1;
}

inline std::size_t convtranspose1d_output_length(std::size_t length, const LayerSpec& spec) {
    if (length == 0) throw GeometryError("convtranspose1d input length must be positive");
    return (length - 1) * spec.stride + spec.kernel;
}

// Trainable tensors of one layer with their gradient accumulators and Adam
// moment buffers.
struct LayerParams {
    Tensor weights;
    Tensor biases;
    Tensor weight_grad;
    Tensor bias_grad;
    Tensor weight_m;
    Tensor weight_v;
    Tensor bias_m;
    Tensor bias_v;
    std::uint64_t step_count = 0;

    LayerParams() = default;
    LayerParams(Shape weight_shape, std::size_t bias_count)
        : weights(weight_shape), biases({bias_count}), weight_grad(weight_shape), bias_grad({bias_count}),
          weight_m(weight_shape), weight_v(weight_shape), bias_m({bias_count}), bias_v({bias_count}) {}

    std::size_t count() const noexcept { return weights.size() + biases.size(); }

    void zero_grad() {
        weight_grad.fill(0.0);
        bias_grad.fill(0.0);
    }
};

// Uniform fan-in scaled init, biases zero.
inline void kaiming_uniform(LayerParams& p, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& w : p.weights.storage()) w = dist(rng);
    p.biases.fill(0.0);
}

// ---------------------------------------------------------------------------
// Forward kernels. x is batch-major; weights follow
//   dense           [in, out]
//   conv1d          [out, in, kernel]
//   convtranspose1d [in, out, kernel]
// ---------------------------------------------------------------------------

inline Tensor dense_forward(const Tensor& x, const LayerParams& p) {
    if (x.rank() != 2) throw DimensionError("dense expects [batch, in], got " + shape_string(x.shape()));
    const std::size_t batch = x.dim(0), in = x.dim(1);
    if (p.weights.rank() != 2 || p.weights.dim(0) != in)
        throw DimensionError("dense weights " + shape_string(p.weights.shape()) + " incompatible with input " +
                             shape_string(x.shape()));
    const std::size_t out = p.weights.dim(1);
    Tensor y({batch, out});
    gemm_accumulate(batch, out, in, x.data(), in, p.weights.data(), out, y.data(), out);
    for (std::size_t b = 0; b < batch; ++b) {
        double* yr = y.data() + b * out;
        for (std::size_t o = 0; o < out; ++o) yr[o] += p.biases[o];
    }
    return y;
}

inline Tensor dense_backward(const Tensor& x, const Tensor& dy, LayerParams& p) {
    const std::size_t batch = x.dim(0), in = x.dim(1), out = p.weights.dim(1);
    if (dy.rank() != 2 || dy.dim(0) != batch || dy.dim(1) != out)
        throw DimensionError("dense upstream gradient shape " + shape_string(dy.shape()));
    std::vector<double> xt(in * batch), wt(out * in);
    transpose(batch, in, x.data(), xt.data());
    transpose(in, out, p.weights.data(), wt.data());
    gemm_accumulate(in, out, batch, xt.data(), batch, dy.data(), out, p.weight_grad.data(), out);
    Tensor dx({batch, in});
    gemm_accumulate(batch, in, out, dy.data(), out, wt.data(), in, dx.data(), in);
    for (std::size_t b = 0; b < batch; ++b) {
        const double* dyr = dy.data() + b * out;
        for (std::size_t o = 0; o < out; ++o) p.bias_grad[o] += dyr[o];
    }
    return dx;
}

namespace detail {

// Column buffer [batch * len_out, cin * kernel] of the sliding windows.
inline std::vector<double> im2col(const Tensor& x, const LayerSpec& spec, std::size_t len_out, std::ptrdiff_t pad) {
    const std::size_t batch = x.dim(0), cin = spec.in_channels, len = x.dim(2), k = spec.kernel;
    const std::size_t width = cin * k;
    std::vector<double> cols(batch * len_out * width, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t l = 0; l < len_out; ++l) {
            double* row = cols.data() + (b * len_out + l) * width;
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const double* xr = x.data() + (b * cin + ci) * len;
                for (std::size_t j = 0; j < k; ++j) {
                    const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(l * spec.stride + j) - pad;
                    if (idx >= 0 && idx < static_cast<std::ptrdiff_t>(len)) row[ci * k + j] = xr[idx];
                }
            }
        }
    return cols;
}

inline std::ptrdiff_t conv_pad(const LayerSpec& spec) {
    return spec.padding == Padding::same ? static_cast<std::ptrdiff_t>((spec.kernel - 1) / 2) : 0;
}

} // namespace detail

inline Tensor conv1d_forward(const Tensor& x, const LayerParams& p, const LayerSpec& spec) {
    spec.validate();
    if (x.rank() != 3 || x.dim(1) != spec.in_channels)
        throw DimensionError("conv1d expects [batch, " + std::to_string(spec.in_channels) + ", L], got " +
                             shape_string(x.shape()));
    const std::size_t batch = x.dim(0), cin = spec.in_channels, cout = spec.out_channels, k = spec.kernel;
    const std::size_t len_out = conv1d_output_length(x.dim(2), spec);
    const std::size_t width = cin * k, rows = batch * len_out;
    const auto cols = detail::im2col(x, spec, len_out, detail::conv_pad(spec));
    std::vector<double> wt(width * cout);
    transpose(cout, width, p.weights.data(), wt.data());
    std::vector<double> yt(rows * cout);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t co = 0; co < cout; ++co) yt[r * cout + co] = p.biases[co];
    gemm_accumulate(rows, cout, width, cols.data(), width, wt.data(), cout, yt.data(), cout);
    Tensor y({batch, cout, len_out});
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t l = 0; l < len_out; ++l)
            for (std::size_t co = 0; co < cout; ++co) y.at(b, co, l) = yt[(b * len_out + l) * cout + co];
    return y;
}

inline Tensor conv1d_backward(const Tensor& x, const Tensor& dy, LayerParams& p, const LayerSpec& spec) {
    const std::size_t batch = x.dim(0), cin = spec.in_channels, cout = spec.out_channels, len = x.dim(2);
    const std::size_t k = spec.kernel;
    const std::size_t len_out = conv1d_output_length(len, spec);
    if (dy.rank() != 3 || dy.dim(0) != batch || dy.dim(1) != cout || dy.dim(2) != len_out)
        throw DimensionError("conv1d upstream gradient shape " + shape_string(dy.shape()));
    const std::ptrdiff_t pad = detail::conv_pad(spec);
    const std::size_t width = cin * k, rows = batch * len_out;
    const auto cols = detail::im2col(x, spec, len_out, pad);

    std::vector<double> dy_t(cout * rows), dy_rows(rows * cout);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t l = 0; l < len_out; ++l) {
                const double g = dy.at(b, co, l);
                dy_t[co * rows + b * len_out + l] = g;
                dy_rows[(b * len_out + l) * cout + co] = g;
                p.bias_grad[co] += g;
            }
    gemm_accumulate(cout, width, rows, dy_t.data(), rows, cols.data(), width, p.weight_grad.data(), width);

    std::vector<double> dcols(rows * width, 0.0);
    gemm_accumulate(rows, width, cout, dy_rows.data(), cout, p.weights.data(), width, dcols.data(), width);
    Tensor dx({batch, cin, len});
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t l = 0; l < len_out; ++l) {
            const double* row = dcols.data() + (b * len_out + l) * width;
            for (std::size_t ci = 0; ci < cin; ++ci)
                for (std::size_t j = 0; j < k; ++j) {
                    const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(l * spec.stride + j) - pad;
                    if (idx >= 0 && idx < static_cast<std::ptrdiff_t>(len)) dx.at(b, ci, idx) += row[ci * k + j];
                }
        }
    return dx;
}

inline Tensor convtranspose1d_forward(const Tensor& x, const LayerParams& p, const LayerSpec& spec) {
    spec.validate();
    if (x.rank() != 3 || x.dim(1) != spec.in_channels)
        throw DimensionError("convtranspose1d expects [batch, " + std::to_string(spec.in_channels) +
                             ", L], got " + shape_string(x.shape()));
    const std::size_t batch = x.dim(0), cin = spec.in_channels, cout = spec.out_channels, len = x.dim(2);
    const std::size_t k = spec.kernel, s = spec.stride;
    const std::size_t len_out = convtranspose1d_output_length(len, spec);
    const std::size_t rows = batch * len, width = cout * k;
    std::vector<double> xt(rows * cin);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t l = 0; l < len; ++l) xt[(b * len + l) * cin + ci] = x.at(b, ci, l);
    std::vector<double> prod(rows * width, 0.0);
    gemm_accumulate(rows, width, cin, xt.data(), cin, p.weights.data(), width, prod.data(), width);
    Tensor y({batch, cout, len_out});
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t co = 0; co < cout; ++co) {
            double* yr = y.data() + (b * cout + co) * len_out;
            for (std::size_t l = 0; l < len_out; ++l) yr[l] = p.biases[co];
            for (std::size_t l = 0; l < len; ++l) {
                const double* pr = prod.data() + (b * len + l) * width + co * k;
                for (std::size_t j = 0; j < k; ++j) yr[l * s + j] += pr[j];
            }
        }
    return y;
}

inline Tensor convtranspose1d_backward(const Tensor& x, const Tensor& dy, LayerParams& p, const LayerSpec& spec) {
    const std::size_t batch = x.dim(0), cin = spec.in_channels, cout = spec.out_channels, len = x.dim(2);
    const std::size_t k = spec.kernel, s = spec.stride;
    const std::size_t len_out = convtranspose1d_output_length(len, spec);
    if (dy.rank() != 3 || dy.dim(0) != batch || dy.dim(1) != cout || dy.dim(2) != len_out)
        throw DimensionError("convtranspose1d upstream gradient shape " + shape_string(dy.shape()));
    const std::size_t rows = batch * len, width = cout * k;
    std::vector<double> dprod(rows * width);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t co = 0; co < cout; ++co) {
            const double* dyr = dy.data() + (b * cout + co) * len_out;
            double bsum = 0.0;
            for (std::size_t l = 0; l < len_out; ++l) bsum += dyr[l];
            p.bias_grad[co] += bsum;
            for (std::size_t l = 0; l < len; ++l) {
                double* pr = dprod.data() + (b * len + l) * width + co * k;
                for (std::size_t j = 0; j < k; ++j) pr[j] = dyr[l * s + j];
            }
        }
    std::vector<double> x_t(cin * rows);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t l = 0; l < len; ++l) x_t[ci * rows + b * len + l] = x.at(b, ci, l);
    gemm_accumulate(cin, width, rows, x_t.data(), rows, dprod.data(), width, p.weight_grad.data(), width);

    std::vector<double> wt(width * cin);
    transpose(cin, width, p.weights.data(), wt.data());
    std::vector<double> dxt(rows * cin, 0.0);
    gemm_accumulate(rows, cin, width, dprod.data(), width, wt.data(), cin, dxt.data(), cin);
    Tensor dx({batch, cin, len});
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t l = 0; l < len; ++l) dx.at(b, ci, l) = dxt[(b * len + l) * cin + ci];
    return dx;
}

inline Tensor activation_forward(const Tensor& x, Activation a) {
    Tensor y = x;
    switch (a) {
    case Activation::relu:
        for (auto& v : y.storage()) v = v > 0.0 ? v : 0.0;
        break;
    case Activation::tanh:
        for (auto& v : y.storage()) v = std::tanh(v);
        break;
    case Activation::linear: break;
    }
    return y;
}

inline Tensor activation_backward(const Tensor& x, const Tensor& dy, Activation a) {
    if (dy.size() != x.size()) throw DimensionError("activation upstream gradient size mismatch");
    Tensor dx = dy;
    switch (a) {
    case Activation::relu:
        for (std::size_t i = 0; i < dx.size(); ++i)
            if (!(x[i] > 0.0)) dx[i] = 0.0;
        break;
    case Activation::tanh:
        for (std::size_t i = 0; i < dx.size(); ++i) {
            const double t = std::tanh(x[i]);
            dx[i] *= 1.0 - t * t;
        }
        break;
    case Activation::linear: break;
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Stateful layer objects. forward() caches its input for backward(); infer()
// is const and safe for concurrent callers.
// ---------------------------------------------------------------------------

class Layer {
public:
    explicit Layer(LayerSpec spec) : spec_(std::move(spec)) { spec_.validate(); }
    virtual ~Layer() = default;
    Layer(const Layer&) = default;
    Layer& operator=(const Layer&) = default;

    const LayerSpec& spec() const noexcept { return spec_; }

    // Per-sample output extents for per-sample input extents.
    virtual Shape output_shape(const Shape& in) const = 0;
    virtual Tensor infer(const Tensor& x) const = 0;
    virtual std::unique_ptr<Layer> clone() const = 0;
    virtual LayerParams* params() noexcept { return nullptr; }
    virtual const LayerParams* params() const noexcept { return nullptr; }
    virtual void initialize(std::mt19937_64&) {}

    Tensor forward(const Tensor& x) {
        cached_input_ = x;
        has_cache_ = true;
        return infer(x);
    }

    Tensor backward(const Tensor& dy) {
        if (!has_cache_) throw StateError("backward called without a preceding forward pass");
        return backward_impl(cached_input_, dy);
    }

    void clear_cache() noexcept {
        has_cache_ = false;
        cached_input_ = Tensor();
    }

protected:
    virtual Tensor backward_impl(const Tensor& x, const Tensor& dy) = 0;

    LayerSpec spec_;

private:
    Tensor cached_input_;
    bool has_cache_ = false;
};

class DenseLayer : public Layer {
public:
    explicit DenseLayer(LayerSpec spec)
        : Layer(std::move(spec)), params_({spec_.in_channels, spec_.out_channels}, spec_.out_channels) {}

    Shape output_shape(const Shape& in) const override {
        if (in.size() != 1 || in[0] != spec_.in_channels)
            throw GeometryError("dense(" + std::to_string(spec_.in_channels) + ") cannot take " + shape_string(in));
        return {spec_.out_channels};
    }
    Tensor infer(const Tensor& x) const override { return dense_forward(x, params_); }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<DenseLayer>(*this); }
    LayerParams* params() noexcept override { return &params_; }
    const LayerParams* params() const noexcept override { return &params_; }
    void initialize(std::mt19937_64& rng) override { kaiming_uniform(params_, spec_.in_channels, rng); }

protected:
    Tensor backward_impl(const Tensor& x, const Tensor& dy) override { return dense_backward(x, dy, params_); }

private:
    LayerParams params_;
};

class Conv1dLayer : public Layer {
public:
    explicit Conv1dLayer(LayerSpec spec)
        : Layer(std::move(spec)),
          params_({spec_.out_channels, spec_.in_channels, spec_.kernel}, spec_.out_channels) {}

    Shape output_shape(const Shape& in) const override {
        if (in.size() != 2 || in[0] != spec_.in_channels)
            throw GeometryError("conv1d(" + std::to_string(spec_.in_channels) + " ch) cannot take " +
                                shape_string(in));
        return {spec_.out_channels, conv1d_output_length(in[1], spec_)};
    }
    Tensor infer(const Tensor& x) const override { return conv1d_forward(x, params_, spec_); }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv1dLayer>(*this); }
    LayerParams* params() noexcept override { return &params_; }
    const LayerParams* params() const noexcept override { return &params_; }
    void initialize(std::mt19937_64& rng) override {
        kaiming_uniform(params_, spec_.in_channels * spec_.kernel, rng);
    }

protected:
    Tensor backward_impl(const Tensor& x, const Tensor& dy) override {
        return conv1d_backward(x, dy, params_, spec_);
    }

private:
    LayerParams params_;
};

class ConvTranspose1dLayer : public Layer {
public:
    explicit ConvTranspose1dLayer(LayerSpec spec)
        : Layer(std::move(spec)),
          params_({spec_.in_channels, spec_.out_channels, spec_.kernel}, spec_.out_channels) {}

    Shape output_shape(const Shape& in) const override {
        if (in.size() != 2 || in[0] != spec_.in_channels)
            throw GeometryError("convtranspose1d(" + std::to_string(spec_.in_channels) + " ch) cannot take " +
                                shape_string(in));
        return {spec_.out_channels, convtranspose1d_output_length(in[1], spec_)};
    }
    Tensor infer(const Tensor& x) const override { return convtranspose1d_forward(x, params_, spec_); }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<ConvTranspose1dLayer>(*this); }
    LayerParams* params() noexcept override { return &params_; }
    const LayerParams* params() const noexcept override { return &params_; }
    void initialize(std::mt19937_64& rng) override {
        kaiming_uniform(params_, spec_.in_channels * spec_.kernel, rng);
    }

protected:
    Tensor backward_impl(const Tensor& x, const Tensor& dy) override {
        return convtranspose1d_backward(x, dy, params_, spec_);
    }

private:
    LayerParams params_;
};

class ActivationLayer : public Layer {
public:
    explicit ActivationLayer(LayerSpec spec) : Layer(std::move(spec)) {}

    Shape output_shape(const Shape& in) const override { return in; }
    Tensor infer(const Tensor& x) const override { return activation_forward(x, spec_.activation); }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<ActivationLayer>(*this); }

protected:
    Tensor backward_impl(const Tensor& x, const Tensor& dy) override {
        return activation_backward(x, dy, spec_.activation);
    }
};

class FlattenLayer : public Layer {
public:
    explicit FlattenLayer(LayerSpec spec) : Layer(std::move(spec)) {}

    Shape output_shape(const Shape& in) const override { return {shape_volume(in)}; }
    Tensor infer(const Tensor& x) const override { return x.reshaped({x.dim(0), x.size() / x.dim(0)}); }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<FlattenLayer>(*this); }

protected:
    Tensor backward_impl(const Tensor& x, const Tensor& dy) override { return dy.reshaped(x.shape()); }
};

class ReshapeLayer : public Layer {
public:
    explicit ReshapeLayer(LayerSpec spec) : Layer(std::move(spec)) {}

    Shape output_shape(const Shape& in) const override {
        if (shape_volume(in) != shape_volume(spec_.target))
            throw GeometryError("reshape " + shape_string(in) + " -> " + shape_string(spec_.target));
        return spec_.target;
    }
    Tensor infer(const Tensor& x) const override {
        Shape s{x.dim(0)};
        s.insert(s.end(), spec_.target.begin(), spec_.target.end());
        return x.reshaped(std::move(s));
    }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<ReshapeLayer>(*this); }

protected:
    Tensor backward_impl(const Tensor& x, const Tensor& dy) override { return dy.reshaped(x.shape()); }
};

inline std::unique_ptr<Layer> make_layer(const LayerSpec& spec) {
    switch (spec.kind) {
    case LayerKind::dense: return std::make_unique<DenseLayer>(spec);
    case LayerKind::conv1d: return std::make_unique<Conv1dLayer>(spec);
    case LayerKind::convtranspose1d: return std::make_unique<ConvTranspose1dLayer>(spec);
    case LayerKind::activation: return std::make_unique<ActivationLayer>(spec);
    case LayerKind::flatten: return std::make_unique<FlattenLayer>(spec);
    case LayerKind::reshape: return std::make_unique<ReshapeLayer>(spec);
    }
    throw ConfigError("unknown layer kind");
}

} // namespace emvae::nn
