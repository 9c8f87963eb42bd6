#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "emvae/nn/layers.hpp"

namespace emvae::nn {

// Ordered stack of layers with a fixed per-sample input shape. Geometry is
// checked once at construction so a mismatched stack never reaches forward().
class Network {
public:
    Network() = default;

    Network(Shape input_shape, const std::vector<LayerSpec>& specs) : input_shape_(std::move(input_shape)) {
        output_shape_ = input_shape_;
        for (const auto& s : specs) add(make_layer(s));
    }

    Network(const Network& other) : input_shape_(other.input_shape_), output_shape_(other.output_shape_) {
        layers_.reserve(other.layers_.size());
        for (const auto& l : other.layers_) layers_.push_back(l->clone());
    }
    Network& operator=(const Network& other) {
        if (this != &other) {
            Network tmp(other);
            *this = std::move(tmp);
        }
        return *this;
    }
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;

    void add(std::unique_ptr<Layer> layer) {
        if (layers_.empty() && output_shape_.empty()) output_shape_ = input_shape_;
        output_shape_ = layer->output_shape(output_shape_);
        layers_.push_back(std::move(layer));
    }

    void initialize(std::mt19937_64& rng) {
        for (auto& l : layers_) l->initialize(rng);
    }

    const Shape& input_shape() const noexcept { return input_shape_; }
    const Shape& output_shape() const noexcept { return output_shape_; }
    std::size_t size() const noexcept { return layers_.size(); }
    Layer& layer(std::size_t i) { return *layers_.at(i); }
    const Layer& layer(std::size_t i) const { return *layers_.at(i); }

    Tensor infer(const Tensor& x) const {
        check_input(x);
        Tensor h = x;
        for (const auto& l : layers_) h = l->infer(h);
        return h;
    }

    Tensor forward(const Tensor& x) {
        check_input(x);
        Tensor h = x;
        for (auto& l : layers_) h = l->forward(h);
        return h;
    }

    // Accumulates parameter gradients and returns d(loss)/d(input).
    Tensor backward(const Tensor& dy) {
        Tensor g = dy;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
        return g;
    }

    std::vector<LayerParams*> params() {
        std::vector<LayerParams*> out;
        for (auto& l : layers_)
            if (auto* p = l->params()) out.push_back(p);
        return out;
    }
    std::vector<const LayerParams*> params() const {
        std::vector<const LayerParams*> out;
        for (const auto& l : layers_)
            if (const auto* p = l->params()) out.push_back(p);
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto* p : params()) n += p->count();
        return n;
    }

    void zero_grad() {
        for (auto* p : params()) p->zero_grad();
    }

    void clear_cache() {
        for (auto& l : layers_) l->clear_cache();
    }

private:
    void check_input(const Tensor& x) const {
        if (x.rank() != input_shape_.size() + 1)
            throw DimensionError("network expects per-sample shape " + shape_string(input_shape_) + ", got " +
                                 shape_string(x.shape()));
        for (std::size_t i = 0; i < input_shape_.size(); ++i)
            if (x.dim(i + 1) != input_shape_[i])
                throw DimensionError("network expects per-sample shape " + shape_string(input_shape_) +
                                     ", got " + shape_string(x.shape()));
        require_finite(x, "network input");
    }

    Shape input_shape_;
    Shape output_shape_;
    std::vector<std::unique_ptr<Layer>> layers_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

inline bool grads_finite(const LayerParams& p) { return p.weight_grad.all_finite() && p.bias_grad.all_finite(); }

// Bias-corrected Adam update; zeroes the gradients afterwards.
inline void adam_step(LayerParams& p, const AdamConfig& cfg) {
    if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (!grads_finite(p)) throw NumericError("non-finite gradient in Adam step");
    ++p.step_count;
    const double t = static_cast<double>(p.step_count);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    auto update = [&](Tensor& w, Tensor& g, Tensor& m, Tensor& v) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
        g.fill(0.0);
    };
    update(p.weights, p.weight_grad, p.weight_m, p.weight_v);
    update(p.biases, p.bias_grad, p.bias_m, p.bias_v);
}

// Applies Adam to every parameter set, checking all gradients first so a bad
// batch leaves the parameters untouched.
inline void adam_step(const std::vector<LayerParams*>& params, const AdamConfig& cfg) {
    for (const auto* p : params)
        if (!grads_finite(*p)) throw NumericError("non-finite gradient in Adam step");
    for (auto* p : params) adam_step(*p, cfg);
}

} // namespace emvae::nn
