#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "emvae/nn/network.hpp"

namespace emvae::nn {

struct GradCheckEntry {
    static constexpr std::size_t input_set = std::numeric_limits<std::size_t>::max();

    std::size_t param_set = 0; // index into the checked parameter list, or input_set
    bool bias = false;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradCheckReport {
    double tolerance = 0.0;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::vector<GradCheckEntry> flagged;

    bool passed() const noexcept { return flagged.empty(); }

    void merge(const GradCheckReport& other) {
        max_rel_error = std::max(max_rel_error, other.max_rel_error);
        checked += other.checked;
        flagged.insert(flagged.end(), other.flagged.begin(), other.flagged.end());
    }
};

// |a - n| / max(|a|, |n|, floor). Central differences at h = 1e-6 carry
// roundoff near 1e-10 absolute, so entries that cancel to almost zero (or are
// exactly zero on dead relu paths) are compared against the floor instead.
inline double relative_error(double analytic, double numeric, double floor = 1e-4) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / scale;
}

struct FiniteDifferenceOptions {
    double step = 1e-6;
    double floor = 1e-4;
    // Check at most this many entries per tensor (0 = all), chosen by seed.
    std::size_t max_per_tensor = 0;
    std::uint64_t seed = 0;
};

// Central differences of `loss` against the gradients already accumulated in
// `params`. `loss` must be a pure function of the current parameter values.
inline GradCheckReport finite_difference_check(const std::vector<LayerParams*>& params,
                                               const std::function<double()>& loss, double tolerance,
                                               const FiniteDifferenceOptions& opt = {}) {
    GradCheckReport report;
    report.tolerance = tolerance;
    std::mt19937_64 rng(opt.seed);
    auto check_tensor = [&](std::size_t set, bool bias, Tensor& values, const Tensor& grads) {
        std::vector<std::size_t> idx(values.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        if (opt.max_per_tensor != 0 && idx.size() > opt.max_per_tensor) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(opt.max_per_tensor);
            std::sort(idx.begin(), idx.end());
        }
        for (auto i : idx) {
            const double saved = values[i];
            values[i] = saved + opt.step;
            const double up = loss();
            values[i] = saved - opt.step;
            const double down = loss();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * opt.step);
            const double rel = relative_error(grads[i], numeric, opt.floor);
            ++report.checked;
            report.max_rel_error = std::max(report.max_rel_error, rel);
            if (!(rel < tolerance)) report.flagged.push_back({set, bias, i, grads[i], numeric, rel});
        }
    };
    for (std::size_t s = 0; s < params.size(); ++s) {
        check_tensor(s, false, params[s]->weights, params[s]->weight_grad);
        check_tensor(s, true, params[s]->biases, params[s]->bias_grad);
    }
    return report;
}

// Checks a network against the scalar loss L = sum(r * f(x)) for a fixed
// seeded projection r. Both parameter and input gradients are verified.
inline GradCheckReport grad_check(Network& net, const Tensor& input, double tolerance,
                                  const FiniteDifferenceOptions& opt = {}) {
    const Tensor probe_out = net.infer(input);
    std::mt19937_64 rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Tensor projection(probe_out.shape());
    for (auto& v : projection.storage()) v = dist(rng);

    net.zero_grad();
    net.forward(input);
    const Tensor input_grad = net.backward(projection);

    auto params = net.params();
    Tensor x = input;
    auto loss = [&]() { return dot(net.infer(x), projection); };
    GradCheckReport report = finite_difference_check(params, loss, tolerance, opt);

    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + opt.step;
        const double up = loss();
        x[i] = saved - opt.step;
        const double down = loss();
        x[i] = saved;
        const double numeric = (up - down) / (2.0 * opt.step);
        const double rel = relative_error(input_grad[i], numeric, opt.floor);
        ++report.checked;
        report.max_rel_error = std::max(report.max_rel_error, rel);
        if (!(rel < tolerance))
            report.flagged.push_back({GradCheckEntry::input_set, false, i, input_grad[i], numeric, rel});
    }
    net.zero_grad();
    return report;
}

} // namespace emvae::nn
