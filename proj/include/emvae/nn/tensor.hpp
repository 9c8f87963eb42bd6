#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "emvae/error.hpp"

namespace emvae::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_volume(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

// Dense row-major array of doubles.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
        for (auto e : shape_)
            if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape_));
        data_.assign(shape_volume(shape_), fill);
    }

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        for (auto e : shape_)
            if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape_));
        if (data_.size() != shape_volume(shape_))
            throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                                 shape_string(shape_));
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        std::vector<double> data;
        std::size_t cols = rows.size() ? rows.begin()->size() : 0;
        for (const auto& r : rows) {
            if (r.size() != cols) throw DimensionError("ragged matrix literal");
            data.insert(data.end(), r.begin(), r.end());
        }
        return Tensor({rows.size(), cols}, std::move(data));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    double& at(std::size_t a, std::size_t b, std::size_t c) { return data_[(a * shape_[1] + b) * shape_[2] + c]; }
    double at(std::size_t a, std::size_t b, std::size_t c) const {
        return data_[(a * shape_[1] + b) * shape_[2] + c];
    }

    // Same data, new extents of equal volume.
    Tensor reshaped(Shape shape) const {
        if (shape_volume(shape) != data_.size())
            throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        return Tensor(std::move(shape), data_);
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

inline void require_finite(const Tensor& t, const char* where) {
    if (!t.all_finite()) throw NumericError(std::string("non-finite values entering ") + where);
}

inline double dot(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw DimensionError("dot of unequal sizes");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace emvae::nn
