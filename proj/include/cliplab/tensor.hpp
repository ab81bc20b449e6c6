#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "cliplab/common.hpp"

namespace cliplab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

/// Dense multidimensional array of reals, row-major. Rank 0 is a scalar.
/// Immutable by convention once handed to a Graph.
class Tensor {
public:
    Tensor() : shape_{}, data_(1, real(0)) {}

    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), real(0)) {}

    Tensor(Shape shape, std::vector<real> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_))
            throw std::invalid_argument("Tensor: data length does not match shape");
    }

    static Tensor scalar(real v) {
        Tensor t;
        t.data_[0] = v;
        return t;
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, real v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    static Tensor vector(std::vector<real> data) {
        Shape s{data.size()};
        return Tensor(std::move(s), std::move(data));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<real> data) {
        return Tensor(Shape{rows, cols}, std::move(data));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    bool is_scalar() const { return data_.size() == 1 && shape_.size() <= 1; }
    bool is_matrix() const { return shape_.size() == 2; }

    std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
    std::size_t cols() const { return shape_.size() == 2 ? shape_[1] : size(); }

    real* data() { return data_.data(); }
    const real* data() const { return data_.data(); }
    std::vector<real>& raw() { return data_; }
    const std::vector<real>& raw() const { return data_; }

    real& operator[](std::size_t i) { return data_[i]; }
    real operator[](std::size_t i) const { return data_[i]; }

    real& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    real at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (real v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    real l2_norm() const {
        real acc = 0;
        for (real v : data_) acc += v * v;
        return std::sqrt(acc);
    }

    real sum() const { return std::accumulate(data_.begin(), data_.end(), real(0)); }

    void fill(real v) { std::fill(data_.begin(), data_.end(), v); }

private:
    Shape shape_;
    std::vector<real> data_;
};

}  // namespace cliplab
