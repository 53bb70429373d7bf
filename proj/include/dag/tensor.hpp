#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "dag/errors.hpp"

namespace dag::nn {

/// Dense row-major matrix. Scalar type S is float in training mode and
/// double in gradient-checking mode; the two never mix inside one graph.
template <typename S>
struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<S> data;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, S(0)) {
        if (r == 0 || c == 0) throw InputError("tensor dimensions must be positive");
    }
    Tensor(std::size_t r, std::size_t c, std::vector<S> values)
        : rows(r), cols(c), data(std::move(values)) {
        if (r == 0 || c == 0) throw InputError("tensor dimensions must be positive");
        if (data.size() != r * c)
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(r, c));
    }

    static Tensor zeros(std::size_t r, std::size_t c) { return Tensor(r, c); }
    static Tensor full(std::size_t r, std::size_t c, S v) {
        Tensor t(r, c);
        for (auto& x : t.data) x = v;
        return t;
    }
    static Tensor scalar(S v) { return Tensor(1, 1, {v}); }

    std::size_t numel() const { return data.size(); }

    S& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    S at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    S* row_ptr(std::size_t r) { return data.data() + r * cols; }
    const S* row_ptr(std::size_t r) const { return data.data() + r * cols; }

    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (S v : data)
            if (!std::isfinite(double(v))) return false;
        return true;
    }

    std::string shape_str() const { return shape_str(rows, cols); }
    static std::string shape_str(std::size_t r, std::size_t c) {
        return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
    }

    bool operator==(const Tensor& o) const {
        return rows == o.rows && cols == o.cols && data == o.data;
    }
};

template <typename S>
inline void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
}

template <typename S>
inline void require_finite(const Tensor<S>& t, const char* op) {
    if (!t.all_finite())
        throw NumericError(std::string(op) + ": non-finite value in output " + t.shape_str());
}

}  // namespace dag::nn
