#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "dupless/errors.hpp"

namespace dupless {

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_string(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

/// Dense row-major tensor. The scalar type is a template parameter so the
/// whole network can be evaluated in double for finite-difference checks.
template <typename T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}
    Tensor(std::vector<std::size_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != shape_numel(shape))
            throw ShapeMismatch("tensor data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_string(shape));
    }

    std::size_t numel() const { return data.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    T& operator()(std::size_t i) { return data[i]; }
    T operator()(std::size_t i) const { return data[i]; }
    T& operator()(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    T operator()(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    T& operator()(std::size_t c, std::size_t h, std::size_t w) {
        return data[(c * shape[1] + h) * shape[2] + w];
    }
    T operator()(std::size_t c, std::size_t h, std::size_t w) const {
        return data[(c * shape[1] + h) * shape[2] + w];
    }
    T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    T operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

template <typename T>
inline void require_shape(const Tensor<T>& t, const std::vector<std::size_t>& shape,
                          const char* what) {
    if (t.shape != shape)
        throw ShapeMismatch(std::string(what) + ": expected " + shape_string(shape) + ", got " +
                            shape_string(t.shape));
}

template <typename T>
inline void require_rank(const Tensor<T>& t, std::size_t rank, const char* what) {
    if (t.shape.size() != rank)
        throw ShapeMismatch(std::string(what) + ": expected rank " + std::to_string(rank) +
                            ", got " + shape_string(t.shape));
}

}  // namespace dupless
