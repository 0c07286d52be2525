#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "kglm/errors.hpp"

namespace kglm {

// Dense row-major tensor. Most uses are 2-D (rows x cols); 1-D vectors are
// stored as shape {n}.
template <typename T>
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), T(0));
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) {
            if (d < 0) throw ShapeError("negative dimension");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
    int64_t cols() const {
        if (shape.size() == 1) return shape[0];
        int64_t c = 1;
        for (size_t i = 1; i < shape.size(); ++i) c *= shape[i];
        return c;
    }

    T* row(int64_t r) { return data.data() + r * cols(); }
    const T* row(int64_t r) const { return data.data() + r * cols(); }

    T& at(int64_t r, int64_t c) { return data[r * cols() + c]; }
    const T& at(int64_t r, int64_t c) const { return data[r * cols() + c]; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }
    void zero() { fill(T(0)); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (T v : t.data) {
        if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
}

template <typename T>
void require_finite(const Tensor<T>& t, const std::string& what) {
    if (!all_finite(t)) throw NumericError("non-finite values in " + what);
}

inline std::string shape_str(const std::vector<int64_t>& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

}  // namespace kglm
