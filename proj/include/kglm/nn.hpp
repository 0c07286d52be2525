#pragma once

#include <cmath>

#include "kglm/tensor.hpp"

// Dense kernels for the encoder. Loop orders are chosen so the inner loop
// runs over contiguous memory of the output row and auto-vectorizes.

namespace kglm::nn {

// y = x W + b. x: (m, in), W: (in, out) row-major, b: (out) or empty.
template <typename T>
void linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, Tensor<T>& y) {
    const int64_t m = x.rows(), in = x.cols(), out = w.cols();
    y.shape = {m, out};
    y.data.assign(static_cast<size_t>(m * out), T(0));
    for (int64_t i = 0; i < m; ++i) {
        const T* __restrict xi = x.row(i);
        T* __restrict yi = y.row(i);
        if (b.numel()) {
            const T* __restrict bp = b.data.data();
            for (int64_t j = 0; j < out; ++j) yi[j] = bp[j];
        }
        for (int64_t k = 0; k < in; ++k) {
            const T xv = xi[k];
            const T* __restrict wk = w.row(k);
            for (int64_t j = 0; j < out; ++j) yi[j] += xv * wk[j];
        }
    }
}

// Backward of linear. dx += dy W^T, dW += x^T dy, db += colsum(dy).
// Any of the grad outputs may be null to skip its accumulation. dx runs off
// a transposed weight scratch so the inner loop stays contiguous.
template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>* dx,
                     Tensor<T>* dw, Tensor<T>* db) {
    const int64_t m = x.rows(), in = x.cols(), out = w.cols();
    if (dx) {
        static thread_local std::vector<T> wt;
        wt.resize(static_cast<size_t>(in * out));
        for (int64_t k = 0; k < in; ++k) {
            const T* __restrict wk = w.row(k);
            for (int64_t j = 0; j < out; ++j) wt[j * in + k] = wk[j];
        }
        for (int64_t i = 0; i < m; ++i) {
            const T* __restrict dyi = dy.row(i);
            T* __restrict dxi = dx->row(i);
            for (int64_t j = 0; j < out; ++j) {
                const T d = dyi[j];
                const T* __restrict wtj = wt.data() + j * in;
                for (int64_t k = 0; k < in; ++k) dxi[k] += d * wtj[k];
            }
        }
    }
    if (dw) {
        for (int64_t i = 0; i < m; ++i) {
            const T* __restrict xi = x.row(i);
            const T* __restrict dyi = dy.row(i);
            for (int64_t k = 0; k < in; ++k) {
                const T xv = xi[k];
                T* __restrict dwk = dw->row(k);
                for (int64_t j = 0; j < out; ++j) dwk[j] += xv * dyi[j];
            }
        }
    }
    if (db) {
        T* __restrict dbp = db->data.data();
        for (int64_t i = 0; i < m; ++i) {
            const T* __restrict dyi = dy.row(i);
            for (int64_t j = 0; j < out; ++j) dbp[j] += dyi[j];
        }
    }
}

inline constexpr double kLnEps = 1e-5;

// Per-row layer norm: y = gamma * (x - mu) / sqrt(var + eps) + beta.
// Caches the normalized rows and 1/sigma for backward.
template <typename T>
struct LayerNormCache {
    Tensor<T> normed;     // x-hat
    std::vector<T> rstd;  // per row
};

template <typename T>
void layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& y,
                LayerNormCache<T>& cache) {
    const int64_t m = x.rows(), d = x.cols();
    y.shape = {m, d};
    y.data.resize(static_cast<size_t>(m * d));
    cache.normed.shape = {m, d};
    cache.normed.data.resize(static_cast<size_t>(m * d));
    cache.rstd.resize(static_cast<size_t>(m));
    for (int64_t i = 0; i < m; ++i) {
        const T* __restrict xi = x.row(i);
        T mu = T(0);
        for (int64_t j = 0; j < d; ++j) mu += xi[j];
        mu /= static_cast<T>(d);
        T var = T(0);
        for (int64_t j = 0; j < d; ++j) {
            T c = xi[j] - mu;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T rstd = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
        cache.rstd[i] = rstd;
        T* __restrict ni = cache.normed.row(i);
        T* __restrict yi = y.row(i);
        const T* __restrict g = gamma.data.data();
        const T* __restrict bt = beta.data.data();
        for (int64_t j = 0; j < d; ++j) {
            ni[j] = (xi[j] - mu) * rstd;
            yi[j] = ni[j] * g[j] + bt[j];
        }
    }
}

template <typename T>
void layer_norm_backward(const LayerNormCache<T>& cache, const Tensor<T>& gamma,
                         const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dgamma,
                         Tensor<T>* dbeta) {
    const int64_t m = dy.rows(), d = dy.cols();
    for (int64_t i = 0; i < m; ++i) {
        const T* __restrict dyi = dy.row(i);
        const T* __restrict ni = cache.normed.row(i);
        if (dgamma) {
            T* __restrict dg = dgamma->data.data();
            for (int64_t j = 0; j < d; ++j) dg[j] += dyi[j] * ni[j];
        }
        if (dbeta) {
            T* __restrict dbp = dbeta->data.data();
            for (int64_t j = 0; j < d; ++j) dbp[j] += dyi[j];
        }
        if (dx) {
            const T* __restrict g = gamma.data.data();
            T mean_g = T(0), mean_gn = T(0);
            for (int64_t j = 0; j < d; ++j) {
                const T gv = dyi[j] * g[j];
                mean_g += gv;
                mean_gn += gv * ni[j];
            }
            mean_g /= static_cast<T>(d);
            mean_gn /= static_cast<T>(d);
            T* __restrict dxi = dx->row(i);
            const T rstd = cache.rstd[i];
            for (int64_t j = 0; j < d; ++j) {
                const T gv = dyi[j] * g[j];
                dxi[j] += (gv - mean_g - ni[j] * mean_gn) * rstd;
            }
        }
    }
}

// Exact GELU: x * Phi(x).
template <typename T>
T gelu(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * T(0.7071067811865475)));
}

template <typename T>
T gelu_grad(T x) {
    const T phi = std::exp(T(-0.5) * x * x) * T(0.3989422804014327);
    const T Phi = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475)));
    return Phi + x * phi;
}

template <typename T>
void gelu_forward(const Tensor<T>& x, Tensor<T>& y) {
    y.shape = x.shape;
    y.data.resize(x.data.size());
    for (size_t i = 0; i < x.data.size(); ++i) y.data[i] = gelu(x.data[i]);
}

template <typename T>
void gelu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx) {
    for (size_t i = 0; i < x.data.size(); ++i) dx.data[i] += dy.data[i] * gelu_grad(x.data[i]);
}

// Numerically stable in-place softmax over a contiguous row.
template <typename T>
void softmax_row(T* z, int64_t n) {
    T mx = z[0];
    for (int64_t i = 1; i < n; ++i) mx = std::max(mx, z[i]);
    T sum = T(0);
    for (int64_t i = 0; i < n; ++i) {
        z[i] = std::exp(z[i] - mx);
        sum += z[i];
    }
    const T inv = T(1) / sum;
    for (int64_t i = 0; i < n; ++i) z[i] *= inv;
}

// dz = p * (dp - sum(dp * p)), written into dp in place.
template <typename T>
void softmax_backward_row(const T* p, T* dp, int64_t n) {
    T dot = T(0);
    for (int64_t i = 0; i < n; ++i) dot += dp[i] * p[i];
    for (int64_t i = 0; i < n; ++i) dp[i] = p[i] * (dp[i] - dot);
}

}  // namespace kglm::nn
