#pragma once

#include <cblas.h>

#include <cmath>
#include <functional>
#include <vector>

#include "bridge/tensor.hpp"

namespace bridge {

inline void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha,
                 const float* a, int64_t lda, const float* b, int64_t ldb, float beta,
                 float* c, int64_t ldc) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                (int)m, (int)n, (int)k, alpha, a, (int)lda, b, (int)ldb, beta, c, (int)ldc);
}
inline void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, double alpha,
                 const double* a, int64_t lda, const double* b, int64_t ldb, double beta,
                 double* c, int64_t ldc) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                (int)m, (int)n, (int)k, alpha, a, (int)lda, b, (int)ldb, beta, c, (int)ldc);
}

// Per-token rotation table for rotary position channels. cosv/sinv hold one
// entry per (token, channel pair); the same table is applied to every head.
template <typename T>
struct RopeTable {
    int64_t tokens = 0;
    int64_t pairs = 0;  // channel pairs per head
    std::vector<T> cosv, sinv;
};

// Branch-free expf for the float tape path (softmax, sigmoid, silu). Cody-Waite
// range reduction + degree-6 polynomial, max relative error ~2e-7. Exact at 0.
// Auto-vectorizes; clamps below -87 instead of flushing to 0.
inline float tr_exp(float x) {
    x = std::min(std::max(x, -87.0f), 88.0f);
    float n = std::floor(x * 1.44269504088896341f + 0.5f);
    float r = x - n * 0.693359375f;
    r -= n * -2.12194440e-4f;
    float p = 1.9875691500e-4f;
    p = p * r + 1.3981999507e-3f;
    p = p * r + 8.3334519073e-3f;
    p = p * r + 4.1665795894e-2f;
    p = p * r + 1.6666665459e-1f;
    p = p * r + 5.0000001201e-1f;
    p = p * r * r + r + 1.0f;
    int32_t e = ((int32_t)n + 127) << 23;
    float s;
    std::memcpy(&s, &e, sizeof(s));
    return p * s;
}
inline double tr_exp(double x) { return std::exp(x); }

using Var = int32_t;

// Reverse-mode tape. Operations append nodes in execution order; backward
// replays the closures once, in reverse record order, accumulating gradients
// by summation. Single-writer: a tape must not be mutated concurrently.
template <typename T>
class Tape {
public:
    explicit Tape(bool enable_grad = true, bool strict = false)
        : grad_(enable_grad), strict_(strict) {}

    bool grad_enabled() const { return grad_; }

    Var leaf(Tensor<T> v) {
        if (strict_) check_finite(v, "leaf");
        return push(std::move(v), nullptr);
    }

    const Tensor<T>& val(Var v) const { return nodes_[static_cast<size_t>(v)].value; }
    const Tensor<T>& grad(Var v) const { return grads_[static_cast<size_t>(v)]; }
    size_t num_nodes() const { return nodes_.size(); }

    // ---- elementwise binary (exact-match or size-1 broadcast, equal rank) ----

    Var add(Var a, Var b) { return binary(a, b, BinOp::Add); }
    Var sub(Var a, Var b) { return binary(a, b, BinOp::Sub); }
    Var mul(Var a, Var b) { return binary(a, b, BinOp::Mul); }

    // y = alpha * x + beta
    Var affine(Var a, T alpha, T beta) {
        const Tensor<T>& x = val(a);
        Tensor<T> y = x;
        for (auto& v : y.data) v = alpha * v + beta;
        return push(std::move(y), [this, a, alpha](Var out) {
            accumulate_scaled(a, grads_[(size_t)out], alpha);
        });
    }

    // ---- matmul ----

    Var matmul(Var a, Var b) {
        const Tensor<T>& A = val(a);
        const Tensor<T>& B = val(b);
        if (A.rank() != 2 || B.rank() != 2 || A.shape[1] != B.shape[0])
            throw ShapeError("matmul: incompatible shapes " + shape_str(A.shape) + " x " +
                             shape_str(B.shape));
        int64_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
        Tensor<T> y = Tensor<T>::uninit({m, n});
        gemm(false, false, m, n, k, T(1), A.data.data(), k, B.data.data(), n, T(0),
             y.data.data(), n);
        return push(std::move(y), [this, a, b, m, k, n](Var out) {
            const Tensor<T>& g = grads_[(size_t)out];
            const Tensor<T>& A2 = val(a);
            const Tensor<T>& B2 = val(b);
            Tensor<T>& ga = grad_buf(a);
            Tensor<T>& gb = grad_buf(b);
            gemm(false, true, m, k, n, T(1), g.data.data(), n, B2.data.data(), n, T(1),
                 ga.data.data(), k);
            gemm(true, false, k, n, m, T(1), A2.data.data(), k, g.data.data(), n, T(1),
                 gb.data.data(), n);
        });
    }

    // batched matmul: alpha * [B,M,K] x [B,K,N] -> [B,M,N]
    Var bmm(Var a, Var b, T alpha = T(1)) {
        const Tensor<T>& A = val(a);
        const Tensor<T>& B = val(b);
        if (A.rank() != 3 || B.rank() != 3 || A.shape[0] != B.shape[0] ||
            A.shape[2] != B.shape[1])
            throw ShapeError("bmm: incompatible shapes " + shape_str(A.shape) + " x " +
                             shape_str(B.shape));
        int64_t bs = A.shape[0], m = A.shape[1], k = A.shape[2], n = B.shape[2];
        Tensor<T> y = Tensor<T>::uninit({bs, m, n});
        for (int64_t i = 0; i < bs; ++i)
            gemm(false, false, m, n, k, alpha, A.data.data() + i * m * k, k,
                 B.data.data() + i * k * n, n, T(0), y.data.data() + i * m * n, n);
        return push(std::move(y), [this, a, b, bs, m, k, n, alpha](Var out) {
            const Tensor<T>& g = grads_[(size_t)out];
            const Tensor<T>& A2 = val(a);
            const Tensor<T>& B2 = val(b);
            Tensor<T>& ga = grad_buf(a);
            Tensor<T>& gb = grad_buf(b);
            for (int64_t i = 0; i < bs; ++i) {
                gemm(false, true, m, k, n, alpha, g.data.data() + i * m * n, n,
                     B2.data.data() + i * k * n, n, T(1), ga.data.data() + i * m * k, k);
                gemm(true, false, k, n, m, alpha, A2.data.data() + i * m * k, k,
                     g.data.data() + i * m * n, n, T(1), gb.data.data() + i * k * n, n);
            }
        });
    }

    // ---- shape ops ----

    Var reshape(Var a, Shape s) {
        const Tensor<T>& x = val(a);
        if (numel(s) != x.size())
            throw ShapeError("reshape: " + shape_str(x.shape) + " -> " + shape_str(s) +
                             " changes element count");
        Tensor<T> y(std::move(s), x.data);
        return push(std::move(y), [this, a](Var out) {
            const Tensor<T>& g = grads_[(size_t)out];
            Tensor<T>& ga = grad_buf(a);
            for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }

    Var transpose(Var a, int64_t d0, int64_t d1) {
        const Tensor<T>& x = val(a);
        Tensor<T> y = transpose_value(x, d0, d1);
        return push(std::move(y), [this, a, d0, d1](Var out) {
            Tensor<T> gt = transpose_value(grads_[(size_t)out], d0, d1);
            accumulate(a, gt);
        });
    }

    Var slice(Var a, int64_t axis, int64_t start, int64_t len) {
        const Tensor<T>& x = val(a);
        if (axis < 0 || axis >= x.rank() || start < 0 || len < 0 ||
            start + len > x.shape[axis])
            throw ShapeError("slice: range [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") out of bounds for axis " +
                             std::to_string(axis) + " of " + shape_str(x.shape));
        int64_t outer = 1, inner = 1;
        for (int64_t i = 0; i < axis; ++i) outer *= x.shape[i];
        for (int64_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape[i];
        Shape os = x.shape;
        os[axis] = len;
        Tensor<T> y = Tensor<T>::uninit(os);
        int64_t ax = x.shape[axis];
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(y.data.data() + o * len * inner,
                        x.data.data() + (o * ax + start) * inner,
                        static_cast<size_t>(len * inner) * sizeof(T));
        return push(std::move(y), [this, a, axis, start, len, outer, inner, ax](Var out) {
            const Tensor<T>& g = grads_[(size_t)out];
            Tensor<T>& ga = grad_buf(a);
            for (int64_t o = 0; o < outer; ++o) {
                const T* src = g.data.data() + o * len * inner;
                T* dst = ga.data.data() + (o * ax + start) * inner;
                for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
            }
        });
    }

    Var concat(const std::vector<Var>& parts, int64_t axis) {
        if (parts.empty()) throw ShapeError("concat: no operands");
        const Tensor<T>& first = val(parts[0]);
        Shape os = first.shape;
        int64_t total = 0;
        for (Var p : parts) {
            const Tensor<T>& x = val(p);
            if (x.rank() != first.rank()) throw ShapeError("concat: rank mismatch");
            for (int64_t i = 0; i < x.rank(); ++i)
                if (i != axis && x.shape[i] != os[i])
                    throw ShapeError("concat: shape mismatch " + shape_str(x.shape) +
                                     " vs " + shape_str(os));
            total += x.shape[axis];
        }
        os[axis] = total;
        int64_t outer = 1, inner = 1;
        for (int64_t i = 0; i < axis; ++i) outer *= os[i];
        for (int64_t i = axis + 1; i < (int64_t)os.size(); ++i) inner *= os[i];
        Tensor<T> y = Tensor<T>::uninit(os);
        int64_t off = 0;
        for (Var p : parts) {
            const Tensor<T>& x = val(p);
            int64_t ax = x.shape[axis];
            for (int64_t o = 0; o < outer; ++o)
                std::memcpy(y.data.data() + (o * total + off) * inner,
                            x.data.data() + o * ax * inner,
                            static_cast<size_t>(ax * inner) * sizeof(T));
            off += ax;
        }
        std::vector<Var> ps = parts;
        return push(std::move(y),
                    [this, ps, axis, total, outer, inner](Var out) {
                        const Tensor<T>& g = grads_[(size_t)out];
                        int64_t off2 = 0;
                        for (Var p : ps) {
                            const Tensor<T>& x = val(p);
                            int64_t ax = x.shape[axis];
                            Tensor<T>& gp = grad_buf(p);
                            for (int64_t o = 0; o < outer; ++o) {
                                const T* src = g.data.data() + (o * total + off2) * inner;
                                T* dst = gp.data.data() + o * ax * inner;
                                for (int64_t i = 0; i < ax * inner; ++i) dst[i] += src[i];
                            }
                            off2 += ax;
                        }
                    });
    }

    // ---- pointwise nonlinearities ----

    Var exp_(Var a) {
        Tensor<T> y = val(a);
        for (auto& v : y.data) v = (T)std::exp((double)v);  // double exp: faster than expf here
        return push(std::move(y), [this, a](Var out) {
            const Tensor<T>& g = grads_[(size_t)out];
            const Tensor<T>& y2 = val(out);
            Tensor<T>& ga = grad_buf(a);
            for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y2[i];
        });
    }

    Var sigmoid(Var a) {
        Tensor<T> y = val(a);
        for (auto& v : y.data) v = T(1) / (T(1) + tr_exp(-v));
        return push(std::move(y), [this, a](Var out) {
            const Tensor<T>& g = grads_[(size_t)out];
            const Tensor<T>& y2 = val(out);
            Tensor<T>& ga = grad_buf(a);
            for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y2[i] * (T(1) - y2[i]);
        });
    }

    Var silu(Var a) {
        const Tensor<T>& x = val(a);
        Tensor<T> y = x;
        for (auto& v : y.data) v = v / (T(1) + tr_exp(-v));
        return push(std::move(y), [this, a](Var out) {
            const Tensor<T>& g = grads_[(size_t)out];
            const Tensor<T>& x2 = val(a);
            Tensor<T>& ga = grad_buf(a);
            for (int64_t i = 0; i < g.size(); ++i) {
                T s = T(1) / (T(1) + tr_exp(-x2[i]));
                ga[i] += g[i] * s * (T(1) + x2[i] * (T(1) - s));
            }
        });
    }

    // Hard threshold at 0.5 with straight-through backward (dG/dp treated as 1).
    Var ste_threshold(Var a) {
        Tensor<T> y = val(a);
        for (auto& v : y.data) v = (v >= T(0.5)) ? T(1) : T(0);
        return push(std::move(y), [this, a](Var out) {
            accumulate(a, grads_[(size_t)out]);
        });
    }

    // ---- row-wise ops over the last axis ----

    // Softmax over the last axis with optional additive mask (same shape, or
    // batch axis of size 1 broadcast over a rank-3 input). -inf mask entries
    // produce exactly zero weight.
    Var softmax_lastdim(Var a, const Tensor<T>* addmask = nullptr) {
        const Tensor<T>& x = val(a);
        int64_t d = x.shape.back();
        int64_t rows = x.size() / d;
        int64_t mask_rows = 0;
        if (addmask) {
            if (addmask->shape.back() != d)
                throw ShapeError("softmax: mask last axis " + shape_str(addmask->shape) +
                                 " vs input " + shape_str(x.shape));
            mask_rows = addmask->size() / d;
            if (rows % mask_rows != 0)
                throw ShapeError("softmax: mask rows do not divide input rows");
        }
        Tensor<T> y = Tensor<T>::uninit(x.shape);
        for (int64_t r = 0; r < rows; ++r) {
            const T* xr = x.data.data() + r * d;
            const T* mr = addmask ? addmask->data.data() + (r % mask_rows) * d : nullptr;
            T* yr = y.data.data() + r * d;
            T mx = -std::numeric_limits<T>::infinity();
            if (mr) {
                for (int64_t j = 0; j < d; ++j) {
                    T l = xr[j] + mr[j];
                    if (l > mx) mx = l;
                }
                for (int64_t j = 0; j < d; ++j) {
                    T l = xr[j] + mr[j];
                    yr[j] = std::isinf(l) && l < 0 ? T(0) : tr_exp(l - mx);
                }
            } else {
                T pm[8];
                for (int64_t u = 0; u < 8; ++u) pm[u] = mx;
                int64_t jm = 0;
                for (; jm + 8 <= d; jm += 8)
                    for (int64_t u = 0; u < 8; ++u)
                        if (xr[jm + u] > pm[u]) pm[u] = xr[jm + u];
                for (; jm < d; ++jm)
                    if (xr[jm] > pm[(size_t)(jm % 8)]) pm[(size_t)(jm % 8)] = xr[jm];
                for (int64_t u = 0; u < 8; ++u)
                    if (pm[u] > mx) mx = pm[u];
                for (int64_t j = 0; j < d; ++j) yr[j] = tr_exp(xr[j] - mx);
            }
            // 8 partial accumulators: breaks the add latency chain, fixed order
            T part[8] = {};
            int64_t j = 0;
            for (; j + 8 <= d; j += 8)
                for (int64_t u = 0; u < 8; ++u) part[u] += yr[j + u];
            for (; j < d; ++j) part[(size_t)(j % 8)] += yr[j];
            T sum = ((part[0] + part[1]) + (part[2] + part[3])) +
                    ((part[4] + part[5]) + (part[6] + part[7]));
            if (sum <= T(0)) throw NumericError("softmax: fully masked row");
            T inv = T(1) / sum;
            for (int64_t k2 = 0; k2 < d; ++k2) yr[k2] *= inv;
        }
        return push(std::move(y), [this, a, d, rows](Var out) {
            const Tensor<T>& g = grads_[(size_t)out];
            const Tensor<T>& y2 = val(out);
            Tensor<T>& ga = grad_buf(a);
            for (int64_t r = 0; r < rows; ++r) {
                const T* gr = g.data.data() + r * d;
                const T* yr = y2.data.data() + r * d;
                T* gar = ga.data.data() + r * d;
                T part[8] = {};
                int64_t j = 0;
                for (; j + 8 <= d; j += 8)
                    for (int64_t u = 0; u < 8; ++u) part[u] += gr[j + u] * yr[j + u];
                for (; j < d; ++j) part[(size_t)(j % 8)] += gr[j] * yr[j];
                T dot = ((part[0] + part[1]) + (part[2] + part[3])) +
                        ((part[4] + part[5]) + (part[6] + part[7]));
                for (int64_t k2 = 0; k2 < d; ++k2) gar[k2] += yr[k2] * (gr[k2] - dot);
            }
        });
    }

    // y = x / rms(x) * gain, rms over the last axis.
    Var rmsnorm_lastdim(Var a, Var gain, T eps = T(1e-6)) {
        const Tensor<T>& x = val(a);
        const Tensor<T>& g = val(gain);
        int64_t d = x.shape.back();
        if (g.size() != d) throw ShapeError("rmsnorm: gain size mismatch");
        int64_t rows = x.size() / d;
        Tensor<T> y = Tensor<T>::uninit(x.shape);
        std::vector<T> rms(static_cast<size_t>(rows));
        for (int64_t r = 0; r < rows; ++r) {
            const T* xr = x.data.data() + r * d;
            T ss = 0;
            for (int64_t j = 0; j < d; ++j) ss += xr[j] * xr[j];
            T rv = std::sqrt(ss / T(d) + eps);
            rms[(size_t)r] = rv;
            T* yr = y.data.data() + r * d;
            for (int64_t j = 0; j < d; ++j) yr[j] = xr[j] / rv * g[j];
        }
        return push(std::move(y), [this, a, gain, d, rows, rms](Var out) {
            const Tensor<T>& go = grads_[(size_t)out];
            const Tensor<T>& x2 = val(a);
            const Tensor<T>& g2 = val(gain);
            Tensor<T>& ga = grad_buf(a);
            Tensor<T>& gg = grad_buf(gain);
            for (int64_t r = 0; r < rows; ++r) {
                const T* xr = x2.data.data() + r * d;
                const T* gor = go.data.data() + r * d;
                T rv = rms[(size_t)r];
                T dot = 0;  // sum_k go_k * g_k * x_k
                for (int64_t j = 0; j < d; ++j) dot += gor[j] * g2[j] * xr[j];
                T c = dot / (T(d) * rv * rv * rv);
                T* gar = ga.data.data() + r * d;
                for (int64_t j = 0; j < d; ++j) {
                    gar[j] += gor[j] * g2[j] / rv - xr[j] * c;
                    gg[j] += gor[j] * xr[j] / rv;
                }
            }
        });
    }

    Var layernorm_lastdim(Var a, Var gain, Var bias, T eps = T(1e-6)) {
        const Tensor<T>& x = val(a);
        const Tensor<T>& g = val(gain);
        const Tensor<T>& b = val(bias);
        int64_t d = x.shape.back();
        if (g.size() != d || b.size() != d) throw ShapeError("layernorm: affine size mismatch");
        int64_t rows = x.size() / d;
        Tensor<T> y = Tensor<T>::uninit(x.shape);
        std::vector<T> mu((size_t)rows), inv((size_t)rows);
        for (int64_t r = 0; r < rows; ++r) {
            const T* xr = x.data.data() + r * d;
            T m = 0;
            for (int64_t j = 0; j < d; ++j) m += xr[j];
            m /= T(d);
            T v = 0;
            for (int64_t j = 0; j < d; ++j) v += (xr[j] - m) * (xr[j] - m);
            v /= T(d);
            T iv = T(1) / std::sqrt(v + eps);
            mu[(size_t)r] = m;
            inv[(size_t)r] = iv;
            T* yr = y.data.data() + r * d;
            for (int64_t j = 0; j < d; ++j) yr[j] = (xr[j] - m) * iv * g[j] + b[j];
        }
        return push(std::move(y), [this, a, gain, bias, d, rows, mu, inv](Var out) {
            const Tensor<T>& go = grads_[(size_t)out];
            const Tensor<T>& x2 = val(a);
            const Tensor<T>& g2 = val(gain);
            Tensor<T>& ga = grad_buf(a);
            Tensor<T>& gg = grad_buf(gain);
            Tensor<T>& gb = grad_buf(bias);
            for (int64_t r = 0; r < rows; ++r) {
                const T* xr = x2.data.data() + r * d;
                const T* gor = go.data.data() + r * d;
                T m = mu[(size_t)r], iv = inv[(size_t)r];
                T s1 = 0, s2 = 0;
                for (int64_t j = 0; j < d; ++j) {
                    T xh = (xr[j] - m) * iv;
                    T gd = gor[j] * g2[j];
                    s1 += gd;
                    s2 += gd * xh;
                    gg[j] += gor[j] * xh;
                    gb[j] += gor[j];
                }
                s1 /= T(d);
                s2 /= T(d);
                T* gar = ga.data.data() + r * d;
                for (int64_t j = 0; j < d; ++j) {
                    T xh = (xr[j] - m) * iv;
                    gar[j] += iv * (gor[j] * g2[j] - s1 - xh * s2);
                }
            }
        });
    }

    // ---- reductions ----

    Var sum_all(Var a) {
        const Tensor<T>& x = val(a);
        T s = 0;
        for (T v : x.data) s += v;
        return push(Tensor<T>::scalar(s), [this, a](Var out) {
            accumulate_broadcast_scalar(a, grads_[(size_t)out][0]);
        });
    }

    Var mean_all(Var a) {
        const Tensor<T>& x = val(a);
        T s = 0;
        for (T v : x.data) s += v;
        T n = T(x.size());
        return push(Tensor<T>::scalar(s / n), [this, a, n](Var out) {
            accumulate_broadcast_scalar(a, grads_[(size_t)out][0] / n);
        });
    }

    // ---- lookup / rotary ----

    Var embedding(Var table, const std::vector<int64_t>& ids) {
        const Tensor<T>& tbl = val(table);
        if (tbl.rank() != 2) throw ShapeError("embedding: table must be rank 2");
        int64_t v = tbl.shape[0], d = tbl.shape[1];
        for (int64_t id : ids)
            if (id < 0 || id >= v)
                throw DataError("embedding: id " + std::to_string(id) +
                                " out of vocabulary of size " + std::to_string(v));
        int64_t n = static_cast<int64_t>(ids.size());
        Tensor<T> y = Tensor<T>::uninit({n, d});
        for (int64_t i = 0; i < n; ++i)
            std::memcpy(y.data.data() + i * d, tbl.data.data() + ids[(size_t)i] * d,
                        static_cast<size_t>(d) * sizeof(T));
        return push(std::move(y), [this, table, ids, d](Var out) {
            const Tensor<T>& g = grads_[(size_t)out];
            Tensor<T>& gt = grad_buf(table);
            for (size_t i = 0; i < ids.size(); ++i) {
                const T* src = g.data.data() + (int64_t)i * d;
                T* dst = gt.data.data() + ids[i] * d;
                for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }

    // Rotate channel pairs of [N, heads*head_dim] by per-token angles.
    // Orthogonal per pair, so the backward pass rotates by the negated angle.
    Var rope(Var a, const RopeTable<T>& rt, int64_t heads) {
        const Tensor<T>& x = val(a);
        if (x.rank() != 2) throw ShapeError("rope: input must be rank 2");
        int64_t n = x.shape[0], dm = x.shape[1];
        int64_t hd = dm / heads;
        if (dm % heads != 0 || hd % 2 != 0)
            throw ShapeError("rope: model dim not divisible into even head dims");
        if (rt.tokens != n || rt.pairs != hd / 2)
            throw ShapeError("rope: table built for " + std::to_string(rt.tokens) +
                             " tokens x " + std::to_string(rt.pairs) + " pairs, input has " +
                             std::to_string(n) + " x " + std::to_string(hd / 2));
        Tensor<T> y = rope_apply(x, rt, heads, false);
        // copy the table: the caller's table may not outlive backward
        return push(std::move(y), [this, a, rt, heads](Var out) {
            Tensor<T> gr = rope_apply(grads_[(size_t)out], rt, heads, true);
            accumulate(a, gr);
        });
    }

    // ---- backward ----

    void backward(Var loss) {
        if (!grad_) throw NumericError("backward: tape recorded without gradients");
        if (val(loss).size() != 1) throw ShapeError("backward: loss must be scalar");
        grads_.clear();
        grads_.resize(nodes_.size());
        grad_buf(loss)[0] = T(1);
        for (int64_t i = static_cast<int64_t>(nodes_.size()) - 1; i >= 0; --i) {
            auto& node = nodes_[(size_t)i];
            if (node.back && grads_[(size_t)i].size() > 0) node.back(static_cast<Var>(i));
        }
        // leaves without incoming gradient get explicit zeros
        for (size_t i = 0; i < nodes_.size(); ++i)
            if (grads_[i].size() == 0) grads_[i] = Tensor<T>::zeros(nodes_[i].value.shape);
    }

private:
    enum class BinOp { Add, Sub, Mul };

    struct Node {
        Tensor<T> value;
        std::function<void(Var)> back;
    };

    std::vector<Node> nodes_;
    std::vector<Tensor<T>> grads_;
    bool grad_;
    bool strict_;

    static void check_finite(const Tensor<T>& t, const char* where) {
        for (T v : t.data)
            if (!std::isfinite(v)) throw NumericError(std::string("non-finite input at ") + where);
    }

    Var push(Tensor<T> v, std::function<void(Var)> back) {
        nodes_.push_back({std::move(v), grad_ ? std::move(back) : nullptr});
        return static_cast<Var>(nodes_.size() - 1);
    }

    Tensor<T>& grad_buf(Var v) {
        auto& g = grads_[(size_t)v];
        if (g.size() == 0) g = Tensor<T>::zeros(nodes_[(size_t)v].value.shape);
        return g;
    }

    void accumulate(Var v, const Tensor<T>& g) {
        Tensor<T>& dst = grad_buf(v);
        for (int64_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
    void accumulate_scaled(Var v, const Tensor<T>& g, T alpha) {
        Tensor<T>& dst = grad_buf(v);
        for (int64_t i = 0; i < g.size(); ++i) dst[i] += alpha * g[i];
    }
    void accumulate_broadcast_scalar(Var v, T g) {
        Tensor<T>& dst = grad_buf(v);
        for (auto& x : dst.data) x += g;
    }

    static Tensor<T> transpose_value(const Tensor<T>& x, int64_t d0, int64_t d1) {
        if (d0 < 0 || d1 < 0 || d0 >= x.rank() || d1 >= x.rank())
            throw ShapeError("transpose: axis out of range for " + shape_str(x.shape));
        Shape os = x.shape;
        std::swap(os[(size_t)d0], os[(size_t)d1]);
        if (d0 == d1) return Tensor<T>(std::move(os), x.data);
        int64_t lo = std::min(d0, d1), hi = std::max(d0, d1);
        // collapse to [outer, a, mid, b, inner]; inner stays contiguous
        int64_t outer = 1, mid = 1, inner = 1;
        for (int64_t i = 0; i < lo; ++i) outer *= x.shape[(size_t)i];
        for (int64_t i = lo + 1; i < hi; ++i) mid *= x.shape[(size_t)i];
        for (int64_t i = hi + 1; i < x.rank(); ++i) inner *= x.shape[(size_t)i];
        int64_t a = x.shape[(size_t)lo], b = x.shape[(size_t)hi];
        Tensor<T> y = Tensor<T>::uninit(os);
        const T* src = x.data.data();
        T* dst = y.data.data();
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t i = 0; i < a; ++i)
                for (int64_t m = 0; m < mid; ++m)
                    for (int64_t j = 0; j < b; ++j)
                        std::memcpy(dst + ((((o * b + j) * mid + m) * a + i)) * inner,
                                    src + ((((o * a + i) * mid + m) * b + j)) * inner,
                                    (size_t)inner * sizeof(T));
        return y;
    }

    static Tensor<T> rope_apply(const Tensor<T>& x, const RopeTable<T>& rt, int64_t heads,
                                bool inverse) {
        int64_t n = x.shape[0], dm = x.shape[1];
        int64_t hd = dm / heads, pairs = hd / 2;
        Tensor<T> y = Tensor<T>::uninit(x.shape);
        for (int64_t t = 0; t < n; ++t) {
            const T* cr = rt.cosv.data() + t * pairs;
            const T* sr = rt.sinv.data() + t * pairs;
            for (int64_t h = 0; h < heads; ++h) {
                const T* xr = x.data.data() + t * dm + h * hd;
                T* yr = y.data.data() + t * dm + h * hd;
                for (int64_t p = 0; p < pairs; ++p) {
                    T c = cr[p];
                    T s = inverse ? -sr[p] : sr[p];
                    T x0 = xr[2 * p], x1 = xr[2 * p + 1];
                    yr[2 * p] = c * x0 - s * x1;
                    yr[2 * p + 1] = s * x0 + c * x1;
                }
            }
        }
        return y;
    }

    Var binary(Var a, Var b, BinOp op) {
        const Tensor<T>& A = val(a);
        const Tensor<T>& B = val(b);
        if (A.rank() != B.rank())
            throw ShapeError("elementwise: rank mismatch " + shape_str(A.shape) + " vs " +
                             shape_str(B.shape));
        Shape os(A.shape.size());
        for (size_t i = 0; i < os.size(); ++i) {
            int64_t da = A.shape[i], db = B.shape[i];
            if (da != db && da != 1 && db != 1)
                throw ShapeError("elementwise: incompatible shapes " + shape_str(A.shape) +
                                 " vs " + shape_str(B.shape) +
                                 " (axes must match exactly or be 1)");
            os[i] = std::max(da, db);
        }
        Tensor<T> y = Tensor<T>::uninit(os);
        if (A.shape == B.shape) {
            switch (op) {
                case BinOp::Add:
                    for (int64_t i = 0; i < y.size(); ++i) y[i] = A[i] + B[i];
                    break;
                case BinOp::Sub:
                    for (int64_t i = 0; i < y.size(); ++i) y[i] = A[i] - B[i];
                    break;
                case BinOp::Mul:
                    for (int64_t i = 0; i < y.size(); ++i) y[i] = A[i] * B[i];
                    break;
            }
        } else {
            broadcast_loop(A, B, y, op);
        }
        bool same = (A.shape == B.shape);
        return push(std::move(y), [this, a, b, op, same](Var out) {
            const Tensor<T>& g = grads_[(size_t)out];
            const Tensor<T>& A2 = val(a);
            const Tensor<T>& B2 = val(b);
            if (same) {
                Tensor<T>& ga = grad_buf(a);
                Tensor<T>& gb = grad_buf(b);
                switch (op) {
                    case BinOp::Add:
                        for (int64_t i = 0; i < g.size(); ++i) {
                            ga[i] += g[i];
                            gb[i] += g[i];
                        }
                        break;
                    case BinOp::Sub:
                        for (int64_t i = 0; i < g.size(); ++i) {
                            ga[i] += g[i];
                            gb[i] -= g[i];
                        }
                        break;
                    case BinOp::Mul:
                        for (int64_t i = 0; i < g.size(); ++i) {
                            ga[i] += g[i] * B2[i];
                            gb[i] += g[i] * A2[i];
                        }
                        break;
                }
            } else {
                broadcast_backward(a, b, g, A2, B2, op);
            }
        });
    }

    // generic strided broadcast, used only when shapes differ
    static void broadcast_loop(const Tensor<T>& A, const Tensor<T>& B, Tensor<T>& y, BinOp op) {
        size_t r = y.shape.size();
        std::vector<int64_t> sa(r), sb(r);
        int64_t acc_a = 1, acc_b = 1;
        for (int64_t i = (int64_t)r - 1; i >= 0; --i) {
            sa[(size_t)i] = (A.shape[(size_t)i] == 1) ? 0 : acc_a;
            acc_a *= A.shape[(size_t)i];
            sb[(size_t)i] = (B.shape[(size_t)i] == 1) ? 0 : acc_b;
            acc_b *= B.shape[(size_t)i];
        }
        std::vector<int64_t> coord(r, 0);
        int64_t ia = 0, ib = 0;
        for (int64_t lin = 0; lin < y.size(); ++lin) {
            T va = A[ia], vb = B[ib];
            y[lin] = op == BinOp::Add ? va + vb : op == BinOp::Sub ? va - vb : va * vb;
            for (int64_t i = (int64_t)r - 1; i >= 0; --i) {
                ia += sa[(size_t)i];
                ib += sb[(size_t)i];
                if (++coord[(size_t)i] < y.shape[(size_t)i]) break;
                ia -= sa[(size_t)i] * y.shape[(size_t)i];
                ib -= sb[(size_t)i] * y.shape[(size_t)i];
                coord[(size_t)i] = 0;
            }
        }
    }

    void broadcast_backward(Var a, Var b, const Tensor<T>& g, const Tensor<T>& A,
                            const Tensor<T>& B, BinOp op) {
        size_t r = g.shape.size();
        std::vector<int64_t> sa(r), sb(r);
        int64_t acc_a = 1, acc_b = 1;
        for (int64_t i = (int64_t)r - 1; i >= 0; --i) {
            sa[(size_t)i] = (A.shape[(size_t)i] == 1) ? 0 : acc_a;
            acc_a *= A.shape[(size_t)i];
            sb[(size_t)i] = (B.shape[(size_t)i] == 1) ? 0 : acc_b;
            acc_b *= B.shape[(size_t)i];
        }
        Tensor<T>& ga = grad_buf(a);
        Tensor<T>& gb = grad_buf(b);
        std::vector<int64_t> coord(r, 0);
        int64_t ia = 0, ib = 0;
        for (int64_t lin = 0; lin < g.size(); ++lin) {
            switch (op) {
                case BinOp::Add:
                    ga[ia] += g[lin];
                    gb[ib] += g[lin];
                    break;
                case BinOp::Sub:
                    ga[ia] += g[lin];
                    gb[ib] -= g[lin];
                    break;
                case BinOp::Mul:
                    ga[ia] += g[lin] * B[ib];
                    gb[ib] += g[lin] * A[ia];
                    break;
            }
            for (int64_t i = (int64_t)r - 1; i >= 0; --i) {
                ia += sa[(size_t)i];
                ib += sb[(size_t)i];
                if (++coord[(size_t)i] < g.shape[(size_t)i]) break;
                ia -= sa[(size_t)i] * g.shape[(size_t)i];
                ib -= sb[(size_t)i] * g.shape[(size_t)i];
                coord[(size_t)i] = 0;
            }
        }
    }
};

// Max relative error between analytic gradients and central finite differences,
// over every coordinate of every parameter tensor. 64-bit only.
inline double finite_diff_check(
    const std::function<double(const std::vector<Tensor<double>>&)>& f,
    std::vector<Tensor<double>> x, const std::vector<Tensor<double>>& grad_ad, double eps) {
    if (eps <= 0) throw DataError("finite_diff_check: eps must be positive");
    if (grad_ad.size() != x.size())
        throw ShapeError("finite_diff_check: gradient count mismatch");
    double worst = 0.0;
    for (size_t p = 0; p < x.size(); ++p) {
        for (int64_t i = 0; i < x[p].size(); ++i) {
            double orig = x[p][i];
            x[p][i] = orig + eps;
            double fp = f(x);
            x[p][i] = orig - eps;
            double fm = f(x);
            x[p][i] = orig;
            double g_fd = (fp - fm) / (2.0 * eps);
            double g_ad = grad_ad[p][i];
            double rel = std::abs(g_ad - g_fd) / std::max(1e-8, std::abs(g_ad) + std::abs(g_fd));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

// Same comparison over k randomly sampled coordinates per tensor, for
// compositions too large to sweep exhaustively.
template <typename Rng>
double finite_diff_check_sampled(
    const std::function<double(const std::vector<Tensor<double>>&)>& f,
    std::vector<Tensor<double>> x, const std::vector<Tensor<double>>& grad_ad, double eps,
    int64_t k, Rng& rng) {
    if (eps <= 0) throw DataError("finite_diff_check_sampled: eps must be positive");
    if (grad_ad.size() != x.size())
        throw ShapeError("finite_diff_check_sampled: gradient count mismatch");
    double worst = 0.0;
    for (size_t p = 0; p < x.size(); ++p) {
        int64_t n = x[p].size();
        if (n == 0) continue;
        for (int64_t s = 0; s < std::min(k, n); ++s) {
            int64_t i = (int64_t)(rng() % (uint64_t)n);
            double orig = x[p][i];
            x[p][i] = orig + eps;
            double fp = f(x);
            x[p][i] = orig - eps;
            double fm = f(x);
            x[p][i] = orig;
            double g_fd = (fp - fm) / (2.0 * eps);
            double g_ad = grad_ad[p][i];
            double rel = std::abs(g_ad - g_fd) / std::max(1e-8, std::abs(g_ad) + std::abs(g_fd));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace bridge
