#pragma once

// Differentiable tensor operations: broadcast arithmetic, reductions, matmul,
// softmax, layer norm and the shape-manipulation family. Every op is a pure
// function returning a fresh tensor; backward closures accumulate serially so
// repeated runs are bit-identical.

#include <cmath>
#include <cstring>

#include "flowlens/core/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace flowlens {

// ---------------------------------------------------------------------------
// broadcasting helpers

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    size_t n = std::max(a.size(), b.size());
    Shape out(n, 1);
    for (size_t i = 0; i < n; ++i) {
        int da = i < n - a.size() ? 1 : a[i - (n - a.size())];
        int db = i < n - b.size() ? 1 : b[i - (n - b.size())];
        FL_CHECK(da == db || da == 1 || db == 1, DimensionError,
                 "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

namespace detail {

// Contiguous strides with 0 on broadcast dimensions, right-aligned to `out`.
inline std::vector<long> bcast_strides(const Shape& s, const Shape& out) {
    std::vector<long> st(out.size(), 0);
    long run = 1;
    for (int i = int(s.size()) - 1; i >= 0; --i) {
        size_t oi = out.size() - (s.size() - size_t(i));
        st[oi] = (s[size_t(i)] == 1 && out[oi] != 1) ? 0 : run;
        run *= s[size_t(i)];
    }
    return st;
}

// Reduce a gradient over broadcast dims back to the parent's shape.
inline void reduce_grad_to(const std::vector<float>& g, const Shape& out_shape,
                           const Shape& target, std::vector<float>& acc) {
    if (out_shape == target) {
        for (size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
        return;
    }
    auto st = bcast_strides(target, out_shape);
    size_t nd = out_shape.size();
    std::vector<int> idx(nd, 0);
    long n = numel_of(out_shape);
    for (long lin = 0; lin < n; ++lin) {
        long off = 0;
        for (size_t d = 0; d < nd; ++d) off += idx[d] * st[d];
        acc[size_t(off)] += g[size_t(lin)];
        for (int d = int(nd) - 1; d >= 0; --d) {
            if (++idx[size_t(d)] < out_shape[size_t(d)]) break;
            idx[size_t(d)] = 0;
        }
    }
}

template <class FwdFn>
inline std::vector<float> bcast_apply(const Tensor& a, const Tensor& b,
                                      const Shape& out, FwdFn f) {
    std::vector<float> vals(size_t(numel_of(out)));
    if (a.shape() == b.shape() && a.shape() == out) {
        const float* pa = a.cdata();
        const float* pb = b.cdata();
        for (size_t i = 0; i < vals.size(); ++i) vals[i] = f(pa[i], pb[i]);
        return vals;
    }
    auto sa = bcast_strides(a.shape(), out);
    auto sb = bcast_strides(b.shape(), out);
    size_t nd = out.size();
    std::vector<int> idx(nd, 0);
    const float* pa = a.cdata();
    const float* pb = b.cdata();
    for (size_t lin = 0; lin < vals.size(); ++lin) {
        long oa = 0, ob = 0;
        for (size_t d = 0; d < nd; ++d) {
            oa += idx[d] * sa[d];
            ob += idx[d] * sb[d];
        }
        vals[lin] = f(pa[oa], pb[ob]);
        for (int d = int(nd) - 1; d >= 0; --d) {
            if (++idx[size_t(d)] < out[size_t(d)]) break;
            idx[size_t(d)] = 0;
        }
    }
    return vals;
}

} // namespace detail

// ---------------------------------------------------------------------------
// arithmetic

inline Tensor add(const Tensor& a, const Tensor& b) {
    Shape out = broadcast_shape(a.shape(), b.shape());
    auto vals = detail::bcast_apply(a, b, out, [](float x, float y) { return x + y; });
    Tensor ta = a, tb = b;
    return make_op(out, std::move(vals), {a, b}, [ta, tb, out](const std::vector<float>& g) mutable {
        if (ta.requires_grad()) detail::reduce_grad_to(g, out, ta.shape(), grad_buf(ta));
        if (tb.requires_grad()) detail::reduce_grad_to(g, out, tb.shape(), grad_buf(tb));
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    Shape out = broadcast_shape(a.shape(), b.shape());
    auto vals = detail::bcast_apply(a, b, out, [](float x, float y) { return x - y; });
    Tensor ta = a, tb = b;
    return make_op(out, std::move(vals), {a, b}, [ta, tb, out](const std::vector<float>& g) mutable {
        if (ta.requires_grad()) detail::reduce_grad_to(g, out, ta.shape(), grad_buf(ta));
        if (tb.requires_grad()) {
            std::vector<float> ng(g.size());
            for (size_t i = 0; i < g.size(); ++i) ng[i] = -g[i];
            detail::reduce_grad_to(ng, out, tb.shape(), grad_buf(tb));
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    Shape out = broadcast_shape(a.shape(), b.shape());
    auto vals = detail::bcast_apply(a, b, out, [](float x, float y) { return x * y; });
    Tensor ta = a, tb = b;
    return make_op(out, std::move(vals), {a, b}, [ta, tb, out](const std::vector<float>& g) mutable {
        auto sa = detail::bcast_strides(ta.shape(), out);
        auto sb = detail::bcast_strides(tb.shape(), out);
        size_t nd = out.size();
        std::vector<int> idx(nd, 0);
        const float* pa = ta.cdata();
        const float* pb = tb.cdata();
        float* ga = ta.requires_grad() ? grad_buf(ta).data() : nullptr;
        float* gb = tb.requires_grad() ? grad_buf(tb).data() : nullptr;
        for (size_t lin = 0; lin < g.size(); ++lin) {
            long oa = 0, ob = 0;
            for (size_t d = 0; d < nd; ++d) {
                oa += idx[d] * sa[d];
                ob += idx[d] * sb[d];
            }
            if (ga) ga[oa] += g[lin] * pb[ob];
            if (gb) gb[ob] += g[lin] * pa[oa];
            for (int d = int(nd) - 1; d >= 0; --d) {
                if (++idx[size_t(d)] < out[size_t(d)]) break;
                idx[size_t(d)] = 0;
            }
        }
    });
}

inline Tensor divide(const Tensor& a, const Tensor& b) {
    Shape out = broadcast_shape(a.shape(), b.shape());
    auto vals = detail::bcast_apply(a, b, out, [](float x, float y) { return x / y; });
    Tensor ta = a, tb = b;
    return make_op(out, std::move(vals), {a, b}, [ta, tb, out](const std::vector<float>& g) mutable {
        auto sa = detail::bcast_strides(ta.shape(), out);
        auto sb = detail::bcast_strides(tb.shape(), out);
        size_t nd = out.size();
        std::vector<int> idx(nd, 0);
        const float* pa = ta.cdata();
        const float* pb = tb.cdata();
        float* ga = ta.requires_grad() ? grad_buf(ta).data() : nullptr;
        float* gb = tb.requires_grad() ? grad_buf(tb).data() : nullptr;
        for (size_t lin = 0; lin < g.size(); ++lin) {
            long oa = 0, ob = 0;
            for (size_t d = 0; d < nd; ++d) {
                oa += idx[d] * sa[d];
                ob += idx[d] * sb[d];
            }
            float inv = 1.f / pb[ob];
            if (ga) ga[oa] += g[lin] * inv;
            if (gb) gb[ob] -= g[lin] * pa[oa] * inv * inv;
            for (int d = int(nd) - 1; d >= 0; --d) {
                if (++idx[size_t(d)] < out[size_t(d)]) break;
                idx[size_t(d)] = 0;
            }
        }
    });
}

inline Tensor add_scalar(const Tensor& a, float s) {
    std::vector<float> vals(a.raw());
    for (auto& v : vals) v += s;
    Tensor ta = a;
    return make_op(a.shape(), std::move(vals), {a}, [ta](const std::vector<float>& g) mutable {
        if (!ta.requires_grad()) return;
        auto& ga = grad_buf(ta);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

inline Tensor mul_scalar(const Tensor& a, float s) {
    std::vector<float> vals(a.raw());
    for (auto& v : vals) v *= s;
    Tensor ta = a;
    return make_op(a.shape(), std::move(vals), {a}, [ta, s](const std::vector<float>& g) mutable {
        if (!ta.requires_grad()) return;
        auto& ga = grad_buf(ta);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.f); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return divide(a, b); }
inline Tensor operator+(const Tensor& a, float s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, float s) { return add_scalar(a, -s); }
inline Tensor operator*(const Tensor& a, float s) { return mul_scalar(a, s); }
inline Tensor operator*(float s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator/(const Tensor& a, float s) { return mul_scalar(a, 1.f / s); }

// ---------------------------------------------------------------------------
// unary ops

namespace detail {
template <class F, class DF>
inline Tensor unary_op(const Tensor& a, F f, DF dfdx) {
    std::vector<float> vals(size_t(a.numel()));
    const float* p = a.cdata();
    for (size_t i = 0; i < vals.size(); ++i) vals[i] = f(p[i]);
    Tensor ta = a;
    return make_op(a.shape(), std::move(vals), {a}, [ta, dfdx](const std::vector<float>& g) mutable {
        if (!ta.requires_grad()) return;
        auto& ga = grad_buf(ta);
        const float* p = ta.cdata();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(p[i]);
    });
}
} // namespace detail

inline Tensor relu(const Tensor& a) {
    return detail::unary_op(
        a, [](float x) { return x > 0.f ? x : 0.f; },
        [](float x) { return x > 0.f ? 1.f : 0.f; });
}

inline Tensor leaky_relu(const Tensor& a, float slope = 0.2f) {
    return detail::unary_op(
        a, [slope](float x) { return x > 0.f ? x : slope * x; },
        [slope](float x) { return x > 0.f ? 1.f : slope; });
}

inline Tensor tanh_op(const Tensor& a) {
    return detail::unary_op(
        a, [](float x) { return std::tanh(x); },
        [](float x) {
            float t = std::tanh(x);
            return 1.f - t * t;
        });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary_op(
        a, [](float x) { return 1.f / (1.f + std::exp(-x)); },
        [](float x) {
            float s = 1.f / (1.f + std::exp(-x));
            return s * (1.f - s);
        });
}

// Exact GELU: 0.5 x (1 + erf(x / sqrt(2))).
inline Tensor gelu(const Tensor& a) {
    constexpr float kInvSqrt2 = 0.70710678118654752440f;
    constexpr float kInvSqrt2Pi = 0.39894228040143267794f;
    return detail::unary_op(
        a, [](float x) { return 0.5f * x * (1.f + std::erf(x * kInvSqrt2)); },
        [](float x) {
            float cdf = 0.5f * (1.f + std::erf(x * kInvSqrt2));
            float pdf = kInvSqrt2Pi * std::exp(-0.5f * x * x);
            return cdf + x * pdf;
        });
}

inline Tensor abs_op(const Tensor& a) {
    return detail::unary_op(
        a, [](float x) { return std::fabs(x); },
        [](float x) { return x > 0.f ? 1.f : (x < 0.f ? -1.f : 0.f); });
}

inline Tensor square(const Tensor& a) {
    return detail::unary_op(
        a, [](float x) { return x * x; }, [](float x) { return 2.f * x; });
}

inline Tensor sqrt_op(const Tensor& a) {
    return detail::unary_op(
        a, [](float x) { return std::sqrt(x); },
        [](float x) { return 0.5f / std::sqrt(x); });
}

inline Tensor exp_op(const Tensor& a) {
    return detail::unary_op(
        a, [](float x) { return std::exp(x); }, [](float x) { return std::exp(x); });
}

inline Tensor clamp(const Tensor& a, float lo, float hi) {
    return detail::unary_op(
        a, [lo, hi](float x) { return std::min(std::max(x, lo), hi); },
        [lo, hi](float x) { return (x > lo && x < hi) ? 1.f : 0.f; });
}

// ---------------------------------------------------------------------------
// reductions (double accumulation for stability)

inline Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (float v : a.raw()) acc += v;
    Tensor ta = a;
    return make_op({1}, {float(acc)}, {a}, [ta](const std::vector<float>& g) mutable {
        if (!ta.requires_grad()) return;
        auto& ga = grad_buf(ta);
        for (auto& x : ga) x += g[0];
    });
}

inline Tensor mean(const Tensor& a) {
    long n = a.numel();
    double acc = 0.0;
    for (float v : a.raw()) acc += v;
    Tensor ta = a;
    float inv = 1.f / float(n);
    return make_op({1}, {float(acc / double(n))}, {a}, [ta, inv](const std::vector<float>& g) mutable {
        if (!ta.requires_grad()) return;
        auto& ga = grad_buf(ta);
        for (auto& x : ga) x += g[0] * inv;
    });
}

namespace detail {
// Split a shape at `axis`: outer, mid (= shape[axis]), inner.
inline void axis_split(const Shape& s, int axis, long& outer, long& mid, long& inner) {
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[size_t(i)];
    mid = s[size_t(axis)];
    for (size_t i = size_t(axis) + 1; i < s.size(); ++i) inner *= s[i];
}
} // namespace detail

inline Tensor sum_axis(const Tensor& a, int axis, bool keepdim = false) {
    if (axis < 0) axis += a.ndim();
    long outer, mid, inner;
    detail::axis_split(a.shape(), axis, outer, mid, inner);
    Shape out_shape = a.shape();
    if (keepdim)
        out_shape[size_t(axis)] = 1;
    else
        out_shape.erase(out_shape.begin() + axis);
    if (out_shape.empty()) out_shape = {1};
    std::vector<float> vals(size_t(outer * inner), 0.f);
    const float* p = a.cdata();
    for (long o = 0; o < outer; ++o)
        for (long m = 0; m < mid; ++m) {
            const float* row = p + (o * mid + m) * inner;
            float* dst = vals.data() + o * inner;
            for (long i = 0; i < inner; ++i) dst[i] += row[i];
        }
    Tensor ta = a;
    return make_op(out_shape, std::move(vals), {a},
                   [ta, outer, mid, inner](const std::vector<float>& g) mutable {
                       if (!ta.requires_grad()) return;
                       auto& ga = grad_buf(ta);
                       for (long o = 0; o < outer; ++o)
                           for (long m = 0; m < mid; ++m) {
                               float* dst = ga.data() + (o * mid + m) * inner;
                               const float* src = g.data() + o * inner;
                               for (long i = 0; i < inner; ++i) dst[i] += src[i];
                           }
                   });
}

inline Tensor mean_axis(const Tensor& a, int axis, bool keepdim = false) {
    if (axis < 0) axis += a.ndim();
    float inv = 1.f / float(a.shape()[size_t(axis)]);
    return mul_scalar(sum_axis(a, axis, keepdim), inv);
}

// ---------------------------------------------------------------------------
// matmul

namespace detail {
// C(M,N) += A(M,K) * B(K,N); deterministic row-parallel loop.
inline void gemm_acc(const float* A, const float* B, float* C, long M, long N, long K) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (M * N * K > 8000000 && M > 1)
#endif
    for (long m = 0; m < M; ++m) {
        float* crow = C + m * N;
        const float* arow = A + m * K;
        for (long k = 0; k < K; ++k) {
            float a = arow[k];
            if (a == 0.f) continue;
            const float* brow = B + k * N;
            for (long n = 0; n < N; ++n) crow[n] += a * brow[n];
        }
    }
}

// blocked (R, C) -> (C, R) transpose
inline void transpose_mat(const float* src, float* dst, long R, long C) {
    constexpr long B = 32;
    for (long r0 = 0; r0 < R; r0 += B)
        for (long c0 = 0; c0 < C; c0 += B) {
            long r1 = std::min(r0 + B, R), c1 = std::min(c0 + B, C);
            for (long r = r0; r < r1; ++r)
                for (long c = c0; c < c1; ++c) dst[c * R + r] = src[r * C + c];
        }
}

// C(M,N) += A(M,K) * B(N,K)^T, computed against an explicit transpose so the
// hot loop is the stream-friendly NN kernel.
inline void gemm_acc_bt(const float* A, const float* B, float* C, long M, long N, long K) {
    std::vector<float> bt(size_t(K) * N);
    transpose_mat(B, bt.data(), N, K);
    gemm_acc(A, bt.data(), C, M, N, K);
}

// C(K,N) += A(M,K)^T * B(M,N), via an explicit transpose of A
inline void gemm_acc_at(const float* A, const float* B, float* C, long M, long N, long K) {
    std::vector<float> at(size_t(K) * M);
    transpose_mat(A, at.data(), M, K);
    gemm_acc(at.data(), B, C, K, N, M);
}
} // namespace detail

// Batched matmul. a: (..., M, K), b: (..., K, N). Leading dims must match, or
// either operand may be rank-2 (broadcast over the other's batch).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    FL_CHECK(a.ndim() >= 2 && b.ndim() >= 2, DimensionError, "matmul needs rank >= 2");
    long M = a.dim(-2), K = a.dim(-1);
    long Kb = b.dim(-2), N = b.dim(-1);
    FL_CHECK(K == Kb, DimensionError,
             "matmul inner dim mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    long batch_a = a.numel() / (M * K);
    long batch_b = b.numel() / (K * N);
    long batch = std::max(batch_a, batch_b);
    FL_CHECK(batch_a == batch || batch_a == 1, DimensionError, "matmul batch mismatch");
    FL_CHECK(batch_b == batch || batch_b == 1, DimensionError, "matmul batch mismatch");

    Shape out_shape;
    if (batch_a >= batch_b) {
        out_shape = a.shape();
        out_shape[out_shape.size() - 1] = int(N);
    } else {
        out_shape = b.shape();
        out_shape[out_shape.size() - 2] = int(M);
        out_shape[out_shape.size() - 1] = int(N);
    }

    std::vector<float> vals(size_t(batch * M * N), 0.f);
    const float* pa = a.cdata();
    const float* pb = b.cdata();
    for (long bt = 0; bt < batch; ++bt) {
        const float* A = pa + (batch_a == 1 ? 0 : bt * M * K);
        const float* B = pb + (batch_b == 1 ? 0 : bt * K * N);
        detail::gemm_acc(A, B, vals.data() + bt * M * N, M, N, K);
    }

    Tensor ta = a, tb = b;
    return make_op(out_shape, std::move(vals), {a, b},
                   [ta, tb, M, N, K, batch, batch_a, batch_b](const std::vector<float>& g) mutable {
                       const float* pa = ta.cdata();
                       const float* pb = tb.cdata();
                       if (ta.requires_grad()) {
                           float* ga = grad_buf(ta).data();
                           for (long bt = 0; bt < batch; ++bt) {
                               const float* G = g.data() + bt * M * N;
                               const float* B = pb + (batch_b == 1 ? 0 : bt * K * N);
                               float* GA = ga + (batch_a == 1 ? 0 : bt * M * K);
                               detail::gemm_acc_bt(G, B, GA, M, K, N); // dA = G * B^T
                           }
                       }
                       if (tb.requires_grad()) {
                           float* gb = grad_buf(tb).data();
                           for (long bt = 0; bt < batch; ++bt) {
                               const float* G = g.data() + bt * M * N;
                               const float* A = pa + (batch_a == 1 ? 0 : bt * M * K);
                               float* GB = gb + (batch_b == 1 ? 0 : bt * K * N);
                               detail::gemm_acc_at(A, G, GB, M, N, K); // dB = A^T * G
                           }
                       }
                   });
}

// ---------------------------------------------------------------------------
// softmax over the last dimension

inline Tensor softmax_lastdim(const Tensor& a) {
    long D = a.dim(-1);
    long rows = a.numel() / D;
    std::vector<float> vals(size_t(a.numel()));
    const float* p = a.cdata();
    for (long r = 0; r < rows; ++r) {
        const float* x = p + r * D;
        float* y = vals.data() + r * D;
        float mx = x[0];
        for (long i = 1; i < D; ++i) mx = std::max(mx, x[i]);
        double denom = 0.0;
        for (long i = 0; i < D; ++i) {
            y[i] = std::exp(x[i] - mx);
            denom += y[i];
        }
        float inv = float(1.0 / denom);
        for (long i = 0; i < D; ++i) y[i] *= inv;
    }
    Tensor ta = a;
    Tensor out = make_op(a.shape(), std::move(vals), {a}, nullptr);
    // backward needs the output values; capture a detached view of them
    if (out.requires_grad()) {
        Tensor y = out.detach();
        out.impl()->backward_fn = [ta, y, D, rows](const std::vector<float>& g) mutable {
            if (!ta.requires_grad()) return;
            auto& ga = grad_buf(ta);
            const float* py = y.cdata();
            for (long r = 0; r < rows; ++r) {
                const float* yr = py + r * D;
                const float* gr = g.data() + r * D;
                float* dst = ga.data() + r * D;
                double dot = 0.0;
                for (long i = 0; i < D; ++i) dot += double(gr[i]) * yr[i];
                for (long i = 0; i < D; ++i) dst[i] += yr[i] * (gr[i] - float(dot));
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// layer norm over the last dimension

inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         float eps = 1e-6f) {
    long D = x.dim(-1);
    FL_CHECK(gamma.numel() == D && beta.numel() == D, DimensionError,
             "layer_norm affine params must match the last dim");
    long rows = x.numel() / D;
    std::vector<float> vals(size_t(x.numel()));
    std::vector<float> mu(static_cast<size_t>(rows)), rstd(static_cast<size_t>(rows));
    const float* p = x.cdata();
    const float* pg = gamma.cdata();
    const float* pb = beta.cdata();
    for (long r = 0; r < rows; ++r) {
        const float* xr = p + r * D;
        double m = 0.0;
        for (long i = 0; i < D; ++i) m += xr[i];
        m /= double(D);
        double var = 0.0;
        for (long i = 0; i < D; ++i) {
            double d = xr[i] - m;
            var += d * d;
        }
        var /= double(D);
        float rs = float(1.0 / std::sqrt(var + eps));
        mu[size_t(r)] = float(m);
        rstd[size_t(r)] = rs;
        float* y = vals.data() + r * D;
        for (long i = 0; i < D; ++i) y[i] = (xr[i] - float(m)) * rs * pg[i] + pb[i];
    }
    Tensor tx = x, tg = gamma, tb = beta;
    return make_op(x.shape(), std::move(vals), {x, gamma, beta},
                   [tx, tg, tb, D, rows, mu, rstd](const std::vector<float>& g) mutable {
                       const float* p = tx.cdata();
                       const float* pg = tg.cdata();
                       float* gx = tx.requires_grad() ? grad_buf(tx).data() : nullptr;
                       float* gg = tg.requires_grad() ? grad_buf(tg).data() : nullptr;
                       float* gb = tb.requires_grad() ? grad_buf(tb).data() : nullptr;
                       for (long r = 0; r < rows; ++r) {
                           const float* xr = p + r * D;
                           const float* gr = g.data() + r * D;
                           float m = mu[size_t(r)];
                           float rs = rstd[size_t(r)];
                           if (gg || gb) {
                               for (long i = 0; i < D; ++i) {
                                   float xhat = (xr[i] - m) * rs;
                                   if (gg) gg[i] += gr[i] * xhat;
                                   if (gb) gb[i] += gr[i];
                               }
                           }
                           if (gx) {
                               double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                               for (long i = 0; i < D; ++i) {
                                   float xhat = (xr[i] - m) * rs;
                                   float dxhat = gr[i] * pg[i];
                                   sum_dxhat += dxhat;
                                   sum_dxhat_xhat += double(dxhat) * xhat;
                               }
                               float* dst = gx + r * D;
                               for (long i = 0; i < D; ++i) {
                                   float xhat = (xr[i] - m) * rs;
                                   float dxhat = gr[i] * pg[i];
                                   dst[i] += rs * (dxhat - float(sum_dxhat) / float(D) -
                                                   xhat * float(sum_dxhat_xhat) / float(D));
                               }
                           }
                       }
                   });
}

// ---------------------------------------------------------------------------
// shape manipulation

inline Tensor reshape(const Tensor& a, Shape shape) {
    // allow a single -1 placeholder
    long known = 1;
    int neg = -1;
    for (size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == -1) {
            FL_CHECK(neg < 0, InvalidInput, "reshape allows one -1");
            neg = int(i);
        } else {
            known *= shape[i];
        }
    }
    if (neg >= 0) shape[size_t(neg)] = int(a.numel() / known);
    FL_CHECK(numel_of(shape) == a.numel(), DimensionError,
             "reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
    Tensor ta = a;
    return make_op(shape, std::vector<float>(a.raw()), {a},
                   [ta](const std::vector<float>& g) mutable {
                       if (!ta.requires_grad()) return;
                       auto& ga = grad_buf(ta);
                       for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                   });
}

inline Tensor permute(const Tensor& a, const std::vector<int>& dims) {
    int nd = a.ndim();
    FL_CHECK(int(dims.size()) == nd, DimensionError, "permute rank mismatch");
    Shape out_shape(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) out_shape[size_t(i)] = a.dim(dims[size_t(i)]);
    std::vector<long> in_strides(size_t(nd), 1);
    for (int i = nd - 2; i >= 0; --i)
        in_strides[size_t(i)] = in_strides[size_t(i) + 1] * a.dim(i + 1);
    std::vector<long> gather(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) gather[size_t(i)] = in_strides[size_t(dims[size_t(i)])];

    std::vector<float> vals(size_t(a.numel()));
    const float* p = a.cdata();
    std::vector<int> idx(size_t(nd), 0);
    std::vector<long> src_index(size_t(a.numel()));
    for (long lin = 0; lin < a.numel(); ++lin) {
        long off = 0;
        for (int d = 0; d < nd; ++d) off += idx[size_t(d)] * gather[size_t(d)];
        vals[size_t(lin)] = p[off];
        src_index[size_t(lin)] = off;
        for (int d = nd - 1; d >= 0; --d) {
            if (++idx[size_t(d)] < out_shape[size_t(d)]) break;
            idx[size_t(d)] = 0;
        }
    }
    Tensor ta = a;
    return make_op(out_shape, std::move(vals), {a},
                   [ta, src_index](const std::vector<float>& g) mutable {
                       if (!ta.requires_grad()) return;
                       auto& ga = grad_buf(ta);
                       for (size_t i = 0; i < g.size(); ++i) ga[size_t(src_index[i])] += g[i];
                   });
}

inline Tensor slice(const Tensor& a, int axis, int start, int len) {
    if (axis < 0) axis += a.ndim();
    FL_CHECK(start >= 0 && len >= 0 && start + len <= a.dim(axis), DimensionError,
             "slice out of range");
    long outer, mid, inner;
    detail::axis_split(a.shape(), axis, outer, mid, inner);
    Shape out_shape = a.shape();
    out_shape[size_t(axis)] = len;
    std::vector<float> vals(size_t(outer * len * inner));
    const float* p = a.cdata();
    for (long o = 0; o < outer; ++o)
        std::memcpy(vals.data() + o * len * inner, p + (o * mid + start) * inner,
                    size_t(len * inner) * sizeof(float));
    Tensor ta = a;
    return make_op(out_shape, std::move(vals), {a},
                   [ta, outer, mid, inner, start, len](const std::vector<float>& g) mutable {
                       if (!ta.requires_grad()) return;
                       auto& ga = grad_buf(ta);
                       for (long o = 0; o < outer; ++o) {
                           float* dst = ga.data() + (o * mid + start) * inner;
                           const float* src = g.data() + o * len * inner;
                           for (long i = 0; i < len * inner; ++i) dst[i] += src[i];
                       }
                   });
}

inline Tensor cat(const std::vector<Tensor>& ts, int axis) {
    FL_CHECK(!ts.empty(), InvalidInput, "cat of empty list");
    if (axis < 0) axis += ts[0].ndim();
    Shape out_shape = ts[0].shape();
    long total = 0;
    for (const auto& t : ts) {
        FL_CHECK(t.ndim() == ts[0].ndim(), DimensionError, "cat rank mismatch");
        for (int d = 0; d < t.ndim(); ++d)
            if (d != axis)
                FL_CHECK(t.dim(d) == ts[0].dim(d), DimensionError, "cat shape mismatch");
        total += t.dim(axis);
    }
    out_shape[size_t(axis)] = int(total);
    long outer, mid_out, inner;
    detail::axis_split(out_shape, axis, outer, mid_out, inner);

    std::vector<float> vals(size_t(numel_of(out_shape)));
    long offset = 0;
    for (const auto& t : ts) {
        long mid = t.dim(axis);
        const float* p = t.cdata();
        for (long o = 0; o < outer; ++o)
            std::memcpy(vals.data() + (o * mid_out + offset) * inner, p + o * mid * inner,
                        size_t(mid * inner) * sizeof(float));
        offset += mid;
    }

    std::vector<Tensor> parents = ts;
    Tensor out(out_shape, std::move(vals));
    bool any = false;
    for (const auto& t : ts)
        if (t.requires_grad()) any = true;
    if (grad_enabled() && any) {
        out.impl()->requires_grad = true;
        for (const auto& t : ts) out.impl()->parents.push_back(t.impl());
        out.impl()->backward_fn = [parents, outer, mid_out, inner, axis](const std::vector<float>& g) mutable {
            long offset = 0;
            for (auto& t : parents) {
                long mid = t.dim(axis);
                if (t.requires_grad()) {
                    auto& ga = grad_buf(t);
                    for (long o = 0; o < outer; ++o) {
                        const float* src = g.data() + (o * mid_out + offset) * inner;
                        float* dst = ga.data() + o * mid * inner;
                        for (long i = 0; i < mid * inner; ++i) dst[i] += src[i];
                    }
                }
                offset += mid;
            }
        };
    }
    return out;
}

inline Tensor flip(const Tensor& a, int axis) {
    if (axis < 0) axis += a.ndim();
    long outer, mid, inner;
    detail::axis_split(a.shape(), axis, outer, mid, inner);
    std::vector<float> vals(size_t(a.numel()));
    const float* p = a.cdata();
    for (long o = 0; o < outer; ++o)
        for (long m = 0; m < mid; ++m)
            std::memcpy(vals.data() + (o * mid + m) * inner,
                        p + (o * mid + (mid - 1 - m)) * inner, size_t(inner) * sizeof(float));
    Tensor ta = a;
    return make_op(a.shape(), std::move(vals), {a},
                   [ta, outer, mid, inner](const std::vector<float>& g) mutable {
                       if (!ta.requires_grad()) return;
                       auto& ga = grad_buf(ta);
                       for (long o = 0; o < outer; ++o)
                           for (long m = 0; m < mid; ++m) {
                               const float* src = g.data() + (o * mid + m) * inner;
                               float* dst = ga.data() + (o * mid + (mid - 1 - m)) * inner;
                               for (long i = 0; i < inner; ++i) dst[i] += src[i];
                           }
                   });
}

inline Tensor unsqueeze(const Tensor& a, int axis) {
    Shape s = a.shape();
    if (axis < 0) axis += a.ndim() + 1;
    s.insert(s.begin() + axis, 1);
    return reshape(a, s);
}

inline Tensor stack(const std::vector<Tensor>& ts, int axis = 0) {
    std::vector<Tensor> expanded;
    expanded.reserve(ts.size());
    for (const auto& t : ts) expanded.push_back(unsqueeze(t, axis));
    return cat(expanded, axis);
}

inline Tensor transpose_last2(const Tensor& a) {
    std::vector<int> dims(size_t(a.ndim()));
    for (int i = 0; i < a.ndim(); ++i) dims[size_t(i)] = i;
    std::swap(dims[size_t(a.ndim() - 1)], dims[size_t(a.ndim() - 2)]);
    return permute(a, dims);
}

} // namespace flowlens
