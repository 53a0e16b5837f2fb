#pragma once

// Spatial ops on NCHW (and NCDHW) tensors: convolutions, pooling, resizing,
// padding, bilinear warping and modulated deformable sampling. Backward passes
// keep fixed accumulation order; parallel loops only ever touch disjoint
// output slices.

#include "flowlens/core/ops.hpp"

namespace flowlens {

namespace detail {
inline int conv_out(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}
} // namespace detail

// ---------------------------------------------------------------------------
// conv2d: x (N, Ci, H, W), w (Co, Ci/groups, kh, kw), b (Co) optional.
// im2col + gemm on both passes; the n-loop parallelizes over disjoint slices.

namespace detail {

// one sample's group slice (cig, H, W) -> cols (cig*kh*kw, Ho*Wo)
inline void im2col(const float* x, int cig, int H, int W, int kh, int kw, int stride, int pad,
                   int Ho, int Wo, float* cols) {
    for (int c = 0; c < cig; ++c)
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
                float* dst = cols + (((size_t(c) * kh + i) * kw + j) * Ho) * Wo;
                const float* src = x + size_t(c) * H * W;
                for (int ho = 0; ho < Ho; ++ho) {
                    int hi = ho * stride - pad + i;
                    float* drow = dst + size_t(ho) * Wo;
                    if (hi < 0 || hi >= H) {
                        std::fill(drow, drow + Wo, 0.f);
                        continue;
                    }
                    const float* srow = src + size_t(hi) * W;
                    int wo = 0;
                    int wi0 = -pad + j;
                    for (; wo < Wo && wi0 + wo * stride < 0; ++wo) drow[wo] = 0.f;
                    for (; wo < Wo && wi0 + wo * stride < W; ++wo) drow[wo] = srow[wi0 + wo * stride];
                    for (; wo < Wo; ++wo) drow[wo] = 0.f;
                }
            }
}

inline void col2im_acc(const float* cols, int cig, int H, int W, int kh, int kw, int stride,
                       int pad, int Ho, int Wo, float* x) {
    for (int c = 0; c < cig; ++c)
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
                const float* src = cols + (((size_t(c) * kh + i) * kw + j) * Ho) * Wo;
                float* dst = x + size_t(c) * H * W;
                for (int ho = 0; ho < Ho; ++ho) {
                    int hi = ho * stride - pad + i;
                    if (hi < 0 || hi >= H) continue;
                    const float* srow = src + size_t(ho) * Wo;
                    float* drow = dst + size_t(hi) * W;
                    for (int wo = 0; wo < Wo; ++wo) {
                        int wi = wo * stride - pad + j;
                        if (wi >= 0 && wi < W) drow[wi] += srow[wo];
                    }
                }
            }
}

} // namespace detail

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1,
                     int pad = 0, int groups = 1) {
    FL_CHECK(x.ndim() == 4 && w.ndim() == 4, DimensionError, "conv2d expects 4-d tensors");
    int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    int Co = w.dim(0), Cw = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    FL_CHECK(Ci % groups == 0 && Co % groups == 0, ConfigError, "conv2d group mismatch");
    FL_CHECK(Cw == Ci / groups, DimensionError, "conv2d weight channel mismatch");
    int Ho = detail::conv_out(H, kh, stride, pad);
    int Wo = detail::conv_out(W, kw, stride, pad);
    FL_CHECK(Ho > 0 && Wo > 0, DimensionError, "conv2d output collapsed to zero");
    int cig = Ci / groups, cog = Co / groups;
    long L = long(cig) * kh * kw, P = long(Ho) * Wo;

    std::vector<float> vals(size_t(N) * Co * P, 0.f);
    const float* px = x.cdata();
    const float* pw = w.cdata();
    const float* pb = b.defined() ? b.cdata() : nullptr;

    // keep the unfolded columns for the weight-gradient pass when affordable
    bool want_grad = grad_enabled() && (x.requires_grad() || w.requires_grad() ||
                                        (b.defined() && b.requires_grad()));
    bool keep_cols = want_grad && w.requires_grad() &&
                     size_t(N) * groups * size_t(L) * size_t(P) * 4 <= (size_t(96) << 20);
    auto cols_cache = keep_cols ? std::make_shared<std::vector<float>>(
                                      size_t(N) * groups * size_t(L) * size_t(P))
                                : nullptr;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (N > 1 && L * P > 100000)
#endif
    for (int n = 0; n < N; ++n) {
        std::vector<float> local;
        for (int g = 0; g < groups; ++g) {
            float* cols;
            if (cols_cache) {
                cols = cols_cache->data() + (size_t(n) * groups + size_t(g)) * size_t(L) * P;
            } else {
                local.resize(size_t(L) * P);
                cols = local.data();
            }
            detail::im2col(px + (size_t(n) * Ci + size_t(g) * cig) * H * W, cig, H, W, kh, kw,
                           stride, pad, Ho, Wo, cols);
            float* dst = vals.data() + (size_t(n) * Co + size_t(g) * cog) * P;
            if (pb)
                for (int co = 0; co < cog; ++co)
                    std::fill(dst + size_t(co) * P, dst + size_t(co + 1) * P, pb[g * cog + co]);
            detail::gemm_acc(pw + size_t(g) * cog * L, cols, dst, cog, P, L);
        }
    }

    Tensor tx = x, tw = w, tb = b;
    auto bw = [tx, tw, tb, cols_cache, N, Ci, H, W, Co, kh, kw, Ho, Wo, stride, pad, groups,
               cig, cog, L, P](const std::vector<float>& g) mutable {
        const float* px = tx.cdata();
        const float* pw = tw.cdata();
        if (tx.requires_grad()) {
            float* gx = grad_buf(tx).data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (N > 1 && L * P > 100000)
#endif
            for (int n = 0; n < N; ++n) {
                std::vector<float> dcols(size_t(L) * P);
                for (int gi = 0; gi < groups; ++gi) {
                    std::fill(dcols.begin(), dcols.end(), 0.f);
                    const float* gsrc = g.data() + (size_t(n) * Co + size_t(gi) * cog) * P;
                    // dcols = W^T * G
                    detail::gemm_acc_at(pw + size_t(gi) * cog * L, gsrc, dcols.data(), cog, P, L);
                    detail::col2im_acc(dcols.data(), cig, H, W, kh, kw, stride, pad, Ho, Wo,
                                       gx + (size_t(n) * Ci + size_t(gi) * cig) * H * W);
                }
            }
        }
        if (tw.requires_grad()) {
            float* gw = grad_buf(tw).data();
            std::vector<float> scratch;
            for (int n = 0; n < N; ++n)
                for (int gi = 0; gi < groups; ++gi) {
                    const float* cols;
                    if (cols_cache) {
                        cols = cols_cache->data() +
                               (size_t(n) * groups + size_t(gi)) * size_t(L) * P;
                    } else {
                        scratch.resize(size_t(L) * P);
                        detail::im2col(px + (size_t(n) * Ci + size_t(gi) * cig) * H * W, cig, H,
                                       W, kh, kw, stride, pad, Ho, Wo, scratch.data());
                        cols = scratch.data();
                    }
                    const float* gsrc = g.data() + (size_t(n) * Co + size_t(gi) * cog) * P;
                    // dW += G * cols^T
                    detail::gemm_acc_bt(gsrc, cols, gw + size_t(gi) * cog * L, cog, L, P);
                }
        }
        if (tb.defined() && tb.requires_grad()) {
            float* gb = grad_buf(tb).data();
            for (int n = 0; n < N; ++n)
                for (int co = 0; co < Co; ++co) {
                    const float* gsrc = g.data() + (size_t(n) * Co + co) * P;
                    double acc = 0.0;
                    for (long i = 0; i < P; ++i) acc += gsrc[i];
                    gb[co] += float(acc);
                }
        }
    };

    Tensor out(Shape{N, Co, Ho, Wo}, std::move(vals));
    bool any = x.requires_grad() || w.requires_grad() || (b.defined() && b.requires_grad());
    if (grad_enabled() && any) {
        out.impl()->requires_grad = true;
        out.impl()->parents.push_back(x.impl());
        out.impl()->parents.push_back(w.impl());
        if (b.defined()) out.impl()->parents.push_back(b.impl());
        out.impl()->backward_fn = std::move(bw);
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv3d: x (N, Ci, D, H, W), w (Co, Ci, kd, kh, kw); strides/pads per axis

inline Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int sd, int sh, int sw,
                     int pd, int ph, int pw_) {
    FL_CHECK(x.ndim() == 5 && w.ndim() == 5, DimensionError, "conv3d expects 5-d tensors");
    int N = x.dim(0), Ci = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
    int Co = w.dim(0), kd = w.dim(2), kh = w.dim(3), kw = w.dim(4);
    FL_CHECK(w.dim(1) == Ci, DimensionError, "conv3d channel mismatch");
    int Do = detail::conv_out(D, kd, sd, pd);
    int Ho = detail::conv_out(H, kh, sh, ph);
    int Wo = detail::conv_out(W, kw, sw, pw_);
    FL_CHECK(Do > 0 && Ho > 0 && Wo > 0, DimensionError, "conv3d output collapsed to zero");

    std::vector<float> vals(size_t(N) * Co * Do * Ho * Wo, 0.f);
    const float* px = x.cdata();
    const float* pw = w.cdata();
    const float* pb = b.defined() ? b.cdata() : nullptr;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int co = 0; co < Co; ++co)
        for (int n = 0; n < N; ++n)
            for (int od = 0; od < Do; ++od)
                for (int oh = 0; oh < Ho; ++oh)
                    for (int ow = 0; ow < Wo; ++ow) {
                        double acc = pb ? pb[co] : 0.0;
                        for (int ci = 0; ci < Ci; ++ci)
                            for (int i = 0; i < kd; ++i) {
                                int di = od * sd - pd + i;
                                if (di < 0 || di >= D) continue;
                                for (int j = 0; j < kh; ++j) {
                                    int hi = oh * sh - ph + j;
                                    if (hi < 0 || hi >= H) continue;
                                    for (int l = 0; l < kw; ++l) {
                                        int wi = ow * sw - pw_ + l;
                                        if (wi < 0 || wi >= W) continue;
                                        acc += double(px[(((size_t(n) * Ci + ci) * D + di) * H + hi) * W + wi]) *
                                               pw[(((size_t(co) * Ci + ci) * kd + i) * kh + j) * kw + l];
                                    }
                                }
                            }
                        vals[(((size_t(n) * Co + co) * Do + od) * Ho + oh) * Wo + ow] = float(acc);
                    }

    Tensor tx = x, tw = w, tb = b;
    auto bw = [tx, tw, tb, N, Ci, D, H, W, Co, kd, kh, kw, Do, Ho, Wo, sd, sh, sw, pd, ph,
               pw_](const std::vector<float>& g) mutable {
        const float* px = tx.cdata();
        const float* pw = tw.cdata();
        float* gx = tx.requires_grad() ? grad_buf(tx).data() : nullptr;
        float* gw = tw.requires_grad() ? grad_buf(tw).data() : nullptr;
        float* gb = (tb.defined() && tb.requires_grad()) ? grad_buf(tb).data() : nullptr;
        for (int n = 0; n < N; ++n)
            for (int co = 0; co < Co; ++co)
                for (int od = 0; od < Do; ++od)
                    for (int oh = 0; oh < Ho; ++oh)
                        for (int ow = 0; ow < Wo; ++ow) {
                            float go = g[(((size_t(n) * Co + co) * Do + od) * Ho + oh) * Wo + ow];
                            if (go == 0.f) continue;
                            if (gb) gb[co] += go;
                            for (int ci = 0; ci < Ci; ++ci)
                                for (int i = 0; i < kd; ++i) {
                                    int di = od * sd - pd + i;
                                    if (di < 0 || di >= D) continue;
                                    for (int j = 0; j < kh; ++j) {
                                        int hi = oh * sh - ph + j;
                                        if (hi < 0 || hi >= H) continue;
                                        for (int l = 0; l < kw; ++l) {
                                            int wi = ow * sw - pw_ + l;
                                            if (wi < 0 || wi >= W) continue;
                                            size_t xi = (((size_t(n) * Ci + ci) * D + di) * H + hi) * W + wi;
                                            size_t widx = (((size_t(co) * Ci + ci) * kd + i) * kh + j) * kw + l;
                                            if (gx) gx[xi] += go * pw[widx];
                                            if (gw) gw[widx] += go * px[xi];
                                        }
                                    }
                                }
                        }
    };

    Tensor out(Shape{N, Co, Do, Ho, Wo}, std::move(vals));
    bool any = x.requires_grad() || w.requires_grad() || (b.defined() && b.requires_grad());
    if (grad_enabled() && any) {
        out.impl()->requires_grad = true;
        out.impl()->parents.push_back(x.impl());
        out.impl()->parents.push_back(w.impl());
        if (b.defined()) out.impl()->parents.push_back(b.impl());
        out.impl()->backward_fn = std::move(bw);
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv_transpose2d: x (N, Ci, H, W), w (Ci, Co, kh, kw), out dims
// (H-1)*stride - 2*pad + k. Expressed through the same im2col/col2im pair
// with the roles of input and output swapped.

inline Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b,
                               int stride = 2, int pad = 1) {
    FL_CHECK(x.ndim() == 4 && w.ndim() == 4, DimensionError, "conv_transpose2d expects 4-d");
    int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    FL_CHECK(w.dim(0) == Ci, DimensionError, "conv_transpose2d channel mismatch");
    int Co = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    int Ho = (H - 1) * stride - 2 * pad + kh;
    int Wo = (W - 1) * stride - 2 * pad + kw;
    FL_CHECK(Ho > 0 && Wo > 0, DimensionError, "conv_transpose2d output collapsed");
    long L = long(Co) * kh * kw;   // col rows (scatter side)
    long P = long(H) * W;          // anchor positions

    std::vector<float> vals(size_t(N) * Co * Ho * Wo, 0.f);
    const float* px = x.cdata();
    const float* pw = w.cdata();
    const float* pb = b.defined() ? b.cdata() : nullptr;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (N > 1 && L * P > 100000)
#endif
    for (int n = 0; n < N; ++n) {
        std::vector<float> cols(size_t(L) * P, 0.f);
        // cols = W^T * x_n
        detail::gemm_acc_at(pw, px + size_t(n) * Ci * P, cols.data(), Ci, P, L);
        float* dst = vals.data() + size_t(n) * Co * Ho * Wo;
        detail::col2im_acc(cols.data(), Co, Ho, Wo, kh, kw, stride, pad, H, W, dst);
        if (pb)
            for (int co = 0; co < Co; ++co) {
                float* plane = dst + size_t(co) * Ho * Wo;
                for (long i = 0; i < long(Ho) * Wo; ++i) plane[i] += pb[co];
            }
    }

    Tensor tx = x, tw = w, tb = b;
    auto bw = [tx, tw, tb, N, Ci, H, W, Co, kh, kw, Ho, Wo, stride, pad, L,
               P](const std::vector<float>& g) mutable {
        const float* px = tx.cdata();
        const float* pw = tw.cdata();
        float* gx = tx.requires_grad() ? grad_buf(tx).data() : nullptr;
        float* gw = tw.requires_grad() ? grad_buf(tw).data() : nullptr;
        float* gb = (tb.defined() && tb.requires_grad()) ? grad_buf(tb).data() : nullptr;
        if (gx) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (N > 1 && L * P > 100000)
#endif
            for (int n = 0; n < N; ++n) {
                std::vector<float> cols(size_t(L) * P);
                detail::im2col(g.data() + size_t(n) * Co * Ho * Wo, Co, Ho, Wo, kh, kw, stride,
                               pad, H, W, cols.data());
                // dx = W * cols
                detail::gemm_acc(pw, cols.data(), gx + size_t(n) * Ci * P, Ci, P, L);
            }
        }
        if (gw) {
            std::vector<float> cols(size_t(L) * P);
            for (int n = 0; n < N; ++n) {
                detail::im2col(g.data() + size_t(n) * Co * Ho * Wo, Co, Ho, Wo, kh, kw, stride,
                               pad, H, W, cols.data());
                // dW += x_n * cols^T
                detail::gemm_acc_bt(px + size_t(n) * Ci * P, cols.data(), gw, Ci, L, P);
            }
        }
        if (gb) {
            for (int n = 0; n < N; ++n)
                for (int co = 0; co < Co; ++co) {
                    const float* plane = g.data() + (size_t(n) * Co + co) * Ho * Wo;
                    double acc = 0.0;
                    for (long i = 0; i < long(Ho) * Wo; ++i) acc += plane[i];
                    gb[co] += float(acc);
                }
        }
    };

    Tensor out(Shape{N, Co, Ho, Wo}, std::move(vals));
    bool any = x.requires_grad() || w.requires_grad() || (b.defined() && b.requires_grad());
    if (grad_enabled() && any) {
        out.impl()->requires_grad = true;
        out.impl()->parents.push_back(x.impl());
        out.impl()->parents.push_back(w.impl());
        if (b.defined()) out.impl()->parents.push_back(b.impl());
        out.impl()->backward_fn = std::move(bw);
    }
    return out;
}

// ---------------------------------------------------------------------------
// average pooling (used for strip pooling and flow downsampling)

inline Tensor avg_pool2d(const Tensor& x, int kh, int kw, int sh = -1, int sw = -1) {
    if (sh < 0) sh = kh;
    if (sw < 0) sw = kw;
    FL_CHECK(x.ndim() == 4, DimensionError, "avg_pool2d expects 4-d");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int Ho = detail::conv_out(H, kh, sh, 0);
    int Wo = detail::conv_out(W, kw, sw, 0);
    FL_CHECK(Ho > 0 && Wo > 0, DimensionError, "avg_pool2d output collapsed");
    std::vector<float> vals(size_t(N) * C * Ho * Wo);
    const float* px = x.cdata();
    float inv = 1.f / float(kh * kw);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* src = px + ((size_t(n) * C + c) * H) * W;
            float* dst = vals.data() + ((size_t(n) * C + c) * Ho) * Wo;
            for (int ho = 0; ho < Ho; ++ho)
                for (int wo = 0; wo < Wo; ++wo) {
                    double acc = 0.0;
                    for (int i = 0; i < kh; ++i)
                        for (int j = 0; j < kw; ++j) acc += src[(ho * sh + i) * W + wo * sw + j];
                    dst[ho * Wo + wo] = float(acc) * inv;
                }
        }
    Tensor tx = x;
    return make_op(Shape{N, C, Ho, Wo}, std::move(vals), {x},
                   [tx, N, C, H, W, Ho, Wo, kh, kw, sh, sw, inv](const std::vector<float>& g) mutable {
                       if (!tx.requires_grad()) return;
                       float* gx = grad_buf(tx).data();
                       for (int n = 0; n < N; ++n)
                           for (int c = 0; c < C; ++c) {
                               float* dst = gx + ((size_t(n) * C + c) * H) * W;
                               const float* src = g.data() + ((size_t(n) * C + c) * Ho) * Wo;
                               for (int ho = 0; ho < Ho; ++ho)
                                   for (int wo = 0; wo < Wo; ++wo) {
                                       float go = src[ho * Wo + wo] * inv;
                                       for (int i = 0; i < kh; ++i)
                                           for (int j = 0; j < kw; ++j)
                                               dst[(ho * sh + i) * W + wo * sw + j] += go;
                                   }
                           }
                   });
}

// ---------------------------------------------------------------------------
// bilinear resize to an explicit size (half-pixel centers, like
// align_corners=false)

inline Tensor resize_bilinear(const Tensor& x, int Ho, int Wo) {
    FL_CHECK(x.ndim() == 4, DimensionError, "resize_bilinear expects 4-d");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    float scale_h = float(H) / float(Ho);
    float scale_w = float(W) / float(Wo);
    std::vector<float> vals(size_t(N) * C * Ho * Wo);
    const float* px = x.cdata();

    std::vector<int> h0(static_cast<size_t>(Ho)), h1(static_cast<size_t>(Ho));
    std::vector<int> w0(static_cast<size_t>(Wo)), w1(static_cast<size_t>(Wo));
    std::vector<float> fh(static_cast<size_t>(Ho)), fw(static_cast<size_t>(Wo));
    for (int i = 0; i < Ho; ++i) {
        float src = (float(i) + 0.5f) * scale_h - 0.5f;
        src = std::min(std::max(src, 0.f), float(H - 1));
        h0[size_t(i)] = int(src);
        h1[size_t(i)] = std::min(h0[size_t(i)] + 1, H - 1);
        fh[size_t(i)] = src - float(h0[size_t(i)]);
    }
    for (int j = 0; j < Wo; ++j) {
        float src = (float(j) + 0.5f) * scale_w - 0.5f;
        src = std::min(std::max(src, 0.f), float(W - 1));
        w0[size_t(j)] = int(src);
        w1[size_t(j)] = std::min(w0[size_t(j)] + 1, W - 1);
        fw[size_t(j)] = src - float(w0[size_t(j)]);
    }
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* src = px + ((size_t(n) * C + c) * H) * W;
            float* dst = vals.data() + ((size_t(n) * C + c) * Ho) * Wo;
            for (int i = 0; i < Ho; ++i)
                for (int j = 0; j < Wo; ++j) {
                    float a = src[h0[size_t(i)] * W + w0[size_t(j)]];
                    float b2 = src[h0[size_t(i)] * W + w1[size_t(j)]];
                    float c2 = src[h1[size_t(i)] * W + w0[size_t(j)]];
                    float d = src[h1[size_t(i)] * W + w1[size_t(j)]];
                    float top = a + (b2 - a) * fw[size_t(j)];
                    float bot = c2 + (d - c2) * fw[size_t(j)];
                    dst[i * Wo + j] = top + (bot - top) * fh[size_t(i)];
                }
        }
    Tensor tx = x;
    return make_op(Shape{N, C, Ho, Wo}, std::move(vals), {x},
                   [tx, N, C, H, W, Ho, Wo, h0, h1, w0, w1, fh, fw](const std::vector<float>& g) mutable {
                       if (!tx.requires_grad()) return;
                       float* gx = grad_buf(tx).data();
                       for (int n = 0; n < N; ++n)
                           for (int c = 0; c < C; ++c) {
                               float* dst = gx + ((size_t(n) * C + c) * H) * W;
                               const float* src = g.data() + ((size_t(n) * C + c) * Ho) * Wo;
                               for (int i = 0; i < Ho; ++i)
                                   for (int j = 0; j < Wo; ++j) {
                                       float go = src[i * Wo + j];
                                       if (go == 0.f) continue;
                                       float wh1 = fh[size_t(i)], wh0 = 1.f - wh1;
                                       float ww1 = fw[size_t(j)], ww0 = 1.f - ww1;
                                       dst[h0[size_t(i)] * W + w0[size_t(j)]] += go * wh0 * ww0;
                                       dst[h0[size_t(i)] * W + w1[size_t(j)]] += go * wh0 * ww1;
                                       dst[h1[size_t(i)] * W + w0[size_t(j)]] += go * wh1 * ww0;
                                       dst[h1[size_t(i)] * W + w1[size_t(j)]] += go * wh1 * ww1;
                                   }
                           }
                   });
}

// ---------------------------------------------------------------------------
// constant 2-d padding on NCHW

inline Tensor pad2d(const Tensor& x, int pt, int pb, int pl, int pr, float value = 0.f) {
    FL_CHECK(x.ndim() == 4, DimensionError, "pad2d expects 4-d");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int Ho = H + pt + pb, Wo = W + pl + pr;
    std::vector<float> vals(size_t(N) * C * Ho * Wo, value);
    const float* px = x.cdata();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                std::memcpy(vals.data() + (((size_t(n) * C + c) * Ho + h + pt) * Wo + pl),
                            px + ((size_t(n) * C + c) * H + h) * W, size_t(W) * sizeof(float));
    Tensor tx = x;
    return make_op(Shape{N, C, Ho, Wo}, std::move(vals), {x},
                   [tx, N, C, H, W, Ho, Wo, pt, pl](const std::vector<float>& g) mutable {
                       if (!tx.requires_grad()) return;
                       float* gx = grad_buf(tx).data();
                       for (int n = 0; n < N; ++n)
                           for (int c = 0; c < C; ++c)
                               for (int h = 0; h < H; ++h) {
                                   const float* src =
                                       g.data() + (((size_t(n) * C + c) * Ho + h + pt) * Wo + pl);
                                   float* dst = gx + ((size_t(n) * C + c) * H + h) * W;
                                   for (int w = 0; w < W; ++w) dst[w] += src[w];
                               }
                   });
}

// ---------------------------------------------------------------------------
// flow-guided backward warping, border-clamped bilinear sampling.
// feat (N, C, H, W), flow (N, 2, H, W) with channel 0 = dx, channel 1 = dy.
// out(y, x) = feat(y + dy, x + dx). Differentiable in both arguments;
// gradients w.r.t. flow vanish where the sampling point saturates the border.

inline Tensor warp_bilinear(const Tensor& feat, const Tensor& flow) {
    FL_CHECK(feat.ndim() == 4 && flow.ndim() == 4, DimensionError, "warp expects 4-d tensors");
    FL_CHECK(flow.dim(1) == 2, DimensionError, "flow must have 2 channels");
    FL_CHECK(feat.dim(0) == flow.dim(0) && feat.dim(2) == flow.dim(2) &&
                 feat.dim(3) == flow.dim(3),
             DimensionError, "warp resolution mismatch");
    int N = feat.dim(0), C = feat.dim(1), H = feat.dim(2), W = feat.dim(3);
    std::vector<float> vals(size_t(N) * C * H * W);
    const float* pf = feat.cdata();
    const float* pv = flow.cdata();
    for (int n = 0; n < N; ++n) {
        const float* fx = pv + (size_t(n) * 2 + 0) * H * W;
        const float* fy = pv + (size_t(n) * 2 + 1) * H * W;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                float sx = float(x) + fx[y * W + x];
                float sy = float(y) + fy[y * W + x];
                float cx = std::min(std::max(sx, 0.f), float(W - 1));
                float cy = std::min(std::max(sy, 0.f), float(H - 1));
                if (!std::isfinite(cx)) cx = 0.f; // non-finite flow: keep indices safe
                if (!std::isfinite(cy)) cy = 0.f;
                int x0 = int(cx), y0 = int(cy);
                int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
                float wx = cx - float(x0), wy = cy - float(y0);
                for (int c = 0; c < C; ++c) {
                    const float* src = pf + ((size_t(n) * C + c) * H) * W;
                    float top = src[y0 * W + x0] + (src[y0 * W + x1] - src[y0 * W + x0]) * wx;
                    float bot = src[y1 * W + x0] + (src[y1 * W + x1] - src[y1 * W + x0]) * wx;
                    vals[((size_t(n) * C + c) * H + y) * W + x] = top + (bot - top) * wy;
                }
            }
    }
    Tensor tf = feat, tv = flow;
    return make_op(Shape{N, C, H, W}, std::move(vals), {feat, flow},
                   [tf, tv, N, C, H, W](const std::vector<float>& g) mutable {
                       const float* pf = tf.cdata();
                       const float* pv = tv.cdata();
                       float* gf = tf.requires_grad() ? grad_buf(tf).data() : nullptr;
                       float* gv = tv.requires_grad() ? grad_buf(tv).data() : nullptr;
                       for (int n = 0; n < N; ++n) {
                           const float* fx = pv + (size_t(n) * 2 + 0) * H * W;
                           const float* fy = pv + (size_t(n) * 2 + 1) * H * W;
                           for (int y = 0; y < H; ++y)
                               for (int x = 0; x < W; ++x) {
                                   float sx = float(x) + fx[y * W + x];
                                   float sy = float(y) + fy[y * W + x];
                                   bool in_x = sx > 0.f && sx < float(W - 1);
                                   bool in_y = sy > 0.f && sy < float(H - 1);
                                   float cx = std::min(std::max(sx, 0.f), float(W - 1));
                                   float cy = std::min(std::max(sy, 0.f), float(H - 1));
                                   if (!std::isfinite(cx)) cx = 0.f;
                                   if (!std::isfinite(cy)) cy = 0.f;
                                   int x0 = int(cx), y0 = int(cy);
                                   int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
                                   float wx = cx - float(x0), wy = cy - float(y0);
                                   double dx_acc = 0.0, dy_acc = 0.0;
                                   for (int c = 0; c < C; ++c) {
                                       float go = g[((size_t(n) * C + c) * H + y) * W + x];
                                       if (go == 0.f) continue;
                                       const float* src = pf + ((size_t(n) * C + c) * H) * W;
                                       float v00 = src[y0 * W + x0], v01 = src[y0 * W + x1];
                                       float v10 = src[y1 * W + x0], v11 = src[y1 * W + x1];
                                       if (gf) {
                                           float* dst = gf + ((size_t(n) * C + c) * H) * W;
                                           dst[y0 * W + x0] += go * (1.f - wx) * (1.f - wy);
                                           dst[y0 * W + x1] += go * wx * (1.f - wy);
                                           dst[y1 * W + x0] += go * (1.f - wx) * wy;
                                           dst[y1 * W + x1] += go * wx * wy;
                                       }
                                       if (gv) {
                                           float dvdx = (v01 - v00) * (1.f - wy) + (v11 - v10) * wy;
                                           float dvdy = (v10 - v00) * (1.f - wx) + (v11 - v01) * wx;
                                           dx_acc += double(go) * dvdx;
                                           dy_acc += double(go) * dvdy;
                                       }
                                   }
                                   if (gv) {
                                       if (in_x) gv[(size_t(n) * 2 + 0) * H * W + y * W + x] += float(dx_acc);
                                       if (in_y) gv[(size_t(n) * 2 + 1) * H * W + y * W + x] += float(dy_acc);
                                   }
                               }
                       }
                   });
}

// ---------------------------------------------------------------------------
// modulated deformable sampling (the gather stage of a deformable conv).
// x (N, C, H, W); offsets (N, 2*K*G, H, W) as (dy,dx) pairs per group/tap;
// modulation (N, K*G, H, W); K = k*k. Output (N, C*K, H, W) where channel
// c*K + tap holds the modulated sample for input channel c at that tap.
// Sampling is border-clamped, matching warp_bilinear.

inline Tensor deform_unfold(const Tensor& x, const Tensor& offsets, const Tensor& modulation,
                            int k, int groups) {
    FL_CHECK(x.ndim() == 4, DimensionError, "deform_unfold expects 4-d input");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int K = k * k;
    FL_CHECK(offsets.dim(1) == 2 * K * groups, DimensionError, "offsets channel mismatch");
    FL_CHECK(modulation.dim(1) == K * groups, DimensionError, "modulation channel mismatch");
    FL_CHECK(offsets.dim(0) == N && offsets.dim(2) == H && offsets.dim(3) == W, DimensionError,
             "offsets spatial mismatch");
    FL_CHECK(C % groups == 0, ConfigError, "channels must divide deform groups");
    int cg = C / groups;
    int half = k / 2;

    std::vector<float> vals(size_t(N) * C * K * H * W);
    const float* px = x.cdata();
    const float* po = offsets.cdata();
    const float* pm = modulation.cdata();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            int gi = c / cg;
            const float* src = px + ((size_t(n) * C + c) * H) * W;
            for (int tap = 0; tap < K; ++tap) {
                int ki = tap / k - half, kj = tap % k - half;
                const float* ody = po + ((size_t(n) * 2 * K * groups + 2 * (gi * K + tap) + 0) * H) * W;
                const float* odx = po + ((size_t(n) * 2 * K * groups + 2 * (gi * K + tap) + 1) * H) * W;
                const float* md = pm + ((size_t(n) * K * groups + gi * K + tap) * H) * W;
                float* dst = vals.data() + ((size_t(n) * C + c) * K + tap) * H * W;
                for (int y = 0; y < H; ++y)
                    for (int x2 = 0; x2 < W; ++x2) {
                        float sy = float(y + ki) + ody[y * W + x2];
                        float sx = float(x2 + kj) + odx[y * W + x2];
                        float cx = std::min(std::max(sx, 0.f), float(W - 1));
                        float cy = std::min(std::max(sy, 0.f), float(H - 1));
                        if (!std::isfinite(cx)) cx = 0.f;
                        if (!std::isfinite(cy)) cy = 0.f;
                        int x0 = int(cx), y0 = int(cy);
                        int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
                        float wx = cx - float(x0), wy = cy - float(y0);
                        float top = src[y0 * W + x0] + (src[y0 * W + x1] - src[y0 * W + x0]) * wx;
                        float bot = src[y1 * W + x0] + (src[y1 * W + x1] - src[y1 * W + x0]) * wx;
                        dst[y * W + x2] = (top + (bot - top) * wy) * md[y * W + x2];
                    }
            }
        }

    Tensor tx = x, to = offsets, tm = modulation;
    return make_op(Shape{N, C * K, H, W}, std::move(vals), {x, offsets, modulation},
                   [tx, to, tm, N, C, H, W, K, k, groups, cg, half](const std::vector<float>& g) mutable {
                       const float* px = tx.cdata();
                       const float* po = to.cdata();
                       const float* pm = tm.cdata();
                       float* gx = tx.requires_grad() ? grad_buf(tx).data() : nullptr;
                       float* go_ = to.requires_grad() ? grad_buf(to).data() : nullptr;
                       float* gm = tm.requires_grad() ? grad_buf(tm).data() : nullptr;
                       for (int n = 0; n < N; ++n)
                           for (int c = 0; c < C; ++c) {
                               int gi = c / cg;
                               const float* src = px + ((size_t(n) * C + c) * H) * W;
                               float* srcg = gx ? gx + ((size_t(n) * C + c) * H) * W : nullptr;
                               for (int tap = 0; tap < K; ++tap) {
                                   int ki = tap / k - half, kj = tap % k - half;
                                   size_t oy_base = ((size_t(n) * 2 * K * groups + 2 * (gi * K + tap) + 0) * H) * size_t(W);
                                   size_t ox_base = ((size_t(n) * 2 * K * groups + 2 * (gi * K + tap) + 1) * H) * size_t(W);
                                   size_t m_base = ((size_t(n) * K * groups + gi * K + tap) * H) * size_t(W);
                                   const float* gsrc = g.data() + ((size_t(n) * C + c) * K + tap) * H * W;
                                   for (int y = 0; y < H; ++y)
                                       for (int x2 = 0; x2 < W; ++x2) {
                                           float gv = gsrc[y * W + x2];
                                           if (gv == 0.f) continue;
                                           float m = pm[m_base + y * W + x2];
                                           float sy = float(y + ki) + po[oy_base + y * W + x2];
                                           float sx = float(x2 + kj) + po[ox_base + y * W + x2];
                                           bool in_x = sx > 0.f && sx < float(W - 1);
                                           bool in_y = sy > 0.f && sy < float(H - 1);
                                           float cxp = std::min(std::max(sx, 0.f), float(W - 1));
                                           float cyp = std::min(std::max(sy, 0.f), float(H - 1));
                                           if (!std::isfinite(cxp)) cxp = 0.f;
                                           if (!std::isfinite(cyp)) cyp = 0.f;
                                           int x0 = int(cxp), y0 = int(cyp);
                                           int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
                                           float wx = cxp - float(x0), wy = cyp - float(y0);
                                           float v00 = src[y0 * W + x0], v01 = src[y0 * W + x1];
                                           float v10 = src[y1 * W + x0], v11 = src[y1 * W + x1];
                                           float top = v00 + (v01 - v00) * wx;
                                           float bot = v10 + (v11 - v10) * wx;
                                           float sampled = top + (bot - top) * wy;
                                           if (gm) gm[m_base + y * W + x2] += gv * sampled;
                                           float gmod = gv * m;
                                           if (srcg) {
                                               srcg[y0 * W + x0] += gmod * (1.f - wx) * (1.f - wy);
                                               srcg[y0 * W + x1] += gmod * wx * (1.f - wy);
                                               srcg[y1 * W + x0] += gmod * (1.f - wx) * wy;
                                               srcg[y1 * W + x1] += gmod * wx * wy;
                                           }
                                           if (go_) {
                                               float dvdx = (v01 - v00) * (1.f - wy) + (v11 - v10) * wy;
                                               float dvdy = (v10 - v00) * (1.f - wx) + (v11 - v01) * wx;
                                               if (in_x) go_[ox_base + y * W + x2] += gmod * dvdx;
                                               if (in_y) go_[oy_base + y * W + x2] += gmod * dvdy;
                                           }
                                       }
                               }
                           }
                   });
}

// ---------------------------------------------------------------------------
// token unfold / fold (the gather/scatter behind soft split & composite).
// x (N, C, H, W) -> tokens (N, L, C*k*k), channel-major tap layout
// (token channel = c*k*k + ph*k + pw), anchors row-major with given stride
// over the zero-padded plane.

inline void token_grid_dims(int H, int W, int k, int stride, int pad, int& gh, int& gw) {
    gh = (H + 2 * pad - k) / stride + 1;
    gw = (W + 2 * pad - k) / stride + 1;
}

inline Tensor unfold_tokens(const Tensor& x, int k, int stride, int pad) {
    FL_CHECK(x.ndim() == 4, DimensionError, "unfold_tokens expects 4-d");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    FL_CHECK(H + 2 * pad >= k && W + 2 * pad >= k, DimensionError,
             "unfold_tokens input smaller than patch");
    int gh, gw;
    token_grid_dims(H, W, k, stride, pad, gh, gw);
    int L = gh * gw, K = k * k;
    std::vector<float> vals(size_t(N) * L * C * K, 0.f);
    const float* px = x.cdata();
    for (int n = 0; n < N; ++n)
        for (int gy = 0; gy < gh; ++gy)
            for (int gx2 = 0; gx2 < gw; ++gx2) {
                int l = gy * gw + gx2;
                float* tok = vals.data() + (size_t(n) * L + l) * C * K;
                for (int c = 0; c < C; ++c) {
                    const float* src = px + ((size_t(n) * C + c) * H) * W;
                    for (int i = 0; i < k; ++i) {
                        int hi = gy * stride - pad + i;
                        if (hi < 0 || hi >= H) continue;
                        for (int j = 0; j < k; ++j) {
                            int wi = gx2 * stride - pad + j;
                            if (wi < 0 || wi >= W) continue;
                            tok[c * K + i * k + j] = src[hi * W + wi];
                        }
                    }
                }
            }
    Tensor tx = x;
    return make_op(Shape{N, L, C * K}, std::move(vals), {x},
                   [tx, N, C, H, W, gh, gw, k, stride, pad](const std::vector<float>& g) mutable {
                       if (!tx.requires_grad()) return;
                       float* gxp = grad_buf(tx).data();
                       int L = gh * gw, K = k * k;
                       for (int n = 0; n < N; ++n)
                           for (int gy = 0; gy < gh; ++gy)
                               for (int gx2 = 0; gx2 < gw; ++gx2) {
                                   int l = gy * gw + gx2;
                                   const float* tok = g.data() + (size_t(n) * L + l) * C * K;
                                   for (int c = 0; c < C; ++c) {
                                       float* dst = gxp + ((size_t(n) * C + c) * H) * W;
                                       for (int i = 0; i < k; ++i) {
                                           int hi = gy * stride - pad + i;
                                           if (hi < 0 || hi >= H) continue;
                                           for (int j = 0; j < k; ++j) {
                                               int wi = gx2 * stride - pad + j;
                                               if (wi < 0 || wi >= W) continue;
                                               dst[hi * W + wi] += tok[c * K + i * k + j];
                                           }
                                       }
                                   }
                               }
                   });
}

// Overlap-add of tokens back onto the (H, W) plane (no normalization here).
inline Tensor fold_tokens(const Tensor& tokens, int C, int H, int W, int k, int stride, int pad) {
    FL_CHECK(tokens.ndim() == 3, DimensionError, "fold_tokens expects (N, L, C*k*k)");
    int gh, gw;
    token_grid_dims(H, W, k, stride, pad, gh, gw);
    int L = gh * gw, K = k * k;
    int N = tokens.dim(0);
    FL_CHECK(tokens.dim(1) == L, DimensionError, "fold_tokens anchor count mismatch");
    FL_CHECK(tokens.dim(2) == C * K, DimensionError, "fold_tokens channel mismatch");
    std::vector<float> vals(size_t(N) * C * H * W, 0.f);
    const float* pt = tokens.cdata();
    for (int n = 0; n < N; ++n)
        for (int gy = 0; gy < gh; ++gy)
            for (int gx2 = 0; gx2 < gw; ++gx2) {
                int l = gy * gw + gx2;
                const float* tok = pt + (size_t(n) * L + l) * C * K;
                for (int c = 0; c < C; ++c) {
                    float* dst = vals.data() + ((size_t(n) * C + c) * H) * W;
                    for (int i = 0; i < k; ++i) {
                        int hi = gy * stride - pad + i;
                        if (hi < 0 || hi >= H) continue;
                        for (int j = 0; j < k; ++j) {
                            int wi = gx2 * stride - pad + j;
                            if (wi < 0 || wi >= W) continue;
                            dst[hi * W + wi] += tok[c * K + i * k + j];
                        }
                    }
                }
            }
    Tensor tt = tokens;
    return make_op(Shape{N, C, H, W}, std::move(vals), {tokens},
                   [tt, N, C, H, W, gh, gw, k, stride, pad](const std::vector<float>& g) mutable {
                       if (!tt.requires_grad()) return;
                       float* gt = grad_buf(tt).data();
                       int L = gh * gw, K = k * k;
                       for (int n = 0; n < N; ++n)
                           for (int gy = 0; gy < gh; ++gy)
                               for (int gx2 = 0; gx2 < gw; ++gx2) {
                                   int l = gy * gw + gx2;
                                   float* tok = gt + (size_t(n) * L + l) * C * K;
                                   for (int c = 0; c < C; ++c) {
                                       const float* src = g.data() + ((size_t(n) * C + c) * H) * W;
                                       for (int i = 0; i < k; ++i) {
                                           int hi = gy * stride - pad + i;
                                           if (hi < 0 || hi >= H) continue;
                                           for (int j = 0; j < k; ++j) {
                                               int wi = gx2 * stride - pad + j;
                                               if (wi < 0 || wi >= W) continue;
                                               tok[c * K + i * k + j] += src[hi * W + wi];
                                           }
                                       }
                                   }
                               }
                   });
}

// Per-pixel count of covering patches for the fold geometry above.
inline Tensor overlap_counts(int H, int W, int k, int stride, int pad) {
    int gh, gw;
    token_grid_dims(H, W, k, stride, pad, gh, gw);
    Tensor counts(Shape{1, 1, H, W}, 0.f);
    float* p = counts.data();
    for (int gy = 0; gy < gh; ++gy)
        for (int gx2 = 0; gx2 < gw; ++gx2)
            for (int i = 0; i < k; ++i) {
                int hi = gy * stride - pad + i;
                if (hi < 0 || hi >= H) continue;
                for (int j = 0; j < k; ++j) {
                    int wi = gx2 * stride - pad + j;
                    if (wi < 0 || wi >= W) continue;
                    p[hi * W + wi] += 1.f;
                }
            }
    return counts;
}

} // namespace flowlens
