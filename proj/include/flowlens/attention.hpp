#pragma once

// Multi-head attention over spatio-temporal token grids, with the pluggable
// neighborhood variants used by the transformer blocks: dense, local window,
// focal (fine window + pooled coarse surround), and the 3D-decoupled form
// shared with the clip-recurrent hub.

#include "flowlens/core/nn.hpp"
#include "flowlens/tokens.hpp"

namespace flowlens {

enum class AttentionKind { dense, local_window, focal, decoupled3d };

struct AttentionVariant {
    AttentionKind kind = AttentionKind::focal;
    int window_h = 5, window_w = 9; // fine window (local_window / focal)
    int focal_levels = 1;           // 0 disables the pooled coarse level
    int pool_h = 4, pool_w = 4;     // coarse pooling kernel (focal)
    int strip_width = 2;            // decoupled3d
    int strip_pool = 4;             // decoupled3d; <= 0 disables pooled keys

    static AttentionVariant dense() { return {AttentionKind::dense}; }
    static AttentionVariant local(int wh, int ww) {
        AttentionVariant v{AttentionKind::local_window};
        v.window_h = wh;
        v.window_w = ww;
        return v;
    }
};

// Collected softmax maps for the weight-inspection debug path.
using AttentionDebug = std::vector<Tensor>;

// Batched scaled-dot-product attention: q (B, Sq, C), k/v (B, Sk, C).
inline Tensor mha_batched(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                          AttentionDebug* debug = nullptr) {
    FL_CHECK(q.ndim() == 3 && k.ndim() == 3 && v.ndim() == 3, DimensionError,
             "attention expects (B, S, C) tensors");
    int B = q.dim(0), Sq = q.dim(1), C = q.dim(2);
    int Sk = k.dim(1);
    FL_CHECK(k.dim(0) == B && v.dim(0) == B && v.dim(1) == Sk && k.dim(2) == C && v.dim(2) == C,
             DimensionError, "attention shape mismatch");
    FL_CHECK(C % heads == 0, ConfigError, "config-error: heads must divide the embed dim");
    int dh = C / heads;

    auto split_heads = [&](const Tensor& t, int S) {
        return reshape(permute(reshape(t, {B, S, heads, dh}), {0, 2, 1, 3}),
                       {B * heads, S, dh});
    };
    Tensor qh = split_heads(q, Sq);
    Tensor kh = split_heads(k, Sk);
    Tensor vh = split_heads(v, Sk);
    Tensor scores = mul_scalar(matmul(qh, transpose_last2(kh)), 1.f / std::sqrt(float(dh)));
    Tensor attn = softmax_lastdim(scores);
    if (debug) debug->push_back(attn.detach());
    Tensor out = matmul(attn, vh); // (B*heads, Sq, dh)
    return reshape(permute(reshape(out, {B, heads, Sq, dh}), {0, 2, 1, 3}), {B, Sq, C});
}

namespace detail {

inline Tensor grid_view(const TokenGrid& g) {
    return reshape(g.tokens, {g.frames(), g.grid_h, g.grid_w, g.channels()});
}

inline Tensor flatten_grid(const Tensor& t4) {
    return reshape(t4, {t4.dim(0), t4.dim(1) * t4.dim(2), t4.dim(3)});
}

// (T, Wh, Ww, C) -> (T, C, Wh, Ww) for pooling ops
inline Tensor to_nchw(const Tensor& t4) { return permute(t4, {0, 3, 1, 2}); }
inline Tensor to_nhwc(const Tensor& t4) { return permute(t4, {0, 2, 3, 1}); }

} // namespace detail

// Attention along the time axis only: every spatial location attends over its
// own temporal tube. q (Tq, L, C) tokens, k/v (Tk, L, C).
inline Tensor temporal_attention(const TokenGrid& q, const TokenGrid& k, const TokenGrid& v,
                                 int heads, AttentionDebug* debug = nullptr) {
    FL_CHECK(q.count() == k.count() && q.channels() == k.channels(), DimensionError,
             "temporal attention: spatial layout mismatch");
    FL_CHECK(k.frames() == v.frames() && k.count() == v.count(), DimensionError,
             "temporal attention: key/value mismatch");
    // (T, L, C) -> (L, T, C)
    Tensor qt = permute(q.tokens, {1, 0, 2});
    Tensor kt = permute(k.tokens, {1, 0, 2});
    Tensor vt = permute(v.tokens, {1, 0, 2});
    Tensor out = mha_batched(qt, kt, vt, heads, debug); // (L, Tq, C)
    return permute(out, {1, 0, 2});
}

enum class StripAxis { horizontal, vertical };

// Strip-decoupled attention: the grid is partitioned into non-overlapping
// strips of `strip_width` rows (horizontal) or columns (vertical); each strip
// attends over its own tokens plus pooled coarse keys unfolded along the
// strip (pool_kernel tokens per pooled key). Time stays decoupled: frame t
// queries frame t of the key grid.
inline Tensor strip_attention(const TokenGrid& q, const TokenGrid& k, const TokenGrid& v,
                              StripAxis axis, int strip_width, int pool_kernel, int heads,
                              AttentionDebug* debug = nullptr) {
    FL_CHECK(q.frames() == k.frames() && k.frames() == v.frames(), DimensionError,
             "strip attention: frame count mismatch (cache from a different clip shape)");
    FL_CHECK(q.grid_h == k.grid_h && q.grid_w == k.grid_w, DimensionError,
             "strip attention: grid mismatch");
    int T = q.frames(), C = q.channels();

    Tensor q4 = detail::grid_view(q);
    Tensor k4 = detail::grid_view(k);
    Tensor v4 = detail::grid_view(v);
    if (axis == StripAxis::vertical) {
        q4 = permute(q4, {0, 2, 1, 3});
        k4 = permute(k4, {0, 2, 1, 3});
        v4 = permute(v4, {0, 2, 1, 3});
    }
    int rows = q4.dim(1), cols = q4.dim(2);
    FL_CHECK(rows % strip_width == 0, ConfigError,
             "config-error: strip width must divide the grid");
    int ns = rows / strip_width;
    int strip_tokens = strip_width * cols;

    // local token sets per (frame, strip): row bands are contiguous
    Tensor q_loc = reshape(q4, {T * ns, strip_tokens, C});
    Tensor k_loc = reshape(k4, {T * ns, strip_tokens, C});
    Tensor v_loc = reshape(v4, {T * ns, strip_tokens, C});

    Tensor keys = k_loc, values = v_loc;
    if (pool_kernel > 0) {
        FL_CHECK(cols % pool_kernel == 0, ConfigError,
                 "config-error: pool kernel must divide the strip length");
        // pooled keys: mean over (strip_width x pool_kernel) blocks
        Tensor kp = avg_pool2d(detail::to_nchw(k4), strip_width, pool_kernel);
        Tensor vp = avg_pool2d(detail::to_nchw(v4), strip_width, pool_kernel);
        // (T, C, ns, cols/pk) -> (T*ns, cols/pk, C)
        int np = cols / pool_kernel;
        kp = reshape(permute(kp, {0, 2, 3, 1}), {T * ns, np, C});
        vp = reshape(permute(vp, {0, 2, 3, 1}), {T * ns, np, C});
        keys = cat({k_loc, kp}, 1);
        values = cat({v_loc, vp}, 1);
    }

    Tensor out = mha_batched(q_loc, keys, values, heads, debug); // (T*ns, strip_tokens, C)
    out = reshape(out, {T, rows, cols, C});
    if (axis == StripAxis::vertical) out = permute(out, {0, 2, 1, 3});
    return detail::flatten_grid(out);
}

// Window-partitioned attention (local_window and the fine level of focal).
// Windows must tile the grid exactly.
inline Tensor window_attention(const TokenGrid& q, const TokenGrid& k, const TokenGrid& v,
                               const AttentionVariant& variant, int heads, bool with_pooled,
                               AttentionDebug* debug = nullptr) {
    FL_CHECK(q.frames() == k.frames() && k.frames() == v.frames(), DimensionError,
             "window attention: frame count mismatch");
    int T = q.frames(), C = q.channels();
    int Wh = q.grid_h, Ww = q.grid_w;
    int wh = std::min(variant.window_h, Wh), ww = std::min(variant.window_w, Ww);
    FL_CHECK(Wh % wh == 0 && Ww % ww == 0, ConfigError,
             "config-error: window must divide the padded token grid");
    int nh = Wh / wh, nw = Ww / ww;
    int nwin = nh * nw;

    auto to_windows = [&](const TokenGrid& g) {
        Tensor t6 = reshape(g.tokens, {T, nh, wh, nw, ww, C});
        // (nh, nw, T, wh, ww, C): windows become the batch dimension
        Tensor p = permute(t6, {1, 3, 0, 2, 4, 5});
        return reshape(p, {nwin, T * wh * ww, C});
    };
    Tensor qw = to_windows(q);
    Tensor kw = to_windows(k);
    Tensor vw = to_windows(v);

    Tensor keys = kw, values = vw;
    if (with_pooled && variant.focal_levels > 0) {
        FL_CHECK(Wh % variant.pool_h == 0 && Ww % variant.pool_w == 0, ConfigError,
                 "config-error: focal pool must divide the token grid");
        Tensor k4 = detail::to_nchw(detail::grid_view(k));
        Tensor v4 = detail::to_nchw(detail::grid_view(v));
        Tensor kp = detail::to_nhwc(avg_pool2d(k4, variant.pool_h, variant.pool_w));
        Tensor vp = detail::to_nhwc(avg_pool2d(v4, variant.pool_h, variant.pool_w));
        int sg = kp.dim(1) * kp.dim(2) * T;
        Tensor kg = reshape(kp, {1, sg, C});
        Tensor vg = reshape(vp, {1, sg, C});
        // the same coarse keys are visible from every window
        std::vector<Tensor> ktile(size_t(nwin), kg), vtile(size_t(nwin), vg);
        keys = cat({kw, cat(ktile, 0)}, 1);
        values = cat({vw, cat(vtile, 0)}, 1);
    }

    Tensor out = mha_batched(qw, keys, values, heads, debug); // (nwin, T*wh*ww, C)
    Tensor back = permute(reshape(out, {nh, nw, T, wh, ww, C}), {2, 0, 3, 1, 4, 5});
    return reshape(back, {T, Wh * Ww, C});
}

// The per-block multi-head attention stage: variant neighborhood + output
// projection. For the decoupled3d variant it owns the two gathering
// projections of the parallel branches.
class MultiHeadAttention {
public:
    MultiHeadAttention() = default;

    MultiHeadAttention(int embed_dim, int heads, AttentionVariant variant, Rng& rng,
                       bool zero_init_out = false)
        : heads_(heads), variant_(variant),
          out_proj_(embed_dim, embed_dim, rng, true, zero_init_out) {
        FL_CHECK(embed_dim % heads == 0, ConfigError,
                 "config-error: heads must divide the embed dim");
        if (variant.kind == AttentionKind::decoupled3d) {
            proj_t_ = Linear(embed_dim, embed_dim, rng);
            proj_hw_ = Linear(2 * embed_dim, embed_dim, rng);
        }
    }

    const AttentionVariant& variant() const { return variant_; }
    int heads() const { return heads_; }

    Tensor forward(const TokenGrid& q, const TokenGrid& k, const TokenGrid& v,
                   AttentionDebug* debug = nullptr) const {
        Tensor mixed;
        switch (variant_.kind) {
            case AttentionKind::dense: {
                Tensor qf = reshape(q.tokens, {1, q.frames() * q.count(), q.channels()});
                Tensor kf = reshape(k.tokens, {1, k.frames() * k.count(), k.channels()});
                Tensor vf = reshape(v.tokens, {1, v.frames() * v.count(), v.channels()});
                Tensor out = mha_batched(qf, kf, vf, heads_, debug);
                mixed = reshape(out, {q.frames(), q.count(), q.channels()});
                break;
            }
            case AttentionKind::local_window:
                mixed = window_attention(q, k, v, variant_, heads_, false, debug);
                break;
            case AttentionKind::focal:
                mixed = window_attention(q, k, v, variant_, heads_, true, debug);
                break;
            case AttentionKind::decoupled3d: {
                Tensor zt = temporal_attention(q, k, v, heads_, debug);
                Tensor zh = strip_attention(q, k, v, StripAxis::horizontal,
                                            variant_.strip_width, variant_.strip_pool, heads_,
                                            debug);
                Tensor zv = strip_attention(q, k, v, StripAxis::vertical, variant_.strip_width,
                                            variant_.strip_pool, heads_, debug);
                mixed = add(proj_t_.forward(zt), proj_hw_.forward(cat({zh, zv}, 2)));
                break;
            }
        }
        return out_proj_.forward(mixed);
    }

    void params(const std::string& prefix, ParamList& list) {
        out_proj_.params(prefix + ".out", list);
        if (variant_.kind == AttentionKind::decoupled3d) {
            proj_t_.params(prefix + ".proj_t", list);
            proj_hw_.params(prefix + ".proj_hw", list);
        }
    }

    Linear& out_projection() { return out_proj_; }

private:
    int heads_ = 4;
    AttentionVariant variant_;
    Linear out_proj_;
    Linear proj_t_, proj_hw_;
};

} // namespace flowlens
