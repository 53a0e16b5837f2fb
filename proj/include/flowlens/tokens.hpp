#pragma once

// Soft split of quarter-resolution feature maps into overlapping-patch tokens
// and its overlap-add inverse. Tokens are stored (T, L, C_e) with L = Wh*Ww
// row-major anchors and channel-major tap layout (token channel =
// c*patch*patch + ph*patch + pw), so C_e = patch*patch*C before projection.

#include "flowlens/core/image_ops.hpp"

namespace flowlens {

struct TokenGrid {
    Tensor tokens; // (T, L, C_e)
    int grid_h = 0, grid_w = 0;
    int src_c = 0, src_h = 0, src_w = 0;
    int patch = 7, stride = 3, pad = 2;

    int frames() const { return tokens.dim(0); }
    int count() const { return tokens.dim(1); }
    int channels() const { return tokens.dim(2); }

    TokenGrid with_tokens(Tensor t) const {
        TokenGrid g = *this;
        FL_CHECK(t.dim(0) == tokens.dim(0) && t.dim(1) == tokens.dim(1), DimensionError,
                 "token grid layout changed");
        g.tokens = std::move(t);
        return g;
    }
};

inline TokenGrid soft_split(const Tensor& features, int patch = 7, int stride = 3, int pad = 2) {
    FL_CHECK(features.defined() && features.ndim() == 4 && features.numel() > 0, DimensionError,
             "soft_split expects a non-empty (T,C,H,W) tensor");
    FL_CHECK(features.dim(2) + 2 * pad >= patch && features.dim(3) + 2 * pad >= patch,
             DimensionError, "soft_split: spatial dims too small for the patch");
    TokenGrid grid;
    grid.patch = patch;
    grid.stride = stride;
    grid.pad = pad;
    grid.src_c = features.dim(1);
    grid.src_h = features.dim(2);
    grid.src_w = features.dim(3);
    token_grid_dims(grid.src_h, grid.src_w, patch, stride, pad, grid.grid_h, grid.grid_w);
    grid.tokens = unfold_tokens(features, patch, stride, pad);
    return grid;
}

// Overlap-add divided by per-pixel patch counts; exact inverse of soft_split
// for any input.
inline Tensor soft_composite(const TokenGrid& grid) {
    FL_CHECK(grid.tokens.defined() && grid.tokens.ndim() == 3, DimensionError,
             "soft_composite expects token grid");
    int expect_l = grid.grid_h * grid.grid_w;
    FL_CHECK(grid.count() == expect_l, DimensionError, "token count inconsistent with grid");
    FL_CHECK(grid.channels() % (grid.patch * grid.patch) == 0, DimensionError,
             "token channels not divisible by patch area");
    int c = grid.channels() / (grid.patch * grid.patch);
    FL_CHECK(c == grid.src_c, DimensionError, "token channels inconsistent with source shape");
    Tensor summed =
        fold_tokens(grid.tokens, c, grid.src_h, grid.src_w, grid.patch, grid.stride, grid.pad);
    Tensor counts = overlap_counts(grid.src_h, grid.src_w, grid.patch, grid.stride, grid.pad);
    return divide(summed, counts);
}

// Composite geometry reused inside the feed-forward blocks: folds onto the
// padded plane (so no anchors are cropped) and normalizes by counts there.
inline Tensor composite_padded(const Tensor& tokens, int gh, int gw, int c, int padded_h,
                               int padded_w, int patch, int stride) {
    FL_CHECK(tokens.dim(1) == gh * gw, DimensionError, "composite_padded token count");
    Tensor summed = fold_tokens(tokens, c, padded_h, padded_w, patch, stride, 0);
    Tensor counts = overlap_counts(padded_h, padded_w, patch, stride, 0);
    // anchor arithmetic may leave a thin uncovered margin inside the padding
    float* pc = counts.data();
    for (long i = 0; i < counts.numel(); ++i)
        if (pc[i] == 0.f) pc[i] = 1.f;
    return divide(summed, counts);
}

inline Tensor split_padded(const Tensor& plane, int patch, int stride) {
    return unfold_tokens(plane, patch, stride, 0);
}

} // namespace flowlens
