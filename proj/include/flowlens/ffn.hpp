#pragma once

// Feed-forward variants for the transformer blocks. The full ladder mirrors
// the ablation axes: plain FFN, F3N (composite/split round trip), Mix-FFN
// (depthwise convs on the token grid), and MixF3N (composite, split-channel
// 3x3/5x5 depthwise convs, re-split).

#include "flowlens/attention.hpp"
#include "flowlens/tokens.hpp"

namespace flowlens {

enum class FFNKind { ffn, f3n, mix_ffn, mixf3n };

class FeedForward {
public:
    FeedForward() = default;

    FeedForward(FFNKind kind, int embed_dim, int patch, int stride, Rng& rng,
                int hidden_ratio = 4, bool zero_init_out = false, int hidden_override = 0)
        : kind_(kind), ce_(embed_dim), patch_(patch), stride_(stride) {
        FL_CHECK(hidden_ratio >= 1, ConfigError, "config-error: hidden_ratio must be >= 1");
        int area = patch * patch;
        if (kind == FFNKind::f3n || kind == FFNKind::mixf3n) {
            if (hidden_override > 0) {
                FL_CHECK(hidden_override % area == 0, ConfigError,
                         "config-error: hidden width must be divisible by the patch area");
                hidden_ = hidden_override;
            } else {
                // round the plane width up to even so the channel split is exact
                int c_plane = 2 * ((hidden_ratio * embed_dim + 2 * area - 1) / (2 * area));
                hidden_ = c_plane * area;
            }
            c_plane_ = hidden_ / area;
            if (kind == FFNKind::mixf3n)
                FL_CHECK(c_plane_ % 2 == 0, ConfigError,
                         "config-error: odd channel count cannot be split in half");
        } else {
            hidden_ = hidden_override > 0 ? hidden_override : hidden_ratio * embed_dim;
            if (kind == FFNKind::mix_ffn) {
                FL_CHECK(hidden_ % 2 == 0, ConfigError,
                         "config-error: odd channel count cannot be split in half");
            }
        }
        fc1_ = Linear(embed_dim, hidden_, rng);
        fc2_ = Linear(hidden_, embed_dim, rng, true, zero_init_out);
        if (kind == FFNKind::mixf3n) {
            dw3_ = Conv2dLayer(c_plane_ / 2, c_plane_ / 2, 3, rng, 1, 1, c_plane_ / 2);
            dw5_ = Conv2dLayer(c_plane_ / 2, c_plane_ / 2, 5, rng, 1, 2, c_plane_ / 2);
        } else if (kind == FFNKind::mix_ffn) {
            dw3_ = Conv2dLayer(hidden_ / 2, hidden_ / 2, 3, rng, 1, 1, hidden_ / 2);
            dw5_ = Conv2dLayer(hidden_ / 2, hidden_ / 2, 5, rng, 1, 2, hidden_ / 2);
        }
    }

    FFNKind kind() const { return kind_; }
    int hidden_width() const { return hidden_; }
    int plane_channels() const { return c_plane_; }

    Tensor forward(const TokenGrid& grid, const Tensor& tokens) const {
        FL_CHECK(tokens.dim(2) == ce_, DimensionError, "ffn input width mismatch");
        Tensor h = fc1_.forward(tokens);
        switch (kind_) {
            case FFNKind::ffn:
                break;
            case FFNKind::f3n:
                h = round_trip(grid, h, false);
                break;
            case FFNKind::mixf3n:
                h = round_trip(grid, h, true);
                break;
            case FFNKind::mix_ffn: {
                int T = grid.frames();
                Tensor plane = permute(reshape(h, {T, grid.grid_h, grid.grid_w, hidden_}),
                                       {0, 3, 1, 2});
                plane = dual_conv(plane);
                h = reshape(permute(plane, {0, 2, 3, 1}), {T, grid.count(), hidden_});
                break;
            }
        }
        return fc2_.forward(gelu(h));
    }

    void params(const std::string& prefix, ParamList& list) {
        fc1_.params(prefix + ".fc1", list);
        fc2_.params(prefix + ".fc2", list);
        if (kind_ == FFNKind::mixf3n || kind_ == FFNKind::mix_ffn) {
            dw3_.params(prefix + ".dw3", list);
            dw5_.params(prefix + ".dw5", list);
        }
    }

    Linear& fc_out() { return fc2_; }
    Conv2dLayer& conv3() { return dw3_; }
    Conv2dLayer& conv5() { return dw5_; }

private:
    // soft composite onto the padded plane, optional dual depthwise convs on
    // the channel halves, soft split back
    Tensor round_trip(const TokenGrid& grid, const Tensor& h, bool with_convs) const {
        int padded_h = grid.src_h + 2 * grid.pad;
        int padded_w = grid.src_w + 2 * grid.pad;
        Tensor plane = composite_padded(h, grid.grid_h, grid.grid_w, c_plane_, padded_h,
                                        padded_w, patch_, stride_);
        if (with_convs) plane = dual_conv(plane);
        return split_padded(plane, patch_, stride_);
    }

    Tensor dual_conv(const Tensor& plane) const {
        int c = plane.dim(1);
        Tensor lo = slice(plane, 1, 0, c / 2);
        Tensor hi = slice(plane, 1, c / 2, c / 2);
        return cat({dw3_.forward(lo), dw5_.forward(hi)}, 1);
    }

    FFNKind kind_ = FFNKind::mixf3n;
    int ce_ = 0, patch_ = 7, stride_ = 3;
    int hidden_ = 0, c_plane_ = 0;
    Linear fc1_, fc2_;
    Conv2dLayer dw3_, dw5_;
};

} // namespace flowlens
