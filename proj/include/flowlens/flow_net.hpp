#pragma once

// Beyond-FoV flow completion: a shared 6-level feature pyramid over both
// input frames with per-level refinement heads predicting from the coarsest
// level down to level 2 (quarter resolution). Each finer prediction warps the
// second frame's features by the upsampled coarser flow and regresses a
// residual. Prediction heads are zero-initialized so an untrained network
// outputs exactly zero flow.

#include "flowlens/core/nn.hpp"
#include "flowlens/flow.hpp"

namespace flowlens {

struct FlowNetConfig {
    int levels = 6; // predictions run from `levels` down to 2
    std::vector<int> widths = {16, 24, 32, 48, 64, 96};
    int refine_width = 48;

    static FlowNetConfig standard() { return {}; }
    static FlowNetConfig small() { return {4, {16, 24, 32, 48}, 32}; }
    static FlowNetConfig tiny() { return {3, {8, 12, 16}, 16}; }

    void validate() const {
        FL_CHECK(levels >= 2 && int(widths.size()) == levels, ConfigError,
                 "flow net needs one width per level and at least 2 levels");
    }
};

struct FlowPyramid {
    std::vector<FlowField> levels; // coarsest first, finest (level 2) last

    void validate() const {
        FL_CHECK(!levels.empty(), DimensionError, "empty flow pyramid");
        for (size_t i = 1; i < levels.size(); ++i) {
            FL_CHECK(levels[i].resolution_scale == levels[i - 1].resolution_scale * 2.f,
                     DimensionError, "pyramid levels must double in scale");
        }
    }
};

class FlowCompletionNet {
public:
    FlowCompletionNet() = default;

    FlowCompletionNet(const FlowNetConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        int cin = 3;
        for (int l = 0; l < cfg_.levels; ++l) {
            int w = cfg_.widths[size_t(l)];
            enc_down_.emplace_back(cin, w, 3, rng, 2);
            enc_same_.emplace_back(w, w, 3, rng, 1);
            cin = w;
        }
        for (int l = cfg_.levels; l >= 2; --l) {
            int w = cfg_.widths[size_t(l - 1)];
            int in_ch = 2 * w + 2; // own feats + warped feats + upsampled flow
            head_a_.emplace_back(in_ch, cfg_.refine_width, 3, rng, 1);
            head_b_.emplace_back(cfg_.refine_width, cfg_.refine_width, 3, rng, 1);
            head_out_.emplace_back(cfg_.refine_width, 2, 3, rng, 1, -1, 1, /*zero_init=*/true);
            // zero the bias too (it already is); residual starts silent
        }
    }

    const FlowNetConfig& config() const { return cfg_; }
    int prediction_levels() const { return cfg_.levels - 1; }

    // frames (N, 3, H, W); returns per prediction level (coarse -> fine)
    // flow tensors (N, 2, h_l, w_l) in that level's pixel units.
    std::vector<Tensor> pyramid_forward(const Tensor& frame_i, const Tensor& frame_j) const {
        FL_CHECK(frame_i.shape() == frame_j.shape(), DimensionError,
                 "flow input frames must share shape");
        FL_CHECK(frame_i.ndim() == 4 && frame_i.dim(1) == 3, DimensionError,
                 "flow net expects (N,3,H,W) frames");
        std::vector<Tensor> feats_i = encode(frame_i);
        std::vector<Tensor> feats_j = encode(frame_j);

        std::vector<Tensor> flows;
        Tensor flow;
        size_t head = 0;
        for (int l = cfg_.levels; l >= 2; --l, ++head) {
            const Tensor& fi = feats_i[size_t(l - 1)];
            const Tensor& fj = feats_j[size_t(l - 1)];
            Tensor up;
            Tensor warped;
            if (flow.defined()) {
                up = mul_scalar(resize_bilinear(flow, fi.dim(2), fi.dim(3)), 2.f);
                warped = warp_bilinear(fj, up);
            } else {
                up = Tensor(Shape{fi.dim(0), 2, fi.dim(2), fi.dim(3)}, 0.f);
                warped = fj;
            }
            Tensor x = cat({fi, warped, up}, 1);
            x = leaky_relu(head_a_[head].forward(x), 0.1f);
            x = leaky_relu(head_b_[head].forward(x), 0.1f);
            Tensor res = head_out_[head].forward(x);
            flow = add(up, res);
            flows.push_back(flow);
        }
        return flows;
    }

    // Finest level only (quarter resolution of the input).
    Tensor estimate(const Tensor& frame_i, const Tensor& frame_j) const {
        return pyramid_forward(frame_i, frame_j).back();
    }

    // Single-pair convenience wrappers over the batched API.
    FlowPyramid pyramid(const Tensor& frame_i3, const Tensor& frame_j3) const {
        Tensor fi = reshape(frame_i3, {1, frame_i3.dim(0), frame_i3.dim(1), frame_i3.dim(2)});
        Tensor fj = reshape(frame_j3, {1, frame_j3.dim(0), frame_j3.dim(1), frame_j3.dim(2)});
        auto flows = pyramid_forward(fi, fj);
        FlowPyramid pyr;
        float scale = 1.f / float(1 << cfg_.levels);
        for (auto& f : flows) {
            FlowField field;
            field.vectors = reshape(f, {2, f.dim(2), f.dim(3)});
            field.resolution_scale = scale;
            scale *= 2.f;
            pyr.levels.push_back(field);
        }
        pyr.validate();
        return pyr;
    }

    FlowField estimate_flow(const Tensor& frame_i3, const Tensor& frame_j3) const {
        FlowPyramid pyr = pyramid(frame_i3, frame_j3);
        return pyr.levels.back();
    }

    void params(const std::string& prefix, ParamList& list) {
        for (size_t l = 0; l < enc_down_.size(); ++l) {
            enc_down_[l].params(prefix + ".enc" + std::to_string(l + 1) + "a", list);
            enc_same_[l].params(prefix + ".enc" + std::to_string(l + 1) + "b", list);
        }
        for (size_t h = 0; h < head_a_.size(); ++h) {
            std::string hp = prefix + ".head" + std::to_string(cfg_.levels - int(h));
            head_a_[h].params(hp + "a", list);
            head_b_[h].params(hp + "b", list);
            head_out_[h].params(hp + "o", list);
        }
    }

private:
    std::vector<Tensor> encode(const Tensor& frames) const {
        std::vector<Tensor> feats;
        Tensor x = frames;
        for (size_t l = 0; l < enc_down_.size(); ++l) {
            x = leaky_relu(enc_down_[l].forward(x), 0.1f);
            x = leaky_relu(enc_same_[l].forward(x), 0.1f);
            feats.push_back(x);
        }
        return feats;
    }

    FlowNetConfig cfg_;
    std::vector<Conv2dLayer> enc_down_, enc_same_;
    std::vector<Conv2dLayer> head_a_, head_b_, head_out_;
};

// Mean absolute difference between matching flow sequences (Eq. of the
// training objective); differentiable through the predictions.
inline Tensor flow_loss(const std::vector<FlowField>& pred, const std::vector<FlowField>& gt) {
    FL_CHECK(pred.size() == gt.size() && !pred.empty(), DimensionError,
             "flow_loss needs matching non-empty sequences");
    std::vector<Tensor> diffs;
    for (size_t i = 0; i < pred.size(); ++i) {
        FL_CHECK(pred[i].vectors.shape() == gt[i].vectors.shape(), DimensionError,
                 "flow_loss shape mismatch at field " + std::to_string(i));
        diffs.push_back(reshape(abs_op(sub(pred[i].vectors, gt[i].vectors)), {-1}));
    }
    return mean(cat(diffs, 0));
}

inline Tensor flow_loss_t(const Tensor& pred, const Tensor& gt) {
    FL_CHECK(pred.shape() == gt.shape(), DimensionError, "flow_loss shape mismatch");
    return mean(abs_op(sub(pred, gt)));
}

} // namespace flowlens
