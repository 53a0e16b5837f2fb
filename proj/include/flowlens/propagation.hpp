#pragma once

// Flow-guided explicit feature propagation across local frames: backward
// warping, modulated deformable compensation with flow-anchored offsets, and
// a 1x1 fusion of the forward/backward chains.

#include "flowlens/core/nn.hpp"
#include "flowlens/flow.hpp"

namespace flowlens {

struct DeformableConfig {
    int kernel = 3;
    int groups = 4;
    float r_max = 10.f; // max compensate residue magnification
    void validate(int channels) const {
        FL_CHECK(kernel >= 1 && groups >= 1, ConfigError, "bad deformable config");
        FL_CHECK(channels % groups == 0, ConfigError,
                 "channels must be divisible by deform groups");
    }
};

struct DeformableParams {
    Tensor offsets;    // (N, 2*K*G, h, w), (dy,dx) pairs, flow-anchored
    Tensor modulation; // (N, K*G, h, w) in (0,1)
    int kernel = 3;
    int groups = 4;
};

// One propagation direction: offset/modulation stacks conditioned on
// (warped neighbor, current, flow), the deformable conv itself, and the
// post-aggregation stack.
class DeformAlign {
public:
    DeformAlign() = default;

    DeformAlign(int channels, const DeformableConfig& cfg, Rng& rng) : cfg_(cfg), c_(channels) {
        cfg.validate(channels);
        int K = cfg.kernel * cfg.kernel;
        int in_ch = 2 * channels + 2;
        off_a_ = Conv2dLayer(in_ch, channels, 3, rng, 1);
        off_b_ = Conv2dLayer(channels, 2 * K * cfg.groups, 3, rng, 1, -1, 1, /*zero_init=*/true);
        mod_a_ = Conv2dLayer(in_ch, channels, 3, rng, 1);
        mod_b_ = Conv2dLayer(channels, K * cfg.groups, 3, rng, 1, -1, 1, /*zero_init=*/true);
        dcn_w_ = init_uniform({channels, channels * K}, long(channels) * K, rng);
        dcn_b_ = Tensor::zeros({channels});
        dcn_b_.set_requires_grad(true);
        prop_a_ = Conv2dLayer(2 * channels, channels, 3, rng, 1);
        prop_b_ = Conv2dLayer(channels, channels, 3, rng, 1, -1, 1, /*zero_init=*/true);
    }

    const DeformableConfig& config() const { return cfg_; }

    // offsets = tiled flow + r_max * tanh(conv_stack(...)); modulation =
    // sigmoid(conv_stack(...)). Flow channel order is (dx, dy); offset pairs
    // are stored (dy, dx) per tap.
    DeformableParams compute_params(const Tensor& warped, const Tensor& current,
                                    const Tensor& flow) const {
        FL_CHECK(warped.shape() == current.shape(), DimensionError,
                 "deformable params: feature shape mismatch");
        FL_CHECK(flow.dim(2) == warped.dim(2) && flow.dim(3) == warped.dim(3), DimensionError,
                 "deformable params: flow resolution mismatch");
        int K = cfg_.kernel * cfg_.kernel;
        Tensor inp = cat({warped, current, flow}, 1);
        Tensor raw_off = off_b_.forward(leaky_relu(off_a_.forward(inp), 0.1f));
        Tensor raw_mod = mod_b_.forward(leaky_relu(mod_a_.forward(inp), 0.1f));

        // tile flow as (dy, dx) for every tap of every group
        Tensor fy = slice(flow, 1, 1, 1);
        Tensor fx = slice(flow, 1, 0, 1);
        std::vector<Tensor> tiles;
        tiles.reserve(size_t(2 * K * cfg_.groups));
        for (int g = 0; g < cfg_.groups; ++g)
            for (int k = 0; k < K; ++k) {
                tiles.push_back(fy);
                tiles.push_back(fx);
            }
        Tensor tiled = cat(tiles, 1);

        DeformableParams dp;
        dp.kernel = cfg_.kernel;
        dp.groups = cfg_.groups;
        dp.offsets = add(tiled, mul_scalar(tanh_op(raw_off), cfg_.r_max));
        dp.modulation = sigmoid(raw_mod);
        return dp;
    }

    // f_hat = current + conv_stack(current (+) deformable_sample(neighbor | dp));
    // the final stack layer starts at zero, so an untrained chain passes
    // features through untouched.
    Tensor compensate(const Tensor& current, const Tensor& neighbor,
                      const DeformableParams& dp) const {
        FL_CHECK(current.shape() == neighbor.shape(), DimensionError,
                 "compensate: feature shape mismatch");
        Tensor cols = deform_unfold(neighbor, dp.offsets, dp.modulation, dp.kernel, dp.groups);
        // (N, C*K, h, w) -> 1x1 projection with the DCN weight
        int N = cols.dim(0), h = cols.dim(2), w = cols.dim(3);
        Tensor flat = reshape(cols, {N, cols.dim(1), h * w});
        Tensor dcn = matmul(dcn_w_, flat); // (N, C, h*w)
        dcn = add(reshape(dcn, {N, c_, h, w}),
                  reshape(dcn_b_, {1, c_, 1, 1}));
        Tensor x = cat({current, dcn}, 1);
        x = leaky_relu(prop_a_.forward(x), 0.1f);
        return add(current, prop_b_.forward(x));
    }

    void params(const std::string& prefix, ParamList& list) {
        off_a_.params(prefix + ".off_a", list);
        off_b_.params(prefix + ".off_b", list);
        mod_a_.params(prefix + ".mod_a", list);
        mod_b_.params(prefix + ".mod_b", list);
        list.add(prefix + ".dcn_w", dcn_w_);
        list.add(prefix + ".dcn_b", dcn_b_);
        prop_a_.params(prefix + ".prop_a", list);
        prop_b_.params(prefix + ".prop_b", list);
    }

private:
    DeformableConfig cfg_;
    int c_ = 0;
    Conv2dLayer off_a_, off_b_, mod_a_, mod_b_;
    Tensor dcn_w_, dcn_b_;
    Conv2dLayer prop_a_, prop_b_;
};

// Bidirectional chain: backward pass first (pulling from later frames), then
// forward, then per-frame 1x1 fusion of the two chains.
class BidirectionalPropagation {
public:
    BidirectionalPropagation() = default;

    BidirectionalPropagation(int channels, const DeformableConfig& cfg, Rng& rng,
                             bool use_dcn = true)
        : use_dcn_(use_dcn), fuse_(2 * channels, channels, 1, rng, 1, 0) {
        if (use_dcn) {
            backward_ = DeformAlign(channels, cfg, rng);
            forward_ = DeformAlign(channels, cfg, rng);
        }
    }

    // features (T, C, h, w); flows_fwd[i] maps frame i -> i+1, flows_bwd[i]
    // maps frame i+1 -> i. Both must hold T-1 fields (T >= 2) or be empty for
    // T == 1.
    Tensor propagate(const Tensor& features, const std::vector<Tensor>& flows_fwd,
                     const std::vector<Tensor>& flows_bwd) const {
        int T = features.dim(0);
        if (T > 1)
            FL_CHECK(int(flows_fwd.size()) == T - 1 && int(flows_bwd.size()) == T - 1,
                     InvalidInput, "propagation needs T-1 flow pairs in both directions");

        std::vector<Tensor> frames;
        frames.reserve(size_t(T));
        for (int t = 0; t < T; ++t) frames.push_back(slice(features, 0, t, 1));

        // backward chain: b[T-1] = f[T-1]; b[i] = align(f[i], b[i+1] | V_{i->i+1})
        std::vector<Tensor> chain_b(static_cast<size_t>(T));
        chain_b[size_t(T - 1)] = frames[size_t(T - 1)];
        for (int i = T - 2; i >= 0; --i) {
            const Tensor& flow = flows_fwd[size_t(i)];
            Tensor warped = warp_bilinear(chain_b[size_t(i) + 1], flow);
            if (use_dcn_) {
                DeformableParams dp = backward_.compute_params(warped, frames[size_t(i)], flow);
                chain_b[size_t(i)] =
                    backward_.compensate(frames[size_t(i)], chain_b[size_t(i) + 1], dp);
            } else {
                chain_b[size_t(i)] = warped; // first-order propagation only
            }
        }

        // forward chain: fw[0] = f[0]; fw[i] = align(f[i], fw[i-1] | V_{i->i-1})
        std::vector<Tensor> chain_f(static_cast<size_t>(T));
        chain_f[0] = frames[0];
        for (int i = 1; i < T; ++i) {
            const Tensor& flow = flows_bwd[size_t(i) - 1];
            Tensor warped = warp_bilinear(chain_f[size_t(i) - 1], flow);
            if (use_dcn_) {
                DeformableParams dp = forward_.compute_params(warped, frames[size_t(i)], flow);
                chain_f[size_t(i)] =
                    forward_.compensate(frames[size_t(i)], chain_f[size_t(i) - 1], dp);
            } else {
                chain_f[size_t(i)] = warped;
            }
        }

        std::vector<Tensor> fused;
        fused.reserve(size_t(T));
        for (int t = 0; t < T; ++t)
            fused.push_back(fuse_.forward(cat({chain_f[size_t(t)], chain_b[size_t(t)]}, 1)));
        return cat(fused, 0);
    }

    void params(const std::string& prefix, ParamList& list) {
        if (use_dcn_) {
            backward_.params(prefix + ".bwd", list);
            forward_.params(prefix + ".fwd", list);
        }
        fuse_.params(prefix + ".fuse", list);
    }

    const DeformAlign& backward_align() const { return backward_; }
    bool uses_dcn() const { return use_dcn_; }

private:
    bool use_dcn_ = true;
    DeformAlign backward_, forward_;
    Conv2dLayer fuse_;
};

} // namespace flowlens
