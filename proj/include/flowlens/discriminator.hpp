#pragma once

// Spatio-temporal patch discriminator: six spectral-normalized conv3d layers
// with stride-2 spatial downsampling, emitting a logits field (no terminal
// squashing). Spectral norm runs one power iteration per forward; sigma is
// treated as a constant for the gradient.

#include "flowlens/core/nn.hpp"

namespace flowlens {

struct DiscriminatorConfig {
    std::vector<int> widths = {16, 32, 48, 48, 48}; // five hidden layers + 1 output

    void validate() const {
        FL_CHECK(widths.size() == 5, ConfigError, "discriminator expects 5 hidden widths");
    }
};

namespace detail {

// One power-iteration estimate of the spectral norm of w viewed as
// (rows = dim0, cols = rest); u is persistent across calls.
inline float spectral_sigma(const Tensor& w, std::vector<float>& u) {
    long rows = w.dim(0);
    long cols = w.numel() / rows;
    const float* pw = w.cdata();
    if (long(u.size()) != rows) {
        u.assign(size_t(rows), 1.f / std::sqrt(float(rows)));
    }
    std::vector<float> v(size_t(cols), 0.f);
    for (long r = 0; r < rows; ++r) {
        float ur = u[size_t(r)];
        const float* row = pw + r * cols;
        for (long c = 0; c < cols; ++c) v[size_t(c)] += ur * row[c];
    }
    double vn = 0;
    for (float x : v) vn += double(x) * x;
    vn = std::sqrt(std::max(vn, 1e-24));
    for (float& x : v) x = float(x / vn);

    std::vector<float> nu(size_t(rows), 0.f);
    for (long r = 0; r < rows; ++r) {
        const float* row = pw + r * cols;
        double acc = 0;
        for (long c = 0; c < cols; ++c) acc += double(row[c]) * v[size_t(c)];
        nu[size_t(r)] = float(acc);
    }
    double un = 0;
    for (float x : nu) un += double(x) * x;
    un = std::sqrt(std::max(un, 1e-24));
    for (size_t r = 0; r < nu.size(); ++r) u[r] = float(nu[r] / un);

    // sigma = u^T W v
    double sigma = 0;
    for (long r = 0; r < rows; ++r) {
        const float* row = pw + r * cols;
        double acc = 0;
        for (long c = 0; c < cols; ++c) acc += double(row[c]) * v[size_t(c)];
        sigma += double(u[size_t(r)]) * acc;
    }
    return float(std::max(sigma, 1e-12));
}

} // namespace detail

class PatchDiscriminator3d {
public:
    PatchDiscriminator3d() = default;

    explicit PatchDiscriminator3d(const DiscriminatorConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        int cin = 3;
        for (int i = 0; i < 5; ++i) {
            int cout = cfg.widths[size_t(i)];
            layers_.emplace_back(cin, cout, 3, 5, 5, rng, 1, 2, 2, 1, 2, 2);
            cin = cout;
        }
        layers_.emplace_back(cin, 1, 3, 5, 5, rng, 1, 1, 1, 1, 2, 2);
        u_state_.resize(layers_.size());
    }

    // video (1, 3, T, H, W) in [0, 1]; returns a patch logits field.
    Tensor forward(const Tensor& video) const {
        FL_CHECK(video.ndim() == 5 && video.dim(1) == 3, DimensionError,
                 "discriminator expects (1, 3, T, H, W)");
        Tensor x = add_scalar(mul_scalar(video, 2.f), -1.f);
        for (size_t i = 0; i < layers_.size(); ++i) {
            const Conv3dLayer& l = layers_[i];
            float sigma = detail::spectral_sigma(l.w, u_state_[i]);
            Tensor w_sn = mul_scalar(l.w, 1.f / sigma);
            x = conv3d(x, w_sn, l.b, l.sd, l.sh, l.sw, l.pd, l.ph, l.pw);
            if (i + 1 < layers_.size()) x = leaky_relu(x, 0.2f);
        }
        return x;
    }

    void params(const std::string& prefix, ParamList& list) {
        for (size_t i = 0; i < layers_.size(); ++i)
            layers_[i].params(prefix + ".l" + std::to_string(i), list);
    }

private:
    DiscriminatorConfig cfg_;
    std::vector<Conv3dLayer> layers_;
    mutable std::vector<std::vector<float>> u_state_;
};

// (T, 3, H, W) -> (1, 3, T, H, W) for the discriminator input.
inline Tensor clip_to_5d(const Tensor& frames) {
    Tensor p = permute(frames, {1, 0, 2, 3});
    return reshape(p, {1, p.dim(0), p.dim(1), p.dim(2), p.dim(3)});
}

} // namespace flowlens
