#pragma once

#include <cmath>
#include <vector>

#include "flowlens/core/nn.hpp"

namespace flowlens {

// Adaptive moment estimation with bias correction; betas (0.9, 0.99),
// no weight decay, constant learning rate.
class Adam {
public:
    explicit Adam(ParamList params, float lr = 2.5e-5f, float beta1 = 0.9f, float beta2 = 0.99f,
                  float eps = 1e-8f)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        slots_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            size_t n = size_t(params_.entries()[i].tensor.numel());
            slots_[i].m.assign(n, 0.f);
            slots_[i].v.assign(n, 0.f);
        }
    }

    void set_lr(float lr) { lr_ = lr; }
    float lr() const { return lr_; }
    long step_count() const { return t_; }
    ParamList& params() { return params_; }

    void zero_grad() {
        for (auto& e : params_.entries()) e.tensor.zero_grad();
    }

    void step() {
        ++t_;
        float bc1 = 1.f - std::pow(beta1_, float(t_));
        float bc2 = 1.f - std::pow(beta2_, float(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = params_.entries()[i].tensor;
            if (!p.has_grad()) continue;
            const auto& g = p.grad();
            auto& m = slots_[i].m;
            auto& v = slots_[i].v;
            float* data = p.data();
            for (size_t j = 0; j < g.size(); ++j) {
                m[j] = beta1_ * m[j] + (1.f - beta1_) * g[j];
                v[j] = beta2_ * v[j] + (1.f - beta2_) * g[j] * g[j];
                float mh = m[j] / bc1;
                float vh = v[j] / bc2;
                data[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
            }
        }
    }

    // Optimizer state exposure for exact-resume checkpoints.
    struct Slot {
        std::vector<float> m, v;
    };
    std::vector<Slot>& slots() { return slots_; }
    void set_step_count(long t) { t_ = t; }

private:
    ParamList params_;
    std::vector<Slot> slots_;
    float lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

} // namespace flowlens
