#pragma once

// Training objective pieces: L1 reconstruction, hinge adversarial pair, and
// the weighted total with a non-finite guard.

#include "flowlens/core/ops.hpp"

namespace flowlens {

struct LossWeights {
    float rec = 1.f;
    float adv = 0.01f;
    float flow = 1.f;

    void validate() const {
        FL_CHECK(rec >= 0.f && adv >= 0.f && flow >= 0.f, ConfigError,
                 "loss weights must be non-negative");
    }
};

// Mean absolute difference over all elements.
inline Tensor reconstruction_loss(const Tensor& pred, const Tensor& gt) {
    FL_CHECK(pred.shape() == gt.shape(), DimensionError,
             "reconstruction_loss shape mismatch " + shape_str(pred.shape()) + " vs " +
                 shape_str(gt.shape()));
    return mean(abs_op(sub(pred, gt)));
}

struct AdversarialLosses {
    Tensor generator;     // -E[D(z)]
    Tensor discriminator; // E[relu(1 - D(x))] + E[relu(1 + D(z))]
};

inline AdversarialLosses adversarial_losses(const Tensor& d_real_logits,
                                            const Tensor& d_fake_logits) {
    AdversarialLosses out;
    out.generator = neg(mean(d_fake_logits));
    Tensor real_term = mean(relu(add_scalar(neg(d_real_logits), 1.f)));
    Tensor fake_term = mean(relu(add_scalar(d_fake_logits, 1.f)));
    out.discriminator = add(real_term, fake_term);
    return out;
}

struct LossComponents {
    Tensor rec;  // required
    Tensor adv;  // optional (undefined when the GAN path is off)
    Tensor flow; // optional
};

// lambda_rec * L_rec + lambda_adv * L_adv + lambda_flow * L_flow.
// A non-finite component aborts training with a diagnostic.
inline Tensor total_loss(const LossComponents& parts, const LossWeights& weights) {
    weights.validate();
    FL_CHECK(parts.rec.defined(), InvalidInput, "total_loss requires a reconstruction term");
    auto check_finite = [](const Tensor& t, const char* name) {
        if (t.defined() && !std::isfinite(t.item()))
            throw TrainingAbort(std::string("non-finite loss component: ") + name);
    };
    check_finite(parts.rec, "rec");
    check_finite(parts.adv, "adv");
    check_finite(parts.flow, "flow");

    Tensor total = mul_scalar(parts.rec, weights.rec);
    if (parts.adv.defined() && weights.adv > 0.f)
        total = add(total, mul_scalar(parts.adv, weights.adv));
    if (parts.flow.defined() && weights.flow > 0.f)
        total = add(total, mul_scalar(parts.flow, weights.flow));
    return total;
}

} // namespace flowlens
