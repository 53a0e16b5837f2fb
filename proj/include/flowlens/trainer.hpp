#pragma once

// Training loop: a deterministic synthetic clip stream feeding alternating
// discriminator/generator updates, metrics as line-delimited JSON records,
// and periodic checkpoints.

#include <json.hpp>

#include <filesystem>
#include <optional>

#include "flowlens/core/optim.hpp"
#include "flowlens/discriminator.hpp"
#include "flowlens/losses.hpp"
#include "flowlens/metrics.hpp"
#include "flowlens/model.hpp"
#include "flowlens/synth.hpp"

namespace flowlens {

struct TrainSample {
    Tensor local;  // (T_lf, 3, H, W), clean frames in [0, 1]
    Tensor past;   // (T_pf, 3, H, W)
    Tensor masks;  // (T_lf + T_pf, 1, H, W)
    Tensor gt;     // (T_lf, 3, H, W)
    std::vector<Tensor> gt_flows_fwd; // (1, 2, H/4, W/4) per adjacent LF pair
    std::vector<Tensor> gt_flows_bwd;
    std::string video_id;
};

struct StreamConfig {
    int height = 64, width = 64;
    int windows_per_video = 3; // video length = windows * t_lf
    float min_rate = 0.05f, max_rate = 0.25f;
    bool random_direction = false; // outer only by default
    bool per_frame_masks = false;  // resample the FoV per frame when true
    float max_speed = 3.f;
};

// Deterministic source of training clips. Videos are synthesized on demand;
// clips within a video come out in temporal order so the clip cache stays
// meaningful, and the mask changes between clips (a sequence of FoVs).
class SyntheticStream {
public:
    SyntheticStream(const StreamConfig& cfg, int t_lf, int t_pf, uint64_t seed)
        : cfg_(cfg), t_lf_(t_lf), t_pf_(t_pf), rng_(seed) {}

    TrainSample next() {
        if (!video_.has_value() || window_ >= cfg_.windows_per_video) new_video();
        int start = window_ * t_lf_;
        const SynthResult& synth = *video_;
        int H = cfg_.height, W = cfg_.width;

        TrainSample s;
        s.video_id = synth.video.id + "#" + std::to_string(video_index_);
        s.local = slice(synth.video.frames, 0, start, t_lf_).detach();
        s.gt = s.local;

        // past references at exponentially back-spaced offsets, clipped at 0
        std::vector<Tensor> refs;
        for (int k = 0; k < t_pf_; ++k) {
            int offset = t_lf_ << k;
            int idx = std::max(0, start - offset);
            refs.push_back(slice(synth.video.frames, 0, idx, 1));
        }
        s.past = t_pf_ > 0 ? cat(refs, 0).detach() : Tensor(Shape{0, 3, H, W});

        // masks: one FoV per clip, or per frame when configured
        std::vector<Tensor> masks;
        FoVMask mask = sample_mask(H, W);
        for (int t = 0; t < t_lf_ + t_pf_; ++t) {
            if (cfg_.per_frame_masks && t > 0) mask = sample_mask(H, W);
            masks.push_back(reshape(mask.to_tensor(), {1, 1, H, W}));
        }
        s.masks = cat(masks, 0).detach();

        for (int i = 0; i + 1 < t_lf_; ++i) {
            FlowField fwd = downsample_flow(synth.flows_fwd[size_t(start + i)], 4);
            FlowField bwd = downsample_flow(synth.flows_bwd[size_t(start + i)], 4);
            s.gt_flows_fwd.push_back(
                reshape(fwd.vectors, {1, 2, fwd.height(), fwd.width()}).detach());
            s.gt_flows_bwd.push_back(
                reshape(bwd.vectors, {1, 2, bwd.height(), bwd.width()}).detach());
        }
        ++window_;
        return s;
    }

private:
    void new_video() {
        NoGradGuard ng;
        SyntheticSceneSpec spec = random_scene_spec(rng_, cfg_.height, cfg_.width,
                                                    cfg_.windows_per_video * t_lf_, 2, 4,
                                                    cfg_.max_speed);
        video_ = synth_video(spec);
        window_ = 0;
        ++video_index_;
    }

    FoVMask sample_mask(int H, int W) {
        float rate = rng_.uniform(cfg_.min_rate, cfg_.max_rate);
        MaskDirection dir = MaskDirection::outer;
        CameraKind kind = CameraKind::pinhole_ftan;
        if (cfg_.random_direction && rng_.uniform() < 0.5) {
            dir = MaskDirection::inner;
            kind = CameraKind::spherical_ftheta;
        }
        return generate_fov_mask(default_camera(kind, H, W), rate, dir, H, W);
    }

    StreamConfig cfg_;
    int t_lf_, t_pf_;
    Rng rng_;
    std::optional<SynthResult> video_;
    int window_ = 0;
    int video_index_ = -1;
};

struct StepMetrics {
    long step = 0;
    double l_rec = 0, l_adv = 0, l_d = 0, l_flow = 0, total = 0, psnr = 0;

    nlohmann::json to_json() const {
        return {{"step", step}, {"l_rec", l_rec},   {"l_adv", l_adv}, {"l_d", l_d},
                {"l_flow", l_flow}, {"total", total}, {"psnr", psnr}};
    }
};

struct TrainerOptions {
    LossWeights weights{};
    float lr = 2.5e-5f;
    float lr_d = 2.5e-5f;
    int checkpoint_every = 0; // 0 disables
    std::string out_dir;      // checkpoints + metrics.ndjson
};

class Trainer {
public:
    Trainer(FlowLensGenerator& gen, PatchDiscriminator3d* disc, const TrainerOptions& opt)
        : gen_(gen), disc_(disc), opt_(opt), cache_(gen.make_cache()) {
        opt.weights.validate();
        ParamList gp;
        if (gen.config().train_flow)
            gen.params(gp);
        else
            gen.params_without_flow(gp);
        opt_g_.emplace(gp, opt.lr);
        if (disc_ && opt.weights.adv > 0.f) {
            ParamList dp;
            disc_->params("disc", dp);
            opt_d_.emplace(dp, opt.lr_d);
        }
        if (!opt_.out_dir.empty()) std::filesystem::create_directories(opt_.out_dir);
    }

    CacheBank& cache() { return cache_; }
    Adam& generator_optimizer() { return *opt_g_; }

    StepMetrics step(const TrainSample& sample) {
        StepMetrics m;
        m.step = ++step_;

        GeneratorOutput out = gen_.forward(sample.local, sample.past, sample.masks, cache_,
                                           sample.video_id);

        // discriminator update on detached fakes, then the generator reads
        // the refreshed discriminator
        Tensor adv;
        if (disc_ && opt_.weights.adv > 0.f) {
            Tensor fake5 = clip_to_5d(out.composited.detach());
            Tensor real5 = clip_to_5d(sample.gt);
            AdversarialLosses d_losses =
                adversarial_losses(disc_->forward(real5), disc_->forward(fake5));
            m.l_d = d_losses.discriminator.item();
            FL_CHECK(std::isfinite(m.l_d), TrainingAbort, "non-finite discriminator loss");
            opt_d_->zero_grad();
            d_losses.discriminator.backward();
            opt_d_->step();

            Tensor fake_logits = disc_->forward(clip_to_5d(out.composited));
            adv = neg(mean(fake_logits));
            m.l_adv = adv.item();
        }

        LossComponents parts;
        parts.rec = reconstruction_loss(out.frames, sample.gt);
        parts.adv = adv;
        if (!out.flows_fwd.empty() && gen_.config().train_flow &&
            !sample.gt_flows_fwd.empty()) {
            std::vector<Tensor> diffs;
            for (size_t i = 0; i < out.flows_fwd.size(); ++i) {
                diffs.push_back(reshape(
                    abs_op(sub(out.flows_fwd[i], sample.gt_flows_fwd[i])), {-1}));
                diffs.push_back(reshape(
                    abs_op(sub(out.flows_bwd[i], sample.gt_flows_bwd[i])), {-1}));
            }
            parts.flow = mean(cat(diffs, 0));
            m.l_flow = parts.flow.item();
        }

        Tensor total = total_loss(parts, opt_.weights);
        m.l_rec = parts.rec.item();
        m.total = total.item();

        opt_g_->zero_grad();
        total.backward();
        opt_g_->step();

        {
            NoGradGuard ng;
            m.psnr = psnr(out.composited.detach(), sample.gt);
        }

        if (!opt_.out_dir.empty()) append_metrics(m);
        if (opt_.checkpoint_every > 0 && step_ % opt_.checkpoint_every == 0 &&
            !opt_.out_dir.empty())
            save_checkpoint();
        return m;
    }

    void save_checkpoint() const {
        gen_.save(opt_.out_dir + "/gen_" + std::to_string(step_) + ".ckpt");
        gen_.save(opt_.out_dir + "/gen_latest.ckpt");
        if (disc_ && opt_d_) {
            ParamList dp;
            disc_->params("disc", dp);
            save_params(opt_.out_dir + "/disc_latest.ckpt", dp,
                        "step=" + std::to_string(step_) + "\n");
        }
    }

private:
    void append_metrics(const StepMetrics& m) const {
        std::ofstream os(opt_.out_dir + "/metrics.ndjson", std::ios::app);
        os << m.to_json().dump() << "\n";
    }

    FlowLensGenerator& gen_;
    PatchDiscriminator3d* disc_;
    TrainerOptions opt_;
    CacheBank cache_;
    std::optional<Adam> opt_g_, opt_d_;
    long step_ = 0;
};

} // namespace flowlens
