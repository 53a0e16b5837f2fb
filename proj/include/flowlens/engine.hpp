#pragma once

// Streaming (online, past-only) and offline (whole-video) completion
// protocols around the generator, with clip-cache lifecycle, optional 4-way
// flip augmentation, an instrumentation hook for causality audits, and a
// per-frame timing report.

#include <chrono>
#include <functional>

#include "flowlens/model.hpp"
#include "flowlens/sampler.hpp"
#include "flowlens/video.hpp"

namespace flowlens {

struct StreamResult {
    VideoSequence completed;
    double seconds_per_frame = 0;
};

using WindowObserver = std::function<void(const WindowPlan&)>;

namespace detail {

inline Tensor gather_frames(const Tensor& frames, const std::vector<int>& idx) {
    std::vector<Tensor> parts;
    parts.reserve(idx.size());
    for (int i : idx) parts.push_back(slice(frames, 0, i, 1));
    return cat(parts, 0);
}

inline Tensor repeat_mask(const Tensor& mask1, int count) {
    std::vector<Tensor> parts(size_t(count), mask1);
    return cat(parts, 0);
}

inline Tensor flip_frames(const Tensor& frames, bool horizontal, bool vertical) {
    Tensor out = frames;
    if (horizontal) out = flip(out, 3);
    if (vertical) out = flip(out, 2);
    return out;
}

} // namespace detail

// One pass over the planned windows. `sources` supplies reference frames
// (the completed history for online mode); local frames always come from the
// masked input video.
inline Tensor run_windows(const FlowLensGenerator& gen, const Tensor& input_frames,
                          const Tensor& mask1, const SamplerConfig& cfg,
                          const std::string& video_id, const WindowObserver& observer) {
    const ModelConfig& mc = gen.config();
    FL_CHECK(cfg.t_pf == mc.t_pf, ConfigError,
             "config-error: sampler reference count differs from the model");
    if (cfg.mode == SamplerMode::online)
        FL_CHECK(cfg.window == mc.t_lf, ConfigError,
                 "config-error: online window must equal the model's local-frame count");

    int T = input_frames.dim(0);
    auto plans = plan_windows(T, cfg);
    CacheBank cache = gen.make_cache(); // cache reset at video start

    // parameters are shared between copies; only the count-check mode differs
    FlowLensGenerator runner = gen;
    if (cfg.mode == SamplerMode::offline) runner.set_strict_frame_counts(false);

    Tensor completed = input_frames.clone();
    std::vector<int> blend_count(size_t(T), 0);
    Tensor blend_sum;
    if (cfg.mode == SamplerMode::offline)
        blend_sum = Tensor(input_frames.shape(), 0.f);

    for (const WindowPlan& plan : plans) {
        if (observer) observer(plan);
        std::vector<int> locals = plan.local;
        int real = int(locals.size());
        int want = cfg.mode == SamplerMode::online ? mc.t_lf : cfg.window;
        while (int(locals.size()) < want) locals.push_back(locals.back()); // tail padding

        Tensor local = detail::gather_frames(input_frames, locals);
        Tensor past;
        Tensor past_masks;
        if (cfg.t_pf > 0) {
            if (cfg.mode == SamplerMode::online) {
                // references come from already-completed output history
                past = detail::gather_frames(completed, plan.references).detach();
                past_masks = Tensor(Shape{cfg.t_pf, 1, mask1.dim(2), mask1.dim(3)}, 0.f);
            } else {
                // offline: whole-timeline references; completed portions are
                // fed as full frames, the rest as masked input
                std::vector<Tensor> refs, rmasks;
                for (int r : plan.references) {
                    bool done = blend_count[size_t(r)] > 0;
                    Tensor src = done ? divide(slice(blend_sum, 0, r, 1),
                                               Tensor(Shape{1, 1, 1, 1},
                                                      float(blend_count[size_t(r)])))
                                      : slice(input_frames, 0, r, 1);
                    refs.push_back(src.detach());
                    rmasks.push_back(done ? Tensor(Shape{1, 1, mask1.dim(2), mask1.dim(3)}, 0.f)
                                          : mask1);
                }
                past = cat(refs, 0);
                past_masks = cat(rmasks, 0);
            }
        } else {
            past = Tensor(Shape{0, 3, input_frames.dim(2), input_frames.dim(3)}, {});
            past_masks = Tensor(Shape{0, 1, mask1.dim(2), mask1.dim(3)}, {});
        }

        Tensor masks = cfg.t_pf > 0
                           ? cat({detail::repeat_mask(mask1, int(locals.size())), past_masks}, 0)
                           : detail::repeat_mask(mask1, int(locals.size()));

        GeneratorOutput out = runner.forward(local, past, masks, cache, video_id);

        for (int i = 0; i < real; ++i) {
            int idx = plan.local[size_t(i)];
            Tensor frame = slice(out.composited, 0, i, 1).detach();
            if (cfg.mode == SamplerMode::online) {
                std::copy(frame.cdata(), frame.cdata() + frame.numel(),
                          completed.data() + size_t(idx) * frame.numel());
            } else {
                float* acc = blend_sum.data() + size_t(idx) * frame.numel();
                const float* src = frame.cdata();
                for (long j = 0; j < frame.numel(); ++j) acc[j] += src[j];
                blend_count[size_t(idx)] += 1;
                // keep the running blend visible to later windows' references
                Tensor blended = frame.clone();
                float inv = 1.f / float(blend_count[size_t(idx)]);
                float* bp = blended.data();
                const float* ap = blend_sum.cdata() + size_t(idx) * frame.numel();
                for (long j = 0; j < frame.numel(); ++j) bp[j] = ap[j] * inv;
                std::copy(bp, bp + frame.numel(),
                          completed.data() + size_t(idx) * frame.numel());
            }
        }
    }

    // re-composite so known pixels stay bitwise equal to the input
    const float* m = mask1.cdata();
    int H = input_frames.dim(2), W = input_frames.dim(3);
    float* cp = completed.data();
    const float* ip = input_frames.cdata();
    for (int t = 0; t < T; ++t)
        for (int c = 0; c < 3; ++c)
            for (long i = 0; i < long(H) * W; ++i) {
                size_t off = ((size_t(t) * 3 + c) * H * W) + size_t(i);
                if (m[i] == 0.f) cp[off] = ip[off];
            }
    return completed;
}

// Online beyond-FoV streaming over a masked video. The input sequence's
// frames are treated as the FoV-limited observation; the constant test mask
// marks the region to fill.
inline StreamResult run_stream(const VideoSequence& video, const FoVMask& mask,
                               const FlowLensGenerator& gen, const SamplerConfig& cfg,
                               const WindowObserver& observer = nullptr) {
    video.validate();
    FL_CHECK(mask.height == video.height() && mask.width == video.width(), DimensionError,
             "mask does not match the video");
    NoGradGuard ng;
    auto t0 = std::chrono::steady_clock::now();

    Tensor mask1 = reshape(mask.to_tensor(), {1, 1, mask.height, mask.width});
    Tensor completed;
    if (!cfg.flip_augment) {
        completed = run_windows(gen, video.frames, mask1, cfg, video.id, observer);
    } else {
        // the "+" variant: average the four flip variants, each with its own
        // cache lifecycle
        Tensor sum;
        int n = 0;
        for (bool fh : {false, true})
            for (bool fv : {false, true}) {
                Tensor in = detail::flip_frames(video.frames, fh, fv);
                Tensor m = mask1;
                if (fh) m = flip(m, 3);
                if (fv) m = flip(m, 2);
                std::string vid = video.id + (fh ? "#fh" : "") + (fv ? "#fv" : "");
                Tensor out = run_windows(gen, in, m, cfg, vid, observer);
                out = detail::flip_frames(out, fh, fv);
                sum = n == 0 ? out : add(sum, out);
                ++n;
            }
        completed = mul_scalar(sum, 1.f / float(n));
        // flip averaging blurs the known region; restore it exactly
        const float* m = mask1.cdata();
        int H = video.height(), W = video.width();
        float* cp = completed.data();
        const float* ip = video.frames.cdata();
        for (int t = 0; t < video.length(); ++t)
            for (int c = 0; c < 3; ++c)
                for (long i = 0; i < long(H) * W; ++i) {
                    size_t off = ((size_t(t) * 3 + c) * H * W) + size_t(i);
                    if (m[i] == 0.f) cp[off] = ip[off];
                }
    }

    auto t1 = std::chrono::steady_clock::now();
    StreamResult result;
    result.completed = video;
    result.completed.frames = completed;
    result.completed.mask = mask;
    result.seconds_per_frame =
        std::chrono::duration<double>(t1 - t0).count() / double(video.length());
    return result;
}

// Per-frame mask overload: test mode requires a constant FoV.
inline StreamResult run_stream(const VideoSequence& video, const std::vector<FoVMask>& masks,
                               const FlowLensGenerator& gen, const SamplerConfig& cfg,
                               const WindowObserver& observer = nullptr) {
    FL_CHECK(!masks.empty(), InvalidInput, "invalid-input: no masks");
    for (const FoVMask& m : masks)
        FL_CHECK(m.same_geometry(masks.front()), InvalidInput,
                 "test mode requires a constant mask across the sequence");
    return run_stream(video, masks.front(), gen, cfg, observer);
}

// Offline video inpainting: overlapping windows, whole-timeline references.
inline StreamResult run_offline(const VideoSequence& video, const FoVMask& mask,
                                const FlowLensGenerator& gen, SamplerConfig cfg,
                                const WindowObserver& observer = nullptr) {
    cfg.mode = SamplerMode::offline;
    return run_stream(video, mask, gen, cfg, observer);
}

} // namespace flowlens
