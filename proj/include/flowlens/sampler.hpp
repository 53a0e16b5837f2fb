#pragma once

// Evaluation window planning for the two protocols. Online: consecutive
// non-overlapping windows, past references at exponentially back-spaced
// offsets (-1w, -2w, -4w, ...) clipped at zero, drawn from completed output.
// Offline: overlapping half-stride windows with references sampled from the
// whole timeline at a fixed stride.

#include <vector>

#include "flowlens/core/common.hpp"

namespace flowlens {

enum class SamplerMode { online, offline };

struct SamplerConfig {
    SamplerMode mode = SamplerMode::online;
    int window = 5;     // 5 online, 10 offline per the evaluation protocols
    int t_pf = 3;       // reference frame count
    int ref_stride = 10; // offline whole-video sampling stride
    bool flip_augment = false;

    void validate() const {
        FL_CHECK(window >= 1, ConfigError, "config-error: window must be >= 1");
        FL_CHECK(t_pf >= 0, ConfigError, "config-error: negative reference count");
        FL_CHECK(ref_stride >= 1, ConfigError, "config-error: ref stride must be >= 1");
    }

    static SamplerConfig online_default() { return {}; }
    static SamplerConfig offline_default() {
        SamplerConfig c;
        c.mode = SamplerMode::offline;
        c.window = 10;
        return c;
    }
};

struct WindowPlan {
    std::vector<int> local;      // frame indices processed by this pass
    std::vector<int> references; // context frame indices
};

inline std::vector<WindowPlan> plan_windows(int total_frames, const SamplerConfig& cfg) {
    FL_CHECK(total_frames >= 1, InvalidInput, "invalid-input: empty video");
    cfg.validate();
    std::vector<WindowPlan> plans;

    if (cfg.mode == SamplerMode::online) {
        for (int start = 0; start < total_frames; start += cfg.window) {
            WindowPlan plan;
            int end = std::min(start + cfg.window, total_frames);
            for (int t = start; t < end; ++t) plan.local.push_back(t);
            if (start == 0) {
                // no past yet: duplicate the earliest local frame
                plan.references.assign(size_t(cfg.t_pf), 0);
            } else {
                for (int k = 0; k < cfg.t_pf; ++k) {
                    int offset = cfg.window << k;
                    plan.references.push_back(std::max(0, start - offset));
                }
            }
            plans.push_back(std::move(plan));
        }
    } else {
        int stride = std::max(1, cfg.window / 2);
        for (int start = 0; start < total_frames; start += stride) {
            WindowPlan plan;
            int end = std::min(start + cfg.window, total_frames);
            for (int t = start; t < end; ++t) plan.local.push_back(t);
            for (int r = 0; r < total_frames; r += cfg.ref_stride) plan.references.push_back(r);
            plans.push_back(std::move(plan));
            if (end == total_frames) break;
        }
    }
    return plans;
}

} // namespace flowlens
