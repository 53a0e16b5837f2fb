#pragma once

// Deterministic synthetic moving-sprite scenes with analytic ground-truth
// flow. Sprites are constant-color shapes over a static value-noise
// background, rendered in fixed z-order (later sprites on top). Flow at a
// pixel is the velocity of its topmost owner; the validity mask marks pixels
// where backward-warping the next frame reproduces the current one exactly
// (same owner at all bilinear taps, no border clamping).

#include <vector>

#include "flowlens/flow.hpp"
#include "flowlens/video.hpp"

namespace flowlens {

enum class SpriteShape { circle, square };

struct SpriteSpec {
    SpriteShape shape = SpriteShape::circle;
    float color[3] = {1.f, 1.f, 1.f};
    float vx = 0.f, vy = 0.f; // pixels per frame
    float x0 = 0.f, y0 = 0.f; // center at t = 0
    float size = 5.f;         // radius (circle) or half-side (square)
};

struct SyntheticSceneSpec {
    int height = 0, width = 0;
    int length = 0;
    uint64_t background_seed = 1;
    std::vector<SpriteSpec> sprites;

    void validate() const {
        FL_CHECK(length >= 1, InvalidInput, "invalid-spec: zero-length scene");
        FL_CHECK(height > 0 && width > 0, InvalidInput, "invalid-spec: empty canvas");
        FL_CHECK(!sprites.empty(), InvalidInput, "invalid-spec: at least one sprite required");
        for (const auto& s : sprites)
            FL_CHECK(std::isfinite(s.vx) && std::isfinite(s.vy), InvalidInput,
                     "invalid-spec: sprite velocity must be finite");
    }
};

struct SynthResult {
    VideoSequence video;
    std::vector<FlowField> flows_fwd; // T-1 fields, frame t -> t+1
    std::vector<FlowField> flows_bwd; // T-1 fields, frame t+1 -> t
    std::vector<Tensor> valid_fwd;    // T-1 masks (1, H, W), 1 = warp-exact pixel
};

namespace detail {

// Smooth tileable value noise: coarse random lattice, bilinear upsampled.
inline Tensor value_noise_rgb(int H, int W, uint64_t seed, int cell = 8) {
    Rng rng(seed);
    int gh = H / cell + 2, gw = W / cell + 2;
    std::vector<float> lattice(size_t(3) * gh * gw);
    for (auto& v : lattice) v = rng.uniform(0.1f, 0.9f);
    Tensor img(Shape{3, H, W});
    float* p = img.data();
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                float fy = float(y) / float(cell), fx = float(x) / float(cell);
                int y0 = int(fy), x0 = int(fx);
                float wy = fy - float(y0), wx = fx - float(x0);
                auto L = [&](int yy, int xx) {
                    return lattice[(size_t(c) * gh + yy) * gw + xx];
                };
                float top = L(y0, x0) + (L(y0, x0 + 1) - L(y0, x0)) * wx;
                float bot = L(y0 + 1, x0) + (L(y0 + 1, x0 + 1) - L(y0 + 1, x0)) * wx;
                p[(size_t(c) * H + y) * W + x] = top + (bot - top) * wy;
            }
    return img;
}

inline bool sprite_contains(const SpriteSpec& s, float cx, float cy, float px, float py) {
    if (s.shape == SpriteShape::circle) {
        float dx = px - cx, dy = py - cy;
        return dx * dx + dy * dy <= s.size * s.size;
    }
    return std::fabs(px - cx) <= s.size && std::fabs(py - cy) <= s.size;
}

// Topmost sprite index covering the pixel at time t, or -1 for background.
inline int owner_at(const SyntheticSceneSpec& spec, int t, int px, int py) {
    for (int i = int(spec.sprites.size()) - 1; i >= 0; --i) {
        const auto& s = spec.sprites[size_t(i)];
        float cx = s.x0 + float(t) * s.vx;
        float cy = s.y0 + float(t) * s.vy;
        if (sprite_contains(s, cx, cy, float(px), float(py))) return i;
    }
    return -1;
}

} // namespace detail

inline SynthResult synth_video(const SyntheticSceneSpec& spec) {
    spec.validate();
    int T = spec.length, H = spec.height, W = spec.width;

    Tensor background = detail::value_noise_rgb(H, W, spec.background_seed);

    // ownership maps per frame
    std::vector<std::vector<int>> owner(size_t(T), std::vector<int>(size_t(H) * W, -1));
    for (int t = 0; t < T; ++t)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                owner[size_t(t)][size_t(y) * W + x] = detail::owner_at(spec, t, x, y);

    SynthResult result;
    result.video.frames = Tensor(Shape{T, 3, H, W});
    result.video.id = "synth-" + std::to_string(spec.background_seed);
    result.video.camera = default_camera(CameraKind::pinhole_ftan, H, W);
    float* fp = result.video.frames.data();
    const float* bg = background.cdata();
    for (int t = 0; t < T; ++t)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                int own = owner[size_t(t)][size_t(y) * W + x];
                for (int c = 0; c < 3; ++c) {
                    float v = own < 0 ? bg[(size_t(c) * H + y) * W + x]
                                      : spec.sprites[size_t(own)].color[c];
                    fp[((size_t(t) * 3 + c) * H + y) * W + x] = v;
                }
            }

    auto velocity_of = [&](int own, float& vx, float& vy) {
        if (own < 0) {
            vx = 0.f;
            vy = 0.f;
        } else {
            vx = spec.sprites[size_t(own)].vx;
            vy = spec.sprites[size_t(own)].vy;
        }
    };

    for (int t = 0; t + 1 < T; ++t) {
        FlowField fwd, bwd;
        fwd.vectors = Tensor(Shape{2, H, W});
        bwd.vectors = Tensor(Shape{2, H, W});
        Tensor valid(Shape{1, H, W});
        float* pf = fwd.vectors.data();
        float* pb = bwd.vectors.data();
        float* pv = valid.data();
        const auto& own_t = owner[size_t(t)];
        const auto& own_t1 = owner[size_t(t) + 1];
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                float vx, vy;
                velocity_of(own_t[size_t(y) * W + x], vx, vy);
                pf[(0 * H + y) * W + x] = vx;
                pf[(1 * H + y) * W + x] = vy;
                float bvx, bvy;
                velocity_of(own_t1[size_t(y) * W + x], bvx, bvy);
                pb[(0 * H + y) * W + x] = -bvx;
                pb[(1 * H + y) * W + x] = -bvy;

                // warp-exactness: all bilinear taps of (x+vx, y+vy) in frame
                // t+1 must be owned by the same sprite (or be the same static
                // background pixel), with no border clamping involved.
                float sx = float(x) + vx, sy = float(y) + vy;
                bool ok = sx >= 0.f && sx <= float(W - 1) && sy >= 0.f && sy <= float(H - 1);
                if (ok) {
                    int me = own_t[size_t(y) * W + x];
                    int x0 = int(sx), y0 = int(sy);
                    int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
                    for (int yy : {y0, y1})
                        for (int xx : {x0, x1})
                            if (own_t1[size_t(yy) * W + xx] != me) ok = false;
                    if (me < 0 && (sx != float(x) || sy != float(y))) ok = false;
                }
                pv[size_t(y) * W + x] = ok ? 1.f : 0.f;
            }
        result.flows_fwd.push_back(std::move(fwd));
        result.flows_bwd.push_back(std::move(bwd));
        result.valid_fwd.push_back(std::move(valid));
    }
    return result;
}

// Randomized scene used by the training stream and benchmarks.
inline SyntheticSceneSpec random_scene_spec(Rng& rng, int H, int W, int length,
                                            int min_sprites = 2, int max_sprites = 4,
                                            float max_speed = 3.f) {
    SyntheticSceneSpec spec;
    spec.height = H;
    spec.width = W;
    spec.length = length;
    spec.background_seed = rng.next_u64();
    int n = rng.uniform_int(min_sprites, max_sprites);
    for (int i = 0; i < n; ++i) {
        SpriteSpec s;
        s.shape = rng.uniform() < 0.5 ? SpriteShape::circle : SpriteShape::square;
        for (int c = 0; c < 3; ++c) s.color[c] = rng.uniform(0.05f, 0.95f);
        s.size = rng.uniform(float(std::min(H, W)) / 10.f, float(std::min(H, W)) / 4.f);
        s.x0 = rng.uniform(0.f, float(W - 1));
        s.y0 = rng.uniform(0.f, float(H - 1));
        s.vx = float(rng.uniform_int(-int(max_speed), int(max_speed)));
        s.vy = float(rng.uniform_int(-int(max_speed), int(max_speed)));
        spec.sprites.push_back(s);
    }
    return spec;
}

} // namespace flowlens
