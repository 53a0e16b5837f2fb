#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "flowlens/synth.hpp"
#include "flowlens/video.hpp"
#include "test_util.hpp"

using namespace flowlens;

namespace {

// Independent per-pixel field-angle oracle used to validate mask geometry.
long oracle_outer_count(const CameraModel& cam, float rate, int H, int W) {
    long n = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            float r = std::sqrt((x - cam.cx) * (x - cam.cx) + (y - cam.cy) * (y - cam.cy));
            float theta = cam.kind == CameraKind::pinhole_ftan ? std::atan(r / cam.focal)
                                                               : r / cam.focal;
            if (theta > (1.f - rate) * cam.theta_max && theta <= cam.theta_max) ++n;
        }
    return n;
}

} // namespace

TEST_CASE("rate zero gives an all-zero mask for both camera models") {
    for (auto kind : {CameraKind::pinhole_ftan, CameraKind::spherical_ftheta}) {
        CameraModel cam = default_camera(kind, 48, 64);
        for (auto dir : {MaskDirection::outer, MaskDirection::inner}) {
            FoVMask m = generate_fov_mask(cam, 0.f, dir, 48, 64);
            CHECK(m.ones() == 0);
        }
    }
}

TEST_CASE("pinhole outer 20% mask matches the per-pixel angle oracle") {
    CameraModel cam = default_camera(CameraKind::pinhole_ftan, 240, 432);
    FoVMask m = generate_fov_mask(cam, 0.20f, MaskDirection::outer, 240, 432);
    long expect = oracle_outer_count(cam, 0.20f, 240, 432);
    CHECK(m.ones() == expect);
    CHECK(expect > 0);
    // every set pixel individually satisfies the angular band
    for (int y = 0; y < 240; ++y)
        for (int x = 0; x < 432; ++x) {
            float theta = cam.field_angle(float(x), float(y));
            bool band = theta > 0.8f * cam.theta_max && theta <= cam.theta_max;
            CHECK(bool(m.at(y, x)) == band);
        }
}

TEST_CASE("spherical inner 10% mask is a centered disk") {
    CameraModel cam = default_camera(CameraKind::spherical_ftheta, 336, 336);
    FoVMask m = generate_fov_mask(cam, 0.10f, MaskDirection::inner, 336, 336);
    CHECK(m.at(168, 168) == 1); // center pixel inside
    CHECK(m.at(0, 0) == 0);     // corners outside
    CHECK(m.at(335, 335) == 0);
    long expect = 0;
    for (int y = 0; y < 336; ++y)
        for (int x = 0; x < 336; ++x) {
            float r = std::sqrt((x - cam.cx) * (x - cam.cx) + (y - cam.cy) * (y - cam.cy));
            if (r / cam.focal < 0.10f * cam.theta_max) ++expect;
        }
    CHECK(m.ones() == expect);
}

TEST_CASE("mask generation errors") {
    CameraModel cam = default_camera(CameraKind::pinhole_ftan, 32, 32);
    CHECK_THROWS_AS(generate_fov_mask(cam, 1.f, MaskDirection::outer, 32, 32), InvalidInput);
    CHECK_THROWS_AS(generate_fov_mask(cam, -0.1f, MaskDirection::outer, 32, 32), InvalidInput);
    CameraModel bad = cam;
    bad.theta_max = 1.7f; // >= pi/2 is invalid for the f-tan model
    CHECK_THROWS_AS(generate_fov_mask(bad, 0.1f, MaskDirection::outer, 32, 32), InvalidInput);
    CameraModel bad2 = cam;
    bad2.focal = 0.f;
    CHECK_THROWS_AS(generate_fov_mask(bad2, 0.1f, MaskDirection::outer, 32, 32), InvalidInput);
}

TEST_CASE("mask monotonicity and outer/inner disjointness") {
    for (auto kind : {CameraKind::pinhole_ftan, CameraKind::spherical_ftheta}) {
        CameraModel cam = default_camera(kind, 40, 56);
        for (auto dir : {MaskDirection::outer, MaskDirection::inner}) {
            FoVMask prev;
            for (float rate : {0.05f, 0.10f, 0.20f, 0.40f}) {
                FoVMask m = generate_fov_mask(cam, rate, dir, 40, 56);
                if (!prev.grid.empty())
                    for (size_t i = 0; i < m.grid.size(); ++i)
                        CHECK(prev.grid[i] <= m.grid[i]); // nesting
                prev = m;
            }
        }
        for (float rate : {0.05f, 0.20f, 0.45f}) {
            FoVMask outer = generate_fov_mask(cam, rate, MaskDirection::outer, 40, 56);
            FoVMask inner = generate_fov_mask(cam, rate, MaskDirection::inner, 40, 56);
            for (size_t i = 0; i < outer.grid.size(); ++i)
                CHECK(int(outer.grid[i]) + int(inner.grid[i]) <= 1);
        }
    }
}

TEST_CASE("apply_mask") {
    Rng rng(5);
    VideoSequence video;
    video.frames = Tensor::rand_uniform({3, 3, 24, 32}, rng);
    video.camera = default_camera(CameraKind::pinhole_ftan, 24, 32);

    SUBCASE("all-zero mask is the identity") {
        video.mask = generate_fov_mask(video.camera, 0.f, MaskDirection::outer, 24, 32);
        VideoSequence out = apply_mask(video, 0.5f);
        CHECK(fl_test::max_abs_diff(out.frames, video.frames) == 0.0);
    }
    SUBCASE("full mask with fill 0 zeroes the frames") {
        video.mask.height = 24;
        video.mask.width = 32;
        video.mask.rate = 0.99f;
        video.mask.grid.assign(24 * 32, 1);
        VideoSequence out = apply_mask(video, 0.f);
        for (float v : out.frames.raw()) CHECK(v == 0.f);
    }
    SUBCASE("20% outer mask fills exactly the masked pixels") {
        video.mask = generate_fov_mask(video.camera, 0.20f, MaskDirection::outer, 24, 32);
        VideoSequence out = apply_mask(video, 0.25f);
        for (int t = 0; t < 3; ++t)
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < 24; ++y)
                    for (int x = 0; x < 32; ++x) {
                        float got = out.frames.at({t, c, y, x});
                        float want = video.mask.at(y, x) ? 0.25f : video.frames.at({t, c, y, x});
                        CHECK(got == want);
                    }
    }
    SUBCASE("mask dimension mismatch raises") {
        video.mask = generate_fov_mask(default_camera(CameraKind::pinhole_ftan, 16, 16), 0.2f,
                                       MaskDirection::outer, 16, 16);
        CHECK_THROWS_AS(apply_mask(video, 0.f), DimensionError);
    }
}

TEST_CASE("synthetic scene: rigid translation flow") {
    SyntheticSceneSpec spec;
    spec.height = 32;
    spec.width = 48;
    spec.length = 4;
    spec.background_seed = 11;
    SpriteSpec s;
    s.shape = SpriteShape::square;
    s.x0 = 16.f;
    s.y0 = 16.f;
    s.size = 6.f;
    s.vx = 2.f;
    s.vy = 0.f;
    s.color[0] = 0.9f;
    s.color[1] = 0.2f;
    s.color[2] = 0.2f;
    spec.sprites.push_back(s);

    SynthResult r = synth_video(spec);
    CHECK(r.flows_fwd.size() == 3);
    // interior of the sprite carries exactly (2, 0)
    CHECK(r.flows_fwd[0].dx(16, 16) == 2.f);
    CHECK(r.flows_fwd[0].dy(16, 16) == 0.f);
    // far background is static
    CHECK(r.flows_fwd[0].dx(2, 40) == 0.f);
}

TEST_CASE("synthetic scene: warp oracle on two sprites") {
    SyntheticSceneSpec spec;
    spec.height = 40;
    spec.width = 56;
    spec.length = 5;
    spec.background_seed = 29;
    SpriteSpec a;
    a.shape = SpriteShape::circle;
    a.x0 = 14.f;
    a.y0 = 14.f;
    a.size = 7.f;
    a.vx = 2.f;
    a.vy = 1.f;
    a.color[0] = 0.8f;
    SpriteSpec b;
    b.shape = SpriteShape::square;
    b.x0 = 38.f;
    b.y0 = 22.f;
    b.size = 6.f;
    b.vx = -1.f;
    b.vy = 2.f;
    b.color[2] = 0.7f;
    spec.sprites = {a, b};

    SynthResult r = synth_video(spec);
    NoGradGuard ng;
    for (int t = 0; t + 1 < spec.length; ++t) {
        Tensor next = slice(r.video.frames, 0, t + 1, 1);
        Tensor cur = slice(r.video.frames, 0, t, 1);
        Tensor flow = reshape(r.flows_fwd[size_t(t)].vectors, {1, 2, 40, 56});
        Tensor warped = warp_bilinear(next, flow);
        const float* valid = r.valid_fwd[size_t(t)].cdata();
        long n_valid = 0;
        double max_err = 0;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 40; ++y)
                for (int x = 0; x < 56; ++x)
                    if (valid[y * 56 + x] > 0.5f) {
                        ++n_valid;
                        max_err = std::max(
                            max_err, std::fabs(double(warped.at({0, c, y, x})) -
                                               cur.at({0, c, y, x})));
                    }
        CHECK(n_valid > 800 * 3); // most of the canvas is warp-consistent
        CHECK(max_err < 1e-6);
    }
}

TEST_CASE("static scene has all-zero flow; invalid specs throw") {
    SyntheticSceneSpec spec;
    spec.height = 16;
    spec.width = 16;
    spec.length = 3;
    SpriteSpec s;
    s.x0 = 8.f;
    s.y0 = 8.f;
    s.size = 4.f;
    spec.sprites.push_back(s);
    SynthResult r = synth_video(spec);
    for (const auto& f : r.flows_fwd)
        for (float v : f.vectors.raw()) CHECK(v == 0.f);

    SyntheticSceneSpec bad = spec;
    bad.length = 0;
    CHECK_THROWS_AS(synth_video(bad), InvalidInput);
    SyntheticSceneSpec bad2 = spec;
    bad2.sprites.clear();
    CHECK_THROWS_AS(synth_video(bad2), InvalidInput);
    SyntheticSceneSpec bad3 = spec;
    bad3.sprites[0].vx = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(synth_video(bad3), InvalidInput);
}

TEST_CASE("synthetic rendering is deterministic per seed") {
    Rng r1(77), r2(77);
    auto s1 = random_scene_spec(r1, 24, 24, 6);
    auto s2 = random_scene_spec(r2, 24, 24, 6);
    SynthResult a = synth_video(s1);
    SynthResult b = synth_video(s2);
    CHECK(a.video.frames.raw() == b.video.frames.raw());
    for (size_t i = 0; i < a.flows_fwd.size(); ++i)
        CHECK(a.flows_fwd[i].vectors.raw() == b.flows_fwd[i].vectors.raw());
}

TEST_CASE("video save/load round-trip and io errors") {
    std::string dir = "/tmp/fl_test_video";
    std::filesystem::remove_all(dir);

    Rng rng(3);
    SyntheticSceneSpec spec = random_scene_spec(rng, 24, 32, 12);
    VideoSequence video = synth_video(spec).video;
    video.mask = generate_fov_mask(default_camera(CameraKind::pinhole_ftan, 24, 32), 0.1f,
                                   MaskDirection::outer, 24, 32);
    video.camera = default_camera(CameraKind::pinhole_ftan, 24, 32);
    video.id = "roundtrip";

    // quantize to the 8-bit grid first so save/load becomes exact
    for (auto& v : video.frames.raw()) v = std::round(v * 255.f) / 255.f;

    save_video(video, dir);
    VideoSequence loaded = load_video(dir);
    CHECK(loaded.length() == 12);
    CHECK(loaded.id == "roundtrip");
    CHECK(fl_test::max_abs_diff(loaded.frames, video.frames) == 0.0);
    CHECK(loaded.mask.grid == video.mask.grid);
    CHECK(loaded.mask.rate == doctest::Approx(0.1f));
    CHECK(loaded.camera.focal == doctest::Approx(video.camera.focal));

    CHECK_THROWS_AS(load_video("/tmp/fl_test_video_missing"), IoError);
    std::filesystem::remove_all(dir);
}
