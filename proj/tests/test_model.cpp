#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "flowlens/model.hpp"
#include "flowlens/synth.hpp"
#include "test_util.hpp"

using namespace flowlens;

namespace {

struct Sample {
    Tensor local, past, masks, gt;
};

Sample make_sample(Rng& rng, const ModelConfig& cfg, int H, int W, float rate = 0.2f) {
    SyntheticSceneSpec spec = random_scene_spec(rng, H, W, cfg.t_lf + cfg.t_pf);
    SynthResult synth = synth_video(spec);
    FoVMask mask = generate_fov_mask(default_camera(CameraKind::pinhole_ftan, H, W), rate,
                                     MaskDirection::outer, H, W);
    Sample s;
    s.gt = synth.video.frames;
    s.local = slice(s.gt, 0, 0, cfg.t_lf).detach();
    s.past = slice(s.gt, 0, cfg.t_lf, cfg.t_pf).detach();
    Tensor m = mask.to_tensor();
    std::vector<Tensor> ms(size_t(cfg.t_lf + cfg.t_pf), reshape(m, {1, 1, H, W}));
    s.masks = cat(ms, 0).detach();
    return s;
}

} // namespace

TEST_CASE("encode maps 240x432 frames to 60x108 quarter-resolution features") {
    ModelConfig cfg = ModelConfig::tiny();
    FlowLensGenerator gen(cfg, 7);
    Rng rng(3);
    Tensor frames = Tensor::rand_uniform({2, 3, 240, 432}, rng, -1.f, 1.f);
    Tensor masks(Shape{2, 1, 240, 432}, 0.f);
    NoGradGuard ng;
    Tensor feats = gen.encode(frames, masks);
    CHECK(feats.shape() == Shape{2, cfg.channels, 60, 108});
}

TEST_CASE("generator forward: contracts on a tiny config") {
    ModelConfig cfg = ModelConfig::tiny();
    FlowLensGenerator gen(cfg, 11);
    Rng rng(5);
    int H = 32, W = 32;
    Sample s = make_sample(rng, cfg, H, W);

    CacheBank cache = gen.make_cache();
    NoGradGuard ng;
    GeneratorOutput out = gen.forward(s.local, s.past, s.masks, cache, "vid");

    SUBCASE("exactly T_lf frames come out, in range") {
        CHECK(out.frames.shape() == Shape{cfg.t_lf, 3, H, W});
        CHECK(out.composited.shape() == out.frames.shape());
        for (float v : out.frames.raw()) {
            CHECK(v >= 0.f);
            CHECK(v <= 1.f);
        }
    }
    SUBCASE("known-region preservation is bitwise") {
        for (int t = 0; t < cfg.t_lf; ++t)
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x)
                        if (s.masks.at({t, 0, y, x}) == 0.f)
                            CHECK(out.composited.at({t, c, y, x}) == s.local.at({t, c, y, x}));
    }
    SUBCASE("determinism: same seed, same input, same output") {
        FlowLensGenerator gen2(cfg, 11);
        CacheBank cache2 = gen2.make_cache();
        GeneratorOutput out2 = gen2.forward(s.local, s.past, s.masks, cache2, "vid");
        CHECK(out.frames.raw() == out2.frames.raw());
    }
    SUBCASE("mask channel matters: a different mask changes the output") {
        FoVMask inner = generate_fov_mask(default_camera(CameraKind::spherical_ftheta, H, W),
                                          0.3f, MaskDirection::inner, H, W);
        std::vector<Tensor> ms(size_t(cfg.t_lf + cfg.t_pf),
                               reshape(inner.to_tensor(), {1, 1, H, W}));
        Tensor other = cat(ms, 0);
        CacheBank cache3 = gen.make_cache();
        GeneratorOutput out3 = gen.forward(s.local, s.past, other, cache3, "vid");
        CHECK(fl_test::max_abs_diff(out3.frames, out.frames) > 1e-6);
    }
    SUBCASE("frame-count mismatch raises config-error") {
        Tensor bad_local = slice(s.local, 0, 0, cfg.t_lf - 1);
        CacheBank cache4 = gen.make_cache();
        CHECK_THROWS_AS(gen.forward(bad_local, s.past, s.masks, cache4, "vid"), ConfigError);
    }
}

TEST_CASE("dead-parameter audit after nudging zero-initialized branches") {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.t_lf = 3;
    cfg.t_pf = 2;
    FlowLensGenerator gen(cfg, 13);
    ParamList pl;
    gen.params(pl);
    // nudge every parameter so no zero-initialized branch gates gradient flow
    Rng wrng(17);
    for (auto& e : pl.entries())
        for (auto& v : e.tensor.raw()) v += wrng.uniform(-0.02f, 0.02f);

    Rng rng(19);
    Sample s = make_sample(rng, cfg, 32, 32);
    CacheBank cache = gen.make_cache();
    // two passes so the hub's cross-query path (previous-clip cache) is active
    gen.forward(s.local, s.past, s.masks, cache, "vid");
    GeneratorOutput out = gen.forward(s.local, s.past, s.masks, cache, "vid");
    Tensor loss = mean(abs_op(sub(out.frames, slice(s.gt, 0, 0, cfg.t_lf))));
    loss.backward();

    int dead = 0;
    for (auto& e : pl.entries()) {
        if (e.name.rfind("flow.", 0) == 0) continue; // flow net trains on its own loss
        bool nonzero = false;
        if (e.tensor.has_grad())
            for (float g : e.tensor.grad())
                if (g != 0.f) nonzero = true;
        if (!nonzero) {
            ++dead;
            MESSAGE("dead parameter: ", e.name);
        }
    }
    CHECK(dead == 0);
}

TEST_CASE("checkpoint round-trip preserves the forward pass") {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.t_lf = 3;
    cfg.t_pf = 1;
    FlowLensGenerator gen(cfg, 23);
    Rng rng(29);
    Sample s = make_sample(rng, cfg, 32, 32);
    CacheBank cache = gen.make_cache();
    NoGradGuard ng;
    GeneratorOutput out = gen.forward(s.local, s.past, s.masks, cache, "vid");

    std::string path = "/tmp/fl_test_model.ckpt";
    gen.save(path);
    FlowLensGenerator loaded = FlowLensGenerator::load(path);
    CHECK(loaded.config().channels == cfg.channels);
    CHECK(loaded.config().t_lf == 3);
    CacheBank cache2 = loaded.make_cache();
    GeneratorOutput out2 = loaded.forward(s.local, s.past, s.masks, cache2, "vid");
    CHECK(out.frames.raw() == out2.frames.raw());
    std::remove(path.c_str());
}

TEST_CASE("config text round-trip") {
    ModelConfig cfg = ModelConfig::small();
    cfg.hub_placement = HubPlacement::middle;
    cfg.ffn = FFNKind::mix_ffn;
    cfg.attention.kind = AttentionKind::decoupled3d;
    cfg.flow_propagation = false;
    ModelConfig back = ModelConfig::from_text(cfg.to_text());
    CHECK(back.channels == 64);
    CHECK(back.embed_dim == 256);
    CHECK(back.num_blocks == 5);
    CHECK(back.hub_placement == HubPlacement::middle);
    CHECK(back.ffn == FFNKind::mix_ffn);
    CHECK(back.attention.kind == AttentionKind::decoupled3d);
    CHECK(back.flow_propagation == false);
    CHECK(back.flow.levels == 4);
}

TEST_CASE("efficiency contract: flops accounting") {
    ModelConfig std_cfg = ModelConfig::standard();
    ModelConfig small_cfg = ModelConfig::small();
    FlopsReport std_r = count_flops(std_cfg);
    FlopsReport small_r = count_flops(small_cfg);

    SUBCASE("hub share stays under 5% of the generator") {
        CHECK(std_r.hub_fraction() < 0.05);
        CHECK(std_r.hub > 0.0);
        MESSAGE("standard hub share: ", std_r.hub_fraction());
    }
    SUBCASE("small model is under half the standard model") {
        CHECK(small_r.total() < 0.5 * std_r.total());
        MESSAGE("totals (GFLOPs): standard ", std_r.total() / 1e9, ", small ",
                small_r.total() / 1e9);
    }
    SUBCASE("doubling the input area doubles the stem cost") {
        FlopsReport base = count_flops(std_cfg, 240, 432);
        FlopsReport doubled = count_flops(std_cfg, 480, 432);
        CHECK(doubled.stem == doctest::Approx(2.0 * base.stem).epsilon(1e-9));
    }
    SUBCASE("hub off means zero hub cost") {
        ModelConfig none = ModelConfig::standard();
        none.hub_placement = HubPlacement::none;
        CHECK(count_flops(none).hub == 0.0);
    }
}

TEST_CASE("hub placements wire the expected number of caches") {
    for (auto [placement, expect] :
         {std::pair<HubPlacement, int>{HubPlacement::early, 1},
          {HubPlacement::middle, 1},
          {HubPlacement::late, 1},
          {HubPlacement::all, 2},
          {HubPlacement::none, 0}}) {
        ModelConfig cfg = ModelConfig::tiny();
        cfg.hub_placement = placement;
        FlowLensGenerator gen(cfg, 31);
        CHECK(gen.hub_count() == expect);
        CHECK(int(gen.make_cache().slots.size()) == expect);
    }
}
