#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "flowlens/bench.hpp"
#include "test_util.hpp"

using namespace flowlens;

TEST_CASE("psnr") {
    Rng rng(3);
    Tensor a = Tensor::rand_uniform({2, 3, 8, 8}, rng);
    SUBCASE("identical inputs hit the declared 100 dB cap") { CHECK(psnr(a, a) == 100.0); }
    SUBCASE("uniform offset of 0.1 gives 20 dB (up to float32 representation)") {
        Tensor mid(Shape{1, 3, 8, 8}, 0.45f);
        Tensor off = add_scalar(mid, 0.1f);
        CHECK(psnr(off, mid) == doctest::Approx(20.0).epsilon(1e-7));
    }
    SUBCASE("random pair matches the direct formula") {
        Tensor b = Tensor::rand_uniform({2, 3, 8, 8}, rng);
        double mse = 0;
        for (long i = 0; i < a.numel(); ++i) {
            double d = double(a.raw()[size_t(i)]) - b.raw()[size_t(i)];
            mse += d * d;
        }
        mse /= double(a.numel());
        CHECK(psnr(a, b) == doctest::Approx(10.0 * std::log10(1.0 / mse)).epsilon(1e-6));
    }
    SUBCASE("symmetry") {
        Tensor b = Tensor::rand_uniform({2, 3, 8, 8}, rng);
        CHECK(psnr(a, b) == psnr(b, a));
    }
    SUBCASE("shape mismatch raises") {
        Tensor b = Tensor::rand_uniform({2, 3, 8, 7}, rng);
        CHECK_THROWS_AS(psnr(a, b), DimensionError);
    }
}

TEST_CASE("ssim") {
    Rng rng(7);
    SUBCASE("identical non-degenerate input gives 1") {
        Tensor a = Tensor::rand_uniform({3, 16, 16}, rng);
        CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("inverted mid-gray-free image has negative ssim") {
        // binary-ish texture keeps values away from 0.5
        Tensor a(Shape{3, 16, 16});
        Rng brng(11);
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                float v = brng.uniform() < 0.5 ? 0.1f : 0.9f;
                for (int c = 0; c < 3; ++c) a.at_mut({c, y, x}) = v;
            }
        Tensor inv = add_scalar(neg(a), 1.f);
        CHECK(ssim(inv, a) < 0.0);
    }
    SUBCASE("constant vs constant+delta matches the closed-form luminance term") {
        float mu = 0.4f, delta = 0.1f;
        Tensor a(Shape{3, 16, 16}, mu);
        Tensor b(Shape{3, 16, 16}, mu + delta);
        double c1 = 1e-4;
        double mx = 0.4, my = 0.5;
        double expect = (2 * mx * my + c1) / (mx * mx + my * my + c1); // contrast term = 1
        CHECK(ssim(a, b) == doctest::Approx(expect).epsilon(1e-5));
    }
    SUBCASE("symmetry") {
        Tensor a = Tensor::rand_uniform({3, 16, 16}, rng);
        Tensor b = Tensor::rand_uniform({3, 16, 16}, rng);
        CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
    }
    SUBCASE("frames smaller than the window raise") {
        Tensor a = Tensor::rand_uniform({3, 8, 16}, rng);
        CHECK_THROWS_AS(ssim(a, a), DimensionError);
    }
}

TEST_CASE("warp error") {
    SUBCASE("static video with zero flow is exactly zero") {
        Rng rng(13);
        Tensor frame = Tensor::rand_uniform({1, 3, 12, 12}, rng);
        Tensor frames = cat({frame, frame, frame}, 0);
        std::vector<FlowField> zero(2);
        for (auto& f : zero) {
            f.vectors = Tensor(Shape{2, 12, 12}, 0.f);
        }
        CHECK(warp_error(frames, zero, zero) == 0.0);
    }
    SUBCASE("flow-consistent synthetic video scores near zero") {
        Rng rng(17);
        SyntheticSceneSpec spec = random_scene_spec(rng, 32, 32, 5);
        SynthResult r = synth_video(spec);
        double e = warp_error(r.video.frames, r.flows_fwd, r.flows_bwd);
        CHECK(e < 5e-3); // sprite edges carry a little mismatch; interiors are exact
    }
    SUBCASE("flicker strictly increases the error") {
        Rng rng(19);
        SyntheticSceneSpec spec = random_scene_spec(rng, 32, 32, 5);
        SynthResult r = synth_video(spec);
        double base = warp_error(r.video.frames, r.flows_fwd, r.flows_bwd);
        Tensor flickered = r.video.frames.clone();
        float* p = flickered.data();
        for (long i = 0; i < 3 * 32 * 32; ++i) {
            long off = 2 * 3 * 32 * 32 + i; // frame 2
            p[off] = std::min(1.f, p[off] + 0.2f);
        }
        double worse = warp_error(flickered, r.flows_fwd, r.flows_bwd);
        CHECK(worse > base);
    }
    SUBCASE("missing flows raise") {
        Tensor frames(Shape{3, 3, 8, 8}, 0.5f);
        std::vector<FlowField> one(1);
        one[0].vectors = Tensor(Shape{2, 8, 8}, 0.f);
        CHECK_THROWS_AS(warp_error(frames, one, one), InvalidInput);
    }
}

TEST_CASE("benchmark report over a tiny model") {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.t_lf = 3;
    cfg.t_pf = 2;
    FlowLensGenerator gen(cfg, 23);

    Rng rng(29);
    std::vector<SynthResult> dataset;
    for (int i = 0; i < 2; ++i)
        dataset.push_back(synth_video(random_scene_spec(rng, 32, 32, 6)));
    for (size_t i = 0; i < dataset.size(); ++i)
        dataset[i].video.id = "bench-" + std::to_string(i);

    BenchmarkOptions opt;
    opt.sampler.window = 3;
    opt.sampler.t_pf = 2;
    MetricReport report = run_benchmark(gen, dataset, opt);

    SUBCASE("averages equal the arithmetic mean of the rate rows") {
        double psnr_mean = 0, ssim_mean = 0, warp_mean = 0;
        for (const auto& r : report.rows) {
            psnr_mean += r.psnr_db;
            ssim_mean += r.ssim_val;
            warp_mean += r.e_warp_x100;
        }
        double n = double(report.rows.size());
        CHECK(std::fabs(report.average.psnr_db - psnr_mean / n) < 1e-9);
        CHECK(std::fabs(report.average.ssim_val - ssim_mean / n) < 1e-9);
        CHECK(std::fabs(report.average.e_warp_x100 - warp_mean / n) < 1e-9);
    }
    SUBCASE("three rate rows with the stated rates") {
        REQUIRE(report.rows.size() == 3);
        CHECK(report.rows[0].rate == doctest::Approx(0.05f));
        CHECK(report.rows[1].rate == doctest::Approx(0.10f));
        CHECK(report.rows[2].rate == doctest::Approx(0.20f));
    }
    SUBCASE("determinism: a second evaluation reproduces the report") {
        MetricReport again = run_benchmark(gen, dataset, opt);
        for (size_t i = 0; i < report.rows.size(); ++i) {
            CHECK(report.rows[i].psnr_db == again.rows[i].psnr_db);
            CHECK(report.rows[i].ssim_val == again.rows[i].ssim_val);
            CHECK(report.rows[i].e_warp_x100 == again.rows[i].e_warp_x100);
        }
    }
    SUBCASE("renderers emit the table and records") {
        std::string text = report.render_text();
        CHECK(text.find("Avg.") != std::string::npos);
        CHECK(text.find("n/a") != std::string::npos); // VFID slot unplugged
        CHECK(text.find("FLOPs") != std::string::npos);
        std::string nd = report.to_ndjson();
        CHECK(nd.find("\"rate_row\"") != std::string::npos);
        CHECK(nd.find("\"average\"") != std::string::npos);
    }
    SUBCASE("a registered feature metric fills the pluggable slot") {
        BenchmarkOptions with_plugin = opt;
        with_plugin.rates = {0.10f};
        with_plugin.vfid = [](const VideoSequence& a, const VideoSequence& b) {
            return std::fabs(double(a.frames.raw()[0]) - b.frames.raw()[0]);
        };
        MetricReport r2 = run_benchmark(gen, dataset, with_plugin);
        CHECK(r2.rows[0].vfid >= 0.0);
        CHECK(r2.render_text().find("n/a") == std::string::npos);
    }
    SUBCASE("empty dataset raises") {
        CHECK_THROWS_AS(run_benchmark(gen, {}, opt), InvalidInput);
    }
}
