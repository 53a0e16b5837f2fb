// Command-line front end: FoV mask generation, synthetic data creation,
// training, online/offline inference and metric evaluation.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "flowlens/flowlens.hpp"

using namespace flowlens;

namespace {

CameraKind parse_kind(const std::string& s) {
    return s == "spherical" || s == "spherical_ftheta" ? CameraKind::spherical_ftheta
                                                       : CameraKind::pinhole_ftan;
}

MaskDirection parse_direction(const std::string& s) {
    return s == "inner" ? MaskDirection::inner : MaskDirection::outer;
}

ModelConfig preset_config(const std::string& name) {
    if (name == "standard") return ModelConfig::standard();
    if (name == "small") return ModelConfig::small();
    return ModelConfig::tiny();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"FlowLens: flow-guided clip-recurrent video completion"};
    app.require_subcommand(1);

    // ---- mask ----
    auto* mask_cmd = app.add_subcommand("mask", "generate a FoV mask image");
    std::string m_kind = "pinhole", m_dir = "outer", m_out = "mask.pgm";
    float m_rate = 0.2f, m_focal = 0.f, m_cx = -1.f, m_cy = -1.f, m_theta = 0.f;
    int m_h = 240, m_w = 432;
    mask_cmd->add_option("--kind", m_kind, "pinhole|spherical");
    mask_cmd->add_option("--rate", m_rate, "expansion rate in [0,1)");
    mask_cmd->add_option("--direction", m_dir, "outer|inner");
    mask_cmd->add_option("--height", m_h);
    mask_cmd->add_option("--width", m_w);
    mask_cmd->add_option("--focal", m_focal, "focal length in pixels (default: derived)");
    mask_cmd->add_option("--cx", m_cx);
    mask_cmd->add_option("--cy", m_cy);
    mask_cmd->add_option("--theta-max", m_theta, "reference half-angle in radians");
    mask_cmd->add_option("--out", m_out);

    // ---- synth ----
    auto* synth_cmd = app.add_subcommand("synth", "create a synthetic scene with analytic flow");
    std::string s_out = "synth_video";
    int s_frames = 24, s_h = 64, s_w = 64, s_sprites = 3;
    uint64_t s_seed = 1;
    bool s_flows = false;
    float s_rate = 0.2f;
    std::string s_dir = "outer";
    synth_cmd->add_option("--out", s_out, "output directory");
    synth_cmd->add_option("--frames", s_frames);
    synth_cmd->add_option("--height", s_h);
    synth_cmd->add_option("--width", s_w);
    synth_cmd->add_option("--sprites", s_sprites);
    synth_cmd->add_option("--seed", s_seed);
    synth_cmd->add_flag("--flows", s_flows, "also write ground-truth flow files");
    synth_cmd->add_option("--mask-rate", s_rate, "mask stored in the sidecar");
    synth_cmd->add_option("--mask-direction", s_dir);

    // ---- train ----
    auto* train_cmd = app.add_subcommand("train", "train on the synthetic stream");
    std::string t_out = "train_out", t_config = "tiny", t_hub = "early", t_ffn = "mixf3n";
    int t_steps = 1000, t_h = 48, t_w = 48, t_ckpt_every = 500, t_log_every = 50;
    uint64_t t_seed = 1;
    float t_lr = 1e-4f, t_lambda_adv = 0.01f;
    bool t_freeze_flow = false, t_no_flow_prop = false;
    train_cmd->add_option("--out", t_out);
    train_cmd->add_option("--steps", t_steps);
    train_cmd->add_option("--config", t_config, "tiny|small|standard");
    train_cmd->add_option("--height", t_h);
    train_cmd->add_option("--width", t_w);
    train_cmd->add_option("--seed", t_seed);
    train_cmd->add_option("--lr", t_lr);
    train_cmd->add_option("--lambda-adv", t_lambda_adv);
    train_cmd->add_option("--checkpoint-every", t_ckpt_every);
    train_cmd->add_option("--log-every", t_log_every);
    train_cmd->add_option("--hub", t_hub, "early|middle|late|all|none");
    train_cmd->add_option("--ffn", t_ffn, "ffn|f3n|mix_ffn|mixf3n");
    train_cmd->add_flag("--freeze-flow", t_freeze_flow);
    train_cmd->add_flag("--no-flow-prop", t_no_flow_prop);

    // ---- infer ----
    auto* infer_cmd = app.add_subcommand("infer", "complete a masked video");
    std::string i_model, i_video, i_out = "completed", i_mode = "online", i_dir = "outer";
    int i_window = 0;
    float i_rate = -1.f;
    bool i_flip = false;
    infer_cmd->add_option("--model", i_model)->required();
    infer_cmd->add_option("--video", i_video, "video directory")->required();
    infer_cmd->add_option("--out", i_out);
    infer_cmd->add_option("--mode", i_mode, "online|offline");
    infer_cmd->add_option("--window", i_window, "sliding window (default per mode)");
    infer_cmd->add_option("--mask-rate", i_rate, "override the sidecar mask");
    infer_cmd->add_option("--mask-direction", i_dir);
    infer_cmd->add_flag("--flip", i_flip, "4-way flip augmentation");

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "benchmark over expansion rates");
    std::string e_model, e_rates = "5,10,20", e_dir = "outer", e_out;
    int e_videos = 3, e_frames = 18, e_h = 48, e_w = 48, e_window = 0;
    uint64_t e_seed = 77;
    bool e_mask_only = false, e_offline = false;
    eval_cmd->add_option("--model", e_model)->required();
    eval_cmd->add_option("--rates", e_rates, "percent list, e.g. 5,10,20");
    eval_cmd->add_option("--direction", e_dir, "outer|inner");
    eval_cmd->add_option("--videos", e_videos, "synthetic eval videos");
    eval_cmd->add_option("--frames", e_frames);
    eval_cmd->add_option("--height", e_h);
    eval_cmd->add_option("--width", e_w);
    eval_cmd->add_option("--seed", e_seed);
    eval_cmd->add_option("--window", e_window);
    eval_cmd->add_option("--out", e_out, "report prefix (.txt/.ndjson)");
    eval_cmd->add_flag("--mask-only", e_mask_only, "metrics restricted to masked pixels");
    eval_cmd->add_flag("--offline", e_offline, "offline protocol instead of online");

    // ---- flowviz ----
    auto* viz_cmd = app.add_subcommand("flowviz", "render a flow file to a color image");
    std::string v_flow, v_out = "flow.ppm";
    viz_cmd->add_option("--flow", v_flow)->required();
    viz_cmd->add_option("--out", v_out);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*mask_cmd) {
            CameraKind kind = parse_kind(m_kind);
            CameraModel cam;
            if (m_focal > 0.f) {
                cam.kind = kind;
                cam.focal = m_focal;
                cam.cx = m_cx >= 0 ? m_cx : float(m_w - 1) / 2.f;
                cam.cy = m_cy >= 0 ? m_cy : float(m_h - 1) / 2.f;
                cam.theta_max = m_theta;
            } else {
                cam = default_camera(kind, m_h, m_w, m_theta);
            }
            FoVMask mask = generate_fov_mask(cam, m_rate, parse_direction(m_dir), m_h, m_w);
            detail::write_pgm_mask(m_out, mask);
            std::cout << "wrote " << m_out << " (" << mask.ones() << " masked pixels)\n";
        }

        if (*synth_cmd) {
            Rng rng(s_seed);
            SyntheticSceneSpec spec =
                random_scene_spec(rng, s_h, s_w, s_frames, s_sprites, s_sprites);
            SynthResult r = synth_video(spec);
            r.video.camera = default_camera(parse_kind(s_dir == "inner" ? "spherical" : "pinhole"),
                                            s_h, s_w);
            r.video.mask = generate_fov_mask(r.video.camera, s_rate, parse_direction(s_dir), s_h,
                                             s_w);
            save_video(r.video, s_out);
            if (s_flows) {
                for (size_t i = 0; i < r.flows_fwd.size(); ++i) {
                    char name[64];
                    std::snprintf(name, sizeof(name), "/flow_fwd_%05zu.flow", i);
                    save_flow(r.flows_fwd[i], s_out + name);
                    std::snprintf(name, sizeof(name), "/flow_bwd_%05zu.flow", i);
                    save_flow(r.flows_bwd[i], s_out + name);
                }
            }
            std::cout << "wrote " << s_frames << " frames to " << s_out << "\n";
        }

        if (*train_cmd) {
            ModelConfig cfg = preset_config(t_config);
            cfg.hub_placement = t_hub == "none"     ? HubPlacement::none
                                : t_hub == "middle" ? HubPlacement::middle
                                : t_hub == "late"   ? HubPlacement::late
                                : t_hub == "all"    ? HubPlacement::all
                                                    : HubPlacement::early;
            cfg.ffn = t_ffn == "ffn"       ? FFNKind::ffn
                      : t_ffn == "f3n"     ? FFNKind::f3n
                      : t_ffn == "mix_ffn" ? FFNKind::mix_ffn
                                           : FFNKind::mixf3n;
            if (t_freeze_flow) cfg.train_flow = false;
            if (t_no_flow_prop) cfg.flow_propagation = false;

            FlowLensGenerator gen(cfg, t_seed);
            Rng drng(t_seed * 31 + 7);
            PatchDiscriminator3d disc(DiscriminatorConfig{}, drng);

            TrainerOptions opt;
            opt.lr = t_lr;
            opt.lr_d = t_lr;
            opt.weights.adv = t_lambda_adv;
            opt.checkpoint_every = t_ckpt_every;
            opt.out_dir = t_out;
            Trainer trainer(gen, t_lambda_adv > 0 ? &disc : nullptr, opt);

            SyntheticStream stream(StreamConfig{t_h, t_w, 3}, cfg.t_lf, cfg.t_pf, t_seed * 17 + 3);
            for (int step = 1; step <= t_steps; ++step) {
                StepMetrics m = trainer.step(stream.next());
                if (step % t_log_every == 0 || step == 1)
                    std::cout << "step " << m.step << "  rec " << m.l_rec << "  flow " << m.l_flow
                              << "  adv " << m.l_adv << "  d " << m.l_d << "  psnr " << m.psnr
                              << "\n";
            }
            trainer.save_checkpoint();
            gen.save(t_out + "/gen_final.ckpt");
            std::cout << "checkpoints in " << t_out << "\n";
        }

        if (*infer_cmd) {
            FlowLensGenerator gen = FlowLensGenerator::load(i_model);
            VideoSequence video = load_video(i_video);
            FoVMask mask = video.mask;
            if (i_rate >= 0.f) {
                CameraModel cam = video.camera;
                if (cam.focal <= 0.f)
                    cam = default_camera(parse_direction(i_dir) == MaskDirection::inner
                                             ? CameraKind::spherical_ftheta
                                             : CameraKind::pinhole_ftan,
                                         video.height(), video.width());
                mask = generate_fov_mask(cam, i_rate, parse_direction(i_dir), video.height(),
                                         video.width());
            }
            FL_CHECK(!mask.grid.empty(), InvalidInput,
                     "no mask: provide --mask-rate or a mask.pgm in the video directory");

            SamplerConfig cfg = i_mode == "offline" ? SamplerConfig::offline_default()
                                                    : SamplerConfig::online_default();
            cfg.window = i_window > 0 ? i_window
                         : cfg.mode == SamplerMode::online ? gen.config().t_lf
                                                           : cfg.window;
            cfg.t_pf = gen.config().t_pf;
            cfg.flip_augment = i_flip;

            StreamResult result = cfg.mode == SamplerMode::online
                                      ? run_stream(video, mask, gen, cfg)
                                      : run_offline(video, mask, gen, cfg);
            save_video(result.completed, i_out);
            std::ofstream timing(i_out + "/timing.txt");
            timing << "seconds_per_frame=" << result.seconds_per_frame << "\n";
            std::cout << "completed " << video.length() << " frames -> " << i_out << "  ("
                      << result.seconds_per_frame << " s/frame)\n";
        }

        if (*eval_cmd) {
            FlowLensGenerator gen = FlowLensGenerator::load(e_model);
            Rng rng(e_seed);
            std::vector<SynthResult> dataset;
            for (int i = 0; i < e_videos; ++i) {
                dataset.push_back(synth_video(random_scene_spec(rng, e_h, e_w, e_frames)));
                dataset.back().video.id = "eval-" + std::to_string(i);
            }
            BenchmarkOptions opt;
            opt.direction = parse_direction(e_dir);
            opt.mask_only = e_mask_only;
            opt.rates.clear();
            std::stringstream ss(e_rates);
            std::string tok;
            while (std::getline(ss, tok, ',')) opt.rates.push_back(std::stof(tok) / 100.f);
            opt.sampler = e_offline ? SamplerConfig::offline_default()
                                    : SamplerConfig::online_default();
            if (!e_offline) opt.sampler.window = gen.config().t_lf;
            if (e_window > 0) opt.sampler.window = e_window;
            opt.sampler.t_pf = gen.config().t_pf;

            MetricReport report = run_benchmark(gen, dataset, opt);
            std::cout << report.render_text();
            if (!e_out.empty()) {
                std::ofstream txt(e_out + ".txt");
                txt << report.render_text();
                std::ofstream nd(e_out + ".ndjson");
                nd << report.to_ndjson();
                std::cout << "reports: " << e_out << ".txt / .ndjson\n";
            }
        }

        if (*viz_cmd) {
            FlowField flow = load_flow(v_flow);
            Tensor img = flow_to_color(flow);
            detail::write_ppm(v_out, img.cdata(), flow.height(), flow.width());
            std::cout << "wrote " << v_out << "\n";
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
