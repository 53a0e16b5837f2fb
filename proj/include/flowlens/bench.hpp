#pragma once

// Benchmark harness: evaluates a model over FoV expansion rates and emits a
// table-shaped report (per-rate PSNR / SSIM / E*_warp plus averages and an
// efficiency block). The video-feature similarity column stays "n/a" unless
// a feature-extractor plug-in is registered.

#include <json.hpp>

#include <iomanip>
#include <sstream>

#include "flowlens/engine.hpp"
#include "flowlens/metrics.hpp"
#include "flowlens/synth.hpp"

namespace flowlens {

struct MetricRow {
    float rate = 0;
    double psnr_db = 0;
    double ssim_val = 0;
    double e_warp_x100 = 0; // warping error in units of 1e-2
    double vfid = -1;       // negative = not available
};

struct MetricReport {
    std::vector<MetricRow> rows;
    MetricRow average;
    double flops = 0;
    double seconds_per_frame = 0;
    std::string direction = "outer";

    std::string render_text() const {
        std::ostringstream os;
        os << std::fixed;
        os << "Ex.Rate   PSNR     SSIM     E*warp   VFID\n";
        auto line = [&](const char* label, const MetricRow& r) {
            os << std::left << std::setw(10) << label << std::right << std::setw(6)
               << std::setprecision(2) << r.psnr_db << "  " << std::setw(7)
               << std::setprecision(4) << r.ssim_val << "  " << std::setw(7)
               << std::setprecision(4) << r.e_warp_x100 << "  ";
            if (r.vfid < 0)
                os << "   n/a";
            else
                os << std::setw(6) << std::setprecision(3) << r.vfid;
            os << "\n";
        };
        for (const auto& r : rows) {
            std::ostringstream lbl;
            lbl << std::setprecision(0) << std::fixed << r.rate * 100 << "%";
            line(lbl.str().c_str(), r);
        }
        line("Avg.", average);
        os << std::setprecision(1) << "FLOPs: " << flops / 1e9
           << " G   Runtime: " << std::setprecision(4) << seconds_per_frame << " s/frame\n";
        return os.str();
    }

    std::string to_ndjson() const {
        std::ostringstream os;
        for (const auto& r : rows) {
            nlohmann::json j{{"kind", "rate_row"},
                             {"direction", direction},
                             {"rate", r.rate},
                             {"psnr", r.psnr_db},
                             {"ssim", r.ssim_val},
                             {"e_warp_x100", r.e_warp_x100}};
            if (r.vfid >= 0)
                j["vfid"] = r.vfid;
            else
                j["vfid"] = "n/a";
            os << j.dump() << "\n";
        }
        nlohmann::json avg{{"kind", "average"},
                           {"direction", direction},
                           {"psnr", average.psnr_db},
                           {"ssim", average.ssim_val},
                           {"e_warp_x100", average.e_warp_x100},
                           {"flops", flops},
                           {"seconds_per_frame", seconds_per_frame}};
        os << avg.dump() << "\n";
        return os.str();
    }
};

// Pluggable slot for a learned video-feature distance (the report shows
// "n/a" without one).
using VideoFeatureMetric =
    std::function<double(const VideoSequence& pred, const VideoSequence& gt)>;

struct BenchmarkOptions {
    std::vector<float> rates = {0.05f, 0.10f, 0.20f};
    MaskDirection direction = MaskDirection::outer;
    SamplerConfig sampler = SamplerConfig::online_default();
    bool mask_only = false;
    VideoFeatureMetric vfid;
};

namespace detail {

inline double psnr_masked(const Tensor& pred, const Tensor& gt, const FoVMask& mask) {
    int T = pred.dim(0), H = pred.dim(2), W = pred.dim(3);
    double mse = 0;
    long count = 0;
    for (int t = 0; t < T; ++t)
        for (int c = 0; c < 3; ++c)
            for (long i = 0; i < long(H) * W; ++i)
                if (mask.grid[size_t(i)]) {
                    size_t off = ((size_t(t) * 3 + c) * H * W) + size_t(i);
                    double d = double(pred.cdata()[off]) - gt.cdata()[off];
                    mse += d * d;
                    ++count;
                }
    if (count == 0 || mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(double(count) / mse));
}

} // namespace detail

// Evaluates the model over the given synthetic videos for each expansion
// rate. Videos are processed in order and reduced deterministically.
inline MetricReport run_benchmark(const FlowLensGenerator& gen,
                                  const std::vector<SynthResult>& dataset,
                                  const BenchmarkOptions& opt) {
    FL_CHECK(!dataset.empty(), InvalidInput, "invalid-input: empty benchmark dataset");
    FL_CHECK(!opt.rates.empty(), InvalidInput, "invalid-input: no rates");

    MetricReport report;
    report.direction = opt.direction == MaskDirection::outer ? "outer" : "inner";
    CameraKind kind = opt.direction == MaskDirection::outer ? CameraKind::pinhole_ftan
                                                            : CameraKind::spherical_ftheta;

    double total_seconds = 0;
    long total_frames = 0;
    for (float rate : opt.rates) {
        MetricRow row;
        row.rate = rate;
        double psnr_acc = 0, ssim_acc = 0, warp_acc = 0, vfid_acc = 0;
        for (const SynthResult& item : dataset) {
            int H = item.video.height(), W = item.video.width();
            FoVMask mask = generate_fov_mask(default_camera(kind, H, W), rate, opt.direction,
                                             H, W);
            StreamResult res = run_stream(item.video, mask, gen, opt.sampler);
            total_seconds += res.seconds_per_frame * item.video.length();
            total_frames += item.video.length();

            if (opt.mask_only)
                psnr_acc += detail::psnr_masked(res.completed.frames, item.video.frames, mask);
            else
                psnr_acc += psnr(res.completed.frames, item.video.frames);
            ssim_acc += ssim(res.completed.frames, item.video.frames);
            warp_acc +=
                warp_error(res.completed.frames, item.flows_fwd, item.flows_bwd) * 100.0;
            if (opt.vfid) vfid_acc += opt.vfid(res.completed, item.video);
        }
        double n = double(dataset.size());
        row.psnr_db = psnr_acc / n;
        row.ssim_val = ssim_acc / n;
        row.e_warp_x100 = warp_acc / n;
        row.vfid = opt.vfid ? vfid_acc / n : -1;
        report.rows.push_back(row);
    }

    MetricRow& avg = report.average;
    for (const auto& r : report.rows) {
        avg.psnr_db += r.psnr_db;
        avg.ssim_val += r.ssim_val;
        avg.e_warp_x100 += r.e_warp_x100;
        if (opt.vfid) avg.vfid = std::max(0.0, avg.vfid) + r.vfid;
    }
    double n = double(report.rows.size());
    avg.psnr_db /= n;
    avg.ssim_val /= n;
    avg.e_warp_x100 /= n;
    if (opt.vfid) avg.vfid /= n;

    int H = dataset.front().video.height(), W = dataset.front().video.width();
    report.flops = count_flops(gen.config(), H, W).total();
    report.seconds_per_frame = total_seconds / double(std::max(total_frames, 1L));
    return report;
}

} // namespace flowlens
