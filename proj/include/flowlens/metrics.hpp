#pragma once

// Image/video quality metrics: PSNR (100 dB cap on identical inputs), SSIM
// with the standard 11x11 Gaussian window, and the flow-based temporal
// warping error with forward-backward occlusion masking. Pure functions on
// raw tensor data; nothing here touches the autograd graph.

#include <vector>

#include "flowlens/core/tensor.hpp"
#include "flowlens/flow.hpp"

namespace flowlens {

inline constexpr double kPsnrCap = 100.0;

inline double psnr(const Tensor& pred, const Tensor& gt) {
    FL_CHECK(pred.shape() == gt.shape(), DimensionError, "psnr shape mismatch");
    double mse = 0;
    const float* p = pred.cdata();
    const float* g = gt.cdata();
    for (long i = 0; i < pred.numel(); ++i) {
        double d = double(p[i]) - g[i];
        mse += d * d;
    }
    mse /= double(pred.numel());
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace detail {

inline std::vector<double> gaussian_window_11() {
    std::vector<double> w(11);
    double sigma = 1.5, sum = 0;
    for (int i = 0; i < 11; ++i) {
        double d = i - 5;
        w[size_t(i)] = std::exp(-d * d / (2 * sigma * sigma));
        sum += w[size_t(i)];
    }
    for (auto& v : w) v /= sum;
    return w;
}

// grayscale plane from one (3, H, W) frame
inline std::vector<double> to_gray(const float* chw, int H, int W) {
    std::vector<double> g(size_t(H) * W);
    for (long i = 0; i < long(H) * W; ++i)
        g[size_t(i)] = 0.299 * chw[i] + 0.587 * chw[size_t(H) * W + i] +
                       0.114 * chw[2 * size_t(H) * W + i];
    return g;
}

inline double ssim_gray(const std::vector<double>& x, const std::vector<double>& y, int H,
                        int W) {
    static const std::vector<double> win = gaussian_window_11();
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03; // L = 1
    double total = 0;
    long count = 0;
    for (int cy = 5; cy < H - 5; ++cy)
        for (int cx = 5; cx < W - 5; ++cx) {
            double mx = 0, my = 0;
            for (int i = -5; i <= 5; ++i)
                for (int j = -5; j <= 5; ++j) {
                    double w = win[size_t(i + 5)] * win[size_t(j + 5)];
                    mx += w * x[size_t(cy + i) * W + (cx + j)];
                    my += w * y[size_t(cy + i) * W + (cx + j)];
                }
            double sx = 0, sy = 0, sxy = 0;
            for (int i = -5; i <= 5; ++i)
                for (int j = -5; j <= 5; ++j) {
                    double w = win[size_t(i + 5)] * win[size_t(j + 5)];
                    double dx = x[size_t(cy + i) * W + (cx + j)] - mx;
                    double dy = y[size_t(cy + i) * W + (cx + j)] - my;
                    sx += w * dx * dx;
                    sy += w * dy * dy;
                    sxy += w * dx * dy;
                }
            double num = (2 * mx * my + c1) * (2 * sxy + c2);
            double den = (mx * mx + my * my + c1) * (sx + sy + c2);
            total += num / den;
            ++count;
        }
    return total / double(count);
}

} // namespace detail

// Mean local SSIM over grayscale-converted frames. Accepts (3, H, W) single
// frames or (T, 3, H, W) stacks.
inline double ssim(const Tensor& pred, const Tensor& gt) {
    FL_CHECK(pred.shape() == gt.shape(), DimensionError, "ssim shape mismatch");
    int T, H, W;
    if (pred.ndim() == 3) {
        T = 1;
        H = pred.dim(1);
        W = pred.dim(2);
    } else {
        FL_CHECK(pred.ndim() == 4, DimensionError, "ssim expects (3,H,W) or (T,3,H,W)");
        T = pred.dim(0);
        H = pred.dim(2);
        W = pred.dim(3);
    }
    FL_CHECK(H >= 11 && W >= 11, DimensionError, "ssim: frames smaller than the 11x11 window");
    double total = 0;
    for (int t = 0; t < T; ++t) {
        const float* p = pred.cdata() + size_t(t) * 3 * H * W;
        const float* g = gt.cdata() + size_t(t) * 3 * H * W;
        total += detail::ssim_gray(detail::to_gray(p, H, W), detail::to_gray(g, H, W), H, W);
    }
    return total / double(T);
}

// Temporal warping error: mean squared difference between frame t and frame
// t+1 backward-warped by the ground-truth flow, over non-occluded pixels
// (forward-backward consistency threshold 1 px). Raw MSE; Table-style reports
// scale it by 100 (units of 1e-2).
inline double warp_error(const Tensor& frames, const std::vector<FlowField>& flows_fwd,
                         const std::vector<FlowField>& flows_bwd,
                         float occlusion_threshold = 1.f) {
    FL_CHECK(frames.ndim() == 4 && frames.dim(1) == 3, DimensionError,
             "warp_error expects (T, 3, H, W)");
    int T = frames.dim(0), H = frames.dim(2), W = frames.dim(3);
    FL_CHECK(T >= 2, InvalidInput, "warp_error needs at least two frames");
    FL_CHECK(int(flows_fwd.size()) == T - 1 && int(flows_bwd.size()) == T - 1, InvalidInput,
             "invalid-input: need T-1 flow fields in both directions");

    auto bilinear = [&](const float* plane, float sy, float sx) {
        float cy = std::min(std::max(sy, 0.f), float(H - 1));
        float cx = std::min(std::max(sx, 0.f), float(W - 1));
        int y0 = int(cy), x0 = int(cx);
        int y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
        float wy = cy - y0, wx = cx - x0;
        float top = plane[y0 * W + x0] + (plane[y0 * W + x1] - plane[y0 * W + x0]) * wx;
        float bot = plane[y1 * W + x0] + (plane[y1 * W + x1] - plane[y1 * W + x0]) * wx;
        return top + (bot - top) * wy;
    };

    double total = 0;
    long count = 0;
    for (int t = 0; t + 1 < T; ++t) {
        const FlowField& fwd = flows_fwd[size_t(t)];
        const FlowField& bwd = flows_bwd[size_t(t)];
        FL_CHECK(fwd.height() == H && fwd.width() == W, DimensionError,
                 "warp_error: flow resolution mismatch");
        const float* cur = frames.cdata() + size_t(t) * 3 * H * W;
        const float* nxt = frames.cdata() + (size_t(t) + 1) * 3 * H * W;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                float dx = fwd.dx(y, x), dy = fwd.dy(y, x);
                float sx = float(x) + dx, sy = float(y) + dy;
                if (sx < 0.f || sx > float(W - 1) || sy < 0.f || sy > float(H - 1)) continue;
                // forward-backward consistency
                float bx = bilinear(bwd.vectors.cdata(), sy, sx);
                float by = bilinear(bwd.vectors.cdata() + size_t(H) * W, sy, sx);
                float ex = dx + bx, ey = dy + by;
                if (ex * ex + ey * ey > occlusion_threshold * occlusion_threshold) continue;
                for (int c = 0; c < 3; ++c) {
                    double warped = bilinear(nxt + size_t(c) * H * W, sy, sx);
                    double d = warped - cur[size_t(c) * H * W + size_t(y) * W + x];
                    total += d * d;
                    ++count;
                }
            }
    }
    FL_CHECK(count > 0, InvalidInput, "warp_error: everything occluded");
    return total / double(count);
}

} // namespace flowlens
