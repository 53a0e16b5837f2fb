#pragma once

// Optical flow fields. Serialized as a 16-byte header (8-byte magic,
// u32 height, u32 width) followed by h*w*2 little-endian f32 values in
// (dx, dy) plane order.

#include <cstdint>
#include <cstring>
#include <fstream>

#include "flowlens/core/image_ops.hpp"

namespace flowlens {

struct FlowField {
    Tensor vectors;              // (2, h, w): plane 0 = dx, plane 1 = dy, in pixels
    float resolution_scale = 1.f; // fraction of the full frame (1/4 for net output)

    int height() const { return vectors.dim(1); }
    int width() const { return vectors.dim(2); }

    float dx(int y, int x) const { return vectors.at({0, y, x}); }
    float dy(int y, int x) const { return vectors.at({1, y, x}); }

    bool finite() const {
        for (float v : vectors.raw())
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline constexpr char kFlowMagic[8] = {'F', 'L', 'E', 'N', 'S', 'F', 'L', 'O'};

inline void save_flow(const FlowField& flow, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    FL_CHECK(os.good(), IoError, "io-error: cannot write " + path);
    os.write(kFlowMagic, 8);
    uint32_t h = uint32_t(flow.height()), w = uint32_t(flow.width());
    os.write(reinterpret_cast<const char*>(&h), 4);
    os.write(reinterpret_cast<const char*>(&w), 4);
    os.write(reinterpret_cast<const char*>(flow.vectors.cdata()),
             std::streamsize(flow.vectors.numel() * 4));
    FL_CHECK(os.good(), IoError, "io-error: write failed " + path);
}

inline FlowField load_flow(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    FL_CHECK(is.good(), IoError, "io-error: cannot read " + path);
    char magic[8];
    is.read(magic, 8);
    FL_CHECK(is.good() && std::memcmp(magic, kFlowMagic, 8) == 0, IoError,
             "io-error: bad flow file " + path);
    uint32_t h = 0, w = 0;
    is.read(reinterpret_cast<char*>(&h), 4);
    is.read(reinterpret_cast<char*>(&w), 4);
    FlowField flow;
    flow.vectors = Tensor(Shape{2, int(h), int(w)});
    is.read(reinterpret_cast<char*>(flow.vectors.data()), std::streamsize(flow.vectors.numel() * 4));
    FL_CHECK(is.good(), IoError, "io-error: truncated flow file " + path);
    return flow;
}

// Average-pool a flow to 1/factor resolution; vector magnitudes shrink by
// the same factor so they stay in output-pixel units.
inline FlowField downsample_flow(const FlowField& flow, int factor) {
    FlowField out;
    Tensor v = reshape(flow.vectors, {1, 2, flow.height(), flow.width()});
    Tensor small = avg_pool2d(v, factor, factor);
    out.vectors = reshape(mul_scalar(small, 1.f / float(factor)),
                          {2, small.dim(2), small.dim(3)});
    out.resolution_scale = flow.resolution_scale / float(factor);
    return out;
}

// Middlebury-style color wheel rendering for inspection; returns (3, h, w).
inline Tensor flow_to_color(const FlowField& flow, float max_mag = 0.f) {
    int H = flow.height(), W = flow.width();
    if (max_mag <= 0.f) {
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                max_mag = std::max(max_mag, std::hypot(flow.dx(y, x), flow.dy(y, x)));
        if (max_mag < 1e-6f) max_mag = 1.f;
    }
    Tensor img(Shape{3, H, W});
    float* p = img.data();
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            float u = flow.dx(y, x) / max_mag, v = flow.dy(y, x) / max_mag;
            float mag = std::min(std::hypot(u, v), 1.f);
            float ang = std::atan2(-v, -u) / float(M_PI); // [-1, 1]
            float h = (ang + 1.f) / 2.f;                  // hue in [0, 1]
            // hsv -> rgb with s = mag, v = 1
            float r, g, b;
            float i = std::floor(h * 6.f);
            float f = h * 6.f - i;
            float q = 1.f - mag * f;
            float t = 1.f - mag * (1.f - f);
            float m = 1.f - mag;
            switch (int(i) % 6) {
                case 0: r = 1; g = t; b = m; break;
                case 1: r = q; g = 1; b = m; break;
                case 2: r = m; g = 1; b = t; break;
                case 3: r = m; g = q; b = 1; break;
                case 4: r = t; g = m; b = 1; break;
                default: r = 1; g = m; b = q; break;
            }
            p[(0 * H + y) * W + x] = r;
            p[(1 * H + y) * W + x] = g;
            p[(2 * H + y) * W + x] = b;
        }
    return img;
}

} // namespace flowlens
