#pragma once

#include <cstdint>
#include <vector>

#include "flowlens/camera.hpp"
#include "flowlens/core/tensor.hpp"

namespace flowlens {

enum class MaskDirection { outer, inner };

// Binary FoV mask: 0 marks the original image plane, 1 the region to fill.
// Outer masks cover the angular band ((1-rate) * theta_max, theta_max];
// inner masks cover [0, rate * theta_max).
struct FoVMask {
    std::vector<uint8_t> grid; // H*W, values {0,1}
    int height = 0, width = 0;
    MaskDirection direction = MaskDirection::outer;
    float rate = 0.f;

    uint8_t at(int y, int x) const { return grid[size_t(y) * width + x]; }

    long ones() const {
        long n = 0;
        for (uint8_t v : grid) n += v;
        return n;
    }

    // (1, H, W) float tensor view used as the network's mask channel.
    Tensor to_tensor() const {
        Tensor t(Shape{1, height, width});
        float* p = t.data();
        for (size_t i = 0; i < grid.size(); ++i) p[i] = float(grid[i]);
        return t;
    }

    bool same_geometry(const FoVMask& o) const {
        return height == o.height && width == o.width && grid == o.grid;
    }
};

inline FoVMask generate_fov_mask(const CameraModel& camera, float rate, MaskDirection direction,
                                 int height, int width) {
    FL_CHECK(rate >= 0.f && rate < 1.f, InvalidInput, "invalid-rate: rate must be in [0,1)");
    FL_CHECK(height > 0 && width > 0, InvalidInput, "invalid-rate: size must be positive");
    camera.validate();

    FoVMask mask;
    mask.height = height;
    mask.width = width;
    mask.direction = direction;
    mask.rate = rate;
    mask.grid.assign(size_t(height) * width, 0);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            float theta = camera.field_angle(float(x), float(y));
            bool fill;
            if (direction == MaskDirection::outer)
                fill = theta > (1.f - rate) * camera.theta_max && theta <= camera.theta_max;
            else
                fill = theta < rate * camera.theta_max;
            mask.grid[size_t(y) * width + x] = fill ? 1 : 0;
        }
    return mask;
}

} // namespace flowlens
