#pragma once

#include <cmath>

#include "flowlens/core/common.hpp"

namespace flowlens {

// Two projection models: f-tan(theta) pinhole and f-theta (equidistant)
// spherical. Field angle at a pixel is recovered by inverting the projection:
// pinhole theta = atan(r / f), spherical theta = r / f.
enum class CameraKind { pinhole_ftan, spherical_ftheta };

struct CameraModel {
    CameraKind kind = CameraKind::pinhole_ftan;
    float focal = 0.f;     // pixels
    float cx = 0.f;        // principal point, pixels
    float cy = 0.f;
    float theta_max = 0.f; // half-angle of the full-FoV reference image, radians

    void validate() const {
        FL_CHECK(focal > 0.f, InvalidInput, "invalid-camera: focal must be positive");
        FL_CHECK(theta_max > 0.f && theta_max <= float(M_PI), InvalidInput,
                 "invalid-camera: theta_max outside (0, pi]");
        if (kind == CameraKind::pinhole_ftan)
            FL_CHECK(theta_max < float(M_PI) / 2.f, InvalidInput,
                     "invalid-camera: pinhole theta_max must be below pi/2");
    }

    // Field angle of the pixel centered at (x, y) = (col, row).
    float field_angle(float x, float y) const {
        float r = std::hypot(x - cx, y - cy);
        if (kind == CameraKind::pinhole_ftan) return std::atan(r / focal);
        return r / focal;
    }
};

// Camera whose reference FoV circumscribes the image: the farthest corner
// sits exactly at theta_max, so every pixel has a field angle within range.
inline CameraModel default_camera(CameraKind kind, int height, int width,
                                  float theta_max = 0.f) {
    CameraModel cam;
    cam.kind = kind;
    cam.cx = float(width - 1) / 2.f;
    cam.cy = float(height - 1) / 2.f;
    cam.theta_max = theta_max > 0.f ? theta_max
                                    : (kind == CameraKind::pinhole_ftan ? 1.2f : 2.0f);
    float r_corner = std::hypot(cam.cx, cam.cy);
    if (kind == CameraKind::pinhole_ftan)
        cam.focal = r_corner / std::tan(cam.theta_max);
    else
        cam.focal = r_corner / cam.theta_max;
    cam.validate();
    return cam;
}

} // namespace flowlens
