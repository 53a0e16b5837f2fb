#pragma once

// Video sequences and their on-disk layout: a directory of numbered binary
// PPM frames, a mask.pgm with values {0,255}, and a meta.txt sidecar with
// camera and mask parameters in key=value form.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "flowlens/core/serialize.hpp"
#include "flowlens/mask.hpp"

namespace flowlens {

struct VideoSequence {
    Tensor frames; // (T, 3, H, W) in [0, 1]
    FoVMask mask;
    CameraModel camera;
    std::string id;

    int length() const { return frames.dim(0); }
    int height() const { return frames.dim(2); }
    int width() const { return frames.dim(3); }

    void validate() const {
        FL_CHECK(frames.defined() && frames.ndim() == 4 && frames.dim(1) == 3, DimensionError,
                 "video frames must be (T,3,H,W)");
        FL_CHECK(frames.dim(0) >= 1, DimensionError, "video needs at least one frame");
        if (!mask.grid.empty())
            FL_CHECK(mask.height == height() && mask.width == width(), DimensionError,
                     "mask dimensions do not match frames");
    }
};

// out = frames * (1 - M) + fill * M, every frame, every channel.
inline VideoSequence apply_mask(const VideoSequence& video, float fill) {
    video.validate();
    FL_CHECK(!video.mask.grid.empty(), DimensionError, "video has no mask to apply");
    VideoSequence out = video;
    out.frames = video.frames.clone();
    int T = video.length(), H = video.height(), W = video.width();
    float* p = out.frames.data();
    const uint8_t* m = video.mask.grid.data();
    for (int t = 0; t < T; ++t)
        for (int c = 0; c < 3; ++c) {
            float* plane = p + (size_t(t) * 3 + c) * H * W;
            for (long i = 0; i < long(H) * W; ++i)
                if (m[i]) plane[i] = fill;
        }
    return out;
}

// ---------------------------------------------------------------------------
// 8-bit image IO (binary PPM/PGM)

namespace detail {

inline void write_ppm(const std::string& path, const float* rgb_chw, int H, int W) {
    std::ofstream os(path, std::ios::binary);
    FL_CHECK(os.good(), IoError, "io-error: cannot write " + path);
    os << "P6\n" << W << " " << H << "\n255\n";
    std::vector<unsigned char> row(size_t(W) * 3);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                float v = rgb_chw[(size_t(c) * H + y) * W + x];
                v = std::min(std::max(v, 0.f), 1.f);
                row[size_t(x) * 3 + c] = (unsigned char)(std::lround(v * 255.f));
            }
        os.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
    }
    FL_CHECK(os.good(), IoError, "io-error: write failed " + path);
}

inline void read_ppm(const std::string& path, std::vector<float>& rgb_chw, int& H, int& W) {
    std::ifstream is(path, std::ios::binary);
    FL_CHECK(is.good(), IoError, "io-error: cannot read " + path);
    std::string magic;
    is >> magic;
    FL_CHECK(magic == "P6", IoError, "io-error: not a binary PPM: " + path);
    int maxval;
    is >> W >> H >> maxval;
    FL_CHECK(maxval == 255, IoError, "io-error: only 8-bit PPM supported");
    is.get();
    std::vector<unsigned char> buf(size_t(H) * W * 3);
    is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    FL_CHECK(is.good(), IoError, "io-error: truncated PPM " + path);
    rgb_chw.assign(size_t(3) * H * W, 0.f);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c)
                rgb_chw[(size_t(c) * H + y) * W + x] =
                    float(buf[(size_t(y) * W + x) * 3 + c]) / 255.f;
}

inline void write_pgm_mask(const std::string& path, const FoVMask& mask) {
    std::ofstream os(path, std::ios::binary);
    FL_CHECK(os.good(), IoError, "io-error: cannot write " + path);
    os << "P5\n" << mask.width << " " << mask.height << "\n255\n";
    std::vector<unsigned char> buf(mask.grid.size());
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = mask.grid[i] ? 255 : 0;
    os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
}

inline FoVMask read_pgm_mask(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    FL_CHECK(is.good(), IoError, "io-error: cannot read " + path);
    std::string magic;
    is >> magic;
    FL_CHECK(magic == "P5", IoError, "io-error: not a binary PGM: " + path);
    FoVMask mask;
    int maxval;
    is >> mask.width >> mask.height >> maxval;
    is.get();
    std::vector<unsigned char> buf(size_t(mask.width) * mask.height);
    is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    mask.grid.assign(buf.size(), 0);
    for (size_t i = 0; i < buf.size(); ++i) mask.grid[i] = buf[i] >= 128 ? 1 : 0;
    return mask;
}

inline std::string frame_name(int t) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05d.ppm", t);
    return buf;
}

} // namespace detail

inline void save_video(const VideoSequence& video, const std::string& dir) {
    video.validate();
    std::filesystem::create_directories(dir);
    int T = video.length(), H = video.height(), W = video.width();
    for (int t = 0; t < T; ++t)
        detail::write_ppm(dir + "/" + detail::frame_name(t),
                          video.frames.cdata() + size_t(t) * 3 * H * W, H, W);
    if (!video.mask.grid.empty()) detail::write_pgm_mask(dir + "/mask.pgm", video.mask);

    std::ofstream meta(dir + "/meta.txt");
    FL_CHECK(meta.good(), IoError, "io-error: cannot write meta " + dir);
    meta << "id=" << video.id << "\n";
    meta << "frames=" << T << "\n";
    meta << "camera_kind="
         << (video.camera.kind == CameraKind::pinhole_ftan ? "pinhole_ftan" : "spherical_ftheta")
         << "\n";
    meta << "focal=" << video.camera.focal << "\n";
    meta << "center_x=" << video.camera.cx << "\n";
    meta << "center_y=" << video.camera.cy << "\n";
    meta << "theta_max=" << video.camera.theta_max << "\n";
    meta << "mask_rate=" << video.mask.rate << "\n";
    meta << "mask_direction=" << (video.mask.direction == MaskDirection::outer ? "outer" : "inner")
         << "\n";
}

inline VideoSequence load_video(const std::string& dir) {
    FL_CHECK(std::filesystem::exists(dir + "/meta.txt"), IoError,
             "io-error: missing video metadata in " + dir);
    std::ifstream meta_in(dir + "/meta.txt");
    std::string meta_text((std::istreambuf_iterator<char>(meta_in)),
                          std::istreambuf_iterator<char>());
    auto kv = parse_kv(meta_text);

    VideoSequence video;
    video.id = kv.count("id") ? kv["id"] : "video";
    int T = std::stoi(kv.at("frames"));
    FL_CHECK(T >= 1, IoError, "io-error: empty video " + dir);

    std::vector<float> chw;
    int H = 0, W = 0;
    detail::read_ppm(dir + "/" + detail::frame_name(0), chw, H, W);
    video.frames = Tensor(Shape{T, 3, H, W});
    std::copy(chw.begin(), chw.end(), video.frames.data());
    for (int t = 1; t < T; ++t) {
        int h2, w2;
        detail::read_ppm(dir + "/" + detail::frame_name(t), chw, h2, w2);
        FL_CHECK(h2 == H && w2 == W, IoError, "io-error: inconsistent frame sizes in " + dir);
        std::copy(chw.begin(), chw.end(), video.frames.data() + size_t(t) * 3 * H * W);
    }

    video.camera.kind = kv.count("camera_kind") && kv["camera_kind"] == "spherical_ftheta"
                            ? CameraKind::spherical_ftheta
                            : CameraKind::pinhole_ftan;
    if (kv.count("focal")) video.camera.focal = std::stof(kv["focal"]);
    if (kv.count("center_x")) video.camera.cx = std::stof(kv["center_x"]);
    if (kv.count("center_y")) video.camera.cy = std::stof(kv["center_y"]);
    if (kv.count("theta_max")) video.camera.theta_max = std::stof(kv["theta_max"]);

    if (std::filesystem::exists(dir + "/mask.pgm")) {
        video.mask = detail::read_pgm_mask(dir + "/mask.pgm");
        if (kv.count("mask_rate")) video.mask.rate = std::stof(kv["mask_rate"]);
        if (kv.count("mask_direction"))
            video.mask.direction =
                kv["mask_direction"] == "inner" ? MaskDirection::inner : MaskDirection::outer;
    }
    video.validate();
    return video;
}

} // namespace flowlens
