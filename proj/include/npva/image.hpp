// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "npva/types.hpp"

#include <filesystem>
#include <vector>

namespace npva {

/// Linear RGB image, row-major, three doubles per pixel.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> rgb;

    Image() = default;
    Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0.0) {}

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    Vec3 at(int x, int y) const {
        const std::size_t i = 3 * (static_cast<std::size_t>(y) * width + x);
        return {rgb[i], rgb[i + 1], rgb[i + 2]};
    }
    void set(int x, int y, const Vec3& c) {
        const std::size_t i = 3 * (static_cast<std::size_t>(y) * width + x);
        rgb[i] = c.x();
        rgb[i + 1] = c.y();
        rgb[i + 2] = c.z();
    }
};

/// Per-pixel z-depth in camera space (mm). Pixels without a hit carry depth 0.
struct DepthMap {
    int width = 0;
    int height = 0;
    std::vector<double> depth;
    std::vector<std::uint8_t> hit;

    DepthMap() = default;
    DepthMap(int w, int h)
        : width(w), height(h), depth(static_cast<std::size_t>(w) * h, 0.0),
          hit(static_cast<std::size_t>(w) * h, 0) {}

    std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
    bool inside(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
    bool is_hit(int x, int y) const { return hit[index(x, y)] != 0; }
    double at(int x, int y) const { return depth[index(x, y)]; }
};

double mean_squared_error(const Image& a, const Image& b);
/// PSNR in dB for images with unit peak value.
double psnr_from_mse(double mse);

/// Binary PPM (P6), 8 bits per channel, values clamped to [0, 1].
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

/// 16-bit binary PGM (P5, big-endian) plus a JSON sidecar `<path>.json`
/// recording the millimetres per stored unit. Misses are stored as 0.
void write_depth_pgm(const std::filesystem::path& path, const DepthMap& depth,
                     double mm_per_unit = 0.01);
DepthMap read_depth_pgm(const std::filesystem::path& path);

} // namespace npva
