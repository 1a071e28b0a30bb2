// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "npva/blob.hpp"
#include "npva/camera.hpp"
#include "npva/image.hpp"
#include "npva/types.hpp"

#include <array>
#include <span>
#include <vector>

namespace npva {

/// Square UV grid of surface positions (mm). Texel (u, v) lives at v * size + u.
struct UvPositionMap {
    int size = 0;
    std::vector<Vec3> positions;
    std::vector<std::uint8_t> valid;

    UvPositionMap() = default;
    explicit UvPositionMap(int n)
        : size(n), positions(static_cast<std::size_t>(n) * n, Vec3::Zero()),
          valid(static_cast<std::size_t>(n) * n, 1) {}

    std::size_t texel_count() const { return positions.size(); }
    std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * size + u; }
    bool is_valid(int u, int v) const { return valid[index(u, v)] != 0; }
    std::size_t valid_count() const;

    /// Throws ConfigError when an invariant is broken.
    void validate() const;

    /// Four channels: xyz plus the mask as 0/1.
    Blob to_blob() const;
    static UvPositionMap from_blob(const Blob& blob);
};

struct UvDisplacementMap {
    int size = 0;
    std::vector<Vec3> displacements;

    UvDisplacementMap() = default;
    explicit UvDisplacementMap(int n)
        : size(n), displacements(static_cast<std::size_t>(n) * n, Vec3::Zero()) {}

    void validate() const;
    Blob to_blob() const;
    static UvDisplacementMap from_blob(const Blob& blob);
};

struct UvFeatureMap {
    int size = 0;
    int channels = 0;
    std::vector<double> values;

    UvFeatureMap() = default;
    UvFeatureMap(int n, int c)
        : size(n), channels(c), values(static_cast<std::size_t>(n) * n * c, 0.0) {}

    std::span<const double> texel(std::size_t i) const {
        return {values.data() + i * channels, static_cast<std::size_t>(channels)};
    }
    std::span<double> texel(std::size_t i) {
        return {values.data() + i * channels, static_cast<std::size_t>(channels)};
    }

    void validate() const;
    Blob to_blob() const;
    static UvFeatureMap from_blob(const Blob& blob);
};

struct UvCoord {
    int u = 0;
    int v = 0;
    friend bool operator==(const UvCoord&, const UvCoord&) = default;
};

/// Neural points: positions with attached features and the texel each came from.
struct NeuralPointCloud {
    int channels = 0;
    int uv_size = 0;
    std::vector<Vec3> points;
    std::vector<double> features; // points.size() x channels
    std::vector<UvCoord> uv_origin;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    std::span<const double> feature(std::size_t i) const {
        return {features.data() + i * channels, static_cast<std::size_t>(channels)};
    }
    std::size_t texel_index(std::size_t i) const {
        return static_cast<std::size_t>(uv_origin[i].v) * uv_size + uv_origin[i].u;
    }

    void validate() const;
};

/// Sparse bilinear operator from a coarse position map to a finer one
/// (align-corners: corner texels map to corner texels). Invalid source texels
/// are dropped and the remaining weights renormalised; a target texel is valid
/// when any contributing source texel is.
class Upsampler {
  public:
    Upsampler(const UvPositionMap& source, int target_size);

    int source_size() const { return source_size_; }
    int target_size() const { return target_size_; }

    UvPositionMap apply(const UvPositionMap& source) const;
    /// Adjoint: accumulates target-texel gradients onto source texels.
    std::vector<Vec3> apply_transpose(std::span<const Vec3> target_grad) const;

  private:
    struct Tap {
        std::array<std::uint32_t, 4> src{};
        std::array<double, 4> weight{};
        int count = 0;
    };

    int source_size_ = 0;
    int target_size_ = 0;
    std::vector<Tap> taps_;
};

UvPositionMap upsample_position_map(const UvPositionMap& pos, int target_size);

/// For every valid texel: point = position + displacement, feature copied.
NeuralPointCloud compose_points(const UvPositionMap& positions, const UvDisplacementMap& disp,
                                const UvFeatureMap& features);

/// The fixed connectivity: two triangles per UV quad split along (u,v)-(u+1,v+1),
/// emitted only when all three corners are valid. Entries are texel indices.
std::vector<std::array<std::uint32_t, 3>> uv_triangles(const UvPositionMap& pos);

/// Depth rasterization that also records, per pixel, which texels produced the
/// depth.
struct Rasterization {
    DepthMap depth;
    std::vector<std::array<std::uint32_t, 3>> vertex;
    /// Derivative of the pixel's depth with respect to each covering
    /// vertex's world position.
    std::vector<std::array<Vec3, 3>> dz_dvertex;
};

Rasterization rasterize(const UvPositionMap& pos, const Camera& cam);
DepthMap rasterize_depth(const UvPositionMap& pos, const Camera& cam);

/// Per-texel unit normals from the average of incident triangle normals.
/// Texels without a valid incident triangle get a zero vector.
std::vector<Vec3> texel_normals(const UvPositionMap& pos);

/// Thickness map: one cell per `region` x `region` block of the point UV grid,
/// holding the population variance of the signed normal offset of its points.
struct ThicknessMap {
    int size = 0;
    std::vector<double> variance;
    std::vector<int> counts;
};

ThicknessMap shell_thickness(const NeuralPointCloud& cloud, const UvPositionMap& surface,
                             int region = 4);

/// Mean over valid horizontal and vertical neighbour pairs of the squared
/// position difference.
double tv_loss(const UvPositionMap& pos);
/// Same value; adds d(loss)/d(position) * scale into `grad`.
double tv_loss(const UvPositionMap& pos, std::span<Vec3> grad, double scale);

} // namespace npva
