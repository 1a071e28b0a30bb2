// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "npva/camera.hpp"
#include "npva/geometry.hpp"
#include "npva/image.hpp"
#include "npva/types.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace npva {

/// Analytic stand-in for a captured head: a sphere with a radial cosine
/// displacement, a solid interior with a Gaussian falloff outside the
/// displaced surface, procedural albedo, and two optional extras (a striped
/// dark cap and a plate behind the lower half).
struct SyntheticScene {
    static constexpr int kSchemaVersion = 1;

    Vec3 center = Vec3::Zero();
    double radius = 50.0;

    double displacement_amplitude = 5.0;
    double displacement_frequency = 5.0;
    std::uint64_t displacement_seed = 7;

    double sigma_peak = 1.0; // 1/mm
    double falloff = 1.5;    // mm

    std::uint64_t albedo_seed = 3;

    struct Spot {
        bool enabled = false;
        Vec3 direction = Vec3::UnitZ();
        double angle_deg = 25.0;
        double stripe_frequency = 60.0;
    } spot;

    struct Slab {
        bool enabled = false;
        double offset = 60.0; // behind the centre along -z
        double half_width = 70.0;
        double height = 60.0; // extends this far below the centre
        double thickness = 4.0;
    } slab;

    void validate() const;
    nlohmann::json to_json() const;
    static SyntheticScene from_json(const nlohmann::json& j);

    /// Radius of a sphere around the centre holding all non-negligible density.
    double bounding_radius() const;
};

/// A scene with its seeded pattern parameters drawn once, for repeated
/// evaluation.
class SceneField {
  public:
    explicit SceneField(const SyntheticScene& scene);

    const SyntheticScene& scene() const { return scene_; }
    /// Unit direction from the centre; the centre itself maps to +z.
    Vec3 direction_of(const Vec3& x) const;
    /// Radial offset of the true surface along unit direction n.
    double displacement(const Vec3& n) const;
    Vec3 albedo(const Vec3& n) const;
    Radiance radiance(const Vec3& x, const Vec3& dir) const;

  private:
    SyntheticScene scene_;
    Vec3 axis_;
    double phase_ = 0.0;
    std::array<Vec3, 3> wave1_;
    std::array<Vec3, 3> wave2_;
    std::array<double, 3> phase1_{};
    std::array<double, 3> phase2_{};
    Vec3 spot_dir_;
    Vec3 spot_tangent_;
    double spot_cos_ = 1.0;
};

Radiance oracle_radiance(const SyntheticScene& scene, const Vec3& x, const Vec3& dir);

struct OracleRender {
    Image image;
    DepthMap depth;
};

/// Midpoint quadrature with n_dense samples over the ray's chord through the
/// bounding sphere.
OracleRender oracle_render(const SyntheticScene& scene, const Camera& cam, int n_dense,
                           int threads = 0);

/// Texel layout of the base surface. Rows [0, sphere_rows) hold a lat-long
/// sphere (seam at the back); with the plate enabled one row is left invalid
/// and the remaining rows cover the plate.
int sphere_rows(const SyntheticScene& scene, int size);
Vec3 sphere_direction(int u, int v, int size, int rows);

/// Base surface sampled on a size x size grid. With `displaced` the true
/// (displaced) surface is sampled instead of the coarse sphere.
UvPositionMap surface_position_map(const SyntheticScene& scene, int size, bool displaced);

} // namespace npva
