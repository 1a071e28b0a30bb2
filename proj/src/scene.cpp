// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#include "npva/scene.hpp"

#include "npva/error.hpp"
#include "npva/json_util.hpp"
#include "npva/parallel.hpp"
#include "npva/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace npva {

namespace {

// Portable draws: std:: distributions differ between standard libraries.
double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Vec3 unit_vector(std::mt19937_64& rng) {
    const double z = 2.0 * unit_draw(rng) - 1.0;
    const double phi = 2.0 * std::numbers::pi * unit_draw(rng);
    const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
    return {s * std::cos(phi), s * std::sin(phi), z};
}

Vec3 vec_from_json(const nlohmann::json& j, const Vec3& fallback) {
    if (j.is_null()) {
        return fallback;
    }
    if (!j.is_array() || j.size() != 3) {
        throw ConfigError("expected a 3-element array");
    }
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

nlohmann::json vec_to_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

double shell_profile(double s, double peak, double falloff) {
    if (s <= 0.0) {
        return peak;
    }
    const double r = s / falloff;
    return peak * std::exp(-r * r);
}

} // namespace

void SyntheticScene::validate() const {
    if (!(radius > 0.0)) {
        throw ConfigError("scene: radius must be positive");
    }
    if (!(displacement_amplitude >= 0.0) || !(displacement_amplitude < radius / 4.0)) {
        throw ConfigError("scene: displacement amplitude must lie in [0, radius / 4)");
    }
    if (!(sigma_peak >= 0.0) || !(falloff > 0.0) || !(displacement_frequency >= 0.0)) {
        throw ConfigError("scene: need sigma_peak >= 0, falloff > 0, frequency >= 0");
    }
    if (spot.enabled && (!(spot.direction.norm() > 0.0) || !(spot.angle_deg > 0.0))) {
        throw ConfigError("scene: spot needs a direction and a positive angle");
    }
    if (slab.enabled && (!(slab.half_width > 0.0) || !(slab.height > 0.0) ||
                         !(slab.thickness > 0.0) || !(slab.offset > 0.0))) {
        throw ConfigError("scene: slab dimensions must be positive");
    }
}

nlohmann::json SyntheticScene::to_json() const {
    return {{"schema_version", kSchemaVersion},
            {"center", vec_to_json(center)},
            {"radius", radius},
            {"displacement",
             {{"amplitude", displacement_amplitude},
              {"frequency", displacement_frequency},
              {"seed", displacement_seed}}},
            {"shell", {{"sigma_peak", sigma_peak}, {"falloff", falloff}}},
            {"albedo", {{"seed", albedo_seed}}},
            {"spot",
             {{"enabled", spot.enabled},
              {"direction", vec_to_json(spot.direction)},
              {"angle_deg", spot.angle_deg},
              {"stripe_frequency", spot.stripe_frequency}}},
            {"slab",
             {{"enabled", slab.enabled},
              {"offset", slab.offset},
              {"half_width", slab.half_width},
              {"height", slab.height},
              {"thickness", slab.thickness}}}};
}

SyntheticScene SyntheticScene::from_json(const nlohmann::json& j) {
    check_keys(j,
               {"schema_version", "center", "radius", "displacement", "shell", "albedo", "spot",
                "slab"},
               "scene");
    if (j.value("schema_version", 0) != kSchemaVersion) {
        throw ConfigError("scene: unsupported schema_version");
    }
    SyntheticScene s;
    s.center = vec_from_json(j.value("center", nlohmann::json()), s.center);
    s.radius = j.value("radius", s.radius);
    if (j.contains("displacement")) {
        const auto& d = j["displacement"];
        check_keys(d, {"amplitude", "frequency", "seed"}, "scene.displacement");
        s.displacement_amplitude = d.value("amplitude", s.displacement_amplitude);
        s.displacement_frequency = d.value("frequency", s.displacement_frequency);
        s.displacement_seed = d.value("seed", s.displacement_seed);
    }
    if (j.contains("shell")) {
        check_keys(j["shell"], {"sigma_peak", "falloff"}, "scene.shell");
        s.sigma_peak = j["shell"].value("sigma_peak", s.sigma_peak);
        s.falloff = j["shell"].value("falloff", s.falloff);
    }
    if (j.contains("albedo")) {
        check_keys(j["albedo"], {"seed"}, "scene.albedo");
        s.albedo_seed = j["albedo"].value("seed", s.albedo_seed);
    }
    if (j.contains("spot")) {
        const auto& p = j["spot"];
        check_keys(p, {"enabled", "direction", "angle_deg", "stripe_frequency"}, "scene.spot");
        s.spot.enabled = p.value("enabled", s.spot.enabled);
        s.spot.direction = vec_from_json(p.value("direction", nlohmann::json()), s.spot.direction);
        s.spot.angle_deg = p.value("angle_deg", s.spot.angle_deg);
        s.spot.stripe_frequency = p.value("stripe_frequency", s.spot.stripe_frequency);
    }
    if (j.contains("slab")) {
        const auto& p = j["slab"];
        check_keys(p, {"enabled", "offset", "half_width", "height", "thickness"}, "scene.slab");
        s.slab.enabled = p.value("enabled", s.slab.enabled);
        s.slab.offset = p.value("offset", s.slab.offset);
        s.slab.half_width = p.value("half_width", s.slab.half_width);
        s.slab.height = p.value("height", s.slab.height);
        s.slab.thickness = p.value("thickness", s.slab.thickness);
    }
    s.validate();
    return s;
}

double SyntheticScene::bounding_radius() const {
    double r = radius + displacement_amplitude + 6.0 * falloff;
    if (slab.enabled) {
        const double depth = slab.offset + slab.thickness + 6.0 * falloff;
        r = std::max(r, std::sqrt(slab.half_width * slab.half_width +
                                  slab.height * slab.height + depth * depth) +
                            6.0 * falloff);
    }
    return r;
}

SceneField::SceneField(const SyntheticScene& scene) : scene_(scene) {
    scene_.validate();
    std::mt19937_64 rng(scene_.displacement_seed);
    axis_ = unit_vector(rng);
    phase_ = 2.0 * std::numbers::pi * unit_draw(rng);
    std::mt19937_64 arng(scene_.albedo_seed);
    for (int c = 0; c < 3; ++c) {
        wave1_[c] = unit_vector(arng);
        wave2_[c] = unit_vector(arng);
        phase1_[c] = 2.0 * std::numbers::pi * unit_draw(arng);
        phase2_[c] = 2.0 * std::numbers::pi * unit_draw(arng);
    }
    spot_dir_ = scene_.spot.direction.normalized();
    spot_tangent_ = spot_dir_.cross(Vec3::UnitY());
    if (spot_tangent_.norm() < 1e-6) {
        spot_tangent_ = spot_dir_.cross(Vec3::UnitX());
    }
    spot_tangent_.normalize();
    spot_cos_ = std::cos(scene_.spot.angle_deg * std::numbers::pi / 180.0);
}

Vec3 SceneField::direction_of(const Vec3& x) const {
    const Vec3 d = x - scene_.center;
    const double len = d.norm();
    return len > 0.0 ? Vec3(d / len) : Vec3::UnitZ();
}

double SceneField::displacement(const Vec3& n) const {
    return scene_.displacement_amplitude *
           std::cos(scene_.displacement_frequency * n.dot(axis_) + phase_);
}

Vec3 SceneField::albedo(const Vec3& n) const {
    Vec3 a;
    for (int c = 0; c < 3; ++c) {
        a(c) = 0.5 + 0.28 * std::sin(3.0 * n.dot(wave1_[c]) + phase1_[c]) +
               0.14 * std::sin(7.0 * n.dot(wave2_[c]) + phase2_[c]);
    }
    if (scene_.spot.enabled && n.dot(spot_dir_) > spot_cos_) {
        const double stripe =
            0.5 + 0.5 * std::sin(scene_.spot.stripe_frequency * n.dot(spot_tangent_));
        a = 0.05 * a + Vec3(0.6, 0.15, 0.1) * stripe;
    }
    return a;
}

Radiance SceneField::radiance(const Vec3& x, const Vec3& dir) const {
    const SyntheticScene& sc = scene_;
    const Vec3 n = direction_of(x);
    const double s = (x - sc.center).norm() - (sc.radius + displacement(n));
    const double sigma_sphere = shell_profile(s, sc.sigma_peak, sc.falloff);
    const Vec3 color_sphere = albedo(n) * (0.7 + 0.3 * std::abs(n.dot(dir)));

    double sigma_slab = 0.0;
    Vec3 color_slab = Vec3::Zero();
    if (sc.slab.enabled) {
        const Vec3 p = x - sc.center;
        if (std::abs(p.x()) <= sc.slab.half_width && p.y() <= 0.0 && p.y() >= -sc.slab.height) {
            const double front = p.z() + sc.slab.offset; // > 0 in front of the plate
            const double dist = front >= 0.0                ? front
                                : front >= -sc.slab.thickness ? 0.0
                                                              : -(front + sc.slab.thickness);
            sigma_slab = shell_profile(dist, sc.sigma_peak, sc.falloff);
            const Vec3 base(0.35 + 0.15 * std::sin(p.x() / 9.0), 0.45 + 0.1 * std::cos(p.y() / 7.0),
                            0.55);
            color_slab = base * (0.7 + 0.3 * std::abs(dir.z()));
        }
    }
    Radiance r;
    r.sigma = sigma_sphere + sigma_slab;
    if (r.sigma > 0.0) {
        r.color = (sigma_sphere * color_sphere + sigma_slab * color_slab) / r.sigma;
    }
    return r;
}

Radiance oracle_radiance(const SyntheticScene& scene, const Vec3& x, const Vec3& dir) {
    return SceneField(scene).radiance(x, dir);
}

OracleRender oracle_render(const SyntheticScene& scene, const Camera& cam, int n_dense,
                           int threads) {
    if (n_dense < 256) {
        throw ConfigError("oracle_render: n_dense must be at least 256");
    }
    const SceneField field(scene);
    const int w = cam.width();
    const int h = cam.height();
    OracleRender out{Image(w, h), DepthMap(w, h)};
    const double bound = scene.bounding_radius();
    const int workers = std::max(1, std::min(threads > 0 ? threads : worker_count(), h));

    parallel_chunks(static_cast<std::size_t>(h), workers, [&](int, std::size_t y0, std::size_t y1) {
        StreamRng unused(0, 0);
        std::vector<Radiance> rad;
        for (int y = static_cast<int>(y0); y < static_cast<int>(y1); ++y) {
            for (int x = 0; x < w; ++x) {
                const Ray ray = cam.ray(x, y);
                const Vec3 oc = ray.origin - scene.center;
                const double b = oc.dot(ray.dir);
                const double c = oc.squaredNorm() - bound * bound;
                const double disc = b * b - c;
                if (disc <= 0.0) {
                    continue;
                }
                const double root = std::sqrt(disc);
                const double near = std::max(-b - root, 1e-6);
                const double far = -b + root;
                if (!(near < far)) {
                    continue;
                }
                const SampleSet samples = sample_uniform(ray, near, far, n_dense, unused, false);
                rad.resize(samples.size());
                for (std::size_t i = 0; i < samples.size(); ++i) {
                    rad[i] = field.radiance(samples.positions[i], ray.dir);
                }
                const PixelResult px = integrate(samples, rad);
                out.image.set(x, y, px.color);
                if (px.alpha > 0.5) {
                    const std::size_t idx = out.depth.index(x, y);
                    out.depth.depth[idx] = px.expected_depth * (cam.rotation() * ray.dir).z();
                    out.depth.hit[idx] = 1;
                }
            }
        }
    });
    return out;
}

int sphere_rows(const SyntheticScene& scene, int size) {
    return scene.slab.enabled ? (3 * size) / 4 : size;
}

Vec3 sphere_direction(int u, int v, int size, int rows) {
    const double phi = 2.0 * std::numbers::pi * u / (size - 1);
    const double theta = std::numbers::pi * v / (rows - 1);
    return {-std::sin(theta) * std::sin(phi), std::cos(theta), -std::sin(theta) * std::cos(phi)};
}

UvPositionMap surface_position_map(const SyntheticScene& scene, int size, bool displaced) {
    const SceneField field(scene);
    const int rows = sphere_rows(scene, size);
    if (size < 4 || rows < 2) {
        throw ConfigError("surface_position_map: size too small");
    }
    UvPositionMap map(size);
    for (int v = 0; v < rows; ++v) {
        for (int u = 0; u < size; ++u) {
            const Vec3 n = sphere_direction(u, v, size, rows);
            const double r = scene.radius + (displaced ? field.displacement(n) : 0.0);
            map.positions[map.index(u, v)] = scene.center + r * n;
        }
    }
    if (scene.slab.enabled) {
        const int first = rows + 1;
        const int last = size - 1;
        for (int u = 0; u < size; ++u) {
            map.valid[map.index(u, rows)] = 0;
        }
        for (int v = first; v <= last; ++v) {
            const double fy = last > first ? static_cast<double>(v - first) / (last - first) : 0.0;
            for (int u = 0; u < size; ++u) {
                const double fx = static_cast<double>(u) / (size - 1);
                map.positions[map.index(u, v)] =
                    scene.center + Vec3(-scene.slab.half_width + 2.0 * scene.slab.half_width * fx,
                                        -scene.slab.height * fy, -scene.slab.offset);
            }
        }
    }
    return map;
}

} // namespace npva
