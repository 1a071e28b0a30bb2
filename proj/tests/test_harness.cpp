// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#include "oracles.hpp"
#include "test_support.hpp"

#include "npva/cli.hpp"
#include "npva/dataset.hpp"
#include "npva/error.hpp"
#include "npva/renderer.hpp"
#include "npva/scene.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

using namespace npva;
namespace fs = std::filesystem;

namespace {

// Optical depth of the shell profile along a straight line at impact
// parameter b from the centre of an undisplaced sphere, by Simpson's rule.
double optical_depth(double radius, double peak, double falloff, double b, double half_length) {
    auto sigma = [&](double t) {
        const double s = std::sqrt(b * b + t * t) - radius;
        return s <= 0.0 ? peak : peak * std::exp(-(s / falloff) * (s / falloff));
    };
    const int n = 200000;
    const double h = 2.0 * half_length / n;
    double acc = sigma(-half_length) + sigma(half_length);
    for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * sigma(-half_length + i * h);
    return acc * h / 3.0;
}

SyntheticScene plain_ball(double peak) {
    SyntheticScene s;
    s.displacement_amplitude = 0.0;
    s.sigma_peak = peak;
    return s;
}

double mean_pixel(const Image& im) {
    double s = 0.0;
    for (double v : im.rgb) s += v;
    return s / im.rgb.size();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

int cli(std::vector<std::string> args, std::string* out = nullptr, std::string* err = nullptr) {
    args.insert(args.begin(), "npva");
    std::vector<const char*> argv;
    for (const std::string& a : args) argv.push_back(a.c_str());
    std::ostringstream o, e;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), o, e);
    if (out) *out = o.str();
    if (err) *err = e.str();
    return code;
}

} // namespace

TEST_CASE("oracle radiance: falloff, peak and symmetry") {
    const SyntheticScene s;
    const SceneField f(s);
    const Vec3 d(0, 0, 1);
    for (const Vec3 n : {Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0.6, 0, 0.8), Vec3(-0.48, 0.6, -0.64)}) {
        const double surface = s.radius + f.displacement(n);
        CHECK(oracle_radiance(s, surface * n, d).sigma == doctest::Approx(s.sigma_peak));
        CHECK(oracle_radiance(s, (surface + 5.01 * s.falloff) * n, d).sigma < 1e-6);
        CHECK(oracle_radiance(s, 0.5 * surface * n, d).sigma == s.sigma_peak);
        const Vec3 a = f.albedo(n);
        CHECK((a.minCoeff() >= 0.0 && a.maxCoeff() <= 1.0));
        CHECK(std::abs(f.displacement(n)) <= s.displacement_amplitude);
    }
    // Rotational symmetry without displacement.
    const SyntheticScene ball = plain_ball(1.0);
    const double r = ball.radius + 0.7;
    const double s0 = oracle_radiance(ball, r * Vec3(1, 0, 0), d).sigma;
    for (const Vec3 n : {Vec3(0, 1, 0), Vec3(0, 0, -1), Vec3(0.36, 0.48, 0.8)})
        CHECK(oracle_radiance(ball, r * n, d).sigma == doctest::Approx(s0).epsilon(1e-14));
    // Deterministic and pure.
    const Radiance a = oracle_radiance(s, Vec3(3, 40, 20), d);
    const Radiance b = oracle_radiance(s, Vec3(3, 40, 20), d);
    CHECK(a.sigma == b.sigma);
    CHECK(a.color == b.color);
}

TEST_CASE("scene json round trip and validation") {
    SyntheticScene s;
    s.spot.enabled = true;
    s.slab.enabled = true;
    s.falloff = 0.8;
    const SyntheticScene back = SyntheticScene::from_json(s.to_json());
    CHECK(back.to_json() == s.to_json());
    nlohmann::json bad = s.to_json();
    bad["displacement"]["amplitude"] = 13.0; // radius / 4 is 12.5
    CHECK_THROWS_AS(SyntheticScene::from_json(bad), ConfigError);
    bad = s.to_json();
    bad["shell"]["falloff_mm"] = 1.0;
    CHECK_THROWS_AS(SyntheticScene::from_json(bad), ConfigError);
    bad = s.to_json();
    bad["schema_version"] = 7;
    CHECK_THROWS_AS(SyntheticScene::from_json(bad), ConfigError);
}

TEST_CASE("oracle render of an empty scene is black with no depth") {
    const SyntheticScene empty = plain_ball(0.0);
    const Camera cam = Camera::look_at(Vec3(0, 0, -300), Vec3::Zero(), Vec3(0, -1, 0), 60.0, 16, 16);
    const OracleRender r = oracle_render(empty, cam, 256);
    for (double v : r.image.rgb) CHECK(v == 0.0);
    for (auto h : r.depth.hit) CHECK(h == 0);
    CHECK_THROWS_AS(oracle_render(empty, cam, 255), ConfigError);
}

TEST_CASE("oracle opacity matches the transmittance of a homogeneous ball") {
    const double peak = 0.01;
    const SyntheticScene ball = plain_ball(peak);
    const double bound = ball.bounding_radius();
    // Closed form through the centre: the solid diameter plus twice the Gaussian tail.
    const double tau_centre = peak * (2.0 * ball.radius + ball.falloff * std::sqrt(std::numbers::pi));
    CHECK(optical_depth(ball.radius, peak, ball.falloff, 0.0, bound) ==
          doctest::Approx(tau_centre).epsilon(1e-9));

    StreamRng unused(0, 0);
    for (double b : {0.0, 10.0, 30.0, 45.0, 49.5, 51.0}) {
        const Ray ray{Vec3(b, 0, -300), Vec3(0, 0, 1)};
        const double half = std::sqrt(bound * bound - b * b);
        const SampleSet smp = sample_uniform(ray, 300 - half, 300 + half, 1024, unused, false);
        std::vector<Radiance> rad(smp.size());
        for (std::size_t i = 0; i < smp.size(); ++i) rad[i] = oracle_radiance(ball, smp.positions[i], ray.dir);
        const double alpha = integrate(smp, rad).alpha;
        const double tau = optical_depth(ball.radius, peak, ball.falloff, b, half);
        CHECK(std::abs(alpha - (1.0 - std::exp(-tau))) < 1e-3);
    }

    // Rendered colours never exceed the opacity: albedo and shading stay within [0, 1].
    const Camera cam = Camera::look_at(Vec3(0, 0, -300), Vec3::Zero(), Vec3(0, -1, 0), 200.0, 15, 15);
    const OracleRender r = oracle_render(ball, cam, 1024);
    for (int y = 0; y < 15; ++y)
        for (int x = 0; x < 15; ++x) {
            const Ray ray = cam.ray(x, y);
            const double b = ray.origin.cross(ray.dir).norm();
            const double alpha = b < bound ? 1.0 - std::exp(-optical_depth(ball.radius, peak, ball.falloff, b,
                                                                           std::sqrt(bound * bound - b * b)))
                                           : 0.0;
            CHECK(r.image.at(x, y).maxCoeff() <= alpha + 1e-3);
        }
}

TEST_CASE("oracle render converges in the sample count") {
    const SyntheticScene s;
    const Camera cam = Camera::look_at(Vec3(0, 0, -300), Vec3::Zero(), Vec3(0, -1, 0), 90.0, 24, 24);
    const Image a = oracle_render(s, cam, 512).image;
    const Image b = oracle_render(s, cam, 1024).image;
    CHECK(std::abs(mean_pixel(a) - mean_pixel(b)) < 1e-3);
}

TEST_CASE("dataset honours its configuration") {
    SyntheticScene s;
    DatasetConfig cfg;
    cfg.views = 3;
    cfg.held_out = 1;
    cfg.width = 20;
    cfg.height = 14;
    cfg.n_dense = 256;
    cfg.coarse_size = 16;
    const Dataset ds = make_dataset(s, cfg);
    REQUIRE(ds.views.size() == 4);
    CHECK(ds.training_views().size() == 3);
    CHECK(ds.validation_views().size() == 1);
    for (const View& v : ds.views) {
        CHECK(v.image.width == 20);
        CHECK(v.image.height == 14);
        CHECK(v.depth.width == 20);
        CHECK(v.camera.width() == 20);
        CHECK(v.camera.height() == 14);
    }
    CHECK(ds.coarse_position.size == 16);
    // Held-out cameras sit between training cameras, all looking at the centre.
    for (const View& v : ds.views) {
        const Vec3 eye = v.camera.center();
        CHECK((eye - s.center).norm() == doctest::Approx(cfg.distance));
    }

    DatasetConfig one = cfg;
    one.views = 1;
    one.held_out = 0;
    const Dataset single = make_dataset(s, one);
    CHECK(single.views.size() == 1);
    CHECK(single.frame_count() == 1);
}

TEST_CASE("the coarse map omits exactly the displacement field") {
    SyntheticScene s;
    s.displacement_amplitude = 4.0;
    const UvPositionMap coarse = surface_position_map(s, 256, false);
    const UvPositionMap truth = surface_position_map(s, 256, true);
    double worst = 0.0;
    for (std::size_t i = 0; i < coarse.texel_count(); ++i) {
        worst = std::max(worst, (coarse.positions[i] - truth.positions[i]).norm());
        CHECK((coarse.positions[i] - s.center).norm() == doctest::Approx(s.radius));
    }
    CHECK(worst <= 4.0 + 1e-12);
    CHECK(worst == doctest::Approx(4.0).epsilon(1e-3));
}

TEST_CASE("dataset rays re-integrate to the stored pixels") {
    const Dataset& ds = testing::tiny_dataset(16);
    const SceneField field(ds.scene);
    const View& v = ds.views[0];
    const double bound = ds.scene.bounding_radius();
    for (int y = 2; y < 16; y += 5)
        for (int x = 2; x < 16; x += 5) {
            const Ray ray = v.camera.ray(x, y);
            const auto t = oracle::ray_sphere(ray.origin, ray.dir, ds.scene.center, bound);
            if (!t) continue;
            // Independent midpoint sum over the same chord.
            const double far = 2.0 * (ds.scene.center - ray.origin).dot(ray.dir) - *t;
            const int n = 4096;
            const double dt = (far - *t) / n;
            double transmit = 1.0;
            Vec3 c = Vec3::Zero();
            for (int i = 0; i < n; ++i) {
                const Radiance r = field.radiance(ray.origin + (*t + (i + 0.5) * dt) * ray.dir, ray.dir);
                const double keep = std::exp(-r.sigma * dt);
                c += transmit * (1.0 - keep) * r.color;
                transmit *= keep;
            }
            CHECK((c - v.image.at(x, y)).cwiseAbs().maxCoeff() < 5e-3);
        }
}

TEST_CASE("dataset save and load round trip bit-exactly") {
    TempDir dir("npva_test_dataset");
    const Dataset ds = testing::tiny_dataset(12);
    save_dataset(dir.path / "a", ds);
    const Dataset back = load_dataset(dir.path / "a");
    REQUIRE(back.views.size() == ds.views.size());
    for (std::size_t i = 0; i < ds.views.size(); ++i) {
        for (std::size_t k = 0; k < ds.views[i].image.rgb.size(); ++k)
            CHECK(static_cast<float>(back.views[i].image.rgb[k]) == static_cast<float>(ds.views[i].image.rgb[k]));
        CHECK(back.views[i].held_out == ds.views[i].held_out);
        CHECK(back.views[i].depth.hit == ds.views[i].depth.hit);
    }
    CHECK(back.scene.to_json() == ds.scene.to_json());
    // Regenerating from the same scene is bit-identical.
    save_dataset(dir.path / "b", testing::tiny_dataset(12));
    for (const char* f : {"view_0.npva", "view_1_depth.npva", "coarse_position.npva", "dataset.json"})
        CHECK(read_bytes(dir.path / "a" / f) == read_bytes(dir.path / "b" / f));
}

TEST_CASE("cli end to end") {
    TempDir dir("npva_test_cli");
    const fs::path& d = dir.path;
    write_text(d / "scene.json", R"({"scene": {"schema_version": 1},
        "dataset": {"views": 2, "held_out": 1, "width": 24, "height": 24, "n_dense": 256, "coarse_size": 16}})");
    write_text(d / "train.json", R"({"schema_version": 1,
        "model": {"point_map_size": 64, "feature_channels": 8, "density_hidden": [16, 16],
                  "color_hidden": [16, 16], "render": {"search_radius": 6.0}},
        "epochs": {"G": 1, "E": 1, "P": 1}, "iterations_per_epoch": 2, "rays_per_iteration": 128,
        "grid_g": 4, "grid_e": 8, "patch_size": 8})");
    std::string out, err;

    REQUIRE(cli({"gen-data", "--scene", (d / "scene.json").string(), "--out", (d / "data").string()}) == 0);
    REQUIRE(cli({"train", "--config", (d / "train.json").string(), "--data", (d / "data").string(),
                 "--out", (d / "ck").string(), "--log", (d / "log.jsonl").string(), "--threads", "2"}) == 0);
    CHECK(fs::exists(d / "ck" / "checkpoint.json"));

    SUBCASE("render is byte-identical across runs") {
        for (const char* name : {"a", "b"}) {
            REQUIRE(cli({"render", "--checkpoint", (d / "ck").string(), "--data", (d / "data").string(),
                         "--view", "2", "--out", (d / (std::string(name) + ".ppm")).string(), "--depth",
                         (d / (std::string(name) + ".pgm")).string(), "--seed", "4"},
                        &out) == 0);
        }
        CHECK(read_bytes(d / "a.ppm") == read_bytes(d / "b.ppm"));
        CHECK(read_bytes(d / "a.pgm") == read_bytes(d / "b.pgm"));
        CHECK(nlohmann::json::parse(out).contains("decoder_evals"));
    }
    SUBCASE("eval of the oracle itself is exact") {
        REQUIRE(cli({"eval", "--oracle-scene", (d / "scene.json").string(), "--data", (d / "data").string(),
                     "--all-views"},
                    &out) == 0);
        const auto j = nlohmann::json::parse(out);
        CHECK(j["mse"].get<double>() < 1e-12);
        CHECK(j["views"].size() == 3);
        REQUIRE(cli({"eval", "--checkpoint", (d / "ck").string(), "--data", (d / "data").string()}, &out) == 0);
        CHECK(nlohmann::json::parse(out)["mse"].get<double>() > 0.0);
    }
    SUBCASE("bench reports both sampling modes") {
        REQUIRE(cli({"bench", "--checkpoint", (d / "ck").string(), "--size", "32", "--repeats", "1"}, &out) == 0);
        const auto j = nlohmann::json::parse(out);
        CHECK(j["patch"]["decoder_evals"].get<double>() > 0);
        CHECK(j["uniform"]["decoder_evals"].get<double>() > 0);
        CHECK(j["decoder_eval_ratio"].get<double>() == doctest::Approx(192.0 / 20.0).epsilon(0.05));
    }
    SUBCASE("errors exit non-zero with a message") {
        CHECK(cli({"train", "--bogus"}, &out, &err) != 0);
        CHECK(!err.empty());
        CHECK(cli({"frobnicate"}, &out, &err) != 0);
        write_text(d / "bad.json", R"({"schema_version": 1, "epochs_g": 3})");
        CHECK(cli({"train", "--config", (d / "bad.json").string(), "--data", (d / "data").string(), "--out",
                   (d / "ck2").string()},
                  &out, &err) != 0);
        CHECK(err.find("epochs_g") != std::string::npos);
        write_text(d / "broken.json", "{ not json");
        CHECK(cli({"gen-data", "--scene", (d / "broken.json").string(), "--out", (d / "x").string()}, &out, &err) != 0);
        CHECK(!err.empty());
        CHECK(cli({"eval", "--data", (d / "data").string()}, &out, &err) != 0);
        CHECK(cli({"ablate", "--name", "nothing", "--data", (d / "data").string()}, &out, &err) != 0);
    }
}
