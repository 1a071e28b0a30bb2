// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails.
#include "oracles.hpp"
#include "test_support.hpp"

#include "npva/bench.hpp"
#include "npva/cli.hpp"
#include "npva/dataset.hpp"
#include "npva/error.hpp"
#include "npva/losses.hpp"
#include "npva/renderer.hpp"
#include "npva/scene.hpp"
#include "npva/spatial_index.hpp"
#include "npva/trainer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>

using namespace npva;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

class Stopwatch {
  public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

  private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

nlohmann::json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) {
        throw IoError("cannot read " + p.string());
    }
    return nlohmann::json::parse(in);
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

Dataset dataset_from(const fs::path& scene_file) {
    const nlohmann::json j = read_json(scene_file);
    return make_dataset(SyntheticScene::from_json(j.at("scene")), DatasetConfig::from_json(j.at("dataset")));
}

// Volume rendering of a homogeneous medium against its closed form.
Outcome homogeneous_medium() {
    const Stopwatch sw;
    const double sigma = 0.05, len = 40.0;
    const double want = oracle::slab_alpha(sigma, len);
    std::vector<double> errors;
    for (int n : {16, 64, 256}) {
        StreamRng rng(0, 0);
        const SampleSet s = sample_uniform(Ray{}, 0.0, len, n, rng, false);
        const PixelResult r = integrate(s, std::vector<Radiance>(s.size(), Radiance{sigma, Vec3(1, 1, 1)}));
        errors.push_back(std::abs(r.alpha - want));
    }
    const double t = sw.seconds();
    const bool decreasing = errors[0] > errors[1] && errors[1] > errors[2];
    return {errors[2] < 1e-3 && decreasing && t < 1.0,
            fmt("alpha error %.2e/%.2e/%.2e at N=16/64/256, %.3f s", errors[0], errors[1], errors[2], t)};
}

struct KnnSuite {
    NeuralPointCloud cloud;
    std::vector<Vec3> queries;
};

KnnSuite knn_suite() {
    std::mt19937_64 rng(2024);
    KnnSuite s;
    s.cloud = testing::random_cloud(1000, 4, 20.0, rng);
    std::uniform_real_distribution<double> u(-2.0, 22.0);
    for (int q = 0; q < 100; ++q) s.queries.emplace_back(u(rng), u(rng), u(rng));
    return s;
}

Outcome knn_exactness(const KnnSuite& s) {
    const Stopwatch sw;
    int mismatches = 0, hits = 0;
    for (double r : {3.0, 4.0}) {
        const PointIndex index(s.cloud.points, r);
        for (const Vec3& q : s.queries) {
            const NeighborSet got = index.query(q, 8, r);
            const auto want = oracle::brute_knn(s.cloud.points, q, 8, r);
            hits += static_cast<int>(want.size());
            if (got.size() != want.size()) {
                ++mismatches;
                continue;
            }
            for (std::size_t i = 0; i < want.size(); ++i) {
                mismatches += got.ids[i] != want[i].second || got.distances[i] != want[i].first;
            }
        }
    }
    const double t = sw.seconds();
    return {mismatches == 0 && t < 1.0,
            fmt("%d mismatches over 200 queries (%d neighbours), %.3f s", mismatches, hits, t)};
}

// Sign pattern of every hidden ReLU pre-activation of both heads.
std::vector<bool> relu_pattern(const AggregatedFeature& agg, const Vec3& dir, const RadianceMlp& mlp) {
    Eigen::MatrixXd latent(agg.feature.size() + 6, 1);
    latent.col(0) << agg.feature, agg.offset_code;
    HeadCache cache;
    decode_heads(mlp, latent, Eigen::MatrixXd(dir), &cache);
    std::vector<bool> signs;
    for (const Mlp::Cache* c : {&cache.density, &cache.color}) {
        for (std::size_t l = 0; l + 1 < c->pre.size(); ++l) {
            for (Eigen::Index i = 0; i < c->pre[l].size(); ++i) signs.push_back(c->pre[l](i) > 0.0);
        }
    }
    return signs;
}

Outcome gradient_fidelity() {
    const Stopwatch sw;
    const double h = 1e-4, radius = 3.0;
    double worst = 0.0;
    long checked = 0, at_kink = 0;
    for (int config = 0; config < 100; ++config) {
        std::mt19937_64 rng(1000 + config);
        const RadianceMlp mlp = testing::random_decoder(7000 + config);
        NeuralPointCloud cloud = testing::random_cloud(8, 6, 1.0, rng);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        const Vec3 x(u(rng), u(rng), u(rng));
        for (Vec3& p : cloud.points) p = x + Vec3(u(rng), u(rng), u(rng)) * (radius / std::sqrt(3.0));
        NeighborSet nb;
        for (int i = 0; i < 8; ++i) {
            nb.ids.push_back(i);
            nb.distances.push_back((cloud.points[static_cast<std::size_t>(i)] - x).norm());
        }
        const Vec3 dir = Vec3(u(rng), u(rng), u(rng)).normalized();
        const Radiance up{u(rng), Vec3(u(rng), u(rng), u(rng))};

        const AggregatedFeature agg = aggregate(x, nb, cloud, radius);
        const DecodeGradient g = decode_grad(agg, dir, mlp, up);
        const NeighborGradient ng = aggregate_backward(x, nb, cloud, agg, g.d_feature, g.d_offset_code, radius);
        auto objective = [&](const NeuralPointCloud& c, const RadianceMlp& m) {
            const Radiance r = decode(aggregate(x, nb, c, radius), dir, m);
            return up.sigma * r.sigma + up.color.dot(r.color);
        };
        auto pattern = [&](const NeuralPointCloud& c, const RadianceMlp& m) {
            return relu_pattern(aggregate(x, nb, c, radius), dir, m);
        };
        // A central difference is only an oracle where the function is smooth
        // over the whole stencil.
        auto check = [&](double analytic, double& param, const NeuralPointCloud& c, const RadianceMlp& m) {
            const double x0 = param;
            param = x0 + h;
            const double fp = objective(c, m);
            const auto sp = pattern(c, m);
            param = x0 - h;
            const double fm = objective(c, m);
            const auto sm = pattern(c, m);
            param = x0;
            if (sp != sm) {
                ++at_kink;
                return;
            }
            worst = std::max(worst, oracle::relative_error(analytic, (fp - fm) / (2 * h), 1e-6));
            ++checked;
        };
        RadianceMlp m = mlp;
        for (auto [net, grad] : {std::pair{&m.density, &g.weights.density}, std::pair{&m.color, &g.weights.color}}) {
            for (std::size_t l = 0; l < net->layers().size(); ++l) {
                auto& layer = net->layers()[l];
                for (Eigen::Index i = 0; i < layer.weight.size(); ++i)
                    check(grad->weight[l].data()[i], layer.weight.data()[i], cloud, m);
                for (Eigen::Index i = 0; i < layer.bias.size(); ++i)
                    check(grad->bias[l](i), layer.bias(i), cloud, m);
            }
        }
        NeuralPointCloud c = cloud;
        for (std::size_t i = 0; i < nb.size(); ++i)
            for (int k = 0; k < c.channels; ++k)
                check(ng.d_feature[i](k), c.features[i * static_cast<std::size_t>(c.channels) + k], c, mlp);
    }
    const double t = sw.seconds();
    return {worst < 1e-4 && t < 10.0 && checked > 0,
            fmt("max relative error %.2e over %ld parameters in 100 configurations (%ld straddle a ReLU kink), "
                "%.2f s",
                worst, checked, at_kink, t)};
}

Outcome aggregation_law(const KnnSuite& s) {
    double worst = 0.0;
    int queries = 0;
    bool negative = false;
    for (double r : {3.0, 4.0}) {
        const PointIndex index(s.cloud.points, r);
        for (const Vec3& q : s.queries) {
            const NeighborSet nb = index.query(q, 8, r);
            if (nb.empty()) continue;
            const AggregatedFeature agg = aggregate(q, nb, s.cloud, r);
            double sum = 0.0;
            for (double w : agg.weights) {
                negative |= w < 0.0;
                sum += w;
            }
            worst = std::max(worst, std::abs(sum - 1.0));
            ++queries;
        }
    }
    NeuralPointCloud three = s.cloud;
    three.points = {Vec3(1, 0, 0), Vec3(0, 2, 0), Vec3(0, 0, 4)};
    three.features.resize(3 * static_cast<std::size_t>(three.channels));
    three.uv_origin.resize(3);
    NeighborSet nb{{0, 1, 2}, {1.0, 2.0, 4.0}};
    const AggregatedFeature agg = aggregate(Vec3::Zero(), nb, three, 5.0);
    const double example = std::max({std::abs(agg.weights[0] - 4.0 / 7), std::abs(agg.weights[1] - 2.0 / 7),
                                      std::abs(agg.weights[2] - 1.0 / 7)});
    return {!negative && worst < 1e-12 && example < 1e-12,
            fmt("%d queries, max |sum - 1| %.1e, worked example error %.1e", queries, worst, example)};
}

// Two depth levels: a ball in front of a plate 60 mm behind its centre.
Outcome patch_depth(const fs::path& configs) {
    const nlohmann::json j = read_json(configs / "two_level_scene.json");
    const SyntheticScene scene = SyntheticScene::from_json(j.at("scene"));
    const DatasetConfig dc = DatasetConfig::from_json(j.at("dataset"));
    const int size = 128;
    const UvPositionMap surface = surface_position_map(scene, size, false);
    const auto sphere_texels = static_cast<std::uint32_t>(sphere_rows(scene, size) * size);
    DepthPatchConfig cfg;
    int spanning = 0, patch_both = 0, pixel_both = 0;
    for (const Camera& cam : arc_cameras(scene, dc)) {
        const Rasterization ras = rasterize(surface, cam);
        const DepthMap& d = ras.depth;
        // 0 = no hit, 1 = ball, 2 = plate.
        auto level_of = [&](int x, int y) {
            const std::size_t i = d.index(x, y);
            if (!d.hit[i]) return 0;
            return ras.vertex[i][0] < sphere_texels ? 1 : 2;
        };
        for (int y = cfg.stride; y < d.height - cfg.stride; ++y) {
            for (int x = cfg.stride; x < d.width - cfg.stride; ++x) {
                std::vector<double> depths[3];
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int px = x + dx * cfg.stride, py = y + dy * cfg.stride;
                        depths[level_of(px, py)].push_back(d.depth[d.index(px, py)]);
                    }
                if (depths[1].empty() || depths[2].empty()) continue;
                ++spanning;
                const Ray ray = cam.ray(x, y);
                const double zpt = (cam.rotation() * ray.dir).z();
                auto reaches_both = [&](const SampleSet& s) {
                    bool hit[3] = {false, false, false};
                    for (double t : s.t)
                        for (int level : {1, 2})
                            for (double z : depths[level]) hit[level] |= std::abs(t * zpt - z) <= cfg.radius;
                    return hit[1] && hit[2];
                };
                StreamRng a(5, d.index(x, y)), b(5, d.index(x, y));
                patch_both += reaches_both(sample_patch_depth(ray, cam, d, cfg, a));
                pixel_both += reaches_both(sample_pixel_depth(ray, cam, d, cfg, b));
            }
        }
    }
    return {spanning > 0 && patch_both == spanning && pixel_both == 0,
            fmt("%d rays span both levels: patch-depth reaches both on %d, pixel-depth on %d", spanning,
                patch_both, pixel_both)};
}

struct Fit {
    TrainResult result;
    double seconds = 0.0;
};

const Fit& fitted(const fs::path& configs) {
    static std::optional<Fit> fit;
    if (!fit) {
        const Dataset ds = dataset_from(configs / "fit_scene.json");
        const TrainConfig cfg = TrainConfig::from_json(read_json(configs / "fit_train.json"));
        const Stopwatch sw;
        TrainResult r = train(ds, cfg);
        fit = Fit{std::move(r), sw.seconds()};
    }
    return *fit;
}

Outcome sampling_budget(const fs::path& configs) {
    const Model& model = fitted(configs).result.model;
    const BenchResult b = bench(model, closeup_camera(model, 128, 128), model.config.render, 3);
    const double analytic = 192.0 / 20.0;
    const double ratio = b.decoder_eval_ratio();
    return {std::abs(ratio / analytic - 1.0) <= 0.05 && b.wall_ratio() >= 4.0,
            fmt("decoder evaluations %.3fx (analytic %.1fx), wall clock %.2fx", ratio, analytic, b.wall_ratio())};
}

// First baseline run reached 35.3 dB; the frozen floor keeps 1 dB of slack.
constexpr double kFitFloorDb = 34.2;

Outcome end_to_end_fit(const fs::path& configs) {
    const Fit& fit = fitted(configs);
    const double psnr = psnr_from_mse(fit.result.final_val_mse.value());
    return {psnr >= 30.0 && psnr >= kFitFloorDb && fit.seconds < 1800.0,
            fmt("held-out PSNR %.2f dB (floor %.1f) after %.0f s", psnr, kFitFloorDb, fit.seconds)};
}

Outcome ablation(const fs::path& configs, const char* scene_file, const char* name, const char* better,
                 const char* worse) {
    const Dataset ds = dataset_from(configs / scene_file);
    const TrainConfig base = TrainConfig::from_json(read_json(configs / "ablation_train.json"));
    const AblationResult r = run_ablation(name, ds, base, {1, 2, 3});
    const double a = r.median_mse(better), b = r.median_mse(worse);
    return {a < b, fmt("median held-out MSE %s %.5f vs %s %.5f over 3 seeds", better, a, worse, b)};
}

Outcome decoder_cost(const fs::path& configs) {
    const Model& model = fitted(configs).result.model;
    const DecodeTiming t = time_decoders(model, closeup_camera(model, 128, 128), 4096, 5);
    const double ratio = t.heavy_ms / t.light_ms;
    return {t.light_ms * 3.0 <= t.heavy_ms,
            fmt("light %.4f ms/ray, heavy %.4f ms/ray (%.2fx) at K=8 over %zu shading points",
                t.light_per_ray_ms(), t.heavy_per_ray_ms(), ratio, t.shading_points)};
}

Outcome loss_suite() {
    int failures = 0, checks = 0;
    auto expect = [&](bool ok) {
        failures += !ok;
        ++checks;
    };

    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Vec3> rgb(64);
    std::vector<double> depth(64);
    for (std::size_t i = 0; i < rgb.size(); ++i) {
        rgb[i] = Vec3(u(rng), u(rng), u(rng));
        depth[i] = 250.0 + 30.0 * u(rng);
    }
    const std::vector<std::uint8_t> valid(64, 1);
    UvPositionMap pos(8);
    for (Vec3& p : pos.positions) p = Vec3(0.5, -1.0, 2.0);
    const UvDisplacementMap disp(16);
    Image patch(8, 8);
    for (double& v : patch.rgb) v = u(rng);
    GradientStructureLoss gs;
    LossInputs in;
    in.rendered_rgb = rgb;
    in.reference_rgb = rgb;
    in.rendered_depth = depth;
    in.reference_depth = depth;
    in.depth_valid = valid;
    in.raster_depth = depth;
    in.raster_valid = valid;
    in.position = &pos;
    in.reference_position = &pos;
    in.displacement = &disp;
    in.patch = &patch;
    in.reference_patch = &patch;
    in.patch_loss = &gs;
    const LossBreakdown b = compute_losses(in, LossWeights{});
    for (double v : {b.pho, b.per, b.d, b.rd, b.m, b.s, b.disp, b.total}) expect(v == 0.0);

    const TrainConfig defaults;
    const double dd = defaults.thresholds.depth, dp = defaults.thresholds.displacement;
    expect(dd == 10.0 && dp == 10.0);
    const std::vector<std::uint8_t> one{1};
    const std::vector<double> ref{300.0};
    expect(masked_depth_loss(std::vector<double>{305.0}, ref, one, dd) == 5.0);
    expect(masked_depth_loss(std::vector<double>{315.0}, ref, one, dd) == 0.0);
    UvDisplacementMap d(1);
    d.displacements[0] = Vec3(0, 0, 12);
    expect(displacement_loss(d, dp) == 144.0);
    d.displacements[0] = Vec3(0, 0, 8);
    expect(displacement_loss(d, dp) == 0.0);
    return {failures == 0, fmt("%d of %d checks failed", failures, checks)};
}

std::vector<std::string> log_without_wall_time(const fs::path& p) {
    std::vector<std::string> lines;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) {
        nlohmann::json j = nlohmann::json::parse(line);
        j.erase("wall_ms");
        lines.push_back(j.dump());
    }
    return lines;
}

int cli(std::vector<std::string> args) {
    args.insert(args.begin(), "npva");
    std::vector<const char*> argv;
    for (const std::string& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    if (code != 0) {
        throw NumericalError("npva " + args[1] + " failed: " + err.str());
    }
    return code;
}

Outcome determinism(const fs::path& work) {
    const fs::path d = work / "determinism";
    fs::remove_all(d);
    fs::create_directories(d);
    write_text(d / "scene.json", R"({"scene": {"schema_version": 1},
        "dataset": {"views": 2, "held_out": 1, "width": 48, "height": 48, "n_dense": 256, "coarse_size": 32}})");
    write_text(d / "train.json", R"({"schema_version": 1,
        "model": {"point_map_size": 64, "feature_channels": 8, "density_hidden": [32, 32],
                  "color_hidden": [32, 32], "render": {"search_radius": 6.0}},
        "epochs": {"G": 2, "E": 2, "P": 1}, "rays_per_iteration": 256, "grid_g": 4, "grid_e": 8,
        "patch_size": 16, "validate_every": 1})");
    cli({"gen-data", "--scene", (d / "scene.json").string(), "--out", (d / "data").string()});
    for (const char* run : {"a", "b"}) {
        const std::string r = run;
        cli({"train", "--config", (d / "train.json").string(), "--data", (d / "data").string(), "--out",
             (d / ("ck_" + r)).string(), "--log", (d / ("log_" + r + ".jsonl")).string(), "--seed", "9",
             "--threads", "2"});
        cli({"render", "--checkpoint", (d / ("ck_" + r)).string(), "--data", (d / "data").string(), "--view",
             "1", "--out", (d / (r + ".ppm")).string(), "--depth", (d / (r + ".pgm")).string(), "--seed", "9",
             "--threads", "2"});
    }
    int files = 0, differing = 0;
    for (const auto& e : fs::directory_iterator(d / "ck_a")) {
        ++files;
        differing += read_bytes(e.path()) != read_bytes(d / "ck_b" / e.path().filename());
    }
    const bool same_log = log_without_wall_time(d / "log_a.jsonl") == log_without_wall_time(d / "log_b.jsonl");
    const bool same_render =
        read_bytes(d / "a.ppm") == read_bytes(d / "b.ppm") && read_bytes(d / "a.pgm") == read_bytes(d / "b.pgm");
    return {files > 0 && differing == 0 && same_log && same_render,
            fmt("%d of %d checkpoint files differ, log %s, render %s", differing, files,
                same_log ? "identical" : "differs", same_render ? "identical" : "differs")};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"npva acceptance checks"};
    fs::path configs = "configs";
    fs::path work = fs::temp_directory_path() / "npva_acceptance";
    std::vector<int> only;
    app.add_option("--configs", configs, "Directory with the scene and training configs")->check(CLI::ExistingDirectory);
    app.add_option("--work", work, "Scratch directory");
    app.add_option("--only", only, "Run only these criteria");
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(work);

    const KnnSuite suite = knn_suite();
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"volume rendering of a homogeneous medium", [] { return homogeneous_medium(); }},
        {"neighbour search matches brute force", [&] { return knn_exactness(suite); }},
        {"decoder gradients match finite differences", [] { return gradient_fidelity(); }},
        {"aggregation weights are convex", [&] { return aggregation_law(suite); }},
        {"patch-depth sampling covers both depth levels", [&] { return patch_depth(configs); }},
        {"sampling budget and speed against uniform sampling", [&] { return sampling_budget(configs); }},
        {"end-to-end fit of the sphere scene", [&] { return end_to_end_fit(configs); }},
        {"error-guided schedule beats grid sampling",
         [&] { return ablation(configs, "spot_scene.json", "gep", "gep", "grid"); }},
        {"displacement map lowers held-out error",
         [&] { return ablation(configs, "coarse_proxy_scene.json", "displacement", "with_displacement",
                               "without_displacement"); }},
        {"lightweight decoding is at least 3x cheaper than heavy", [&] { return decoder_cost(configs); }},
        {"loss terms and thresholds", [] { return loss_suite(); }},
        {"train and render are reproducible", [&] { return determinism(work); }},
    };
    // Criteria 6, 7 and 10 share one fitted model, trained on first use.
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << "C" << id << " " << criteria[i].first << ": "
                  << o.detail << std::endl;
    }
    return failed ? 1 : 0;
}
