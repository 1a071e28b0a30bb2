// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#include "npva/bench.hpp"

#include "npva/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>

namespace npva {

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
        .count();
}

} // namespace

Camera closeup_camera(const Model& model, int width, int height) {
    const NeuralPointCloud cloud = model.point_cloud(0);
    if (cloud.empty()) {
        throw ConfigError("closeup_camera: the model has no points");
    }
    Vec3 center = Vec3::Zero();
    for (const Vec3& p : cloud.points) {
        center += p;
    }
    center /= static_cast<double>(cloud.size());
    double front = 0.0; // extent of the cloud towards +z
    for (const Vec3& p : cloud.points) {
        front = std::max(front, p.z() - center.z());
    }
    const double radius = front;
    const Vec3 eye = center + Vec3(0.0, 0.0, 2.0 * radius);
    // At the front surface (distance ~radius) the half-width spans 0.35 radius.
    const double focal = 0.5 * width / 0.35;
    return Camera::look_at(eye, center, Vec3::UnitY(), focal, width, height);
}

DecodeTiming time_decoders(const Model& model, const Camera& cam, int max_rays, int repeats) {
    const FrameState state = prepare_frame(model, 0);
    const DepthMap drast = rasterize_depth(model.position, cam);
    RenderConfig rc = model.config.render;
    rc.sampling = SamplingMode::Patch;
    rc.decoding = DecodingMode::Light;
    RadianceMlp heavy_mlp = model.mlp;
    if (!heavy_mlp.has_pointwise()) {
        heavy_mlp = RadianceMlp(model.mlp.config(), true);
        std::mt19937_64 rng(model.config.seed);
        heavy_mlp.initialize(rng);
        heavy_mlp.density = model.mlp.density;
        heavy_mlp.color = model.mlp.color;
    }
    const RenderScene scene{&state.cloud, state.index.get(), &heavy_mlp, &drast};

    std::vector<std::array<int, 2>> pixels;
    const int total = cam.width() * cam.height();
    const int step = std::max(1, total / std::max(1, max_rays));
    for (int p = 0; p < total && static_cast<int>(pixels.size()) < max_rays; p += step) {
        pixels.push_back({p % cam.width(), p / cam.width()});
    }
    TracedBatch tb;
    trace_pixels(tb, pixels, cam, scene, rc, 0, false);

    // Only shading points with a full neighbourhood of K points are timed, so both decoders
    // see K pairs per point. Near the silhouette fewer neighbours fall inside the radius.
    NeighborhoodBatch full;
    const NeighborhoodBatch& src = tb.batch;
    for (int s = 0; s < src.sample_count(); ++s) {
        const auto b = static_cast<std::size_t>(src.sample_begin[static_cast<std::size_t>(s)]);
        const auto e = static_cast<std::size_t>(src.sample_begin[static_cast<std::size_t>(s) + 1]);
        if (static_cast<int>(e - b) != rc.neighbors) {
            continue;
        }
        full.point_ids.insert(full.point_ids.end(), src.point_ids.begin() + b, src.point_ids.begin() + e);
        full.weights.insert(full.weights.end(), src.weights.begin() + b, src.weights.begin() + e);
        full.scaled_offsets.insert(full.scaled_offsets.end(), src.scaled_offsets.begin() + b,
                                   src.scaled_offsets.begin() + e);
        full.sample_begin.push_back(static_cast<int>(full.point_ids.size()));
        full.view_dirs.push_back(src.view_dirs[static_cast<std::size_t>(s)]);
    }
    if (full.sample_count() == 0) {
        throw ConfigError("time_decoders: no shading point has a full neighbourhood");
    }
    finalize(full, state.cloud);

    DecodeTiming t;
    t.rays = pixels.size();
    t.shading_points = static_cast<std::size_t>(full.sample_count());
    t.neighbor_pairs = static_cast<std::size_t>(full.pair_count());
    t.light_ms = t.heavy_ms = std::numeric_limits<double>::infinity();
    for (int r = 0; r < std::max(1, repeats); ++r) {
        auto start = std::chrono::steady_clock::now();
        const Eigen::MatrixXd a = decode_batch(full, heavy_mlp, false);
        t.light_ms = std::min(t.light_ms, elapsed_ms(start));
        start = std::chrono::steady_clock::now();
        const Eigen::MatrixXd b = decode_batch(full, heavy_mlp, true);
        t.heavy_ms = std::min(t.heavy_ms, elapsed_ms(start));
        if (a.cols() != b.cols()) {
            throw NumericalError("decoders returned different sample counts");
        }
    }
    return t;
}

double BenchResult::decoder_eval_ratio() const {
    return patch.decoder_evals ? static_cast<double>(uniform.decoder_evals) /
                                     static_cast<double>(patch.decoder_evals)
                               : 0.0;
}

double BenchResult::wall_ratio() const {
    return patch.wall_ms > 0.0 ? uniform.wall_ms / patch.wall_ms : 0.0;
}

nlohmann::json BenchResult::to_json() const {
    return {{"patch", patch.to_json()},
            {"uniform", uniform.to_json()},
            {"decoder_eval_ratio", decoder_eval_ratio()},
            {"wall_ratio", wall_ratio()},
            {"decode",
             {{"rays", decode.rays},
              {"shading_points", decode.shading_points},
              {"neighbor_pairs", decode.neighbor_pairs},
              {"light_ms", decode.light_ms},
              {"heavy_ms", decode.heavy_ms},
              {"light_per_ray_ms", decode.light_per_ray_ms()},
              {"heavy_per_ray_ms", decode.heavy_per_ray_ms()},
              {"heavy_over_light",
               decode.light_ms > 0.0 ? decode.heavy_ms / decode.light_ms : 0.0}}}};
}

BenchResult bench(const Model& model, const Camera& cam, const RenderConfig& cfg, int repeats) {
    BenchResult r;
    const FrameState state = prepare_frame(model, 0);
    const DepthMap drast = rasterize_depth(model.position, cam);
    const RenderScene scene{&state.cloud, state.index.get(), &model.mlp, &drast};
    auto best = [&](SamplingMode mode) {
        RenderConfig c = cfg;
        c.sampling = mode;
        c.decoding = DecodingMode::Light;
        RenderStats s;
        s.wall_ms = std::numeric_limits<double>::infinity();
        for (int k = 0; k < std::max(1, repeats); ++k) {
            const RenderOutput out = render_image(cam, scene, c);
            if (out.stats.wall_ms < s.wall_ms) {
                s = out.stats;
            }
        }
        return s;
    };
    r.patch = best(SamplingMode::Patch);
    r.uniform = best(SamplingMode::Uniform);
    r.decode = time_decoders(model, cam, 4096, repeats);
    return r;
}

std::vector<std::string> ablation_names() {
    return {"points", "displacement", "radius", "decoding", "sampling", "gep"};
}

double AblationResult::median_mse(const std::string& variant) const {
    std::vector<double> v;
    for (const AblationRun& r : runs) {
        if (r.variant == variant) {
            v.push_back(r.val_mse);
        }
    }
    if (v.empty()) {
        throw ConfigError("no runs for ablation variant '" + variant + "'");
    }
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::vector<std::string> AblationResult::variants() const {
    std::vector<std::string> out;
    for (const AblationRun& r : runs) {
        if (std::find(out.begin(), out.end(), r.variant) == out.end()) {
            out.push_back(r.variant);
        }
    }
    return out;
}

nlohmann::json AblationResult::to_json() const {
    nlohmann::json j{{"ablation", name}};
    j["runs"] = nlohmann::json::array();
    for (const AblationRun& r : runs) {
        j["runs"].push_back(
            {{"variant", r.variant}, {"seed", r.seed}, {"val_mse", r.val_mse}, {"wall_ms", r.wall_ms}});
    }
    for (const std::string& v : variants()) {
        const double mse = median_mse(v);
        j["median"][v] = {{"val_mse", mse}, {"psnr", psnr_from_mse(mse)}};
    }
    return j;
}

std::vector<std::pair<std::string, TrainConfig>> ablation_variants(const std::string& name,
                                                                   const TrainConfig& base) {
    std::vector<std::pair<std::string, TrainConfig>> out;
    auto add = [&](const std::string& label, auto&& edit) {
        TrainConfig c = base;
        edit(c);
        c.validate();
        out.emplace_back(label, c);
    };
    if (name == "points") {
        add("points_full", [](TrainConfig&) {});
        add("points_half", [](TrainConfig& c) { c.model.point_map_size /= 2; });
    } else if (name == "displacement") {
        add("with_displacement", [](TrainConfig& c) { c.model.use_displacement = true; });
        add("without_displacement", [](TrainConfig& c) { c.model.use_displacement = false; });
    } else if (name == "radius") {
        add("R3", [](TrainConfig& c) { c.model.render.search_radius = 3.0; });
        add("R4", [](TrainConfig& c) { c.model.render.search_radius = 4.0; });
    } else if (name == "decoding") {
        add("light", [](TrainConfig& c) {
            c.model.heavy_decoder = false;
            c.model.render.decoding = DecodingMode::Light;
        });
        add("heavy", [](TrainConfig& c) {
            c.model.heavy_decoder = true;
            c.model.render.decoding = DecodingMode::Heavy;
        });
    } else if (name == "sampling") {
        add("patch", [](TrainConfig& c) { c.model.render.sampling = SamplingMode::Patch; });
        add("pixel", [](TrainConfig& c) { c.model.render.sampling = SamplingMode::Pixel; });
    } else if (name == "gep") {
        add("gep", [](TrainConfig& c) { c.schedule = Schedule::Gep; });
        add("gp", [](TrainConfig& c) { c.schedule = Schedule::Gp; });
        add("grid", [](TrainConfig& c) { c.schedule = Schedule::Grid; });
    } else {
        throw ConfigError("unknown ablation '" + name + "'");
    }
    return out;
}

AblationResult run_ablation(const std::string& name, const Dataset& ds, const TrainConfig& base,
                            const std::vector<std::uint64_t>& seeds, std::ostream* progress) {
    AblationResult result;
    result.name = name;
    for (const auto& [label, cfg] : ablation_variants(name, base)) {
        for (std::uint64_t seed : seeds) {
            TrainConfig c = cfg;
            c.seed = seed;
            c.model.seed = seed;
            const auto start = std::chrono::steady_clock::now();
            const TrainResult tr = train(ds, c);
            if (!tr.final_val_mse) {
                throw ConfigError("ablation needs a dataset with held-out views");
            }
            result.runs.push_back({label, seed, *tr.final_val_mse, elapsed_ms(start)});
            if (progress) {
                *progress << name << ' ' << label << " seed " << seed << ": val_mse "
                          << *tr.final_val_mse << '\n';
            }
        }
    }
    return result;
}

} // namespace npva
