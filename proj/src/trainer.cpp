// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#include "npva/trainer.hpp"

#include "npva/error.hpp"
#include "npva/json_util.hpp"
#include "npva/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <random>

namespace npva {

std::string to_string(Stage s) {
    switch (s) {
    case Stage::Grid:
        return "G";
    case Stage::Error:
        return "E";
    case Stage::Patch:
        return "P";
    }
    return "G";
}

std::string to_string(Schedule s) {
    switch (s) {
    case Schedule::Gep:
        return "gep";
    case Schedule::Gp:
        return "gp";
    case Schedule::Grid:
        return "grid";
    }
    return "gep";
}

Schedule schedule_from_string(const std::string& s) {
    if (s == "gep") {
        return Schedule::Gep;
    }
    if (s == "gp") {
        return Schedule::Gp;
    }
    if (s == "grid") {
        return Schedule::Grid;
    }
    throw ConfigError("unknown schedule '" + s + "' (gep, gp, grid)");
}

void TrainConfig::validate() const {
    model.validate();
    weights.validate();
    adam.validate();
    if (epochs_g < 0 || epochs_e < 0 || epochs_p < 0) {
        throw ConfigError("train: epoch counts must be non-negative");
    }
    if (rays_per_iteration < 1 || iterations_per_epoch < 0 || grid_g < 1 || grid_e < 1 ||
        patch_size < 1 || validate_every < 1) {
        throw ConfigError("train: ray, grid, patch and validation sizes must be positive");
    }
    for (double lr : {lr_mlp, lr_features, lr_displacement, lr_position}) {
        if (!(lr >= 0.0)) {
            throw ConfigError("train: learning rates must be non-negative");
        }
    }
    if (!(lr_final_scale > 0.0 && lr_final_scale <= 1.0)) {
        throw ConfigError("train: lr final_scale must lie in (0, 1]");
    }
    if (!(divergence_factor > 1.0)) {
        throw ConfigError("train: divergence_factor must exceed 1");
    }
}

nlohmann::json TrainConfig::to_json() const {
    return {{"schema_version", kSchemaVersion},
            {"model", model.to_json()},
            {"schedule", to_string(schedule)},
            {"epochs", {{"G", epochs_g}, {"E", epochs_e}, {"P", epochs_p}}},
            {"rays_per_iteration", rays_per_iteration},
            {"iterations_per_epoch", iterations_per_epoch},
            {"grid_g", grid_g},
            {"grid_e", grid_e},
            {"grid_ema", grid_ema},
            {"patch_size", patch_size},
            {"weights", weights.to_json()},
            {"thresholds", {{"depth", thresholds.depth}, {"displacement", thresholds.displacement}}},
            {"adam", adam.to_json()},
            {"lr",
             {{"mlp", lr_mlp},
              {"features", lr_features},
              {"displacement", lr_displacement},
              {"position", lr_position},
              {"final_scale", lr_final_scale}}},
            {"train_position", train_position},
            {"divergence_factor", divergence_factor},
            {"seed", seed},
            {"validate_every", validate_every}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    check_keys(j,
               {"schema_version", "model", "schedule", "epochs", "rays_per_iteration",
                "iterations_per_epoch", "grid_g", "grid_e", "grid_ema", "patch_size", "weights",
                "thresholds", "adam", "lr", "train_position", "divergence_factor", "seed", "threads",
                "validate_every"},
               "train config");
    if (j.value("schema_version", 0) != kSchemaVersion) {
        throw ConfigError("train config: unsupported schema_version");
    }
    TrainConfig c;
    if (j.contains("model")) {
        c.model = ModelConfig::from_json(j["model"]);
    }
    c.schedule = schedule_from_string(j.value("schedule", to_string(c.schedule)));
    if (j.contains("epochs")) {
        check_keys(j["epochs"], {"G", "E", "P"}, "train config epochs");
        c.epochs_g = j["epochs"].value("G", c.epochs_g);
        c.epochs_e = j["epochs"].value("E", c.epochs_e);
        c.epochs_p = j["epochs"].value("P", c.epochs_p);
    }
    c.rays_per_iteration = j.value("rays_per_iteration", c.rays_per_iteration);
    c.iterations_per_epoch = j.value("iterations_per_epoch", c.iterations_per_epoch);
    c.grid_g = j.value("grid_g", c.grid_g);
    c.grid_e = j.value("grid_e", c.grid_e);
    c.grid_ema = j.value("grid_ema", c.grid_ema);
    c.patch_size = j.value("patch_size", c.patch_size);
    if (j.contains("weights")) {
        c.weights = LossWeights::from_json(j["weights"]);
    }
    if (j.contains("thresholds")) {
        check_keys(j["thresholds"], {"depth", "displacement"}, "train config thresholds");
        c.thresholds.depth = j["thresholds"].value("depth", c.thresholds.depth);
        c.thresholds.displacement = j["thresholds"].value("displacement", c.thresholds.displacement);
    }
    if (j.contains("adam")) {
        c.adam = AdamConfig::from_json(j["adam"]);
    }
    if (j.contains("lr")) {
        check_keys(j["lr"], {"mlp", "features", "displacement", "position", "final_scale"},
                   "train config lr");
        c.lr_mlp = j["lr"].value("mlp", c.lr_mlp);
        c.lr_features = j["lr"].value("features", c.lr_features);
        c.lr_displacement = j["lr"].value("displacement", c.lr_displacement);
        c.lr_position = j["lr"].value("position", c.lr_position);
        c.lr_final_scale = j["lr"].value("final_scale", c.lr_final_scale);
    }
    c.train_position = j.value("train_position", c.train_position);
    c.divergence_factor = j.value("divergence_factor", c.divergence_factor);
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    c.validate_every = j.value("validate_every", c.validate_every);
    c.validate();
    return c;
}

ModelGradient ModelGradient::zeros_like(const Model& model) {
    ModelGradient g;
    g.position.assign(model.position.texel_count(), Vec3::Zero());
    const std::size_t texels = static_cast<std::size_t>(model.config.point_map_size) *
                               model.config.point_map_size;
    g.displacement.assign(texels, Vec3::Zero());
    g.features.assign(texels * model.config.radiance.feature_channels, 0.0);
    g.mlp = RadianceGradient::zeros_like(model.mlp);
    return g;
}

void ModelGradient::set_zero() {
    std::fill(position.begin(), position.end(), Vec3::Zero());
    std::fill(displacement.begin(), displacement.end(), Vec3::Zero());
    std::fill(features.begin(), features.end(), 0.0);
    mlp.set_zero();
}

ModelGradient& ModelGradient::operator+=(const ModelGradient& o) {
    for (std::size_t i = 0; i < position.size(); ++i) {
        position[i] += o.position[i];
    }
    for (std::size_t i = 0; i < displacement.size(); ++i) {
        displacement[i] += o.displacement[i];
    }
    for (std::size_t i = 0; i < features.size(); ++i) {
        features[i] += o.features[i];
    }
    mlp += o.mlp;
    return *this;
}

namespace {

constexpr std::size_t kRaysPerBatch = 256;

// Per-thread accumulation of decoder-side gradients.
struct PartialGradient {
    std::vector<double> features;   // texels x channels
    std::vector<Vec3> points;       // per point
    RadianceGradient mlp;
};

} // namespace

IterationResult accumulate_gradients(const Model& model, int frame, const View& view,
                                     const UvPositionMap& reference_position,
                                     std::span<const Pixel> pixels, bool patch,
                                     const TrainConfig& cfg, std::uint64_t salt,
                                     ModelGradient& grad, const PatchLoss* patch_loss) {
    IterationResult res;
    const std::size_t n = pixels.size();
    if (n == 0) {
        return res;
    }
    grad.frame = frame;
    const FrameState state = prepare_frame(model, frame);
    const Rasterization rast = rasterize(model.position, view.camera);
    RenderConfig rc = model.config.render;
    rc.seed = cfg.seed;
    rc.jitter = true;
    const RenderScene scene{&state.cloud, state.index.get(), &model.mlp, &rast.depth};
    const int channels = state.cloud.channels;
    const bool heavy = rc.decoding == DecodingMode::Heavy;

    // Forward: keep every batch with its activations.
    const std::size_t batch_count = (n + kRaysPerBatch - 1) / kRaysPerBatch;
    std::vector<TracedBatch> batches(batch_count);
    const int threads =
        std::max(1, std::min<int>(cfg.threads > 0 ? cfg.threads : worker_count(),
                                  static_cast<int>(batch_count)));
    parallel_chunks(batch_count, threads, [&](int, std::size_t b0, std::size_t b1) {
        for (std::size_t b = b0; b < b1; ++b) {
            const std::size_t begin = b * kRaysPerBatch;
            const std::size_t end = std::min(n, begin + kRaysPerBatch);
            trace_pixels(batches[b], pixels.subspan(begin, end - begin), view.camera, scene, rc,
                         salt, true);
        }
    });

    // Losses and their gradients with respect to colour and depth per ray.
    std::vector<Vec3> rendered(n);
    std::vector<Vec3> reference(n);
    std::vector<double> depth(n);
    std::vector<double> ref_depth(n);
    std::vector<double> raster_depth(n);
    std::vector<std::uint8_t> ref_valid(n);
    std::vector<std::uint8_t> raster_valid(n);
    for (std::size_t b = 0; b < batch_count; ++b) {
        for (std::size_t k = 0; k < batches[b].rays.size(); ++k) {
            const TracedRay& tr = batches[b].rays[k];
            const std::size_t i = b * kRaysPerBatch + k;
            const int px = pixels[i][0];
            const int py = pixels[i][1];
            rendered[i] = tr.result.color;
            reference[i] = view.image.at(px, py);
            const bool opaque = tr.result.alpha > 0.5;
            depth[i] = opaque ? tr.depth() : 0.0;
            ref_depth[i] = view.depth.at(px, py);
            raster_depth[i] = rast.depth.at(px, py);
            ref_valid[i] = opaque && view.depth.is_hit(px, py);
            raster_valid[i] = rast.depth.is_hit(px, py) && view.depth.is_hit(px, py);
        }
        res.stats += batches[b].stats;
    }
    const LossWeights& w = cfg.weights;
    std::vector<Vec3> d_color(n, Vec3::Zero());
    std::vector<double> d_depth(n, 0.0);
    std::vector<double> d_raster(n, 0.0);
    res.loss.pho = photometric_loss(rendered, reference, d_color, w.pho);
    res.loss.d = masked_depth_loss(depth, ref_depth, ref_valid, cfg.thresholds.depth, d_depth, {},
                                   w.d);
    res.loss.rd = masked_depth_loss(raster_depth, ref_depth, raster_valid, cfg.thresholds.depth,
                                    d_raster, {}, w.rd);
    res.ray_loss.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        res.ray_loss[i] = (rendered[i] - reference[i]).squaredNorm();
    }
    if (patch && patch_loss && w.per > 0.0) {
        const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
        if (static_cast<std::size_t>(side) * side != n) {
            throw ConfigError("patch pixels do not form a square block");
        }
        Image img(side, side);
        Image ref(side, side);
        for (std::size_t i = 0; i < n; ++i) {
            img.set(static_cast<int>(i) % side, static_cast<int>(i) / side, rendered[i]);
            ref.set(static_cast<int>(i) % side, static_cast<int>(i) / side, reference[i]);
        }
        Image g;
        res.loss.per = patch_loss->evaluate(img, ref, &g);
        for (std::size_t i = 0; i < n; ++i) {
            d_color[i] += w.per * g.at(static_cast<int>(i) % side, static_cast<int>(i) / side);
        }
    }

    // Backward through integration and decoding.
    std::vector<PartialGradient> partial(static_cast<std::size_t>(threads));
    parallel_chunks(batch_count, threads, [&](int t, std::size_t b0, std::size_t b1) {
        PartialGradient& pg = partial[static_cast<std::size_t>(t)];
        pg.features.assign(grad.features.size(), 0.0);
        pg.points.assign(state.cloud.size(), Vec3::Zero());
        pg.mlp = RadianceGradient::zeros_like(model.mlp);
        for (std::size_t b = b0; b < b1; ++b) {
            TracedBatch& tb = batches[b];
            if (tb.batch.sample_count() == 0) {
                continue;
            }
            Eigen::MatrixXd upstream = Eigen::MatrixXd::Zero(4, tb.batch.sample_count());
            for (std::size_t k = 0; k < tb.rays.size(); ++k) {
                const TracedRay& tr = tb.rays[k];
                const std::size_t i = b * kRaysPerBatch + k;
                const double dz = d_depth[i];
                if (d_color[i].isZero() && dz == 0.0) {
                    continue;
                }
                const std::vector<Radiance> g = integrate_backward(
                    tr.samples, tr.radiance, tr.result, d_color[i], 0.0, dz * tr.z_per_t);
                for (std::size_t s = 0; s < g.size(); ++s) {
                    const int c = tr.column[s];
                    if (c >= 0) {
                        upstream(0, c) = g[s].sigma;
                        upstream.block<3, 1>(1, c) = g[s].color;
                    }
                }
            }
            decode_batch_backward(tb.batch, model.mlp, heavy, tb.cache, upstream, pg.mlp,
                                  rc.search_radius,
                                  [&](int id, std::span<const double> df, const Vec3& dp) {
                                      const std::size_t texel =
                                          state.cloud.texel_index(static_cast<std::size_t>(id));
                                      double* dst = pg.features.data() + texel * channels;
                                      for (int c = 0; c < channels; ++c) {
                                          dst[c] += df[static_cast<std::size_t>(c)];
                                      }
                                      pg.points[static_cast<std::size_t>(id)] += dp;
                                  });
        }
    });

    std::vector<Vec3> point_grad(state.cloud.size(), Vec3::Zero());
    for (const PartialGradient& pg : partial) {
        if (pg.features.empty()) {
            continue;
        }
        for (std::size_t i = 0; i < grad.features.size(); ++i) {
            grad.features[i] += pg.features[i];
        }
        for (std::size_t i = 0; i < point_grad.size(); ++i) {
            point_grad[i] += pg.points[i];
        }
        grad.mlp += pg.mlp;
    }

    // Points move with their displacement and with the upsampled position map.
    std::vector<Vec3> fine_grad(state.fine.texel_count(), Vec3::Zero());
    for (std::size_t i = 0; i < point_grad.size(); ++i) {
        const std::size_t texel = state.cloud.texel_index(i);
        if (model.config.use_displacement) {
            grad.displacement[texel] += point_grad[i];
        }
        fine_grad[texel] += point_grad[i];
    }
    if (cfg.train_position) {
        const std::vector<Vec3> coarse = model.upsampler().apply_transpose(fine_grad);
        for (std::size_t i = 0; i < coarse.size(); ++i) {
            grad.position[i] += coarse[i];
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (d_raster[i] == 0.0) {
                continue;
            }
            const std::size_t idx = rast.depth.index(pixels[i][0], pixels[i][1]);
            for (int k = 0; k < 3; ++k) {
                grad.position[rast.vertex[idx][k]] += d_raster[i] * rast.dz_dvertex[idx][k];
            }
        }
    }

    // Map-level regularisers.
    const FrameParameters& fp = model.frames.at(static_cast<std::size_t>(frame));
    res.loss.m = position_loss(model.position, reference_position,
                               cfg.train_position ? std::span<Vec3>(grad.position)
                                                  : std::span<Vec3>(),
                               w.m);
    if (cfg.train_position) {
        res.loss.s = tv_loss(model.position, grad.position, w.s);
    } else {
        res.loss.s = tv_loss(model.position);
    }
    res.loss.disp = displacement_loss(fp.displacement, cfg.thresholds.displacement,
                                      model.config.use_displacement
                                          ? std::span<Vec3>(grad.displacement)
                                          : std::span<Vec3>(),
                                      w.disp);
    res.loss.combine(w);
    if (!res.loss.all_finite()) {
        throw NumericalError("non-finite training loss: " + res.loss.to_json().dump());
    }
    return res;
}

namespace {

std::span<double> flat(std::vector<Vec3>& v) { return {v.data()->data(), 3 * v.size()}; }
std::span<const double> flat(const std::vector<Vec3>& v) {
    return {v.data()->data(), 3 * v.size()};
}

void update_net(Mlp& net, const MlpGradient& g, Adam& adam, std::size_t& slot, double lr) {
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
        DenseLayer& layer = net.layers()[l];
        adam.update(slot++, {layer.weight.data(), static_cast<std::size_t>(layer.weight.size())},
                    {g.weight[l].data(), static_cast<std::size_t>(g.weight[l].size())}, lr);
        adam.update(slot++, {layer.bias.data(), static_cast<std::size_t>(layer.bias.size())},
                    {g.bias[l].data(), static_cast<std::size_t>(g.bias[l].size())}, lr);
    }
}

} // namespace

void apply_gradients(Model& model, const ModelGradient& grad, Adam& adam, const TrainConfig& cfg,
                     double lr_scale) {
    adam.begin_step();
    std::size_t slot = 0;
    const double lr_mlp = lr_scale * cfg.lr_mlp;
    update_net(model.mlp.density, grad.mlp.density, adam, slot, lr_mlp);
    update_net(model.mlp.color, grad.mlp.color, adam, slot, lr_mlp);
    update_net(model.mlp.pointwise, grad.mlp.pointwise, adam, slot, lr_mlp);
    const std::size_t position_slot = slot++;
    if (cfg.train_position) {
        adam.update(position_slot, flat(model.position.positions), flat(grad.position),
                    lr_scale * cfg.lr_position);
    }
    // Every frame owns its own pair of moment slots.
    slot += 2 * static_cast<std::size_t>(grad.frame);
    FrameParameters& fp = model.frames.at(static_cast<std::size_t>(grad.frame));
    adam.update(slot, fp.features.values, grad.features, lr_scale * cfg.lr_features);
    if (model.config.use_displacement) {
        adam.update(slot + 1, flat(fp.displacement.displacements), flat(grad.displacement),
                    lr_scale * cfg.lr_displacement);
    }
}

nlohmann::json EpochRecord::to_json() const {
    nlohmann::json j{{"epoch", epoch},
                     {"stage", to_string(stage)},
                     {"losses", loss.to_json()},
                     {"wall_ms", wall_ms}};
    j["val_mse"] = val_mse ? nlohmann::json(*val_mse) : nlohmann::json(nullptr);
    return j;
}

std::optional<double> validation_mse(const Model& model, const Dataset& ds,
                                     const RenderConfig& cfg) {
    const std::vector<std::size_t> val = ds.validation_views();
    if (val.empty()) {
        return std::nullopt;
    }
    double total = 0.0;
    for (std::size_t v : val) {
        const View& view = ds.views[v];
        const RenderOutput out = render_model(model, view.frame, view.camera, cfg);
        total += mean_squared_error(out.image, view.image);
    }
    return total / static_cast<double>(val.size());
}

TrainResult train(const Dataset& ds, const TrainConfig& cfg, std::ostream* log) {
    cfg.validate();
    const std::vector<std::size_t> train_views = ds.training_views();
    if (train_views.empty()) {
        throw ConfigError("dataset has no training view");
    }
    const auto start = std::chrono::steady_clock::now();
    TrainResult result;
    result.model = Model(cfg.model, ds.coarse_position, ds.frame_count());
    Model& model = result.model;
    Adam adam(cfg.adam);
    std::mt19937_64 rng(cfg.seed);
    const GradientStructureLoss patch_loss;
    RenderConfig val_cfg = model.config.render;
    val_cfg.threads = cfg.threads;

    std::size_t train_pixels = 0;
    std::vector<ErrorGrid> grids;
    for (std::size_t v : train_views) {
        const View& view = ds.views[v];
        train_pixels += view.image.pixel_count();
        grids.emplace_back(view.image.width, view.image.height, cfg.grid_g, cfg.grid_g,
                           cfg.grid_ema);
    }
    bool refined = false;

    ModelGradient grad = ModelGradient::zeros_like(model);
    std::optional<double> initial_loss;
    const int total_epochs = cfg.epochs_g + cfg.epochs_e + cfg.epochs_p;
    auto stage_of = [&](int epoch) {
        const Stage stage = epoch < cfg.epochs_g                 ? Stage::Grid
                            : epoch < cfg.epochs_g + cfg.epochs_e ? Stage::Error
                                                                  : Stage::Patch;
        if (cfg.schedule == Schedule::Grid ||
            (cfg.schedule == Schedule::Gp && stage == Stage::Error)) {
            return Stage::Grid;
        }
        return stage;
    };
    auto rays_of = [&](Stage stage) {
        return stage == Stage::Patch ? cfg.patch_size * cfg.patch_size : cfg.rays_per_iteration;
    };
    auto iterations_of = [&](Stage stage) {
        const auto rays = static_cast<std::size_t>(rays_of(stage));
        return cfg.iterations_per_epoch > 0
                   ? cfg.iterations_per_epoch
                   : static_cast<int>((train_pixels + rays - 1) / rays);
    };
    std::uint64_t total_iterations = 0;
    for (int epoch = 0; epoch < total_epochs; ++epoch) {
        total_iterations += static_cast<std::uint64_t>(iterations_of(stage_of(epoch)));
    }
    std::uint64_t iteration = 0;
    for (int epoch = 0; epoch < total_epochs; ++epoch) {
        const Stage stage = stage_of(epoch);
        if (stage == Stage::Error && !refined) {
            for (ErrorGrid& g : grids) {
                g = g.refined(cfg.grid_e, cfg.grid_e);
            }
            refined = true;
        }
        const int rays = rays_of(stage);
        const int iterations = iterations_of(stage);

        EpochRecord record;
        record.epoch = epoch;
        record.stage = stage;
        for (int it = 0; it < iterations; ++it, ++iteration) {
            const std::size_t pick =
                std::uniform_int_distribution<std::size_t>(0, train_views.size() - 1)(rng);
            const View& view = ds.views[train_views[pick]];
            ErrorGrid& grid = grids[pick];
            std::vector<Pixel> pixels;
            switch (stage) {
            case Stage::Grid: {
                const int per_draw = cfg.grid_g * cfg.grid_g;
                const int draws = std::max(1, rays / per_draw);
                for (int d = 0; d < draws; ++d) {
                    const std::vector<Pixel> p = grid_sample(view.image.width, view.image.height,
                                                             cfg.grid_g, cfg.grid_g, rng);
                    pixels.insert(pixels.end(), p.begin(), p.end());
                }
                break;
            }
            case Stage::Error:
                pixels = error_sample(grid, rays, rng);
                break;
            case Stage::Patch:
                pixels = patch_sample(view.image.width, view.image.height, cfg.patch_size, rng);
                break;
            }

            grad.set_zero();
            const IterationResult ir =
                accumulate_gradients(model, view.frame, view, ds.coarse_position, pixels,
                                     stage == Stage::Patch, cfg, iteration, grad, &patch_loss);
            if (!initial_loss) {
                initial_loss = ir.loss.total;
            }
            if (ir.loss.total > cfg.divergence_factor * std::max(*initial_loss, 1e-12)) {
                if (!cfg.divergence_checkpoint.empty()) {
                    model.save(cfg.divergence_checkpoint);
                }
                throw NumericalError("training diverged at iteration " +
                                     std::to_string(iteration) + ": loss " +
                                     std::to_string(ir.loss.total) + " vs initial " +
                                     std::to_string(*initial_loss));
            }
            if (stage != Stage::Patch) {
                grid.update_batch(pixels, ir.ray_loss);
            }
            const double progress =
                static_cast<double>(iteration) / static_cast<double>(std::max<std::uint64_t>(total_iterations, 1));
            apply_gradients(model, grad, adam, cfg, std::pow(cfg.lr_final_scale, progress));
            record.loss += ir.loss;
        }
        if (iterations > 0) {
            record.loss *= 1.0 / iterations;
        }
        if ((epoch + 1) % cfg.validate_every == 0 || epoch + 1 == total_epochs) {
            record.val_mse = validation_mse(model, ds, val_cfg);
            result.final_val_mse = record.val_mse;
        }
        record.wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                .count();
        if (log) {
            *log << record.to_json().dump() << '\n' << std::flush;
        }
        result.epochs.push_back(record);
    }
    if (total_epochs == 0) {
        result.final_val_mse = validation_mse(model, ds, val_cfg);
    }
    return result;
}

} // namespace npva
