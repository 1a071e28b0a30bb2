// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "npva/dataset.hpp"
#include "npva/losses.hpp"
#include "npva/model.hpp"
#include "npva/optimizer.hpp"
#include "npva/ray_schedule.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace npva {

enum class Stage { Grid, Error, Patch };
std::string to_string(Stage s);

/// Which ray samplers the epochs use: "gep" (grid, error, patch), "gp" (no
/// error stage: its epochs sample by grid) or "grid" (grid sampling throughout).
enum class Schedule { Gep, Gp, Grid };
std::string to_string(Schedule s);
Schedule schedule_from_string(const std::string& s);

struct TrainConfig {
    static constexpr int kSchemaVersion = 1;

    ModelConfig model;
    Schedule schedule = Schedule::Gep;
    int epochs_g = 10;
    int epochs_e = 15;
    int epochs_p = 5;
    int rays_per_iteration = 1024;
    int iterations_per_epoch = 0; // 0: training pixels / rays_per_iteration, rounded up
    int grid_g = 8;
    int grid_e = 32;
    double grid_ema = 0.1;
    int patch_size = 32;
    LossWeights weights;
    LossThresholds thresholds;
    AdamConfig adam;
    // Per-group step sizes. Features start near zero and need larger steps than the decoder.
    // Displacements are in mm and have to cover a few mm of proxy error; the position map
    // only needs small corrections.
    double lr_mlp = 1e-3;
    double lr_features = 1e-2;
    double lr_displacement = 1e-1;
    double lr_position = 1e-4;
    double lr_final_scale = 0.1; // every rate decays exponentially to this fraction by the last step
    bool train_position = true;
    double divergence_factor = 1e3;
    std::uint64_t seed = 1;
    int threads = 0;
    int validate_every = 1;
    std::filesystem::path divergence_checkpoint; // empty: no checkpoint on divergence

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

/// Gradient of the training loss with respect to every free parameter.
struct ModelGradient {
    std::vector<Vec3> position;     // coarse texels
    std::vector<Vec3> displacement; // point-map texels
    std::vector<double> features;   // point-map texels x channels
    RadianceGradient mlp;
    int frame = 0; // the frame whose maps `displacement` and `features` belong to

    static ModelGradient zeros_like(const Model& model);
    void set_zero();
    ModelGradient& operator+=(const ModelGradient& o);
};

struct IterationResult {
    LossBreakdown loss;
    std::vector<double> ray_loss; // squared colour error per ray
    RenderStats stats;
};

/// Renders `pixels` of `view`, evaluates every active loss term and adds the
/// gradient of the weighted total into `grad`. `patch` marks the pixels as a
/// row-major square block, enabling the patch loss.
IterationResult accumulate_gradients(const Model& model, int frame, const View& view,
                                     const UvPositionMap& reference_position,
                                     std::span<const Pixel> pixels, bool patch,
                                     const TrainConfig& cfg, std::uint64_t salt,
                                     ModelGradient& grad, const PatchLoss* patch_loss = nullptr);

/// One Adam step on every trainable group, with every rate multiplied by `lr_scale`.
void apply_gradients(Model& model, const ModelGradient& grad, Adam& adam, const TrainConfig& cfg,
                     double lr_scale = 1.0);

struct EpochRecord {
    int epoch = 0;
    Stage stage = Stage::Grid;
    LossBreakdown loss; // mean over the epoch's iterations
    std::optional<double> val_mse;
    double wall_ms = 0.0;

    nlohmann::json to_json() const;
};

struct TrainResult {
    Model model;
    std::vector<EpochRecord> epochs;
    std::optional<double> final_val_mse;
};

/// Mean MSE of the model's renders of the dataset's held-out views.
std::optional<double> validation_mse(const Model& model, const Dataset& ds,
                                     const RenderConfig& cfg);

/// Runs the configured stages. With `log` set, one JSON line per epoch is
/// written as it completes.
TrainResult train(const Dataset& ds, const TrainConfig& cfg, std::ostream* log = nullptr);

} // namespace npva
