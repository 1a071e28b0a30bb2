// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "npva/dataset.hpp"
#include "npva/model.hpp"
#include "npva/trainer.hpp"

#include <json.hpp>

#include <iosfwd>
#include <string>
#include <vector>

namespace npva {

/// Close-up camera looking at the front of the model's point cloud, framed so
/// that every pixel sees the surface.
Camera closeup_camera(const Model& model, int width, int height);

struct DecodeTiming {
    std::size_t rays = 0;
    std::size_t shading_points = 0;
    std::size_t neighbor_pairs = 0;
    double light_ms = 0.0; // best of `repeats`
    double heavy_ms = 0.0;

    double light_per_ray_ms() const { return rays ? light_ms / rays : 0.0; }
    double heavy_per_ray_ms() const { return rays ? heavy_ms / rays : 0.0; }
};

/// Times lightweight and heavy decoding of the same neighbourhoods: the
/// shading points of a patch-depth render of `cam` that have all K neighbours. A model without a
/// per-neighbour network gets a randomly initialised one for the heavy path.
DecodeTiming time_decoders(const Model& model, const Camera& cam, int max_rays = 4096,
                           int repeats = 3);

struct BenchResult {
    RenderStats patch;
    RenderStats uniform;
    DecodeTiming decode;

    double decoder_eval_ratio() const;
    double wall_ratio() const;
    nlohmann::json to_json() const;
};

/// Renders `cam` with patch-depth sampling and with the uniform baseline,
/// taking the faster of `repeats` runs of each, and times the two decoders.
BenchResult bench(const Model& model, const Camera& cam, const RenderConfig& cfg, int repeats = 3);

/// Named ablations: "points", "displacement", "radius", "decoding",
/// "sampling", "gep".
std::vector<std::string> ablation_names();

struct AblationRun {
    std::string variant;
    std::uint64_t seed = 0;
    double val_mse = 0.0;
    double wall_ms = 0.0;
};

struct AblationResult {
    std::string name;
    std::vector<AblationRun> runs;

    /// Median held-out MSE of a variant over its seeds.
    double median_mse(const std::string& variant) const;
    std::vector<std::string> variants() const;
    nlohmann::json to_json() const;
};

/// Variants of `base` making up an ablation, by name.
std::vector<std::pair<std::string, TrainConfig>> ablation_variants(const std::string& name,
                                                                   const TrainConfig& base);

/// Trains every variant once per seed and records the held-out MSE.
AblationResult run_ablation(const std::string& name, const Dataset& ds, const TrainConfig& base,
                            const std::vector<std::uint64_t>& seeds, std::ostream* progress = nullptr);

} // namespace npva
