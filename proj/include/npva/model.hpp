// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "npva/geometry.hpp"
#include "npva/radiance.hpp"
#include "npva/renderer.hpp"
#include "npva/spatial_index.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

namespace npva {

struct ModelConfig {
    int point_map_size = 256; // the coarse position map is upsampled to this
    RadianceConfig radiance;
    bool heavy_decoder = false;
    bool use_displacement = true;
    double feature_init_std = 0.1;
    std::uint64_t seed = 1;
    RenderConfig render;

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

/// Per-frame free parameters. Frames share the position map and the decoder.
struct FrameParameters {
    UvDisplacementMap displacement;
    UvFeatureMap features;
};

class Model {
  public:
    Model() = default;
    /// Fresh model around a coarse position map, with `frames` parameter sets.
    Model(const ModelConfig& config, const UvPositionMap& coarse, int frames = 1);

    ModelConfig config;
    UvPositionMap position;
    std::vector<FrameParameters> frames;
    RadianceMlp mlp;

    const Upsampler& upsampler() const { return *upsampler_; }
    UvPositionMap upsampled() const { return upsampler_->apply(position); }
    NeuralPointCloud point_cloud(int frame) const;

    void save(const std::filesystem::path& dir) const;
    static Model load(const std::filesystem::path& dir);

  private:
    std::shared_ptr<const Upsampler> upsampler_;
};

/// Everything a render of one frame needs, derived from the model.
struct FrameState {
    UvPositionMap fine;
    NeuralPointCloud cloud;
    std::unique_ptr<PointIndex> index;
};

FrameState prepare_frame(const Model& model, int frame);

/// Renders frame `frame` of the model from `cam`, rasterizing the coarse map
/// for depth guidance.
RenderOutput render_model(const Model& model, int frame, const Camera& cam,
                          const RenderConfig& cfg);

} // namespace npva
