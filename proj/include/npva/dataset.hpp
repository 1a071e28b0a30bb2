// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "npva/camera.hpp"
#include "npva/geometry.hpp"
#include "npva/image.hpp"
#include "npva/scene.hpp"

#include <json.hpp>

#include <filesystem>
#include <vector>

namespace npva {

struct DatasetConfig {
    int views = 4;    // training views
    int held_out = 1; // validation views, placed between training views
    int width = 128;
    int height = 128;
    double distance = 300.0; // mm from the scene centre
    double fov_deg = 28.0;   // horizontal
    double arc_deg = 60.0;   // azimuth span of the training cameras
    double elevation_deg = 10.0;
    int coarse_size = 64;
    int n_dense = 512;

    void validate() const;
    nlohmann::json to_json() const;
    static DatasetConfig from_json(const nlohmann::json& j);
};

struct View {
    Camera camera;
    Image image;
    DepthMap depth;
    bool held_out = false;
    int frame = 0;
};

struct Dataset {
    SyntheticScene scene;
    DatasetConfig config;
    std::vector<View> views;
    /// Coarse stand-in for tracked geometry: the undisplaced base surface.
    UvPositionMap coarse_position;

    std::vector<std::size_t> training_views() const;
    std::vector<std::size_t> validation_views() const;
    int frame_count() const;
};

/// Cameras on an arc around the scene's vertical axis, looking at its centre.
std::vector<Camera> arc_cameras(const SyntheticScene& scene, const DatasetConfig& cfg,
                                std::vector<bool>* held_out = nullptr);

Dataset make_dataset(const SyntheticScene& scene, const DatasetConfig& cfg, int threads = 0);

void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

} // namespace npva
