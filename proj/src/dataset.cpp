// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#include "npva/dataset.hpp"

#include "npva/blob.hpp"
#include "npva/error.hpp"
#include "npva/json_util.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace npva {

namespace {

constexpr int kSchemaVersion = 1;

Blob image_blob(const Image& img) {
    Blob b{static_cast<std::uint32_t>(img.width), static_cast<std::uint32_t>(img.height), 3, {}};
    b.values.assign(img.rgb.begin(), img.rgb.end());
    return b;
}

Image blob_image(const Blob& b) {
    if (b.channels != 3) {
        throw IoError("image blob must have three channels");
    }
    Image img(static_cast<int>(b.width), static_cast<int>(b.height));
    std::copy(b.values.begin(), b.values.end(), img.rgb.begin());
    return img;
}

Blob depth_blob(const DepthMap& d) {
    Blob b{static_cast<std::uint32_t>(d.width), static_cast<std::uint32_t>(d.height), 2, {}};
    for (std::size_t i = 0; i < d.depth.size(); ++i) {
        b.values.push_back(static_cast<float>(d.depth[i]));
        b.values.push_back(d.hit[i] ? 1.0f : 0.0f);
    }
    return b;
}

DepthMap blob_depth(const Blob& b) {
    if (b.channels != 2) {
        throw IoError("depth blob must have two channels");
    }
    DepthMap d(static_cast<int>(b.width), static_cast<int>(b.height));
    for (std::size_t i = 0; i < d.depth.size(); ++i) {
        d.depth[i] = b.values[2 * i];
        d.hit[i] = b.values[2 * i + 1] != 0.0f;
    }
    return d;
}

// Quantise to the float32 lattice so a saved and reloaded dataset is identical
// to the in-memory one.
void snap(Image& img) {
    for (double& v : img.rgb) {
        v = snap_f32(v);
    }
}

void snap(DepthMap& d) {
    for (double& v : d.depth) {
        v = snap_f32(v);
    }
}

void snap(UvPositionMap& m) {
    for (Vec3& p : m.positions) {
        p = p.unaryExpr([](double v) { return snap_f32(v); });
    }
}

} // namespace

void DatasetConfig::validate() const {
    if (views < 1 || held_out < 0 || width < 1 || height < 1) {
        throw ConfigError("dataset: need at least one view and a positive resolution");
    }
    if (!(distance > 0.0) || !(fov_deg > 0.0 && fov_deg < 170.0) || !(arc_deg >= 0.0)) {
        throw ConfigError("dataset: bad camera distance, field of view or arc");
    }
    if (coarse_size < 4 || n_dense < 256) {
        throw ConfigError("dataset: coarse_size >= 4 and n_dense >= 256 required");
    }
}

nlohmann::json DatasetConfig::to_json() const {
    return {{"views", views},
            {"held_out", held_out},
            {"width", width},
            {"height", height},
            {"distance", distance},
            {"fov_deg", fov_deg},
            {"arc_deg", arc_deg},
            {"elevation_deg", elevation_deg},
            {"coarse_size", coarse_size},
            {"n_dense", n_dense}};
}

DatasetConfig DatasetConfig::from_json(const nlohmann::json& j) {
    check_keys(j,
               {"views", "held_out", "width", "height", "distance", "fov_deg", "arc_deg",
                "elevation_deg", "coarse_size", "n_dense"},
               "dataset config");
    DatasetConfig c;
    c.views = j.value("views", c.views);
    c.held_out = j.value("held_out", c.held_out);
    c.width = j.value("width", c.width);
    c.height = j.value("height", c.height);
    c.distance = j.value("distance", c.distance);
    c.fov_deg = j.value("fov_deg", c.fov_deg);
    c.arc_deg = j.value("arc_deg", c.arc_deg);
    c.elevation_deg = j.value("elevation_deg", c.elevation_deg);
    c.coarse_size = j.value("coarse_size", c.coarse_size);
    c.n_dense = j.value("n_dense", c.n_dense);
    c.validate();
    return c;
}

std::vector<std::size_t> Dataset::training_views() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < views.size(); ++i) {
        if (!views[i].held_out) {
            out.push_back(i);
        }
    }
    return out;
}

std::vector<std::size_t> Dataset::validation_views() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < views.size(); ++i) {
        if (views[i].held_out) {
            out.push_back(i);
        }
    }
    return out;
}

int Dataset::frame_count() const {
    int n = 0;
    for (const View& v : views) {
        n = std::max(n, v.frame + 1);
    }
    return n;
}

std::vector<Camera> arc_cameras(const SyntheticScene& scene, const DatasetConfig& cfg,
                                std::vector<bool>* held_out) {
    cfg.validate();
    const double deg = std::numbers::pi / 180.0;
    std::vector<double> azimuths;
    std::vector<bool> held;
    const double spacing = cfg.views > 1 ? cfg.arc_deg / (cfg.views - 1) : 0.0;
    for (int i = 0; i < cfg.views; ++i) {
        azimuths.push_back(cfg.views > 1 ? -0.5 * cfg.arc_deg + spacing * i : 0.0);
        held.push_back(false);
    }
    for (int j = 0; j < cfg.held_out; ++j) {
        double az = 0.0;
        if (cfg.views == 1) {
            az = 10.0 * (j + 1);
        } else {
            const int k = std::clamp((cfg.views - 2) / 2 + j - (cfg.held_out - 1) / 2, 0,
                                     cfg.views - 2);
            az = azimuths[static_cast<std::size_t>(k)] + 0.5 * spacing;
        }
        azimuths.push_back(az);
        held.push_back(true);
    }
    const double focal = 0.5 * cfg.width / std::tan(0.5 * cfg.fov_deg * deg);
    const double el = cfg.elevation_deg * deg;
    std::vector<Camera> cams;
    for (double az : azimuths) {
        const Vec3 eye = scene.center + cfg.distance * Vec3(std::sin(az * deg) * std::cos(el),
                                                            std::sin(el),
                                                            std::cos(az * deg) * std::cos(el));
        cams.push_back(
            Camera::look_at(eye, scene.center, Vec3::UnitY(), focal, cfg.width, cfg.height));
    }
    if (held_out) {
        *held_out = held;
    }
    return cams;
}

Dataset make_dataset(const SyntheticScene& scene, const DatasetConfig& cfg, int threads) {
    scene.validate();
    cfg.validate();
    Dataset ds;
    ds.scene = scene;
    ds.config = cfg;
    std::vector<bool> held;
    const std::vector<Camera> cams = arc_cameras(scene, cfg, &held);
    for (std::size_t i = 0; i < cams.size(); ++i) {
        OracleRender r = oracle_render(scene, cams[i], cfg.n_dense, threads);
        snap(r.image);
        snap(r.depth);
        ds.views.push_back({cams[i], std::move(r.image), std::move(r.depth), held[i], 0});
    }
    ds.coarse_position = surface_position_map(scene, cfg.coarse_size, false);
    snap(ds.coarse_position);
    return ds;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["schema_version"] = kSchemaVersion;
    j["scene"] = ds.scene.to_json();
    j["config"] = ds.config.to_json();
    j["coarse_position"] = "coarse_position.npva";
    save_blob(dir / "coarse_position.npva", ds.coarse_position.to_blob());
    for (std::size_t i = 0; i < ds.views.size(); ++i) {
        const View& v = ds.views[i];
        const std::string stem = "view_" + std::to_string(i);
        save_blob(dir / (stem + ".npva"), image_blob(v.image));
        save_blob(dir / (stem + "_depth.npva"), depth_blob(v.depth));
        write_ppm(dir / (stem + ".ppm"), v.image);
        write_depth_pgm(dir / (stem + "_depth.pgm"), v.depth);
        j["views"].push_back({{"camera", v.camera.to_json()},
                              {"image", stem + ".npva"},
                              {"depth", stem + "_depth.npva"},
                              {"held_out", v.held_out},
                              {"frame", v.frame}});
    }
    std::ofstream out(dir / "dataset.json");
    if (!out) {
        throw IoError("cannot write " + (dir / "dataset.json").string());
    }
    out << j.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "dataset.json");
    if (!in) {
        throw IoError("cannot read " + (dir / "dataset.json").string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed dataset.json: " + std::string(e.what()));
    }
    if (j.value("schema_version", 0) != kSchemaVersion) {
        throw IoError("dataset.json: unsupported schema_version");
    }
    Dataset ds;
    ds.scene = SyntheticScene::from_json(j.at("scene"));
    ds.config = DatasetConfig::from_json(j.at("config"));
    ds.coarse_position =
        UvPositionMap::from_blob(load_blob(dir / j.at("coarse_position").get<std::string>()));
    for (const auto& v : j.at("views")) {
        View view;
        view.camera = Camera::from_json(v.at("camera"));
        view.image = blob_image(load_blob(dir / v.at("image").get<std::string>()));
        view.depth = blob_depth(load_blob(dir / v.at("depth").get<std::string>()));
        view.held_out = v.value("held_out", false);
        view.frame = v.value("frame", 0);
        ds.views.push_back(std::move(view));
    }
    return ds;
}

} // namespace npva
