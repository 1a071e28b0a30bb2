// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#include "npva/model.hpp"

#include "npva/blob.hpp"
#include "npva/error.hpp"
#include "npva/json_util.hpp"

#include <fstream>
#include <random>

namespace npva {

namespace {

constexpr int kCheckpointVersion = 1;

std::vector<int> int_list(const nlohmann::json& j, const std::vector<int>& fallback) {
    return j.is_null() ? fallback : j.get<std::vector<int>>();
}

} // namespace

void ModelConfig::validate() const {
    if (point_map_size < 2) {
        throw ConfigError("model: point_map_size must be at least 2");
    }
    if (radiance.feature_channels < 1 || !(feature_init_std >= 0.0)) {
        throw ConfigError("model: need feature channels >= 1 and feature_init_std >= 0");
    }
    render.validate();
}

nlohmann::json ModelConfig::to_json() const {
    return {{"point_map_size", point_map_size},
            {"feature_channels", radiance.feature_channels},
            {"input_levels", radiance.input_levels},
            {"dir_levels", radiance.dir_levels},
            {"density_hidden", radiance.density_hidden},
            {"color_hidden", radiance.color_hidden},
            {"pointwise_hidden", radiance.pointwise_hidden},
            {"heavy_decoder", heavy_decoder},
            {"use_displacement", use_displacement},
            {"feature_init_std", feature_init_std},
            {"seed", seed},
            {"render", render.to_json()}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    check_keys(j,
               {"point_map_size", "feature_channels", "input_levels", "dir_levels",
                "density_hidden", "color_hidden", "pointwise_hidden", "heavy_decoder",
                "use_displacement", "feature_init_std", "seed", "render"},
               "model config");
    ModelConfig c;
    c.point_map_size = j.value("point_map_size", c.point_map_size);
    c.radiance.feature_channels = j.value("feature_channels", c.radiance.feature_channels);
    c.radiance.input_levels = j.value("input_levels", c.radiance.input_levels);
    c.radiance.dir_levels = j.value("dir_levels", c.radiance.dir_levels);
    c.radiance.density_hidden =
        int_list(j.value("density_hidden", nlohmann::json()), c.radiance.density_hidden);
    c.radiance.color_hidden =
        int_list(j.value("color_hidden", nlohmann::json()), c.radiance.color_hidden);
    c.radiance.pointwise_hidden =
        int_list(j.value("pointwise_hidden", nlohmann::json()), c.radiance.pointwise_hidden);
    c.heavy_decoder = j.value("heavy_decoder", c.heavy_decoder);
    c.use_displacement = j.value("use_displacement", c.use_displacement);
    c.feature_init_std = j.value("feature_init_std", c.feature_init_std);
    c.seed = j.value("seed", c.seed);
    if (j.contains("render")) {
        c.render = RenderConfig::from_json(j["render"]);
    }
    c.validate();
    return c;
}

Model::Model(const ModelConfig& cfg, const UvPositionMap& coarse, int frame_count)
    : config(cfg), position(coarse), mlp(cfg.radiance, cfg.heavy_decoder) {
    config.validate();
    position.validate();
    if (frame_count < 1) {
        throw ConfigError("model needs at least one frame");
    }
    for (Vec3& p : position.positions) {
        p = p.unaryExpr([](double v) { return snap_f32(v); });
    }
    upsampler_ = std::make_shared<Upsampler>(position, config.point_map_size);
    std::mt19937_64 rng(config.seed);
    mlp.initialize(rng);
    std::normal_distribution<double> normal(0.0, config.feature_init_std);
    for (int f = 0; f < frame_count; ++f) {
        FrameParameters fp{UvDisplacementMap(config.point_map_size),
                           UvFeatureMap(config.point_map_size, config.radiance.feature_channels)};
        if (config.feature_init_std > 0.0) {
            for (double& v : fp.features.values) {
                v = snap_f32(normal(rng));
            }
        }
        frames.push_back(std::move(fp));
    }
}

NeuralPointCloud Model::point_cloud(int frame) const {
    const FrameParameters& fp = frames.at(static_cast<std::size_t>(frame));
    return compose_points(upsampled(), fp.displacement, fp.features);
}

void Model::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["schema_version"] = kCheckpointVersion;
    j["model"] = config.to_json();
    j["frames"] = frames.size();
    j["position"] = "position.npva";
    j["mlp"] = "mlp.npva";
    save_blob(dir / "position.npva", position.to_blob());
    for (std::size_t f = 0; f < frames.size(); ++f) {
        const std::string stem = "frame_" + std::to_string(f);
        save_blob(dir / (stem + "_displacement.npva"), frames[f].displacement.to_blob());
        save_blob(dir / (stem + "_features.npva"), frames[f].features.to_blob());
    }
    std::vector<Blob> blobs = mlp.density.to_blobs();
    for (const Mlp* net : {&mlp.color, &mlp.pointwise}) {
        std::vector<Blob> more = net->to_blobs();
        blobs.insert(blobs.end(), more.begin(), more.end());
    }
    save_blobs(dir / "mlp.npva", blobs);
    std::ofstream out(dir / "checkpoint.json");
    if (!out) {
        throw IoError("cannot write " + (dir / "checkpoint.json").string());
    }
    out << j.dump(2) << '\n';
}

Model Model::load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "checkpoint.json");
    if (!in) {
        throw IoError("cannot read " + (dir / "checkpoint.json").string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed checkpoint.json: " + std::string(e.what()));
    }
    if (j.value("schema_version", 0) != kCheckpointVersion) {
        throw IoError("checkpoint.json: unsupported schema_version");
    }
    const ModelConfig cfg = ModelConfig::from_json(j.at("model"));
    const UvPositionMap pos = UvPositionMap::from_blob(load_blob(dir / "position.npva"));
    const int frame_count = j.at("frames").get<int>();
    ModelConfig shell = cfg;
    shell.feature_init_std = 0.0;
    Model m(shell, pos, frame_count);
    m.config = cfg;
    m.position = pos;
    for (int f = 0; f < frame_count; ++f) {
        const std::string stem = "frame_" + std::to_string(f);
        m.frames[f].displacement =
            UvDisplacementMap::from_blob(load_blob(dir / (stem + "_displacement.npva")));
        m.frames[f].features = UvFeatureMap::from_blob(load_blob(dir / (stem + "_features.npva")));
        if (m.frames[f].displacement.size != cfg.point_map_size ||
            m.frames[f].features.size != cfg.point_map_size ||
            m.frames[f].features.channels != cfg.radiance.feature_channels) {
            throw IoError("checkpoint frame maps do not match the model config");
        }
    }
    const std::vector<Blob> blobs = load_blobs(dir / "mlp.npva");
    std::size_t offset = 0;
    for (Mlp* net : {&m.mlp.density, &m.mlp.color, &m.mlp.pointwise}) {
        const std::size_t n = 2 * net->layers().size();
        if (offset + n > blobs.size()) {
            throw IoError("mlp.npva holds fewer layers than the model config needs");
        }
        net->load_blobs(std::span<const Blob>(blobs.data() + offset, n));
        offset += n;
    }
    if (offset != blobs.size()) {
        throw IoError("mlp.npva holds more layers than the model config needs");
    }
    return m;
}

FrameState prepare_frame(const Model& model, int frame) {
    FrameState s;
    s.fine = model.upsampled();
    const FrameParameters& fp = model.frames.at(static_cast<std::size_t>(frame));
    s.cloud = compose_points(s.fine, fp.displacement, fp.features);
    if (!s.cloud.empty()) {
        s.index = std::make_unique<PointIndex>(s.cloud.points, model.config.render.search_radius);
    }
    return s;
}

RenderOutput render_model(const Model& model, int frame, const Camera& cam,
                          const RenderConfig& cfg) {
    const FrameState state = prepare_frame(model, frame);
    const DepthMap drast = rasterize_depth(model.position, cam);
    RenderScene scene{&state.cloud, state.index.get(), &model.mlp, &drast};
    return render_image(cam, scene, cfg);
}

} // namespace npva
