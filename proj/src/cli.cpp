// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#include "npva/cli.hpp"

#include "npva/bench.hpp"
#include "npva/dataset.hpp"
#include "npva/error.hpp"
#include "npva/model.hpp"
#include "npva/scene.hpp"
#include "npva/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace npva {

namespace {

namespace fs = std::filesystem;

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const nlohmann::json& j, std::ostream& out) {
    if (path.empty()) {
        out << j.dump(2) << '\n';
        return;
    }
    std::ofstream f(path);
    if (!f) {
        throw IoError("cannot write " + path.string());
    }
    f << j.dump(2) << '\n';
}

// A scene file is either a bare scene or {"scene": ..., "dataset": ...}.
void read_scene_file(const fs::path& path, SyntheticScene& scene, DatasetConfig& cfg) {
    const nlohmann::json j = read_json(path);
    if (j.contains("scene")) {
        scene = SyntheticScene::from_json(j.at("scene"));
        if (j.contains("dataset")) {
            cfg = DatasetConfig::from_json(j.at("dataset"));
        }
    } else {
        scene = SyntheticScene::from_json(j);
    }
}

struct GenDataArgs {
    fs::path scene;
    fs::path out;
    std::optional<int> views;
    std::optional<int> held_out;
    std::optional<int> width;
    std::optional<int> height;
    std::optional<int> n_dense;
};

struct TrainArgs {
    fs::path config;
    fs::path data;
    fs::path out;
    fs::path log;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
};

struct RenderArgs {
    fs::path checkpoint;
    fs::path camera;
    fs::path data;
    int view = -1;
    int frame = 0;
    fs::path out;
    fs::path depth_out;
    std::optional<std::string> sampling;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
};

struct BenchArgs {
    fs::path checkpoint;
    fs::path camera;
    int size = 128;
    int repeats = 3;
    fs::path out;
};

struct EvalArgs {
    fs::path checkpoint;
    fs::path oracle_scene;
    fs::path data;
    bool all_views = false;
    fs::path out;
};

struct AblateArgs {
    std::string name;
    fs::path config;
    fs::path data;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    fs::path out;
};

int gen_data(const GenDataArgs& a, std::ostream& out) {
    SyntheticScene scene;
    DatasetConfig cfg;
    read_scene_file(a.scene, scene, cfg);
    if (a.views) cfg.views = *a.views;
    if (a.held_out) cfg.held_out = *a.held_out;
    if (a.width) cfg.width = *a.width;
    if (a.height) cfg.height = *a.height;
    if (a.n_dense) cfg.n_dense = *a.n_dense;
    cfg.validate();
    const Dataset ds = make_dataset(scene, cfg);
    save_dataset(a.out, ds);
    out << "wrote " << ds.views.size() << " views to " << a.out.string() << '\n';
    return 0;
}

int train_cmd(const TrainArgs& a, std::ostream& out) {
    TrainConfig cfg = TrainConfig::from_json(read_json(a.config));
    if (a.seed) {
        cfg.seed = *a.seed;
        cfg.model.seed = *a.seed;
    }
    if (a.threads) {
        cfg.threads = *a.threads;
        cfg.model.render.threads = *a.threads;
    }
    cfg.validate();
    const Dataset ds = load_dataset(a.data);
    std::ofstream log_file;
    std::ostream* log = nullptr;
    if (!a.log.empty()) {
        log_file.open(a.log);
        if (!log_file) {
            throw IoError("cannot write " + a.log.string());
        }
        log = &log_file;
    }
    const TrainResult result = train(ds, cfg, log);
    result.model.save(a.out);
    out << "trained " << result.epochs.size() << " epochs";
    if (result.final_val_mse) {
        out << ", held-out MSE " << *result.final_val_mse << " (PSNR "
            << psnr_from_mse(*result.final_val_mse) << " dB)";
    }
    out << '\n';
    return 0;
}

int render_cmd(const RenderArgs& a, std::ostream& out) {
    const Model model = Model::load(a.checkpoint);
    Camera cam;
    if (!a.camera.empty()) {
        cam = Camera::from_json(read_json(a.camera));
    } else if (!a.data.empty()) {
        const Dataset ds = load_dataset(a.data);
        if (a.view < 0 || a.view >= static_cast<int>(ds.views.size())) {
            throw ConfigError("render: --view out of range");
        }
        cam = ds.views[static_cast<std::size_t>(a.view)].camera;
    } else {
        throw ConfigError("render: need --camera or --data with --view");
    }
    RenderConfig rc = model.config.render;
    if (a.sampling) rc.sampling = sampling_mode_from_string(*a.sampling);
    if (a.seed) rc.seed = *a.seed;
    if (a.threads) rc.threads = *a.threads;
    rc.validate();
    const RenderOutput r = render_model(model, a.frame, cam, rc);
    write_ppm(a.out, r.image);
    if (!a.depth_out.empty()) {
        write_depth_pgm(a.depth_out, r.depth);
    }
    out << r.stats.to_json().dump() << '\n';
    return 0;
}

int bench_cmd(const BenchArgs& a, std::ostream& out) {
    const Model model = Model::load(a.checkpoint);
    const Camera cam = a.camera.empty() ? closeup_camera(model, a.size, a.size)
                                        : Camera::from_json(read_json(a.camera));
    const BenchResult r = bench(model, cam, model.config.render, a.repeats);
    write_json(a.out, r.to_json(), out);
    return 0;
}

int eval_cmd(const EvalArgs& a, std::ostream& out) {
    const Dataset ds = load_dataset(a.data);
    std::vector<std::size_t> ids = a.all_views ? std::vector<std::size_t>{} : ds.validation_views();
    if (ids.empty()) {
        for (std::size_t i = 0; i < ds.views.size(); ++i) ids.push_back(i);
    }
    std::optional<Model> model;
    std::optional<SyntheticScene> scene;
    if (!a.checkpoint.empty() == !a.oracle_scene.empty()) {
        throw ConfigError("eval: give exactly one of --checkpoint and --oracle-scene");
    }
    if (!a.checkpoint.empty()) {
        model = Model::load(a.checkpoint);
    } else {
        SyntheticScene s;
        DatasetConfig unused;
        read_scene_file(a.oracle_scene, s, unused);
        scene = s;
    }
    nlohmann::json j{{"views", nlohmann::json::array()}};
    double total = 0.0;
    for (std::size_t i : ids) {
        const View& v = ds.views[i];
        Image img;
        if (model) {
            img = render_model(*model, v.frame, v.camera, model->config.render).image;
        } else {
            img = oracle_render(*scene, v.camera, ds.config.n_dense).image;
            for (double& c : img.rgb) c = static_cast<double>(static_cast<float>(c));
        }
        const double mse = mean_squared_error(img, v.image);
        total += mse;
        j["views"].push_back({{"view", i}, {"mse", mse}, {"psnr", psnr_from_mse(mse)}});
    }
    const double mse = total / static_cast<double>(ids.size());
    j["mse"] = mse;
    j["psnr"] = psnr_from_mse(mse);
    write_json(a.out, j, out);
    return 0;
}

int ablate_cmd(const AblateArgs& a, std::ostream& out, std::ostream& err) {
    const TrainConfig base =
        a.config.empty() ? TrainConfig{} : TrainConfig::from_json(read_json(a.config));
    const Dataset ds = load_dataset(a.data);
    const AblationResult r = run_ablation(a.name, ds, base, a.seeds, &err);
    write_json(a.out, r.to_json(), out);
    return 0;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Neural point volumetric avatar renderer and trainer", "npva"};
    app.require_subcommand(1);

    GenDataArgs gd;
    auto* gen = app.add_subcommand("gen-data", "Render a synthetic dataset from a scene JSON");
    gen->add_option("--scene", gd.scene, "Scene JSON")->required()->check(CLI::ExistingFile);
    gen->add_option("--out", gd.out, "Output dataset directory")->required();
    gen->add_option("--views", gd.views, "Training views");
    gen->add_option("--held-out", gd.held_out, "Validation views");
    gen->add_option("--width", gd.width);
    gen->add_option("--height", gd.height);
    gen->add_option("--n-dense", gd.n_dense, "Oracle samples per ray");

    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "Fit a model to a dataset");
    tr->add_option("--config", ta.config, "Training config JSON")->required()->check(CLI::ExistingFile);
    tr->add_option("--data", ta.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    tr->add_option("--out", ta.out, "Checkpoint directory")->required();
    tr->add_option("--log", ta.log, "Training log (JSON lines)");
    tr->add_option("--seed", ta.seed);
    tr->add_option("--threads", ta.threads);

    RenderArgs ra;
    auto* re = app.add_subcommand("render", "Render a checkpoint");
    re->add_option("--checkpoint", ra.checkpoint)->required()->check(CLI::ExistingDirectory);
    re->add_option("--camera", ra.camera, "Camera JSON")->check(CLI::ExistingFile);
    re->add_option("--data", ra.data, "Dataset directory (with --view)")->check(CLI::ExistingDirectory);
    re->add_option("--view", ra.view);
    re->add_option("--frame", ra.frame);
    re->add_option("--out", ra.out, "Output PPM")->required();
    re->add_option("--depth", ra.depth_out, "Output depth PGM");
    re->add_option("--sampling", ra.sampling, "patch, pixel or uniform");
    re->add_option("--seed", ra.seed);
    re->add_option("--threads", ra.threads);

    BenchArgs ba;
    auto* be = app.add_subcommand("bench", "Compare sampling and decoding modes");
    be->add_option("--checkpoint", ba.checkpoint)->required()->check(CLI::ExistingDirectory);
    be->add_option("--camera", ba.camera, "Camera JSON (default: close-up)")->check(CLI::ExistingFile);
    be->add_option("--size", ba.size, "Close-up image size")->check(CLI::PositiveNumber);
    be->add_option("--repeats", ba.repeats)->check(CLI::PositiveNumber);
    be->add_option("--out", ba.out, "Output JSON (default: stdout)");

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "Held-out MSE/PSNR of a checkpoint");
    ev->add_option("--checkpoint", ea.checkpoint)->check(CLI::ExistingDirectory);
    ev->add_option("--oracle-scene", ea.oracle_scene, "Evaluate the scene oracle itself")
        ->check(CLI::ExistingFile);
    ev->add_option("--data", ea.data)->required()->check(CLI::ExistingDirectory);
    ev->add_flag("--all-views", ea.all_views, "Evaluate training views too");
    ev->add_option("--out", ea.out, "Output JSON (default: stdout)");

    AblateArgs aa;
    auto* ab = app.add_subcommand("ablate", "Run a named ablation");
    ab->add_option("--name", aa.name)->required()->check(CLI::IsMember(ablation_names()));
    ab->add_option("--config", aa.config, "Base training config JSON")->check(CLI::ExistingFile);
    ab->add_option("--data", aa.data)->required()->check(CLI::ExistingDirectory);
    ab->add_option("--seeds", aa.seeds)->delimiter(',');
    ab->add_option("--out", aa.out, "Output JSON (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (*gen) return gen_data(gd, out);
        if (*tr) return train_cmd(ta, out);
        if (*re) return render_cmd(ra, out);
        if (*be) return bench_cmd(ba, out);
        if (*ev) return eval_cmd(ea, out);
        if (*ab) return ablate_cmd(aa, out, err);
    } catch (const std::exception& e) {
        err << "npva: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

} // namespace npva
