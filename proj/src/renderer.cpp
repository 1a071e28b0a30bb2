// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#include "npva/renderer.hpp"

#include "npva/error.hpp"
#include "npva/json_util.hpp"
#include "npva/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace npva {

void DepthPatchConfig::validate() const {
    if (stride < 1 || radius <= 0.0 || samples < 2 || delta_d <= 0.0) {
        throw ConfigError("depth patch config: need stride >= 1, radius > 0, samples >= 2, "
                          "delta_d > 0");
    }
}

namespace {

struct Entry {
    double t;
    double lo;
    double hi;
};

using Interval = std::array<double, 2>;

std::vector<Interval> merge(std::vector<Interval> spans) {
    std::sort(spans.begin(), spans.end());
    std::vector<Interval> out;
    for (const Interval& s : spans) {
        if (!out.empty() && s[0] <= out.back()[1]) {
            out.back()[1] = std::max(out.back()[1], s[1]);
        } else {
            out.push_back(s);
        }
    }
    return out;
}

double covered(const std::vector<Interval>& u, double a, double b) {
    double m = 0.0;
    for (const Interval& s : u) {
        m += std::max(0.0, std::min(b, s[1]) - std::max(a, s[0]));
    }
    return m;
}

SampleSet finish(const Ray& ray, std::vector<Entry> entries, std::vector<Interval> spans) {
    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) { return a.t < b.t; });
    const std::vector<Interval> u = merge(std::move(spans));
    SampleSet s;
    for (const Entry& e : entries) {
        if (!s.t.empty() && e.t <= s.t.back()) {
            continue;
        }
        s.t.push_back(e.t);
        s.bin_lo.push_back(e.lo);
        s.bin_hi.push_back(e.hi);
        s.positions.push_back(ray.origin + e.t * ray.dir);
    }
    const double end = u.empty() ? 0.0 : u.back()[1];
    s.delta.resize(s.t.size());
    for (std::size_t i = 0; i < s.t.size(); ++i) {
        const double next = i + 1 < s.t.size() ? s.t[i + 1] : end;
        s.delta[i] = covered(u, s.t[i], next);
    }
    return s;
}

} // namespace

SampleSet sample_levels(const Ray& ray, const Camera& cam, std::span<const DepthLevel> levels,
                        double radius, StreamRng& rng, bool jitter) {
    const double z_per_t = (cam.rotation() * ray.dir).z();
    if (z_per_t <= 1e-9 || levels.empty()) {
        return {};
    }
    std::vector<Entry> entries;
    std::vector<Interval> spans;
    for (const DepthLevel& level : levels) {
        if (level.count < 1) {
            continue;
        }
        const double lo = level.center - radius;
        const double width = 2.0 * radius / level.count;
        for (int j = 0; j < level.count; ++j) {
            const double b_hi = j + 1 == level.count ? level.center + radius : lo + (j + 1) * width;
            const double b_lo = std::max(lo + j * width, 0.0); // bins behind the camera are cut
            const double u = jitter ? rng.uniform() : 0.5;
            if (b_hi <= 0.0) {
                continue;
            }
            const double z = b_lo + u * (b_hi - b_lo);
            entries.push_back({z / z_per_t, b_lo / z_per_t, b_hi / z_per_t});
        }
        if (level.center + radius > 0.0) {
            spans.push_back({std::max(lo, 0.0) / z_per_t, (level.center + radius) / z_per_t});
        }
    }
    return finish(ray, std::move(entries), std::move(spans));
}

std::vector<DepthLevel> patch_depth_levels(int px, int py, const DepthMap& drast,
                                           const DepthPatchConfig& cfg) {
    double d_min = 0.0;
    double d_max = 0.0;
    bool any = false;
    for (int j = -1; j <= 1; ++j) {
        for (int i = -1; i <= 1; ++i) {
            const int x = px + i * cfg.stride;
            const int y = py + j * cfg.stride;
            if (!drast.inside(x, y) || !drast.is_hit(x, y)) {
                continue;
            }
            const double d = drast.at(x, y);
            d_min = any ? std::min(d_min, d) : d;
            d_max = any ? std::max(d_max, d) : d;
            any = true;
        }
    }
    if (!any) {
        return {};
    }
    if (d_max - d_min < cfg.delta_d) {
        return {{0.5 * (d_min + d_max), cfg.samples}};
    }
    const int front = (cfg.samples + 1) / 2;
    return {{d_min, front}, {d_max, cfg.samples - front}};
}

SampleSet sample_patch_depth(const Ray& ray, const Camera& cam, const DepthMap& drast,
                             const DepthPatchConfig& cfg, StreamRng& rng, bool jitter) {
    cfg.validate();
    if (!drast.inside(ray.px, ray.py)) {
        throw ConfigError("sample_patch_depth: ray pixel outside the depth map");
    }
    const std::vector<DepthLevel> levels = patch_depth_levels(ray.px, ray.py, drast, cfg);
    return sample_levels(ray, cam, levels, cfg.radius, rng, jitter);
}

SampleSet sample_pixel_depth(const Ray& ray, const Camera& cam, const DepthMap& drast,
                             const DepthPatchConfig& cfg, StreamRng& rng, bool jitter) {
    cfg.validate();
    if (!drast.inside(ray.px, ray.py)) {
        throw ConfigError("sample_pixel_depth: ray pixel outside the depth map");
    }
    if (!drast.is_hit(ray.px, ray.py)) {
        return {};
    }
    const DepthLevel level{drast.at(ray.px, ray.py), cfg.samples};
    return sample_levels(ray, cam, std::span(&level, 1), cfg.radius, rng, jitter);
}

SampleSet sample_uniform(const Ray& ray, double near, double far, int n, StreamRng& rng,
                         bool jitter) {
    if (!(near < far) || n < 1) {
        throw ConfigError("sample_uniform: need near < far and at least one sample");
    }
    std::vector<Entry> entries;
    const double width = (far - near) / n;
    for (int j = 0; j < n; ++j) {
        const double lo = near + j * width;
        const double hi = j + 1 == n ? far : lo + width;
        const double u = jitter ? rng.uniform() : 0.5;
        entries.push_back({lo + u * (hi - lo), lo, hi});
    }
    return finish(ray, std::move(entries), {{near, far}});
}

PixelResult integrate(const SampleSet& samples, std::span<const Radiance> radiance) {
    if (radiance.size() != samples.size()) {
        throw ConfigError("integrate: radiance count does not match the sample count");
    }
    PixelResult r;
    const std::size_t n = samples.size();
    r.transmittance.resize(n + 1);
    r.weights.resize(n);
    double transmit = 1.0;
    double depth_sum = 0.0;
    double weight_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        r.transmittance[i] = transmit;
        const double keep = std::exp(-radiance[i].sigma * samples.delta[i]);
        const double w = transmit * (1.0 - keep);
        r.weights[i] = w;
        r.color += w * radiance[i].color;
        depth_sum += w * samples.t[i];
        weight_sum += w;
        transmit *= keep;
    }
    r.transmittance[n] = transmit;
    r.alpha = 1.0 - transmit;
    r.expected_depth = weight_sum > 0.0 ? depth_sum / weight_sum : 0.0;
    return r;
}

std::vector<Radiance> integrate_backward(const SampleSet& samples,
                                         std::span<const Radiance> radiance,
                                         const PixelResult& result, const Vec3& d_color,
                                         double d_alpha, double d_depth) {
    const std::size_t n = samples.size();
    std::vector<Radiance> grad(n);
    const double t_end = result.transmittance[n];
    double weight_sum = 0.0;
    for (double w : result.weights) {
        weight_sum += w;
    }
    const bool with_depth = d_depth != 0.0 && weight_sum > 1e-12;
    Vec3 tail_color = Vec3::Zero(); // sum over i > k of w_i c_i
    double tail_depth = 0.0;        // sum over i > k of w_i t_i
    for (std::size_t k = n; k-- > 0;) {
        const double dk = samples.delta[k];
        const double t_next = result.transmittance[k + 1];
        double g = dk * d_color.dot(t_next * radiance[k].color - tail_color);
        g += d_alpha * dk * t_end;
        if (with_depth) {
            g += d_depth * (dk * (t_next * samples.t[k] - tail_depth) -
                            result.expected_depth * dk * t_end) /
                 weight_sum;
        }
        grad[k].sigma = g;
        grad[k].color = result.weights[k] * d_color;
        tail_color += result.weights[k] * radiance[k].color;
        tail_depth += result.weights[k] * samples.t[k];
    }
    return grad;
}

std::string to_string(SamplingMode m) {
    switch (m) {
    case SamplingMode::Patch:
        return "patch";
    case SamplingMode::Pixel:
        return "pixel";
    case SamplingMode::Uniform:
        return "uniform";
    }
    return "patch";
}

SamplingMode sampling_mode_from_string(const std::string& s) {
    if (s == "patch") {
        return SamplingMode::Patch;
    }
    if (s == "pixel") {
        return SamplingMode::Pixel;
    }
    if (s == "uniform") {
        return SamplingMode::Uniform;
    }
    throw ConfigError("unknown sampling mode '" + s + "' (patch, pixel, uniform)");
}

std::string to_string(DecodingMode m) { return m == DecodingMode::Light ? "light" : "heavy"; }

DecodingMode decoding_mode_from_string(const std::string& s) {
    if (s == "light") {
        return DecodingMode::Light;
    }
    if (s == "heavy") {
        return DecodingMode::Heavy;
    }
    throw ConfigError("unknown decoding mode '" + s + "' (light, heavy)");
}

void RenderConfig::validate() const {
    patch.validate();
    if (neighbors < 1 || search_radius <= 0.0 || uniform_samples < 1) {
        throw ConfigError("render config: need neighbors >= 1, search_radius > 0, "
                          "uniform_samples >= 1");
    }
    if ((near != 0.0 || far != 0.0) && !(near < far)) {
        throw ConfigError("render config: near must be below far");
    }
}

nlohmann::json RenderConfig::to_json() const {
    return {{"sampling", to_string(sampling)},
            {"decoding", to_string(decoding)},
            {"patch_stride", patch.stride},
            {"delta_d", patch.delta_d},
            {"sample_radius", patch.radius},
            {"samples", patch.samples},
            {"neighbors", neighbors},
            {"search_radius", search_radius},
            {"uniform_samples", uniform_samples},
            {"near", near},
            {"far", far},
            {"jitter", jitter},
            {"seed", seed}};
}

RenderConfig RenderConfig::from_json(const nlohmann::json& j) {
    check_keys(j,
               {"sampling", "decoding", "patch_stride", "delta_d", "sample_radius", "samples",
                "neighbors", "search_radius", "uniform_samples", "near", "far", "jitter", "seed",
                "threads"},
               "render config");
    RenderConfig c;
    c.sampling = sampling_mode_from_string(j.value("sampling", to_string(c.sampling)));
    c.decoding = decoding_mode_from_string(j.value("decoding", to_string(c.decoding)));
    c.patch.stride = j.value("patch_stride", c.patch.stride);
    c.patch.delta_d = j.value("delta_d", c.patch.delta_d);
    c.patch.radius = j.value("sample_radius", c.patch.radius);
    c.patch.samples = j.value("samples", c.patch.samples);
    c.neighbors = j.value("neighbors", c.neighbors);
    c.search_radius = j.value("search_radius", c.search_radius);
    c.uniform_samples = j.value("uniform_samples", c.uniform_samples);
    c.near = j.value("near", c.near);
    c.far = j.value("far", c.far);
    c.jitter = j.value("jitter", c.jitter);
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    c.validate();
    return c;
}

RenderStats& RenderStats::operator+=(const RenderStats& o) {
    rays += o.rays;
    samples_total += o.samples_total;
    decoder_evals += o.decoder_evals;
    mlp_evals += o.mlp_evals;
    wall_ms += o.wall_ms;
    return *this;
}

nlohmann::json RenderStats::to_json() const {
    return {{"rays", rays},
            {"samples_total", samples_total},
            {"decoder_evals", decoder_evals},
            {"mlp_evals", mlp_evals},
            {"wall_ms", wall_ms}};
}

std::array<double, 2> bounding_range(const NeuralPointCloud& cloud, const Camera& cam) {
    if (cloud.empty()) {
        return {1.0, 2.0};
    }
    Vec3 center = Vec3::Zero();
    for (const Vec3& p : cloud.points) {
        center += p;
    }
    center /= static_cast<double>(cloud.size());
    double radius = 0.0;
    for (const Vec3& p : cloud.points) {
        radius = std::max(radius, (p - center).norm());
    }
    const double dist = (center - cam.center()).norm();
    return {std::max(dist - radius, 1e-3), dist + radius + 1e-3};
}

void trace_pixels(TracedBatch& out, std::span<const std::array<int, 2>> pixels, const Camera& cam,
                  const RenderScene& scene, const RenderConfig& cfg, std::uint64_t salt,
                  bool keep_cache) {
    const bool has_points = scene.cloud && !scene.cloud->empty();
    if (has_points && (!scene.index || !scene.mlp)) {
        throw ConfigError("render scene needs an index and a decoder");
    }
    if (cfg.sampling != SamplingMode::Uniform && !scene.drast) {
        throw ConfigError("depth-guided sampling needs a rasterized depth map");
    }
    std::array<double, 2> range{cfg.near, cfg.far};
    if (cfg.sampling == SamplingMode::Uniform && cfg.near == 0.0 && cfg.far == 0.0) {
        range = has_points ? bounding_range(*scene.cloud, cam) : std::array<double, 2>{1.0, 2.0};
    }

    out.rays.resize(pixels.size());
    out.batch = NeighborhoodBatch{};
    out.stats = RenderStats{};
    NeighborSet nb;
    for (std::size_t r = 0; r < pixels.size(); ++r) {
        TracedRay& tr = out.rays[r];
        const auto [px, py] = pixels[r];
        tr.ray = cam.ray(px, py);
        tr.z_per_t = (cam.rotation() * tr.ray.dir).z();
        StreamRng rng(cfg.seed, pixel_key(px, py, salt));
        switch (cfg.sampling) {
        case SamplingMode::Patch:
            tr.samples = sample_patch_depth(tr.ray, cam, *scene.drast, cfg.patch, rng, cfg.jitter);
            break;
        case SamplingMode::Pixel:
            tr.samples = sample_pixel_depth(tr.ray, cam, *scene.drast, cfg.patch, rng, cfg.jitter);
            break;
        case SamplingMode::Uniform:
            tr.samples =
                sample_uniform(tr.ray, range[0], range[1], cfg.uniform_samples, rng, cfg.jitter);
            break;
        }
        tr.column.assign(tr.samples.size(), -1);
        ++out.stats.rays;
        out.stats.samples_total += tr.samples.size();
        out.stats.decoder_evals += tr.samples.size();
        if (!has_points) {
            continue;
        }
        for (std::size_t s = 0; s < tr.samples.size(); ++s) {
            scene.index->query(tr.samples.positions[s], cfg.neighbors, cfg.search_radius, nb);
            if (nb.empty()) {
                continue;
            }
            tr.column[s] = out.batch.sample_count();
            add_sample(out.batch, tr.samples.positions[s], tr.ray.dir, nb, *scene.cloud,
                       cfg.search_radius);
        }
    }
    out.stats.mlp_evals = static_cast<std::size_t>(out.batch.sample_count());

    if (out.batch.sample_count() > 0) {
        finalize(out.batch, *scene.cloud);
        out.decoded = decode_batch(out.batch, *scene.mlp, cfg.decoding == DecodingMode::Heavy,
                                   keep_cache ? &out.cache : nullptr);
    } else {
        out.decoded.resize(4, 0);
    }

    for (TracedRay& tr : out.rays) {
        tr.radiance.assign(tr.samples.size(), Radiance{});
        for (std::size_t s = 0; s < tr.samples.size(); ++s) {
            const int c = tr.column[s];
            if (c >= 0) {
                tr.radiance[s].sigma = out.decoded(0, c);
                tr.radiance[s].color = out.decoded.block<3, 1>(1, c);
            }
        }
        tr.result = integrate(tr.samples, tr.radiance);
    }
}

RenderOutput render_image(const Camera& cam, const RenderScene& scene, const RenderConfig& cfg) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    const int w = cam.width();
    const int h = cam.height();
    RenderOutput out;
    out.image = Image(w, h);
    out.depth = DepthMap(w, h);
    out.alpha.assign(static_cast<std::size_t>(w) * h, 0.0);

    constexpr std::size_t kBatchPixels = 256;
    const std::size_t total = static_cast<std::size_t>(w) * h;
    const std::size_t batches = (total + kBatchPixels - 1) / kBatchPixels;
    const int threads = std::max(1, std::min<int>(cfg.threads > 0 ? cfg.threads : worker_count(),
                                                  static_cast<int>(batches)));
    std::vector<RenderStats> chunk_stats(static_cast<std::size_t>(threads));

    parallel_chunks(batches, threads, [&](int chunk, std::size_t b_begin, std::size_t b_end) {
        TracedBatch tb;
        std::vector<std::array<int, 2>> pixels;
        for (std::size_t b = b_begin; b < b_end; ++b) {
            pixels.clear();
            const std::size_t p_end = std::min(total, (b + 1) * kBatchPixels);
            for (std::size_t p = b * kBatchPixels; p < p_end; ++p) {
                pixels.push_back({static_cast<int>(p % w), static_cast<int>(p / w)});
            }
            trace_pixels(tb, pixels, cam, scene, cfg, 0, false);
            for (const TracedRay& tr : tb.rays) {
                const std::size_t idx = out.depth.index(tr.ray.px, tr.ray.py);
                out.image.set(tr.ray.px, tr.ray.py, tr.result.color);
                out.alpha[idx] = tr.result.alpha;
                if (tr.result.alpha > 0.5) {
                    out.depth.depth[idx] = tr.depth();
                    out.depth.hit[idx] = 1;
                }
            }
            chunk_stats[static_cast<std::size_t>(chunk)] += tb.stats;
        }
    });
    for (const RenderStats& s : chunk_stats) {
        out.stats += s;
    }
    out.stats.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return out;
}

} // namespace npva
