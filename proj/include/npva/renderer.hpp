// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "npva/camera.hpp"
#include "npva/geometry.hpp"
#include "npva/image.hpp"
#include "npva/radiance.hpp"
#include "npva/random.hpp"
#include "npva/spatial_index.hpp"
#include "npva/types.hpp"

#include <json.hpp>

#include <array>
#include <span>
#include <string>
#include <vector>

namespace npva {

struct DepthPatchConfig {
    int stride = 3; // about 3.5 mm of surface at 128 px, as 16 px is on a 1024 px face capture
    double delta_d = 20.0; // two-level threshold, mm
    double radius = 20.0;  // half-width of a sampling interval, mm
    int samples = 20;      // total per ray

    void validate() const;
};

/// Shading points along a ray. Bins are given in ray distance t; `delta` is
/// the integration length assigned to each sample: the part of [t_i, t_{i+1})
/// covered by the sampling intervals, and for the last sample the rest of its
/// interval.
struct SampleSet {
    std::vector<double> t;
    std::vector<Vec3> positions;
    std::vector<double> delta;
    std::vector<double> bin_lo;
    std::vector<double> bin_hi;

    std::size_t size() const { return t.size(); }
    bool empty() const { return t.empty(); }
};

/// A sampling interval in camera z (depth) with its sample count.
struct DepthLevel {
    double center = 0.0;
    int count = 0;
};

/// Stratified samples over each level [center - radius, center + radius],
/// one per bin of width 2 * radius / count. With `jitter` off every sample
/// sits at its bin midpoint.
SampleSet sample_levels(const Ray& ray, const Camera& cam, std::span<const DepthLevel> levels,
                        double radius, StreamRng& rng, bool jitter = true);

/// Depth levels from the rasterized depths of the 3x3 patch around the ray's
/// pixel (offsets -stride, 0, stride). Empty when no patch pixel is hit.
std::vector<DepthLevel> patch_depth_levels(int px, int py, const DepthMap& drast,
                                           const DepthPatchConfig& cfg);

SampleSet sample_patch_depth(const Ray& ray, const Camera& cam, const DepthMap& drast,
                             const DepthPatchConfig& cfg, StreamRng& rng, bool jitter = true);
/// Single level at the ray's own rasterized depth.
SampleSet sample_pixel_depth(const Ray& ray, const Camera& cam, const DepthMap& drast,
                             const DepthPatchConfig& cfg, StreamRng& rng, bool jitter = true);
/// NeRF-style stratified sampling of [near, far] in ray distance.
SampleSet sample_uniform(const Ray& ray, double near, double far, int n, StreamRng& rng,
                         bool jitter = true);

struct PixelResult {
    Vec3 color = Vec3::Zero();
    double alpha = 0.0;
    double expected_depth = 0.0; // ray distance t; meaningful when alpha > 0
    std::vector<double> transmittance; // T_1..T_{N+1}
    std::vector<double> weights;
};

/// Piecewise-constant emission-absorption quadrature over a black background.
PixelResult integrate(const SampleSet& samples, std::span<const Radiance> radiance);

/// Gradients of d_color . color + d_alpha * alpha + d_depth * expected_depth
/// with respect to every sample's density and colour.
std::vector<Radiance> integrate_backward(const SampleSet& samples,
                                         std::span<const Radiance> radiance,
                                         const PixelResult& result, const Vec3& d_color,
                                         double d_alpha, double d_depth);

enum class SamplingMode { Patch, Pixel, Uniform };
enum class DecodingMode { Light, Heavy };

std::string to_string(SamplingMode m);
SamplingMode sampling_mode_from_string(const std::string& s);
std::string to_string(DecodingMode m);
DecodingMode decoding_mode_from_string(const std::string& s);

struct RenderConfig {
    SamplingMode sampling = SamplingMode::Patch;
    DecodingMode decoding = DecodingMode::Light;
    DepthPatchConfig patch;
    int neighbors = 8;            // K
    double search_radius = 3.0;   // R, mm
    int uniform_samples = 192;
    double near = 0.0;            // uniform mode; both zero: bounding sphere of the cloud
    double far = 0.0;
    bool jitter = true;
    std::uint64_t seed = 0;
    int threads = 0;              // 0: worker_count()

    void validate() const;
    nlohmann::json to_json() const;
    static RenderConfig from_json(const nlohmann::json& j);
};

/// Everything a render pass reads. All of it stays unchanged during the pass.
struct RenderScene {
    const NeuralPointCloud* cloud = nullptr;
    const PointIndex* index = nullptr;
    const RadianceMlp* mlp = nullptr;
    const DepthMap* drast = nullptr; // required by the depth-guided modes
};

struct RenderStats {
    std::size_t rays = 0;
    std::size_t samples_total = 0;
    std::size_t decoder_evals = 0; // shading points handed to the decoder
    std::size_t mlp_evals = 0;     // of those, with a non-empty neighbourhood
    double wall_ms = 0.0;

    RenderStats& operator+=(const RenderStats& o);
    nlohmann::json to_json() const;
};

/// Per-ray state of a traced batch of rays.
struct TracedRay {
    Ray ray;
    double z_per_t = 1.0; // camera z of the direction, converts t to depth
    SampleSet samples;
    std::vector<int> column; // batch column per sample, -1 without neighbours
    std::vector<Radiance> radiance;
    PixelResult result;

    double depth() const { return result.expected_depth * z_per_t; }
};

struct TracedBatch {
    std::vector<TracedRay> rays;
    NeighborhoodBatch batch;
    BatchCache cache;
    Eigen::MatrixXd decoded; // 4 x batch samples
    RenderStats stats;
};

/// Samples, decodes and integrates the given pixels. With `keep_cache` the
/// decoder activations are kept for decode_batch_backward. `salt` decorrelates
/// jitter between passes over the same pixels.
void trace_pixels(TracedBatch& out, std::span<const std::array<int, 2>> pixels, const Camera& cam,
                  const RenderScene& scene, const RenderConfig& cfg, std::uint64_t salt,
                  bool keep_cache);

/// Ray-distance range covering the bounding sphere of the cloud.
std::array<double, 2> bounding_range(const NeuralPointCloud& cloud, const Camera& cam);

struct RenderOutput {
    Image image;
    DepthMap depth; // camera z where alpha > 0.5
    std::vector<double> alpha;
    RenderStats stats;
};

RenderOutput render_image(const Camera& cam, const RenderScene& scene, const RenderConfig& cfg);

} // namespace npva
