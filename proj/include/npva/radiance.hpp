// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "npva/geometry.hpp"
#include "npva/mlp.hpp"
#include "npva/spatial_index.hpp"
#include "npva/types.hpp"

#include <Eigen/Core>

#include <random>
#include <span>
#include <vector>

namespace npva {

/// Positional encoding of an n-vector into 2*n*levels values, laid out per
/// frequency as [sin(2^k pi v_0..v_n-1), cos(2^k pi v_0..v_n-1)] for k = 0..levels-1.
std::vector<double> encode(std::span<const double> v, int levels);

/// Column-wise encoding of a batch (rows = input dims).
Eigen::MatrixXd encode_columns(const Eigen::MatrixXd& v, int levels);
/// Adjoint of encode_columns at `v`.
Eigen::MatrixXd encode_columns_backward(const Eigen::MatrixXd& v, const Eigen::MatrixXd& grad,
                                        int levels);

/// Encoded neighbour offset: encode((p - x) / radius, 1). Dividing by the
/// search radius keeps every offset inside one period of the encoding.
Vec6 encode_offset(const Vec3& offset, double radius);

/// Inverse-distance weighted neighbour feature and offset code.
struct AggregatedFeature {
    Eigen::VectorXd feature;
    Vec6 offset_code = Vec6::Zero();
    int neighbor_count = 0;
    std::vector<double> weights; // normalised, aligned with the NeighborSet

    /// [feature; offset_code]
    Eigen::VectorXd latent() const;
};

/// Distances below this are clamped before taking 1/d.
inline constexpr double kMinNeighborDistance = 1e-4;

AggregatedFeature aggregate(const Vec3& x, const NeighborSet& neighbors,
                            const NeuralPointCloud& cloud, double radius);

struct RadianceConfig {
    int feature_channels = 32;
    int input_levels = 4;
    int dir_levels = 4;
    std::vector<int> density_hidden{64, 64};
    std::vector<int> color_hidden{64, 64, 64};
    /// Per-neighbour network used only by the heavy comparison decoder.
    std::vector<int> pointwise_hidden{128, 128};
};

/// The density head, the colour head, and optionally the per-neighbour
/// network of the heavy decoder.
class RadianceMlp {
  public:
    RadianceMlp() = default;
    explicit RadianceMlp(const RadianceConfig& config, bool with_pointwise = false);

    void initialize(std::mt19937_64& rng);

    const RadianceConfig& config() const { return config_; }
    int latent_dim() const { return config_.feature_channels + 6; }
    int encoded_dim() const { return 2 * latent_dim() * config_.input_levels; }
    int dir_encoded_dim() const { return 6 * config_.dir_levels; }
    bool has_pointwise() const { return !pointwise.layers().empty(); }

    Mlp density;
    Mlp color;
    Mlp pointwise;

  private:
    RadianceConfig config_;
};

struct RadianceGradient {
    MlpGradient density;
    MlpGradient color;
    MlpGradient pointwise;

    static RadianceGradient zeros_like(const RadianceMlp& mlp);
    void set_zero();
    RadianceGradient& operator+=(const RadianceGradient& other);
};

/// Cached state of a batched head evaluation.
struct HeadCache {
    Eigen::MatrixXd latent;
    Eigen::MatrixXd shared;
    Mlp::Cache density;
    Mlp::Cache color;
};

/// Decodes a batch of latents (rows: C features + 6 offset code) with view
/// directions (3 x n). Returns 4 x n: sigma, r, g, b. Throws NumericalError if
/// any output is non-finite.
Eigen::MatrixXd decode_heads(const RadianceMlp& mlp, const Eigen::MatrixXd& latent,
                             const Eigen::MatrixXd& dirs, HeadCache* cache = nullptr);

/// Backprop of decode_heads. `upstream` is 4 x n. Returns d(loss)/d(latent).
Eigen::MatrixXd decode_heads_backward(const RadianceMlp& mlp, const HeadCache& cache,
                                      const Eigen::MatrixXd& upstream, RadianceGradient& grad);

Radiance decode(const AggregatedFeature& agg, const Vec3& view_dir, const RadianceMlp& mlp);

struct DecodeGradient {
    RadianceGradient weights;
    Eigen::VectorXd d_feature;
    Vec6 d_offset_code = Vec6::Zero();
};

/// Gradients of <upstream, decode(...)> with respect to the head weights and
/// the aggregated feature / offset code.
DecodeGradient decode_grad(const AggregatedFeature& agg, const Vec3& view_dir,
                           const RadianceMlp& mlp, const Radiance& upstream);

/// Per-neighbour gradients from d(feature) and d(offset code) through the
/// aggregation, with the weights held constant.
struct NeighborGradient {
    std::vector<Eigen::VectorXd> d_feature;
    std::vector<Vec3> d_position;
};

NeighborGradient aggregate_backward(const Vec3& x, const NeighborSet& neighbors,
                                    const NeuralPointCloud& cloud, const AggregatedFeature& agg,
                                    const Eigen::VectorXd& d_feature, const Vec6& d_offset_code,
                                    double radius);

/// Point-NeRF style decoding: each neighbour's [feature; offset code] passes
/// through `mlp.pointwise` before the weighted average.
Radiance decode_heavy(const Vec3& x, const NeighborSet& neighbors, const NeuralPointCloud& cloud,
                      const Vec3& view_dir, const RadianceMlp& mlp, double radius);

/// Batched neighbourhood decoding used by the renderer and the trainer.
/// Holds every (sample, neighbour) pair of a set of shading points.
struct NeighborhoodBatch {
    int latent_dim = 0;
    std::vector<int> sample_begin{0}; // columns [sample_begin[s], sample_begin[s+1])
    std::vector<int> point_ids;
    std::vector<double> weights;
    std::vector<Vec3> scaled_offsets; // (p_i - x) / radius
    std::vector<Vec3> view_dirs;
    Eigen::MatrixXd inputs; // latent_dim x pairs, filled by finalize()
    Eigen::MatrixXd dirs;   // 3 x samples, filled by finalize()

    int sample_count() const { return static_cast<int>(sample_begin.size()) - 1; }
    int pair_count() const { return sample_begin.back(); }
};

/// Appends shading point `x` (with a non-empty neighbour set) to the batch.
void add_sample(NeighborhoodBatch& batch, const Vec3& x, const Vec3& view_dir,
                const NeighborSet& neighbors, const NeuralPointCloud& cloud, double radius);
void finalize(NeighborhoodBatch& batch, const NeuralPointCloud& cloud);

struct BatchCache {
    Mlp::Cache pointwise;
    HeadCache heads;
};

/// 4 x samples: sigma, r, g, b.
Eigen::MatrixXd decode_batch(const NeighborhoodBatch& batch, const RadianceMlp& mlp, bool heavy,
                             BatchCache* cache = nullptr);

/// Backprop of decode_batch. Calls sink(point_id, d_feature, d_position) once
/// per (sample, neighbour) pair.
template <typename Sink>
void decode_batch_backward(const NeighborhoodBatch& batch, const RadianceMlp& mlp, bool heavy,
                           const BatchCache& cache, const Eigen::MatrixXd& upstream,
                           RadianceGradient& grad, double radius, Sink&& sink);

// Pair-level gradient with respect to [feature; offset code] inputs.
Eigen::MatrixXd decode_batch_backward_inputs(const NeighborhoodBatch& batch, const RadianceMlp& mlp,
                                             bool heavy, const BatchCache& cache,
                                             const Eigen::MatrixXd& upstream,
                                             RadianceGradient& grad);

/// d(position) of a neighbour from the gradient of its 6-dim offset code.
Vec3 offset_code_to_position_grad(const Vec3& scaled_offset, const double* d_code, double radius);

template <typename Sink>
void decode_batch_backward(const NeighborhoodBatch& batch, const RadianceMlp& mlp, bool heavy,
                           const BatchCache& cache, const Eigen::MatrixXd& upstream,
                           RadianceGradient& grad, double radius, Sink&& sink) {
    const Eigen::MatrixXd d_inputs =
        decode_batch_backward_inputs(batch, mlp, heavy, cache, upstream, grad);
    const int c = batch.latent_dim - 6;
    for (int j = 0; j < batch.pair_count(); ++j) {
        const double* col = d_inputs.col(j).data();
        sink(batch.point_ids[static_cast<std::size_t>(j)], std::span<const double>(col, c),
             offset_code_to_position_grad(batch.scaled_offsets[static_cast<std::size_t>(j)], col + c,
                                          radius));
    }
}

} // namespace npva
