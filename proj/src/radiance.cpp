// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#include "npva/radiance.hpp"

#include "npva/error.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <tuple>
#include <utility>

namespace npva {

namespace {

// Higher levels double the angle, so only the first level needs sin and cos.
std::pair<double, double> double_angle(double sn, double cs) {
    return {2.0 * sn * cs, (cs - sn) * (cs + sn)};
}

} // namespace

std::vector<double> encode(std::span<const double> v, int levels) {
    if (levels < 1) {
        throw ConfigError("encoding needs at least one frequency level");
    }
    const std::size_t n = v.size();
    std::vector<double> out(2 * n * static_cast<std::size_t>(levels));
    for (std::size_t d = 0; d < n; ++d) {
        double sn = std::sin(std::numbers::pi * v[d]);
        double cs = std::cos(std::numbers::pi * v[d]);
        for (int k = 0; k < levels; ++k) {
            double* block = out.data() + 2 * n * static_cast<std::size_t>(k);
            block[d] = sn;
            block[n + d] = cs;
            std::tie(sn, cs) = double_angle(sn, cs);
        }
    }
    return out;
}

Eigen::MatrixXd encode_columns(const Eigen::MatrixXd& v, int levels) {
    if (levels < 1) {
        throw ConfigError("encoding needs at least one frequency level");
    }
    const Eigen::Index n = v.rows();
    Eigen::MatrixXd out(2 * n * levels, v.cols());
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
        for (Eigen::Index d = 0; d < n; ++d) {
            double sn = std::sin(std::numbers::pi * v(d, c));
            double cs = std::cos(std::numbers::pi * v(d, c));
            for (int k = 0; k < levels; ++k) {
                out(2 * n * k + d, c) = sn;
                out(2 * n * k + n + d, c) = cs;
                std::tie(sn, cs) = double_angle(sn, cs);
            }
        }
    }
    return out;
}

Eigen::MatrixXd encode_columns_backward(const Eigen::MatrixXd& v, const Eigen::MatrixXd& grad,
                                        int levels) {
    const Eigen::Index n = v.rows();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, v.cols());
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
        for (Eigen::Index d = 0; d < n; ++d) {
            double sn = std::sin(std::numbers::pi * v(d, c));
            double cs = std::cos(std::numbers::pi * v(d, c));
            double freq = std::numbers::pi;
            for (int k = 0; k < levels; ++k) {
                out(d, c) += freq * (grad(2 * n * k + d, c) * cs - grad(2 * n * k + n + d, c) * sn);
                std::tie(sn, cs) = double_angle(sn, cs);
                freq *= 2.0;
            }
        }
    }
    return out;
}

Vec6 encode_offset(const Vec3& offset, double radius) {
    const Vec3 s = offset / radius;
    Vec6 code;
    for (int d = 0; d < 3; ++d) {
        code(d) = std::sin(std::numbers::pi * s(d));
        code(3 + d) = std::cos(std::numbers::pi * s(d));
    }
    return code;
}

Vec3 offset_code_to_position_grad(const Vec3& scaled_offset, const double* d_code, double radius) {
    Vec3 g;
    for (int d = 0; d < 3; ++d) {
        const double a = std::numbers::pi * scaled_offset(d);
        g(d) = std::numbers::pi / radius * (d_code[d] * std::cos(a) - d_code[3 + d] * std::sin(a));
    }
    return g;
}

Eigen::VectorXd AggregatedFeature::latent() const {
    Eigen::VectorXd l(feature.size() + 6);
    l << feature, offset_code;
    return l;
}

namespace {

std::vector<double> normalized_weights(const NeighborSet& neighbors) {
    std::vector<double> w(neighbors.size());
    double total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = 1.0 / std::max(neighbors.distances[i], kMinNeighborDistance);
        total += w[i];
    }
    for (double& wi : w) {
        wi /= total;
    }
    return w;
}

} // namespace

AggregatedFeature aggregate(const Vec3& x, const NeighborSet& neighbors,
                            const NeuralPointCloud& cloud, double radius) {
    AggregatedFeature agg;
    agg.feature = Eigen::VectorXd::Zero(cloud.channels);
    agg.neighbor_count = static_cast<int>(neighbors.size());
    if (neighbors.empty()) {
        return agg;
    }
    agg.weights = normalized_weights(neighbors);
    for (std::size_t i = 0; i < neighbors.size(); ++i) {
        const auto id = static_cast<std::size_t>(neighbors.ids[i]);
        const double w = agg.weights[i];
        const auto f = cloud.feature(id);
        for (int c = 0; c < cloud.channels; ++c) {
            agg.feature(c) += w * f[static_cast<std::size_t>(c)];
        }
        agg.offset_code += w * encode_offset(cloud.points[id] - x, radius);
    }
    return agg;
}

RadianceMlp::RadianceMlp(const RadianceConfig& config, bool with_pointwise) : config_(config) {
    if (config.feature_channels <= 0 || config.input_levels < 1 || config.dir_levels < 1) {
        throw ConfigError("radiance config: channels and encoding levels must be positive");
    }
    density = Mlp(encoded_dim(), config.density_hidden, 1, Activation::Relu, Activation::Softplus);
    color = Mlp(encoded_dim() + dir_encoded_dim(), config.color_hidden, 3, Activation::Relu,
                Activation::Sigmoid);
    if (with_pointwise) {
        pointwise = Mlp(latent_dim(), config.pointwise_hidden, latent_dim(), Activation::Relu,
                        Activation::Identity);
    }
}

void RadianceMlp::initialize(std::mt19937_64& rng) {
    density.initialize(rng);
    color.initialize(rng);
    if (has_pointwise()) {
        pointwise.initialize(rng);
    }
}

RadianceGradient RadianceGradient::zeros_like(const RadianceMlp& mlp) {
    return {mlp.density.zero_gradient(), mlp.color.zero_gradient(), mlp.pointwise.zero_gradient()};
}

void RadianceGradient::set_zero() {
    density.set_zero();
    color.set_zero();
    pointwise.set_zero();
}

RadianceGradient& RadianceGradient::operator+=(const RadianceGradient& other) {
    density += other.density;
    color += other.color;
    pointwise += other.pointwise;
    return *this;
}

Eigen::MatrixXd decode_heads(const RadianceMlp& mlp, const Eigen::MatrixXd& latent,
                             const Eigen::MatrixXd& dirs, HeadCache* cache) {
    const int levels = mlp.config().input_levels;
    Eigen::MatrixXd shared = encode_columns(latent, levels);
    Eigen::MatrixXd color_in(shared.rows() + mlp.dir_encoded_dim(), shared.cols());
    color_in.topRows(shared.rows()) = shared;
    color_in.bottomRows(mlp.dir_encoded_dim()) = encode_columns(dirs, mlp.config().dir_levels);

    Eigen::MatrixXd out(4, latent.cols());
    if (cache) {
        cache->latent = latent;
        out.row(0) = mlp.density.forward(shared, cache->density);
        out.bottomRows(3) = mlp.color.forward(color_in, cache->color);
        cache->shared = std::move(shared);
    } else {
        out.row(0) = mlp.density.forward(shared);
        out.bottomRows(3) = mlp.color.forward(color_in);
    }
    if (!out.allFinite()) {
        for (Eigen::Index c = 0; c < out.cols(); ++c) {
            if (!out.col(c).allFinite()) {
                std::ostringstream msg;
                msg << "radiance decoder produced a non-finite output for sample " << c
                    << " (sigma=" << out(0, c) << ", color=" << out(1, c) << ',' << out(2, c) << ','
                    << out(3, c) << ", |latent|=" << latent.col(c).norm() << ")";
                throw NumericalError(msg.str());
            }
        }
    }
    return out;
}

Eigen::MatrixXd decode_heads_backward(const RadianceMlp& mlp, const HeadCache& cache,
                                      const Eigen::MatrixXd& upstream, RadianceGradient& grad) {
    Eigen::MatrixXd d_shared = mlp.density.backward(cache.density, upstream.topRows(1), grad.density);
    const Eigen::MatrixXd d_color_in =
        mlp.color.backward(cache.color, upstream.bottomRows(3), grad.color);
    d_shared += d_color_in.topRows(d_shared.rows());
    return encode_columns_backward(cache.latent, d_shared, mlp.config().input_levels);
}

Radiance decode(const AggregatedFeature& agg, const Vec3& view_dir, const RadianceMlp& mlp) {
    if (agg.neighbor_count == 0) {
        return {};
    }
    const Eigen::MatrixXd out = decode_heads(mlp, agg.latent(), view_dir);
    return {out(0, 0), Vec3(out(1, 0), out(2, 0), out(3, 0))};
}

DecodeGradient decode_grad(const AggregatedFeature& agg, const Vec3& view_dir,
                           const RadianceMlp& mlp, const Radiance& upstream) {
    DecodeGradient g;
    g.weights = RadianceGradient::zeros_like(mlp);
    g.d_feature = Eigen::VectorXd::Zero(agg.feature.size());
    if (agg.neighbor_count == 0) {
        return g;
    }
    HeadCache cache;
    decode_heads(mlp, agg.latent(), view_dir, &cache);
    Eigen::MatrixXd up(4, 1);
    up << upstream.sigma, upstream.color.x(), upstream.color.y(), upstream.color.z();
    const Eigen::MatrixXd d_latent = decode_heads_backward(mlp, cache, up, g.weights);
    g.d_feature = d_latent.col(0).head(agg.feature.size());
    g.d_offset_code = d_latent.col(0).tail<6>();
    return g;
}

NeighborGradient aggregate_backward(const Vec3& x, const NeighborSet& neighbors,
                                    const NeuralPointCloud& cloud, const AggregatedFeature& agg,
                                    const Eigen::VectorXd& d_feature, const Vec6& d_offset_code,
                                    double radius) {
    NeighborGradient g;
    for (std::size_t i = 0; i < neighbors.size(); ++i) {
        const double w = agg.weights[i];
        const auto id = static_cast<std::size_t>(neighbors.ids[i]);
        g.d_feature.push_back(w * d_feature);
        const Vec6 d_code = w * d_offset_code;
        g.d_position.push_back(
            offset_code_to_position_grad((cloud.points[id] - x) / radius, d_code.data(), radius));
    }
    return g;
}

void add_sample(NeighborhoodBatch& batch, const Vec3& x, const Vec3& view_dir,
                const NeighborSet& neighbors, const NeuralPointCloud& cloud, double radius) {
    batch.latent_dim = cloud.channels + 6;
    const std::vector<double> w = normalized_weights(neighbors);
    for (std::size_t i = 0; i < neighbors.size(); ++i) {
        const int id = neighbors.ids[i];
        batch.point_ids.push_back(id);
        batch.weights.push_back(w[i]);
        batch.scaled_offsets.push_back((cloud.points[static_cast<std::size_t>(id)] - x) / radius);
    }
    batch.sample_begin.push_back(static_cast<int>(batch.point_ids.size()));
    batch.view_dirs.push_back(view_dir);
}

void finalize(NeighborhoodBatch& batch, const NeuralPointCloud& cloud) {
    const int c = cloud.channels;
    batch.latent_dim = c + 6;
    batch.inputs.resize(batch.latent_dim, batch.pair_count());
    for (int j = 0; j < batch.pair_count(); ++j) {
        const auto f = cloud.feature(static_cast<std::size_t>(batch.point_ids[static_cast<std::size_t>(j)]));
        for (int k = 0; k < c; ++k) {
            batch.inputs(k, j) = f[static_cast<std::size_t>(k)];
        }
        const Vec3& s = batch.scaled_offsets[static_cast<std::size_t>(j)];
        for (int d = 0; d < 3; ++d) {
            batch.inputs(c + d, j) = std::sin(std::numbers::pi * s(d));
            batch.inputs(c + 3 + d, j) = std::cos(std::numbers::pi * s(d));
        }
    }
    batch.dirs.resize(3, batch.sample_count());
    for (int s = 0; s < batch.sample_count(); ++s) {
        batch.dirs.col(s) = batch.view_dirs[static_cast<std::size_t>(s)];
    }
}

namespace {

Eigen::MatrixXd weighted_average(const NeighborhoodBatch& batch, const Eigen::MatrixXd& pairs) {
    Eigen::MatrixXd latent = Eigen::MatrixXd::Zero(pairs.rows(), batch.sample_count());
    for (int s = 0; s < batch.sample_count(); ++s) {
        for (int j = batch.sample_begin[static_cast<std::size_t>(s)];
             j < batch.sample_begin[static_cast<std::size_t>(s) + 1]; ++j) {
            latent.col(s) += batch.weights[static_cast<std::size_t>(j)] * pairs.col(j);
        }
    }
    return latent;
}

} // namespace

Eigen::MatrixXd decode_batch(const NeighborhoodBatch& batch, const RadianceMlp& mlp, bool heavy,
                             BatchCache* cache) {
    if (batch.sample_count() == 0) {
        return Eigen::MatrixXd(4, 0);
    }
    if (heavy && !mlp.has_pointwise()) {
        throw ConfigError("heavy decoding requested without a per-neighbour network");
    }
    Eigen::MatrixXd latent;
    if (heavy) {
        latent = cache ? weighted_average(batch, mlp.pointwise.forward(batch.inputs, cache->pointwise))
                       : weighted_average(batch, mlp.pointwise.forward(batch.inputs));
    } else {
        latent = weighted_average(batch, batch.inputs);
    }
    return decode_heads(mlp, latent, batch.dirs, cache ? &cache->heads : nullptr);
}

Eigen::MatrixXd decode_batch_backward_inputs(const NeighborhoodBatch& batch, const RadianceMlp& mlp,
                                             bool heavy, const BatchCache& cache,
                                             const Eigen::MatrixXd& upstream,
                                             RadianceGradient& grad) {
    const Eigen::MatrixXd d_latent = decode_heads_backward(mlp, cache.heads, upstream, grad);
    Eigen::MatrixXd d_pairs(batch.latent_dim, batch.pair_count());
    for (int s = 0; s < batch.sample_count(); ++s) {
        for (int j = batch.sample_begin[static_cast<std::size_t>(s)];
             j < batch.sample_begin[static_cast<std::size_t>(s) + 1]; ++j) {
            d_pairs.col(j) = batch.weights[static_cast<std::size_t>(j)] * d_latent.col(s);
        }
    }
    if (heavy) {
        return mlp.pointwise.backward(cache.pointwise, d_pairs, grad.pointwise);
    }
    return d_pairs;
}

Radiance decode_heavy(const Vec3& x, const NeighborSet& neighbors, const NeuralPointCloud& cloud,
                      const Vec3& view_dir, const RadianceMlp& mlp, double radius) {
    if (neighbors.empty()) {
        return {};
    }
    NeighborhoodBatch batch;
    add_sample(batch, x, view_dir, neighbors, cloud, radius);
    finalize(batch, cloud);
    const Eigen::MatrixXd out = decode_batch(batch, mlp, true);
    return {out(0, 0), Vec3(out(1, 0), out(2, 0), out(3, 0))};
}

} // namespace npva
