// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#include "oracles.hpp"
#include "test_support.hpp"

#include "npva/radiance.hpp"

#include <doctest.h>

#include <numbers>
#include <random>

using namespace npva;

namespace {

NeighborSet neighbors_of(const NeuralPointCloud& cloud, const Vec3& x, std::vector<int> ids) {
    NeighborSet n;
    for (int id : ids) {
        n.ids.push_back(id);
        n.distances.push_back((cloud.points[static_cast<std::size_t>(id)] - x).norm());
    }
    return n;
}

// Decode written out with the oracle pieces: weights, averaging, encoding, scalar MLPs.
Radiance oracle_decode(const NeuralPointCloud& cloud, const NeighborSet& nb, const Vec3& x,
                       const Vec3& dir, const RadianceMlp& mlp, double radius) {
    std::vector<double> w;
    double total = 0;
    for (double d : nb.distances) {
        w.push_back(1.0 / std::max(d, 1e-4));
        total += w.back();
    }
    std::vector<double> latent(static_cast<std::size_t>(cloud.channels) + 6, 0.0);
    for (std::size_t i = 0; i < nb.size(); ++i) {
        const double wi = w[i] / total;
        const auto id = static_cast<std::size_t>(nb.ids[i]);
        for (int c = 0; c < cloud.channels; ++c) latent[c] += wi * cloud.features[id * cloud.channels + c];
        const Vec3 v = (cloud.points[id] - x) / radius;
        const std::vector<double> code = oracle::encode({v.x(), v.y(), v.z()}, 1);
        for (int k = 0; k < 6; ++k) latent[cloud.channels + k] += wi * code[k];
    }
    const std::vector<double> enc = oracle::encode(latent, mlp.config().input_levels);
    std::vector<double> color_in = enc;
    const std::vector<double> denc = oracle::encode({dir.x(), dir.y(), dir.z()}, mlp.config().dir_levels);
    color_in.insert(color_in.end(), denc.begin(), denc.end());
    const std::vector<double> s = oracle::mlp_forward(mlp.density, enc);
    const std::vector<double> c = oracle::mlp_forward(mlp.color, color_in);
    return {s[0], Vec3(c[0], c[1], c[2])};
}

} // namespace

TEST_CASE("positional encoding values") {
    const std::vector<double> zero = encode(std::vector<double>{0, 0, 0}, 1);
    CHECK(zero == std::vector<double>{0, 0, 0, 1, 1, 1});
    const std::vector<double> half = encode(std::vector<double>{0.5}, 1);
    CHECK(half[0] == doctest::Approx(1.0));
    CHECK(half[1] == doctest::Approx(0.0));
    CHECK(encode_offset(Vec3(0.3, -1.2, 2.0), 3.0).size() == 6);

    const std::vector<double> v{0.1, -0.7, 0.25};
    const std::vector<double> got = encode(v, 4);
    const std::vector<double> want = oracle::encode(v, 4);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-14));
}

TEST_CASE("aggregation weights") {
    std::mt19937_64 rng(3);
    NeuralPointCloud cloud = testing::random_cloud(3, 2, 1.0, rng);
    const Vec3 x = Vec3::Zero();
    cloud.points = {Vec3(1, 0, 0), Vec3(0, 2, 0), Vec3(0, 0, 4)};
    const AggregatedFeature agg = aggregate(x, neighbors_of(cloud, x, {0, 1, 2}), cloud, 5.0);
    CHECK(std::abs(agg.weights[0] - 4.0 / 7.0) < 1e-12);
    CHECK(std::abs(agg.weights[1] - 2.0 / 7.0) < 1e-12);
    CHECK(std::abs(agg.weights[2] - 1.0 / 7.0) < 1e-12);

    const AggregatedFeature one = aggregate(x, neighbors_of(cloud, x, {1}), cloud, 5.0);
    CHECK(one.weights[0] == 1.0);
    CHECK(one.feature(0) == cloud.features[2]);
    CHECK(one.feature(1) == cloud.features[3]);

    cloud.points = {Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3(0, 0, 4)};
    const AggregatedFeature two = aggregate(x, neighbors_of(cloud, x, {0, 1}), cloud, 5.0);
    CHECK(two.feature(0) == doctest::Approx(0.5 * (cloud.features[0] + cloud.features[2])));

    const AggregatedFeature none = aggregate(x, NeighborSet{}, cloud, 5.0);
    CHECK(none.neighbor_count == 0);
}

TEST_CASE("coincident neighbour does not produce an infinite weight") {
    std::mt19937_64 rng(3);
    NeuralPointCloud cloud = testing::random_cloud(2, 2, 1.0, rng);
    cloud.points = {Vec3::Zero(), Vec3(1, 0, 0)};
    const AggregatedFeature agg = aggregate(Vec3::Zero(), neighbors_of(cloud, Vec3::Zero(), {0, 1}), cloud, 3.0);
    CHECK(std::isfinite(agg.weights[0]));
    CHECK(agg.weights[0] + agg.weights[1] == doctest::Approx(1.0));
}

TEST_CASE("decode matches the straight-line evaluation") {
    std::mt19937_64 rng(5);
    const RadianceMlp mlp = testing::random_decoder(9);
    const NeuralPointCloud cloud = testing::random_cloud(40, 6, 4.0, rng);
    std::uniform_real_distribution<double> u(0.5, 3.5);
    for (int trial = 0; trial < 20; ++trial) {
        const Vec3 x(u(rng), u(rng), u(rng));
        NeighborSet nb;
        for (int id = 0; id < 40; ++id) {
            const double d = (cloud.points[id] - x).norm();
            if (d <= 3.0 && nb.size() < 8) {
                nb.ids.push_back(id);
                nb.distances.push_back(d);
            }
        }
        if (nb.empty()) continue;
        const Vec3 dir = Vec3(u(rng), -u(rng), u(rng)).normalized();
        const Radiance got = decode(aggregate(x, nb, cloud, 3.0), dir, mlp);
        const Radiance want = oracle_decode(cloud, nb, x, dir, mlp, 3.0);
        CHECK(got.sigma == doctest::Approx(want.sigma).epsilon(1e-10));
        for (int k = 0; k < 3; ++k) CHECK(got.color[k] == doctest::Approx(want.color[k]).epsilon(1e-10));
    }
    const Radiance empty = decode(aggregate(Vec3::Zero(), NeighborSet{}, cloud, 3.0), Vec3::UnitZ(), mlp);
    CHECK(empty.sigma == 0.0);
}

TEST_CASE("decode gradients") {
    std::mt19937_64 rng(6);
    const RadianceMlp mlp = testing::random_decoder(2);
    const NeuralPointCloud cloud = testing::random_cloud(5, 6, 2.0, rng);
    const Vec3 x(1, 1, 1);
    const NeighborSet nb = neighbors_of(cloud, x, {0, 1, 2, 3, 4});
    const AggregatedFeature agg = aggregate(x, nb, cloud, 3.0);
    const Vec3 dir = Vec3(0.2, 0.3, 1).normalized();

    const DecodeGradient zero = decode_grad(agg, dir, mlp, Radiance{});
    CHECK(zero.d_feature.norm() == 0.0);
    CHECK(zero.weights.density.squared_norm() == 0.0);

    const Radiance up{0.7, Vec3(-0.4, 1.1, 0.3)};
    const DecodeGradient g = decode_grad(agg, dir, mlp, up);
    auto objective = [&](const AggregatedFeature& a, const RadianceMlp& m) {
        const Radiance r = decode(a, dir, m);
        return up.sigma * r.sigma + up.color.dot(r.color);
    };
    const double h = 1e-5;
    for (int c = 0; c < agg.feature.size(); ++c) {
        AggregatedFeature p = agg, q = agg;
        p.feature(c) += h;
        q.feature(c) -= h;
        CHECK(oracle::relative_error(g.d_feature(c), (objective(p, mlp) - objective(q, mlp)) / (2 * h)) < 1e-6);
    }
    for (int c = 0; c < 6; ++c) {
        AggregatedFeature p = agg, q = agg;
        p.offset_code(c) += h;
        q.offset_code(c) -= h;
        CHECK(oracle::relative_error(g.d_offset_code(c), (objective(p, mlp) - objective(q, mlp)) / (2 * h)) < 1e-6);
    }
    for (std::size_t l = 0; l < mlp.color.layers().size(); ++l)
        for (Eigen::Index i = 0; i < mlp.color.layers()[l].weight.size(); i += 7) {
            RadianceMlp p = mlp, q = mlp;
            p.color.layers()[l].weight.data()[i] += h;
            q.color.layers()[l].weight.data()[i] -= h;
            CHECK(oracle::relative_error(g.weights.color.weight[l].data()[i],
                                         (objective(agg, p) - objective(agg, q)) / (2 * h)) < 1e-6);
        }

    // The gradient reaching a neighbour's feature is its normalised weight times d_feature.
    const NeighborGradient ng = aggregate_backward(x, nb, cloud, agg, g.d_feature, g.d_offset_code, 3.0);
    for (std::size_t i = 0; i < nb.size(); ++i)
        CHECK((ng.d_feature[i] - agg.weights[i] * g.d_feature).norm() < 1e-15);
}

TEST_CASE("neighbour position gradient through the offset code") {
    std::mt19937_64 rng(8);
    const RadianceMlp mlp = testing::random_decoder(4);
    NeuralPointCloud cloud = testing::random_cloud(4, 6, 2.0, rng);
    const Vec3 x(1, 1, 1);
    const NeighborSet nb = neighbors_of(cloud, x, {0, 1, 2, 3});
    const AggregatedFeature agg = aggregate(x, nb, cloud, 3.0);
    const Vec3 dir = Vec3::UnitZ();
    const Radiance up{1.0, Vec3(0.5, -0.5, 0.25)};
    const DecodeGradient g = decode_grad(agg, dir, mlp, up);
    const NeighborGradient ng = aggregate_backward(x, nb, cloud, agg, g.d_feature, g.d_offset_code, 3.0);
    // Weights are held fixed: only the offset code moves with the point.
    auto objective = [&](const NeuralPointCloud& c) {
        AggregatedFeature a = agg;
        a.offset_code.setZero();
        for (std::size_t i = 0; i < nb.size(); ++i)
            a.offset_code += agg.weights[i] * encode_offset(c.points[nb.ids[i]] - x, 3.0);
        const Radiance r = decode(a, dir, mlp);
        return up.sigma * r.sigma + up.color.dot(r.color);
    };
    const double h = 1e-6;
    for (std::size_t i = 0; i < nb.size(); ++i)
        for (int k = 0; k < 3; ++k) {
            NeuralPointCloud p = cloud, q = cloud;
            p.points[nb.ids[i]][k] += h;
            q.points[nb.ids[i]][k] -= h;
            CHECK(oracle::relative_error(ng.d_position[i][k], (objective(p) - objective(q)) / (2 * h)) < 1e-5);
        }
}

TEST_CASE("batched decoding equals per-sample decoding") {
    std::mt19937_64 rng(10);
    const RadianceMlp mlp = testing::random_decoder(3, 6, true);
    const NeuralPointCloud cloud = testing::random_cloud(30, 6, 3.0, rng);
    const PointIndex index(cloud.points, 3.0);
    NeighborhoodBatch batch;
    std::vector<Vec3> xs;
    std::uniform_real_distribution<double> u(0.0, 3.0);
    for (int s = 0; s < 12; ++s) {
        const Vec3 x(u(rng), u(rng), u(rng));
        const NeighborSet nb = index.query(x, 8, 3.0);
        if (nb.empty()) continue;
        add_sample(batch, x, Vec3::UnitZ(), nb, cloud, 3.0);
        xs.push_back(x);
    }
    finalize(batch, cloud);
    const Eigen::MatrixXd light = decode_batch(batch, mlp, false);
    const Eigen::MatrixXd heavy = decode_batch(batch, mlp, true);
    for (std::size_t s = 0; s < xs.size(); ++s) {
        const NeighborSet nb = index.query(xs[s], 8, 3.0);
        const Radiance a = decode(aggregate(xs[s], nb, cloud, 3.0), Vec3::UnitZ(), mlp);
        CHECK(light(0, s) == doctest::Approx(a.sigma).epsilon(1e-12));
        const Radiance b = decode_heavy(xs[s], nb, cloud, Vec3::UnitZ(), mlp, 3.0);
        CHECK(heavy(0, s) == doctest::Approx(b.sigma).epsilon(1e-12));
        CHECK(heavy(1, s) == doctest::Approx(b.color.x()).epsilon(1e-12));
    }
}

TEST_CASE("heavy decoding with an identity per-point network equals light decoding") {
    std::mt19937_64 rng(12);
    RadianceMlp mlp = testing::random_decoder(5, 6, true);
    const int d = mlp.latent_dim();
    // relu(x) - relu(-x) = x through one hidden layer of width 2d.
    mlp.pointwise = Mlp(d, {2 * d}, d, Activation::Relu, Activation::Identity);
    auto& l0 = mlp.pointwise.layers()[0];
    auto& l1 = mlp.pointwise.layers()[1];
    l0.weight.setZero();
    l1.weight.setZero();
    for (int i = 0; i < d; ++i) {
        l0.weight(i, i) = 1;
        l0.weight(d + i, i) = -1;
        l1.weight(i, i) = 1;
        l1.weight(i, d + i) = -1;
    }
    const NeuralPointCloud cloud = testing::random_cloud(10, 6, 2.0, rng);
    const Vec3 x(1, 1, 1);
    NeighborSet nb = neighbors_of(cloud, x, {0, 1, 2, 3, 4, 5});
    const Radiance a = decode(aggregate(x, nb, cloud, 3.0), Vec3::UnitY(), mlp);
    const Radiance b = decode_heavy(x, nb, cloud, Vec3::UnitY(), mlp, 3.0);
    CHECK(b.sigma == doctest::Approx(a.sigma).epsilon(1e-12));
    CHECK((b.color - a.color).norm() < 1e-12);

    // With one neighbour, heavy decoding is light decoding of the transformed latent.
    RadianceMlp m2 = testing::random_decoder(6, 6, true);
    nb = neighbors_of(cloud, x, {3});
    const AggregatedFeature agg = aggregate(x, nb, cloud, 3.0);
    const Eigen::MatrixXd t = m2.pointwise.forward(agg.latent());
    AggregatedFeature moved = agg;
    moved.feature = t.col(0).head(6);
    moved.offset_code = t.col(0).tail(6);
    const Radiance c = decode(moved, Vec3::UnitY(), m2);
    const Radiance e = decode_heavy(x, nb, cloud, Vec3::UnitY(), m2, 3.0);
    CHECK(e.sigma == doctest::Approx(c.sigma).epsilon(1e-12));
}

TEST_CASE("batched backward matches per-sample gradients") {
    std::mt19937_64 rng(14);
    for (bool heavy : {false, true}) {
        const RadianceMlp mlp = testing::random_decoder(7, 6, true);
        NeuralPointCloud cloud = testing::random_cloud(20, 6, 2.5, rng);
        const PointIndex index(cloud.points, 3.0);
        NeighborhoodBatch batch;
        std::vector<Vec3> xs;
        std::uniform_real_distribution<double> u(0.0, 2.5);
        for (int s = 0; s < 5; ++s) {
            const Vec3 x(u(rng), u(rng), u(rng));
            const NeighborSet nb = index.query(x, 8, 3.0);
            add_sample(batch, x, Vec3(0, 0.6, 0.8), nb, cloud, 3.0);
            xs.push_back(x);
        }
        finalize(batch, cloud);
        BatchCache cache;
        const Eigen::MatrixXd out = decode_batch(batch, mlp, heavy, &cache);
        Eigen::MatrixXd up(4, out.cols());
        std::normal_distribution<double> n;
        for (Eigen::Index i = 0; i < up.size(); ++i) up.data()[i] = n(rng);
        RadianceGradient g = RadianceGradient::zeros_like(mlp);
        std::vector<double> dfeat(cloud.features.size(), 0.0);
        std::vector<Vec3> dpos(cloud.size(), Vec3::Zero());
        decode_batch_backward(batch, mlp, heavy, cache, up, g, 3.0,
                              [&](int id, std::span<const double> df, const Vec3& dp) {
                                  for (int c = 0; c < 6; ++c) dfeat[id * 6 + c] += df[c];
                                  dpos[id] += dp;
                              });
        // Weights fixed, as in the library: rebuild the batch from moved points but keep weights.
        auto objective = [&](const NeuralPointCloud& c) {
            NeighborhoodBatch b = batch;
            for (int j = 0; j < b.pair_count(); ++j) {
                int s = 0;
                while (b.sample_begin[s + 1] <= j) ++s;
                b.scaled_offsets[j] = (c.points[b.point_ids[j]] - xs[s]) / 3.0;
            }
            finalize(b, c);
            return (decode_batch(b, mlp, heavy).array() * up.array()).sum();
        };
        const double h = 1e-6;
        for (std::size_t i = 0; i < cloud.size(); i += 3) {
            for (int c = 0; c < 6; c += 2) {
                NeuralPointCloud p = cloud, q = cloud;
                p.features[i * 6 + c] += h;
                q.features[i * 6 + c] -= h;
                CHECK(oracle::relative_error(dfeat[i * 6 + c], (objective(p) - objective(q)) / (2 * h)) < 1e-5);
            }
            for (int k = 0; k < 3; ++k) {
                NeuralPointCloud p = cloud, q = cloud;
                p.points[i][k] += h;
                q.points[i][k] -= h;
                CHECK(oracle::relative_error(dpos[i][k], (objective(p) - objective(q)) / (2 * h)) < 1e-5);
            }
        }
    }
}
