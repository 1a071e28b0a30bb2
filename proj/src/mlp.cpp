// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#include "npva/mlp.hpp"

#include "npva/error.hpp"
#include "npva/types.hpp"

#include <cmath>

namespace npva {

double softplus(double z) { return z > 30.0 ? z : std::log1p(std::exp(z)); }

double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

std::string to_string(Activation a) {
    switch (a) {
    case Activation::Identity:
        return "identity";
    case Activation::Relu:
        return "relu";
    case Activation::Softplus:
        return "softplus";
    case Activation::Sigmoid:
        return "sigmoid";
    }
    return "identity";
}

Activation activation_from_string(const std::string& name) {
    if (name == "identity") {
        return Activation::Identity;
    }
    if (name == "relu") {
        return Activation::Relu;
    }
    if (name == "softplus") {
        return Activation::Softplus;
    }
    if (name == "sigmoid") {
        return Activation::Sigmoid;
    }
    throw ConfigError("unknown activation '" + name + "'");
}

namespace {

void activate(Activation act, const Eigen::MatrixXd& pre, Eigen::MatrixXd& out) {
    switch (act) {
    case Activation::Identity:
        out = pre;
        break;
    case Activation::Relu:
        out = pre.cwiseMax(0.0);
        break;
    case Activation::Softplus:
        out = pre.unaryExpr([](double z) { return softplus(z); });
        break;
    case Activation::Sigmoid:
        out = pre.unaryExpr([](double z) { return sigmoid(z); });
        break;
    }
}

// grad <- grad * act'(pre), elementwise.
void apply_derivative(Activation act, const Eigen::MatrixXd& pre, Eigen::MatrixXd& grad) {
    switch (act) {
    case Activation::Identity:
        break;
    case Activation::Relu:
        grad = (pre.array() > 0.0).select(grad, 0.0);
        break;
    case Activation::Softplus:
        grad.array() *= pre.unaryExpr([](double z) { return sigmoid(z); }).array();
        break;
    case Activation::Sigmoid:
        grad.array() *= pre.unaryExpr([](double z) {
                               const double s = sigmoid(z);
                               return s * (1.0 - s);
                           }).array();
        break;
    }
}

} // namespace

void MlpGradient::set_zero() {
    for (auto& w : weight) {
        w.setZero();
    }
    for (auto& b : bias) {
        b.setZero();
    }
}

MlpGradient& MlpGradient::operator+=(const MlpGradient& other) {
    for (std::size_t i = 0; i < weight.size(); ++i) {
        weight[i] += other.weight[i];
        bias[i] += other.bias[i];
    }
    return *this;
}

double MlpGradient::squared_norm() const {
    double s = 0.0;
    for (std::size_t i = 0; i < weight.size(); ++i) {
        s += weight[i].squaredNorm() + bias[i].squaredNorm();
    }
    return s;
}

Mlp::Mlp(int input_dim, const std::vector<int>& hidden, int output_dim, Activation hidden_act,
         Activation output_act)
    : hidden_act_(hidden_act), output_act_(output_act) {
    if (input_dim <= 0 || output_dim <= 0) {
        throw ConfigError("MLP input and output sizes must be positive");
    }
    int prev = input_dim;
    for (int h : hidden) {
        if (h <= 0) {
            throw ConfigError("MLP hidden sizes must be positive");
        }
        layers_.push_back({Eigen::MatrixXd::Zero(h, prev), Eigen::VectorXd::Zero(h)});
        prev = h;
    }
    layers_.push_back({Eigen::MatrixXd::Zero(output_dim, prev), Eigen::VectorXd::Zero(output_dim)});
}

void Mlp::initialize(std::mt19937_64& rng) {
    for (auto& layer : layers_) {
        const double bound = std::sqrt(6.0 / static_cast<double>(layer.weight.cols()));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
            layer.weight.data()[i] = snap_f32(dist(rng));
        }
        layer.bias.setZero();
    }
}

int Mlp::input_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols()); }

int Mlp::output_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows()); }

std::vector<int> Mlp::hidden_sizes() const {
    std::vector<int> sizes;
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
        sizes.push_back(static_cast<int>(layers_[i].weight.rows()));
    }
    return sizes;
}

std::size_t Mlp::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) {
        n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    }
    return n;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd a = x;
    Eigen::MatrixXd z;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        z.noalias() = layers_[i].weight * a;
        z.colwise() += layers_[i].bias;
        activate(i + 1 == layers_.size() ? output_act_ : hidden_act_, z, a);
    }
    return a;
}

const Eigen::MatrixXd& Mlp::forward(const Eigen::MatrixXd& x, Cache& cache) const {
    cache.inputs.resize(layers_.size());
    cache.pre.resize(layers_.size());
    cache.inputs[0] = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        Eigen::MatrixXd& z = cache.pre[i];
        z.noalias() = layers_[i].weight * cache.inputs[i];
        z.colwise() += layers_[i].bias;
        Eigen::MatrixXd& next = i + 1 < layers_.size() ? cache.inputs[i + 1] : cache.output;
        activate(i + 1 == layers_.size() ? output_act_ : hidden_act_, z, next);
    }
    return cache.output;
}

Eigen::MatrixXd Mlp::backward(const Cache& cache, const Eigen::MatrixXd& grad_output,
                              MlpGradient& grad) const {
    Eigen::MatrixXd g = grad_output;
    apply_derivative(output_act_, cache.pre.back(), g);
    for (std::size_t l = layers_.size(); l-- > 0;) {
        grad.weight[l].noalias() += g * cache.inputs[l].transpose();
        grad.bias[l] += g.rowwise().sum();
        Eigen::MatrixXd g_in = layers_[l].weight.transpose() * g;
        if (l > 0) {
            apply_derivative(hidden_act_, cache.pre[l - 1], g_in);
        }
        g = std::move(g_in);
    }
    return g;
}

MlpGradient Mlp::zero_gradient() const {
    MlpGradient g;
    for (const auto& l : layers_) {
        g.weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
        g.bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
    }
    return g;
}

std::vector<Blob> Mlp::to_blobs() const {
    std::vector<Blob> blobs;
    for (const auto& l : layers_) {
        Blob w{static_cast<std::uint32_t>(l.weight.cols()), static_cast<std::uint32_t>(l.weight.rows()),
               1, {}};
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) {
                w.values.push_back(static_cast<float>(l.weight(r, c)));
            }
        }
        Blob b{1, static_cast<std::uint32_t>(l.bias.size()), 1, {}};
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) {
            b.values.push_back(static_cast<float>(l.bias(r)));
        }
        blobs.push_back(std::move(w));
        blobs.push_back(std::move(b));
    }
    return blobs;
}

void Mlp::load_blobs(std::span<const Blob> blobs) {
    if (blobs.size() != 2 * layers_.size()) {
        throw ConfigError("MLP blob count does not match the layer count");
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto& l = layers_[i];
        const Blob& w = blobs[2 * i];
        const Blob& b = blobs[2 * i + 1];
        if (w.width != l.weight.cols() || w.height != l.weight.rows() || w.channels != 1 ||
            b.width != 1 || b.height != l.bias.size() || b.channels != 1) {
            throw ConfigError("MLP layer " + std::to_string(i) + " shape mismatch");
        }
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) {
                l.weight(r, c) = w.values[static_cast<std::size_t>(r * l.weight.cols() + c)];
            }
        }
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) {
            l.bias(r) = b.values[static_cast<std::size_t>(r)];
        }
    }
}

} // namespace npva
