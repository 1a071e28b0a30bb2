// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "npva/blob.hpp"

#include <Eigen/Core>

#include <random>
#include <span>
#include <string>
#include <vector>

namespace npva {

enum class Activation { Identity, Relu, Softplus, Sigmoid };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct DenseLayer {
    Eigen::MatrixXd weight; // out x in
    Eigen::VectorXd bias;
};

struct MlpGradient {
    std::vector<Eigen::MatrixXd> weight;
    std::vector<Eigen::VectorXd> bias;

    void set_zero();
    MlpGradient& operator+=(const MlpGradient& other);
    double squared_norm() const;
};

/// Fully connected network. Batches are column-major: one sample per column.
class Mlp {
  public:
    /// Activations cached by a forward pass, consumed by backward().
    struct Cache {
        std::vector<Eigen::MatrixXd> inputs; // input to each layer
        std::vector<Eigen::MatrixXd> pre;    // pre-activation of each layer
        Eigen::MatrixXd output;
    };

    Mlp() = default;
    Mlp(int input_dim, const std::vector<int>& hidden, int output_dim, Activation hidden_act,
        Activation output_act);

    /// He-uniform weights, zero biases, all values on the float32 lattice.
    void initialize(std::mt19937_64& rng);

    int input_dim() const;
    int output_dim() const;
    Activation hidden_activation() const { return hidden_act_; }
    Activation output_activation() const { return output_act_; }
    std::vector<int> hidden_sizes() const;

    std::vector<DenseLayer>& layers() { return layers_; }
    const std::vector<DenseLayer>& layers() const { return layers_; }
    std::size_t parameter_count() const;

    Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
    const Eigen::MatrixXd& forward(const Eigen::MatrixXd& x, Cache& cache) const;

    /// Accumulates parameter gradients into `grad` and returns d(loss)/d(input).
    Eigen::MatrixXd backward(const Cache& cache, const Eigen::MatrixXd& grad_output,
                             MlpGradient& grad) const;

    MlpGradient zero_gradient() const;

    /// One (weight, bias) blob pair per layer: weight is width=in, height=out.
    std::vector<Blob> to_blobs() const;
    /// Loads weights into an already-shaped network; throws on shape mismatch.
    void load_blobs(std::span<const Blob> blobs);

  private:
    std::vector<DenseLayer> layers_;
    Activation hidden_act_ = Activation::Relu;
    Activation output_act_ = Activation::Identity;
};

double softplus(double z);
double sigmoid(double z);

} // namespace npva
