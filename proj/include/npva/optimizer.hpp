// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <span>
#include <vector>

namespace npva {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const;
    nlohmann::json to_json() const;
    static AdamConfig from_json(const nlohmann::json& j);
};

/// Adam over any number of flat parameter blocks ("slots"). Updated values
/// are rounded to the float32 lattice.
class Adam {
  public:
    explicit Adam(AdamConfig cfg = {});

    const AdamConfig& config() const { return cfg_; }
    long long step_count() const { return step_; }

    /// Advances the shared step counter used for bias correction.
    void begin_step() { ++step_; }
    /// Applies one update to `params` with learning rate `lr`. A slot keeps
    /// its moments between calls and must always see the same size.
    void update(std::size_t slot, std::span<double> params, std::span<const double> grad,
                double lr);

  private:
    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
    };

    AdamConfig cfg_;
    long long step_ = 0;
    std::vector<Moments> slots_;
};

} // namespace npva
