// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#include "npva/optimizer.hpp"

#include "npva/error.hpp"
#include "npva/json_util.hpp"
#include "npva/types.hpp"

#include <cmath>

namespace npva {

void AdamConfig::validate() const {
    if (!(lr >= 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) ||
        !(eps > 0.0)) {
        throw ConfigError("adam: need lr >= 0, betas in [0, 1), eps > 0");
    }
}

nlohmann::json AdamConfig::to_json() const {
    return {{"lr", lr}, {"beta1", beta1}, {"beta2", beta2}, {"eps", eps}};
}

AdamConfig AdamConfig::from_json(const nlohmann::json& j) {
    check_keys(j, {"lr", "beta1", "beta2", "eps"}, "adam config");
    AdamConfig c;
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.validate();
    return c;
}

Adam::Adam(AdamConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void Adam::update(std::size_t slot, std::span<double> params, std::span<const double> grad,
                  double lr) {
    if (params.size() != grad.size()) {
        throw ConfigError("adam: parameter and gradient sizes differ");
    }
    if (step_ == 0) {
        throw ConfigError("adam: begin_step() must precede update()");
    }
    if (slots_.size() <= slot) {
        slots_.resize(slot + 1);
    }
    Moments& mo = slots_[slot];
    if (mo.m.empty()) {
        mo.m.assign(params.size(), 0.0);
        mo.v.assign(params.size(), 0.0);
    } else if (mo.m.size() != params.size()) {
        throw ConfigError("adam: slot changed size between steps");
    }
    if (lr == 0.0) {
        return;
    }
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i];
        mo.m[i] = cfg_.beta1 * mo.m[i] + (1.0 - cfg_.beta1) * g;
        mo.v[i] = cfg_.beta2 * mo.v[i] + (1.0 - cfg_.beta2) * g * g;
        const double step = lr * (mo.m[i] / c1) / (std::sqrt(mo.v[i] / c2) + cfg_.eps);
        params[i] = snap_f32(params[i] - step);
    }
}

} // namespace npva
