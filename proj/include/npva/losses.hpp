// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "npva/geometry.hpp"
#include "npva/image.hpp"
#include "npva/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace npva {

struct LossWeights {
    double pho = 5.0;
    double per = 0.1;
    double d = 0.1;
    double rd = 0.2;
    double m = 0.2;
    double s = 1.0;
    double disp = 0.1;
    double kl = 0.001; // kept for config compatibility; there is no latent code to regularise

    void validate() const;
    nlohmann::json to_json() const;
    static LossWeights from_json(const nlohmann::json& j);
};

struct LossThresholds {
    double depth = 10.0;        // mm; larger depth errors are masked out
    double displacement = 10.0; // mm; smaller displacement components are free
};

struct LossBreakdown {
    double pho = 0.0;
    double per = 0.0;
    double d = 0.0;
    double rd = 0.0;
    double m = 0.0;
    double s = 0.0;
    double disp = 0.0;
    double total = 0.0;

    /// Sets `total` from the parts and returns it.
    double combine(const LossWeights& w);
    bool all_finite() const;
    LossBreakdown& operator+=(const LossBreakdown& o);
    LossBreakdown& operator*=(double k);
    nlohmann::json to_json() const;
};

/// Mean over rays of the squared RGB error. `grad` (optional) receives
/// d(loss)/d(rendered) scaled by `scale`.
double photometric_loss(std::span<const Vec3> rendered, std::span<const Vec3> reference,
                        std::span<Vec3> grad = {}, double scale = 1.0);

/// Mean over entries of |pred - target| where valid and |pred - target| < threshold.
double masked_depth_loss(std::span<const double> pred, std::span<const double> target,
                         std::span<const std::uint8_t> valid, double threshold,
                         std::span<double> grad_pred = {}, std::span<double> grad_target = {},
                         double scale = 1.0);

/// Mean over valid texels of the squared distance to the reference map.
double position_loss(const UvPositionMap& pos, const UvPositionMap& reference,
                     std::span<Vec3> grad = {}, double scale = 1.0);

/// Mean over texels of the squared displacement components whose magnitude
/// exceeds the threshold.
double displacement_loss(const UvDisplacementMap& disp, double threshold,
                         std::span<Vec3> grad = {}, double scale = 1.0);

/// Pluggable loss on a rendered image patch.
class PatchLoss {
  public:
    virtual ~PatchLoss() = default;
    /// `grad`, when given, is resized to the patch and receives d(loss)/d(rendered).
    virtual double evaluate(const Image& rendered, const Image& reference, Image* grad) const = 0;
};

/// Squared error of Sobel responses at full and half resolution, averaged per
/// scale over responses and channels.
class GradientStructureLoss final : public PatchLoss {
  public:
    double evaluate(const Image& rendered, const Image& reference, Image* grad) const override;
};

/// Everything compute_losses may look at. Empty spans / null pointers switch
/// a term off (it reads 0).
struct LossInputs {
    std::span<const Vec3> rendered_rgb;
    std::span<const Vec3> reference_rgb;
    std::span<const double> rendered_depth;
    std::span<const double> reference_depth;
    std::span<const std::uint8_t> depth_valid;
    std::span<const double> raster_depth;
    std::span<const std::uint8_t> raster_valid;
    const UvPositionMap* position = nullptr;
    const UvPositionMap* reference_position = nullptr;
    const UvDisplacementMap* displacement = nullptr;
    const Image* patch = nullptr;
    const Image* reference_patch = nullptr;
    const PatchLoss* patch_loss = nullptr;
};

LossBreakdown compute_losses(const LossInputs& in, const LossWeights& w,
                             const LossThresholds& thr = {});

} // namespace npva
