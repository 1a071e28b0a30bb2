// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#include "npva/losses.hpp"

#include "npva/error.hpp"
#include "npva/json_util.hpp"

#include <array>
#include <cmath>

namespace npva {

void LossWeights::validate() const {
    for (double v : {pho, per, d, rd, m, s, disp, kl}) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw ConfigError("loss weights must be finite and non-negative");
        }
    }
}

nlohmann::json LossWeights::to_json() const {
    return {{"pho", pho}, {"per", per}, {"d", d},       {"rd", rd},
            {"m", m},     {"s", s},     {"disp", disp}, {"kl", kl}};
}

LossWeights LossWeights::from_json(const nlohmann::json& j) {
    check_keys(j, {"pho", "per", "d", "rd", "m", "s", "disp", "kl"}, "loss weights");
    LossWeights w;
    w.pho = j.value("pho", w.pho);
    w.per = j.value("per", w.per);
    w.d = j.value("d", w.d);
    w.rd = j.value("rd", w.rd);
    w.m = j.value("m", w.m);
    w.s = j.value("s", w.s);
    w.disp = j.value("disp", w.disp);
    w.kl = j.value("kl", w.kl);
    w.validate();
    return w;
}

double LossBreakdown::combine(const LossWeights& w) {
    total = w.pho * pho + w.per * per + w.d * d + w.rd * rd + w.m * m + w.s * s + w.disp * disp;
    return total;
}

bool LossBreakdown::all_finite() const {
    for (double v : {pho, per, d, rd, m, s, disp, total}) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
    pho += o.pho;
    per += o.per;
    d += o.d;
    rd += o.rd;
    m += o.m;
    s += o.s;
    disp += o.disp;
    total += o.total;
    return *this;
}

LossBreakdown& LossBreakdown::operator*=(double k) {
    pho *= k;
    per *= k;
    d *= k;
    rd *= k;
    m *= k;
    s *= k;
    disp *= k;
    total *= k;
    return *this;
}

nlohmann::json LossBreakdown::to_json() const {
    return {{"pho", pho}, {"per", per}, {"d", d},       {"rd", rd},
            {"m", m},     {"s", s},     {"disp", disp}, {"total", total}};
}

double photometric_loss(std::span<const Vec3> rendered, std::span<const Vec3> reference,
                        std::span<Vec3> grad, double scale) {
    if (rendered.size() != reference.size() || (!grad.empty() && grad.size() != rendered.size())) {
        throw ConfigError("photometric_loss: mismatched inputs");
    }
    if (rendered.empty()) {
        return 0.0;
    }
    const double inv = 1.0 / static_cast<double>(rendered.size());
    double total = 0.0;
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        const Vec3 e = rendered[i] - reference[i];
        total += e.squaredNorm();
        if (!grad.empty()) {
            grad[i] += (2.0 * inv * scale) * e;
        }
    }
    return total * inv;
}

double masked_depth_loss(std::span<const double> pred, std::span<const double> target,
                         std::span<const std::uint8_t> valid, double threshold,
                         std::span<double> grad_pred, std::span<double> grad_target,
                         double scale) {
    const std::size_t n = pred.size();
    if (target.size() != n || valid.size() != n || (!grad_pred.empty() && grad_pred.size() != n) ||
        (!grad_target.empty() && grad_target.size() != n)) {
        throw ConfigError("masked_depth_loss: mismatched inputs");
    }
    if (n == 0) {
        return 0.0;
    }
    const double inv = 1.0 / static_cast<double>(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = pred[i] - target[i];
        if (!valid[i] || !(std::abs(e) < threshold)) {
            continue;
        }
        total += std::abs(e);
        const double g = (e > 0.0 ? 1.0 : e < 0.0 ? -1.0 : 0.0) * inv * scale;
        if (!grad_pred.empty()) {
            grad_pred[i] += g;
        }
        if (!grad_target.empty()) {
            grad_target[i] -= g;
        }
    }
    return total * inv;
}

double position_loss(const UvPositionMap& pos, const UvPositionMap& reference, std::span<Vec3> grad,
                     double scale) {
    if (pos.size != reference.size || (!grad.empty() && grad.size() != pos.texel_count())) {
        throw ConfigError("position_loss: mismatched maps");
    }
    std::size_t count = 0;
    for (std::size_t i = 0; i < pos.texel_count(); ++i) {
        count += pos.valid[i] && reference.valid[i];
    }
    if (count == 0) {
        return 0.0;
    }
    const double inv = 1.0 / static_cast<double>(count);
    double total = 0.0;
    for (std::size_t i = 0; i < pos.texel_count(); ++i) {
        if (!pos.valid[i] || !reference.valid[i]) {
            continue;
        }
        const Vec3 e = pos.positions[i] - reference.positions[i];
        total += e.squaredNorm();
        if (!grad.empty()) {
            grad[i] += (2.0 * inv * scale) * e;
        }
    }
    return total * inv;
}

double displacement_loss(const UvDisplacementMap& disp, double threshold, std::span<Vec3> grad,
                         double scale) {
    if (!grad.empty() && grad.size() != disp.displacements.size()) {
        throw ConfigError("displacement_loss: gradient buffer has the wrong size");
    }
    if (disp.displacements.empty()) {
        return 0.0;
    }
    const double inv = 1.0 / static_cast<double>(disp.displacements.size());
    double total = 0.0;
    for (std::size_t i = 0; i < disp.displacements.size(); ++i) {
        for (int c = 0; c < 3; ++c) {
            const double v = disp.displacements[i](c);
            if (std::abs(v) > threshold) {
                total += v * v;
                if (!grad.empty()) {
                    grad[i](c) += 2.0 * v * inv * scale;
                }
            }
        }
    }
    return total * inv;
}

namespace {

constexpr std::array<std::array<double, 3>, 3> kSobelX{{{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}}};
constexpr std::array<std::array<double, 3>, 3> kSobelY{{{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}}};

struct Plane {
    int w = 0;
    int h = 0;
    std::vector<double> v;
    double& at(int x, int y) { return v[static_cast<std::size_t>(y) * w + x]; }
    double at(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

Plane channel_difference(const Image& a, const Image& b, int c) {
    Plane p{a.width, a.height, std::vector<double>(a.pixel_count())};
    for (std::size_t i = 0; i < a.pixel_count(); ++i) {
        p.v[i] = a.rgb[3 * i + c] - b.rgb[3 * i + c];
    }
    return p;
}

Plane pool2(const Plane& p) {
    Plane q{p.w / 2, p.h / 2, std::vector<double>(static_cast<std::size_t>(p.w / 2) * (p.h / 2))};
    for (int y = 0; y < q.h; ++y) {
        for (int x = 0; x < q.w; ++x) {
            q.at(x, y) = 0.25 * (p.at(2 * x, 2 * y) + p.at(2 * x + 1, 2 * y) +
                                 p.at(2 * x, 2 * y + 1) + p.at(2 * x + 1, 2 * y + 1));
        }
    }
    return q;
}

void pool2_adjoint(const Plane& g, Plane& out) {
    for (int y = 0; y < g.h; ++y) {
        for (int x = 0; x < g.w; ++x) {
            const double v = 0.25 * g.at(x, y);
            out.at(2 * x, 2 * y) += v;
            out.at(2 * x + 1, 2 * y) += v;
            out.at(2 * x, 2 * y + 1) += v;
            out.at(2 * x + 1, 2 * y + 1) += v;
        }
    }
}

// Sum of squared Sobel responses over interior pixels; adds
// d/d(p) of (factor * sum) into `grad` when non-null.
double sobel_energy(const Plane& p, double factor, Plane* grad) {
    double total = 0.0;
    for (int y = 1; y + 1 < p.h; ++y) {
        for (int x = 1; x + 1 < p.w; ++x) {
            double gx = 0.0;
            double gy = 0.0;
            for (int j = 0; j < 3; ++j) {
                for (int i = 0; i < 3; ++i) {
                    const double v = p.at(x + i - 1, y + j - 1);
                    gx += kSobelX[j][i] * v;
                    gy += kSobelY[j][i] * v;
                }
            }
            total += gx * gx + gy * gy;
            if (grad) {
                for (int j = 0; j < 3; ++j) {
                    for (int i = 0; i < 3; ++i) {
                        grad->at(x + i - 1, y + j - 1) +=
                            2.0 * factor * (gx * kSobelX[j][i] + gy * kSobelY[j][i]);
                    }
                }
            }
        }
    }
    return total;
}

} // namespace

double GradientStructureLoss::evaluate(const Image& rendered, const Image& reference,
                                       Image* grad) const {
    if (rendered.width != reference.width || rendered.height != reference.height) {
        throw ConfigError("patch loss: rendered and reference patches differ in shape");
    }
    if (grad) {
        *grad = Image(rendered.width, rendered.height);
    }
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        const Plane diff = channel_difference(rendered, reference, c);
        Plane g{diff.w, diff.h, std::vector<double>(diff.v.size(), 0.0)};
        if (diff.w >= 3 && diff.h >= 3) {
            const double n = 2.0 * 3.0 * (diff.w - 2) * (diff.h - 2);
            total += sobel_energy(diff, 1.0 / n, grad ? &g : nullptr) / n;
        }
        const Plane half = pool2(diff);
        if (half.w >= 3 && half.h >= 3) {
            const double n = 2.0 * 3.0 * (half.w - 2) * (half.h - 2);
            Plane gh{half.w, half.h, std::vector<double>(half.v.size(), 0.0)};
            total += sobel_energy(half, 1.0 / n, grad ? &gh : nullptr) / n;
            if (grad) {
                pool2_adjoint(gh, g);
            }
        }
        if (grad) {
            for (std::size_t i = 0; i < g.v.size(); ++i) {
                grad->rgb[3 * i + c] = g.v[i];
            }
        }
    }
    return total;
}

LossBreakdown compute_losses(const LossInputs& in, const LossWeights& w,
                             const LossThresholds& thr) {
    LossBreakdown b;
    b.pho = photometric_loss(in.rendered_rgb, in.reference_rgb);
    if (!in.reference_depth.empty()) {
        b.d = masked_depth_loss(in.rendered_depth, in.reference_depth, in.depth_valid, thr.depth);
    }
    if (!in.raster_depth.empty()) {
        std::vector<std::uint8_t> valid(in.raster_valid.begin(), in.raster_valid.end());
        for (std::size_t i = 0; i < valid.size() && i < in.depth_valid.size(); ++i) {
            valid[i] = valid[i] && in.depth_valid[i];
        }
        b.rd = masked_depth_loss(in.raster_depth, in.reference_depth, valid, thr.depth);
    }
    if (in.position && in.reference_position) {
        b.m = position_loss(*in.position, *in.reference_position);
    }
    if (in.position) {
        b.s = tv_loss(*in.position);
    }
    if (in.displacement) {
        b.disp = displacement_loss(*in.displacement, thr.displacement);
    }
    if (in.patch && in.reference_patch && in.patch_loss) {
        b.per = in.patch_loss->evaluate(*in.patch, *in.reference_patch, nullptr);
    }
    b.combine(w);
    if (!b.all_finite()) {
        throw NumericalError("loss evaluation produced a non-finite value: " + b.to_json().dump());
    }
    return b;
}

} // namespace npva
