// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>

namespace npva {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;

/// Radiance at a shading point: density in 1/mm and RGB color in [0, 1].
struct Radiance {
    double sigma = 0.0;
    Vec3 color = Vec3::Zero();
};

/// Rounds to the nearest float32 value. Trainable parameters are kept on the
/// float32 lattice so checkpoints round-trip without loss.
inline double snap_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

} // namespace npva
