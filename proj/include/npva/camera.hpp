// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "npva/types.hpp"

#include <json.hpp>

namespace npva {

struct Ray {
    Vec3 origin = Vec3::Zero();
    Vec3 dir = Vec3::UnitZ();
    int px = 0;
    int py = 0;
};

/// Pinhole camera, OpenCV convention (x right, y down, z forward).
/// Pixel (x, y) covers [x, x+1) x [y, y+1); rays pass through pixel centres.
class Camera {
  public:
    Camera() = default;
    Camera(const Mat3& intrinsics, const Mat3& rotation, const Vec3& translation, int width,
           int height);

    /// Camera at `eye` looking at `target`, with `up` pointing up in the image.
    static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal,
                          int width, int height);

    const Mat3& intrinsics() const { return k_; }
    const Mat3& rotation() const { return r_; }
    const Vec3& translation() const { return t_; }
    int width() const { return width_; }
    int height() const { return height_; }
    double fx() const { return k_(0, 0); }
    double fy() const { return k_(1, 1); }
    double cx() const { return k_(0, 2); }
    double cy() const { return k_(1, 2); }

    Vec3 center() const { return -r_.transpose() * t_; }
    Vec3 to_camera(const Vec3& world) const { return r_ * world + t_; }
    /// Unit ray direction in camera coordinates through the pixel centre.
    Vec3 camera_dir(int px, int py) const;
    Ray ray(int px, int py) const;

    /// Copy moved by `delta` along its own optical axis.
    Camera translated_along_axis(double delta) const;

    nlohmann::json to_json() const;
    static Camera from_json(const nlohmann::json& j);

  private:
    void validate() const;

    Mat3 k_ = Mat3::Identity();
    Mat3 r_ = Mat3::Identity();
    Vec3 t_ = Vec3::Zero();
    int width_ = 0;
    int height_ = 0;
};

} // namespace npva
