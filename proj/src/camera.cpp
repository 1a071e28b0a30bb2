// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#include "npva/camera.hpp"

#include "npva/error.hpp"
#include "npva/json_util.hpp"

#include <Eigen/Geometry>

namespace npva {

Camera::Camera(const Mat3& intrinsics, const Mat3& rotation, const Vec3& translation, int width,
               int height)
    : k_(intrinsics), r_(rotation), t_(translation), width_(width), height_(height) {
    validate();
}

void Camera::validate() const {
    if (width_ <= 0 || height_ <= 0) {
        throw ConfigError("camera image size must be positive");
    }
    if (!(k_(0, 0) > 0.0) || !(k_(1, 1) > 0.0)) {
        throw ConfigError("camera focal lengths must be positive");
    }
    if ((r_.transpose() * r_ - Mat3::Identity()).norm() >= 1e-6) {
        throw ConfigError("camera rotation is not orthonormal");
    }
    if (!k_.allFinite() || !t_.allFinite()) {
        throw ConfigError("camera parameters must be finite");
    }
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal,
                       int width, int height) {
    const Vec3 z = (target - eye).normalized();
    const Vec3 x = z.cross(up).normalized();
    const Vec3 y = z.cross(x);
    Mat3 r;
    r.row(0) = x.transpose();
    r.row(1) = y.transpose();
    r.row(2) = z.transpose();
    Mat3 k = Mat3::Identity();
    k(0, 0) = focal;
    k(1, 1) = focal;
    k(0, 2) = 0.5 * width;
    k(1, 2) = 0.5 * height;
    return Camera(k, r, -r * eye, width, height);
}

Vec3 Camera::camera_dir(int px, int py) const {
    const Vec3 d((px + 0.5 - cx()) / fx(), (py + 0.5 - cy()) / fy(), 1.0);
    return d.normalized();
}

Ray Camera::ray(int px, int py) const {
    Ray ray;
    ray.origin = center();
    ray.dir = (r_.transpose() * camera_dir(px, py)).normalized();
    ray.px = px;
    ray.py = py;
    return ray;
}

Camera Camera::translated_along_axis(double delta) const {
    Vec3 t = t_;
    t.z() -= delta;
    return Camera(k_, r_, t, width_, height_);
}

nlohmann::json Camera::to_json() const {
    nlohmann::json rot = nlohmann::json::array();
    for (int i = 0; i < 3; ++i) {
        rot.push_back({r_(i, 0), r_(i, 1), r_(i, 2)});
    }
    return {{"width", width_},
            {"height", height_},
            {"fx", fx()},
            {"fy", fy()},
            {"cx", cx()},
            {"cy", cy()},
            {"rotation", rot},
            {"translation", {t_.x(), t_.y(), t_.z()}}};
}

Camera Camera::from_json(const nlohmann::json& j) {
    check_keys(j, {"width", "height", "fx", "fy", "cx", "cy", "rotation", "translation"}, "camera");
    try {
        Mat3 k = Mat3::Identity();
        k(0, 0) = j.at("fx").get<double>();
        k(1, 1) = j.at("fy").get<double>();
        k(0, 2) = j.at("cx").get<double>();
        k(1, 2) = j.at("cy").get<double>();
        Mat3 r;
        for (int i = 0; i < 3; ++i) {
            for (int c = 0; c < 3; ++c) {
                r(i, c) = j.at("rotation").at(i).at(c).get<double>();
            }
        }
        Vec3 t;
        for (int i = 0; i < 3; ++i) {
            t(i) = j.at("translation").at(i).get<double>();
        }
        return Camera(k, r, t, j.at("width").get<int>(), j.at("height").get<int>());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed camera: ") + e.what());
    }
}

} // namespace npva
