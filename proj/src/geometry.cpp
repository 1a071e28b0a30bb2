// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#include "npva/geometry.hpp"

#include "npva/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace npva {

namespace {

void check_square_blob(const Blob& blob, std::uint32_t channels, const char* what) {
    if (blob.width != blob.height || blob.width == 0) {
        throw ConfigError(std::string(what) + ": UV blobs must be square and non-empty");
    }
    if (channels != 0 && blob.channels != channels) {
        throw ConfigError(std::string(what) + ": unexpected channel count " +
                          std::to_string(blob.channels));
    }
}

} // namespace

std::size_t UvPositionMap::valid_count() const {
    return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1));
}

void UvPositionMap::validate() const {
    const std::size_t n = static_cast<std::size_t>(size) * size;
    if (size <= 0 || positions.size() != n || valid.size() != n) {
        throw ConfigError("position map storage does not match its size");
    }
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
        if (valid[i]) {
            any = true;
            if (!positions[i].allFinite()) {
                throw ConfigError("position map holds a non-finite valid texel");
            }
        }
    }
    if (!any) {
        throw ConfigError("position map has no valid texel");
    }
}

Blob UvPositionMap::to_blob() const {
    Blob b{static_cast<std::uint32_t>(size), static_cast<std::uint32_t>(size), 4, {}};
    b.values.reserve(texel_count() * 4);
    for (std::size_t i = 0; i < texel_count(); ++i) {
        b.values.push_back(static_cast<float>(positions[i].x()));
        b.values.push_back(static_cast<float>(positions[i].y()));
        b.values.push_back(static_cast<float>(positions[i].z()));
        b.values.push_back(valid[i] ? 1.0f : 0.0f);
    }
    return b;
}

UvPositionMap UvPositionMap::from_blob(const Blob& blob) {
    check_square_blob(blob, 4, "position map");
    UvPositionMap m(static_cast<int>(blob.width));
    for (std::size_t i = 0; i < m.texel_count(); ++i) {
        m.positions[i] = Vec3(blob.values[4 * i], blob.values[4 * i + 1], blob.values[4 * i + 2]);
        m.valid[i] = blob.values[4 * i + 3] != 0.0f;
    }
    m.validate();
    return m;
}

void UvDisplacementMap::validate() const {
    if (size <= 0 || displacements.size() != static_cast<std::size_t>(size) * size) {
        throw ConfigError("displacement map storage does not match its size");
    }
    for (const Vec3& d : displacements) {
        if (!d.allFinite()) {
            throw ConfigError("displacement map holds a non-finite value");
        }
    }
}

Blob UvDisplacementMap::to_blob() const {
    Blob b{static_cast<std::uint32_t>(size), static_cast<std::uint32_t>(size), 3, {}};
    b.values.reserve(displacements.size() * 3);
    for (const Vec3& d : displacements) {
        b.values.push_back(static_cast<float>(d.x()));
        b.values.push_back(static_cast<float>(d.y()));
        b.values.push_back(static_cast<float>(d.z()));
    }
    return b;
}

UvDisplacementMap UvDisplacementMap::from_blob(const Blob& blob) {
    check_square_blob(blob, 3, "displacement map");
    UvDisplacementMap m(static_cast<int>(blob.width));
    for (std::size_t i = 0; i < m.displacements.size(); ++i) {
        m.displacements[i] = Vec3(blob.values[3 * i], blob.values[3 * i + 1], blob.values[3 * i + 2]);
    }
    m.validate();
    return m;
}

void UvFeatureMap::validate() const {
    if (size <= 0 || channels <= 0 ||
        values.size() != static_cast<std::size_t>(size) * size * channels) {
        throw ConfigError("feature map storage does not match its size");
    }
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw ConfigError("feature map holds a non-finite value");
        }
    }
}

Blob UvFeatureMap::to_blob() const {
    Blob b{static_cast<std::uint32_t>(size), static_cast<std::uint32_t>(size),
           static_cast<std::uint32_t>(channels), {}};
    b.values.assign(values.begin(), values.end());
    return b;
}

UvFeatureMap UvFeatureMap::from_blob(const Blob& blob) {
    check_square_blob(blob, 0, "feature map");
    UvFeatureMap m(static_cast<int>(blob.width), static_cast<int>(blob.channels));
    m.values.assign(blob.values.begin(), blob.values.end());
    m.validate();
    return m;
}

void NeuralPointCloud::validate() const {
    if (points.empty()) {
        throw ConfigError("point cloud is empty");
    }
    if (channels <= 0 || features.size() != points.size() * channels ||
        uv_origin.size() != points.size()) {
        throw ConfigError("point cloud arrays disagree in length");
    }
    for (const Vec3& p : points) {
        if (!p.allFinite()) {
            throw ConfigError("point cloud holds a non-finite position");
        }
    }
}

Upsampler::Upsampler(const UvPositionMap& source, int target_size)
    : source_size_(source.size), target_size_(target_size) {
    const int n = source.size;
    if (n <= 0 || target_size < n || target_size % n != 0) {
        throw ConfigError("upsampling target " + std::to_string(target_size) +
                          " is not an integer multiple of " + std::to_string(n));
    }
    const int m = target_size;
    taps_.resize(static_cast<std::size_t>(m) * m);
    const double scale = m > 1 ? static_cast<double>(n - 1) / (m - 1) : 0.0;
    for (int v = 0; v < m; ++v) {
        const double sv = v * scale;
        const int v0 = std::min(static_cast<int>(std::floor(sv)), n - 1);
        const int v1 = std::min(v0 + 1, n - 1);
        const double fv = sv - v0;
        for (int u = 0; u < m; ++u) {
            const double su = u * scale;
            const int u0 = std::min(static_cast<int>(std::floor(su)), n - 1);
            const int u1 = std::min(u0 + 1, n - 1);
            const double fu = su - u0;
            const std::array<std::pair<std::size_t, double>, 4> cand{{
                {source.index(u0, v0), (1.0 - fu) * (1.0 - fv)},
                {source.index(u1, v0), fu * (1.0 - fv)},
                {source.index(u0, v1), (1.0 - fu) * fv},
                {source.index(u1, v1), fu * fv},
            }};
            Tap tap;
            double total = 0.0;
            for (const auto& [idx, w] : cand) {
                if (w > 0.0 && source.valid[idx]) {
                    tap.src[tap.count] = static_cast<std::uint32_t>(idx);
                    tap.weight[tap.count] = w;
                    ++tap.count;
                    total += w;
                }
            }
            for (int k = 0; k < tap.count; ++k) {
                tap.weight[k] /= total;
            }
            taps_[static_cast<std::size_t>(v) * m + u] = tap;
        }
    }
}

UvPositionMap Upsampler::apply(const UvPositionMap& source) const {
    if (source.size != source_size_) {
        throw ConfigError("upsampler applied to a map of the wrong size");
    }
    UvPositionMap out(target_size_);
    for (std::size_t i = 0; i < taps_.size(); ++i) {
        const Tap& tap = taps_[i];
        Vec3 p = Vec3::Zero();
        for (int k = 0; k < tap.count; ++k) {
            p += tap.weight[k] * source.positions[tap.src[k]];
        }
        out.positions[i] = p;
        out.valid[i] = tap.count > 0;
    }
    return out;
}

std::vector<Vec3> Upsampler::apply_transpose(std::span<const Vec3> target_grad) const {
    if (target_grad.size() != taps_.size()) {
        throw ConfigError("upsampler adjoint given a gradient of the wrong size");
    }
    std::vector<Vec3> out(static_cast<std::size_t>(source_size_) * source_size_, Vec3::Zero());
    for (std::size_t i = 0; i < taps_.size(); ++i) {
        const Tap& tap = taps_[i];
        for (int k = 0; k < tap.count; ++k) {
            out[tap.src[k]] += tap.weight[k] * target_grad[i];
        }
    }
    return out;
}

UvPositionMap upsample_position_map(const UvPositionMap& pos, int target_size) {
    pos.validate();
    return Upsampler(pos, target_size).apply(pos);
}

NeuralPointCloud compose_points(const UvPositionMap& positions, const UvDisplacementMap& disp,
                                const UvFeatureMap& features) {
    if (positions.size != disp.size || positions.size != features.size) {
        throw ConfigError("compose_points: position, displacement and feature maps differ in size");
    }
    if (features.channels <= 0) {
        throw ConfigError("compose_points: feature map has no channels");
    }
    NeuralPointCloud cloud;
    cloud.channels = features.channels;
    cloud.uv_size = positions.size;
    const std::size_t n = positions.valid_count();
    cloud.points.reserve(n);
    cloud.features.reserve(n * features.channels);
    cloud.uv_origin.reserve(n);
    for (int v = 0; v < positions.size; ++v) {
        for (int u = 0; u < positions.size; ++u) {
            const std::size_t i = positions.index(u, v);
            if (!positions.valid[i]) {
                continue;
            }
            cloud.points.push_back(positions.positions[i] + disp.displacements[i]);
            const auto f = features.texel(i);
            cloud.features.insert(cloud.features.end(), f.begin(), f.end());
            cloud.uv_origin.push_back({u, v});
        }
    }
    return cloud;
}

std::vector<std::array<std::uint32_t, 3>> uv_triangles(const UvPositionMap& pos) {
    std::vector<std::array<std::uint32_t, 3>> tris;
    for (int v = 0; v + 1 < pos.size; ++v) {
        for (int u = 0; u + 1 < pos.size; ++u) {
            const auto a = static_cast<std::uint32_t>(pos.index(u, v));
            const auto b = static_cast<std::uint32_t>(pos.index(u + 1, v));
            const auto c = static_cast<std::uint32_t>(pos.index(u + 1, v + 1));
            const auto d = static_cast<std::uint32_t>(pos.index(u, v + 1));
            if (pos.valid[a] && pos.valid[b] && pos.valid[c]) {
                tris.push_back({a, b, c});
            }
            if (pos.valid[a] && pos.valid[c] && pos.valid[d]) {
                tris.push_back({a, c, d});
            }
        }
    }
    return tris;
}

Rasterization rasterize(const UvPositionMap& pos, const Camera& cam) {
    constexpr double kNearZ = 1e-6;
    constexpr double kMinArea = 1e-12;

    const int w = cam.width();
    const int h = cam.height();
    Rasterization out;
    out.depth = DepthMap(w, h);
    out.vertex.assign(static_cast<std::size_t>(w) * h, {0, 0, 0});
    out.dz_dvertex.assign(static_cast<std::size_t>(w) * h,
                          {Vec3::Zero(), Vec3::Zero(), Vec3::Zero()});
    const Mat3 to_world = cam.rotation().transpose();

    std::vector<Vec3> cam_pos(pos.texel_count());
    std::vector<Eigen::Vector2d> screen(pos.texel_count());
    for (std::size_t i = 0; i < pos.texel_count(); ++i) {
        if (!pos.valid[i]) {
            continue;
        }
        const Vec3 pc = cam.to_camera(pos.positions[i]);
        cam_pos[i] = pc;
        screen[i] = Eigen::Vector2d(cam.fx() * pc.x() / pc.z() + cam.cx(),
                                    cam.fy() * pc.y() / pc.z() + cam.cy());
    }

    auto edge = [](const Eigen::Vector2d& a, const Eigen::Vector2d& b, double px, double py) {
        return (b.x() - a.x()) * (py - a.y()) - (b.y() - a.y()) * (px - a.x());
    };

    for (const auto& tri : uv_triangles(pos)) {
        const double z0 = cam_pos[tri[0]].z();
        const double z1 = cam_pos[tri[1]].z();
        const double z2 = cam_pos[tri[2]].z();
        if (z0 <= kNearZ || z1 <= kNearZ || z2 <= kNearZ) {
            continue;
        }
        const Eigen::Vector2d& s0 = screen[tri[0]];
        const Eigen::Vector2d& s1 = screen[tri[1]];
        const Eigen::Vector2d& s2 = screen[tri[2]];
        const double area = edge(s0, s1, s2.x(), s2.y());
        if (std::abs(area) < kMinArea) {
            continue;
        }
        const Vec3& p0 = cam_pos[tri[0]];
        const Vec3 normal = (cam_pos[tri[1]] - p0).cross(cam_pos[tri[2]] - p0);
        const double min_x = std::min({s0.x(), s1.x(), s2.x()});
        const double max_x = std::max({s0.x(), s1.x(), s2.x()});
        const double min_y = std::min({s0.y(), s1.y(), s2.y()});
        const double max_y = std::max({s0.y(), s1.y(), s2.y()});
        const int x_begin = std::max(0, static_cast<int>(std::ceil(min_x - 0.5)));
        const int x_end = std::min(w - 1, static_cast<int>(std::floor(max_x - 0.5)));
        const int y_begin = std::max(0, static_cast<int>(std::ceil(min_y - 0.5)));
        const int y_end = std::min(h - 1, static_cast<int>(std::floor(max_y - 0.5)));
        for (int py = y_begin; py <= y_end; ++py) {
            const double cy = py + 0.5;
            for (int px = x_begin; px <= x_end; ++px) {
                const double cx = px + 0.5;
                const double b0 = edge(s1, s2, cx, cy) / area;
                const double b1 = edge(s2, s0, cx, cy) / area;
                const double b2 = edge(s0, s1, cx, cy) / area;
                if (b0 < 0.0 || b1 < 0.0 || b2 < 0.0) {
                    continue;
                }
                const double z = 1.0 / (b0 / z0 + b1 / z1 + b2 / z2);
                const std::size_t idx = out.depth.index(px, py);
                if (out.depth.hit[idx] && !(z < out.depth.depth[idx])) {
                    continue;
                }
                out.depth.hit[idx] = 1;
                out.depth.depth[idx] = z;
                out.vertex[idx] = tri;
                // Ray-plane hit at depth z = n.p0 / n.q with q the pixel ray scaled to
                // unit z; moving vertex k changes it by its 3D barycentric weight times
                // n / n.q.
                const Vec3 q((cx - cam.cx()) / cam.fx(), (cy - cam.cy()) / cam.fy(), 1.0);
                const Vec3 g = to_world * (normal / normal.dot(q));
                out.dz_dvertex[idx] = {z * b0 / z0 * g, z * b1 / z1 * g, z * b2 / z2 * g};
            }
        }
    }
    return out;
}

DepthMap rasterize_depth(const UvPositionMap& pos, const Camera& cam) {
    return rasterize(pos, cam).depth;
}

std::vector<Vec3> texel_normals(const UvPositionMap& pos) {
    std::vector<Vec3> normals(pos.texel_count(), Vec3::Zero());
    for (const auto& tri : uv_triangles(pos)) {
        const Vec3& a = pos.positions[tri[0]];
        const Vec3 n = (pos.positions[tri[1]] - a).cross(pos.positions[tri[2]] - a);
        const double len = n.norm();
        if (len > 0.0) {
            for (std::uint32_t i : tri) {
                normals[i] += n / len;
            }
        }
    }
    for (Vec3& n : normals) {
        const double len = n.norm();
        n = len > 0.0 ? Vec3(n / len) : Vec3::Zero();
    }
    return normals;
}

ThicknessMap shell_thickness(const NeuralPointCloud& cloud, const UvPositionMap& surface,
                             int region) {
    if (region <= 0) {
        throw ConfigError("shell_thickness: region must be positive");
    }
    if (cloud.uv_size != surface.size) {
        throw ConfigError("shell_thickness: cloud was not composed on this surface grid");
    }
    const std::vector<Vec3> normals = texel_normals(surface);
    ThicknessMap out;
    out.size = (surface.size + region - 1) / region;
    const std::size_t cells = static_cast<std::size_t>(out.size) * out.size;
    out.variance.assign(cells, 0.0);
    out.counts.assign(cells, 0);

    std::vector<double> offset(cloud.size());
    std::vector<std::size_t> cell_of(cloud.size());
    std::vector<double> sum(cells, 0.0);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const std::size_t t = cloud.texel_index(i);
        offset[i] = (cloud.points[i] - surface.positions[t]).dot(normals[t]);
        const UvCoord uv = cloud.uv_origin[i];
        cell_of[i] = static_cast<std::size_t>(uv.v / region) * out.size + uv.u / region;
        sum[cell_of[i]] += offset[i];
        ++out.counts[cell_of[i]];
    }
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const std::size_t c = cell_of[i];
        const double d = offset[i] - sum[c] / out.counts[c];
        out.variance[c] += d * d;
    }
    for (std::size_t c = 0; c < cells; ++c) {
        out.variance[c] = out.counts[c] >= 2 ? out.variance[c] / out.counts[c] : 0.0;
    }
    return out;
}

namespace {

template <typename Fn>
void for_each_tv_pair(const UvPositionMap& pos, Fn&& fn) {
    for (int v = 0; v < pos.size; ++v) {
        for (int u = 0; u < pos.size; ++u) {
            const std::size_t a = pos.index(u, v);
            if (!pos.valid[a]) {
                continue;
            }
            if (u + 1 < pos.size && pos.valid[a + 1]) {
                fn(a, a + 1);
            }
            if (v + 1 < pos.size && pos.valid[a + pos.size]) {
                fn(a, a + pos.size);
            }
        }
    }
}

} // namespace

double tv_loss(const UvPositionMap& pos) {
    double total = 0.0;
    std::size_t pairs = 0;
    for_each_tv_pair(pos, [&](std::size_t a, std::size_t b) {
        total += (pos.positions[b] - pos.positions[a]).squaredNorm();
        ++pairs;
    });
    return pairs ? total / static_cast<double>(pairs) : 0.0;
}

double tv_loss(const UvPositionMap& pos, std::span<Vec3> grad, double scale) {
    if (grad.size() != pos.texel_count()) {
        throw ConfigError("tv_loss: gradient buffer has the wrong size");
    }
    std::size_t pairs = 0;
    for_each_tv_pair(pos, [&](std::size_t, std::size_t) { ++pairs; });
    if (pairs == 0) {
        return 0.0;
    }
    const double inv = 1.0 / static_cast<double>(pairs);
    double total = 0.0;
    for_each_tv_pair(pos, [&](std::size_t a, std::size_t b) {
        const Vec3 d = pos.positions[b] - pos.positions[a];
        total += d.squaredNorm();
        const Vec3 g = (2.0 * inv * scale) * d;
        grad[b] += g;
        grad[a] -= g;
    });
    return total * inv;
}

} // namespace npva
