// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#include "npva/spatial_index.hpp"

#include "npva/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace npva {

namespace {

constexpr std::int64_t kCoordBias = 1 << 20;
constexpr std::uint64_t kCoordMask = (1ULL << 21) - 1;

} // namespace

std::uint64_t PointIndex::pack(std::int64_t x, std::int64_t y, std::int64_t z) {
    return (static_cast<std::uint64_t>(x + kCoordBias) & kCoordMask) |
           (static_cast<std::uint64_t>(y + kCoordBias) & kCoordMask) << 21 |
           (static_cast<std::uint64_t>(z + kCoordBias) & kCoordMask) << 42;
}

std::int64_t PointIndex::cell_coord(double v) const {
    return static_cast<std::int64_t>(std::floor(v * inv_cell_));
}

PointIndex::PointIndex(std::span<const Vec3> points, double cell_size)
    : cell_size_(cell_size), inv_cell_(1.0 / cell_size) {
    if (!(cell_size > 0.0) || !std::isfinite(cell_size)) {
        throw ConfigError("PointIndex: cell size must be positive");
    }
    if (points.empty()) {
        throw ConfigError("PointIndex: cannot index an empty cloud");
    }
    const std::size_t n = points.size();
    std::vector<std::uint64_t> keys(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3& p = points[i];
        const std::int64_t cx = cell_coord(p.x());
        const std::int64_t cy = cell_coord(p.y());
        const std::int64_t cz = cell_coord(p.z());
        if (std::abs(cx) >= kCoordBias || std::abs(cy) >= kCoordBias || std::abs(cz) >= kCoordBias) {
            throw ConfigError("PointIndex: point outside the addressable grid range");
        }
        keys[i] = pack(cx, cy, cz);
    }
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return keys[a] < keys[b]; });
    points_.resize(n);
    ids_.resize(n);
    cells_.reserve(n / 4 + 1);
    for (std::size_t s = 0; s < n; ++s) {
        const std::uint32_t i = order[s];
        points_[s] = points[i];
        ids_[s] = static_cast<int>(i);
        auto [it, inserted] = cells_.try_emplace(keys[i], Range{static_cast<std::uint32_t>(s), 0});
        ++it->second.count;
    }
}

NeighborSet PointIndex::query(const Vec3& x, int k, double radius) const {
    NeighborSet out;
    query(x, k, radius, out);
    return out;
}

void PointIndex::query(const Vec3& x, int k, double radius, NeighborSet& out) const {
    out.clear();
    if (k <= 0 || !(radius > 0.0)) {
        return;
    }
    const std::int64_t x0 = cell_coord(x.x() - radius);
    const std::int64_t x1 = cell_coord(x.x() + radius);
    const std::int64_t y0 = cell_coord(x.y() - radius);
    const std::int64_t y1 = cell_coord(x.y() + radius);
    const std::int64_t z0 = cell_coord(x.z() - radius);
    const std::int64_t z1 = cell_coord(x.z() + radius);
    if (x0 <= -kCoordBias || y0 <= -kCoordBias || z0 <= -kCoordBias || x1 >= kCoordBias ||
        y1 >= kCoordBias || z1 >= kCoordBias) {
        return;
    }

    // Best candidates so far, kept sorted by (distance, id).
    auto& ids = out.ids;
    auto& dist = out.distances;
    auto better = [](double da, int ia, double db, int ib) {
        return da < db || (da == db && ia < ib);
    };
    for (std::int64_t cz = z0; cz <= z1; ++cz) {
        for (std::int64_t cy = y0; cy <= y1; ++cy) {
            for (std::int64_t cx = x0; cx <= x1; ++cx) {
                const auto it = cells_.find(pack(cx, cy, cz));
                if (it == cells_.end()) {
                    continue;
                }
                const Range r = it->second;
                for (std::uint32_t s = r.begin; s < r.begin + r.count; ++s) {
                    const double d = (points_[s] - x).norm();
                    if (d > radius) {
                        continue;
                    }
                    const int id = ids_[s];
                    const bool full = static_cast<int>(ids.size()) == k;
                    if (full && !better(d, id, dist.back(), ids.back())) {
                        continue;
                    }
                    if (full) {
                        ids.pop_back();
                        dist.pop_back();
                    }
                    std::size_t pos = ids.size();
                    while (pos > 0 && better(d, id, dist[pos - 1], ids[pos - 1])) {
                        --pos;
                    }
                    ids.insert(ids.begin() + static_cast<std::ptrdiff_t>(pos), id);
                    dist.insert(dist.begin() + static_cast<std::ptrdiff_t>(pos), d);
                }
            }
        }
    }
}

} // namespace npva
