// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "npva/types.hpp"

#include <span>
#include <unordered_map>
#include <vector>

namespace npva {

/// Up to K neighbours, sorted by (distance, id).
struct NeighborSet {
    std::vector<int> ids;
    std::vector<double> distances;

    std::size_t size() const { return ids.size(); }
    bool empty() const { return ids.empty(); }
    void clear() {
        ids.clear();
        distances.clear();
    }
};

/// Uniform hash grid over a point set answering radius-bounded KNN queries.
/// Immutable after construction; concurrent queries are safe.
class PointIndex {
  public:
    PointIndex(std::span<const Vec3> points, double cell_size);

    /// The K nearest points with distance <= radius; ties go to the lower id.
    NeighborSet query(const Vec3& x, int k, double radius) const;
    void query(const Vec3& x, int k, double radius, NeighborSet& out) const;

    std::size_t size() const { return points_.size(); }
    std::size_t cell_count() const { return cells_.size(); }
    double cell_size() const { return cell_size_; }

  private:
    struct Range {
        std::uint32_t begin = 0;
        std::uint32_t count = 0;
    };

    static std::uint64_t pack(std::int64_t x, std::int64_t y, std::int64_t z);
    std::int64_t cell_coord(double v) const;

    double cell_size_ = 0.0;
    double inv_cell_ = 0.0;
    std::vector<Vec3> points_;           // sorted by cell
    std::vector<int> ids_;               // original id for each sorted point
    std::unordered_map<std::uint64_t, Range> cells_;
};

} // namespace npva
