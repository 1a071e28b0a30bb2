// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#include "npva/ray_schedule.hpp"

#include "npva/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace npva {

namespace {

int uniform_int(std::mt19937_64& rng, int lo, int hi_exclusive) {
    return std::uniform_int_distribution<int>(lo, hi_exclusive - 1)(rng);
}

void check_grid(int width, int height, int cols, int rows) {
    if (width <= 0 || height <= 0 || cols <= 0 || rows <= 0 || cols > width || rows > height) {
        throw ConfigError("error grid " + std::to_string(cols) + "x" + std::to_string(rows) +
                          " does not tile a " + std::to_string(width) + "x" +
                          std::to_string(height) + " image");
    }
}

} // namespace

ErrorGrid::ErrorGrid(int image_width, int image_height, int cols, int rows, double ema)
    : width_(image_width), height_(image_height), cols_(cols), rows_(rows), ema_(ema) {
    check_grid(image_width, image_height, cols, rows);
    if (!(ema > 0.0 && ema <= 1.0)) {
        throw ConfigError("error grid EMA coefficient must lie in (0, 1]");
    }
    errors_.assign(static_cast<std::size_t>(cell_count()), 0.0);
    counts_.assign(static_cast<std::size_t>(cell_count()), 0);
    recompute();
}

int ErrorGrid::cell_of(const Pixel& p) const {
    if (p[0] < 0 || p[1] < 0 || p[0] >= width_ || p[1] >= height_) {
        throw ConfigError("pixel outside the error grid");
    }
    // Largest i with i * width / cols <= x.
    int i = static_cast<int>((static_cast<long long>(p[0]) * cols_) / width_);
    while (i + 1 < cols_ && static_cast<long long>(i + 1) * width_ / cols_ <= p[0]) {
        ++i;
    }
    while (static_cast<long long>(i) * width_ / cols_ > p[0]) {
        --i;
    }
    int j = static_cast<int>((static_cast<long long>(p[1]) * rows_) / height_);
    while (j + 1 < rows_ && static_cast<long long>(j + 1) * height_ / rows_ <= p[1]) {
        ++j;
    }
    while (static_cast<long long>(j) * height_ / rows_ > p[1]) {
        --j;
    }
    return j * cols_ + i;
}

std::array<int, 4> ErrorGrid::cell_bounds(int cell) const {
    const int i = cell % cols_;
    const int j = cell / cols_;
    return {static_cast<int>(static_cast<long long>(i) * width_ / cols_),
            static_cast<int>(static_cast<long long>(i + 1) * width_ / cols_),
            static_cast<int>(static_cast<long long>(j) * height_ / rows_),
            static_cast<int>(static_cast<long long>(j + 1) * height_ / rows_)};
}

void ErrorGrid::update(int cell, double loss) {
    if (cell < 0 || cell >= cell_count()) {
        throw ConfigError("error grid cell out of range");
    }
    if (!(loss >= 0.0) || !std::isfinite(loss)) {
        throw ConfigError("error grid losses must be finite and non-negative");
    }
    auto& e = errors_[static_cast<std::size_t>(cell)];
    e = (1.0 - ema_) * e + ema_ * loss;
    ++counts_[static_cast<std::size_t>(cell)];
    recompute();
}

void ErrorGrid::update_batch(std::span<const Pixel> pixels, std::span<const double> losses) {
    if (pixels.size() != losses.size()) {
        throw ConfigError("update_batch: pixel and loss counts differ");
    }
    std::vector<double> sum(errors_.size(), 0.0);
    std::vector<int> n(errors_.size(), 0);
    for (std::size_t k = 0; k < pixels.size(); ++k) {
        if (!(losses[k] >= 0.0) || !std::isfinite(losses[k])) {
            throw ConfigError("error grid losses must be finite and non-negative");
        }
        const auto c = static_cast<std::size_t>(cell_of(pixels[k]));
        sum[c] += losses[k];
        ++n[c];
    }
    for (std::size_t c = 0; c < errors_.size(); ++c) {
        if (n[c] > 0) {
            errors_[c] = (1.0 - ema_) * errors_[c] + ema_ * (sum[c] / n[c]);
            counts_[c] += static_cast<std::uint64_t>(n[c]);
        }
    }
    recompute();
}

void ErrorGrid::set_errors(std::span<const double> errors) {
    if (errors.size() != errors_.size()) {
        throw ConfigError("set_errors: wrong cell count");
    }
    for (double e : errors) {
        if (!(e >= 0.0) || !std::isfinite(e)) {
            throw ConfigError("error grid errors must be finite and non-negative");
        }
    }
    errors_.assign(errors.begin(), errors.end());
    recompute();
}

ErrorGrid ErrorGrid::refined(int cols, int rows) const {
    ErrorGrid fine(width_, height_, cols, rows, ema_);
    std::vector<double> e(static_cast<std::size_t>(fine.cell_count()));
    for (int c = 0; c < fine.cell_count(); ++c) {
        const auto b = fine.cell_bounds(c);
        const Pixel centre{(b[0] + b[1] - 1) / 2, (b[2] + b[3] - 1) / 2};
        e[static_cast<std::size_t>(c)] = errors_[static_cast<std::size_t>(cell_of(centre))];
    }
    fine.set_errors(e);
    return fine;
}

void ErrorGrid::recompute() {
    const std::size_t cells = errors_.size();
    double total = 0.0;
    for (double e : errors_) {
        total += e;
    }
    probs_.assign(cells, 1.0 / static_cast<double>(cells));
    if (total > 0.0) {
        const double eps = floor();
        const double spread = 1.0 - static_cast<double>(cells) * eps;
        for (std::size_t c = 0; c < cells; ++c) {
            probs_[c] = eps + spread * errors_[c] / total;
        }
    }
    cumulative_.resize(cells);
    double acc = 0.0;
    for (std::size_t c = 0; c < cells; ++c) {
        acc += probs_[c];
        cumulative_[c] = acc;
    }
}

std::vector<Pixel> grid_sample(int width, int height, int cols, int rows, std::mt19937_64& rng) {
    check_grid(width, height, cols, rows);
    const ErrorGrid layout(width, height, cols, rows);
    std::vector<Pixel> out;
    out.reserve(static_cast<std::size_t>(layout.cell_count()));
    for (int c = 0; c < layout.cell_count(); ++c) {
        const auto b = layout.cell_bounds(c);
        out.push_back({uniform_int(rng, b[0], b[1]), uniform_int(rng, b[2], b[3])});
    }
    return out;
}

std::vector<Pixel> error_sample(const ErrorGrid& grid, int n, std::mt19937_64& rng) {
    if (grid.cell_count() == 0 || n < 0) {
        throw ConfigError("error_sample: empty grid or negative count");
    }
    std::vector<Pixel> out;
    out.reserve(static_cast<std::size_t>(n));
    std::uniform_real_distribution<double> unit(0.0, grid.cumulative_.back());
    for (int k = 0; k < n; ++k) {
        const double r = unit(rng);
        auto it = std::upper_bound(grid.cumulative_.begin(), grid.cumulative_.end(), r);
        const int cell = std::min(static_cast<int>(it - grid.cumulative_.begin()),
                                  grid.cell_count() - 1);
        const auto b = grid.cell_bounds(cell);
        out.push_back({uniform_int(rng, b[0], b[1]), uniform_int(rng, b[2], b[3])});
    }
    return out;
}

std::vector<Pixel> patch_sample(int width, int height, int patch_size, std::mt19937_64& rng) {
    if (patch_size < 1 || patch_size > width || patch_size > height) {
        throw ConfigError("patch of size " + std::to_string(patch_size) +
                          " does not fit the image");
    }
    const int x0 = uniform_int(rng, 0, width - patch_size + 1);
    const int y0 = uniform_int(rng, 0, height - patch_size + 1);
    std::vector<Pixel> out;
    out.reserve(static_cast<std::size_t>(patch_size) * patch_size);
    for (int y = 0; y < patch_size; ++y) {
        for (int x = 0; x < patch_size; ++x) {
            out.push_back({x0 + x, y0 + y});
        }
    }
    return out;
}

} // namespace npva
