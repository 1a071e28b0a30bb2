// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace npva {

using Pixel = std::array<int, 2>;

/// Per-cell running error over an image tiled by a grid, plus the sampling
/// probabilities derived from it. Cell (i, j) covers columns
/// [i * width / cols, (i + 1) * width / cols) and likewise for rows.
class ErrorGrid {
  public:
    ErrorGrid() = default;
    ErrorGrid(int image_width, int image_height, int cols, int rows, double ema = 0.1);

    int cols() const { return cols_; }
    int rows() const { return rows_; }
    int cell_count() const { return cols_ * rows_; }
    int image_width() const { return width_; }
    int image_height() const { return height_; }
    double ema() const { return ema_; }
    /// Floor applied to every probability: 1 / (4 * cells).
    double floor() const { return 0.25 / cell_count(); }

    int cell_of(const Pixel& p) const;
    /// Pixel bounds [x0, x1) x [y0, y1) of a cell.
    std::array<int, 4> cell_bounds(int cell) const;

    std::span<const double> errors() const { return errors_; }
    std::span<const std::uint64_t> counts() const { return counts_; }
    std::span<const double> probabilities() const { return probs_; }

    /// e <- (1 - ema) e + ema * loss for one cell.
    void update(int cell, double loss);
    /// Per-cell EMA of the mean of the given per-ray losses; cells without a
    /// ray this round keep their error.
    void update_batch(std::span<const Pixel> pixels, std::span<const double> losses);
    /// Sets the errors directly (e.g. inherited from a coarser grid).
    void set_errors(std::span<const double> errors);

    /// A finer grid whose cells start with the error of the coarse cell
    /// containing their centre.
    ErrorGrid refined(int cols, int rows) const;

  private:
    void recompute();

    int width_ = 0;
    int height_ = 0;
    int cols_ = 0;
    int rows_ = 0;
    double ema_ = 0.1;
    std::vector<double> errors_;
    std::vector<std::uint64_t> counts_;
    std::vector<double> probs_;
    std::vector<double> cumulative_;

    friend std::vector<Pixel> error_sample(const ErrorGrid&, int, std::mt19937_64&);
};

/// One pixel per grid cell, uniform within the cell, in cell order.
std::vector<Pixel> grid_sample(int width, int height, int cols, int rows, std::mt19937_64& rng);
/// n pixels: cell by categorical draw on the probabilities, pixel uniform in the cell.
std::vector<Pixel> error_sample(const ErrorGrid& grid, int n, std::mt19937_64& rng);
/// Row-major patch_size x patch_size block at a uniform offset.
std::vector<Pixel> patch_sample(int width, int height, int patch_size, std::mt19937_64& rng);

} // namespace npva
