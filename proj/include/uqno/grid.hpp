#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"

namespace uqno {

/// Ordered sample locations in [0, 1]. Holds at least three strictly
/// increasing points so that a boundary value problem has an interior.
class Grid {
 public:
  explicit Grid(std::vector<double> points) : points_(std::move(points)) {
    if (points_.size() < 3) throw InvalidArgument("grid needs at least 3 points");
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const double x = points_[i];
      if (!std::isfinite(x) || x < 0.0 || x > 1.0)
        throw InvalidArgument("grid point " + std::to_string(i) + " outside [0, 1]");
      if (i > 0 && !(x > points_[i - 1]))
        throw InvalidArgument("grid points must be strictly increasing (index " +
                              std::to_string(i) + ")");
    }
  }

  std::size_t size() const noexcept { return points_.size(); }
  std::span<const double> points() const noexcept { return points_; }
  double operator[](std::size_t i) const { return points_[i]; }

  /// Equispaced to within rounding of i/(m-1).
  bool is_uniform(double tol = 1e-12) const {
    const double h = (points_.back() - points_.front()) / static_cast<double>(size() - 1);
    for (std::size_t i = 1; i < size(); ++i)
      if (std::abs(points_[i] - points_[i - 1] - h) > tol) return false;
    return true;
  }

  /// Composite trapezoid weights on this grid.
  std::vector<double> trapezoid_weights() const {
    const std::size_t m = size();
    std::vector<double> w(m, 0.0);
    for (std::size_t i = 0; i + 1 < m; ++i) {
      const double half = 0.5 * (points_[i + 1] - points_[i]);
      w[i] += half;
      w[i + 1] += half;
    }
    return w;
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::vector<double> points_;
};

/// xᵢ = i/(m−1), i = 0..m−1.
inline Grid make_uniform_grid(std::size_t m) {
  if (m < 3) throw InvalidArgument("make_uniform_grid: m must be >= 3, got " + std::to_string(m));
  std::vector<double> pts(m);
  const double denom = static_cast<double>(m - 1);
  for (std::size_t i = 0; i < m; ++i) pts[i] = static_cast<double>(i) / denom;
  return Grid(std::move(pts));
}

/// Scalar field sampled on a grid; every value finite.
class GridFunction {
 public:
  GridFunction(Grid grid, std::vector<double> values)
      : grid_(std::move(grid)), values_(std::move(values)) {
    if (values_.size() != grid_.size())
      throw InvalidArgument("grid function has " + std::to_string(values_.size()) +
                            " values for " + std::to_string(grid_.size()) + " points");
    for (std::size_t i = 0; i < values_.size(); ++i)
      if (!std::isfinite(values_[i]))
        throw InvalidArgument("grid function value " + std::to_string(i) + " is not finite");
  }

  /// Constant field.
  GridFunction(Grid grid, double c) : GridFunction(grid, std::vector<double>(grid.size(), c)) {}

  const Grid& grid() const noexcept { return grid_; }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  std::size_t size() const noexcept { return values_.size(); }

  friend bool operator==(const GridFunction&, const GridFunction&) = default;

 private:
  Grid grid_;
  std::vector<double> values_;
};

/// ∫ v dx by the trapezoid rule on v's grid.
inline double trapezoid_integral(const GridFunction& f) {
  const auto w = f.grid().trapezoid_weights();
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) s += w[i] * f[i];
  return s;
}

/// Input coefficient and output solution on one shared grid.
class FunctionPair {
 public:
  FunctionPair(GridFunction input, GridFunction output)
      : input_(std::move(input)), output_(std::move(output)) {
    if (!(input_.grid() == output_.grid()))
      throw InvalidArgument("function pair input and output grids differ");
  }

  const GridFunction& input() const noexcept { return input_; }
  const GridFunction& output() const noexcept { return output_; }
  const Grid& grid() const noexcept { return input_.grid(); }

  friend bool operator==(const FunctionPair&, const FunctionPair&) = default;

 private:
  GridFunction input_;
  GridFunction output_;
};

enum class SplitTag { kTrainBase, kTrainQuantile, kCalibration, kTest };

inline std::string_view to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::kTrainBase: return "train_base";
    case SplitTag::kTrainQuantile: return "train_quantile";
    case SplitTag::kCalibration: return "calibration";
    case SplitTag::kTest: return "test";
  }
  return "unknown";
}

inline SplitTag split_tag_from_string(std::string_view s) {
  if (s == "train_base") return SplitTag::kTrainBase;
  if (s == "train_quantile") return SplitTag::kTrainQuantile;
  if (s == "calibration") return SplitTag::kCalibration;
  if (s == "test") return SplitTag::kTest;
  throw InvalidArgument("unknown split tag \"" + std::string(s) + "\"");
}

/// Nonempty collection of pairs. Grids may differ from pair to pair.
class Dataset {
 public:
  Dataset(std::vector<FunctionPair> pairs, SplitTag split)
      : pairs_(std::move(pairs)), split_(split) {
    if (pairs_.empty()) throw InvalidArgument("dataset must be nonempty");
  }

  std::span<const FunctionPair> pairs() const noexcept { return pairs_; }
  const FunctionPair& operator[](std::size_t i) const { return pairs_[i]; }
  std::size_t size() const noexcept { return pairs_.size(); }
  SplitTag split() const noexcept { return split_; }

  /// Smallest per-pair point count.
  std::size_t min_points() const {
    std::size_t m = pairs_.front().grid().size();
    for (const auto& p : pairs_) m = std::min(m, p.grid().size());
    return m;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  std::vector<FunctionPair> pairs_;
  SplitTag split_;
};

inline void require_split(const Dataset& d, SplitTag expected, std::string_view who) {
  if (d.split() != expected)
    throw InvalidArgument(std::string(who) + ": expected a " + std::string(to_string(expected)) +
                          " dataset, got " + std::string(to_string(d.split())));
}

}  // namespace uqno
