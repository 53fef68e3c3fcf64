#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "darcy.hpp"
#include "grid.hpp"
#include "random.hpp"

namespace uqno {

/// Noise standard deviation as a function of position.
using NoiseProfile = std::function<double(double)>;

inline NoiseProfile constant_noise(double sigma) {
  return [sigma](double) { return sigma; };
}

/// σ(x) = σ₀(1 + (ratio − 1) sin²(πx)): σ₀ at the boundary, ratio·σ₀ at x = 1/2.
inline NoiseProfile bump_noise(double sigma0, double ratio) {
  return [sigma0, ratio](double x) {
    const double s = std::sin(std::numbers::pi * x);
    return sigma0 * (1.0 + (ratio - 1.0) * s * s);
  };
}

/// Pairs whose output is pure noise u(x) = σ(x)·ε(x), ε iid standard normal,
/// paired with a coefficient drawn from `grf`. Against the all-zero base model
/// the residual magnitudes are |σ(x)ε(x)|, which isolates the band model.
inline Dataset make_noise_dataset(const GrfSpec& grf, const NoiseProfile& sigma, std::size_t n,
                                  std::size_t m, std::uint64_t seed, SplitTag split) {
  const Grid grid = make_uniform_grid(m);
  std::vector<FunctionPair> pairs;
  pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t s = derive_seed(seed, i);
    GridFunction a = sample_grf_coefficient(grf, grid, derive_seed(s, 0));
    Rng rng = make_rng(derive_seed(s, 1));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> u(m);
    for (std::size_t k = 0; k < m; ++k) u[k] = sigma(grid[k]) * normal(rng);
    pairs.emplace_back(std::move(a), GridFunction(grid, std::move(u)));
  }
  return Dataset(std::move(pairs), split);
}

}  // namespace uqno
