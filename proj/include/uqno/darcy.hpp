#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <numbers>
#include <random>
#include <vector>

#include "errors.hpp"
#include "grid.hpp"
#include "random.hpp"

namespace uqno {

/// Log-normal coefficient prior: a = exp(g) with g a truncated random Fourier
/// series whose k-th mode has standard deviation amplitude·k^(−decay).
struct GrfSpec {
  int n_modes = 8;
  double decay = 2.0;
  double amplitude = 0.5;

  void validate() const {
    if (n_modes < 1) throw InvalidArgument("GrfSpec.n_modes must be >= 1");
    if (!(decay > 0.5)) throw InvalidArgument("GrfSpec.decay must be > 0.5");
    if (!(amplitude >= 0.0) || !std::isfinite(amplitude))
      throw InvalidArgument("GrfSpec.amplitude must be finite and non-negative");
  }
};

/// Draws one coefficient field. Identical (spec, grid, seed) give identical bits.
inline GridFunction sample_grf_coefficient(const GrfSpec& spec, const Grid& grid,
                                           std::uint64_t seed) {
  spec.validate();
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> xi(spec.n_modes), eta(spec.n_modes);
  for (int k = 0; k < spec.n_modes; ++k) {
    xi[k] = normal(rng);
    eta[k] = normal(rng);
  }
  constexpr double two_pi = 2.0 * std::numbers::pi;
  std::vector<double> a(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double g = 0.0;
    for (int k = 1; k <= spec.n_modes; ++k) {
      const double w = std::pow(static_cast<double>(k), -spec.decay);
      const double phase = two_pi * k * grid[i];
      g += w * (xi[k - 1] * std::sin(phase) + eta[k - 1] * std::cos(phase));
    }
    a[i] = std::exp(spec.amplitude * g);
  }
  return GridFunction(grid, std::move(a));
}

/// Solves −(a u′)′ = f on [0, 1] with u(0) = u(1) = 0.
///
/// Second-order centered differences on a uniform grid. Face coefficients are
/// arithmetic means a_{i+1/2} = (a_i + a_{i+1})/2; the tridiagonal system is
/// eliminated with the Thomas algorithm (diagonally dominant since a > 0).
inline GridFunction solve_darcy_1d(const GridFunction& a, const GridFunction& f) {
  const Grid& grid = a.grid();
  if (!(grid == f.grid())) throw InvalidArgument("solve_darcy_1d: a and f on different grids");
  if (!grid.is_uniform()) throw InvalidArgument("solve_darcy_1d: grid must be uniform");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(a[i] > 0.0))
      throw InvalidArgument("solve_darcy_1d: coefficient must be positive (index " +
                            std::to_string(i) + ")");

  const std::size_t m = grid.size();
  const std::size_t n = m - 2;  // interior unknowns
  const double h = grid[1] - grid[0];
  const double inv_h2 = 1.0 / (h * h);

  std::vector<double> face(m - 1);
  for (std::size_t i = 0; i + 1 < m; ++i) face[i] = 0.5 * (a[i] + a[i + 1]);

  // Row r (interior node i = r + 1): −face[i−1] u_{i−1} + (face[i−1] + face[i]) u_i − face[i] u_{i+1}.
  std::vector<double> lower(n), diag(n), upper(n), rhs(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = r + 1;
    lower[r] = -face[i - 1] * inv_h2;
    diag[r] = (face[i - 1] + face[i]) * inv_h2;
    upper[r] = -face[i] * inv_h2;
    rhs[r] = f[i];
  }
  for (std::size_t r = 1; r < n; ++r) {
    const double w = lower[r] / diag[r - 1];
    diag[r] -= w * upper[r - 1];
    rhs[r] -= w * rhs[r - 1];
  }
  std::vector<double> u(m, 0.0);
  u[n] = rhs[n - 1] / diag[n - 1];
  for (std::size_t r = n - 1; r-- > 0;) u[r + 1] = (rhs[r] - upper[r] * u[r + 2]) / diag[r];
  return GridFunction(grid, std::move(u));
}

/// n independent (a, u) pairs on a uniform m-point grid. Pair i draws its
/// coefficient from derive_seed(seed, i), so the result does not depend on the
/// order in which pairs are produced.
inline Dataset generate_dataset(const GrfSpec& spec, const GridFunction& f, std::size_t n,
                                std::size_t m, std::uint64_t seed,
                                SplitTag split = SplitTag::kTrainBase) {
  if (n < 1) throw InvalidArgument("generate_dataset: n must be >= 1");
  const Grid grid = make_uniform_grid(m);
  if (!(f.grid() == grid))
    throw InvalidArgument("generate_dataset: forcing must live on the uniform m-point grid");
  std::vector<FunctionPair> pairs;
  pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    GridFunction a = sample_grf_coefficient(spec, grid, derive_seed(seed, i));
    GridFunction u = solve_darcy_1d(a, f);
    pairs.emplace_back(std::move(a), std::move(u));
  }
  return Dataset(std::move(pairs), split);
}

/// Same, with constant forcing f ≡ forcing.
inline Dataset generate_dataset(const GrfSpec& spec, double forcing, std::size_t n,
                                std::size_t m, std::uint64_t seed,
                                SplitTag split = SplitTag::kTrainBase) {
  return generate_dataset(spec, GridFunction(make_uniform_grid(m), forcing), n, m, seed, split);
}

/// Keeps both endpoints and a uniformly random subset of m_sub − 2 interior
/// points, in grid order.
inline FunctionPair subsample_pair(const FunctionPair& pair, std::size_t m_sub,
                                   std::uint64_t seed) {
  const std::size_t m = pair.grid().size();
  if (m_sub < 3 || m_sub > m)
    throw InvalidArgument("subsample_pair: m_sub must lie in [3, " + std::to_string(m) +
                          "], got " + std::to_string(m_sub));
  std::vector<std::size_t> interior(m - 2);
  for (std::size_t i = 0; i < interior.size(); ++i) interior[i] = i + 1;
  std::vector<std::size_t> keep{0};
  Rng rng = make_rng(seed);
  std::sample(interior.begin(), interior.end(), std::back_inserter(keep), m_sub - 2, rng);
  keep.push_back(m - 1);

  std::vector<double> x, a, u;
  for (std::size_t idx : keep) {
    x.push_back(pair.grid()[idx]);
    a.push_back(pair.input()[idx]);
    u.push_back(pair.output()[idx]);
  }
  Grid g(std::move(x));
  return FunctionPair(GridFunction(g, std::move(a)), GridFunction(g, std::move(u)));
}

}  // namespace uqno
