#pragma once

// Brute-force scalar prox used as ground truth for the closed forms.

#include "proxgen/prox.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <limits>
#include <utility>

namespace proxgen {

inline constexpr std::size_t kOracleGridPoints = 200001;

/// argmin over [lo, hi] of (x - z)^2 + lambda_eff * pen(x) by exhaustive search.
///
/// A uniform grid with spacing at most h plus the points {0, z, 1, -1} locates
/// the best bracket, which golden-section search then narrows to width <= 1e-12.
template <class Penalty>
double prox_oracle_on(double z, double lambda_eff, Penalty&& pen, double lo_end, double hi_end, double h_max) {
  if (lambda_eff == 0.0) return z;
  auto objective = [&](double x) {
    const double d = x - z;
    return d * d + lambda_eff * pen(x);
  };

  const auto cells = static_cast<std::size_t>(std::ceil((hi_end - lo_end) / h_max));
  const std::size_t grid_points = std::max<std::size_t>(cells, 2) + 1;
  const double h = (hi_end - lo_end) / static_cast<double>(grid_points - 1);
  auto at = [&](std::size_t i) { return i + 1 == grid_points ? hi_end : lo_end + h * static_cast<double>(i); };
  std::size_t best_i = 0;
  double best_grid = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < grid_points; ++i) {
    const double f = objective(at(i));
    if (f < best_grid) {
      best_grid = f;
      best_i = i;
    }
  }

  double best_x = at(best_i);
  double best_f = best_grid;
  auto consider = [&](double x) {
    if (x < lo_end || x > hi_end) return;
    const double f = objective(x);
    if (f < best_f) {
      best_f = f;
      best_x = x;
    }
  };

  // Golden-section refinement of the bracket around the best grid point.
  double lo = at(best_i == 0 ? 0 : best_i - 1);
  double hi = at(best_i + 1 >= grid_points ? grid_points - 1 : best_i + 1);
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = hi - inv_phi * (hi - lo);
  double d = lo + inv_phi * (hi - lo);
  double fc = objective(c);
  double fd = objective(d);
  for (int iter = 0; iter < 200 && hi - lo > 1e-12; ++iter) {
    if (fc <= fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - inv_phi * (hi - lo);
      fc = objective(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + inv_phi * (hi - lo);
      fd = objective(d);
    }
  }
  consider(c);
  consider(d);
  consider(0.5 * (lo + hi));
  consider(0.0);
  consider(z);
  consider(1.0);
  consider(-1.0);
  return best_x;
}

/// Same search over [-(|z|+2), |z|+2] with grid_points points. The minimizer for
/// every penalty in this library lies inside that range.
template <class Penalty>
double prox_oracle_1d(double z, double lambda_eff, Penalty&& pen, std::size_t grid_points = kOracleGridPoints) {
  const double radius = std::abs(z) + 2.0;
  return prox_oracle_on(z, lambda_eff, std::forward<Penalty>(pen), -radius, radius,
                        2.0 * radius / static_cast<double>(grid_points - 1));
}

/// Interval that must contain the prox point, for a tighter oracle scan.
/// Sparse penalties are even and nondecreasing in |x|, so the minimizer lies
/// between 0 and z. For the quant penalty pen(0) = 0 <= pen(x), so every x on
/// the far side of 0 from z loses to 0, and past max(|z|, 1) both terms grow.
inline std::pair<double, double> oracle_bracket(Family family, double z) {
  const double far = family == Family::sparse ? std::abs(z) : std::max(std::abs(z), 1.0);
  return z >= 0.0 ? std::pair{0.0, far} : std::pair{-far, 0.0};
}

namespace detail {

// Cube root from a bit-level guess plus Halley and Newton steps; relative error
// below 1e-15, about twice as fast as std::cbrt. Only used to scan oracle grids.
inline double fast_cbrt(double a) {
  if (a == 0.0) return 0.0;
  std::uint64_t bits;
  std::memcpy(&bits, &a, sizeof bits);
  bits = bits / 3 + 0x2A9F7893782DA1CEULL;
  double y;
  std::memcpy(&y, &bits, sizeof y);
  for (int i = 0; i < 2; ++i) {
    const double y3 = y * y * y;
    y = y * (y3 + 2.0 * a) / (2.0 * y3 + a);
  }
  return y - (y * y * y - a) / (3.0 * y * y);
}

}  // namespace detail

/// Penalty functor for prox_oracle_1d matching penalty(x, family, q).
inline auto oracle_penalty(Family family, Exponent q) {
  return [family, q](double x) {
    const double u = std::abs(family == Family::sparse ? x : x - sign_of(x));
    switch (q) {
      case Exponent::zero: return u == 0.0 ? 0.0 : 1.0;
      case Exponent::half: return std::sqrt(u);
      case Exponent::two_thirds: return detail::fast_cbrt(u * u);
      case Exponent::one: return u;
    }
    return u;
  };
}

}  // namespace proxgen
