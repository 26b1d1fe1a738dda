#pragma once

#include "proxgen/core.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace proxgen {

/// Scalar subproblem data. Every prox below solves
///   argmin_x (kappa/2)(x - z)^2 + alpha * lambda * pen(x)
/// which is the same as argmin_x (x - z)^2 + lambda_eff * pen(x), lambda_eff = 2 alpha lambda / kappa.
struct ProxInput {
  double z = 0.0;
  double kappa = 1.0;
  double alpha = 1.0;
  double lambda = 0.0;

  double lambda_eff() const { return 2.0 * alpha * lambda / kappa; }
  double threshold_scale() const { return alpha * lambda / kappa; }

  void validate() const {
    if (!(kappa > 0.0) || !(alpha > 0.0) || !(lambda >= 0.0) || !std::isfinite(z))
      throw ConfigError("ProxInput: need kappa > 0, alpha > 0, lambda >= 0 and finite z");
  }
};

/// The four exponents with closed-form proximal maps.
enum class Exponent { zero, half, two_thirds, one };

inline double exponent_value(Exponent q) {
  switch (q) {
    case Exponent::zero: return 0.0;
    case Exponent::half: return 0.5;
    case Exponent::two_thirds: return 2.0 / 3.0;
    case Exponent::one: return 1.0;
  }
  return 1.0;
}

inline Exponent exponent_from_value(double q) {
  if (q == 0.0) return Exponent::zero;
  if (q == 0.5) return Exponent::half;
  if (std::abs(q - 2.0 / 3.0) < 1e-9) return Exponent::two_thirds;
  if (q == 1.0) return Exponent::one;
  throw ConfigError("unsupported exponent q=" + std::to_string(q) + " (allowed: 0, 1/2, 2/3, 1)");
}

inline std::string exponent_name(Exponent q) {
  switch (q) {
    case Exponent::zero: return "0";
    case Exponent::half: return "1/2";
    case Exponent::two_thirds: return "2/3";
    case Exponent::one: return "1";
  }
  return "?";
}

enum class Family { sparse, quant };

struct RegularizerSpec {
  Family family = Family::sparse;
  Exponent q = Exponent::one;
  LambdaSchedule lambda = LambdaSchedule::constant(0.0);
};

// ---------------------------------------------------------------------------
// Penalties
// ---------------------------------------------------------------------------

/// |x|^q with the l0 convention |0|^0 = 0.
inline double sparse_penalty(double x, Exponent q) {
  const double a = std::abs(x);
  switch (q) {
    case Exponent::zero: return a == 0.0 ? 0.0 : 1.0;
    case Exponent::half: return std::sqrt(a);
    case Exponent::two_thirds: return std::cbrt(a * a);
    case Exponent::one: return a;
  }
  return a;
}

inline double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

/// W-shaped penalty |x - sign(x)|^q with sign(0) = 0, so pen(0) = 0.
inline double quant_penalty(double x, Exponent q) { return sparse_penalty(x - sign_of(x), q); }

inline double penalty(double x, Family family, Exponent q) {
  return family == Family::sparse ? sparse_penalty(x, q) : quant_penalty(x, q);
}

/// R(theta) = sum_i pen(theta_i) (lambda not included).
inline double regularizer_value(const ParamVector& theta, const RegularizerSpec& spec) {
  double s = 0.0;
  for (Index i = 0; i < theta.size(); ++i) s += penalty(theta[i], spec.family, spec.q);
  return s;
}

/// Scalar objective (x - z)^2 + lambda_eff * pen(x).
inline double scalar_objective(double x, double z, double lambda_eff, Family family, Exponent q) {
  const double d = x - z;
  return d * d + lambda_eff * penalty(x, family, q);
}

// ---------------------------------------------------------------------------
// Closed-form proximal maps, sparse family
// ---------------------------------------------------------------------------

/// Soft thresholding with the positive-part clamp.
inline double prox_l1(const ProxInput& in) {
  if (in.lambda == 0.0) return in.z;
  const double shrunk = std::abs(in.z) - in.threshold_scale();
  if (shrunk <= 0.0) return 0.0;
  return std::copysign(shrunk, in.z);
}

/// Hard thresholding at sqrt(2 alpha lambda / kappa). The tie |z| = tau returns 0.
inline double prox_l0(const ProxInput& in) {
  if (in.lambda == 0.0) return in.z;
  const double tau = std::sqrt(in.lambda_eff());
  return std::abs(in.z) > tau ? in.z : 0.0;
}

/// Dead-zone edge of the l1/2 map: (cbrt(54)/4) * lambda_eff^(2/3).
inline double half_threshold(double lambda_eff) {
  return std::cbrt(54.0) / 4.0 * std::cbrt(lambda_eff * lambda_eff);
}

/// Dead-zone edge of the l2/3 map: (2/3) * (3 lambda_eff^3)^(1/4).
inline double two_thirds_threshold(double lambda_eff) {
  return 2.0 / 3.0 * std::pow(3.0 * lambda_eff * lambda_eff * lambda_eff, 0.25);
}

/// Half thresholding.
inline double prox_l_half(const ProxInput& in) {
  if (in.lambda == 0.0) return in.z;
  const double lam = in.lambda_eff();
  const double a = std::abs(in.z);
  if (a <= half_threshold(lam)) return 0.0;
  // alpha*lambda/(4 kappa) == lambda_eff / 8
  const double arg = lam / 8.0 * std::pow(a / 3.0, -1.5);
  if (!(arg <= 1.0)) throw std::domain_error("prox_l_half: arccos argument " + std::to_string(arg) + " > 1");
  const double phi = std::acos(arg);
  const double x = 2.0 / 3.0 * a * (1.0 + std::cos(2.0 * std::numbers::pi / 3.0 - 2.0 / 3.0 * phi));
  return std::copysign(x, in.z);
}

inline double prox_l_two_thirds(const ProxInput& in) {
  if (in.lambda == 0.0) return in.z;
  const double lam = in.lambda_eff();
  const double a = std::abs(in.z);
  if (a <= two_thirds_threshold(lam)) return 0.0;
  const double cosh_arg = 27.0 * a * a / 16.0 * std::pow(lam, -1.5);
  if (!(cosh_arg >= 1.0))
    throw std::domain_error("prox_l_two_thirds: arccosh argument " + std::to_string(cosh_arg) + " < 1");
  const double phi = std::acosh(cosh_arg);
  const double abs_a = 2.0 / std::sqrt(3.0) * std::pow(lam, 0.25) * std::sqrt(std::cosh(phi / 3.0));
  const double radicand = 2.0 * a / abs_a - abs_a * abs_a;
  if (!(radicand >= 0.0))
    throw std::domain_error("prox_l_two_thirds: negative radicand " + std::to_string(radicand));
  const double root = (abs_a + std::sqrt(radicand)) / 2.0;
  return std::copysign(root * root * root, in.z);
}

inline double prox_sparse(const ProxInput& in, Exponent q) {
  switch (q) {
    case Exponent::zero: return prox_l0(in);
    case Exponent::half: return prox_l_half(in);
    case Exponent::two_thirds: return prox_l_two_thirds(in);
    case Exponent::one: return prox_l1(in);
  }
  return prox_l1(in);
}

/// |z| at or below which prox_sparse returns exactly 0.
inline double sparse_dead_zone(double lambda_eff, Exponent q) {
  switch (q) {
    case Exponent::zero: return std::sqrt(lambda_eff);
    case Exponent::half: return half_threshold(lambda_eff);
    case Exponent::two_thirds: return two_thirds_threshold(lambda_eff);
    case Exponent::one: return lambda_eff / 2.0;
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Quantization family
// ---------------------------------------------------------------------------

/// argmin_x (kappa/2)(x-z)^2 + alpha lambda |x - sign(x)|^q.
///
/// Candidates: the shifted sparse prox toward +1 (kept on x >= 0), the shifted
/// prox toward -1 (kept on x <= 0), and x = 0 where the penalty vanishes. When a
/// branch minimizer would cross zero, 0 already beats every point of that branch
/// because |x - z| > |z| there.
inline double prox_quant_lq(const ProxInput& in, Exponent q) {
  if (in.lambda == 0.0) return in.z;
  const double lam = in.lambda_eff();

  ProxInput shifted = in;
  shifted.z = in.z - 1.0;
  const double plus = std::max(1.0 + prox_sparse(shifted, q), 0.0);
  shifted.z = in.z + 1.0;
  const double minus = std::min(-1.0 + prox_sparse(shifted, q), 0.0);

  const double candidates[3] = {plus, minus, 0.0};
  double best = candidates[0];
  double best_obj = scalar_objective(best, in.z, lam, Family::quant, q);
  for (int i = 1; i < 3; ++i) {
    const double c = candidates[i];
    const double obj = scalar_objective(c, in.z, lam, Family::quant, q);
    if (obj < best_obj || (obj == best_obj && std::abs(c - in.z) < std::abs(best - in.z))) {
      best = c;
      best_obj = obj;
    }
  }
  return best;
}

inline double prox_scalar(const ProxInput& in, Family family, Exponent q) {
  return family == Family::sparse ? prox_sparse(in, q) : prox_quant_lq(in, q);
}

/// Coordinate-wise prox in the diagonal metric diag(kappa).
inline ParamVector prox_vector(const ParamVector& theta_hat, const ParamVector& kappa, double alpha,
                               const RegularizerSpec& spec, std::int64_t t) {
  if (theta_hat.size() != kappa.size())
    throw ConfigError("prox_vector: length mismatch (" + std::to_string(theta_hat.size()) + " vs " +
                      std::to_string(kappa.size()) + ")");
  const double lambda = spec.lambda.at(t);
  ParamVector out(theta_hat.size());
  for (Index i = 0; i < theta_hat.size(); ++i) {
    if (!(kappa[i] > 0.0)) throw ConfigError("prox_vector: metric entries must be positive");
    out[i] = prox_scalar(ProxInput{theta_hat[i], kappa[i], alpha, lambda}, spec.family, spec.q);
  }
  return out;
}

}  // namespace proxgen
