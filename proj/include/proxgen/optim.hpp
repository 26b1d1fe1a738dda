#pragma once

#include "proxgen/core.hpp"
#include "proxgen/precond.hpp"
#include "proxgen/problems.hpp"
#include "proxgen/prox.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace proxgen {

enum class Method { proxgen, proxgen_w, prox_sgd, subgradient, proxquant_original };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::proxgen: return "proxgen";
    case Method::proxgen_w: return "proxgen-w";
    case Method::prox_sgd: return "prox-sgd";
    case Method::subgradient: return "subgradient";
    case Method::proxquant_original: return "proxquant-original";
  }
  return "?";
}

inline Method method_from_name(const std::string& s) {
  if (s == "proxgen") return Method::proxgen;
  if (s == "proxgen-w") return Method::proxgen_w;
  if (s == "prox-sgd") return Method::prox_sgd;
  if (s == "subgradient") return Method::subgradient;
  if (s == "proxquant-original") return Method::proxquant_original;
  throw ConfigError("unknown method '" + s + "'");
}

struct StepperConfig {
  Method method = Method::proxgen;
  StepSchedule step = StepSchedule::constant(1e-3);
  MomentumSchedule momentum = MomentumSchedule::constant(0.9);
  RegularizerSpec regularizer;
  PrecondKind precond = PrecondKind::adam_ema;
  double beta = 0.999;
  double delta = 1e-8;
  double zeta = 0.0;  // decoupled weight decay, proxgen-w only
  std::size_t batch_size = 10;
  std::int64_t max_iters = 1000;
  std::optional<std::int64_t> hard_quantize_at;

  void validate() const {
    step.validate();
    momentum.validate();
    regularizer.lambda.validate();
    if (!(delta > 0.0)) throw ConfigError("delta must be positive");
    if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("beta must lie in [0,1)");
    if (!(zeta >= 0.0)) throw ConfigError("zeta must be >= 0");
    if (zeta > 0.0 && method != Method::proxgen_w) throw ConfigError("zeta > 0 requires method proxgen-w");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_iters < 0) throw ConfigError("max_iters must be >= 0");
    if (hard_quantize_at && regularizer.family != Family::quant)
      throw ConfigError("hard_quantize_at requires a quant-lq regularizer");
    if (hard_quantize_at && *hard_quantize_at < 1) throw ConfigError("hard_quantize_at must be >= 1");
    if (method == Method::subgradient && regularizer.q == Exponent::zero)
      throw ConfigError("the l0 penalty has no usable subgradient; use a proximal method");
    if (method == Method::proxquant_original && regularizer.family != Family::quant)
      throw ConfigError("proxquant-original requires a quant-lq regularizer");
  }
};

/// Everything a single step used, kept for the stationarity witness.
struct StepOutcome {
  Method method = Method::proxgen;
  ParamVector theta_prev;   // theta_t
  ParamVector anchor;       // centre of the prox quadratic (theta_t, or the decayed theta for proxgen-w)
  ParamVector theta_next;   // theta_{t+1}
  ParamVector g;            // minibatch gradient g_t
  ParamVector m_prev;       // m_{t-1}
  ParamVector m;            // m_t
  ParamVector diag;         // C_t + delta
  double alpha = 0.0;
  double rho = 0.0;
  double lambda = 0.0;
  /// Element of lambda * subdiff R(theta_next) when it is not the metric-prox one.
  std::optional<ParamVector> reg_witness;
};

/// Indices of one minibatch; b >= n means the full batch in order.
inline std::vector<std::size_t> draw_minibatch(std::size_t n, std::size_t b, RngStream& rng) {
  if (b >= n) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    return all;
  }
  return sample_without_replacement(n, b, rng);
}

/// Derivative of pen at x, with 0 at the non-differentiable points (sign(0) = 0
/// for l1, 0 at the origin for l_q).
inline double penalty_subgradient(double x, Family family, Exponent q) {
  const double u = family == Family::sparse ? x : x - sign_of(x);
  if (u == 0.0 || q == Exponent::zero) return 0.0;
  const double s = sign_of(u);
  switch (q) {
    case Exponent::one: return s;
    case Exponent::half: return 0.5 * s / std::sqrt(std::abs(u));
    case Exponent::two_thirds: return 2.0 / 3.0 * s / std::cbrt(std::abs(u));
    case Exponent::zero: return 0.0;
  }
  return 0.0;
}

inline ParamVector regularizer_subgradient(const ParamVector& theta, const RegularizerSpec& spec) {
  ParamVector out(theta.size());
  for (Index i = 0; i < theta.size(); ++i) out[i] = penalty_subgradient(theta[i], spec.family, spec.q);
  return out;
}

/// Each coordinate snapped to +-1; sign(0) = +1.
inline ParamVector hard_quantize(const ParamVector& theta) {
  ParamVector out(theta.size());
  for (Index i = 0; i < theta.size(); ++i) out[i] = theta[i] < 0.0 ? -1.0 : 1.0;
  return out;
}

namespace detail {

/// First half of every step: sample, gradient, momentum, preconditioner.
inline StepOutcome begin_step(const ParamVector& theta, const Problem& problem, const StepperConfig& cfg,
                              MomentumState& mom, PrecondState& pre, std::int64_t t, RngStream& rng) {
  if (t < 1) throw ConfigError("iteration index must be >= 1");
  if (theta.size() != problem.dim() || mom.m.size() != theta.size() || pre.C.size() != theta.size())
    throw ConfigError("stepper: parameter, momentum and preconditioner lengths differ");

  StepOutcome out;
  out.method = cfg.method;
  out.theta_prev = theta;
  const auto batch = draw_minibatch(problem.sample_count(), cfg.batch_size, rng);
  out.g = problem.minibatch_gradient(theta, batch);
  if (!out.g.allFinite()) throw DivergenceError("non-finite minibatch gradient at t=" + std::to_string(t));

  out.m_prev = mom.m;
  out.rho = cfg.momentum.at(t);
  update_momentum(mom, out.g, out.rho);
  update_preconditioner(pre, out.g);
  out.m = mom.m;
  out.diag = effective_diag(pre);
  out.alpha = cfg.step.at(t);
  out.lambda = cfg.regularizer.lambda.at(t);
  out.anchor = theta;
  return out;
}

inline StepOutcome& finish_step(StepOutcome& out, std::int64_t t) {
  if (!out.theta_next.allFinite()) throw DivergenceError("non-finite iterate at t=" + std::to_string(t));
  return out;
}

}  // namespace detail

/// theta_{t+1} = prox^{C+delta}_{alpha lambda R}(theta_t - alpha (C+delta)^{-1} m_t).
inline StepOutcome step_proxgen(const ParamVector& theta, const Problem& problem, const StepperConfig& cfg,
                                MomentumState& mom, PrecondState& pre, std::int64_t t, RngStream& rng) {
  auto out = detail::begin_step(theta, problem, cfg, mom, pre, t, rng);
  const ParamVector theta_hat = theta.array() - out.alpha * out.m.array() / out.diag.array();
  out.theta_next = prox_vector(theta_hat, out.diag, out.alpha, cfg.regularizer, t);
  return detail::finish_step(out, t);
}

/// As step_proxgen, centred at the decayed point (1 - alpha zeta) theta_t.
inline StepOutcome step_proxgen_w(const ParamVector& theta, const Problem& problem, const StepperConfig& cfg,
                                  MomentumState& mom, PrecondState& pre, std::int64_t t, RngStream& rng) {
  auto out = detail::begin_step(theta, problem, cfg, mom, pre, t, rng);
  out.anchor = (1.0 - out.alpha * cfg.zeta) * theta;
  const ParamVector theta_hat = out.anchor.array() - out.alpha * out.m.array() / out.diag.array();
  out.theta_next = prox_vector(theta_hat, out.diag, out.alpha, cfg.regularizer, t);
  return detail::finish_step(out, t);
}

/// Two-stage baseline: exact prox point without stepsize, then interpolation.
inline StepOutcome step_prox_sgd(const ParamVector& theta, const Problem& problem, const StepperConfig& cfg,
                                 MomentumState& mom, PrecondState& pre, std::int64_t t, RngStream& rng) {
  auto out = detail::begin_step(theta, problem, cfg, mom, pre, t, rng);
  const ParamVector z = theta.array() - out.m.array() / out.diag.array();
  const ParamVector prox_point = prox_vector(z, out.diag, 1.0, cfg.regularizer, t);
  out.theta_next = theta + out.alpha * (prox_point - theta);
  return detail::finish_step(out, t);
}

/// theta_{t+1} = theta_t - alpha (C+delta)^{-1} (m_t + lambda dR(theta_t)).
inline StepOutcome step_subgradient(const ParamVector& theta, const Problem& problem, const StepperConfig& cfg,
                                    MomentumState& mom, PrecondState& pre, std::int64_t t, RngStream& rng) {
  if (cfg.regularizer.q == Exponent::zero) throw ConfigError("subgradient: l0 is not supported");
  auto out = detail::begin_step(theta, problem, cfg, mom, pre, t, rng);
  const ParamVector direction = out.m + out.lambda * regularizer_subgradient(theta, cfg.regularizer);
  out.theta_next = theta.array() - out.alpha * direction.array() / out.diag.array();
  return detail::finish_step(out, t);
}

/// Preconditioned gradient step followed by the Euclidean prox.
inline StepOutcome step_proxquant_original(const ParamVector& theta, const Problem& problem,
                                           const StepperConfig& cfg, MomentumState& mom, PrecondState& pre,
                                           std::int64_t t, RngStream& rng) {
  auto out = detail::begin_step(theta, problem, cfg, mom, pre, t, rng);
  const ParamVector theta_hat = theta.array() - out.alpha * out.m.array() / out.diag.array();
  out.theta_next = prox_vector(theta_hat, ParamVector::Ones(theta.size()), out.alpha, cfg.regularizer, t);
  out.reg_witness = (theta_hat - out.theta_next) / out.alpha;
  return detail::finish_step(out, t);
}

inline StepOutcome step(const ParamVector& theta, const Problem& problem, const StepperConfig& cfg,
                        MomentumState& mom, PrecondState& pre, std::int64_t t, RngStream& rng) {
  switch (cfg.method) {
    case Method::proxgen: return step_proxgen(theta, problem, cfg, mom, pre, t, rng);
    case Method::proxgen_w: return step_proxgen_w(theta, problem, cfg, mom, pre, t, rng);
    case Method::prox_sgd: return step_prox_sgd(theta, problem, cfg, mom, pre, t, rng);
    case Method::subgradient: return step_subgradient(theta, problem, cfg, mom, pre, t, rng);
    case Method::proxquant_original: return step_proxquant_original(theta, problem, cfg, mom, pre, t, rng);
  }
  throw ConfigError("unknown method");
}

}  // namespace proxgen
