#pragma once

#include "proxgen/core.hpp"
#include "proxgen/optim.hpp"
#include "proxgen/problems.hpp"
#include "proxgen/prox.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace proxgen {

/// One row of per-iteration metrics. Support fields are empty unless a true
/// support was supplied.
struct RunRecord {
  std::int64_t t = 0;
  double alpha = 0.0;
  double lambda = 0.0;
  double objective = 0.0;  // f + lambda R on the full data
  double loss = 0.0;       // f alone
  double stationarity_bound = 0.0;
  double sparsity = 0.0;
  std::optional<double> support_precision;
  std::optional<double> support_recall;
  std::optional<double> support_f1;
  double momentum_norm = 0.0;
  double grad_norm = 0.0;      // minibatch gradient at this step
  double max_grad_norm = 0.0;  // running max over every step so far
  double c4_min_eig = 0.0;
  double step_norm = 0.0;
  double grad_variance = 0.0;
};

inline const std::vector<std::string>& record_columns() {
  static const std::vector<std::string> cols{
      "t",         "alpha",          "lambda",        "objective",    "loss",          "stationarity_bound",
      "sparsity",  "support_precision", "support_recall", "support_f1", "momentum_norm", "grad_norm",
      "max_grad_norm", "c4_min_eig", "step_norm",     "grad_variance"};
  return cols;
}

inline std::string record_csv_row(const RunRecord& r) {
  auto opt = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string(); };
  std::string s = std::to_string(r.t);
  for (const auto& f : {format_real(r.alpha), format_real(r.lambda), format_real(r.objective), format_real(r.loss),
                        format_real(r.stationarity_bound), format_real(r.sparsity), opt(r.support_precision),
                        opt(r.support_recall), opt(r.support_f1), format_real(r.momentum_norm),
                        format_real(r.grad_norm), format_real(r.max_grad_norm), format_real(r.c4_min_eig),
                        format_real(r.step_norm), format_real(r.grad_variance)}) {
    s += ',';
    s += f;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Stationarity.
// ---------------------------------------------------------------------------

/// grad_f(theta+) - (1-rho) g - rho m_prev - (1/alpha)(C+delta)(theta+ - anchor).
/// For the metric-prox methods this lies in the Frechet subdifferential of F at theta+.
inline ParamVector proxgen_witness(const StepOutcome& o, const ParamVector& grad_next) {
  return grad_next.array() - (1.0 - o.rho) * o.g.array() - o.rho * o.m_prev.array() -
         o.diag.array() * (o.theta_next - o.anchor).array() / o.alpha;
}

/// Exact dist(0, grad + lambda dR(theta)) for the separable penalties, using the
/// Frechet subdifferential coordinate by coordinate.
inline double stationarity_distance(const ParamVector& grad, const ParamVector& theta, const RegularizerSpec& spec,
                                    double lambda) {
  if (grad.size() != theta.size()) throw ConfigError("stationarity_distance: length mismatch");
  double sq = 0.0;
  for (Index i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    const double x = theta[i];
    double d;
    if (lambda == 0.0) {
      d = std::abs(g);
    } else if (spec.family == Family::quant && x == 0.0) {
      d = 0.0;  // the penalty drops to 0 here from ~1 on both sides
    } else {
      const double u = spec.family == Family::sparse ? x : x - sign_of(x);
      if (u != 0.0) {
        d = std::abs(g + lambda * penalty_subgradient(x, spec.family, spec.q));
      } else if (spec.q == Exponent::one) {
        d = std::max(std::abs(g) - lambda, 0.0);
      } else {
        d = 0.0;  // |u|^q, q < 1, and the l0 jump: subdifferential is all of R
      }
    }
    sq += d * d;
  }
  return std::sqrt(sq);
}

/// Upper bound on dist(0, subdiff F(theta+)) computed from one step.
/// ProxGen and ProxGen-W use the metric-prox witness, the original ProxQuant its
/// Euclidean-prox witness; the two-stage and subgradient baselines have no prox
/// optimality at theta+ so the exact distance is returned instead.
inline double stationarity_bound(const StepOutcome& o, const ParamVector& grad_next, const RegularizerSpec& spec) {
  switch (o.method) {
    case Method::proxgen:
    case Method::proxgen_w:
      return proxgen_witness(o, grad_next).norm();
    case Method::proxquant_original:
      if (o.reg_witness) return (grad_next + *o.reg_witness).norm();
      break;
    case Method::prox_sgd:
    case Method::subgradient:
      break;
  }
  return stationarity_distance(grad_next, o.theta_next, spec, o.lambda);
}

inline double stationarity_bound(const StepOutcome& o, const Problem& problem, const RegularizerSpec& spec) {
  return stationarity_bound(o, problem.full_gradient(o.theta_next), spec);
}

// ---------------------------------------------------------------------------
// Sparsity and support.
// ---------------------------------------------------------------------------

inline double sparsity(const ParamVector& theta) {
  if (theta.size() == 0) return 0.0;
  return static_cast<double>((theta.array() == 0.0).count()) / static_cast<double>(theta.size());
}

struct SupportMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Predicted support is {i : theta_i != 0} exactly.
inline SupportMetrics support_metrics(const ParamVector& theta, const std::vector<Index>& true_support) {
  std::vector<char> truth(static_cast<std::size_t>(theta.size()), 0);
  for (auto j : true_support) {
    if (j < 0 || j >= theta.size()) throw ConfigError("support_metrics: index out of range");
    truth[static_cast<std::size_t>(j)] = 1;
  }
  const auto true_count = static_cast<double>(std::count(truth.begin(), truth.end(), 1));
  double predicted = 0.0, hits = 0.0;
  for (Index i = 0; i < theta.size(); ++i) {
    if (theta[i] != 0.0) {
      predicted += 1.0;
      if (truth[static_cast<std::size_t>(i)]) hits += 1.0;
    }
  }
  SupportMetrics m;
  m.precision = predicted > 0.0 ? hits / predicted : (true_count == 0.0 ? 1.0 : 0.0);
  m.recall = true_count > 0.0 ? hits / true_count : 1.0;
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// Condition monitors.
// ---------------------------------------------------------------------------

struct ConditionReport {
  std::size_t records = 0;
  double max_step_norm = 0.0;  // finite step vector
  bool step_within_D = false;
  double max_grad_norm = 0.0;  // bounded gradient
  bool grad_within_G = false;
  double min_c4_min_eig = 0.0;  // metric stays positive definite
  bool c4_above_gamma = false;
  double mean_grad_variance = 0.0;  // bounded variance witness
  double max_grad_variance = 0.0;
  std::size_t momentum_bound_violations = 0;
  std::string smoothness;  // "L=<value>" or "not applicable"
};

/// Pure reporting over a recorded history; never throws on a failed condition.
inline ConditionReport monitor_conditions(const std::vector<RunRecord>& history, double gamma_target, double D_target,
                                          double G_target, std::optional<double> smoothness = std::nullopt) {
  if (history.empty()) throw ConfigError("monitor_conditions: empty history");
  ConditionReport r;
  r.records = history.size();
  r.max_step_norm = -std::numeric_limits<double>::infinity();
  r.max_grad_norm = -std::numeric_limits<double>::infinity();
  r.min_c4_min_eig = std::numeric_limits<double>::infinity();
  r.max_grad_variance = -std::numeric_limits<double>::infinity();
  double var_sum = 0.0;
  for (const auto& rec : history) {
    r.max_step_norm = std::max(r.max_step_norm, rec.step_norm);
    r.max_grad_norm = std::max(r.max_grad_norm, rec.grad_norm);
    r.min_c4_min_eig = std::min(r.min_c4_min_eig, rec.c4_min_eig);
    r.max_grad_variance = std::max(r.max_grad_variance, rec.grad_variance);
    var_sum += rec.grad_variance;
    if (rec.momentum_norm > rec.max_grad_norm + 1e-12) ++r.momentum_bound_violations;
  }
  r.mean_grad_variance = var_sum / static_cast<double>(history.size());
  r.step_within_D = r.max_step_norm <= D_target;
  r.grad_within_G = r.max_grad_norm <= G_target;
  r.c4_above_gamma = r.min_c4_min_eig >= gamma_target;
  r.smoothness = smoothness ? "L=" + format_real(*smoothness) : "not applicable";
  return r;
}

// ---------------------------------------------------------------------------
// Rate trend.
// ---------------------------------------------------------------------------

enum class TrendVerdict { consistent, borderline, non_convergent };

inline std::string verdict_name(TrendVerdict v) {
  switch (v) {
    case TrendVerdict::consistent: return "consistent";
    case TrendVerdict::borderline: return "borderline";
    case TrendVerdict::non_convergent: return "non-convergent";
  }
  return "?";
}

struct RateTrend {
  std::vector<double> ratio;  // ratio[T-1] = T * mean_{t<=T} b_t^2 = sum of b_t^2
  double growth = 0.0;        // ratio(T) / ratio(T/2)
  double increment_ratio = 0.0;  // (ratio(T)-ratio(T/2)) / (ratio(T/2)-ratio(T/4))
  double slope = 0.0;         // log-log least-squares slope of ratio over the second half
  TrendVerdict verdict = TrendVerdict::consistent;
};

/// Checks a stationarity series against the O(1/T) mean-square rate. If the mean
/// of b^2 decays like 1/T then T*mean stays bounded. Increments over successive
/// doublings stay constant for a linear ratio (ratio 2) or a logarithmic one
/// (ratio 1), and shrink when the sum converges.
inline RateTrend rate_trend(const std::vector<double>& bounds) {
  if (bounds.size() < 10) throw ConfigError("rate_trend: need at least 10 values");
  RateTrend r;
  r.ratio.resize(bounds.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    acc += bounds[i] * bounds[i];
    r.ratio[i] = acc;
  }
  const std::size_t T = bounds.size();
  const double at_T = r.ratio[T - 1];
  const double at_half = r.ratio[T / 2 - 1];
  const double at_quarter = r.ratio[T / 4 - 1];
  r.growth = at_half > 0.0 ? at_T / at_half : (at_T > 0.0 ? std::numeric_limits<double>::infinity() : 1.0);
  const double inc_late = at_T - at_half;
  const double inc_early = at_half - at_quarter;
  r.increment_ratio = inc_early > 0.0 ? inc_late / inc_early : (inc_late > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);

  double sx = 0, sy = 0, sxx = 0, sxy = 0, m = 0;
  for (std::size_t i = T / 2; i < T; ++i) {
    if (!(r.ratio[i] > 0.0)) continue;
    const double x = std::log(static_cast<double>(i + 1));
    const double y = std::log(r.ratio[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    m += 1;
  }
  const double den = m * sxx - sx * sx;
  r.slope = m >= 2 && den > 0.0 ? (m * sxy - sx * sy) / den : 0.0;

  if (r.increment_ratio >= 1.5)
    r.verdict = TrendVerdict::non_convergent;
  else if (r.increment_ratio >= 0.75)
    r.verdict = TrendVerdict::borderline;
  else
    r.verdict = TrendVerdict::consistent;
  return r;
}

}  // namespace proxgen
