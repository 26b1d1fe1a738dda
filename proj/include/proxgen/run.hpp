#pragma once

#include "proxgen/core.hpp"
#include "proxgen/diagnostics.hpp"
#include "proxgen/optim.hpp"
#include "proxgen/precond.hpp"
#include "proxgen/problems.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace proxgen {

struct RunOptions {
  std::int64_t diagnostics_every = 1;
  std::optional<std::vector<Index>> true_support;
  // minibatch draws per record for the gradient-variance witness
  int variance_batches = 4;
};

enum class RunStatus { ok, diverged, failed };

inline std::string status_name(RunStatus s) {
  switch (s) {
    case RunStatus::ok: return "ok";
    case RunStatus::diverged: return "diverged";
    case RunStatus::failed: return "failed";
  }
  return "?";
}

struct RunResult {
  std::vector<RunRecord> records;
  ParamVector theta;  // last finite iterate
  RunStatus status = RunStatus::ok;
  std::string message;
  std::int64_t iterations = 0;  // steps completed
  std::int64_t momentum_bound_violations = 0;  // checked at every step, not only recorded ones
  bool ever_nonzero = false;  // some coordinate of some theta_{t+1} was nonzero
  bool quantized = false;
  std::optional<ParamVector> theta_before_quantize;
};

/// Sample variance of K minibatch gradients at a fixed theta.
inline double gradient_variance(const Problem& problem, const ParamVector& theta, std::size_t batch_size, int draws,
                                RngStream& rng) {
  if (draws < 2 || batch_size >= problem.sample_count()) return 0.0;
  std::vector<ParamVector> gs;
  gs.reserve(static_cast<std::size_t>(draws));
  ParamVector mean = ParamVector::Zero(theta.size());
  for (int k = 0; k < draws; ++k) {
    const auto batch = sample_without_replacement(problem.sample_count(), batch_size, rng);
    gs.push_back(problem.minibatch_gradient(theta, batch));
    mean += gs.back();
  }
  mean /= static_cast<double>(draws);
  double s = 0.0;
  for (const auto& g : gs) s += (g - mean).squaredNorm();
  return s / static_cast<double>(draws - 1);
}

/// Runs T = cfg.max_iters steps from theta1. A divergence stops the loop and keeps
/// the records gathered so far. After hard quantization the iterate is frozen and
/// the loop ends.
inline RunResult run(const Problem& problem, const StepperConfig& cfg, const ParamVector& theta1, RngStream rng,
                     const RunOptions& opt = {}) {
  cfg.validate();
  if (opt.diagnostics_every < 1) throw ConfigError("diagnostics_every must be >= 1");
  if (theta1.size() != problem.dim()) throw ConfigError("run: initial point has the wrong length");

  const Index p = theta1.size();
  MomentumState mom(p);
  PrecondState pre(cfg.precond, p, cfg.beta, cfg.delta);
  RngStream variance_rng = rng.substream(rng.stream_id() ^ 0x5641524eULL);

  RunResult res;
  res.theta = theta1;
  double G = 0.0;
  for (std::int64_t t = 1; t <= cfg.max_iters; ++t) {
    StepOutcome out;
    try {
      out = step(res.theta, problem, cfg, mom, pre, t, rng);
    } catch (const DivergenceError& e) {
      res.status = RunStatus::diverged;
      res.message = e.what();
      break;
    } catch (const std::domain_error& e) {
      res.status = RunStatus::failed;
      res.message = e.what();
      break;
    }

    const double g_norm = out.g.norm();
    const double m_norm = out.m.norm();
    G = std::max(G, g_norm);
    if (m_norm > G + 1e-12) ++res.momentum_bound_violations;

    if (cfg.hard_quantize_at && *cfg.hard_quantize_at == t) {
      res.theta_before_quantize = out.theta_next;
      out.theta_next = hard_quantize(out.theta_next);
      res.quantized = true;
    }
    if ((out.theta_next.array() != 0.0).any()) res.ever_nonzero = true;

    if (t % opt.diagnostics_every == 0 || t == cfg.max_iters || res.quantized) {
      RunRecord rec;
      rec.t = t;
      rec.alpha = out.alpha;
      rec.lambda = out.lambda;
      const ParamVector grad_next = problem.full_gradient(out.theta_next);
      rec.loss = problem.full_loss(out.theta_next);
      rec.objective = rec.loss + out.lambda * regularizer_value(out.theta_next, cfg.regularizer);
      rec.stationarity_bound = res.quantized
                                   ? stationarity_distance(grad_next, out.theta_next, cfg.regularizer, out.lambda)
                                   : stationarity_bound(out, grad_next, cfg.regularizer);
      rec.sparsity = sparsity(out.theta_next);
      if (opt.true_support) {
        const auto sm = support_metrics(out.theta_next, *opt.true_support);
        rec.support_precision = sm.precision;
        rec.support_recall = sm.recall;
        rec.support_f1 = sm.f1;
      }
      rec.momentum_norm = m_norm;
      rec.grad_norm = g_norm;
      rec.max_grad_norm = G;
      rec.c4_min_eig = c4_min_eig(pre, out.alpha);
      rec.step_norm = (out.theta_next - out.theta_prev).norm();
      rec.grad_variance = gradient_variance(problem, out.theta_next, cfg.batch_size, opt.variance_batches, variance_rng);
      if (!std::isfinite(rec.objective) || !grad_next.allFinite()) {
        res.status = RunStatus::diverged;
        res.message = "non-finite objective at t=" + std::to_string(t);
        break;
      }
      res.records.push_back(rec);
    }

    res.theta = out.theta_next;
    res.iterations = t;
    if (res.quantized) break;
  }
  return res;
}

}  // namespace proxgen
