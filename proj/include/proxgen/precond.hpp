#pragma once

#include "proxgen/core.hpp"

#include <cmath>
#include <string>

namespace proxgen {

/// First-order estimate m_t, zero-initialized.
struct MomentumState {
  ParamVector m;
  std::int64_t t = 0;

  MomentumState() = default;
  explicit MomentumState(Index p) : m(ParamVector::Zero(p)) {}
};

/// m_t = rho_t m_{t-1} + (1 - rho_t) g_t.
inline void update_momentum(MomentumState& state, const ParamVector& g, double rho) {
  if (g.size() != state.m.size()) throw ConfigError("update_momentum: length mismatch");
  if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("update_momentum: rho must lie in [0,1)");
  state.m = rho * state.m + (1.0 - rho) * g;
  ++state.t;
}

enum class PrecondKind { identity, adagrad, adam_ema };

inline std::string precond_name(PrecondKind k) {
  switch (k) {
    case PrecondKind::identity: return "identity";
    case PrecondKind::adagrad: return "adagrad";
    case PrecondKind::adam_ema: return "adam-ema";
  }
  return "?";
}

inline PrecondKind precond_from_name(const std::string& s) {
  if (s == "identity") return PrecondKind::identity;
  if (s == "adagrad") return PrecondKind::adagrad;
  if (s == "adam-ema" || s == "adam") return PrecondKind::adam_ema;
  throw ConfigError("unknown preconditioner '" + s + "'");
}

/// Diagonal preconditioner C_t. Identity keeps C = 1; adagrad keeps the running
/// sum of g^2 and reads C = sqrt(sum / t); adam-ema keeps the EMA of g^2 (no bias
/// correction) and reads C = sqrt(ema).
struct PrecondState {
  PrecondKind kind = PrecondKind::identity;
  ParamVector C;
  ParamVector accum;
  double beta = 0.999;
  double delta = 1e-8;
  std::int64_t t = 0;

  PrecondState() = default;
  PrecondState(PrecondKind k, Index p, double beta_ = 0.999, double delta_ = 1e-8)
      : kind(k), accum(ParamVector::Zero(p)), beta(beta_), delta(delta_) {
    if (!(delta > 0.0)) throw ConfigError("preconditioner: delta must be positive");
    if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("preconditioner: beta must lie in [0,1)");
    C = kind == PrecondKind::identity ? ParamVector::Ones(p) : ParamVector::Zero(p);
  }
};

inline void update_preconditioner(PrecondState& state, const ParamVector& g) {
  if (g.size() != state.C.size()) throw ConfigError("update_preconditioner: length mismatch");
  ++state.t;
  switch (state.kind) {
    case PrecondKind::identity:
      break;
    case PrecondKind::adagrad:
      state.accum += g.cwiseAbs2();
      state.C = (state.accum / static_cast<double>(state.t)).cwiseSqrt();
      break;
    case PrecondKind::adam_ema:
      state.accum = state.beta * state.accum + (1.0 - state.beta) * g.cwiseAbs2();
      state.C = state.accum.cwiseSqrt();
      break;
  }
}

/// C + delta, the metric of the prox step.
inline ParamVector effective_diag(const PrecondState& state) {
  return state.C.array() + state.delta;
}

struct C4Check {
  bool satisfied = false;
  double observed = 0.0;  // lambda_min(alpha (C + delta I)^{-1})
};

inline double c4_min_eig(const PrecondState& state, double alpha) {
  return alpha / (state.C.maxCoeff() + state.delta);
}

inline C4Check check_c4(const PrecondState& state, double alpha, double gamma_target) {
  const double obs = c4_min_eig(state, alpha);
  return {obs >= gamma_target, obs};
}

}  // namespace proxgen
