#pragma once

// Experiment configuration, grid runners and result files.

#include "proxgen/core.hpp"
#include "proxgen/diagnostics.hpp"
#include "proxgen/optim.hpp"
#include "proxgen/oracle.hpp"
#include "proxgen/problems.hpp"
#include "proxgen/prox.hpp"
#include "proxgen/run.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace proxgen {

// RNG stream ids, fixed so that every method in a grid sees the same data,
// initial point and minibatch sequence for a given seed.
inline constexpr std::uint64_t kStreamData = 0;
inline constexpr std::uint64_t kStreamInit = 1;
inline constexpr std::uint64_t kStreamBatches = 2;
inline constexpr std::uint64_t kStreamPretrain = 3;
inline constexpr std::uint64_t kStreamFuzz = 4;

struct InitSpec {
  enum class Kind { zero, gaussian };
  Kind kind = Kind::zero;
  double scale = 0.0;

  std::string name() const { return kind == Kind::zero ? "zero" : "gaussian(" + format_real(scale) + ")"; }
};

inline InitSpec parse_init(const std::string& s) {
  if (s == "zero") return {};
  if (s == "gaussian") return {InitSpec::Kind::gaussian, 1.0};
  if (s.rfind("gaussian(", 0) == 0 && s.back() == ')') {
    const std::string inner = s.substr(9, s.size() - 10);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(inner, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != inner.size() || !(v > 0.0)) throw ConfigError("init: bad gaussian scale in '" + s + "'");
    return {InitSpec::Kind::gaussian, v};
  }
  throw ConfigError("init: expected zero or gaussian(<scale>), got '" + s + "'");
}

/// The 1-2-5 ladder 0.001 ... 5.
inline std::vector<double> default_lambda_grid() {
  return {0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0};
}

struct ExperimentConfig {
  std::string experiment;

  // optimizer
  std::vector<Method> methods;
  double alpha = 1e-3;
  std::string step_schedule = "constant";
  double decay_factor = 0.1;
  std::vector<std::int64_t> milestones;
  std::string momentum_schedule = "constant";
  double rho = 0.9;
  double mu = 0.99;
  Family family = Family::sparse;
  std::vector<Exponent> qs{Exponent::one};
  std::vector<double> lambda_grid = default_lambda_grid();
  std::string lambda_schedule = "constant";
  std::int64_t epoch_length = 100;
  PrecondKind precond = PrecondKind::adam_ema;
  double beta = 0.999;
  double delta = 1e-8;
  double zeta = 0.0;
  std::size_t batch_size = 10;
  std::int64_t max_iters = 20000;
  std::optional<std::int64_t> hard_quantize_at;

  // harness
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string output_dir = "out";
  std::int64_t diagnostics_every = 100;
  std::vector<InitSpec> inits{InitSpec{}};
  int variance_batches = 4;
  bool write_records = true;

  // lasso
  Index lasso_p = 500;
  Index lasso_n = 100;
  Index lasso_k = 10;
  double lasso_noise = 0.05;

  // mlp
  Index mlp_input_dim = 20;
  Index mlp_hidden = 32;
  int mlp_classes = 4;
  Activation mlp_activation = Activation::tanh;
  std::size_t mlp_train = 1000;
  std::size_t mlp_test = 500;
  double mlp_separation = 4.0;
  std::int64_t pretrain_iters = 2000;
  double pretrain_alpha = 1e-3;

  // prox-fuzz
  std::size_t fuzz_samples = 10000;

  StepSchedule step() const {
    if (step_schedule == "constant") return StepSchedule::constant(alpha);
    if (step_schedule == "step-decay") return StepSchedule::step_decay(alpha, decay_factor, milestones);
    throw ConfigError("step_schedule must be constant or step-decay");
  }

  MomentumSchedule momentum() const {
    if (momentum_schedule == "constant") return MomentumSchedule::constant(rho);
    if (momentum_schedule == "exponential") return MomentumSchedule::exponential(rho, mu);
    throw ConfigError("momentum_schedule must be constant or exponential");
  }

  LambdaSchedule lambda_at(double lambda) const {
    if (lambda_schedule == "constant") return LambdaSchedule::constant(lambda);
    if (lambda_schedule == "homotopy") return LambdaSchedule::homotopy(lambda, epoch_length);
    throw ConfigError("lambda_schedule must be constant or homotopy");
  }

  /// Stepper settings for one grid cell.
  StepperConfig stepper(Method m, Exponent q, double lambda) const {
    StepperConfig c;
    c.method = m;
    c.step = step();
    c.momentum = momentum();
    c.regularizer = RegularizerSpec{family, q, lambda_at(lambda)};
    c.precond = precond;
    c.beta = beta;
    c.delta = delta;
    c.zeta = m == Method::proxgen_w ? zeta : 0.0;
    c.batch_size = batch_size;
    c.max_iters = max_iters;
    c.hard_quantize_at = hard_quantize_at;
    return c;
  }

  void validate() const;
};

inline bool is_known_experiment(const std::string& e) {
  return e == "lasso-recovery" || e == "sparse-mlp" || e == "quant-mlp" || e == "prox-fuzz";
}

/// Defaults per experiment, before the config file is applied.
inline ExperimentConfig default_config(const std::string& experiment) {
  if (!is_known_experiment(experiment)) throw ConfigError("unknown experiment '" + experiment + "'");
  ExperimentConfig c;
  c.experiment = experiment;
  if (experiment == "lasso-recovery") {
    c.methods = {Method::proxgen, Method::prox_sgd};
    c.alpha = 0.01;
    c.rho = 0.99;  // b = 10 minibatch noise otherwise opens spurious coordinates
    c.inits = {InitSpec{}, InitSpec{InitSpec::Kind::gaussian, 1.0}};
  } else if (experiment == "sparse-mlp") {
    c.methods = {Method::proxgen_w, Method::subgradient};
    c.qs = {Exponent::one, Exponent::half, Exponent::two_thirds, Exponent::zero};
    c.lambda_grid.insert(c.lambda_grid.begin(), 0.0);
    c.seeds = {1, 2, 3};
    c.batch_size = 32;
    c.max_iters = 3000;
    c.inits = {InitSpec{InitSpec::Kind::gaussian, 0.1}};
  } else if (experiment == "quant-mlp") {
    c.methods = {Method::proxquant_original, Method::proxgen};
    c.family = Family::quant;
    c.qs = {Exponent::one, Exponent::half, Exponent::two_thirds, Exponent::zero};
    c.lambda_grid = {0.0, 1e-4, 1e-3};
    c.lambda_schedule = "homotopy";
    c.seeds = {1, 2, 3};
    c.batch_size = 32;
    c.max_iters = 3000;
    c.hard_quantize_at = 3000;
    c.inits = {InitSpec{InitSpec::Kind::gaussian, 0.1}};
  } else {
    c.methods = {};
    c.qs = {Exponent::one, Exponent::zero, Exponent::half, Exponent::two_thirds};
    c.seeds = {1};
  }
  return c;
}

inline void ExperimentConfig::validate() const {
  if (!is_known_experiment(experiment)) throw ConfigError("unknown experiment '" + experiment + "'");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (qs.empty()) throw ConfigError("q must not be empty");
  if (diagnostics_every < 1) throw ConfigError("diagnostics_every must be >= 1");
  if (variance_batches < 0) throw ConfigError("variance_batches must be >= 0");
  if (experiment == "prox-fuzz") {
    if (fuzz_samples < 1) throw ConfigError("fuzz_samples must be >= 1");
    return;
  }
  if (lambda_grid.empty()) throw ConfigError("lambda_grid must not be empty");
  for (double l : lambda_grid)
    if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("lambda_grid entries must be finite and >= 0");
  if (methods.empty()) throw ConfigError("methods must not be empty");
  if (inits.empty()) throw ConfigError("init must not be empty");
  if (experiment == "lasso-recovery") {
    if (family != Family::sparse) throw ConfigError("lasso-recovery uses the sparse family");
    if (lasso_p < 1 || lasso_n < 1) throw ConfigError("lasso_p and lasso_n must be >= 1");
    if (lasso_k < 1 || lasso_k > lasso_p) throw ConfigError("lasso_k must lie in [1, lasso_p]");
    if (!(lasso_noise >= 0.0)) throw ConfigError("lasso_noise must be >= 0");
  } else {
    MlpSpec{mlp_input_dim, mlp_hidden, mlp_classes, mlp_activation, LossKind::softmax_cross_entropy}.validate();
    if (mlp_train < 1 || mlp_test < 1) throw ConfigError("mlp_train and mlp_test must be >= 1");
    if (!(mlp_separation >= 0.0)) throw ConfigError("mlp_separation must be >= 0");
    if (pretrain_iters < 0) throw ConfigError("pretrain_iters must be >= 0");
    if (!(pretrain_alpha > 0.0)) throw ConfigError("pretrain_alpha must be positive");
  }
  if (experiment == "quant-mlp" && family != Family::quant) throw ConfigError("quant-mlp uses the quant family");
  if (experiment == "sparse-mlp" && family != Family::sparse) throw ConfigError("sparse-mlp uses the sparse family");
  // zeta only reaches proxgen-w cells; setting it with no such method is a mistake
  if (zeta > 0.0 && std::find(methods.begin(), methods.end(), Method::proxgen_w) == methods.end())
    throw ConfigError("zeta > 0 requires method proxgen-w");
  // Every cell shares these settings, so one probe per method catches bad combinations early.
  for (Method m : methods)
    for (Exponent q : qs) {
      if (m == Method::subgradient && q == Exponent::zero) continue;  // skipped per cell
      if (m == Method::prox_sgd && q != Exponent::one) continue;
      stepper(m, q, lambda_grid.front()).validate();
    }
}

// ---------------------------------------------------------------------------
// Config file: one key = value per line, '#' starts a comment.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  for (char ch : v) {
    if (ch == '(') ++depth;
    if (ch == ')') --depth;
    if (ch == ',' && depth == 0) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
  for (const auto& x : out)
    if (x.empty()) throw ConfigError("empty entry in list '" + v + "'");
  return out;
}

inline double to_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError(key + ": not a number: '" + v + "'");
  }
  if (used != v.size()) throw ConfigError(key + ": not a number: '" + v + "'");
  return d;
}

inline std::int64_t to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long d = 0;
  try {
    d = std::stoll(v, &used);
  } catch (const std::exception&) {
    throw ConfigError(key + ": not an integer: '" + v + "'");
  }
  if (used != v.size()) throw ConfigError(key + ": not an integer: '" + v + "'");
  return d;
}

inline std::uint64_t to_seed(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError(key + ": seeds are unsigned integers, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": seed out of range: '" + v + "'");
  }
}

inline std::size_t to_count(const std::string& key, const std::string& v) {
  const auto d = to_int(key, v);
  if (d < 0) throw ConfigError(key + " must be >= 0");
  return static_cast<std::size_t>(d);
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false");
}

}  // namespace detail

inline void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& v) {
  using namespace detail;
  if (key == "experiment") {
    if (v != c.experiment) throw ConfigError("config names experiment '" + v + "' but '" + c.experiment + "' was requested");
  } else if (key == "methods" || key == "method") {
    c.methods.clear();
    for (const auto& s : split_list(v)) c.methods.push_back(method_from_name(s));
  } else if (key == "alpha") {
    c.alpha = to_real(key, v);
  } else if (key == "step_schedule") {
    c.step_schedule = v;
  } else if (key == "decay_factor") {
    c.decay_factor = to_real(key, v);
  } else if (key == "milestones") {
    c.milestones.clear();
    for (const auto& s : split_list(v)) c.milestones.push_back(to_int(key, s));
  } else if (key == "momentum_schedule") {
    c.momentum_schedule = v;
  } else if (key == "rho") {
    c.rho = to_real(key, v);
  } else if (key == "mu") {
    c.mu = to_real(key, v);
  } else if (key == "family") {
    if (v == "sparse-lq") c.family = Family::sparse;
    else if (v == "quant-lq") c.family = Family::quant;
    else throw ConfigError("family must be sparse-lq or quant-lq");
  } else if (key == "q") {
    c.qs.clear();
    for (const auto& s : split_list(v)) {
      if (s == "1/2") c.qs.push_back(Exponent::half);
      else if (s == "2/3") c.qs.push_back(Exponent::two_thirds);
      else c.qs.push_back(exponent_from_value(to_real(key, s)));
    }
  } else if (key == "lambda_grid") {
    c.lambda_grid.clear();
    for (const auto& s : split_list(v)) c.lambda_grid.push_back(to_real(key, s));
  } else if (key == "lambda_schedule") {
    c.lambda_schedule = v;
  } else if (key == "epoch_length") {
    c.epoch_length = to_int(key, v);
  } else if (key == "precond") {
    c.precond = precond_from_name(v);
  } else if (key == "beta") {
    c.beta = to_real(key, v);
  } else if (key == "delta") {
    c.delta = to_real(key, v);
  } else if (key == "zeta") {
    c.zeta = to_real(key, v);
  } else if (key == "batch_size") {
    c.batch_size = to_count(key, v);
  } else if (key == "max_iters") {
    c.max_iters = to_int(key, v);
  } else if (key == "hard_quantize_at") {
    if (v == "none") c.hard_quantize_at.reset();
    else c.hard_quantize_at = to_int(key, v);
  } else if (key == "seeds") {
    c.seeds.clear();
    for (const auto& s : split_list(v)) c.seeds.push_back(to_seed(key, s));
  } else if (key == "output_dir") {
    c.output_dir = v;
  } else if (key == "diagnostics_every") {
    c.diagnostics_every = to_int(key, v);
  } else if (key == "init") {
    c.inits.clear();
    for (const auto& s : split_list(v)) c.inits.push_back(parse_init(s));
  } else if (key == "variance_batches") {
    c.variance_batches = static_cast<int>(to_int(key, v));
  } else if (key == "write_records") {
    c.write_records = to_bool(key, v);
  } else if (key == "lasso_p") {
    c.lasso_p = to_int(key, v);
  } else if (key == "lasso_n") {
    c.lasso_n = to_int(key, v);
  } else if (key == "lasso_k") {
    c.lasso_k = to_int(key, v);
  } else if (key == "lasso_noise") {
    c.lasso_noise = to_real(key, v);
  } else if (key == "mlp_input_dim") {
    c.mlp_input_dim = to_int(key, v);
  } else if (key == "mlp_hidden") {
    c.mlp_hidden = to_int(key, v);
  } else if (key == "mlp_classes") {
    c.mlp_classes = static_cast<int>(to_int(key, v));
  } else if (key == "mlp_activation") {
    if (v == "relu") c.mlp_activation = Activation::relu;
    else if (v == "tanh") c.mlp_activation = Activation::tanh;
    else throw ConfigError("mlp_activation must be relu or tanh");
  } else if (key == "mlp_train") {
    c.mlp_train = to_count(key, v);
  } else if (key == "mlp_test") {
    c.mlp_test = to_count(key, v);
  } else if (key == "mlp_separation") {
    c.mlp_separation = to_real(key, v);
  } else if (key == "pretrain_iters") {
    c.pretrain_iters = to_int(key, v);
  } else if (key == "pretrain_alpha") {
    c.pretrain_alpha = to_real(key, v);
  } else if (key == "fuzz_samples") {
    c.fuzz_samples = to_count(key, v);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

/// Parses key = value text on top of the experiment defaults.
inline ExperimentConfig parse_config(const std::string& experiment, std::istream& in) {
  ExperimentConfig c = default_config(experiment);
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    try {
      apply_setting(c, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& experiment, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  return parse_config(experiment, in);
}

/// Resolved settings as ordered (key, value) text, for the echo file.
inline std::vector<std::pair<std::string, std::string>> resolved_settings(const ExperimentConfig& c) {
  auto join = [](const auto& xs, auto fmt) {
    std::string s;
    for (const auto& x : xs) {
      if (!s.empty()) s += ',';
      s += fmt(x);
    }
    return s;
  };
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("experiment", c.experiment);
  kv.emplace_back("methods", join(c.methods, method_name));
  kv.emplace_back("alpha", format_real(c.alpha));
  kv.emplace_back("step_schedule", c.step_schedule);
  kv.emplace_back("decay_factor", format_real(c.decay_factor));
  kv.emplace_back("milestones", join(c.milestones, [](std::int64_t v) { return std::to_string(v); }));
  kv.emplace_back("momentum_schedule", c.momentum_schedule);
  kv.emplace_back("rho", format_real(c.rho));
  kv.emplace_back("mu", format_real(c.mu));
  kv.emplace_back("family", c.family == Family::sparse ? "sparse-lq" : "quant-lq");
  kv.emplace_back("q", join(c.qs, exponent_name));
  kv.emplace_back("lambda_grid", join(c.lambda_grid, format_real));
  kv.emplace_back("lambda_schedule", c.lambda_schedule);
  kv.emplace_back("epoch_length", std::to_string(c.epoch_length));
  kv.emplace_back("precond", precond_name(c.precond));
  kv.emplace_back("beta", format_real(c.beta));
  kv.emplace_back("delta", format_real(c.delta));
  kv.emplace_back("zeta", format_real(c.zeta));
  kv.emplace_back("batch_size", std::to_string(c.batch_size));
  kv.emplace_back("max_iters", std::to_string(c.max_iters));
  kv.emplace_back("hard_quantize_at", c.hard_quantize_at ? std::to_string(*c.hard_quantize_at) : "none");
  kv.emplace_back("seeds", join(c.seeds, [](std::uint64_t v) { return std::to_string(v); }));
  kv.emplace_back("output_dir", c.output_dir);
  kv.emplace_back("diagnostics_every", std::to_string(c.diagnostics_every));
  kv.emplace_back("init", join(c.inits, [](const InitSpec& i) { return i.name(); }));
  kv.emplace_back("variance_batches", std::to_string(c.variance_batches));
  kv.emplace_back("write_records", c.write_records ? "true" : "false");
  if (c.experiment == "lasso-recovery") {
    kv.emplace_back("lasso_p", std::to_string(c.lasso_p));
    kv.emplace_back("lasso_n", std::to_string(c.lasso_n));
    kv.emplace_back("lasso_k", std::to_string(c.lasso_k));
    kv.emplace_back("lasso_noise", format_real(c.lasso_noise));
  } else if (c.experiment != "prox-fuzz") {
    kv.emplace_back("mlp_input_dim", std::to_string(c.mlp_input_dim));
    kv.emplace_back("mlp_hidden", std::to_string(c.mlp_hidden));
    kv.emplace_back("mlp_classes", std::to_string(c.mlp_classes));
    kv.emplace_back("mlp_activation", c.mlp_activation == Activation::relu ? "relu" : "tanh");
    kv.emplace_back("mlp_train", std::to_string(c.mlp_train));
    kv.emplace_back("mlp_test", std::to_string(c.mlp_test));
    kv.emplace_back("mlp_separation", format_real(c.mlp_separation));
    kv.emplace_back("pretrain_iters", std::to_string(c.pretrain_iters));
    kv.emplace_back("pretrain_alpha", format_real(c.pretrain_alpha));
  } else {
    kv.emplace_back("fuzz_samples", std::to_string(c.fuzz_samples));
  }
  return kv;
}

// ---------------------------------------------------------------------------
// Prox fuzzing against the oracle.
// ---------------------------------------------------------------------------

struct FuzzReport {
  std::string op;
  Family family = Family::sparse;
  Exponent q = Exponent::one;
  std::size_t samples = 0;
  double max_gap = 0.0;   // objective(closed form) - objective(oracle)
  double mean_gap = 0.0;
  std::size_t dead_zone_samples = 0;
  std::size_t dead_zone_nonzero = 0;  // dead-zone outputs that are not bit-exact +0.0
  std::size_t errors = 0;             // closed form threw
  bool zero_lambda_row = false;       // samples drawn with lambda = 0
};

inline std::string operator_name(Family family, Exponent q) {
  if (family == Family::quant) return "prox_quant_lq";
  switch (q) {
    case Exponent::one: return "prox_l1";
    case Exponent::zero: return "prox_l0";
    case Exponent::half: return "prox_l_half";
    case Exponent::two_thirds: return "prox_l_two_thirds";
  }
  return "?";
}

inline bool is_positive_zero(double x) { return x == 0.0 && !std::signbit(x); }

/// Draws |z| and lambda_eff log-uniformly (z in [1e-6, 10] with random sign,
/// lambda_eff in [1e-6, 10]) and random kappa, alpha consistent with lambda_eff.
/// With zero_lambda set every sample uses lambda = 0.
inline FuzzReport fuzz_operator(Family family, Exponent q, std::size_t samples, RngStream& rng,
                                bool zero_lambda = false, std::size_t grid_points = kOracleGridPoints) {
  FuzzReport r;
  r.op = operator_name(family, q);
  r.family = family;
  r.q = q;
  r.zero_lambda_row = zero_lambda;
  const auto pen = oracle_penalty(family, q);
  double gap_sum = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const double mag = std::pow(10.0, rng.uniform(-6.0, 1.0));
    const double z = rng.coin() ? mag : -mag;
    const double lam_eff = std::pow(10.0, rng.uniform(-6.0, 1.0));
    const double kappa = std::pow(10.0, rng.uniform(-2.0, 2.0));
    const double alpha = std::pow(10.0, rng.uniform(-3.0, 0.0));
    const ProxInput in{z, kappa, alpha, zero_lambda ? 0.0 : lam_eff * kappa / (2.0 * alpha)};
    const double le = in.lambda_eff();
    double closed;
    try {
      closed = prox_scalar(in, family, q);
    } catch (const std::domain_error&) {
      ++r.errors;
      continue;
    }
    // scan only the bracket, at the spacing of the full-range grid
    const auto [lo, hi] = oracle_bracket(family, z);
    const double oracle = prox_oracle_on(z, le, pen, lo, hi, 2.0 * (std::abs(z) + 2.0) / double(grid_points - 1));
    const double gap = scalar_objective(closed, z, le, family, q) - scalar_objective(oracle, z, le, family, q);
    r.max_gap = s == 0 ? gap : std::max(r.max_gap, gap);
    gap_sum += gap;
    if (family == Family::sparse && le > 0.0 && std::abs(z) <= sparse_dead_zone(le, q)) {
      ++r.dead_zone_samples;
      if (!is_positive_zero(closed)) ++r.dead_zone_nonzero;
    }
    ++r.samples;
  }
  r.mean_gap = r.samples ? gap_sum / static_cast<double>(r.samples) : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Grid cells and summaries.
// ---------------------------------------------------------------------------

struct CellSpec {
  Method method = Method::proxgen;
  Exponent q = Exponent::one;
  double lambda = 0.0;
  std::uint64_t seed = 1;
  InitSpec init;
  std::string runid;
};

struct CellResult {
  CellSpec cell;
  RunStatus status = RunStatus::ok;
  std::string message;
  std::int64_t iterations = 0;
  double final_objective = 0.0;
  double final_loss = 0.0;
  double final_stationarity = 0.0;
  double sparsity = 0.0;
  std::optional<SupportMetrics> support;
  bool ever_nonzero = false;
  std::optional<double> train_accuracy;
  std::optional<double> test_accuracy;
  std::optional<double> dense_test_accuracy;  // before hard quantization
  std::int64_t momentum_bound_violations = 0;
  double min_c4_min_eig = 0.0;
  double max_grad_norm = 0.0;
  double objective_tail_variance = 0.0;  // over the last 20% of records
  std::string rate_verdict;
};

inline const std::vector<std::string>& summary_columns() {
  static const std::vector<std::string> cols{
      "runid", "experiment", "method", "family", "q", "lambda", "seed", "init", "status", "iterations",
      "final_objective", "final_loss", "final_stationarity", "sparsity", "support_precision", "support_recall",
      "support_f1", "ever_nonzero", "train_accuracy", "test_accuracy", "dense_test_accuracy", "momentum_bound_violations",
      "min_c4_min_eig", "max_grad_norm", "objective_tail_variance", "rate_verdict", "message"};
  return cols;
}

namespace detail {

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

inline std::string short_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace detail

inline std::string summary_csv_row(const std::string& experiment, Family family, const CellResult& r) {
  auto opt = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string(); };
  const auto& c = r.cell;
  std::vector<std::string> f{
      c.runid,
      experiment,
      method_name(c.method),
      family == Family::sparse ? "sparse-lq" : "quant-lq",
      exponent_name(c.q),
      format_real(c.lambda),
      std::to_string(c.seed),
      c.init.name(),
      status_name(r.status),
      std::to_string(r.iterations),
      format_real(r.final_objective),
      format_real(r.final_loss),
      format_real(r.final_stationarity),
      format_real(r.sparsity),
      r.support ? format_real(r.support->precision) : "",
      r.support ? format_real(r.support->recall) : "",
      r.support ? format_real(r.support->f1) : "",
      r.ever_nonzero ? "1" : "0",
      opt(r.train_accuracy),
      opt(r.test_accuracy),
      opt(r.dense_test_accuracy),
      std::to_string(r.momentum_bound_violations),
      format_real(r.min_c4_min_eig),
      format_real(r.max_grad_norm),
      format_real(r.objective_tail_variance),
      r.rate_verdict,
      r.message};
  std::string s;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (i) s += ',';
    s += detail::csv_escape(f[i]);
  }
  return s;
}

inline std::string make_runid(const CellSpec& c) {
  std::string init = c.init.kind == InitSpec::Kind::zero ? "zero" : "gauss" + detail::short_real(c.init.scale);
  return method_name(c.method) + "_q" + exponent_name(c.q) + "_lam" + detail::short_real(c.lambda) + "_seed" +
         std::to_string(c.seed) + "_" + init;
}

/// Cells in a fixed order: seed, init, q, method, lambda. Combinations a
/// method cannot run are left out: prox-sgd only with q = 1 (it targets convex
/// regularizers) and subgradient never with l0.
inline std::vector<CellSpec> enumerate_cells(const ExperimentConfig& c) {
  std::vector<CellSpec> cells;
  for (auto seed : c.seeds)
    for (const auto& init : c.inits)
      for (auto q : c.qs)
        for (auto m : c.methods) {
          if (m == Method::prox_sgd && q != Exponent::one) continue;
          if (m == Method::subgradient && q == Exponent::zero) continue;
          for (double lam : c.lambda_grid) {
            CellSpec cs{m, q, lam, seed, init, {}};
            cs.runid = make_runid(cs);
            cells.push_back(cs);
          }
        }
  return cells;
}

inline ParamVector initial_point(const InitSpec& init, Index p, std::uint64_t seed) {
  if (init.kind == InitSpec::Kind::zero) return ParamVector::Zero(p);
  RngStream rng(seed, kStreamInit);
  return gaussian_params(p, init.scale, rng);
}

inline void write_records_csv(const std::string& path, const std::vector<RunRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  const auto& cols = record_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& r : records) out << record_csv_row(r) << '\n';
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

/// Shared inputs for the MLP experiments of one seed.
struct MlpSetup {
  MlpSpec spec;
  Dataset train;
  Dataset test;
};

inline MlpSetup make_mlp_setup(const ExperimentConfig& c, std::uint64_t seed) {
  MlpSetup s;
  s.spec = MlpSpec{c.mlp_input_dim, c.mlp_hidden, c.mlp_classes, c.mlp_activation, LossKind::softmax_cross_entropy};
  RngStream rng(seed, kStreamData);
  const Dataset all = generate_blobs(c.mlp_train + c.mlp_test, c.mlp_input_dim, c.mlp_classes, c.mlp_separation, rng);
  auto split = split_dataset(all, c.mlp_test);
  s.train = std::move(split.first);
  s.test = std::move(split.second);
  return s;
}

/// Dense adam-ema training with lambda = 0, the starting point of quantization.
inline ParamVector pretrain_mlp(const ExperimentConfig& c, const MlpProblem& problem, const ParamVector& theta0,
                                std::uint64_t seed) {
  if (c.pretrain_iters == 0) return theta0;
  StepperConfig pc;
  pc.method = Method::proxgen;
  pc.step = StepSchedule::constant(c.pretrain_alpha);
  pc.momentum = MomentumSchedule::constant(0.9);
  pc.regularizer = RegularizerSpec{Family::sparse, Exponent::one, LambdaSchedule::constant(0.0)};
  pc.precond = PrecondKind::adam_ema;
  pc.beta = c.beta;
  pc.delta = c.delta;
  pc.batch_size = c.batch_size;
  pc.max_iters = c.pretrain_iters;
  RunOptions opt;
  opt.diagnostics_every = c.pretrain_iters;
  opt.variance_batches = 0;
  auto res = run(problem, pc, theta0, RngStream(seed, kStreamPretrain), opt);
  if (res.status != RunStatus::ok) throw DivergenceError("pretraining diverged: " + res.message);
  return res.theta;
}

inline double tail_variance(const std::vector<RunRecord>& recs) {
  if (recs.size() < 2) return 0.0;
  const std::size_t start = recs.size() - std::max<std::size_t>(2, recs.size() / 5);
  double mean = 0.0;
  for (std::size_t i = start; i < recs.size(); ++i) mean += recs[i].objective;
  const double m = static_cast<double>(recs.size() - start);
  mean /= m;
  double s = 0.0;
  for (std::size_t i = start; i < recs.size(); ++i) s += (recs[i].objective - mean) * (recs[i].objective - mean);
  return s / (m - 1.0);
}

inline void fill_from_run(CellResult& out, const RunResult& res) {
  out.status = res.status;
  out.message = res.message;
  out.iterations = res.iterations;
  out.ever_nonzero = res.ever_nonzero;
  out.momentum_bound_violations = res.momentum_bound_violations;
  out.sparsity = sparsity(res.theta);
  if (!res.records.empty()) {
    const auto& last = res.records.back();
    out.final_objective = last.objective;
    out.final_loss = last.loss;
    out.final_stationarity = last.stationarity_bound;
    out.max_grad_norm = last.max_grad_norm;
    out.min_c4_min_eig = last.c4_min_eig;
    for (const auto& r : res.records) out.min_c4_min_eig = std::min(out.min_c4_min_eig, r.c4_min_eig);
  }
  out.objective_tail_variance = tail_variance(res.records);
  if (res.records.size() >= 10) {
    std::vector<double> b;
    b.reserve(res.records.size());
    for (const auto& r : res.records) b.push_back(r.stationarity_bound);
    out.rate_verdict = verdict_name(rate_trend(b).verdict);
  }
}

/// Runs one grid cell. Data and initial point depend only on the seed.
inline CellResult run_cell(const ExperimentConfig& c, const CellSpec& cell, const std::string& records_dir) {
  CellResult out;
  out.cell = cell;
  const StepperConfig sc = c.stepper(cell.method, cell.q, cell.lambda);
  RunOptions opt;
  opt.diagnostics_every = c.diagnostics_every;
  opt.variance_batches = c.variance_batches;
  RunResult res;

  if (c.experiment == "lasso-recovery") {
    RngStream data_rng(cell.seed, kStreamData);
    const LassoInstance inst = generate_lasso(c.lasso_p, c.lasso_n, c.lasso_k, c.lasso_noise, data_rng);
    const LassoProblem problem = inst.problem();
    opt.true_support = inst.support;
    res = run(problem, sc, initial_point(cell.init, c.lasso_p, cell.seed), RngStream(cell.seed, kStreamBatches), opt);
    fill_from_run(out, res);
    out.support = support_metrics(res.theta, inst.support);
  } else {
    const MlpSetup setup = make_mlp_setup(c, cell.seed);
    const MlpProblem problem(setup.spec, setup.train);
    ParamVector theta0 = initial_point(cell.init, setup.spec.param_count(), cell.seed);
    if (c.experiment == "quant-mlp") theta0 = pretrain_mlp(c, problem, theta0, cell.seed);
    res = run(problem, sc, theta0, RngStream(cell.seed, kStreamBatches), opt);
    fill_from_run(out, res);
    out.train_accuracy = mlp_accuracy(setup.spec, res.theta, setup.train);
    out.test_accuracy = mlp_accuracy(setup.spec, res.theta, setup.test);
    if (res.theta_before_quantize) out.dense_test_accuracy = mlp_accuracy(setup.spec, *res.theta_before_quantize, setup.test);
  }
  if (c.write_records && !records_dir.empty())
    write_records_csv(records_dir + "/records_" + cell.runid + ".csv", res.records);
  return out;
}

struct ExperimentOutcome {
  std::vector<CellResult> cells;
  std::vector<FuzzReport> fuzz;
  std::size_t failed_cells = 0;
};

inline std::string timestamp_line() {
  const std::time_t now = std::time(nullptr);
  char buf[64];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return std::string("# generated ") + buf;
}

inline void write_summary(const std::string& path, const ExperimentConfig& c, const ExperimentOutcome& o) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << timestamp_line() << '\n';
  if (c.experiment == "prox-fuzz") {
    out << "operator,family,q,lambda_zero,samples,max_gap,mean_gap,dead_zone_samples,dead_zone_nonzero,errors\n";
    for (const auto& f : o.fuzz)
      out << f.op << ',' << (f.family == Family::sparse ? "sparse-lq" : "quant-lq") << ',' << exponent_name(f.q)
          << ',' << (f.zero_lambda_row ? 1 : 0) << ',' << f.samples << ',' << format_real(f.max_gap) << ','
          << format_real(f.mean_gap) << ',' << f.dead_zone_samples << ',' << f.dead_zone_nonzero << ',' << f.errors
          << '\n';
  } else {
    const auto& cols = summary_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << '\n';
    for (const auto& r : o.cells) out << summary_csv_row(c.experiment, c.family, r) << '\n';
  }
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

/// Runs the whole grid with up to `jobs` worker threads, then writes
/// summary.csv into c.output_dir. Cell failures are recorded, not thrown.
inline ExperimentOutcome run_experiment(const ExperimentConfig& c, unsigned jobs = 1,
                                        std::function<void(const std::string&)> log = {}) {
  c.validate();
  std::filesystem::create_directories(c.output_dir);
  ExperimentOutcome o;

  if (c.experiment == "prox-fuzz") {
    RngStream rng(c.seeds.front(), kStreamFuzz);
    for (Family fam : {Family::sparse, Family::quant})
      for (Exponent q : c.qs) {
        o.fuzz.push_back(fuzz_operator(fam, q, c.fuzz_samples, rng));
        if (log) log(o.fuzz.back().op + " q=" + exponent_name(q) + " max_gap=" + format_real(o.fuzz.back().max_gap));
      }
    for (Family fam : {Family::sparse, Family::quant})
      for (Exponent q : c.qs) o.fuzz.push_back(fuzz_operator(fam, q, 100, rng, true));
    write_summary(c.output_dir + "/summary.csv", c, o);
    return o;
  }

  const auto cells = enumerate_cells(c);
  o.cells.resize(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      CellResult r;
      try {
        r = run_cell(c, cells[i], c.output_dir);
      } catch (const std::exception& e) {
        r.cell = cells[i];
        r.status = RunStatus::failed;
        r.message = e.what();
      }
      o.cells[i] = std::move(r);
      if (log) {
        std::lock_guard<std::mutex> lock(log_mutex);
        log(cells[i].runid + ": " + status_name(o.cells[i].status));
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(cells.size())));
  std::vector<std::thread> pool;
  for (unsigned k = 1; k < n; ++k) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  for (const auto& r : o.cells)
    if (r.status != RunStatus::ok) ++o.failed_cells;
  write_summary(c.output_dir + "/summary.csv", c, o);
  return o;
}

}  // namespace proxgen
