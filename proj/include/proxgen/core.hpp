#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace proxgen {

/// Flat parameter vector theta in R^p.
using ParamVector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Invalid configuration or precondition violation detected before a run starts.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A run produced a non-finite gradient or iterate.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 17 significant digits, which round-trips every double.
inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline bool all_finite(const ParamVector& v) { return v.allFinite(); }

// ---------------------------------------------------------------------------
// Schedules. All are pure functions of the 1-based iteration index t.
// ---------------------------------------------------------------------------

struct StepSchedule {
  enum class Kind { constant, step_decay };

  Kind kind = Kind::constant;
  double alpha0 = 1e-3;
  double decay_factor = 1.0;
  std::vector<std::int64_t> milestones;

  static StepSchedule constant(double alpha0) {
    StepSchedule s;
    s.kind = Kind::constant;
    s.alpha0 = alpha0;
    s.validate();
    return s;
  }

  static StepSchedule step_decay(double alpha0, double factor, std::vector<std::int64_t> milestones) {
    StepSchedule s;
    s.kind = Kind::step_decay;
    s.alpha0 = alpha0;
    s.decay_factor = factor;
    s.milestones = std::move(milestones);
    s.validate();
    return s;
  }

  void validate() const {
    if (!(alpha0 > 0.0) || !std::isfinite(alpha0)) throw ConfigError("step schedule: alpha0 must be positive");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("step schedule: decay_factor must lie in (0,1]");
    if (!std::is_sorted(milestones.begin(), milestones.end()))
      throw ConfigError("step schedule: milestones must be ascending");
    if (!milestones.empty() && milestones.front() < 1) throw ConfigError("step schedule: milestones must be >= 1");
  }

  /// alpha_t = alpha0 * decay_factor^(number of milestones <= t).
  double at(std::int64_t t) const {
    if (kind == Kind::constant) return alpha0;
    const auto passed = std::upper_bound(milestones.begin(), milestones.end(), t) - milestones.begin();
    return alpha0 * std::pow(decay_factor, static_cast<double>(passed));
  }
};

struct MomentumSchedule {
  enum class Kind { constant, exponential };

  Kind kind = Kind::constant;
  double rho0 = 0.9;
  double mu = 1.0;  // exponential kind only

  static MomentumSchedule constant(double rho) {
    MomentumSchedule s;
    s.kind = Kind::constant;
    s.rho0 = rho;
    s.validate();
    return s;
  }

  static MomentumSchedule exponential(double rho0, double mu) {
    MomentumSchedule s;
    s.kind = Kind::exponential;
    s.rho0 = rho0;
    s.mu = mu;
    s.validate();
    return s;
  }

  void validate() const {
    if (!(rho0 >= 0.0 && rho0 < 1.0)) throw ConfigError("momentum schedule: rho0 must lie in [0,1)");
    if (kind == Kind::exponential && !(mu >= 0.0 && mu < 1.0))
      throw ConfigError("momentum schedule: mu must lie in [0,1)");
  }

  /// rho_t; exponential kind decays as rho0 * mu^(t-1).
  double at(std::int64_t t) const {
    if (kind == Kind::constant) return rho0;
    return rho0 * std::pow(mu, static_cast<double>(t - 1));
  }
};

struct LambdaSchedule {
  enum class Kind { constant, homotopy };

  Kind kind = Kind::constant;
  double lambda_base = 0.0;
  std::int64_t epoch_length = 1;  // homotopy only

  static LambdaSchedule constant(double lambda) {
    LambdaSchedule s;
    s.kind = Kind::constant;
    s.lambda_base = lambda;
    s.validate();
    return s;
  }

  static LambdaSchedule homotopy(double base, std::int64_t epoch_length) {
    LambdaSchedule s;
    s.kind = Kind::homotopy;
    s.lambda_base = base;
    s.epoch_length = epoch_length;
    s.validate();
    return s;
  }

  void validate() const {
    if (!(lambda_base >= 0.0) || !std::isfinite(lambda_base)) throw ConfigError("lambda schedule: lambda must be >= 0");
    if (kind == Kind::homotopy && epoch_length < 1) throw ConfigError("lambda schedule: epoch_length must be >= 1");
  }

  /// Epochs are 1-based: iterations 1..epoch_length form epoch 1.
  std::int64_t epoch(std::int64_t t) const { return (t + epoch_length - 1) / epoch_length; }

  double at(std::int64_t t) const {
    if (kind == Kind::constant) return lambda_base;
    return lambda_base * static_cast<double>(epoch(t));
  }
};

// ---------------------------------------------------------------------------
// Deterministic randomness.
//
// std::mt19937_64 and std::seed_seq are fully specified by the standard, so the
// raw 64-bit stream is portable. The distributions on top are implemented here
// because the std:: distribution algorithms are implementation-defined.
// ---------------------------------------------------------------------------

class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id = 0) : seed_(seed), stream_(stream_id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream_id), static_cast<std::uint32_t>(stream_id >> 32),
                      0x70726f78u};
    engine_.seed(seq);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_; }

  /// Independent stream sharing this seed.
  RngStream substream(std::uint64_t stream_id) const { return RngStream(seed_, stream_id); }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("RngStream::index: empty range");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal draw (Box-Muller, one variate per call).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0,1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  bool coin() { return (engine_() >> 63) != 0; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
};

/// Draws k distinct indices from [0, n) in draw order (partial Fisher-Yates).
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, RngStream& rng) {
  if (k > n) throw std::invalid_argument("sample_without_replacement: k > n");
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.index(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace proxgen
