#pragma once

#include "proxgen/core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace proxgen {

/// Smooth empirical loss f(theta) = (1/n) sum_i f_i(theta) with minibatch access.
/// Implementations are immutable after construction and safe to share across threads.
class Problem {
 public:
  virtual ~Problem() = default;

  virtual Index dim() const = 0;
  virtual std::size_t sample_count() const = 0;

  /// Gradient of the mean loss over the given samples.
  virtual ParamVector minibatch_gradient(const ParamVector& theta, std::span<const std::size_t> batch) const = 0;
  virtual double minibatch_loss(const ParamVector& theta, std::span<const std::size_t> batch) const = 0;

  virtual ParamVector full_gradient(const ParamVector& theta) const {
    const auto all = all_indices();
    return minibatch_gradient(theta, all);
  }
  virtual double full_loss(const ParamVector& theta) const {
    const auto all = all_indices();
    return minibatch_loss(theta, all);
  }

  /// Lipschitz constant of the full gradient, when it is known.
  virtual std::optional<double> smoothness() const { return std::nullopt; }

  std::vector<std::size_t> all_indices() const {
    std::vector<std::size_t> idx(sample_count());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
  }
};

// ---------------------------------------------------------------------------
// Sparse linear regression
// ---------------------------------------------------------------------------

/// lambda_max(X^T X / n) by power iteration.
inline double estimate_smoothness(const Eigen::MatrixXd& X, int iterations = 500) {
  const double n = static_cast<double>(X.rows());
  Eigen::VectorXd v = Eigen::VectorXd::Ones(X.cols()).normalized();
  double estimate = 0.0;
  for (int i = 0; i < iterations; ++i) {
    Eigen::VectorXd w = X.transpose() * (X * v) / n;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    estimate = v.dot(w);
    v = w / norm;
  }
  return estimate;
}

/// f(theta) = (1/2n) ||X theta - y||^2.
class LassoProblem final : public Problem {
 public:
  LassoProblem(Eigen::MatrixXd X, Eigen::VectorXd y) : X_(std::move(X)), y_(std::move(y)) {
    if (X_.rows() != y_.size() || X_.rows() == 0) throw ConfigError("LassoProblem: X rows must match y and be > 0");
    smoothness_ = estimate_smoothness(X_);
  }

  Index dim() const override { return X_.cols(); }
  std::size_t sample_count() const override { return static_cast<std::size_t>(X_.rows()); }

  ParamVector minibatch_gradient(const ParamVector& theta, std::span<const std::size_t> batch) const override {
    ParamVector g = ParamVector::Zero(X_.cols());
    for (auto i : batch) {
      const auto row = X_.row(static_cast<Index>(i));
      g += (row.dot(theta) - y_[static_cast<Index>(i)]) * row.transpose();
    }
    return g / static_cast<double>(batch.size());
  }

  double minibatch_loss(const ParamVector& theta, std::span<const std::size_t> batch) const override {
    double s = 0.0;
    for (auto i : batch) {
      const double r = X_.row(static_cast<Index>(i)).dot(theta) - y_[static_cast<Index>(i)];
      s += r * r;
    }
    return 0.5 * s / static_cast<double>(batch.size());
  }

  ParamVector full_gradient(const ParamVector& theta) const override {
    return X_.transpose() * (X_ * theta - y_) / static_cast<double>(X_.rows());
  }

  double full_loss(const ParamVector& theta) const override {
    return 0.5 * (X_ * theta - y_).squaredNorm() / static_cast<double>(X_.rows());
  }

  std::optional<double> smoothness() const override { return smoothness_; }

  const Eigen::MatrixXd& design() const { return X_; }
  const Eigen::VectorXd& response() const { return y_; }

 private:
  Eigen::MatrixXd X_;
  Eigen::VectorXd y_;
  double smoothness_ = 0.0;
};

struct LassoInstance {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  ParamVector theta_star;
  std::vector<Index> support;  // ascending
  double noise_sigma = 0.0;

  LassoProblem problem() const { return LassoProblem(X, y); }
};

/// Gaussian design, k-sparse +-1 truth, y = X theta* + N(0, noise^2).
inline LassoInstance generate_lasso(Index p, Index n, Index k, double noise, RngStream& rng) {
  if (p < 1 || n < 1) throw ConfigError("generate_lasso: p and n must be >= 1");
  if (k < 1 || k > p) throw ConfigError("generate_lasso: need 1 <= k <= p");
  if (!(noise >= 0.0)) throw ConfigError("generate_lasso: noise must be >= 0");

  LassoInstance inst;
  inst.noise_sigma = noise;
  inst.X.resize(n, p);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < p; ++j) inst.X(i, j) = rng.normal();

  const auto chosen = sample_without_replacement(static_cast<std::size_t>(p), static_cast<std::size_t>(k), rng);
  inst.theta_star = ParamVector::Zero(p);
  for (auto j : chosen) {
    inst.theta_star[static_cast<Index>(j)] = rng.coin() ? 1.0 : -1.0;
    inst.support.push_back(static_cast<Index>(j));
  }
  std::sort(inst.support.begin(), inst.support.end());

  inst.y = inst.X * inst.theta_star;
  for (Index i = 0; i < n; ++i) inst.y[i] += noise * rng.normal();
  return inst;
}

// ---------------------------------------------------------------------------
// One-hidden-layer network
// ---------------------------------------------------------------------------

enum class Activation { relu, tanh };
enum class LossKind { softmax_cross_entropy, squared };

/// Parameter layout (row-major by layer, weights then bias):
///   [ W1 (hidden x input) | b1 (hidden) | W2 (output x hidden) | b2 (output) ]
struct MlpSpec {
  Index input_dim = 1;
  Index hidden_dim = 1;
  Index output_dim = 1;
  Activation activation = Activation::tanh;
  LossKind loss = LossKind::softmax_cross_entropy;

  Index param_count() const { return hidden_dim * (input_dim + 1) + output_dim * (hidden_dim + 1); }
  Index w1_offset() const { return 0; }
  Index b1_offset() const { return hidden_dim * input_dim; }
  Index w2_offset() const { return hidden_dim * (input_dim + 1); }
  Index b2_offset() const { return w2_offset() + output_dim * hidden_dim; }

  void validate() const {
    if (input_dim < 1 || hidden_dim < 1 || output_dim < 1) throw ConfigError("MlpSpec: dimensions must be >= 1");
  }
};

/// Features row per sample. Squared loss regresses onto `targets` when present,
/// otherwise onto one-hot labels.
struct Dataset {
  Eigen::MatrixXd features;
  std::vector<int> labels;
  Eigen::MatrixXd targets;

  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
};

namespace detail {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct MlpView {
  Eigen::Map<const RowMajorMatrix> W1;
  Eigen::Map<const Eigen::VectorXd> b1;
  Eigen::Map<const RowMajorMatrix> W2;
  Eigen::Map<const Eigen::VectorXd> b2;

  MlpView(const MlpSpec& s, const ParamVector& theta)
      : W1(theta.data() + s.w1_offset(), s.hidden_dim, s.input_dim),
        b1(theta.data() + s.b1_offset(), s.hidden_dim),
        W2(theta.data() + s.w2_offset(), s.output_dim, s.hidden_dim),
        b2(theta.data() + s.b2_offset(), s.output_dim) {}
};

inline double activate(double v, Activation a) { return a == Activation::relu ? std::max(v, 0.0) : std::tanh(v); }

/// Derivative written in terms of the pre-activation; relu'(0) = 0.
inline double activate_derivative(double pre, double post, Activation a) {
  if (a == Activation::relu) return pre > 0.0 ? 1.0 : 0.0;
  return 1.0 - post * post;
}

inline Eigen::VectorXd target_row(const MlpSpec& spec, const Dataset& data, std::size_t i) {
  if (data.targets.size() > 0) return data.targets.row(static_cast<Index>(i)).transpose();
  Eigen::VectorXd t = Eigen::VectorXd::Zero(spec.output_dim);
  t[data.labels[i]] = 1.0;
  return t;
}

inline void check_shapes(const MlpSpec& spec, const ParamVector& theta, const Dataset& data) {
  if (theta.size() != spec.param_count())
    throw ConfigError("mlp: theta has " + std::to_string(theta.size()) + " entries, layout needs " +
                      std::to_string(spec.param_count()));
  if (data.features.cols() != spec.input_dim) throw ConfigError("mlp: feature width does not match input_dim");
}

}  // namespace detail

/// Output logits for one sample.
inline Eigen::VectorXd mlp_forward(const MlpSpec& spec, const ParamVector& theta, const Eigen::VectorXd& x) {
  const detail::MlpView v(spec, theta);
  Eigen::VectorXd h = v.W1 * x + v.b1;
  for (Index j = 0; j < h.size(); ++j) h[j] = detail::activate(h[j], spec.activation);
  return v.W2 * h + v.b2;
}

inline double mlp_sample_loss(const MlpSpec& spec, const Eigen::VectorXd& out, const Eigen::VectorXd& target,
                              int label) {
  if (spec.loss == LossKind::squared) return 0.5 * (out - target).squaredNorm();
  const double mx = out.maxCoeff();
  const double lse = mx + std::log((out.array() - mx).exp().sum());
  return lse - out[label];
}

inline double mlp_loss(const MlpSpec& spec, const ParamVector& theta, const Dataset& data,
                       std::span<const std::size_t> batch) {
  detail::check_shapes(spec, theta, data);
  double s = 0.0;
  for (auto i : batch) {
    const Eigen::VectorXd out = mlp_forward(spec, theta, data.features.row(static_cast<Index>(i)).transpose());
    const int label = data.labels.empty() ? 0 : data.labels[i];
    s += mlp_sample_loss(spec, out, detail::target_row(spec, data, i), label);
  }
  return s / static_cast<double>(batch.size());
}

/// Backpropagated gradient of the mean loss over `batch`.
inline ParamVector mlp_gradient(const MlpSpec& spec, const ParamVector& theta, const Dataset& data,
                                std::span<const std::size_t> batch) {
  detail::check_shapes(spec, theta, data);
  if (batch.empty()) throw ConfigError("mlp_gradient: empty batch");
  const detail::MlpView v(spec, theta);
  ParamVector grad = ParamVector::Zero(theta.size());
  Eigen::Map<detail::RowMajorMatrix> gW1(grad.data() + spec.w1_offset(), spec.hidden_dim, spec.input_dim);
  Eigen::Map<Eigen::VectorXd> gb1(grad.data() + spec.b1_offset(), spec.hidden_dim);
  Eigen::Map<detail::RowMajorMatrix> gW2(grad.data() + spec.w2_offset(), spec.output_dim, spec.hidden_dim);
  Eigen::Map<Eigen::VectorXd> gb2(grad.data() + spec.b2_offset(), spec.output_dim);

  Eigen::VectorXd pre(spec.hidden_dim), h(spec.hidden_dim), out(spec.output_dim), d_out(spec.output_dim),
      d_hidden(spec.hidden_dim);
  for (auto i : batch) {
    const Eigen::VectorXd x = data.features.row(static_cast<Index>(i)).transpose();
    pre = v.W1 * x + v.b1;
    for (Index j = 0; j < h.size(); ++j) h[j] = detail::activate(pre[j], spec.activation);
    out = v.W2 * h + v.b2;

    if (spec.loss == LossKind::squared) {
      d_out = out - detail::target_row(spec, data, i);
    } else {
      const double mx = out.maxCoeff();
      d_out = (out.array() - mx).exp();
      d_out /= d_out.sum();
      d_out[data.labels[i]] -= 1.0;
    }
    gW2.noalias() += d_out * h.transpose();
    gb2 += d_out;
    d_hidden = v.W2.transpose() * d_out;
    for (Index j = 0; j < h.size(); ++j) d_hidden[j] *= detail::activate_derivative(pre[j], h[j], spec.activation);
    gW1.noalias() += d_hidden * x.transpose();
    gb1 += d_hidden;
  }
  return grad / static_cast<double>(batch.size());
}

inline int mlp_predict(const MlpSpec& spec, const ParamVector& theta, const Eigen::VectorXd& x) {
  const Eigen::VectorXd out = mlp_forward(spec, theta, x);
  Index arg = 0;
  out.maxCoeff(&arg);
  return static_cast<int>(arg);
}

/// Fraction of samples whose arg-max output equals the label.
inline double mlp_accuracy(const MlpSpec& spec, const ParamVector& theta, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (mlp_predict(spec, theta, data.features.row(static_cast<Index>(i)).transpose()) == data.labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

class MlpProblem final : public Problem {
 public:
  MlpProblem(MlpSpec spec, Dataset data) : spec_(spec), data_(std::move(data)) {
    spec_.validate();
    if (data_.size() == 0) throw ConfigError("MlpProblem: empty dataset");
    if (data_.features.cols() != spec_.input_dim) throw ConfigError("MlpProblem: feature width != input_dim");
    if (spec_.loss == LossKind::softmax_cross_entropy || data_.targets.size() == 0) {
      if (data_.labels.size() != data_.size()) throw ConfigError("MlpProblem: labels missing");
      for (int l : data_.labels)
        if (l < 0 || l >= spec_.output_dim) throw ConfigError("MlpProblem: label out of range");
    }
  }

  Index dim() const override { return spec_.param_count(); }
  std::size_t sample_count() const override { return data_.size(); }

  ParamVector minibatch_gradient(const ParamVector& theta, std::span<const std::size_t> batch) const override {
    return mlp_gradient(spec_, theta, data_, batch);
  }
  double minibatch_loss(const ParamVector& theta, std::span<const std::size_t> batch) const override {
    return mlp_loss(spec_, theta, data_, batch);
  }

  const MlpSpec& spec() const { return spec_; }
  const Dataset& data() const { return data_; }

 private:
  MlpSpec spec_;
  Dataset data_;
};

/// Gaussian init with the given scale (scale 0 gives zeros).
inline ParamVector gaussian_params(Index p, double scale, RngStream& rng) {
  ParamVector theta(p);
  for (Index i = 0; i < p; ++i) theta[i] = scale * rng.normal();
  return theta;
}

/// Isotropic unit-variance clusters around centers placed at distance
/// `separation` / sqrt(2) from the origin along random directions. Labels cycle
/// through the classes.
inline Dataset generate_blobs(std::size_t n, Index input_dim, int classes, double separation, RngStream& rng) {
  if (n == 0) throw ConfigError("generate_blobs: n must be >= 1");
  if (classes < 2) throw ConfigError("generate_blobs: need at least two classes");
  if (input_dim < 1) throw ConfigError("generate_blobs: input_dim must be >= 1");

  Eigen::MatrixXd centers(classes, input_dim);
  for (int c = 0; c < classes; ++c) {
    Eigen::VectorXd dir(input_dim);
    do {
      for (Index j = 0; j < input_dim; ++j) dir[j] = rng.normal();
    } while (dir.norm() == 0.0);
    centers.row(c) = (separation / std::sqrt(2.0)) * dir.normalized().transpose();
  }

  Dataset d;
  d.features.resize(static_cast<Index>(n), input_dim);
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % static_cast<std::size_t>(classes));
    d.labels[i] = c;
    for (Index j = 0; j < input_dim; ++j) d.features(static_cast<Index>(i), j) = centers(c, j) + rng.normal();
  }
  return d;
}

/// Splits off the last `tail` samples.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& d, std::size_t tail) {
  if (tail > d.size()) throw ConfigError("split_dataset: tail larger than dataset");
  const auto head = static_cast<Index>(d.size() - tail);
  Dataset a, b;
  a.features = d.features.topRows(head);
  b.features = d.features.bottomRows(static_cast<Index>(tail));
  a.labels.assign(d.labels.begin(), d.labels.begin() + head);
  b.labels.assign(d.labels.begin() + head, d.labels.end());
  if (d.targets.size() > 0) {
    a.targets = d.targets.topRows(head);
    b.targets = d.targets.bottomRows(static_cast<Index>(tail));
  }
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// CSV dataset exchange: one row per sample, features then the label.
// ---------------------------------------------------------------------------

inline void write_dataset_csv(const std::string& path, const Dataset& d) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (Index j = 0; j < d.features.cols(); ++j) out << "x" << j << ",";
  out << "label\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (Index j = 0; j < d.features.cols(); ++j) out << format_real(d.features(static_cast<Index>(i), j)) << ",";
    out << d.labels[i] << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": missing header");
  const auto cols = static_cast<Index>(std::count(line.begin(), line.end(), ','));
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (static_cast<Index>(row.size()) != cols + 1)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": wrong column count");
    labels.push_back(static_cast<int>(row.back()));
    row.pop_back();
    rows.push_back(std::move(row));
  }
  Dataset d;
  d.features.resize(static_cast<Index>(rows.size()), cols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (Index j = 0; j < cols; ++j) d.features(static_cast<Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
  d.labels = std::move(labels);
  return d;
}

}  // namespace proxgen
