#include "proxgen/optim.hpp"
#include "proxgen/problems.hpp"
#include "proxgen/run.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

using namespace proxgen;

namespace {

// |a - n| / max(|a|, |n|, floor). The floor keeps near-zero coordinates, where
// both values are rounding noise, from dominating.
double rel_err(double a, double n, double floor = 1e-4) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

ParamVector central_difference(const Problem& prob, const ParamVector& theta, std::span<const std::size_t> batch,
                               double h) {
  ParamVector out(theta.size());
  ParamVector t = theta;
  for (Index i = 0; i < theta.size(); ++i) {
    t[i] = theta[i] + h;
    const double fp = prob.minibatch_loss(t, batch);
    t[i] = theta[i] - h;
    const double fm = prob.minibatch_loss(t, batch);
    t[i] = theta[i];
    out[i] = (fp - fm) / (2.0 * h);
  }
  return out;
}

MlpProblem blob_problem(Activation act, std::uint64_t seed, std::size_t n = 64) {
  RngStream rng(seed, 0);
  Dataset d = generate_blobs(n, 5, 3, 3.0, rng);
  return MlpProblem(MlpSpec{5, 7, 3, act, LossKind::softmax_cross_entropy}, std::move(d));
}

}  // namespace

TEST(Lasso, InstanceShape) {
  RngStream rng(1, 0);
  const auto inst = generate_lasso(500, 100, 10, 0.05, rng);
  EXPECT_EQ(inst.X.rows(), 100);
  EXPECT_EQ(inst.X.cols(), 500);
  ASSERT_EQ(inst.support.size(), 10u);
  EXPECT_TRUE(std::is_sorted(inst.support.begin(), inst.support.end()));
  int nonzero = 0;
  for (Index j = 0; j < 500; ++j)
    if (inst.theta_star[j] != 0.0) {
      ++nonzero;
      EXPECT_EQ(std::abs(inst.theta_star[j]), 1.0);
      EXPECT_TRUE(std::binary_search(inst.support.begin(), inst.support.end(), j));
    }
  EXPECT_EQ(nonzero, 10);
  const Eigen::VectorXd resid = inst.y - inst.X * inst.theta_star;
  EXPECT_NEAR(std::sqrt(resid.squaredNorm() / 100.0), 0.05, 0.02);
}

TEST(Lasso, NoiselessTruthHasZeroGradient) {
  RngStream rng(2, 0);
  const auto inst = generate_lasso(40, 30, 5, 0.0, rng);
  EXPECT_LE(inst.problem().full_gradient(inst.theta_star).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Lasso, DenseBoundaryAndErrors) {
  RngStream rng(3, 0);
  const auto inst = generate_lasso(8, 200, 8, 0.1, rng);
  EXPECT_EQ(inst.support.size(), 8u);
  EXPECT_THROW(generate_lasso(8, 10, 9, 0.1, rng), ConfigError);
  EXPECT_THROW(generate_lasso(8, 10, 0, 0.1, rng), ConfigError);
}

TEST(Lasso, GeneratorIsDeterministic) {
  RngStream a(4, 0), b(4, 0);
  const auto x = generate_lasso(30, 20, 3, 0.05, a);
  const auto y = generate_lasso(30, 20, 3, 0.05, b);
  EXPECT_EQ(x.X, y.X);
  EXPECT_EQ(x.y, y.y);
  EXPECT_EQ(x.support, y.support);
}

TEST(Lasso, AnalyticGradientMatchesFiniteDifferences) {
  RngStream rng(5, 0);
  const auto inst = generate_lasso(50, 40, 5, 0.05, rng);
  const auto prob = inst.problem();
  RngStream trng(5, 1);
  for (int rep = 0; rep < 10; ++rep) {
    const ParamVector th = gaussian_params(50, 1.0, trng);
    const auto all = prob.all_indices();
    // f is quadratic, so central differences carry only rounding error
    const ParamVector fd = central_difference(prob, th, all, 0.1);
    const ParamVector g = prob.full_gradient(th);
    EXPECT_LE((g - fd).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Lasso, MinibatchOverAllIndicesEqualsFullGradient) {
  RngStream rng(6, 0);
  const auto inst = generate_lasso(30, 25, 3, 0.05, rng);
  const auto prob = inst.problem();
  RngStream trng(6, 1);
  const ParamVector th = gaussian_params(30, 1.0, trng);
  const auto all = prob.all_indices();
  EXPECT_LE((prob.minibatch_gradient(th, all) - prob.full_gradient(th)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Lasso, SmoothnessEstimateMatchesEigenvalue) {
  RngStream rng(7, 0);
  const auto inst = generate_lasso(60, 40, 3, 0.05, rng);
  const Eigen::MatrixXd H = inst.X.transpose() * inst.X / 40.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
  EXPECT_NEAR(*inst.problem().smoothness(), es.eigenvalues().maxCoeff(), 1e-6 * es.eigenvalues().maxCoeff());
}

TEST(Unbiasedness, PerSampleAndPartitionMeansEqualFullGradient) {
  RngStream rng(8, 0);
  const auto inst = generate_lasso(20, 24, 3, 0.05, rng);
  const auto lasso = inst.problem();
  const auto mlp = blob_problem(Activation::tanh, 8, 24);
  for (const Problem* prob : {static_cast<const Problem*>(&lasso), static_cast<const Problem*>(&mlp)}) {
    RngStream trng(8, 1);
    const ParamVector th = gaussian_params(prob->dim(), 0.5, trng);
    const ParamVector full = prob->full_gradient(th);
    ParamVector per = ParamVector::Zero(th.size());
    for (std::size_t i = 0; i < 24; ++i) {
      const std::size_t idx[1] = {i};
      per += prob->minibatch_gradient(th, idx);
    }
    EXPECT_LE((per / 24.0 - full).cwiseAbs().maxCoeff(), 1e-12);
    ParamVector part = ParamVector::Zero(th.size());
    std::vector<std::size_t> idx(24);
    std::iota(idx.begin(), idx.end(), 0);
    for (int b = 0; b < 4; ++b) part += prob->minibatch_gradient(th, std::span(idx).subspan(6 * b, 6));
    EXPECT_LE((part / 4.0 - full).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Mlp, ParameterCountAndLayout) {
  const MlpSpec s{4, 3, 2, Activation::tanh, LossKind::squared};
  EXPECT_EQ(s.param_count(), 3 * 5 + 2 * 4);
  EXPECT_EQ(s.b1_offset(), 12);
  EXPECT_EQ(s.w2_offset(), 15);
  EXPECT_EQ(s.b2_offset(), 21);
}

TEST(Mlp, ZeroWeightsSquaredLoss) {
  const MlpSpec s{3, 4, 2, Activation::tanh, LossKind::squared};
  Dataset d;
  d.features = Eigen::MatrixXd::Random(5, 3);
  d.targets = Eigen::MatrixXd::Random(5, 2);
  const std::vector<std::size_t> all{0, 1, 2, 3, 4};
  const ParamVector g = mlp_gradient(s, ParamVector::Zero(s.param_count()), d, all);
  const Eigen::VectorXd mean_t = d.targets.colwise().mean().transpose();
  EXPECT_LE((g.segment(s.b2_offset(), 2) + mean_t).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(g.head(s.b2_offset()), ParamVector::Zero(s.b2_offset()));
}

TEST(Mlp, TanhGradientMatchesFiniteDifferences) {
  const auto prob = blob_problem(Activation::tanh, 9);
  RngStream rng(9, 1);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const ParamVector th = gaussian_params(prob.dim(), 0.7, rng);
    const auto batch = sample_without_replacement(prob.sample_count(), 8, rng);
    const ParamVector g = prob.minibatch_gradient(th, batch);
    const ParamVector fd = central_difference(prob, th, batch, 1e-5);
    for (Index i = 0; i < th.size(); ++i) worst = std::max(worst, rel_err(g[i], fd[i]));
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(Mlp, SquaredLossGradientMatchesFiniteDifferences) {
  RngStream rng(10, 0);
  Dataset d = generate_blobs(32, 4, 2, 2.0, rng);
  d.targets = Eigen::MatrixXd::Random(32, 2);
  const MlpProblem prob(MlpSpec{4, 6, 2, Activation::tanh, LossKind::squared}, d);
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const ParamVector th = gaussian_params(prob.dim(), 0.7, rng);
    const auto batch = sample_without_replacement(32, 8, rng);
    const ParamVector g = prob.minibatch_gradient(th, batch);
    const ParamVector fd = central_difference(prob, th, batch, 1e-5);
    for (Index i = 0; i < th.size(); ++i) worst = std::max(worst, rel_err(g[i], fd[i]));
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(Mlp, ReluGradientAwayFromKinks) {
  const auto prob = blob_problem(Activation::relu, 11);
  const MlpSpec& s = prob.spec();
  RngStream rng(11, 1);
  std::size_t checked = 0, good = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const ParamVector th = gaussian_params(prob.dim(), 0.7, rng);
    const auto batch = sample_without_replacement(prob.sample_count(), 8, rng);
    // skip (theta, batch) pairs with a hidden pre-activation within 1e-4 of the kink
    bool near_kink = false;
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> W1(
        th.data(), s.hidden_dim, s.input_dim);
    for (auto i : batch) {
      const Eigen::VectorXd pre = W1 * prob.data().features.row(static_cast<Index>(i)).transpose() +
                                  th.segment(s.b1_offset(), s.hidden_dim);
      if (pre.cwiseAbs().minCoeff() < 1e-4) near_kink = true;
    }
    if (near_kink) continue;
    const ParamVector g = prob.minibatch_gradient(th, batch);
    const ParamVector fd = central_difference(prob, th, batch, 1e-6);
    for (Index i = 0; i < th.size(); ++i) {
      ++checked;
      if (rel_err(g[i], fd[i]) <= 1e-4) ++good;
    }
  }
  ASSERT_GT(checked, 0u);
  EXPECT_GE(static_cast<double>(good) / static_cast<double>(checked), 0.99);
}

TEST(Mlp, DuplicatedSampleMatchesSingle) {
  const auto prob = blob_problem(Activation::tanh, 12);
  RngStream rng(12, 1);
  const ParamVector th = gaussian_params(prob.dim(), 0.5, rng);
  const std::size_t one[1] = {3};
  const std::size_t two[2] = {3, 3};
  EXPECT_LE((prob.minibatch_gradient(th, one) - prob.minibatch_gradient(th, two)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Mlp, ShapeErrors) {
  const auto prob = blob_problem(Activation::tanh, 13);
  const std::size_t one[1] = {0};
  EXPECT_THROW(prob.minibatch_gradient(ParamVector::Zero(3), one), ConfigError);
  EXPECT_THROW(prob.minibatch_gradient(ParamVector::Zero(prob.dim()), std::span<const std::size_t>()), ConfigError);
}

TEST(Blobs, DeterministicAndValidated) {
  RngStream a(14, 0), b(14, 0);
  const auto x = generate_blobs(50, 4, 3, 5.0, a);
  const auto y = generate_blobs(50, 4, 3, 5.0, b);
  EXPECT_EQ(x.features, y.features);
  EXPECT_EQ(x.labels, y.labels);
  EXPECT_THROW(generate_blobs(0, 4, 3, 5.0, a), ConfigError);
  EXPECT_THROW(generate_blobs(10, 4, 1, 5.0, a), ConfigError);
}

TEST(Blobs, WellSeparatedDataIsLearned) {
  RngStream rng(15, 0);
  Dataset d = generate_blobs(600, 10, 4, 10.0, rng);
  const MlpSpec s{10, 16, 4, Activation::tanh, LossKind::softmax_cross_entropy};
  const MlpProblem prob(s, d);
  StepperConfig c;
  c.method = Method::proxgen;
  c.step = StepSchedule::constant(1e-2);
  c.regularizer.lambda = LambdaSchedule::constant(0.0);
  c.precond = PrecondKind::adam_ema;
  c.batch_size = 32;
  c.max_iters = 1000;
  RunOptions o;
  o.diagnostics_every = 1000;
  RngStream init(15, 1);
  const auto r = run(prob, c, gaussian_params(s.param_count(), 0.1, init), RngStream(15, 2), o);
  EXPECT_GE(mlp_accuracy(s, r.theta, d), 0.99);
}

TEST(DatasetCsv, RoundTripIsExact) {
  RngStream rng(16, 0);
  const auto d = generate_blobs(20, 3, 2, 1.0, rng);
  const auto path = (std::filesystem::temp_directory_path() / "proxgen_ds_roundtrip.csv").string();
  write_dataset_csv(path, d);
  const auto back = read_dataset_csv(path);
  EXPECT_EQ(back.features, d.features);
  EXPECT_EQ(back.labels, d.labels);
  std::remove(path.c_str());
}
