#include "proxgen/diagnostics.hpp"
#include "proxgen/optim.hpp"
#include "proxgen/run.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace proxgen;

namespace {

LassoInstance small_instance(std::uint64_t seed = 1) {
  RngStream rng(seed, 0);
  return generate_lasso(20, 30, 3, 0.05, rng);
}

StepperConfig base_config(Method m, double lambda, PrecondKind pk = PrecondKind::identity, double rho = 0.0) {
  StepperConfig c;
  c.method = m;
  c.step = StepSchedule::constant(0.05);
  c.momentum = MomentumSchedule::constant(rho);
  c.regularizer = RegularizerSpec{Family::sparse, Exponent::one, LambdaSchedule::constant(lambda)};
  c.precond = pk;
  c.batch_size = 5;
  c.max_iters = 50;
  return c;
}

ParamVector start_point(Index p, std::uint64_t seed = 3) {
  RngStream rng(seed, 1);
  return gaussian_params(p, 0.5, rng);
}

struct Stepper {
  MomentumState mom;
  PrecondState pre;
  RngStream rng;
  Stepper(const StepperConfig& c, Index p, std::uint64_t seed = 7)
      : mom(p), pre(c.precond, p, c.beta, c.delta), rng(seed, 2) {}
};

}  // namespace

TEST(StepProxGen, OneDimensionalQuadraticWithL1) {
  // f = theta^2 / 2 via a single sample x = 1, y = 0
  const LassoProblem prob(Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Zero(1));
  StepperConfig c = base_config(Method::proxgen, 1.0);
  c.step = StepSchedule::constant(0.1);
  c.delta = 1e-20;  // 1 + delta == 1
  c.batch_size = 1;
  Stepper s(c, 1);
  const auto out = step_proxgen(ParamVector::Constant(1, 2.0), prob, c, s.mom, s.pre, 1, s.rng);
  EXPECT_NEAR(out.theta_next[0], 1.7, 1e-15);
}

TEST(StepProxGen, ZeroLambdaIdentityIsSgd) {
  const auto inst = small_instance();
  const auto prob = inst.problem();
  const auto c = base_config(Method::proxgen, 0.0);
  Stepper s(c, 20);
  const ParamVector th = start_point(20);
  const auto out = step_proxgen(th, prob, c, s.mom, s.pre, 1, s.rng);
  const ParamVector expect = th.array() - 0.05 * out.g.array() / (1.0 + c.delta);
  EXPECT_TRUE(out.theta_next.isApprox(expect, 1e-15));
}

TEST(StepProxGen, ZeroLambdaAdamIsUndebiasedAdam) {
  const auto inst = small_instance();
  const auto prob = inst.problem();
  const auto c = base_config(Method::proxgen, 0.0, PrecondKind::adam_ema, 0.9);
  Stepper s(c, 20);
  ParamVector th = start_point(20);
  ParamVector m = ParamVector::Zero(20), v = ParamVector::Zero(20);
  RngStream ref_rng(7, 2);
  for (int t = 1; t <= 20; ++t) {
    const auto batch = draw_minibatch(prob.sample_count(), c.batch_size, ref_rng);
    const ParamVector g = prob.minibatch_gradient(th, batch);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g.cwiseAbs2();
    const ParamVector ref = th.array() - 0.05 * m.array() / (v.cwiseSqrt().array() + c.delta);
    th = step_proxgen(th, prob, c, s.mom, s.pre, t, s.rng).theta_next;
    ASSERT_TRUE(th.isApprox(ref, 1e-12));
  }
}

TEST(StepProxGen, DeadZoneCoordinatesAreExactZero) {
  const auto inst = small_instance();
  const auto prob = inst.problem();
  const auto c = base_config(Method::proxgen, 0.5, PrecondKind::adam_ema, 0.9);
  Stepper s(c, 20);
  ParamVector th = start_point(20);
  for (int t = 1; t <= 30; ++t) {
    const auto out = step_proxgen(th, prob, c, s.mom, s.pre, t, s.rng);
    const ParamVector hat = th.array() - out.alpha * out.m.array() / out.diag.array();
    for (Index i = 0; i < 20; ++i)
      if (std::abs(hat[i]) <= out.alpha * out.lambda / out.diag[i]) {
        ASSERT_EQ(out.theta_next[i], 0.0);
      }
    th = out.theta_next;
  }
}

TEST(StepProxGenW, ZetaZeroMatchesProxGen) {
  const auto inst = small_instance();
  const auto prob = inst.problem();
  auto a = base_config(Method::proxgen, 0.1, PrecondKind::adam_ema, 0.9);
  auto b = a;
  b.method = Method::proxgen_w;
  Stepper sa(a, 20), sb(b, 20);
  ParamVector ta = start_point(20), tb = ta;
  for (int t = 1; t <= 20; ++t) {
    ta = step_proxgen(ta, prob, a, sa.mom, sa.pre, t, sa.rng).theta_next;
    tb = step_proxgen_w(tb, prob, b, sb.mom, sb.pre, t, sb.rng).theta_next;
    ASSERT_EQ(ta, tb);
  }
}

TEST(StepProxGenW, DecoupledWeightDecaySgd) {
  const auto inst = small_instance();
  const auto prob = inst.problem();
  auto c = base_config(Method::proxgen_w, 0.0);
  c.zeta = 0.2;
  c.delta = 1e-20;
  Stepper s(c, 20);
  const ParamVector th = start_point(20);
  const auto out = step_proxgen_w(th, prob, c, s.mom, s.pre, 1, s.rng);
  const ParamVector expect = (1.0 - 0.05 * 0.2) * th - 0.05 * out.g;
  EXPECT_TRUE(out.theta_next.isApprox(expect, 1e-15));
}

TEST(StepProxSgd, AlphaOneGivesProxPoint) {
  const auto inst = small_instance();
  const auto prob = inst.problem();
  auto c = base_config(Method::prox_sgd, 0.3, PrecondKind::adam_ema, 0.9);
  c.step = StepSchedule::constant(1.0);
  Stepper s(c, 20);
  const ParamVector th = start_point(20);
  const auto out = step_prox_sgd(th, prob, c, s.mom, s.pre, 1, s.rng);
  const ParamVector point = prox_vector(th.array() - out.m.array() / out.diag.array(), out.diag, 1.0, c.regularizer, 1);
  EXPECT_TRUE(out.theta_next.isApprox(point, 1e-15));
}

TEST(StepProxSgd, ZeroInitLargeLambdaStaysZero) {
  const auto inst = small_instance();
  const auto prob = inst.problem();
  auto c = base_config(Method::prox_sgd, 1e3, PrecondKind::adam_ema, 0.9);
  c.max_iters = 200;
  const auto res = run(prob, c, ParamVector::Zero(20), RngStream(7, 2));
  EXPECT_FALSE(res.ever_nonzero);
  EXPECT_EQ(res.theta, ParamVector::Zero(20));
}

TEST(StepProxSgd, InterpolationNeverZeroesNonzeroCoordinate) {
  const auto inst = small_instance();
  const auto prob = inst.problem();
  auto c = base_config(Method::prox_sgd, 0.5, PrecondKind::adam_ema, 0.9);
  c.step = StepSchedule::constant(0.5);
  Stepper s(c, 20);
  ParamVector th = start_point(20);
  int zeroed_hat = 0;
  for (int t = 1; t <= 40; ++t) {
    const auto out = step_prox_sgd(th, prob, c, s.mom, s.pre, t, s.rng);
    const ParamVector hat = prox_vector(th.array() - out.m.array() / out.diag.array(), out.diag, 1.0, c.regularizer, t);
    for (Index i = 0; i < 20; ++i)
      if (th[i] != 0.0 && hat[i] == 0.0) {
        ++zeroed_hat;
        ASSERT_NE(out.theta_next[i], 0.0);
      }
    th = out.theta_next;
  }
  EXPECT_GT(zeroed_hat, 0);
}

TEST(StepSubgradient, PenaltySubgradientConventions) {
  const ParamVector th = (ParamVector(3) << 1.0, -2.0, 0.0).finished();
  const RegularizerSpec l1{Family::sparse, Exponent::one, LambdaSchedule::constant(1.0)};
  EXPECT_EQ(regularizer_subgradient(th, l1), (ParamVector(3) << 1.0, -1.0, 0.0).finished());
  EXPECT_NEAR(penalty_subgradient(0.01, Family::sparse, Exponent::half), 5.0, 1e-12);
  EXPECT_EQ(penalty_subgradient(0.0, Family::sparse, Exponent::half), 0.0);
  EXPECT_EQ(penalty_subgradient(0.0, Family::sparse, Exponent::two_thirds), 0.0);
}

TEST(StepSubgradient, L0IsConfigError) {
  auto c = base_config(Method::subgradient, 0.1);
  c.regularizer.q = Exponent::zero;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(StepSubgradient, UpdateFormula) {
  const auto inst = small_instance();
  const auto prob = inst.problem();
  const auto c = base_config(Method::subgradient, 0.2, PrecondKind::adam_ema, 0.9);
  Stepper s(c, 20);
  ParamVector th = start_point(20);
  th[0] = 0.0;
  const auto out = step_subgradient(th, prob, c, s.mom, s.pre, 1, s.rng);
  const ParamVector sub = regularizer_subgradient(th, c.regularizer);
  const ParamVector expect = th.array() - 0.05 * (out.m + 0.2 * sub).array() / out.diag.array();
  EXPECT_TRUE(out.theta_next.isApprox(expect, 1e-15));
}

TEST(Reductions, ZeroLambdaMethodsAgree) {
  const auto inst = small_instance();
  const auto prob = inst.problem();
  const ParamVector th0 = start_point(20);
  for (auto pk : {PrecondKind::identity, PrecondKind::adam_ema}) {
    const auto a = run(prob, base_config(Method::proxgen, 0.0, pk, 0.9), th0, RngStream(7, 2));
    const auto b = run(prob, base_config(Method::subgradient, 0.0, pk, 0.9), th0, RngStream(7, 2));
    const auto w = run(prob, base_config(Method::proxgen_w, 0.0, pk, 0.9), th0, RngStream(7, 2));
    EXPECT_LE((a.theta - b.theta).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(a.theta, w.theta);
  }
}

TEST(Reductions, ProxQuantOriginalEqualsRevisedUnderIdentity) {
  const auto inst = small_instance();
  const auto prob = inst.problem();
  auto a = base_config(Method::proxgen, 0.05);
  a.regularizer.family = Family::quant;
  a.delta = 1e-20;
  auto b = a;
  b.method = Method::proxquant_original;
  const ParamVector th0 = start_point(20);
  const auto ra = run(prob, a, th0, RngStream(7, 2));
  const auto rb = run(prob, b, th0, RngStream(7, 2));
  EXPECT_EQ(ra.theta, rb.theta);
}

TEST(StepProxQuantOriginal, RequiresQuantFamily) {
  EXPECT_THROW(base_config(Method::proxquant_original, 0.1).validate(), ConfigError);
}

TEST(HardQuantize, Signs) {
  EXPECT_EQ(hard_quantize((ParamVector(2) << 0.3, -0.7).finished()), (ParamVector(2) << 1.0, -1.0).finished());
  EXPECT_EQ(hard_quantize(ParamVector::Zero(1)), ParamVector::Ones(1));
  const ParamVector pm = (ParamVector(3) << 1.0, -1.0, 1.0).finished();
  EXPECT_EQ(hard_quantize(pm), pm);
}

TEST(StepperConfig, Validation) {
  auto c = base_config(Method::proxgen, 0.1);
  c.zeta = 0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = base_config(Method::proxgen, 0.1);
  c.hard_quantize_at = 10;
  EXPECT_THROW(c.validate(), ConfigError);
  c.regularizer.family = Family::quant;
  EXPECT_NO_THROW(c.validate());
}

TEST(Run, ZeroIterationsReturnsStart) {
  const auto inst = small_instance();
  const auto prob = inst.problem();
  auto c = base_config(Method::proxgen, 0.1);
  c.max_iters = 0;
  const ParamVector th0 = start_point(20);
  const auto r = run(prob, c, th0, RngStream(1, 2));
  EXPECT_EQ(r.theta, th0);
  EXPECT_TRUE(r.records.empty());
}

TEST(Run, Deterministic) {
  const auto inst = small_instance();
  const auto prob = inst.problem();
  auto c = base_config(Method::proxgen, 0.1, PrecondKind::adam_ema, 0.9);
  c.batch_size = prob.sample_count();
  const ParamVector th0 = start_point(20);
  const auto a = run(prob, c, th0, RngStream(1, 2));
  const auto b = run(prob, c, th0, RngStream(1, 2));
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) EXPECT_EQ(record_csv_row(a.records[i]), record_csv_row(b.records[i]));
  EXPECT_EQ(a.theta, b.theta);
}

TEST(Run, RecordsEveryInterval) {
  const auto inst = small_instance();
  const auto prob = inst.problem();
  auto c = base_config(Method::proxgen, 0.1);
  c.max_iters = 25;
  RunOptions o;
  o.diagnostics_every = 10;
  o.true_support = inst.support;
  const auto r = run(prob, c, start_point(20), RngStream(1, 2), o);
  ASSERT_EQ(r.records.size(), 3u);
  EXPECT_EQ(r.records[0].t, 10);
  EXPECT_EQ(r.records[2].t, 25);
  EXPECT_TRUE(r.records[0].support_f1.has_value());
}

TEST(Run, DivergenceKeepsPartialRecords) {
  const auto inst = small_instance();
  const auto prob = inst.problem();
  auto c = base_config(Method::proxgen, 0.0);
  c.step = StepSchedule::constant(1e3);
  c.batch_size = prob.sample_count();
  c.max_iters = 5000;
  const auto r = run(prob, c, start_point(20), RngStream(1, 2));
  EXPECT_EQ(r.status, RunStatus::diverged);
  EXPECT_FALSE(r.records.empty());
  EXPECT_TRUE(r.theta.allFinite());
}

TEST(Run, HardQuantizeFreezesAndStops) {
  const auto inst = small_instance();
  const auto prob = inst.problem();
  auto c = base_config(Method::proxgen, 0.01);
  c.regularizer.family = Family::quant;
  c.hard_quantize_at = 7;
  c.max_iters = 50;
  const auto r = run(prob, c, start_point(20), RngStream(1, 2));
  EXPECT_TRUE(r.quantized);
  EXPECT_EQ(r.iterations, 7);
  EXPECT_TRUE((r.theta.array().abs() == 1.0).all());
  EXPECT_EQ(r.records.back().t, 7);
}

TEST(Run, MonotoneDescentFullBatch) {
  const auto inst = small_instance();
  const auto prob = inst.problem();
  const double L = *prob.smoothness();
  for (auto q : {Exponent::one, Exponent::half, Exponent::zero}) {
    auto c = base_config(Method::proxgen, 0.05);
    c.regularizer.q = q;
    c.step = StepSchedule::constant((1.0 + c.delta) / (3.0 * L));
    c.batch_size = prob.sample_count();
    c.max_iters = 500;
    const auto r = run(prob, c, start_point(20), RngStream(1, 2));
    for (std::size_t i = 1; i < r.records.size(); ++i)
      ASSERT_LE(r.records[i].objective, r.records[i - 1].objective + 1e-10) << exponent_name(q) << " t=" << i;
  }
}

TEST(Run, MomentumBoundHoldsOnEveryStep) {
  const auto inst = small_instance();
  const auto prob = inst.problem();
  for (auto m : {Method::proxgen, Method::prox_sgd, Method::subgradient}) {
    auto c = base_config(m, 0.1, PrecondKind::adam_ema, 0.9);
    c.max_iters = 500;
    const auto r = run(prob, c, start_point(20), RngStream(1, 2));
    EXPECT_EQ(r.momentum_bound_violations, 0);
    for (const auto& rec : r.records) ASSERT_LE(rec.momentum_norm, rec.max_grad_norm + 1e-12);
  }
}
