// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "nasmc/adapt.hpp"
#include "nasmc/errors.hpp"
#include "nasmc/metrics.hpp"
#include "test_support.hpp"

namespace nasmc {
namespace {

ProposalVariant small(const char* name) {
  ProposalVariant v = ProposalVariant::parse(name);
  v.hidden = 3;
  return v;
}

SmcConfig config(std::size_t n) {
  SmcConfig c;
  c.n_particles = n;
  return c;
}

// log q of particle n at step t, replayed alone along its ancestral path.
double path_log_q(const ProposalModel& prop, const StateSpaceModel& model, const Matrix& x,
                  const Matrix& path, int T) {
  auto sess = prop.session(model);
  sess.begin_sequence(1, T);
  double lq = 0.0;
  for (int k = 1; k <= path.cols(); ++k) {
    sess.condition(k, x.col(k - 1), k > 1 ? Matrix(path.col(k - 2)) : Matrix());
    lq = sess.log_density(path.col(k - 1))(0);
  }
  return lq;
}

std::vector<double> explicit_sum(const ProposalModel& prop, const StateSpaceModel& model,
                                 const Matrix& x, const RunRecord& rec) {
  std::vector<double> total(prop.params().size(), 0.0);
  for (int t = 1; t <= rec.length(); ++t) {
    for (std::size_t n = 0; n < rec.n_particles; ++n) {
      const double w = rec.steps[t - 1].norm_w(static_cast<Eigen::Index>(n));
      const Matrix path = rec.trajectory(n, t);
      const auto g = test::numeric_gradient(
          [&](std::span<const double> v) {
            ProposalModel q = prop;
            std::copy(v.begin(), v.end(), q.params().values().begin());
            return path_log_q(q, model, x, path, rec.length());
          },
          test::values_of(prop.params()));
      for (std::size_t k = 0; k < g.size(); ++k) total[k] += w * g[k];
    }
  }
  return total;
}

void expect_matches_explicit_sum(const char* name, std::size_t N, int T, std::uint64_t seed) {
  const BenchmarkNssm model(std::sqrt(10.0), 1.0);
  ProposalModel prop = ProposalModel::for_model(small(name), model, RngStream(seed, 1));
  RngStream jit(seed, 2);
  test::jitter(prop.params(), jit, 0.3);
  const Sequence seq = simulate(model, T, RngStream(seed, 3));
  auto sess = prop.session(model, true);
  const RunRecord rec = run_smc(model, &sess, seq.x, config(N), RngStream(seed, 4));
  std::vector<double> analytic(prop.params().size(), 0.0);
  accumulate_phi_grad(rec, sess, analytic);
  EXPECT_LT(test::max_rel_error(analytic, explicit_sum(prop, model, seq.x, rec)), 1e-4) << name;
}

TEST(PhiGradient, MatchesExplicitSumOracle) {
  for (std::uint64_t seed : {70u, 71u, 72u}) {
    expect_matches_explicit_sum("rnn-md-f", 3, 2, seed);
    expect_matches_explicit_sum("nn-md", 3, 2, seed);
  }
}

TEST(PhiGradient, SingleParticleIsPathLikelihoodGradient) {
  expect_matches_explicit_sum("rnn-md", 1, 4, 73);
}

TEST(PhiGradient, TapeMismatchIsStateError) {
  const BenchmarkNssm model(1.0, 1.0);
  const auto prop = ProposalModel::for_model(small("nn"), model, RngStream(1, 0));
  const Sequence seq = simulate(model, 3, RngStream(2, 0));
  auto sess = prop.session(model, true);
  const RunRecord rec = run_smc(model, &sess, seq.x, config(2), RngStream(3, 0));
  auto other = prop.session(model, true);
  std::vector<double> g(prop.params().size());
  EXPECT_THROW(accumulate_phi_grad(rec, other, g), StateError);
}

TEST(PhiGradient, ExactPosteriorIsStationary) {
  // One-step conjugate model; the gauss head is set to the exact posterior.
  const auto model = LinearGaussianSsm::scalar(0.9, 1.0, 1.0, 1.0, 0.5, 2.0);
  const Matrix x = Matrix::Constant(1, 1, 1.2);
  const KalmanResult kf = kalman_filter(model, x);
  ProposalModel prop = ProposalModel::for_model(small("nn"), model, RngStream(4, 0), true);
  ParamVector& p = prop.params();
  for (double& v : p.values()) v = 0.0;
  auto bias = p.map(p.slice_index("head.b"));
  bias(1, 0) = kf.means(0, 0);
  bias(2, 0) = softplus_inv(std::sqrt(kf.covs[0](0, 0)) - kSigmaFloor);
  const int reps = 1000;
  std::vector<double> g_mean(reps), g_std(reps);
  const auto slice = p.slice(p.slice_index("head.b"));
  for (int r = 0; r < reps; ++r) {
    auto sess = prop.session(model, true);
    const RunRecord rec = run_smc(model, &sess, x, config(10), RngStream(74, r));
    std::vector<double> g(p.size(), 0.0);
    accumulate_phi_grad(rec, sess, g);
    g_mean[r] = g[slice.offset + 1];
    g_std[r] = g[slice.offset + 2];
  }
  for (const auto* v : {&g_mean, &g_std}) {
    const auto s = summarize(*v);
    EXPECT_LT(std::abs(s.mean), 3.0 * s.std / std::sqrt(static_cast<double>(reps)));
  }
}

TEST(ThetaGradient, MatchesExactGradientWhenFilteringIsSmoothing) {
  // With A = 0 the states are independent, so filtering and smoothing
  // marginals coincide and the filtering estimator targets d LML / d theta.
  const auto model = LinearGaussianSsm::scalar(0.0, 1.0, 1.0, 0.8, 0.0, 1.0);
  const Sequence seq = simulate(model, 20, RngStream(75, 0));
  const RunRecord rec = run_smc(model, nullptr, seq.x, config(2000), RngStream(76, 0));
  std::vector<double> g(2, 0.0);
  accumulate_theta_grad(rec, model, seq.x, g);
  const double s = std::sqrt(0.8), h = 1e-6;
  auto lml_at = [&](double obs_std) {
    const auto m = LinearGaussianSsm::scalar(0.0, 1.0, 1.0, obs_std * obs_std, 0.0, 1.0);
    return kalman_filter(m, seq.x).lml;
  };
  const double exact = (lml_at(s + h) - lml_at(s - h)) / (2.0 * h);
  EXPECT_LT(std::abs(g[1] - exact), 0.1 * std::abs(exact)) << g[1] << " vs " << exact;
}

TEST(ThetaGradient, ConvergesToFilteringExpectation) {
  // Large-N limit of the estimator for the observation scale: the filtering
  // expectation of d/ds log N(x_t; c z_t, s^2), from Kalman moments.
  const auto model = LinearGaussianSsm::scalar(0.9, 1.0, 1.0, 1.0, 0.0, 1.0);
  const Sequence seq = simulate(model, 20, RngStream(77, 0));
  const KalmanResult kf = kalman_filter(model, seq.x);
  double expect = 0.0;
  for (int t = 0; t < 20; ++t) {
    const double e = seq.x(0, t) - kf.means(0, t);
    expect += e * e + kf.covs[t](0, 0) - 1.0;
  }
  const RunRecord rec = run_smc(model, nullptr, seq.x, config(2000), RngStream(78, 0));
  std::vector<double> g(2, 0.0);
  accumulate_theta_grad(rec, model, seq.x, g);
  EXPECT_LT(std::abs(g[1] - expect), 0.1 * std::abs(expect)) << g[1] << " vs " << expect;
}

TEST(ThetaGradient, SingleParticleIsCompleteDataGradient) {
  const BenchmarkNssm model(1.5, 0.7);
  const Sequence seq = simulate(model, 6, RngStream(79, 0));
  const RunRecord rec = run_smc(model, nullptr, seq.x, config(1), RngStream(80, 0));
  std::vector<double> g(2, 0.0);
  accumulate_theta_grad(rec, model, seq.x, g);
  const Matrix path = rec.trajectory(0);
  auto complete = [&](double sv, double sw) {
    const BenchmarkNssm m(sv, sw);
    double acc = 0.0;
    for (int t = 1; t <= 6; ++t) {
      if (t > 1) acc += m.log_trans(path.col(t - 2), path.col(t - 1), t);
      acc += m.log_obs(path.col(t - 1), seq.x.col(t - 1), t);
    }
    return acc;
  };
  const double h = 1e-6;
  EXPECT_NEAR(g[0], (complete(1.5 + h, 0.7) - complete(1.5 - h, 0.7)) / (2 * h), 1e-5);
  EXPECT_NEAR(g[1], (complete(1.5, 0.7 + h) - complete(1.5, 0.7 - h)) / (2 * h), 1e-5);
}

class OpaqueModel final : public StateSpaceModel {
 public:
  std::string name() const override { return "opaque"; }
  std::size_t state_dim() const override { return 1; }
  std::size_t obs_dim() const override { return 1; }
  void init_moments(VecRef mean, VecRef std) const override {
    mean.setZero();
    std.setOnes();
  }
  void trans_moments(const ConstVecRef& z_prev, int, VecRef mean, VecRef std) const override {
    mean = z_prev;
    std.setOnes();
  }
  void obs_moments(const ConstVecRef& z, int, VecRef mean, VecRef std) const override {
    mean = z;
    std.setOnes();
  }
  std::vector<double> theta() const override { return {}; }
  std::vector<std::string> theta_names() const override { return {}; }
  std::unique_ptr<StateSpaceModel> with_theta(std::span<const double>) const override {
    return std::make_unique<OpaqueModel>();
  }
};

TEST(ThetaGradient, ModelWithoutGradientIsUnsupported) {
  const OpaqueModel model;
  const Sequence seq = simulate(model, 3, RngStream(1, 0));
  const RunRecord rec = run_smc(model, nullptr, seq.x, config(2), RngStream(2, 0));
  std::vector<double> g;
  EXPECT_THROW(accumulate_theta_grad(rec, model, seq.x, g), UnsupportedOperation);
  AdaptConfig cfg;
  cfg.learn_theta = true;
  ProposalModel prop = ProposalModel::for_model(ProposalVariant{}, model, RngStream(1, 0));
  EXPECT_THROW(run_adaptation(cfg, model, prop, nullptr, RngStream(3, 0)), UnsupportedOperation);
}

TEST(ClipGlobalNorm, ScalesOnlyAboveThreshold) {
  std::vector<double> g = {3.0, 4.0};
  EXPECT_EQ(clip_global_norm(g, 10.0), 5.0);
  EXPECT_EQ(g[0], 3.0);
  EXPECT_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g[0], 0.6, 1e-15);
  EXPECT_NEAR(g[1], 0.8, 1e-15);
}

TEST(RunAdaptation, ZeroLearningRateKeepsParameters) {
  const BenchmarkNssm model(std::sqrt(10.0), 1.0);
  ProposalModel prop = ProposalModel::for_model(small("rnn-md-f"), model, RngStream(5, 0));
  const auto before = test::values_of(prop.params());
  AdaptConfig cfg;
  cfg.iterations = 3;
  cfg.T = 20;
  cfg.smc.n_particles = 10;
  cfg.optimizer.lr = 0.0;
  const AdaptResult r = run_adaptation(cfg, model, prop, nullptr, RngStream(6, 0));
  EXPECT_EQ(test::values_of(prop.params()), before);
  ASSERT_EQ(r.history.size(), 3u);
  for (const auto& d : r.history) {
    EXPECT_GT(d.mean_ess, 0.0);
    EXPECT_TRUE(std::isfinite(d.lml));
    EXPECT_GT(d.grad_norm_phi, 0.0);
  }
}

double frozen_objective(const ProposalModel& prop, const StateSpaceModel& model, const Matrix& x,
                        const RunRecord& rec) {
  auto sess = prop.session(model, true);
  sess.begin_sequence(rec.n_particles, rec.length());
  double total = 0.0;
  for (int t = 1; t <= rec.length(); ++t) {
    const SmcStep& step = rec.steps[t - 1];
    Matrix z_prev;
    if (t > 1) {
      if (step.resampled) sess.reorder(step.ancestors);
      z_prev = rec.parent_states(t);
    }
    sess.condition(t, x.col(t - 1), z_prev);
    total += sess.log_density(step.z).dot(step.norm_w);
  }
  return total;
}

TEST(RunAdaptation, SmallStepIncreasesFrozenObjective) {
  const BenchmarkNssm model(std::sqrt(10.0), 1.0);
  for (const char* name : {"nn-md", "rnn-md-f"}) {
    ProposalModel prop = ProposalModel::for_model(small(name), model, RngStream(7, 0));
    const ProposalModel before = prop;
    AdaptConfig cfg;
    cfg.iterations = 1;
    cfg.T = 15;
    cfg.smc.n_particles = 20;
    cfg.optimizer.lr = 1e-4;
    const RngStream s(8, 0);
    run_adaptation(cfg, model, prop, nullptr, s);
    // Rebuild the exact sample set the iteration used.
    const RngStream it = fork(s, StreamTag::kAdapt).fork(1);
    const Sequence seq = simulate_dataset(model, 1, 15, it.fork(0)).sequences[0];
    auto sess = before.session(model);
    const RunRecord rec = run_smc(model, &sess, seq.x, cfg.smc, it.fork(1).fork(0));
    EXPECT_GT(frozen_objective(prop, model, seq.x, rec),
              frozen_objective(before, model, seq.x, rec))
        << name;
  }
}

TEST(RunAdaptation, OnlineModeUpdatesEveryStep) {
  const BenchmarkNssm model(std::sqrt(10.0), 1.0);
  ProposalModel prop = ProposalModel::for_model(small("rnn-md-f"), model, RngStream(9, 0));
  const auto before = test::values_of(prop.params());
  AdaptConfig cfg;
  cfg.mode = AdaptMode::kOnline;
  cfg.iterations = 1;
  cfg.T = 10;
  cfg.smc.n_particles = 10;
  cfg.optimizer.lr = 1e-3;
  const AdaptResult r = run_adaptation(cfg, model, prop, nullptr, RngStream(10, 0));
  EXPECT_TRUE(r.history[0].lml_approximate);
  EXPECT_NE(test::values_of(prop.params()), before);
}

TEST(RunAdaptation, DatasetSourceNeedsData) {
  const BenchmarkNssm model(std::sqrt(10.0), 1.0);
  ProposalModel prop = ProposalModel::for_model(small("nn"), model, RngStream(11, 0));
  AdaptConfig cfg;
  cfg.source = TrainSource::kDataset;
  EXPECT_THROW(run_adaptation(cfg, model, prop, nullptr, RngStream(12, 0)), InvalidArgument);
  const Dataset data = simulate_dataset(model, 2, 10, RngStream(13, 0));
  cfg.iterations = 2;
  cfg.smc.n_particles = 5;
  EXPECT_EQ(run_adaptation(cfg, model, prop, &data, RngStream(12, 0)).history.size(), 2u);
}

struct GradStats {
  MetricSummary sigma_v;
  MetricSummary sigma_w;
};

GradStats theta_grad_stats(double sigma_w, int reps) {
  const BenchmarkNssm truth(std::sqrt(10.0), 1.0);
  const BenchmarkNssm model(std::sqrt(10.0), sigma_w);
  std::vector<double> gv, gw;
  for (int r = 0; r < reps; ++r) {
    const Sequence seq = simulate(truth, 100, RngStream(90, r));
    const RunRecord rec = run_smc(model, nullptr, seq.x, config(1000), RngStream(91, r));
    std::vector<double> g(2, 0.0);
    accumulate_theta_grad(rec, model, seq.x, g);
    gv.push_back(g[0] / 100.0);
    gw.push_back(g[1] / 100.0);
  }
  return {summarize(gv), summarize(gw)};
}

TEST(ThetaGradient, StationaryAtDataGeneratingValues) {
  const int reps = 40;
  const GradStats s = theta_grad_stats(1.0, reps);
  for (const auto* m : {&s.sigma_v, &s.sigma_w}) {
    EXPECT_LT(std::abs(m->mean), 3.0 * m->std / std::sqrt(static_cast<double>(reps)));
  }
}

TEST(ThetaGradient, PointsBackTowardTruth) {
  const int reps = 40;
  const GradStats s = theta_grad_stats(1.75, reps);
  EXPECT_LT(s.sigma_w.mean, -3.0 * s.sigma_w.std / std::sqrt(static_cast<double>(reps)));
}

TEST(RunAdaptation, LearnThetaRebuildsModel) {
  const BenchmarkNssm start(std::sqrt(10.0), 2.0);
  ProposalModel prop = ProposalModel::for_model(ProposalVariant{}, start, RngStream(15, 0));
  AdaptConfig cfg;
  cfg.learn_theta = true;
  cfg.iterations = 3;
  cfg.T = 50;
  cfg.smc.n_particles = 20;
  cfg.theta_optimizer.lr = 0.05;
  std::vector<double> seen;
  const AdaptResult r = run_adaptation(
      cfg, start, prop, nullptr, RngStream(16, 0),
      [&](const IterationDiagnostics& d, const ProposalModel&, const StateSpaceModel& m) {
        EXPECT_GT(d.grad_norm_theta, 0.0);
        seen.push_back(m.theta()[1]);
      });
  ASSERT_EQ(seen.size(), 3u);
  EXPECT_NE(seen.back(), 2.0);
  EXPECT_EQ(r.model->theta()[1], seen.back());
  EXPECT_NEAR(std::abs(seen[0] - 2.0), 0.05, 1e-3);
}

TEST(AdaptConfig, Validation) {
  AdaptConfig cfg;
  cfg.minibatch = 0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg.minibatch = 1;
  cfg.optimizer.lr = -1.0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  EXPECT_EQ(parse_adapt_mode("online"), AdaptMode::kOnline);
  EXPECT_EQ(parse_train_source("dataset"), TrainSource::kDataset);
  EXPECT_THROW(parse_adapt_mode("offline"), InvalidArgument);
}

}  // namespace
}  // namespace nasmc
