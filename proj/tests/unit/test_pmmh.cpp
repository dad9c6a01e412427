// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "nasmc/dataset.hpp"
#include "nasmc/errors.hpp"
#include "nasmc/metrics.hpp"
#include "nasmc/pmmh.hpp"

namespace nasmc {
namespace {

PmmhConfig two_param_config() {
  PmmhConfig c;
  c.rw_scale = {0.3, 0.3};
  c.prior = {InverseGamma{}, InverseGamma{}};
  c.theta_init = {1.0, 1.0};
  c.smc.n_particles = 20;
  return c;
}

TEST(Prior, InverseGammaOnVarianceWithJacobian) {
  const InverseGamma p{2.0, 1.5};
  const double s = 0.8, v = s * s;
  const double expect = 2.0 * std::log(1.5) - std::lgamma(2.0) - 3.0 * std::log(v) - 1.5 / v +
                        std::log(2.0 * s);
  EXPECT_NEAR(log_prior_std(s, p), expect, 1e-12);
  EXPECT_TRUE(std::isinf(log_prior_std(0.0, p)));
  EXPECT_TRUE(std::isinf(log_prior_std(-1.0, p)));
  // Density in sigma integrates to one.
  double acc = 0.0;
  const double h = 1e-4;
  for (double x = h / 2; x < 60.0; x += h) acc += std::exp(log_prior_std(x, p)) * h;
  EXPECT_NEAR(acc, 1.0, 1e-4);
}

TEST(PmmhStep, ImprovingProposalIsAccepted) {
  const auto base = LinearGaussianSsm::scalar(0.9, 1.0, 1.0, 1.0);
  const PmmhConfig cfg = two_param_config();
  const LikelihoodFn huge = [](const StateSpaceModel&, const RngStream&) { return 1e6; };
  for (std::uint64_t i = 0; i < 20; ++i) {
    PmmhChainState st;
    st.theta = {1.0, 1.0};
    st.log_prior = log_prior(st.theta, cfg.prior);
    st.lml_hat = -1e6;
    pmmh_step(st, cfg, base, huge, RngStream(1, i));
    EXPECT_TRUE(st.trace.back().accepted) << i;
    EXPECT_EQ(st.lml_hat, 1e6);
    EXPECT_NE(st.theta, (std::vector<double>{1.0, 1.0}));
  }
}

TEST(PmmhStep, ZeroScaleRetainsEstimate) {
  const auto base = LinearGaussianSsm::scalar(0.9, 1.0, 1.0, 1.0);
  PmmhConfig cfg = two_param_config();
  cfg.rw_scale = {0.0, 0.0};
  PmmhChainState st;
  st.theta = {1.0, 2.0};
  st.lml_hat = -42.0;
  int calls = 0;
  const LikelihoodFn counting = [&](const StateSpaceModel&, const RngStream&) {
    ++calls;
    return 0.0;
  };
  for (std::uint64_t i = 0; i < 5; ++i) pmmh_step(st, cfg, base, counting, RngStream(2, i));
  EXPECT_EQ(calls, 0);
  EXPECT_EQ(st.accept_count, 5);
  EXPECT_EQ(st.lml_hat, -42.0);
  EXPECT_EQ(st.theta, (std::vector<double>{1.0, 2.0}));
}

TEST(PmmhStep, NonPositiveProposalRejectedWithoutLikelihood) {
  const auto base = LinearGaussianSsm::scalar(0.9, 1.0, 1.0, 1.0);
  PmmhConfig cfg = two_param_config();
  cfg.rw_scale = {50.0, 0.0};
  PmmhChainState st;
  st.theta = {0.01, 1.0};
  st.lml_hat = -1e9;
  std::vector<double> seen;
  const LikelihoodFn spy = [&](const StateSpaceModel& m, const RngStream&) {
    seen.push_back(m.theta()[0]);
    return 0.0;
  };
  for (std::uint64_t i = 0; i < 200; ++i) {
    pmmh_step(st, cfg, base, spy, RngStream(3, i));
    st.theta = {0.01, 1.0};
    st.lml_hat = -1e9;
  }
  for (double v : seen) EXPECT_GT(v, 0.0);
  EXPECT_GT(seen.size(), 50u);
  EXPECT_LT(seen.size(), 150u);
}

TEST(PmmhStep, DegenerateWeightsCountAsRejection) {
  const auto base = LinearGaussianSsm::scalar(0.9, 1.0, 1.0, 1.0);
  const PmmhConfig cfg = two_param_config();
  PmmhChainState st;
  st.theta = {1.0, 1.0};
  st.lml_hat = -10.0;
  const LikelihoodFn fail = [](const StateSpaceModel&, const RngStream&) -> double {
    throw DegenerateWeightsError(3);
  };
  pmmh_step(st, cfg, base, fail, RngStream(4, 0));
  EXPECT_EQ(st.degenerate_count, 1);
  EXPECT_FALSE(st.trace.back().accepted);
  EXPECT_EQ(st.theta, (std::vector<double>{1.0, 1.0}));
}

struct ExactProblem {
  LinearGaussianSsm base = LinearGaussianSsm::scalar(0.9, 1.0, 1.0, 1.0);
  Matrix x;
  PmmhConfig cfg;
  ExactProblem() {
    x = simulate(base, 50, RngStream(60, 0)).x;
    cfg.rw_scale = {0.0, 0.3};
    cfg.prior = {InverseGamma{}, InverseGamma{}};
    cfg.theta_init = {1.0, 1.0};
  }
  double log_target(double obs_std) const {
    if (!(obs_std > 0.0)) return -std::numeric_limits<double>::infinity();
    const auto m = LinearGaussianSsm::scalar(0.9, 1.0, 1.0, obs_std * obs_std);
    return kalman_filter(m, x).lml + log_prior_std(obs_std, InverseGamma{});
  }
};

// Batch-means standard error of a chain's mean.
double batch_se(const std::vector<double>& v, int batches = 50) {
  const std::size_t len = v.size() / static_cast<std::size_t>(batches);
  std::vector<double> means;
  for (int b = 0; b < batches; ++b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < len; ++i) acc += v[b * len + i];
    means.push_back(acc / static_cast<double>(len));
  }
  const auto s = summarize(means);
  return s.std / std::sqrt(static_cast<double>(batches - 1));
}

TEST(RunPmmh, ExactLikelihoodMatchesReferenceChain) {
  const ExactProblem p;
  PmmhConfig cfg = p.cfg;
  cfg.iterations = 10000;
  const PmmhResult res =
      run_pmmh(cfg, p.base, p.x, nullptr, RngStream(61, 0), kalman_likelihood(p.x));
  std::vector<double> chain;
  for (std::size_t i = 1000; i < res.state.trace.size(); ++i) {
    const double s = res.state.trace[i].theta[1];
    chain.push_back(s * s);
  }

  // Independent random-walk MH on the same target.
  RngStream rs(62, 0);
  double cur = 1.0, cur_lp = p.log_target(cur);
  std::vector<double> ref;
  for (int i = 0; i < 100000; ++i) {
    const double cand = cur + 0.3 * rs.std_normal();
    const double lp = p.log_target(cand);
    if (std::log(rs.uniform01()) < lp - cur_lp) {
      cur = cand;
      cur_lp = lp;
    }
    if (i >= 1000) ref.push_back(cur * cur);
  }
  const double se = std::hypot(batch_se(chain), batch_se(ref));
  EXPECT_LT(std::abs(summarize(chain).mean - summarize(ref).mean), 3.0 * se);
}

TEST(RunPmmh, ExactLikelihoodStationaryMatchesQuadrature) {
  const ExactProblem p;
  PmmhConfig cfg = p.cfg;
  cfg.iterations = 100000;
  const PmmhResult res =
      run_pmmh(cfg, p.base, p.x, nullptr, RngStream(63, 0), kalman_likelihood(p.x));
  const double lo = 0.05, hi = 3.0;
  const int bins = 50;
  const double width = (hi - lo) / bins;
  std::vector<double> quad(bins, 0.0), hist(bins, 0.0);
  const int sub = 40;
  double mx = -std::numeric_limits<double>::infinity();
  std::vector<double> lt(bins * sub);
  for (int k = 0; k < bins * sub; ++k) {
    lt[k] = p.log_target(lo + (k + 0.5) * width / sub);
    mx = std::max(mx, lt[k]);
  }
  double total = 0.0;
  for (int k = 0; k < bins * sub; ++k) {
    const double w = std::exp(lt[k] - mx);
    quad[k / sub] += w;
    total += w;
  }
  double count = 0.0;
  for (std::size_t i = 1000; i < res.state.trace.size(); ++i) {
    const double s = res.state.trace[i].theta[1];
    const int b = static_cast<int>((s - lo) / width);
    if (b >= 0 && b < bins) hist[b] += 1.0;
    count += 1.0;
  }
  double tv = 0.0;
  for (int b = 0; b < bins; ++b) tv += std::abs(hist[b] / count - quad[b] / total);
  EXPECT_LT(0.5 * tv, 0.1);
}

TEST(RunPmmh, TraceIsDeterministic) {
  const BenchmarkNssm base(std::sqrt(10.0), 1.0);
  const Matrix x = simulate(base, 50, RngStream(64, 0)).x;
  PmmhConfig cfg = two_param_config();
  cfg.theta_init = {3.0, 1.0};
  cfg.iterations = 50;
  const PmmhResult a = run_pmmh(cfg, base, x, nullptr, RngStream(65, 0));
  const PmmhResult b = run_pmmh(cfg, base, x, nullptr, RngStream(65, 0));
  std::ostringstream sa, sb;
  write_trace_csv(sa, a.state, base.theta_names());
  write_trace_csv(sb, b.state, base.theta_names());
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_EQ(sa.str().rfind("iter,sigma_v,sigma_w,lml_hat,accepted\n", 0), 0u);
  EXPECT_EQ(a.state.trace.size(), 50u);
}

TEST(RunPmmh, AcceptanceRateIsStrictlyBetweenZeroAndOne) {
  const BenchmarkNssm truth(std::sqrt(10.0), 1.0);
  const Matrix x = simulate(truth, 100, RngStream(66, 0)).x;
  PmmhConfig cfg;
  cfg.rw_scale = {std::sqrt(0.15), std::sqrt(0.08)};
  cfg.prior = {InverseGamma{}, InverseGamma{}};
  cfg.theta_init = {10.0, 10.0};
  cfg.smc.n_particles = 100;
  cfg.iterations = 500;
  const PmmhResult res = run_pmmh(cfg, truth, x, nullptr, RngStream(67, 0));
  EXPECT_GT(res.summary.acceptance_rate, 0.0);
  EXPECT_LT(res.summary.acceptance_rate, 1.0);
  EXPECT_EQ(res.state.trace.size(), 500u);
}

TEST(RunPmmh, ReadaptationChangesTheProposal) {
  const BenchmarkNssm truth(std::sqrt(10.0), 1.0);
  const Matrix x = simulate(truth, 30, RngStream(68, 0)).x;
  PmmhConfig cfg = two_param_config();
  cfg.theta_init = {3.0, 1.0};
  cfg.iterations = 3;
  cfg.smc.n_particles = 10;
  cfg.readapt_every = 1;
  cfg.readapt.iterations = 1;
  cfg.readapt.smc.n_particles = 10;
  cfg.readapt.optimizer.lr = 1e-2;
  cfg.pretrain.iterations = 0;
  ProposalVariant v = ProposalVariant::parse("rnn-md-f");
  v.hidden = 4;
  ProposalModel prop = ProposalModel::for_model(v, truth, RngStream(69, 0), true);
  const ProposalModel start = prop;
  run_pmmh(cfg, truth, x, &prop, RngStream(70, 0));
  EXPECT_NE(std::vector<double>(prop.params().values().begin(), prop.params().values().end()),
            std::vector<double>(start.params().values().begin(), start.params().values().end()));
}

TEST(RunPmmh, SummaryQuantilesAfterBurnIn) {
  PmmhChainState st;
  for (int i = 1; i <= 10; ++i) st.trace.push_back({{static_cast<double>(i)}, 0.0, i % 2 == 0});
  st.accept_count = 5;
  const PmmhSummary s = summarize_chain(st, {"a"}, 5);
  EXPECT_EQ(s.acceptance_rate, 0.5);
  EXPECT_EQ(s.mean[0], 8.0);
  EXPECT_EQ(s.q50[0], 8.0);
  std::ostringstream os;
  write_summary(os, s);
  EXPECT_NE(os.str().find("a.q95 = "), std::string::npos);
}

TEST(PmmhConfig, Validation) {
  PmmhConfig c = two_param_config();
  EXPECT_NO_THROW(c.validate(2));
  EXPECT_THROW(c.validate(3), InvalidArgument);
  c.prior[0].a = 0.0;
  EXPECT_THROW(c.validate(2), InvalidArgument);
  c = two_param_config();
  c.rw_scale[1] = -0.1;
  EXPECT_THROW(c.validate(2), InvalidArgument);
  c = two_param_config();
  c.theta_init[0] = 0.0;
  EXPECT_THROW(c.validate(2), InvalidArgument);
}

TEST(KalmanLikelihood, RejectsNonlinearModel) {
  const BenchmarkNssm m(1.0, 1.0);
  const auto like = kalman_likelihood(Matrix::Zero(1, 3));
  EXPECT_THROW(like(m, RngStream(1, 0)), UnsupportedOperation);
}

}  // namespace
}  // namespace nasmc
