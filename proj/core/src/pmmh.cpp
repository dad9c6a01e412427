// SPDX-License-Identifier: Apache-2.0
#include "nasmc/pmmh.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "nasmc/errors.hpp"
#include "nasmc/metrics.hpp"

namespace nasmc {

double log_prior_std(double sigma, const InverseGamma& prior) noexcept {
  if (!(sigma > 0.0)) return -std::numeric_limits<double>::infinity();
  const double v = sigma * sigma;
  const double log_ig = prior.a * std::log(prior.b) - std::lgamma(prior.a) -
                        (prior.a + 1.0) * std::log(v) - prior.b / v;
  return log_ig + std::log(2.0 * sigma);
}

double log_prior(std::span<const double> theta, std::span<const InverseGamma> priors) {
  if (theta.size() != priors.size()) throw InvalidArgument("log_prior: size mismatch");
  double acc = 0.0;
  for (std::size_t k = 0; k < theta.size(); ++k) acc += log_prior_std(theta[k], priors[k]);
  return acc;
}

void PmmhConfig::validate(std::size_t n_theta) const {
  if (iterations < 0) throw InvalidArgument("pmmh: iterations must be >= 0");
  if (rw_scale.size() != n_theta || prior.size() != n_theta || theta_init.size() != n_theta) {
    throw InvalidArgument("pmmh: rw_scale, prior and theta_init need " + std::to_string(n_theta) +
                          " entries");
  }
  for (double r : rw_scale) {
    if (!(r >= 0.0)) throw InvalidArgument("pmmh: rw_scale must be >= 0");
  }
  for (const auto& p : prior) {
    if (!(p.a > 0.0 && p.b > 0.0)) throw InvalidArgument("pmmh: prior a, b must be > 0");
  }
  for (double v : theta_init) {
    if (!(v > 0.0)) throw InvalidArgument("pmmh: theta_init must be > 0");
  }
  if (readapt_every < 0) throw InvalidArgument("pmmh: readapt_every must be >= 0");
  if (burn_in < 0) throw InvalidArgument("pmmh: burn_in must be >= 0");
  smc.validate();
}

double PmmhChainState::acceptance_rate() const noexcept {
  return trace.empty() ? 0.0
                       : static_cast<double>(accept_count) / static_cast<double>(trace.size());
}

LikelihoodFn smc_likelihood(const Matrix& x, const SmcConfig& cfg, const ProposalModel* proposal) {
  return [x, cfg, proposal](const StateSpaceModel& model, const RngStream& s) {
    if (proposal == nullptr || !proposal->variant().trainable()) {
      return run_smc(model, nullptr, x, cfg, s).lml;
    }
    ProposalSession session = proposal->session(model, false);
    return run_smc(model, &session, x, cfg, s).lml;
  };
}

LikelihoodFn kalman_likelihood(const Matrix& x) {
  return [x](const StateSpaceModel& model, const RngStream&) {
    const auto* lg = dynamic_cast<const LinearGaussianSsm*>(&model);
    if (lg == nullptr) throw UnsupportedOperation("exact likelihood needs a linear-Gaussian model");
    return kalman_filter(*lg, x).lml;
  };
}

void pmmh_step(PmmhChainState& state, const PmmhConfig& cfg, const StateSpaceModel& base,
               const LikelihoodFn& likelihood, const RngStream& s) {
  RngStream draws = s.fork(0);
  std::vector<double> cand(state.theta.size());
  bool valid = true;
  bool moved = false;
  for (std::size_t k = 0; k < cand.size(); ++k) {
    cand[k] = state.theta[k] + cfg.rw_scale[k] * draws.std_normal();
    if (!(cand[k] > 0.0)) valid = false;
    if (cand[k] != state.theta[k]) moved = true;
  }
  const double log_u = std::log(draws.uniform01());

  TraceEntry entry;
  if (!moved) {
    ++state.accept_count;
    entry = {state.theta, state.lml_hat, true};
    state.trace.push_back(std::move(entry));
    return;
  }
  if (valid) {
    const double lp = log_prior(cand, cfg.prior);
    const auto model = base.with_theta(cand);
    double lml = -std::numeric_limits<double>::infinity();
    bool degenerate = false;
    try {
      lml = likelihood(*model, s.fork(1));
    } catch (const DegenerateWeightsError&) {
      degenerate = true;
      ++state.degenerate_count;
    }
    const double log_ratio = lml + lp - state.lml_hat - state.log_prior;
    if (!degenerate && std::isfinite(lml) && log_u < log_ratio) {
      state.theta = cand;
      state.log_prior = lp;
      state.lml_hat = lml;
      ++state.accept_count;
      state.trace.push_back({state.theta, state.lml_hat, true});
      return;
    }
  }
  state.trace.push_back({state.theta, state.lml_hat, false});
}

PmmhSummary summarize_chain(const PmmhChainState& state, std::vector<std::string> names,
                            long burn_in) {
  PmmhSummary sum;
  sum.acceptance_rate = state.acceptance_rate();
  sum.degenerate_rejections = state.degenerate_count;
  sum.names = std::move(names);
  const std::size_t first =
      std::min(static_cast<std::size_t>(std::max(burn_in, 0L)), state.trace.size());
  for (std::size_t k = 0; k < sum.names.size(); ++k) {
    std::vector<double> v;
    for (std::size_t i = first; i < state.trace.size(); ++i) v.push_back(state.trace[i].theta[k]);
    if (v.empty()) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      sum.mean.push_back(nan);
      sum.q05.push_back(nan);
      sum.q50.push_back(nan);
      sum.q95.push_back(nan);
      continue;
    }
    sum.mean.push_back(summarize(v).mean);
    sum.q05.push_back(quantile(v, 0.05));
    sum.q50.push_back(quantile(v, 0.5));
    sum.q95.push_back(quantile(v, 0.95));
  }
  return sum;
}

PmmhResult run_pmmh(const PmmhConfig& cfg, const StateSpaceModel& base, const Matrix& x,
                    ProposalModel* proposal, const RngStream& s, const LikelihoodFn& likelihood) {
  cfg.validate(base.theta().size());
  const bool adaptive = proposal != nullptr && proposal->variant().trainable();
  const LikelihoodFn like = likelihood ? likelihood : smc_likelihood(x, cfg.smc, proposal);
  const RngStream chain_root = fork(s, StreamTag::kPmmh);
  const RngStream adapt_root = fork(s, StreamTag::kAdapt);

  PmmhResult res;
  PmmhChainState& st = res.state;
  st.theta = cfg.theta_init;
  st.log_prior = log_prior(st.theta, cfg.prior);
  auto init_model = base.with_theta(st.theta);

  if (adaptive && cfg.pretrain.iterations > 0) {
    AdaptConfig pre = cfg.pretrain;
    pre.source = TrainSource::kGenerative;
    pre.learn_theta = false;
    run_adaptation(pre, *init_model, *proposal, nullptr, adapt_root.fork(0));
  }
  st.lml_hat = like(*init_model, chain_root.fork(0));
  if (!std::isfinite(st.lml_hat)) throw NumericalError("pmmh: initial likelihood is not finite");

  Dataset observed;
  observed.sequences.push_back(Sequence{x, Matrix()});
  for (long i = 1; i <= cfg.iterations; ++i) {
    if (adaptive && cfg.readapt_every > 0 && cfg.readapt.iterations > 0 &&
        (i - 1) % cfg.readapt_every == 0) {
      AdaptConfig re = cfg.readapt;
      re.source = TrainSource::kDataset;
      re.learn_theta = false;
      const auto cur = base.with_theta(st.theta);
      run_adaptation(re, *cur, *proposal, &observed, adapt_root.fork(static_cast<std::uint64_t>(i)));
    }
    pmmh_step(st, cfg, base, like, chain_root.fork(static_cast<std::uint64_t>(i)));
  }
  res.summary = summarize_chain(st, base.theta_names(), cfg.burn_in);
  return res;
}

void write_trace_csv(std::ostream& os, const PmmhChainState& state,
                     const std::vector<std::string>& names) {
  os << "iter";
  for (const auto& n : names) os << ',' << n;
  os << ",lml_hat,accepted\n";
  char buf[64];
  for (std::size_t i = 0; i < state.trace.size(); ++i) {
    const auto& e = state.trace[i];
    os << (i + 1);
    for (double v : e.theta) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << ',' << buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g", e.lml_hat);
    os << ',' << buf << ',' << (e.accepted ? 1 : 0) << '\n';
  }
}

void write_summary(std::ostream& os, const PmmhSummary& s) {
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  os << "acceptance_rate = " << num(s.acceptance_rate) << '\n';
  os << "degenerate_rejections = " << s.degenerate_rejections << '\n';
  for (std::size_t k = 0; k < s.names.size(); ++k) {
    os << s.names[k] << ".mean = " << num(s.mean[k]) << '\n';
    os << s.names[k] << ".q05 = " << num(s.q05[k]) << '\n';
    os << s.names[k] << ".q50 = " << num(s.q50[k]) << '\n';
    os << s.names[k] << ".q95 = " << num(s.q95[k]) << '\n';
  }
}

}  // namespace nasmc
