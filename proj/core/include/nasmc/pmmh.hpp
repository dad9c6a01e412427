// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nasmc/adapt.hpp"
#include "nasmc/models.hpp"
#include "nasmc/proposals.hpp"
#include "nasmc/smc.hpp"

namespace nasmc {

/// Inverse-gamma prior on the square of a (standard-deviation) parameter.
struct InverseGamma {
  double a = 0.01;
  double b = 0.01;
};

/// log p(sigma) for sigma^2 ~ IG(a, b), including the Jacobian of the
/// sigma -> sigma^2 map. -inf for sigma <= 0.
double log_prior_std(double sigma, const InverseGamma& prior) noexcept;
double log_prior(std::span<const double> theta, std::span<const InverseGamma> priors);

struct PmmhConfig {
  long iterations = 500;
  std::vector<double> rw_scale;
  std::vector<InverseGamma> prior;
  std::vector<double> theta_init;
  SmcConfig smc;
  /// Run `readapt.iterations` adaptation iterations on the observed data at
  /// the current theta before every readapt_every-th step; 0 disables.
  long readapt_every = 0;
  AdaptConfig readapt;
  /// Adaptation at theta_init on generative data before the chain starts.
  AdaptConfig pretrain;
  /// Trace entries dropped from the summary.
  long burn_in = 0;

  /// Throws InvalidArgument when sizes disagree with `n_theta` or a scale or
  /// prior parameter is invalid.
  void validate(std::size_t n_theta) const;
};

struct TraceEntry {
  std::vector<double> theta;
  double lml_hat = 0.0;
  bool accepted = false;
};

struct PmmhChainState {
  std::vector<double> theta;
  double log_prior = 0.0;
  double lml_hat = 0.0;
  long accept_count = 0;
  /// Proposals rejected because the SMC weights degenerated.
  long degenerate_count = 0;
  std::vector<TraceEntry> trace;

  double acceptance_rate() const noexcept;
};

/// Log marginal likelihood of the observed data under a candidate model.
/// May throw DegenerateWeightsError.
using LikelihoodFn = std::function<double(const StateSpaceModel& model, const RngStream& s)>;

/// SMC estimate, with the given proposal (bootstrap when null). The proposal
/// is read at call time, so later re-adaptation is picked up.
LikelihoodFn smc_likelihood(const Matrix& x, const SmcConfig& cfg, const ProposalModel* proposal);

/// Exact Kalman LML; the model must be a LinearGaussianSsm.
LikelihoodFn kalman_likelihood(const Matrix& x);

/// One Metropolis-Hastings step. Draws come from s.fork(0) and the
/// likelihood estimate uses s.fork(1).
void pmmh_step(PmmhChainState& state, const PmmhConfig& cfg, const StateSpaceModel& base,
               const LikelihoodFn& likelihood, const RngStream& s);

struct PmmhSummary {
  double acceptance_rate = 0.0;
  long degenerate_rejections = 0;
  std::vector<std::string> names;
  std::vector<double> mean;
  std::vector<double> q05;
  std::vector<double> q50;
  std::vector<double> q95;
};

struct PmmhResult {
  PmmhChainState state;
  PmmhSummary summary;
};

/// Runs the chain. With a trainable `proposal` the chain uses it for the
/// SMC likelihood, pretraining and re-adaptation; a null proposal gives a
/// bootstrap chain. A non-null `likelihood` overrides the SMC estimator.
///
/// Streams: step i uses fork(s, kPmmh).fork(i), the initial estimate
/// fork(s, kPmmh).fork(0); pretraining uses fork(s, kAdapt).fork(0) and the
/// re-adaptation before step i fork(s, kAdapt).fork(i).
PmmhResult run_pmmh(const PmmhConfig& cfg, const StateSpaceModel& base, const Matrix& x,
                    ProposalModel* proposal, const RngStream& s,
                    const LikelihoodFn& likelihood = {});

PmmhSummary summarize_chain(const PmmhChainState& state, std::vector<std::string> names,
                            long burn_in);

/// CSV `iter,<theta names>,lml_hat,accepted`.
void write_trace_csv(std::ostream& os, const PmmhChainState& state,
                     const std::vector<std::string>& names);
/// `key = value` lines.
void write_summary(std::ostream& os, const PmmhSummary& summary);

}  // namespace nasmc
