// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nasmc/models.hpp"
#include "nasmc/nnet.hpp"
#include "nasmc/prng.hpp"
#include "nasmc/proposals.hpp"

namespace nasmc {

enum class ResampleScheme { kMultinomial, kSystematic };

/// When to resample at the start of a step t > 1.
struct ResampleTrigger {
  enum class Kind { kAlways, kEssBelow };
  Kind kind = Kind::kAlways;
  double fraction = 1.0;

  static ResampleTrigger always() noexcept { return {}; }
  static ResampleTrigger ess_below(double fraction) noexcept {
    return {Kind::kEssBelow, fraction};
  }
  bool fires(double ess, std::size_t n) const noexcept;
};

struct SmcConfig {
  std::size_t n_particles = 100;
  ResampleScheme scheme = ResampleScheme::kMultinomial;
  ResampleTrigger trigger;
  bool record_filtering_stats = true;

  /// Throws InvalidArgument.
  void validate() const;
};

ResampleScheme parse_resample_scheme(std::string_view text);
/// "always" or "ess_below:<fraction>".
ResampleTrigger parse_resample_trigger(std::string_view text);

/// Reciprocal sum of squared normalised weights.
double ess(std::span<const double> norm_w) noexcept;

/// N ancestor indices drawn from normalised weights.
std::vector<std::size_t> resample(std::span<const double> norm_w, ResampleScheme scheme,
                                  RngStream& s);

struct SmcStep {
  int t = 0;
  Matrix z;                            // D_z x N
  std::vector<std::size_t> ancestors;  // parent at step t-1 of each particle
  bool resampled = false;
  Vector log_w;                        // unnormalised
  Vector norm_w;
  double log_normalizer = 0.0;         // log p-hat(x_t | x_{1:t-1})
  double ess = 0.0;
  Vector posterior_mean;               // empty unless filtering stats are on
};

/// Everything produced by one forward pass over a sequence.
struct RunRecord {
  std::size_t n_particles = 0;
  std::vector<SmcStep> steps;
  double lml = 0.0;

  int length() const noexcept { return static_cast<int>(steps.size()); }
  /// Path z_{1:t} of particle n at step t (1-based), following ancestors.
  Matrix trajectory(std::size_t n, int t) const;
  Matrix trajectory(std::size_t n) const { return trajectory(n, length()); }
  /// State of the step t-1 parent of every step-t particle, D_z x N.
  Matrix parent_states(int t) const;
  /// D_z x T filtering means.
  Matrix posterior_means() const;
  std::vector<double> ess_trace() const;
  double mean_ess() const;
};

/// Called after each step with the record so far.
using StepObserver = std::function<void(const RunRecord&)>;

/// Runs SMC over the columns of `x`. With `session == nullptr` the model's
/// transition prior is used as the proposal (bootstrap filter).
///
/// Streams: the particle-n draw at step t uses
/// fork(s, kProposal).fork(t).fork(n); resampling before step t uses
/// fork(s, kResample).fork(t). Throws DegenerateWeightsError when every
/// weight at some step is zero.
RunRecord run_smc(const StateSpaceModel& model, ProposalSession* session, const Matrix& x,
                  const SmcConfig& cfg, const RngStream& s, const StepObserver& observer = {});

/// CSV rows `t,ess,log_incremental_normalizer,posterior_mean0..`.
void write_run_csv(std::ostream& os, const RunRecord& rec, bool header = true);

}  // namespace nasmc
