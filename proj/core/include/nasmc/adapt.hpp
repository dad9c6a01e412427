// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "nasmc/dataset.hpp"
#include "nasmc/models.hpp"
#include "nasmc/nnet.hpp"
#include "nasmc/proposals.hpp"
#include "nasmc/smc.hpp"

namespace nasmc {

enum class AdaptMode { kBatch, kOnline };
enum class TrainSource { kGenerative, kDataset };

AdaptMode parse_adapt_mode(std::string_view text);
TrainSource parse_train_source(std::string_view text);

struct AdaptConfig {
  AdaptMode mode = AdaptMode::kBatch;
  std::size_t minibatch = 1;
  long iterations = 200;
  SmcConfig smc;
  AdamConfig optimizer;
  /// Learning rate for theta when learn_theta is on.
  AdamConfig theta_optimizer;
  /// Global L2 clip applied to each normalised gradient; <= 0 disables.
  double clip_norm = 10.0;
  TrainSource source = TrainSource::kGenerative;
  /// Sequence length for generative training data.
  int T = 200;
  bool learn_theta = false;
  /// Lower bound applied to theta after each update.
  double theta_floor = 1e-4;

  /// Throws InvalidArgument.
  void validate() const;
};

/// grad += sum_t sum_n normw_t(n) d log q(z_t^n | history) / d phi, using the
/// filtering weights of each step as constants. The session must be the
/// recording session that produced `rec`.
void accumulate_phi_grad(const RunRecord& rec, const ProposalSession& session,
                         std::span<double> grad);

/// grad += sum_t sum_n normw_t(n) d/dtheta [log p(z_t^n | parent) + log p(x_t | z_t^n)].
/// Throws UnsupportedOperation when the model has no theta gradient.
void accumulate_theta_grad(const RunRecord& rec, const StateSpaceModel& model, const Matrix& x,
                           std::span<double> grad);

/// Scales `grad` down to L2 norm `max_norm` when it exceeds it. Returns the
/// norm before clipping.
double clip_global_norm(std::span<double> grad, double max_norm);

struct IterationDiagnostics {
  long iter = 0;
  double mean_ess = 0.0;
  double lml = 0.0;
  double grad_norm_phi = 0.0;
  double grad_norm_theta = 0.0;
  /// Online mode changes the proposal mid-sequence, so its LML is not an
  /// unbiased estimate.
  bool lml_approximate = false;
};

struct AdaptResult {
  std::vector<IterationDiagnostics> history;
  /// Final model (a copy of the input unless learn_theta).
  std::unique_ptr<StateSpaceModel> model;
};

using IterationCallback = std::function<void(const IterationDiagnostics&, const ProposalModel&,
                                             const StateSpaceModel&)>;

/// Stochastic-gradient adaptation of `proposal` (and optionally theta).
///
/// Iteration i uses root r = fork(s, kAdapt).fork(i): training data is drawn
/// from r.fork(0) and SMC for minibatch entry j runs on r.fork(1).fork(j).
/// `data` is required when cfg.source is kDataset.
AdaptResult run_adaptation(const AdaptConfig& cfg, const StateSpaceModel& model,
                           ProposalModel& proposal, const Dataset* data, const RngStream& s,
                           const IterationCallback& callback = {});

}  // namespace nasmc
