// SPDX-License-Identifier: Apache-2.0
#include "nasmc/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nasmc/errors.hpp"

namespace nasmc {

AdaptMode parse_adapt_mode(std::string_view text) {
  if (text == "batch") return AdaptMode::kBatch;
  if (text == "online") return AdaptMode::kOnline;
  throw InvalidArgument("unknown adaptation mode '" + std::string(text) + "'");
}

TrainSource parse_train_source(std::string_view text) {
  if (text == "generative") return TrainSource::kGenerative;
  if (text == "dataset") return TrainSource::kDataset;
  throw InvalidArgument("unknown train source '" + std::string(text) + "'");
}

void AdaptConfig::validate() const {
  if (minibatch < 1) throw InvalidArgument("adapt: minibatch must be >= 1");
  if (iterations < 0) throw InvalidArgument("adapt: iterations must be >= 0");
  if (T < 1) throw InvalidArgument("adapt: T must be >= 1");
  if (optimizer.lr < 0.0 || theta_optimizer.lr < 0.0) {
    throw InvalidArgument("adapt: learning rates must be >= 0");
  }
  smc.validate();
}

void accumulate_phi_grad(const RunRecord& rec, const ProposalSession& session,
                         std::span<double> grad) {
  if (static_cast<int>(session.steps_recorded()) != rec.length()) {
    throw StateError("accumulate_phi_grad: session tape does not match the run");
  }
  std::vector<Vector> weights;
  weights.reserve(rec.steps.size());
  for (const auto& step : rec.steps) weights.push_back(step.norm_w);
  session.backward(weights, grad);
}

void accumulate_theta_grad(const RunRecord& rec, const StateSpaceModel& model, const Matrix& x,
                           std::span<double> grad) {
  if (!model.has_theta_grad()) {
    throw UnsupportedOperation("model '" + model.name() + "' has no theta gradient");
  }
  if (grad.size() != model.theta().size()) {
    throw InvalidArgument("accumulate_theta_grad: bad grad buffer");
  }
  if (x.cols() != rec.length()) throw InvalidArgument("accumulate_theta_grad: length mismatch");
  for (int t = 1; t <= rec.length(); ++t) {
    const SmcStep& step = rec.steps[static_cast<std::size_t>(t - 1)];
    const Matrix* prev = t > 1 ? &rec.steps[static_cast<std::size_t>(t - 2)].z : nullptr;
    for (std::size_t n = 0; n < rec.n_particles; ++n) {
      const double w = step.norm_w(static_cast<Eigen::Index>(n));
      if (w == 0.0) continue;
      const auto z = step.z.col(static_cast<Eigen::Index>(n));
      if (prev != nullptr) {
        model.accumulate_theta_grad(prev->col(static_cast<Eigen::Index>(step.ancestors[n])), z,
                                    x.col(t - 1), t, w, grad);
      } else {
        model.accumulate_theta_grad(z, z, x.col(t - 1), t, w, grad);
      }
    }
  }
}

double clip_global_norm(std::span<double> grad, double max_norm) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& g : grad) g *= scale;
  }
  return norm;
}

namespace {

// Adam descends, so feed it the negated (normalised, clipped) gradient.
double ascend(ParamVector& p, Adam& opt, std::span<const double> g, double scale, double clip) {
  auto grad = p.grad();
  for (std::size_t k = 0; k < grad.size(); ++k) grad[k] = g[k] * scale;
  const double norm = clip_global_norm(grad, clip);
  for (double& v : grad) v = -v;
  opt.step(p);
  return norm;
}

}  // namespace

AdaptResult run_adaptation(const AdaptConfig& cfg, const StateSpaceModel& model,
                           ProposalModel& proposal, const Dataset* data, const RngStream& s,
                           const IterationCallback& callback) {
  cfg.validate();
  if (cfg.source == TrainSource::kDataset && (data == nullptr || data->size() == 0)) {
    throw InvalidArgument("adapt: dataset source needs a non-empty dataset");
  }
  if (cfg.learn_theta && !model.has_theta_grad()) {
    throw UnsupportedOperation("model '" + model.name() + "' has no theta gradient");
  }
  AdaptResult result;
  result.model = model.with_theta(model.theta());

  const bool train_phi = proposal.variant().trainable();
  ParamVector& phi = proposal.params();
  Adam phi_opt(phi.size(), cfg.optimizer);

  const std::size_t n_theta = model.theta().size();
  ParamVector::Builder tb;
  tb.add("theta", n_theta);
  ParamVector theta = tb.build();
  {
    const auto init = model.theta();
    std::copy(init.begin(), init.end(), theta.values().begin());
  }
  Adam theta_opt(n_theta, cfg.theta_optimizer);

  std::vector<double> phi_acc(phi.size());
  std::vector<double> theta_acc(n_theta);
  std::vector<double> step_grad(phi.size());
  const RngStream adapt_root = fork(s, StreamTag::kAdapt);

  for (long iter = 1; iter <= cfg.iterations; ++iter) {
    const RngStream it_root = adapt_root.fork(static_cast<std::uint64_t>(iter));
    const StateSpaceModel& cur = *result.model;

    std::vector<Sequence> batch;
    if (cfg.source == TrainSource::kGenerative) {
      batch = simulate_dataset(cur, cfg.minibatch, cfg.T, it_root.fork(0)).sequences;
    } else {
      RngStream pick = it_root.fork(0);
      for (std::size_t j = 0; j < cfg.minibatch; ++j) {
        const auto idx = static_cast<std::size_t>(pick.uniform01() * static_cast<double>(data->size()));
        batch.push_back(data->sequences[std::min(idx, data->size() - 1)]);
      }
    }

    std::fill(phi_acc.begin(), phi_acc.end(), 0.0);
    std::fill(theta_acc.begin(), theta_acc.end(), 0.0);
    IterationDiagnostics diag;
    diag.iter = iter;
    diag.lml_approximate = cfg.mode == AdaptMode::kOnline;
    long total_steps = 0;
    double online_norm = 0.0;
    long online_updates = 0;

    for (std::size_t j = 0; j < batch.size(); ++j) {
      const Matrix& x = batch[j].x;
      const RngStream smc_stream = it_root.fork(1).fork(j);
      RunRecord rec;
      if (cfg.mode == AdaptMode::kBatch) {
        ProposalSession session = proposal.session(cur, /*record_tape=*/train_phi);
        rec = run_smc(cur, &session, x, cfg.smc, smc_stream);
        if (train_phi) accumulate_phi_grad(rec, session, phi_acc);
      } else {
        ProposalSession session = proposal.session(cur, false);
        StepObserver online;
        if (train_phi) {
          online = [&](const RunRecord& r) {
            std::fill(step_grad.begin(), step_grad.end(), 0.0);
            session.backward_step(r.steps.back().norm_w, step_grad);
            online_norm += ascend(phi, phi_opt, step_grad, 1.0, cfg.clip_norm);
            ++online_updates;
          };
        }
        rec = run_smc(cur, &session, x, cfg.smc, smc_stream, online);
      }
      if (cfg.learn_theta) accumulate_theta_grad(rec, cur, x, theta_acc);
      total_steps += rec.length();
      diag.mean_ess += rec.mean_ess();
      diag.lml += rec.lml;
    }
    diag.mean_ess /= static_cast<double>(batch.size());
    diag.lml /= static_cast<double>(batch.size());
    const double inv_steps = 1.0 / static_cast<double>(total_steps);

    if (train_phi) {
      if (cfg.mode == AdaptMode::kBatch) {
        diag.grad_norm_phi = ascend(phi, phi_opt, phi_acc, inv_steps, cfg.clip_norm);
      } else if (online_updates > 0) {
        diag.grad_norm_phi = online_norm / static_cast<double>(online_updates);
      }
    }
    if (cfg.learn_theta) {
      diag.grad_norm_theta = ascend(theta, theta_opt, theta_acc, inv_steps, cfg.clip_norm);
      for (double& v : theta.values()) v = std::max(v, cfg.theta_floor);
      result.model = cur.with_theta(theta.values());
    }
    result.history.push_back(diag);
    if (callback) callback(diag, proposal, *result.model);
  }
  return result;
}

}  // namespace nasmc
