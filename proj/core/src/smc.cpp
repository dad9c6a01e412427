// SPDX-License-Identifier: Apache-2.0
#include "nasmc/smc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

#include "nasmc/errors.hpp"

namespace nasmc {

bool ResampleTrigger::fires(double ess_value, std::size_t n) const noexcept {
  if (kind == Kind::kAlways) return true;
  return ess_value < fraction * static_cast<double>(n);
}

void SmcConfig::validate() const {
  if (n_particles < 1) throw InvalidArgument("smc: n_particles must be >= 1");
  if (trigger.kind == ResampleTrigger::Kind::kEssBelow &&
      !(trigger.fraction > 0.0 && trigger.fraction <= 1.0)) {
    throw InvalidArgument("smc: ess_below fraction must lie in (0, 1]");
  }
}

ResampleScheme parse_resample_scheme(std::string_view text) {
  if (text == "multinomial") return ResampleScheme::kMultinomial;
  if (text == "systematic") return ResampleScheme::kSystematic;
  throw InvalidArgument("unknown resample scheme '" + std::string(text) + "'");
}

ResampleTrigger parse_resample_trigger(std::string_view text) {
  if (text == "always") return ResampleTrigger::always();
  constexpr std::string_view prefix = "ess_below:";
  if (text.substr(0, prefix.size()) == prefix) {
    const std::string num(text.substr(prefix.size()));
    char* end = nullptr;
    const double f = std::strtod(num.c_str(), &end);
    if (!num.empty() && end == num.c_str() + num.size() && f > 0.0 && f <= 1.0) {
      return ResampleTrigger::ess_below(f);
    }
  }
  throw InvalidArgument("bad resample trigger '" + std::string(text) +
                        "' (want always or ess_below:<fraction in (0,1]>)");
}

double ess(std::span<const double> norm_w) noexcept {
  double sq = 0.0;
  for (double w : norm_w) sq += w * w;
  return sq > 0.0 ? 1.0 / sq : 0.0;
}

std::vector<std::size_t> resample(std::span<const double> norm_w, ResampleScheme scheme,
                                  RngStream& s) {
  const std::size_t n = norm_w.size();
  std::vector<double> cdf(n);
  std::partial_sum(norm_w.begin(), norm_w.end(), cdf.begin());
  const double total = n > 0 ? cdf.back() : 0.0;
  std::vector<std::size_t> out(n);
  auto locate = [&](double u) {
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u * total);
    return std::min(static_cast<std::size_t>(it - cdf.begin()), n - 1);
  };
  if (scheme == ResampleScheme::kMultinomial) {
    for (std::size_t i = 0; i < n; ++i) out[i] = locate(s.uniform01());
  } else {
    const double u0 = s.uniform01();
    const double inv = 1.0 / static_cast<double>(n);
    std::size_t j = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double u = (static_cast<double>(i) + u0) * inv * total;
      while (j + 1 < n && cdf[j] <= u) ++j;
      out[i] = j;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// RunRecord

Matrix RunRecord::trajectory(std::size_t n, int t) const {
  if (t < 1 || t > length()) throw InvalidArgument("trajectory: step out of range");
  if (n >= n_particles) throw InvalidArgument("trajectory: particle out of range");
  const Eigen::Index dz = steps.front().z.rows();
  Matrix path(dz, t);
  std::size_t idx = n;
  for (int k = t; k >= 1; --k) {
    const SmcStep& step = steps[static_cast<std::size_t>(k - 1)];
    path.col(k - 1) = step.z.col(static_cast<Eigen::Index>(idx));
    idx = step.ancestors[idx];
  }
  return path;
}

Matrix RunRecord::parent_states(int t) const {
  if (t < 2 || t > length()) throw InvalidArgument("parent_states: step out of range");
  const SmcStep& step = steps[static_cast<std::size_t>(t - 1)];
  const Matrix& prev = steps[static_cast<std::size_t>(t - 2)].z;
  Matrix out(prev.rows(), prev.cols());
  for (std::size_t n = 0; n < n_particles; ++n) {
    out.col(static_cast<Eigen::Index>(n)) = prev.col(static_cast<Eigen::Index>(step.ancestors[n]));
  }
  return out;
}

Matrix RunRecord::posterior_means() const {
  if (steps.empty()) return {};
  Matrix out(steps.front().z.rows(), length());
  for (int t = 0; t < length(); ++t) {
    const SmcStep& step = steps[static_cast<std::size_t>(t)];
    if (step.posterior_mean.size() == 0) {
      throw StateError("posterior_means: filtering stats were not recorded");
    }
    out.col(t) = step.posterior_mean;
  }
  return out;
}

std::vector<double> RunRecord::ess_trace() const {
  std::vector<double> out;
  out.reserve(steps.size());
  for (const auto& step : steps) out.push_back(step.ess);
  return out;
}

double RunRecord::mean_ess() const {
  if (steps.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& step : steps) acc += step.ess;
  return acc / static_cast<double>(steps.size());
}

// ---------------------------------------------------------------------------
// Forward pass

namespace {

// Normalises in place and returns log sum exp(log_w).
double normalize(const Vector& log_w, Vector& norm_w, int t) {
  const double mx = log_w.maxCoeff();
  if (!(mx > -std::numeric_limits<double>::infinity()) || std::isnan(mx)) {
    throw DegenerateWeightsError(t);
  }
  norm_w = (log_w.array() - mx).exp().matrix();
  const double sum = norm_w.sum();
  norm_w /= sum;
  return mx + std::log(sum);
}

}  // namespace

RunRecord run_smc(const StateSpaceModel& model, ProposalSession* session, const Matrix& x,
                  const SmcConfig& cfg, const RngStream& s, const StepObserver& observer) {
  cfg.validate();
  if (static_cast<std::size_t>(x.rows()) != model.obs_dim()) {
    throw InvalidArgument("run_smc: observation dimension mismatch");
  }
  if (x.cols() < 1) throw InvalidArgument("run_smc: empty observation sequence");
  const std::size_t N = cfg.n_particles;
  const auto n = static_cast<Eigen::Index>(N);
  const auto dz = static_cast<Eigen::Index>(model.state_dim());
  const int T = static_cast<int>(x.cols());
  const RngStream prop_root = fork(s, StreamTag::kProposal);
  const RngStream resample_root = fork(s, StreamTag::kResample);
  const double log_uniform = -std::log(static_cast<double>(N));

  if (session != nullptr) session->begin_sequence(N, T);

  RunRecord rec;
  rec.n_particles = N;
  rec.steps.reserve(static_cast<std::size_t>(T));
  Matrix z_prev;
  Vector log_prev = Vector::Constant(n, log_uniform);

  for (int t = 1; t <= T; ++t) {
    SmcStep step;
    step.t = t;
    step.ancestors.resize(N);
    const auto x_t = x.col(t - 1);

    if (t > 1) {
      const SmcStep& last = rec.steps.back();
      if (cfg.trigger.fires(last.ess, N)) {
        RngStream rs = resample_root.fork(static_cast<std::uint64_t>(t));
        step.ancestors = resample(std::span<const double>(last.norm_w.data(), N), cfg.scheme, rs);
        step.resampled = true;
        log_prev.setConstant(log_uniform);
        if (session != nullptr) session->reorder(step.ancestors);
      } else {
        std::iota(step.ancestors.begin(), step.ancestors.end(), std::size_t{0});
        log_prev = last.norm_w.array().log().matrix();
      }
      z_prev.resize(dz, n);
      for (Eigen::Index j = 0; j < n; ++j) {
        z_prev.col(j) = last.z.col(static_cast<Eigen::Index>(step.ancestors[static_cast<std::size_t>(j)]));
      }
    } else {
      std::iota(step.ancestors.begin(), step.ancestors.end(), std::size_t{0});
    }

    step.z.resize(dz, n);
    step.log_w.resize(n);
    const RngStream step_root = prop_root.fork(static_cast<std::uint64_t>(t));

    if (session == nullptr) {
      for (Eigen::Index j = 0; j < n; ++j) {
        RngStream ps = step_root.fork(static_cast<std::uint64_t>(j));
        auto zj = step.z.col(j);
        if (t > 1) {
          model.sample_trans(z_prev.col(j), t, ps, zj);
        } else {
          model.sample_init(ps, zj);
        }
        step.log_w(j) = log_prev(j) + model.log_obs(zj, x_t, t);
      }
    } else {
      session->condition(t, x_t, z_prev);
      for (Eigen::Index j = 0; j < n; ++j) {
        RngStream ps = step_root.fork(static_cast<std::uint64_t>(j));
        session->sample(static_cast<std::size_t>(j), ps, step.z.col(j));
      }
      const Vector& log_q = session->log_density(step.z);
      for (Eigen::Index j = 0; j < n; ++j) {
        const auto zj = step.z.col(j);
        const double log_p = t > 1 ? model.log_trans(z_prev.col(j), zj, t) : model.log_init(zj);
        step.log_w(j) = log_prev(j) + log_p + model.log_obs(zj, x_t, t) - log_q(j);
      }
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      if (std::isnan(step.log_w(j))) step.log_w(j) = -std::numeric_limits<double>::infinity();
    }

    step.log_normalizer = normalize(step.log_w, step.norm_w, t);
    step.ess = ess(std::span<const double>(step.norm_w.data(), N));
    if (cfg.record_filtering_stats) step.posterior_mean = step.z * step.norm_w;
    rec.lml += step.log_normalizer;
    rec.steps.push_back(std::move(step));
    if (observer) observer(rec);
  }
  return rec;
}

void write_run_csv(std::ostream& os, const RunRecord& rec, bool header) {
  const Eigen::Index dz = rec.steps.empty() ? 0 : rec.steps.front().z.rows();
  if (header) {
    os << "t,ess,log_incremental_normalizer";
    for (Eigen::Index d = 0; d < dz; ++d) os << ",posterior_mean" << d;
    os << '\n';
  }
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  };
  for (const auto& step : rec.steps) {
    os << step.t << ',' << num(step.ess) << ',' << num(step.log_normalizer);
    for (Eigen::Index d = 0; d < dz; ++d) {
      os << ',' << (step.posterior_mean.size() > 0 ? num(step.posterior_mean(d)) : "nan");
    }
    os << '\n';
  }
}

}  // namespace nasmc
