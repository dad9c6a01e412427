// SPDX-License-Identifier: Apache-2.0
#include "nasmc/app/selfcheck.hpp"

#include <cmath>
#include <sstream>

#include "nasmc/adapt.hpp"
#include "nasmc/app/config.hpp"
#include "nasmc/checkpoint.hpp"
#include "nasmc/mdn.hpp"
#include "nasmc/metrics.hpp"
#include "nasmc/nnet.hpp"
#include "nasmc/proposals.hpp"
#include "nasmc/smc.hpp"

namespace nasmc::app {

namespace {

constexpr double kFaultDelta = 1e-2;

void inject(std::vector<double>& g, Fault fault) {
  if (fault == Fault::kGradient && !g.empty()) g[0] += kFaultDelta;
}

CheckResult from_gradcheck(std::string name, const GradCheckResult& r) {
  std::ostringstream os;
  os << "max rel error " << r.max_rel_error << " at " << r.worst_index;
  return {std::move(name), r.passed, os.str()};
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, RngStream& s, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * s.std_normal();
  return m;
}

CheckResult check_mdn(RngStream s, Fault fault) {
  const Eigen::Index K = 3, D = 2;
  const Matrix z = random_matrix(D, 1, s);
  std::vector<double> x(static_cast<std::size_t>(K + 2 * K * D));
  for (double& v : x) v = 0.5 * s.std_normal();
  auto unpack = [&](std::span<const double> p) {
    MdnParams m;
    m.mix_logits = Eigen::Map<const Vector>(p.data(), K);
    m.means = Eigen::Map<const Matrix>(p.data() + K, D, K);
    m.log_stds = Eigen::Map<const Matrix>(p.data() + K + K * D, D, K);
    return m;
  };
  MdnGrad g;
  mdn_log_density_grad(unpack(x), z.col(0), g);
  std::vector<double> analytic(x.size());
  Eigen::Map<Vector>(analytic.data(), K) = g.d_logits;
  Eigen::Map<Matrix>(analytic.data() + K, D, K) = g.d_means;
  Eigen::Map<Matrix>(analytic.data() + K + K * D, D, K) = g.d_log_stds;
  inject(analytic, fault);
  auto f = [&](std::span<const double> p) { return mdn_log_density(unpack(p), z.col(0)); };
  return from_gradcheck("gradient_mdn", check_gradient(f, x, analytic));
}

CheckResult check_dense(RngStream s, Fault fault) {
  ParamVector::Builder b;
  Dense layer(b, "d", 4, 3);
  ParamVector p = b.build();
  layer.init(p, s);
  for (double& v : p.values()) v += 0.1 * s.std_normal();
  const Matrix x = random_matrix(4, 2, s);
  const Matrix c = random_matrix(3, 2, s);
  DenseCache cache;
  layer.forward(p, x, &cache);
  std::vector<double> analytic(p.size());
  layer.backward(p, cache, c, analytic);
  inject(analytic, fault);
  auto f = [&](std::span<const double> v) {
    ParamVector q = p;
    std::copy(v.begin(), v.end(), q.values().begin());
    return (layer.forward(q, x).array() * c.array()).sum();
  };
  const std::vector<double> x0(p.values().begin(), p.values().end());
  return from_gradcheck("gradient_dense", check_gradient(f, x0, analytic));
}

CheckResult check_lstm(RngStream s, Fault fault) {
  constexpr int kSteps = 5;
  ParamVector::Builder b;
  Lstm cell(b, "l", 3, 4);
  ParamVector p = b.build();
  cell.init(p, s);
  for (double& v : p.values()) v += 0.1 * s.std_normal();
  std::vector<Matrix> xs, cs;
  for (int t = 0; t < kSteps; ++t) {
    xs.push_back(random_matrix(3, 2, s));
    cs.push_back(random_matrix(4, 2, s));
  }
  auto loss = [&](const ParamVector& q, std::vector<LstmCache>* caches) {
    LstmState st = LstmState::zeros(4, 2);
    double acc = 0.0;
    for (int t = 0; t < kSteps; ++t) {
      LstmCache cache;
      st = cell.forward(q, xs[t], st, &cache);
      if (caches != nullptr) caches->push_back(std::move(cache));
      acc += (st.h.array() * cs[t].array()).sum();
    }
    return acc;
  };
  std::vector<LstmCache> caches;
  loss(p, &caches);
  std::vector<double> analytic(p.size());
  Matrix dh = Matrix::Zero(4, 2), dc = Matrix::Zero(4, 2);
  for (int t = kSteps - 1; t >= 0; --t) {
    dh += cs[t];
    Lstm::Grads g = cell.backward(p, caches[t], dh, dc, analytic);
    dh = g.dh_prev;
    dc = g.dc_prev;
  }
  inject(analytic, fault);
  auto f = [&](std::span<const double> v) {
    ParamVector q = p;
    std::copy(v.begin(), v.end(), q.values().begin());
    return loss(q, nullptr);
  };
  const std::vector<double> x0(p.values().begin(), p.values().end());
  return from_gradcheck("gradient_lstm", check_gradient(f, x0, analytic));
}

// Replays a recorded run with the proposal's current parameters and returns
// sum_t sum_n w_t(n) log q(z_t^n | history).
double replay_objective(const ProposalModel& prop, const StateSpaceModel& model, const Matrix& x,
                        const RunRecord& rec) {
  ProposalSession sess = prop.session(model, false);
  sess.begin_sequence(rec.n_particles, rec.length());
  double acc = 0.0;
  for (int t = 1; t <= rec.length(); ++t) {
    const SmcStep& step = rec.steps[static_cast<std::size_t>(t - 1)];
    Matrix z_prev;
    if (t > 1) {
      if (step.resampled) sess.reorder(step.ancestors);
      z_prev = rec.parent_states(t);
    }
    sess.condition(t, x.col(t - 1), z_prev);
    acc += sess.log_density(step.z).dot(step.norm_w);
  }
  return acc;
}

CheckResult check_proposal(RngStream s, Fault fault) {
  BenchmarkNssm model(std::sqrt(10.0), 1.0);
  ProposalVariant v = ProposalVariant::parse("rnn-md-f");
  v.hidden = 4;
  ProposalModel prop = ProposalModel::for_model(v, model, s.fork(1));
  for (double& w : prop.params().values()) w += 0.1 * s.std_normal();
  const Sequence seq = simulate(model, 3, s.fork(2));
  SmcConfig cfg;
  cfg.n_particles = 3;
  ProposalSession sess = prop.session(model, true);
  const RunRecord rec = run_smc(model, &sess, seq.x, cfg, s.fork(3));
  std::vector<double> analytic(prop.params().size());
  accumulate_phi_grad(rec, sess, analytic);
  inject(analytic, fault);
  const std::vector<double> x0(prop.params().values().begin(), prop.params().values().end());
  auto f = [&](std::span<const double> p) {
    ProposalModel q = prop;
    std::copy(p.begin(), p.end(), q.params().values().begin());
    return replay_objective(q, model, seq.x, rec);
  };
  return from_gradcheck("gradient_proposal_path", check_gradient(f, x0, analytic));
}

CheckResult check_kalman(RngStream s) {
  const auto model = LinearGaussianSsm::scalar(0.9, 1.0, 1.0, 1.0);
  const Sequence seq = simulate(model, 20, s.fork(0));
  SmcConfig cfg;
  cfg.n_particles = 2000;
  const double est = run_smc(model, nullptr, seq.x, cfg, s.fork(1)).lml;
  const double exact = kalman_filter(model, seq.x).lml;
  std::ostringstream os;
  os << "smc " << est << " exact " << exact;
  return {"kalman_equivalence", std::abs(est - exact) < 0.5, os.str()};
}

CheckResult check_resampling(RngStream s) {
  const std::vector<double> w = {0.5, 0.3, 0.2};
  constexpr int kReps = 20000;
  std::vector<double> counts(3, 0.0);
  for (int r = 0; r < kReps; ++r) {
    for (std::size_t a : resample(w, ResampleScheme::kMultinomial, s)) counts[a] += 1.0;
  }
  const double total = 3.0 * kReps;
  bool ok = true;
  std::ostringstream os;
  for (std::size_t i = 0; i < 3; ++i) {
    const double se = std::sqrt(w[i] * (1.0 - w[i]) / total);
    const double z = (counts[i] / total - w[i]) / se;
    ok = ok && std::abs(z) < 4.0;
    os << "z" << i << '=' << z << ' ';
  }
  std::vector<double> uniform(8, 1.0 / 8.0);
  auto sys = resample(uniform, ResampleScheme::kSystematic, s);
  std::sort(sys.begin(), sys.end());
  for (std::size_t i = 0; i < sys.size(); ++i) ok = ok && sys[i] == i;
  return {"resampling_moments", ok, os.str()};
}

CheckResult check_ancestry(RngStream s) {
  const auto model = LinearGaussianSsm::scalar(0.9, 1.0, 1.0, 1.0);
  const Sequence seq = simulate(model, 10, s.fork(0));
  SmcConfig cfg;
  cfg.n_particles = 6;
  std::vector<Matrix> paths;  // brute-force copies of every particle's history
  auto observer = [&](const RunRecord& rec) {
    const SmcStep& step = rec.steps.back();
    std::vector<Matrix> next(rec.n_particles);
    for (std::size_t n = 0; n < rec.n_particles; ++n) {
      Matrix p(1, rec.length());
      if (rec.length() > 1) p.leftCols(rec.length() - 1) = paths[step.ancestors[n]];
      p(0, rec.length() - 1) = step.z(0, static_cast<Eigen::Index>(n));
      next[n] = std::move(p);
    }
    paths = std::move(next);
  };
  const RunRecord rec = run_smc(model, nullptr, seq.x, cfg, s.fork(1), observer);
  bool ok = true;
  for (std::size_t n = 0; n < cfg.n_particles; ++n) ok = ok && rec.trajectory(n) == paths[n];
  return {"ancestry_consistency", ok, ok ? "paths match" : "path mismatch"};
}

CheckResult check_checkpoint(RngStream s) {
  BenchmarkNssm model(std::sqrt(10.0), 1.0);
  ProposalVariant v = ProposalVariant::parse("rnn-md-f");
  v.hidden = 5;
  const ProposalModel prop = ProposalModel::for_model(v, model, s);
  std::stringstream ss;
  write_checkpoint(ss, prop.to_checkpoint());
  const ProposalModel back = ProposalModel::from_checkpoint(read_checkpoint(ss));
  const bool ok = std::equal(prop.params().values().begin(), prop.params().values().end(),
                             back.params().values().begin(), back.params().values().end()) &&
                  back.variant().to_string() == v.to_string();
  return {"checkpoint_roundtrip", ok, ok ? "bit-exact" : "mismatch"};
}

}  // namespace

Fault parse_fault(std::string_view text) {
  if (text == "none") return Fault::kNone;
  if (text == "gradient") return Fault::kGradient;
  throw ConfigError("unknown fault '" + std::string(text) + "' (want none or gradient)");
}

std::vector<CheckResult> run_selfchecks(std::uint64_t seed, Fault fault) {
  const RngStream root = fork(RngStream(seed, 0), StreamTag::kCheck);
  std::vector<CheckResult> out;
  out.push_back(check_mdn(root.fork(1), fault));
  out.push_back(check_dense(root.fork(2), fault));
  out.push_back(check_lstm(root.fork(3), fault));
  out.push_back(check_proposal(root.fork(4), fault));
  out.push_back(check_kalman(root.fork(5)));
  out.push_back(check_resampling(root.fork(6)));
  out.push_back(check_ancestry(root.fork(7)));
  out.push_back(check_checkpoint(root.fork(8)));
  return out;
}

}  // namespace nasmc::app
