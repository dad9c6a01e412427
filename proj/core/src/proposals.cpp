// SPDX-License-Identifier: Apache-2.0
#include "nasmc/proposals.hpp"

#include <cmath>
#include <sstream>

#include "nasmc/dataset.hpp"
#include "nasmc/errors.hpp"

namespace nasmc {

// ---------------------------------------------------------------------------
// ProposalVariant

ProposalVariant ProposalVariant::parse(std::string_view text) {
  ProposalVariant v;
  if (text == "prior" || text == "bootstrap") return v;
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : text) {
    if (ch == '-') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  parts.push_back(cur);
  if (parts[0] == "nn") {
    v.family = ProposalFamily::kNn;
  } else if (parts[0] == "rnn") {
    v.family = ProposalFamily::kRnn;
  } else {
    throw InvalidArgument("unknown proposal variant '" + std::string(text) + "'");
  }
  for (std::size_t i = 1; i < parts.size(); ++i) {
    if (parts[i] == "md" && v.components == 1) {
      v.components = kDefaultMixture;
    } else if (parts[i] == "f" && !v.residual_f) {
      v.residual_f = true;
    } else {
      throw InvalidArgument("unknown proposal variant '" + std::string(text) + "'");
    }
  }
  return v;
}

std::string ProposalVariant::to_string() const {
  if (family == ProposalFamily::kPrior) return "prior";
  std::string s = family == ProposalFamily::kNn ? "nn" : "rnn";
  if (components > 1) s += "-md";
  if (residual_f) s += "-f";
  return s;
}

std::size_t ProposalVariant::hidden_units() const noexcept {
  if (hidden > 0) return hidden;
  switch (family) {
    case ProposalFamily::kNn:
      return kDefaultNnHidden;
    case ProposalFamily::kRnn:
      return kDefaultRnnHidden;
    default:
      return 0;
  }
}

// ---------------------------------------------------------------------------
// InputNormalizer

InputNormalizer InputNormalizer::identity(std::size_t dz, std::size_t dx) {
  const auto z = static_cast<Eigen::Index>(dz);
  const auto x = static_cast<Eigen::Index>(dx);
  return InputNormalizer{Vector::Zero(x), Vector::Ones(x), Vector::Zero(z), Vector::Ones(z)};
}

InputNormalizer InputNormalizer::fit(const StateSpaceModel& model, RngStream s, int sequences,
                                     int T) {
  const Dataset data = simulate_dataset(model, static_cast<std::size_t>(sequences), T, s);
  auto moments = [](const std::vector<const Matrix*>& blocks, Vector& shift, Vector& scale) {
    const Eigen::Index d = blocks.front()->rows();
    Vector sum = Vector::Zero(d), sq = Vector::Zero(d);
    double n = 0.0;
    for (const Matrix* m : blocks) {
      sum += m->rowwise().sum();
      sq += m->array().square().rowwise().sum().matrix();
      n += static_cast<double>(m->cols());
    }
    shift = sum / n;
    scale = (sq / n - shift.array().square().matrix()).array().max(0.0).sqrt().matrix();
    for (Eigen::Index i = 0; i < d; ++i) {
      if (!(scale(i) > 1e-8)) scale(i) = 1.0;
    }
  };
  std::vector<const Matrix*> xs, zs;
  for (const auto& seq : data.sequences) {
    xs.push_back(&seq.x);
    zs.push_back(&seq.z);
  }
  InputNormalizer norm;
  moments(xs, norm.x_shift, norm.x_scale);
  moments(zs, norm.z_shift, norm.z_scale);
  return norm;
}

// ---------------------------------------------------------------------------
// ProposalModel

ProposalModel::ProposalModel(ProposalVariant variant, std::size_t state_dim, std::size_t obs_dim,
                             InputNormalizer normalizer)
    : variant_(variant), dz_(state_dim), dx_(obs_dim), norm_(std::move(normalizer)) {
  if (variant_.components < 1) throw InvalidArgument("proposal: need at least one component");
  if (state_dim < 1 || obs_dim < 1) throw InvalidArgument("proposal: dimensions must be >= 1");
  if (static_cast<std::size_t>(norm_.x_shift.size()) != dx_ ||
      static_cast<std::size_t>(norm_.x_scale.size()) != dx_ ||
      static_cast<std::size_t>(norm_.z_shift.size()) != dz_ ||
      static_cast<std::size_t>(norm_.z_scale.size()) != dz_) {
    throw InvalidArgument("proposal: normaliser dimensions mismatch");
  }
  if (variant_.family == ProposalFamily::kPrior) {
    variant_.components = 1;
    variant_.residual_f = false;
    return;
  }
  ParamVector::Builder b;
  const std::size_t H = variant_.hidden_units();
  const std::size_t out = mdn_output_rows(variant_.components, dz_);
  if (variant_.family == ProposalFamily::kNn) {
    hidden_ = Dense(b, "hidden", input_dim(), H);
  } else {
    lstm_ = Lstm(b, "lstm", input_dim(), H);
  }
  head_ = Dense(b, "head", H, out);
  params_ = b.build();
}

std::size_t ProposalModel::input_dim() const noexcept {
  return dx_ + dz_ + (variant_.time_features ? 3 : 0) + (variant_.residual_f ? dz_ : 0);
}

ProposalModel ProposalModel::for_model(ProposalVariant variant, const StateSpaceModel& model,
                                       const RngStream& s, bool zero_head) {
  InputNormalizer norm = variant.family == ProposalFamily::kPrior
                             ? InputNormalizer::identity(model.state_dim(), model.obs_dim())
                             : InputNormalizer::fit(model, s.fork(1));
  ProposalModel p(variant, model.state_dim(), model.obs_dim(), std::move(norm));
  p.init(s.fork(2), zero_head);
  return p;
}

void ProposalModel::init(RngStream s, bool zero_head) {
  if (!variant_.trainable()) return;
  if (variant_.family == ProposalFamily::kNn) {
    hidden_.init(params_, s);
  } else {
    lstm_.init(params_, s);
  }
  head_.init(params_, s);
  if (zero_head) params_.map(head_.weight_slice()).setZero();
  auto bias = params_.map(head_.bias_slice());
  bias.setZero();
  const auto K = static_cast<Eigen::Index>(variant_.components);
  const auto D = static_cast<Eigen::Index>(dz_);
  const double raw = softplus_inv(1.0 - kSigmaFloor);
  for (Eigen::Index r = K + K * D; r < K + 2 * K * D; ++r) bias(r, 0) = raw;
}

Checkpoint ProposalModel::to_checkpoint() const {
  Checkpoint c;
  c.meta.emplace_back("kind", "proposal");
  c.meta.emplace_back("variant", variant_.to_string());
  c.meta.emplace_back("components", std::to_string(variant_.components));
  c.meta.emplace_back("hidden", std::to_string(variant_.hidden_units()));
  c.meta.emplace_back("time_features", variant_.time_features ? "1" : "0");
  c.meta.emplace_back("state_dim", std::to_string(dz_));
  c.meta.emplace_back("obs_dim", std::to_string(dx_));
  auto vec = [](const std::string& name, const Vector& v) {
    return NamedArray{name, static_cast<std::size_t>(v.size()), 1,
                      std::vector<double>(v.data(), v.data() + v.size())};
  };
  c.arrays.push_back(vec("norm.x_shift", norm_.x_shift));
  c.arrays.push_back(vec("norm.x_scale", norm_.x_scale));
  c.arrays.push_back(vec("norm.z_shift", norm_.z_shift));
  c.arrays.push_back(vec("norm.z_scale", norm_.z_scale));
  append_params(c, params_);
  return c;
}

ProposalModel ProposalModel::from_checkpoint(const Checkpoint& ckpt) {
  auto need = [&](const std::string& key) {
    auto v = ckpt.meta_value(key);
    if (!v) throw CheckpointError("proposal checkpoint lacks '" + key + "'");
    return *v;
  };
  if (need("kind") != "proposal") throw CheckpointError("checkpoint is not a proposal");
  ProposalVariant v;
  std::size_t dz = 0, dx = 0;
  try {
    v = ProposalVariant::parse(need("variant"));
    v.components = std::stoul(need("components"));
    v.hidden = std::stoul(need("hidden"));
    v.time_features = need("time_features") == "1";
    dz = std::stoul(need("state_dim"));
    dx = std::stoul(need("obs_dim"));
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("bad proposal header: ") + e.what());
  }
  auto vec = [&](const std::string& name, std::size_t n) {
    const NamedArray* a = ckpt.find(name);
    if (a == nullptr || a->values.size() != n) {
      throw CheckpointError("checkpoint lacks array '" + name + "'");
    }
    return Vector(Eigen::Map<const Vector>(a->values.data(), static_cast<Eigen::Index>(n)));
  };
  InputNormalizer norm{vec("norm.x_shift", dx), vec("norm.x_scale", dx), vec("norm.z_shift", dz),
                       vec("norm.z_scale", dz)};
  ProposalModel p(v, dz, dx, std::move(norm));
  restore_params(ckpt, p.params_);
  return p;
}

ProposalSession ProposalModel::session(const StateSpaceModel& model, bool record_tape) const {
  return ProposalSession(*this, model, record_tape);
}

// ---------------------------------------------------------------------------
// ProposalSession

ProposalSession::ProposalSession(const ProposalModel& proposal, const StateSpaceModel& model,
                                 bool record_tape)
    : proposal_(&proposal), model_(&model), record_(record_tape) {
  if (model.state_dim() != proposal.state_dim() || model.obs_dim() != proposal.obs_dim()) {
    throw InvalidArgument("proposal and model dimensions differ");
  }
}

void ProposalSession::begin_sequence(std::size_t n_particles, int T) {
  if (n_particles < 1) throw InvalidArgument("begin_sequence: need at least one particle");
  n_ = n_particles;
  T_ = std::max(T, 1);
  pending_ancestors_.clear();
  tape_.clear();
  log_q_.resize(0);
  if (proposal_->variant_.family == ProposalFamily::kRnn) {
    state_ = LstmState::zeros(proposal_->variant_.hidden_units(), n_);
  } else {
    state_ = LstmState{};
  }
}

void ProposalSession::reorder(std::span<const std::size_t> ancestors) {
  if (!started()) throw StateError("proposal session: reorder before begin_sequence");
  if (ancestors.size() != n_) throw InvalidArgument("reorder: ancestor count mismatch");
  for (std::size_t a : ancestors) {
    if (a >= n_) throw InvalidArgument("reorder: ancestor index out of range");
  }
  pending_ancestors_.assign(ancestors.begin(), ancestors.end());
  if (state_.h.size() > 0) {
    LstmState next{Matrix(state_.h.rows(), state_.h.cols()), Matrix(state_.c.rows(), state_.c.cols())};
    for (std::size_t n = 0; n < n_; ++n) {
      const auto src = static_cast<Eigen::Index>(ancestors[n]);
      next.h.col(static_cast<Eigen::Index>(n)) = state_.h.col(src);
      next.c.col(static_cast<Eigen::Index>(n)) = state_.c.col(src);
    }
    state_ = std::move(next);
  }
}

Matrix ProposalSession::build_input(int t, const ConstVecRef& x_t, const Matrix& z_prev,
                                    const Matrix& prior_mean) const {
  const ProposalModel& p = *proposal_;
  const auto n = static_cast<Eigen::Index>(n_);
  const auto dx = static_cast<Eigen::Index>(p.dx_);
  const auto dz = static_cast<Eigen::Index>(p.dz_);
  Matrix u(static_cast<Eigen::Index>(p.input_dim()), n);
  Eigen::Index row = 0;
  const Vector xn = ((x_t - p.norm_.x_shift).array() / p.norm_.x_scale.array()).matrix();
  u.middleRows(row, dx) = xn.replicate(1, n);
  row += dx;
  if (t > 1) {
    u.middleRows(row, dz) =
        ((z_prev.colwise() - p.norm_.z_shift).array().colwise() / p.norm_.z_scale.array()).matrix();
  } else {
    u.middleRows(row, dz).setZero();
  }
  row += dz;
  if (p.variant_.time_features) {
    u.row(row++).setConstant(std::cos(1.2 * t));
    u.row(row++).setConstant(std::sin(1.2 * t));
    u.row(row++).setConstant(static_cast<double>(t) / static_cast<double>(T_));
  }
  if (p.variant_.residual_f) {
    u.middleRows(row, dz) =
        ((prior_mean.colwise() - p.norm_.z_shift).array().colwise() / p.norm_.z_scale.array())
            .matrix();
  }
  return u;
}

const MdnBatch& ProposalSession::condition(int t, const ConstVecRef& x_t, const Matrix& z_prev) {
  if (!started()) throw StateError("proposal session: condition before begin_sequence");
  const ProposalModel& p = *proposal_;
  if (static_cast<std::size_t>(x_t.size()) != p.dx_) {
    throw InvalidArgument("condition: observation dimension mismatch");
  }
  const auto n = static_cast<Eigen::Index>(n_);
  const auto dz = static_cast<Eigen::Index>(p.dz_);
  if (t > 1 && (z_prev.rows() != dz || z_prev.cols() != n)) {
    throw InvalidArgument("condition: z_prev must be state_dim x particles");
  }
  if (!record_) tape_.clear();
  StepTape& step = tape_.emplace_back();
  step.t = t;
  step.ancestors = std::move(pending_ancestors_);
  pending_ancestors_.clear();
  if (t > 1) step.z_prev = z_prev;

  // Prior moments per particle (needed by the prior family and by "-f").
  Matrix prior_mean(dz, n), prior_std(dz, n);
  const bool need_prior = p.variant_.family == ProposalFamily::kPrior || p.variant_.residual_f;
  if (need_prior) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (t > 1) {
        model_->trans_moments(z_prev.col(j), t, prior_mean.col(j), prior_std.col(j));
      } else {
        model_->init_moments(prior_mean.col(j), prior_std.col(j));
      }
    }
  }

  if (p.variant_.family == ProposalFamily::kPrior) {
    MdnBatch& b = step.batch;
    b.K = 1;
    b.D = p.dz_;
    b.logits = Matrix::Zero(1, n);
    b.means = prior_mean;
    b.log_stds = prior_std.array().log().matrix();
    b.raw_std.resize(0, 0);
    b.scale = prior_std;
    log_q_.resize(0);
    return b;
  }

  const Matrix u = build_input(t, x_t, z_prev, prior_mean);
  Matrix features;
  if (p.variant_.family == ProposalFamily::kNn) {
    features = tanh_forward(p.hidden_.forward(p.params_, u, &step.hidden), &step.act);
  } else {
    state_ = p.lstm_.forward(p.params_, u, state_, &step.lstm);
    features = state_.h;
  }
  const Matrix raw = p.head_.forward(p.params_, features, &step.head);
  step.batch = p.variant_.residual_f
                   ? mdn_head_forward(raw, p.variant_.components, p.dz_, &prior_mean, &prior_std)
                   : mdn_head_forward(raw, p.variant_.components, p.dz_);
  log_q_.resize(0);
  return step.batch;
}

MdnParams ProposalSession::params(std::size_t i) const {
  if (tape_.empty()) throw StateError("proposal session: params before condition");
  if (i >= n_) throw InvalidArgument("params: particle index out of range");
  return tape_.back().batch.params(i);
}

void ProposalSession::sample(std::size_t i, RngStream& s, VecRef z) const {
  if (tape_.empty()) throw StateError("proposal session: sample before condition");
  if (i >= n_) throw InvalidArgument("sample: particle index out of range");
  const StepTape& step = tape_.back();
  if (proposal_->variant_.family == ProposalFamily::kPrior) {
    if (step.t > 1) {
      model_->sample_trans(step.z_prev.col(static_cast<Eigen::Index>(i)), step.t, s, z);
    } else {
      model_->sample_init(s, z);
    }
    return;
  }
  z = mdn_sample(step.batch.params(i), s);
}

const Vector& ProposalSession::log_density(const Matrix& z) {
  if (tape_.empty()) throw StateError("proposal session: log_density before condition");
  StepTape& step = tape_.back();
  const auto n = static_cast<Eigen::Index>(n_);
  if (z.rows() != static_cast<Eigen::Index>(proposal_->dz_) || z.cols() != n) {
    throw InvalidArgument("log_density: z must be state_dim x particles");
  }
  log_q_.resize(n);
  if (proposal_->variant_.family == ProposalFamily::kPrior) {
    for (Eigen::Index j = 0; j < n; ++j) {
      log_q_(j) = step.t > 1 ? model_->log_trans(step.z_prev.col(j), z.col(j), step.t)
                             : model_->log_init(z.col(j));
    }
  } else {
    for (Eigen::Index j = 0; j < n; ++j) {
      log_q_(j) = mdn_log_density(step.batch.params(static_cast<std::size_t>(j)), z.col(j));
    }
  }
  step.z = z;
  step.has_z = true;
  return log_q_;
}

void ProposalSession::backward_head(const StepTape& step, const Vector& w, std::span<double> grad,
                                    Matrix* d_hidden) const {
  if (!step.has_z) throw StateError("proposal backward: log_density missing for step " +
                                    std::to_string(step.t));
  if (static_cast<std::size_t>(w.size()) != n_) {
    throw InvalidArgument("proposal backward: weight count mismatch");
  }
  const ProposalModel& p = *proposal_;
  const Matrix d_raw = mdn_head_backward(step.batch, step.z, std::span<const double>(w.data(), n_));
  const Matrix d_feat = p.head_.backward(p.params_, step.head, d_raw, grad);
  if (p.variant_.family == ProposalFamily::kNn) {
    p.hidden_.backward(p.params_, step.hidden, tanh_backward(step.act, d_feat), grad);
  } else {
    *d_hidden += d_feat;
  }
}

void ProposalSession::backward(std::span<const Vector> weights, std::span<double> grad) const {
  const ProposalModel& p = *proposal_;
  if (!p.variant_.trainable()) return;
  if (!record_) throw StateError("proposal backward: session was not recording");
  if (weights.size() != tape_.size()) {
    throw InvalidArgument("proposal backward: need one weight vector per recorded step");
  }
  if (grad.size() != p.params_.size()) throw InvalidArgument("proposal backward: bad grad buffer");
  if (tape_.empty()) throw StateError("proposal backward: nothing recorded");

  if (p.variant_.family == ProposalFamily::kNn) {
    for (std::size_t k = 0; k < tape_.size(); ++k) backward_head(tape_[k], weights[k], grad, nullptr);
    return;
  }

  const auto H = static_cast<Eigen::Index>(p.variant_.hidden_units());
  const auto n = static_cast<Eigen::Index>(n_);
  Matrix dh = Matrix::Zero(H, n);
  Matrix dc = Matrix::Zero(H, n);
  for (std::size_t k = tape_.size(); k-- > 0;) {
    const StepTape& step = tape_[k];
    backward_head(step, weights[k], grad, &dh);
    Lstm::Grads g = p.lstm_.backward(p.params_, step.lstm, dh, dc, grad);
    if (k == 0) break;
    if (step.ancestors.empty()) {
      dh = std::move(g.dh_prev);
      dc = std::move(g.dc_prev);
    } else {
      dh.setZero();
      dc.setZero();
      for (Eigen::Index j = 0; j < n; ++j) {
        const auto a = static_cast<Eigen::Index>(step.ancestors[static_cast<std::size_t>(j)]);
        dh.col(a) += g.dh_prev.col(j);
        dc.col(a) += g.dc_prev.col(j);
      }
    }
  }
}

void ProposalSession::backward_step(const Vector& weights, std::span<double> grad) const {
  const ProposalModel& p = *proposal_;
  if (!p.variant_.trainable()) return;
  if (tape_.empty()) throw StateError("proposal backward: nothing recorded");
  if (grad.size() != p.params_.size()) throw InvalidArgument("proposal backward: bad grad buffer");
  const StepTape& step = tape_.back();
  if (p.variant_.family == ProposalFamily::kNn) {
    backward_head(step, weights, grad, nullptr);
    return;
  }
  const auto H = static_cast<Eigen::Index>(p.variant_.hidden_units());
  const auto n = static_cast<Eigen::Index>(n_);
  Matrix dh = Matrix::Zero(H, n);
  backward_head(step, weights, grad, &dh);
  p.lstm_.backward(p.params_, step.lstm, dh, Matrix::Zero(H, n), grad);
}

const LstmState* ProposalSession::recurrent_state() const noexcept {
  return state_.h.size() > 0 ? &state_ : nullptr;
}

}  // namespace nasmc
