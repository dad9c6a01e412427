// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nasmc/checkpoint.hpp"
#include "nasmc/mdn.hpp"
#include "nasmc/models.hpp"
#include "nasmc/nnet.hpp"
#include "nasmc/param_vector.hpp"
#include "nasmc/prng.hpp"

namespace nasmc {

enum class ProposalFamily { kPrior, kNn, kRnn };

/// Which proposal to build.
///
/// Text form: "prior", or "<nn|rnn>[-md][-f]". "-md" selects a mixture head
/// with `components` Gaussians (default 3), otherwise a single Gaussian.
/// "-f" makes the head describe standardised process noise around the model's
/// prior transition: z = m_prior + s_prior * e, e ~ head mixture.
struct ProposalVariant {
  ProposalFamily family = ProposalFamily::kPrior;
  std::size_t components = 1;
  bool residual_f = false;
  /// 0 selects the family default (100 tanh units for nn, 50 LSTM units for rnn).
  std::size_t hidden = 0;
  bool time_features = true;

  static constexpr std::size_t kDefaultMixture = 3;
  static constexpr std::size_t kDefaultNnHidden = 100;
  static constexpr std::size_t kDefaultRnnHidden = 50;

  /// Throws InvalidArgument for an unknown name.
  static ProposalVariant parse(std::string_view text);
  std::string to_string() const;
  std::size_t hidden_units() const noexcept;
  bool trainable() const noexcept { return family != ProposalFamily::kPrior; }
};

/// Per-dimension affine standardisation of network inputs.
struct InputNormalizer {
  Vector x_shift;
  Vector x_scale;
  Vector z_shift;
  Vector z_scale;

  static InputNormalizer identity(std::size_t dz, std::size_t dx);
  /// Moments of simulated sequences from `model`.
  static InputNormalizer fit(const StateSpaceModel& model, RngStream s, int sequences = 8,
                             int T = 200);
};

class ProposalSession;

/// Parametric proposal q_phi(z_t | z_{1:t-1}, x_{1:t}).
///
/// Network input at step t is [x_t, z_{t-1}, tau(t)] (plus the standardised
/// prior mean for "-f" variants), with tau(t) = (cos 1.2t, sin 1.2t, t/T).
/// At t = 1 the z_{t-1} block is zero. The nn family feeds one tanh layer, the
/// rnn family one LSTM layer whose state is carried per particle; both end in
/// a mixture-density head.
class ProposalModel {
 public:
  ProposalModel() = default;
  ProposalModel(ProposalVariant variant, std::size_t state_dim, std::size_t obs_dim,
                InputNormalizer normalizer);

  /// Builds, fits the normaliser on simulated data and initialises weights.
  static ProposalModel for_model(ProposalVariant variant, const StateSpaceModel& model,
                                 const RngStream& s, bool zero_head = false);

  /// Dense/LSTM weights uniform in +-1/sqrt(fan_in), biases zero, head
  /// std biases at softplus^-1(1 - floor) so initial sigma is 1 (in prior-std
  /// units for "-f"). `zero_head` also zeroes the head weights.
  void init(RngStream s, bool zero_head = false);

  const ProposalVariant& variant() const noexcept { return variant_; }
  std::size_t state_dim() const noexcept { return dz_; }
  std::size_t obs_dim() const noexcept { return dx_; }
  std::size_t input_dim() const noexcept;
  const InputNormalizer& normalizer() const noexcept { return norm_; }

  ParamVector& params() noexcept { return params_; }
  const ParamVector& params() const noexcept { return params_; }

  Checkpoint to_checkpoint() const;
  /// Throws CheckpointError when the checkpoint does not describe a proposal.
  static ProposalModel from_checkpoint(const Checkpoint& ckpt);

  /// Per-sequence working state. The session keeps references to this
  /// proposal and to `model`; both must outlive it.
  ProposalSession session(const StateSpaceModel& model, bool record_tape = false) const;

 private:
  friend class ProposalSession;

  ProposalVariant variant_;
  std::size_t dz_ = 0;
  std::size_t dx_ = 0;
  InputNormalizer norm_;
  ParamVector params_;
  Dense hidden_;
  Lstm lstm_;
  Dense head_;
};

/// Per-sequence proposal state: per-particle recurrent states and, when
/// recording, a tape of every step so the weighted log-density gradient can
/// be back-propagated through each particle's ancestral history.
class ProposalSession {
 public:
  ProposalSession(const ProposalModel& proposal, const StateSpaceModel& model, bool record_tape);

  /// Fresh zero recurrent states for n particles; clears the tape.
  void begin_sequence(std::size_t n_particles, int T);
  bool started() const noexcept { return n_ > 0; }
  std::size_t particles() const noexcept { return n_; }

  /// Particle n continues the history of particle ancestors[n] from the
  /// previous step. Permutes recurrent states and records the mapping for
  /// the next condition() call.
  void reorder(std::span<const std::size_t> ancestors);

  /// Conditions every particle on (x_t, its z_{t-1}). `z_prev` is D_z x N and
  /// ignored at t = 1. Advances recurrent states. Throws StateError before
  /// begin_sequence().
  const MdnBatch& condition(int t, const ConstVecRef& x_t, const Matrix& z_prev);

  /// Mixture parameters of particle i at the current step.
  MdnParams params(std::size_t i) const;

  /// Draw for particle i at the current step.
  void sample(std::size_t i, RngStream& s, VecRef z) const;

  /// log q for every particle at the current step. Stores z on the tape.
  /// Throws StateError before condition().
  const Vector& log_density(const Matrix& z);

  /// grad += sum_t sum_n weights[t-1](n) * d log q(z_t^n | history) / d phi,
  /// back-propagating through recurrent state along ancestry.
  /// Needs a recording session with log_density() called at every step.
  void backward(std::span<const Vector> weights, std::span<double> grad) const;

  /// Current-step term only, recurrent state treated as constant.
  void backward_step(const Vector& weights, std::span<double> grad) const;

  /// Zero-state LSTM states for the rnn family; null otherwise.
  const LstmState* recurrent_state() const noexcept;
  std::size_t steps_recorded() const noexcept { return tape_.size(); }
  int current_step() const noexcept { return tape_.empty() ? 0 : tape_.back().t; }

 private:
  struct StepTape {
    int t = 0;
    std::vector<std::size_t> ancestors;  // empty means identity
    Matrix z_prev;
    DenseCache hidden;
    TanhCache act;
    LstmCache lstm;
    DenseCache head;
    MdnBatch batch;
    Matrix z;
    bool has_z = false;
  };

  Matrix build_input(int t, const ConstVecRef& x_t, const Matrix& z_prev, const Matrix& prior_mean) const;
  void backward_head(const StepTape& step, const Vector& w, std::span<double> grad,
                     Matrix* d_hidden) const;

  const ProposalModel* proposal_;
  const StateSpaceModel* model_;
  bool record_;
  std::size_t n_ = 0;
  int T_ = 1;
  std::vector<std::size_t> pending_ancestors_;
  LstmState state_;
  std::vector<StepTape> tape_;
  Vector log_q_;
};

}  // namespace nasmc
