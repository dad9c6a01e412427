// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

#include <Eigen/Core>

#include "nasmc/nnet.hpp"
#include "nasmc/prng.hpp"

namespace nasmc {

/// Lower bound added to every proposal standard deviation.
inline constexpr double kSigmaFloor = 1e-3;

/// log N(z; mean, std^2) for a scalar.
double log_normal(double z, double mean, double std) noexcept;

/// Diagonal Gaussian mixture: K components over D dimensions.
struct MdnParams {
  Vector mix_logits;  // K
  Matrix means;       // D x K
  Matrix log_stds;    // D x K

  std::size_t components() const noexcept { return static_cast<std::size_t>(mix_logits.size()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(means.rows()); }
  Vector mix_weights() const { return softmax(mix_logits); }
  /// Throws InvalidArgument on inconsistent shapes.
  void validate() const;
};

/// Gradient of log q(z) w.r.t. the mixture parameters.
struct MdnGrad {
  Vector d_logits;
  Matrix d_means;
  Matrix d_log_stds;
};

/// log sum_k pi_k N(z; mu_k, diag(sigma_k^2)), stabilised with log-sum-exp.
double mdn_log_density(const MdnParams& m, const Eigen::Ref<const Vector>& z);

/// Same as mdn_log_density and also fills `grad`.
double mdn_log_density_grad(const MdnParams& m, const Eigen::Ref<const Vector>& z, MdnGrad& grad);

/// Component k ~ Categorical(softmax(logits)), then z ~ N(mu_k, diag(sigma_k^2)).
/// A single-component mixture skips the categorical draw.
Vector mdn_sample(const MdnParams& m, RngStream& s);

/// Batched mixture-density head.
///
/// Raw network outputs (one column per particle) are laid out as
///   [K logits | K*D means | K*D pre-softplus stds], component-major.
/// The head produces sigma = softplus(raw) + kSigmaFloor. When a residual
/// shift/scale is supplied, the mixture describes standardised noise e and
/// z = shift + scale * e, so the z-space parameters are
///   mu = shift + scale * mu_e,  log sigma = log scale + log sigma_e.
struct MdnBatch {
  std::size_t K = 0;
  std::size_t D = 0;
  Matrix logits;    // K x N
  Matrix means;     // K*D x N, z-space
  Matrix log_stds;  // K*D x N, z-space
  Matrix raw_std;   // K*D x N
  Matrix scale;     // D x N

  std::size_t size() const noexcept { return static_cast<std::size_t>(logits.cols()); }
  MdnParams params(std::size_t i) const;
};

std::size_t mdn_output_rows(std::size_t K, std::size_t D) noexcept;

/// `shift`/`scale` may be null (no residual); otherwise D x N.
MdnBatch mdn_head_forward(const Matrix& raw, std::size_t K, std::size_t D,
                          const Matrix* shift = nullptr, const Matrix* scale = nullptr);

/// Column n of the result is weights[n] * d log q(z_n) / d raw_n.
Matrix mdn_head_backward(const MdnBatch& batch, const Matrix& z, std::span<const double> weights);

}  // namespace nasmc
