// SPDX-License-Identifier: Apache-2.0
#include "nasmc/mdn.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "nasmc/errors.hpp"

namespace nasmc {
namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

double component_log_density(const MdnParams& m, Eigen::Index k,
                             const Eigen::Ref<const Vector>& z) {
  double acc = 0.0;
  for (Eigen::Index d = 0; d < z.size(); ++d) {
    const double ls = m.log_stds(d, k);
    const double u = (z(d) - m.means(d, k)) * std::exp(-ls);
    acc += -kHalfLog2Pi - ls - 0.5 * u * u;
  }
  return acc;
}

void check_point(const MdnParams& m, const Eigen::Ref<const Vector>& z) {
  m.validate();
  if (static_cast<std::size_t>(z.size()) != m.dim()) {
    throw InvalidArgument("mdn: point dimension does not match mixture");
  }
}

}  // namespace

double log_normal(double z, double mean, double std) noexcept {
  const double u = (z - mean) / std;
  return -kHalfLog2Pi - std::log(std) - 0.5 * u * u;
}

void MdnParams::validate() const {
  if (mix_logits.size() < 1) throw InvalidArgument("mdn: need at least one component");
  if (means.cols() != mix_logits.size() || log_stds.cols() != mix_logits.size() ||
      log_stds.rows() != means.rows()) {
    throw InvalidArgument("mdn: inconsistent parameter shapes");
  }
}

double mdn_log_density(const MdnParams& m, const Eigen::Ref<const Vector>& z) {
  check_point(m, z);
  const Vector log_pi = log_softmax(m.mix_logits);
  std::vector<double> terms(static_cast<std::size_t>(log_pi.size()));
  for (Eigen::Index k = 0; k < log_pi.size(); ++k) {
    terms[static_cast<std::size_t>(k)] = log_pi(k) + component_log_density(m, k, z);
  }
  return log_sum_exp(terms);
}

double mdn_log_density_grad(const MdnParams& m, const Eigen::Ref<const Vector>& z, MdnGrad& grad) {
  check_point(m, z);
  const Eigen::Index K = m.mix_logits.size();
  const Eigen::Index D = m.means.rows();
  const Vector log_pi = log_softmax(m.mix_logits);
  std::vector<double> terms(static_cast<std::size_t>(K));
  for (Eigen::Index k = 0; k < K; ++k) {
    terms[static_cast<std::size_t>(k)] = log_pi(k) + component_log_density(m, k, z);
  }
  const double lse = log_sum_exp(terms);

  grad.d_logits.resize(K);
  grad.d_means.resize(D, K);
  grad.d_log_stds.resize(D, K);
  for (Eigen::Index k = 0; k < K; ++k) {
    const double resp = std::exp(terms[static_cast<std::size_t>(k)] - lse);
    grad.d_logits(k) = resp - std::exp(log_pi(k));
    for (Eigen::Index d = 0; d < D; ++d) {
      const double inv_s = std::exp(-m.log_stds(d, k));
      const double u = (z(d) - m.means(d, k)) * inv_s;
      grad.d_means(d, k) = resp * u * inv_s;
      grad.d_log_stds(d, k) = resp * (u * u - 1.0);
    }
  }
  return lse;
}

Vector mdn_sample(const MdnParams& m, RngStream& s) {
  m.validate();
  const Eigen::Index K = m.mix_logits.size();
  Eigen::Index k = 0;
  if (K > 1) {
    const Vector pi = m.mix_weights();
    const double u = s.uniform01();
    double cum = 0.0;
    k = K - 1;
    for (Eigen::Index j = 0; j < K; ++j) {
      cum += pi(j);
      if (u < cum) {
        k = j;
        break;
      }
    }
    // Zero-weight components can only be hit through rounding at the top end.
    while (k > 0 && pi(k) == 0.0) --k;
  }
  Vector z(m.means.rows());
  for (Eigen::Index d = 0; d < z.size(); ++d) {
    z(d) = m.means(d, k) + std::exp(m.log_stds(d, k)) * s.std_normal();
  }
  return z;
}

MdnParams MdnBatch::params(std::size_t i) const {
  const auto col = static_cast<Eigen::Index>(i);
  const auto k = static_cast<Eigen::Index>(K);
  const auto d = static_cast<Eigen::Index>(D);
  MdnParams p;
  p.mix_logits = logits.col(col);
  p.means.resize(d, k);
  p.log_stds.resize(d, k);
  for (Eigen::Index c = 0; c < k; ++c) {
    for (Eigen::Index j = 0; j < d; ++j) {
      p.means(j, c) = means(c * d + j, col);
      p.log_stds(j, c) = log_stds(c * d + j, col);
    }
  }
  return p;
}

std::size_t mdn_output_rows(std::size_t K, std::size_t D) noexcept { return K * (1 + 2 * D); }

MdnBatch mdn_head_forward(const Matrix& raw, std::size_t K, std::size_t D, const Matrix* shift,
                          const Matrix* scale) {
  if (static_cast<std::size_t>(raw.rows()) != mdn_output_rows(K, D)) {
    throw InvalidArgument("mdn head: raw output has wrong number of rows");
  }
  const Eigen::Index n = raw.cols();
  const auto k = static_cast<Eigen::Index>(K);
  const auto d = static_cast<Eigen::Index>(D);
  if ((shift == nullptr) != (scale == nullptr)) {
    throw InvalidArgument("mdn head: shift and scale must be given together");
  }
  if (shift != nullptr && (shift->rows() != d || shift->cols() != n || scale->rows() != d ||
                           scale->cols() != n)) {
    throw InvalidArgument("mdn head: residual shift/scale shape mismatch");
  }

  MdnBatch b;
  b.K = K;
  b.D = D;
  b.logits = raw.topRows(k);
  b.means = raw.middleRows(k, k * d);
  b.raw_std = raw.bottomRows(k * d);
  b.log_stds.resize(k * d, n);
  b.scale = scale != nullptr ? *scale : Matrix::Ones(d, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index c = 0; c < k; ++c) {
      for (Eigen::Index dd = 0; dd < d; ++dd) {
        const Eigen::Index r = c * d + dd;
        const double sigma_e = softplus(b.raw_std(r, j)) + kSigmaFloor;
        double log_sigma = std::log(sigma_e);
        if (shift != nullptr) {
          b.means(r, j) = (*shift)(dd, j) + (*scale)(dd, j) * b.means(r, j);
          log_sigma += std::log((*scale)(dd, j));
        }
        b.log_stds(r, j) = log_sigma;
      }
    }
  }
  return b;
}

Matrix mdn_head_backward(const MdnBatch& batch, const Matrix& z, std::span<const double> weights) {
  const Eigen::Index n = static_cast<Eigen::Index>(batch.size());
  const auto k = static_cast<Eigen::Index>(batch.K);
  const auto d = static_cast<Eigen::Index>(batch.D);
  if (z.rows() != d || z.cols() != n || weights.size() != batch.size()) {
    throw InvalidArgument("mdn head backward: shape mismatch");
  }
  Matrix draw = Matrix::Zero(static_cast<Eigen::Index>(mdn_output_rows(batch.K, batch.D)), n);
  MdnGrad g;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double w = weights[static_cast<std::size_t>(j)];
    if (w == 0.0) continue;
    const MdnParams p = batch.params(static_cast<std::size_t>(j));
    mdn_log_density_grad(p, z.col(j), g);
    draw.col(j).head(k) = w * g.d_logits;
    for (Eigen::Index c = 0; c < k; ++c) {
      for (Eigen::Index dd = 0; dd < d; ++dd) {
        const Eigen::Index r = c * d + dd;
        draw(k + r, j) = w * g.d_means(dd, c) * batch.scale(dd, j);
        const double raw = batch.raw_std(r, j);
        const double sigma_e = softplus(raw) + kSigmaFloor;
        draw(k + k * d + r, j) = w * g.d_log_stds(dd, c) * sigmoid(raw) / sigma_e;
      }
    }
  }
  return draw;
}

}  // namespace nasmc
