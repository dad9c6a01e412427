// SPDX-License-Identifier: Apache-2.0
#include "nasmc/models.hpp"

#include <cmath>

#include "nasmc/errors.hpp"
#include "nasmc/mdn.hpp"

namespace nasmc {

// ---------------------------------------------------------------------------
// Generic Gaussian plumbing

namespace {

// Stack storage for the per-particle moment buffers; wider models use the heap.
constexpr Eigen::Index kSmallDim = 16;
using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kSmallDim, 1>;

template <class Fn>
auto with_moments(std::size_t dim, Fn&& fn) {
  const auto n = static_cast<Eigen::Index>(dim);
  if (n <= kSmallDim) {
    SmallVec mean(n), std(n);
    return fn(mean, std);
  }
  Vector mean(n), std(n);
  return fn(mean, std);
}

template <class V>
double diag_log_normal(const ConstVecRef& v, const V& mean, const V& std) {
  double acc = 0.0;
  for (Eigen::Index d = 0; d < v.size(); ++d) acc += log_normal(v(d), mean(d), std(d));
  return acc;
}

void check_dim(const ConstVecRef& v, std::size_t dim, const char* what) {
  if (static_cast<std::size_t>(v.size()) != dim) {
    throw InvalidArgument(std::string(what) + ": dimension mismatch");
  }
}

}  // namespace

double StateSpaceModel::log_init(const ConstVecRef& z) const {
  check_dim(z, state_dim(), "log_init");
  return with_moments(state_dim(), [&](auto& mean, auto& std) {
    init_moments(mean, std);
    return diag_log_normal(z, mean, std);
  });
}

double StateSpaceModel::log_trans(const ConstVecRef& z_prev, const ConstVecRef& z, int t) const {
  check_dim(z, state_dim(), "log_trans");
  return with_moments(state_dim(), [&](auto& mean, auto& std) {
    trans_moments(z_prev, t, mean, std);
    return diag_log_normal(z, mean, std);
  });
}

double StateSpaceModel::log_obs(const ConstVecRef& z, const ConstVecRef& x, int t) const {
  check_dim(x, obs_dim(), "log_obs");
  return with_moments(obs_dim(), [&](auto& mean, auto& std) {
    obs_moments(z, t, mean, std);
    return diag_log_normal(x, mean, std);
  });
}

void StateSpaceModel::sample_init(RngStream& s, VecRef z) const {
  with_moments(state_dim(), [&](auto& mean, auto& std) {
    init_moments(mean, std);
    for (Eigen::Index d = 0; d < z.size(); ++d) z(d) = mean(d) + std(d) * s.std_normal();
    return 0;
  });
}

void StateSpaceModel::sample_trans(const ConstVecRef& z_prev, int t, RngStream& s, VecRef z) const {
  with_moments(state_dim(), [&](auto& mean, auto& std) {
    trans_moments(z_prev, t, mean, std);
    for (Eigen::Index d = 0; d < z.size(); ++d) z(d) = mean(d) + std(d) * s.std_normal();
    return 0;
  });
}

void StateSpaceModel::sample_obs(const ConstVecRef& z, int t, RngStream& s, VecRef x) const {
  with_moments(obs_dim(), [&](auto& mean, auto& std) {
    obs_moments(z, t, mean, std);
    for (Eigen::Index d = 0; d < x.size(); ++d) x(d) = mean(d) + std(d) * s.std_normal();
    return 0;
  });
}

void StateSpaceModel::accumulate_theta_grad(const ConstVecRef&, const ConstVecRef&,
                                            const ConstVecRef&, int, double,
                                            std::span<double>) const {
  throw UnsupportedOperation("model '" + name() + "' has no differentiable theta");
}

// ---------------------------------------------------------------------------
// BenchmarkNssm

BenchmarkNssm::BenchmarkNssm(double sigma_v, double sigma_w, double init_var)
    : sigma_v_(sigma_v), sigma_w_(sigma_w), init_var_(init_var) {
  if (!(sigma_v > 0.0) || !(sigma_w > 0.0) || !(init_var > 0.0)) {
    throw InvalidArgument("nssm: sigma_v, sigma_w and init_var must be positive");
  }
}

double BenchmarkNssm::f(double z, int t) noexcept {
  return z / 2.0 + 25.0 * z / (1.0 + z * z) + 8.0 * std::cos(1.2 * t);
}

double BenchmarkNssm::g(double z) noexcept { return z * z / 20.0; }

void BenchmarkNssm::init_moments(VecRef mean, VecRef std) const {
  mean(0) = 0.0;
  std(0) = std::sqrt(init_var_);
}

void BenchmarkNssm::trans_moments(const ConstVecRef& z_prev, int t, VecRef mean, VecRef std) const {
  mean(0) = f(z_prev(0), t);
  std(0) = sigma_v_;
}

void BenchmarkNssm::obs_moments(const ConstVecRef& z, int, VecRef mean, VecRef std) const {
  mean(0) = g(z(0));
  std(0) = sigma_w_;
}

std::unique_ptr<StateSpaceModel> BenchmarkNssm::with_theta(std::span<const double> theta) const {
  if (theta.size() != 2) throw InvalidArgument("nssm: theta has two components");
  return std::make_unique<BenchmarkNssm>(theta[0], theta[1], init_var_);
}

void BenchmarkNssm::accumulate_theta_grad(const ConstVecRef& z_prev, const ConstVecRef& z,
                                          const ConstVecRef& x, int t, double weight,
                                          std::span<double> grad) const {
  if (grad.size() != 2) throw InvalidArgument("nssm: theta gradient has two components");
  if (t > 1) {
    const double e = z(0) - f(z_prev(0), t);
    grad[0] += weight * (e * e / (sigma_v_ * sigma_v_ * sigma_v_) - 1.0 / sigma_v_);
  }
  const double e = x(0) - g(z(0));
  grad[1] += weight * (e * e / (sigma_w_ * sigma_w_ * sigma_w_) - 1.0 / sigma_w_);
}

// ---------------------------------------------------------------------------
// LinearGaussianSsm

LinearGaussianSsm::LinearGaussianSsm(Matrix A, Matrix C, Vector q, Vector r, Vector m0, Vector p0)
    : A_(std::move(A)), C_(std::move(C)), q_(std::move(q)), r_(std::move(r)),
      m0_(std::move(m0)), p0_(std::move(p0)) {
  const Eigen::Index dz = A_.rows();
  if (dz < 1 || A_.cols() != dz || C_.cols() != dz || C_.rows() < 1 || q_.size() != dz ||
      r_.size() != C_.rows() || m0_.size() != dz || p0_.size() != dz) {
    throw InvalidArgument("lgssm: inconsistent dimensions");
  }
  if ((q_.array() <= 0.0).any() || (r_.array() <= 0.0).any() || (p0_.array() <= 0.0).any() ||
      !q_.allFinite() || !r_.allFinite() || !p0_.allFinite()) {
    throw InvalidArgument("lgssm: covariances must be positive definite");
  }
  q_std_ = q_.array().sqrt();
  r_std_ = r_.array().sqrt();
  p0_std_ = p0_.array().sqrt();
}

LinearGaussianSsm LinearGaussianSsm::scalar(double a, double c, double q, double r, double m0,
                                            double p0) {
  return LinearGaussianSsm(Matrix::Constant(1, 1, a), Matrix::Constant(1, 1, c),
                           Vector::Constant(1, q), Vector::Constant(1, r),
                           Vector::Constant(1, m0), Vector::Constant(1, p0));
}

void LinearGaussianSsm::init_moments(VecRef mean, VecRef std) const {
  mean = m0_;
  std = p0_std_;
}

void LinearGaussianSsm::trans_moments(const ConstVecRef& z_prev, int, VecRef mean,
                                      VecRef std) const {
  mean.noalias() = A_ * z_prev;
  std = q_std_;
}

void LinearGaussianSsm::obs_moments(const ConstVecRef& z, int, VecRef mean, VecRef std) const {
  mean.noalias() = C_ * z;
  std = r_std_;
}

std::vector<double> LinearGaussianSsm::theta() const {
  std::vector<double> th;
  for (Eigen::Index i = 0; i < q_std_.size(); ++i) th.push_back(q_std_(i));
  for (Eigen::Index i = 0; i < r_std_.size(); ++i) th.push_back(r_std_(i));
  return th;
}

std::vector<std::string> LinearGaussianSsm::theta_names() const {
  std::vector<std::string> names;
  const bool scalar = q_.size() == 1 && r_.size() == 1;
  for (Eigen::Index i = 0; i < q_.size(); ++i) {
    names.push_back(scalar ? "process_std" : "process_std_" + std::to_string(i));
  }
  for (Eigen::Index i = 0; i < r_.size(); ++i) {
    names.push_back(scalar ? "obs_std" : "obs_std_" + std::to_string(i));
  }
  return names;
}

std::unique_ptr<StateSpaceModel> LinearGaussianSsm::with_theta(std::span<const double> theta) const {
  if (theta.size() != static_cast<std::size_t>(q_.size() + r_.size())) {
    throw InvalidArgument("lgssm: theta length mismatch");
  }
  Vector q(q_.size()), r(r_.size());
  for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = theta[static_cast<std::size_t>(i)] * theta[static_cast<std::size_t>(i)];
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    const double s = theta[static_cast<std::size_t>(q_.size() + i)];
    r(i) = s * s;
  }
  for (double v : theta) {
    if (!(v > 0.0)) throw InvalidArgument("lgssm: noise standard deviations must be positive");
  }
  return std::make_unique<LinearGaussianSsm>(A_, C_, q, r, m0_, p0_);
}

void LinearGaussianSsm::accumulate_theta_grad(const ConstVecRef& z_prev, const ConstVecRef& z,
                                              const ConstVecRef& x, int t, double weight,
                                              std::span<double> grad) const {
  const auto dz = q_.size();
  if (grad.size() != static_cast<std::size_t>(dz + r_.size())) {
    throw InvalidArgument("lgssm: theta gradient length mismatch");
  }
  if (t > 1) {
    const Vector e = z - A_ * z_prev;
    for (Eigen::Index i = 0; i < dz; ++i) {
      const double s = q_std_(i);
      grad[static_cast<std::size_t>(i)] += weight * (e(i) * e(i) / (s * s * s) - 1.0 / s);
    }
  }
  const Vector e = x - C_ * z;
  for (Eigen::Index i = 0; i < r_.size(); ++i) {
    const double s = r_std_(i);
    grad[static_cast<std::size_t>(dz + i)] += weight * (e(i) * e(i) / (s * s * s) - 1.0 / s);
  }
}

}  // namespace nasmc
