// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nasmc/nnet.hpp"
#include "nasmc/prng.hpp"

namespace nasmc {

using ConstVecRef = Eigen::Ref<const Vector>;
using VecRef = Eigen::Ref<Vector>;

/// State-space model with diagonal-Gaussian initial, transition and
/// observation densities:
///
///   z_1 ~ p(z_1),  z_t ~ p(z_t | z_{t-1}, t),  x_t ~ p(x_t | z_t, t).
///
/// Time indices are 1-based and a transition is labelled with the index of
/// the step it enters, so the first transition uses t = 2.
///
/// Densities are first-order Markov in z. All methods are const; a model is
/// immutable after construction and safe to share between threads.
class StateSpaceModel {
 public:
  virtual ~StateSpaceModel() = default;

  virtual std::string name() const = 0;
  virtual std::size_t state_dim() const = 0;
  virtual std::size_t obs_dim() const = 0;

  virtual void init_moments(VecRef mean, VecRef std) const = 0;
  virtual void trans_moments(const ConstVecRef& z_prev, int t, VecRef mean, VecRef std) const = 0;
  virtual void obs_moments(const ConstVecRef& z, int t, VecRef mean, VecRef std) const = 0;

  virtual double log_init(const ConstVecRef& z) const;
  virtual double log_trans(const ConstVecRef& z_prev, const ConstVecRef& z, int t) const;
  virtual double log_obs(const ConstVecRef& z, const ConstVecRef& x, int t) const;

  virtual void sample_init(RngStream& s, VecRef z) const;
  virtual void sample_trans(const ConstVecRef& z_prev, int t, RngStream& s, VecRef z) const;
  virtual void sample_obs(const ConstVecRef& z, int t, RngStream& s, VecRef x) const;

  /// Model parameters theta as a flat vector.
  virtual std::vector<double> theta() const = 0;
  virtual std::vector<std::string> theta_names() const = 0;
  /// Copy of this model with theta replaced. Throws InvalidArgument for
  /// values outside the parameter domain.
  virtual std::unique_ptr<StateSpaceModel> with_theta(std::span<const double> theta) const = 0;

  virtual bool has_theta_grad() const { return false; }
  /// grad += weight * d/dtheta [log p(z_t | z_{t-1}) + log p(x_t | z_t)].
  /// At t = 1 `z_prev` is ignored and the initial density is used instead.
  /// Default implementation throws UnsupportedOperation.
  virtual void accumulate_theta_grad(const ConstVecRef& z_prev, const ConstVecRef& z,
                                     const ConstVecRef& x, int t, double weight,
                                     std::span<double> grad) const;
};

/// Scalar nonlinear benchmark model:
///   z_1 ~ N(0, init_var),  z_t ~ N(f(z_{t-1}, t), sigma_v^2),  x_t ~ N(g(z_t), sigma_w^2)
///   f(z, t) = z/2 + 25 z / (1 + z^2) + 8 cos(1.2 t),  g(z) = z^2 / 20.
/// theta = (sigma_v, sigma_w).
class BenchmarkNssm final : public StateSpaceModel {
 public:
  static constexpr double kDefaultInitVar = 5.0;

  BenchmarkNssm(double sigma_v, double sigma_w, double init_var = kDefaultInitVar);

  static double f(double z, int t) noexcept;
  static double g(double z) noexcept;

  double sigma_v() const noexcept { return sigma_v_; }
  double sigma_w() const noexcept { return sigma_w_; }
  double init_var() const noexcept { return init_var_; }

  std::string name() const override { return "nssm"; }
  std::size_t state_dim() const override { return 1; }
  std::size_t obs_dim() const override { return 1; }

  void init_moments(VecRef mean, VecRef std) const override;
  void trans_moments(const ConstVecRef& z_prev, int t, VecRef mean, VecRef std) const override;
  void obs_moments(const ConstVecRef& z, int t, VecRef mean, VecRef std) const override;

  std::vector<double> theta() const override { return {sigma_v_, sigma_w_}; }
  std::vector<std::string> theta_names() const override { return {"sigma_v", "sigma_w"}; }
  std::unique_ptr<StateSpaceModel> with_theta(std::span<const double> theta) const override;

  bool has_theta_grad() const override { return true; }
  void accumulate_theta_grad(const ConstVecRef& z_prev, const ConstVecRef& z, const ConstVecRef& x,
                             int t, double weight, std::span<double> grad) const override;

 private:
  double sigma_v_;
  double sigma_w_;
  double init_var_;
};

/// Linear-Gaussian model with diagonal noise:
///   z_1 ~ N(m0, diag(p0)),  z_t ~ N(A z_{t-1}, diag(q)),  x_t ~ N(C z_t, diag(r)).
/// theta = (sqrt(q_1..q_Dz), sqrt(r_1..r_Dx)), i.e. noise standard deviations.
class LinearGaussianSsm final : public StateSpaceModel {
 public:
  /// Throws InvalidArgument on shape mismatch or a non-positive variance.
  LinearGaussianSsm(Matrix A, Matrix C, Vector q, Vector r, Vector m0, Vector p0);

  /// Scalar convenience constructor.
  static LinearGaussianSsm scalar(double a, double c, double q, double r, double m0 = 0.0,
                                  double p0 = 1.0);

  const Matrix& A() const noexcept { return A_; }
  const Matrix& C() const noexcept { return C_; }
  const Vector& q() const noexcept { return q_; }
  const Vector& r() const noexcept { return r_; }
  const Vector& m0() const noexcept { return m0_; }
  const Vector& p0() const noexcept { return p0_; }

  std::string name() const override { return "lgssm"; }
  std::size_t state_dim() const override { return static_cast<std::size_t>(A_.rows()); }
  std::size_t obs_dim() const override { return static_cast<std::size_t>(C_.rows()); }

  void init_moments(VecRef mean, VecRef std) const override;
  void trans_moments(const ConstVecRef& z_prev, int t, VecRef mean, VecRef std) const override;
  void obs_moments(const ConstVecRef& z, int t, VecRef mean, VecRef std) const override;

  std::vector<double> theta() const override;
  std::vector<std::string> theta_names() const override;
  std::unique_ptr<StateSpaceModel> with_theta(std::span<const double> theta) const override;

  bool has_theta_grad() const override { return true; }
  void accumulate_theta_grad(const ConstVecRef& z_prev, const ConstVecRef& z, const ConstVecRef& x,
                             int t, double weight, std::span<double> grad) const override;

 private:
  Matrix A_;
  Matrix C_;
  Vector q_;
  Vector r_;
  Vector m0_;
  Vector p0_;
  Vector q_std_;
  Vector r_std_;
  Vector p0_std_;
};

}  // namespace nasmc
