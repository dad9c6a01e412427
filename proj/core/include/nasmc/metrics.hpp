// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nasmc/models.hpp"

namespace nasmc {

struct KalmanResult {
  Matrix means;               // D_z x T filtered means
  std::vector<Matrix> covs;   // filtered covariances
  std::vector<double> log_pred;  // log p(x_t | x_{1:t-1})
  double lml = 0.0;
};

/// Exact filtering for a linear-Gaussian model. Throws NumericalError when
/// an innovation covariance is not positive definite.
KalmanResult kalman_filter(const LinearGaussianSsm& model, const Matrix& x);

/// sqrt((1/T) sum_t ||z_t - zbar_t||^2) over D x T inputs. Throws
/// InvalidArgument on a shape mismatch or empty input.
double rmse(const Matrix& z_true, const Matrix& z_bar);

struct MetricSummary {
  std::string name;
  double mean = 0.0;
  double std = 0.0;  // population
  std::size_t count = 0;
};

/// Throws InvalidArgument for an empty input.
MetricSummary summarize(std::span<const double> values, std::string name = "");

/// Linear-interpolated sample quantile, q in [0, 1].
double quantile(std::vector<double> values, double q);
double median(std::vector<double> values);

}  // namespace nasmc
