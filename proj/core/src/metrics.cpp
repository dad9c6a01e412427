// SPDX-License-Identifier: Apache-2.0
#include "nasmc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Cholesky>

#include "nasmc/errors.hpp"

namespace nasmc {

KalmanResult kalman_filter(const LinearGaussianSsm& model, const Matrix& x) {
  const Eigen::Index dx = x.rows();
  const int T = static_cast<int>(x.cols());
  if (static_cast<std::size_t>(dx) != model.obs_dim()) {
    throw InvalidArgument("kalman_filter: observation dimension mismatch");
  }
  const Matrix& A = model.A();
  const Matrix& C = model.C();
  const Matrix Q = model.q().asDiagonal();
  const Matrix R = model.r().asDiagonal();

  KalmanResult out;
  out.means.resize(A.rows(), T);
  out.covs.reserve(static_cast<std::size_t>(T));
  Vector m = model.m0();
  Matrix P = model.p0().asDiagonal();
  const double log2pi = std::log(2.0 * std::numbers::pi);

  for (int t = 0; t < T; ++t) {
    if (t > 0) {
      m = A * m;
      P = A * P * A.transpose() + Q;
    }
    const Vector innov = x.col(t) - C * m;
    const Matrix S = C * P * C.transpose() + R;
    Eigen::LLT<Matrix> llt(S);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("kalman_filter: innovation covariance not positive definite at t=" +
                           std::to_string(t + 1));
    }
    const Vector alpha = llt.solve(innov);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double lp = -0.5 * (static_cast<double>(dx) * log2pi + logdet + innov.dot(alpha));
    const Matrix K = llt.solve(C * P).transpose();  // P C^T S^-1
    m += K * innov;
    P -= K * C * P;
    P = 0.5 * (P + P.transpose());
    out.means.col(t) = m;
    out.covs.push_back(P);
    out.log_pred.push_back(lp);
    out.lml += lp;
  }
  return out;
}

double rmse(const Matrix& z_true, const Matrix& z_bar) {
  if (z_true.rows() != z_bar.rows() || z_true.cols() != z_bar.cols()) {
    throw InvalidArgument("rmse: length mismatch");
  }
  if (z_true.cols() == 0) throw InvalidArgument("rmse: empty input");
  return std::sqrt((z_true - z_bar).squaredNorm() / static_cast<double>(z_true.cols()));
}

MetricSummary summarize(std::span<const double> values, std::string name) {
  if (values.empty()) throw InvalidArgument("summarize: no values");
  MetricSummary s;
  s.name = std::move(name);
  s.count = values.size();
  double acc = 0.0;
  for (double v : values) acc += v;
  s.mean = acc / static_cast<double>(s.count);
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(s.count));
  return s;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw InvalidArgument("quantile: no values");
  if (!(q >= 0.0 && q <= 1.0)) throw InvalidArgument("quantile: q must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

}  // namespace nasmc
