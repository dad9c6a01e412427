// SPDX-License-Identifier: Apache-2.0
#pragma once

// Small neural-network toolkit with hand-written reverse-mode gradients.
//
// Layers are stateless descriptions of where their weights live inside a
// ParamVector. Forward passes work on batches stored column-wise (one column
// per particle) and fill a cache; backward passes read that cache and add
// parameter gradients into a caller-supplied accumulator laid out like the
// ParamVector, which lets several tapes share read-only weights.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nasmc/param_vector.hpp"
#include "nasmc/prng.hpp"

namespace nasmc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

double sigmoid(double x) noexcept;
double softplus(double x) noexcept;
/// Inverse of softplus for y > 0.
double softplus_inv(double y);
Vector softmax(const Vector& logits);
Vector log_softmax(const Vector& logits);
/// log(sum(exp(v))) without overflow; -inf for an empty or all -inf input.
double log_sum_exp(std::span<const double> v) noexcept;

/// Fills every element of a slice uniformly in +-1/sqrt(fan_in).
void init_uniform_fan_in(ParamVector& p, std::size_t slice, std::size_t fan_in, RngStream& s);

struct DenseCache {
  Matrix input;
  bool valid = false;
};

/// Affine map y = W x + b.
class Dense {
 public:
  Dense() = default;
  Dense(ParamVector::Builder& builder, const std::string& name, std::size_t in,
        std::size_t out);

  std::size_t in() const noexcept { return in_; }
  std::size_t out() const noexcept { return out_; }
  std::size_t weight_slice() const noexcept { return w_; }
  std::size_t bias_slice() const noexcept { return b_; }

  void init(ParamVector& p, RngStream& s) const;

  Matrix forward(const ParamVector& p, const Matrix& x, DenseCache* cache = nullptr) const;

  /// Adds dW, db into `grad` and returns dL/dx. Throws StateError if the
  /// cache was never filled by forward().
  Matrix backward(const ParamVector& p, const DenseCache& cache, const Matrix& dy,
                  std::span<double> grad) const;
  Matrix backward(ParamVector& p, const DenseCache& cache, const Matrix& dy) const {
    return backward(p, cache, dy, p.grad());
  }

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  std::size_t w_ = 0;
  std::size_t b_ = 0;
};

/// Elementwise tanh with its cached output.
struct TanhCache {
  Matrix output;
  bool valid = false;
};
Matrix tanh_forward(const Matrix& x, TanhCache* cache = nullptr);
Matrix tanh_backward(const TanhCache& cache, const Matrix& dy);

/// Hidden and cell state, one column per sequence/particle.
struct LstmState {
  Matrix h;
  Matrix c;

  static LstmState zeros(std::size_t hidden, std::size_t batch);
  std::size_t hidden() const noexcept { return static_cast<std::size_t>(h.rows()); }
  std::size_t batch() const noexcept { return static_cast<std::size_t>(h.cols()); }
};

struct LstmCache {
  Matrix xh;     // [x; h_prev]
  Matrix gates;  // activated gates, rows [i; f; o; g]
  Matrix c_prev;
  Matrix tanh_c;
  bool valid = false;
};

/// Standard LSTM cell without peepholes:
///   [i f o g] = [sig sig sig tanh](W [x; h_prev] + b)
///   c = f * c_prev + i * g,   h = o * tanh(c)
class Lstm {
 public:
  struct Grads {
    Matrix dx;
    Matrix dh_prev;
    Matrix dc_prev;
  };

  Lstm() = default;
  Lstm(ParamVector::Builder& builder, const std::string& name, std::size_t in,
       std::size_t hidden);

  std::size_t in() const noexcept { return in_; }
  std::size_t hidden() const noexcept { return hidden_; }
  std::size_t weight_slice() const noexcept { return w_; }
  std::size_t bias_slice() const noexcept { return b_; }

  void init(ParamVector& p, RngStream& s) const;

  LstmState forward(const ParamVector& p, const Matrix& x, const LstmState& prev,
                    LstmCache* cache = nullptr) const;

  /// dh, dc are gradients w.r.t. the new state's h and c.
  Grads backward(const ParamVector& p, const LstmCache& cache, const Matrix& dh,
                 const Matrix& dc, std::span<double> grad) const;

 private:
  std::size_t in_ = 0;
  std::size_t hidden_ = 0;
  std::size_t w_ = 0;
  std::size_t b_ = 0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

/// One Adam descent step on p.values using p.grad, with bias correction for
/// step index t >= 1. Zeroes p.grad afterwards.
void adam_step(ParamVector& p, AdamMoments& moments, const AdamConfig& cfg, long t);

/// Adam with its own step counter.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, AdamConfig cfg);

  void step(ParamVector& p);
  long steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return cfg_; }
  const AdamMoments& moments() const noexcept { return moments_; }

 private:
  AdamConfig cfg_;
  AdamMoments moments_;
  long t_ = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool passed = true;
};

/// Compares `analytic` against central differences of f at x.
/// Relative error per coordinate is |a - n| / max(|a|, |n|, abs_floor).
GradCheckResult check_gradient(const std::function<double(std::span<const double>)>& f,
                               std::span<const double> x, std::span<const double> analytic,
                               double h = 1e-5, double rtol = 1e-4, double abs_floor = 1e-4);

}  // namespace nasmc
