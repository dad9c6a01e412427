// SPDX-License-Identifier: Apache-2.0
#include "nasmc/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nasmc/errors.hpp"

namespace nasmc {

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) noexcept {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

double softplus_inv(double y) {
  if (!(y > 0.0)) throw InvalidArgument("softplus_inv: argument must be positive");
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

Vector log_softmax(const Vector& logits) {
  const double lse = log_sum_exp(std::span<const double>(logits.data(), logits.size()));
  return (logits.array() - lse).matrix();
}

double log_sum_exp(std::span<const double> v) noexcept {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

void init_uniform_fan_in(ParamVector& p, std::size_t slice, std::size_t fan_in, RngStream& s) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  auto m = p.map(slice);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = bound * (2.0 * s.uniform01() - 1.0);
  }
}

// ---------------------------------------------------------------------------
// Dense

Dense::Dense(ParamVector::Builder& builder, const std::string& name, std::size_t in,
             std::size_t out)
    : in_(in), out_(out) {
  w_ = builder.add(name + ".W", out, in);
  b_ = builder.add(name + ".b", out, 1);
}

void Dense::init(ParamVector& p, RngStream& s) const {
  init_uniform_fan_in(p, w_, in_, s);
  p.map(b_).setZero();
}

Matrix Dense::forward(const ParamVector& p, const Matrix& x, DenseCache* cache) const {
  if (static_cast<std::size_t>(x.rows()) != in_) {
    throw InvalidArgument("dense: input has " + std::to_string(x.rows()) + " rows, expected " +
                          std::to_string(in_));
  }
  const auto w = p.map(w_);
  const auto b = p.map(b_);
  Matrix y = w * x;
  y.colwise() += b.col(0);
  if (cache != nullptr) {
    cache->input = x;
    cache->valid = true;
  }
  return y;
}

Matrix Dense::backward(const ParamVector& p, const DenseCache& cache, const Matrix& dy,
                       std::span<double> grad) const {
  if (!cache.valid) throw StateError("dense: backward called before forward");
  if (static_cast<std::size_t>(dy.rows()) != out_ || dy.cols() != cache.input.cols()) {
    throw InvalidArgument("dense: output gradient shape mismatch");
  }
  auto dw = p.map_in(w_, grad);
  auto db = p.map_in(b_, grad);
  dw.noalias() += dy * cache.input.transpose();
  db.col(0) += dy.rowwise().sum();
  return p.map(w_).transpose() * dy;
}

// ---------------------------------------------------------------------------
// tanh

Matrix tanh_forward(const Matrix& x, TanhCache* cache) {
  Matrix y = x.array().tanh().matrix();
  if (cache != nullptr) {
    cache->output = y;
    cache->valid = true;
  }
  return y;
}

Matrix tanh_backward(const TanhCache& cache, const Matrix& dy) {
  if (!cache.valid) throw StateError("tanh: backward called before forward");
  return (dy.array() * (1.0 - cache.output.array().square())).matrix();
}

// ---------------------------------------------------------------------------
// LSTM

LstmState LstmState::zeros(std::size_t hidden, std::size_t batch) {
  const auto h = static_cast<Eigen::Index>(hidden);
  const auto n = static_cast<Eigen::Index>(batch);
  return LstmState{Matrix::Zero(h, n), Matrix::Zero(h, n)};
}

Lstm::Lstm(ParamVector::Builder& builder, const std::string& name, std::size_t in,
           std::size_t hidden)
    : in_(in), hidden_(hidden) {
  w_ = builder.add(name + ".W", 4 * hidden, in + hidden);
  b_ = builder.add(name + ".b", 4 * hidden, 1);
}

void Lstm::init(ParamVector& p, RngStream& s) const {
  init_uniform_fan_in(p, w_, in_ + hidden_, s);
  p.map(b_).setZero();
}

LstmState Lstm::forward(const ParamVector& p, const Matrix& x, const LstmState& prev,
                        LstmCache* cache) const {
  const auto H = static_cast<Eigen::Index>(hidden_);
  if (static_cast<std::size_t>(x.rows()) != in_ || prev.h.rows() != H || prev.c.rows() != H ||
      prev.h.cols() != x.cols() || prev.c.cols() != x.cols()) {
    throw InvalidArgument("lstm: input/state shape mismatch");
  }
  const Eigen::Index n = x.cols();
  const auto in = static_cast<Eigen::Index>(in_);
  Matrix xh(in + H, n);
  xh.topRows(in) = x;
  xh.bottomRows(H) = prev.h;

  Matrix z = p.map(w_) * xh;
  z.colwise() += p.map(b_).col(0);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index r = 0; r < 3 * H; ++r) z(r, j) = sigmoid(z(r, j));
    for (Eigen::Index r = 3 * H; r < 4 * H; ++r) z(r, j) = std::tanh(z(r, j));
  }

  LstmState next;
  next.c = (z.middleRows(H, H).array() * prev.c.array() +
            z.topRows(H).array() * z.bottomRows(H).array())
               .matrix();
  Matrix tanh_c = next.c.array().tanh().matrix();
  next.h = (z.middleRows(2 * H, H).array() * tanh_c.array()).matrix();

  if (cache != nullptr) {
    cache->xh = std::move(xh);
    cache->gates = std::move(z);
    cache->c_prev = prev.c;
    cache->tanh_c = std::move(tanh_c);
    cache->valid = true;
  }
  return next;
}

Lstm::Grads Lstm::backward(const ParamVector& p, const LstmCache& cache, const Matrix& dh,
                           const Matrix& dc, std::span<double> grad) const {
  if (!cache.valid) throw StateError("lstm: backward called before forward");
  const auto H = static_cast<Eigen::Index>(hidden_);
  const Eigen::Index n = cache.xh.cols();
  if (dh.rows() != H || dc.rows() != H || dh.cols() != n || dc.cols() != n) {
    throw InvalidArgument("lstm: state gradient shape mismatch");
  }
  const auto i = cache.gates.topRows(H).array();
  const auto f = cache.gates.middleRows(H, H).array();
  const auto o = cache.gates.middleRows(2 * H, H).array();
  const auto g = cache.gates.bottomRows(H).array();
  const auto tc = cache.tanh_c.array();

  const Eigen::ArrayXXd dc_total = dc.array() + dh.array() * o * (1.0 - tc.square());
  Matrix dz(4 * H, n);
  dz.topRows(H) = (dc_total * g * i * (1.0 - i)).matrix();
  dz.middleRows(H, H) = (dc_total * cache.c_prev.array() * f * (1.0 - f)).matrix();
  dz.middleRows(2 * H, H) = (dh.array() * tc * o * (1.0 - o)).matrix();
  dz.bottomRows(H) = (dc_total * i * (1.0 - g.square())).matrix();

  auto dw = p.map_in(w_, grad);
  auto db = p.map_in(b_, grad);
  dw.noalias() += dz * cache.xh.transpose();
  db.col(0) += dz.rowwise().sum();

  const Matrix dxh = p.map(w_).transpose() * dz;
  const auto in = static_cast<Eigen::Index>(in_);
  Grads out;
  out.dx = dxh.topRows(in);
  out.dh_prev = dxh.bottomRows(H);
  out.dc_prev = (dc_total * f).matrix();
  return out;
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(ParamVector& p, AdamMoments& moments, const AdamConfig& cfg, long t) {
  if (t < 1) throw InvalidArgument("adam_step: step index must be >= 1");
  const std::size_t n = p.size();
  if (moments.m.size() != n) moments.m.assign(n, 0.0);
  if (moments.v.size() != n) moments.v.assign(n, 0.0);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  auto values = p.values();
  auto grad = p.grad();
  for (std::size_t k = 0; k < n; ++k) {
    const double g = grad[k];
    moments.m[k] = cfg.beta1 * moments.m[k] + (1.0 - cfg.beta1) * g;
    moments.v[k] = cfg.beta2 * moments.v[k] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = moments.m[k] / bc1;
    const double v_hat = moments.v[k] / bc2;
    values[k] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
  p.zero_grad();
}

Adam::Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg) {
  moments_.m.assign(n, 0.0);
  moments_.v.assign(n, 0.0);
}

void Adam::step(ParamVector& p) { adam_step(p, moments_, cfg_, ++t_); }

// ---------------------------------------------------------------------------
// Gradient checking

GradCheckResult check_gradient(const std::function<double(std::span<const double>)>& f,
                               std::span<const double> x, std::span<const double> analytic,
                               double h, double rtol, double abs_floor) {
  if (x.size() != analytic.size()) throw InvalidArgument("check_gradient: length mismatch");
  std::vector<double> probe(x.begin(), x.end());
  GradCheckResult res;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    const double orig = probe[k];
    probe[k] = orig + h;
    const double fp = f(probe);
    probe[k] = orig - h;
    const double fm = f(probe);
    probe[k] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), abs_floor});
    const double rel = std::abs(analytic[k] - numeric) / denom;
    if (!(rel <= res.max_rel_error)) {
      res.max_rel_error = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
      res.worst_index = k;
    }
  }
  res.passed = res.max_rel_error < rtol;
  return res;
}

}  // namespace nasmc
