// SPDX-License-Identifier: Apache-2.0
#include "nasmc/param_vector.hpp"

#include <algorithm>
#include <cmath>

#include "nasmc/errors.hpp"

namespace nasmc {

std::size_t ParamVector::Builder::add(std::string name, std::size_t rows, std::size_t cols) {
  for (const auto& s : slices_) {
    if (s.name == name) throw InvalidArgument("duplicate parameter slice: " + name);
  }
  slices_.push_back(ParamSlice{std::move(name), total_, rows, cols});
  total_ += rows * cols;
  return slices_.size() - 1;
}

ParamVector ParamVector::Builder::build() const {
  ParamVector p;
  p.slices_ = slices_;
  p.values_.assign(total_, 0.0);
  p.grad_.assign(total_, 0.0);
  return p;
}

const ParamSlice& ParamVector::slice(const std::string& name) const {
  return slices_[slice_index(name)];
}

std::size_t ParamVector::slice_index(const std::string& name) const {
  for (std::size_t i = 0; i < slices_.size(); ++i) {
    if (slices_[i].name == name) return i;
  }
  throw InvalidArgument("unknown parameter slice: " + name);
}

RowMatrixMap ParamVector::map(std::size_t index) {
  const auto& s = slices_.at(index);
  return RowMatrixMap(values_.data() + s.offset, static_cast<Eigen::Index>(s.rows),
                      static_cast<Eigen::Index>(s.cols));
}

ConstRowMatrixMap ParamVector::map(std::size_t index) const {
  const auto& s = slices_.at(index);
  return ConstRowMatrixMap(values_.data() + s.offset, static_cast<Eigen::Index>(s.rows),
                           static_cast<Eigen::Index>(s.cols));
}

RowMatrixMap ParamVector::map_in(std::size_t index, std::span<double> buffer) const {
  if (buffer.size() != values_.size()) {
    throw InvalidArgument("gradient buffer length does not match parameter vector");
  }
  const auto& s = slices_.at(index);
  return RowMatrixMap(buffer.data() + s.offset, static_cast<Eigen::Index>(s.rows),
                      static_cast<Eigen::Index>(s.cols));
}

void ParamVector::zero_grad() noexcept { std::fill(grad_.begin(), grad_.end(), 0.0); }

double ParamVector::grad_norm() const noexcept {
  double acc = 0.0;
  for (double g : grad_) acc += g * g;
  return std::sqrt(acc);
}

}  // namespace nasmc
