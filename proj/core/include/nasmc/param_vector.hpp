// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace nasmc {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixMap = Eigen::Map<RowMatrix>;
using ConstRowMatrixMap = Eigen::Map<const RowMatrix>;

/// A named row-major block inside a ParamVector.
struct ParamSlice {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const noexcept { return rows * cols; }
};

/// Flat parameter store with a paired gradient accumulator.
///
/// Slices are laid out back to back in declaration order, so they are
/// disjoint and cover the whole vector. values and grad always have the same
/// length.
class ParamVector {
 public:
  class Builder {
   public:
    /// Declares a rows x cols slice and returns its index.
    std::size_t add(std::string name, std::size_t rows, std::size_t cols = 1);
    ParamVector build() const;

   private:
    std::vector<ParamSlice> slices_;
    std::size_t total_ = 0;
  };

  ParamVector() = default;

  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> grad() noexcept { return grad_; }
  std::span<const double> grad() const noexcept { return grad_; }

  const std::vector<ParamSlice>& slices() const noexcept { return slices_; }
  const ParamSlice& slice(std::size_t index) const { return slices_.at(index); }
  /// Throws InvalidArgument for an unknown name.
  const ParamSlice& slice(const std::string& name) const;
  std::size_t slice_index(const std::string& name) const;

  RowMatrixMap map(std::size_t index);
  ConstRowMatrixMap map(std::size_t index) const;
  /// View of `index` inside an external accumulator laid out like this vector.
  RowMatrixMap map_in(std::size_t index, std::span<double> buffer) const;

  void zero_grad() noexcept;
  /// Euclidean norm of grad.
  double grad_norm() const noexcept;

 private:
  std::vector<ParamSlice> slices_;
  std::vector<double> values_;
  std::vector<double> grad_;
};

}  // namespace nasmc
