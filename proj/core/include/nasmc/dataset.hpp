// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "nasmc/models.hpp"
#include "nasmc/prng.hpp"

namespace nasmc {

/// One observation sequence, columns indexed by time (column 0 is t = 1).
/// `z` is empty when the latent path is unknown.
struct Sequence {
  Matrix x;
  Matrix z;

  int length() const noexcept { return static_cast<int>(x.cols()); }
  bool has_latent() const noexcept { return z.size() > 0; }
};

struct Dataset {
  std::vector<Sequence> sequences;

  std::size_t size() const noexcept { return sequences.size(); }
  /// Sum of sequence lengths.
  long total_steps() const noexcept;
  /// Throws InvalidArgument if some latent path length differs from its x.
  void validate() const;
};

class DatasetFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ancestral sampling of z_{1:T} and x_{1:T}. Throws InvalidArgument for T < 1.
Sequence simulate(const StateSpaceModel& model, int T, RngStream s);

/// M independent sequences; sequence j uses s.fork(j).
Dataset simulate_dataset(const StateSpaceModel& model, std::size_t M, int T, const RngStream& s);

/// CSV with header `sequence_id,t,x0..,[z0..]`, one row per (sequence, t).
void write_dataset_csv(std::ostream& os, const Dataset& data);

/// Reads the format above. Rows of one sequence must be contiguous with
/// t = 1, 2, ... in order; violations raise DatasetFormatError.
Dataset read_dataset_csv(std::istream& is);

}  // namespace nasmc
