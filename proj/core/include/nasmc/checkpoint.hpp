// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nasmc/param_vector.hpp"

namespace nasmc {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedArray {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major
};

/// Text checkpoint: ordered metadata pairs plus named row-major arrays.
///
///   nasmc-checkpoint 1
///   meta <key> <value...>
///   array <name> <rows> <cols>
///   <row of hex-float values>        (rows lines)
///   end
///
/// Values are written as C99 hex floats so a write/read cycle is bit-exact.
struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<NamedArray> arrays;

  std::optional<std::string> meta_value(const std::string& key) const;
  const NamedArray* find(const std::string& name) const;
};

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
/// Throws CheckpointError on malformed input.
Checkpoint read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws CheckpointError("checkpoint not found: ...") for a missing file and
/// CheckpointError("corrupt checkpoint ...") for a malformed one.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Appends every slice of `p` as an array named after the slice.
void append_params(Checkpoint& ckpt, const ParamVector& p, const std::string& prefix = "");
/// Copies arrays named prefix + slice.name into p; names and shapes must match.
void restore_params(const Checkpoint& ckpt, ParamVector& p, const std::string& prefix = "");

}  // namespace nasmc
