// SPDX-License-Identifier: Apache-2.0
#include "nasmc/dataset.hpp"

#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <string>

#include "nasmc/errors.hpp"

namespace nasmc {

long Dataset::total_steps() const noexcept {
  long total = 0;
  for (const auto& s : sequences) total += s.length();
  return total;
}

void Dataset::validate() const {
  for (const auto& s : sequences) {
    if (s.has_latent() && s.z.cols() != s.x.cols()) {
      throw InvalidArgument("dataset: latent and observation lengths differ");
    }
  }
}

Sequence simulate(const StateSpaceModel& model, int T, RngStream s) {
  if (T < 1) throw InvalidArgument("simulate: T must be >= 1");
  const auto dz = static_cast<Eigen::Index>(model.state_dim());
  const auto dx = static_cast<Eigen::Index>(model.obs_dim());
  Sequence seq{Matrix(dx, T), Matrix(dz, T)};
  model.sample_init(s, seq.z.col(0));
  model.sample_obs(seq.z.col(0), 1, s, seq.x.col(0));
  for (int t = 2; t <= T; ++t) {
    model.sample_trans(seq.z.col(t - 2), t, s, seq.z.col(t - 1));
    model.sample_obs(seq.z.col(t - 1), t, s, seq.x.col(t - 1));
  }
  return seq;
}

Dataset simulate_dataset(const StateSpaceModel& model, std::size_t M, int T, const RngStream& s) {
  Dataset data;
  data.sequences.reserve(M);
  for (std::size_t j = 0; j < M; ++j) data.sequences.push_back(simulate(model, T, s.fork(j)));
  return data;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double to_double(const std::string& s, long line_no) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') {
    throw DatasetFormatError("line " + std::to_string(line_no) + ": bad number '" + s + "'");
  }
  return v;
}

long to_long(const std::string& s, long line_no) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0') {
    throw DatasetFormatError("line " + std::to_string(line_no) + ": bad integer '" + s + "'");
  }
  return v;
}

}  // namespace

void write_dataset_csv(std::ostream& os, const Dataset& data) {
  data.validate();
  if (data.sequences.empty()) {
    os << "sequence_id,t\n";
    return;
  }
  const auto& first = data.sequences.front();
  const Eigen::Index dx = first.x.rows();
  const bool latent = first.has_latent();
  const Eigen::Index dz = latent ? first.z.rows() : 0;
  os << "sequence_id,t";
  for (Eigen::Index d = 0; d < dx; ++d) os << ",x" << d;
  for (Eigen::Index d = 0; d < dz; ++d) os << ",z" << d;
  os << '\n';
  for (std::size_t j = 0; j < data.sequences.size(); ++j) {
    const auto& s = data.sequences[j];
    if (s.x.rows() != dx || s.has_latent() != latent || (latent && s.z.rows() != dz)) {
      throw InvalidArgument("dataset: sequences have inconsistent dimensions");
    }
    for (Eigen::Index t = 0; t < s.x.cols(); ++t) {
      os << j << ',' << (t + 1);
      for (Eigen::Index d = 0; d < dx; ++d) os << ',' << fmt(s.x(d, t));
      for (Eigen::Index d = 0; d < dz; ++d) os << ',' << fmt(s.z(d, t));
      os << '\n';
    }
  }
}

Dataset read_dataset_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DatasetFormatError("empty dataset file");
  const auto header = split(line);
  if (header.size() < 2 || header[0] != "sequence_id" || header[1] != "t") {
    throw DatasetFormatError("header must start with sequence_id,t");
  }
  Eigen::Index dx = 0, dz = 0;
  for (std::size_t c = 2; c < header.size(); ++c) {
    const std::string expect_x = "x" + std::to_string(dx);
    const std::string expect_z = "z" + std::to_string(dz);
    if (dz == 0 && header[c] == expect_x) {
      ++dx;
    } else if (header[c] == expect_z) {
      ++dz;
    } else {
      throw DatasetFormatError("unexpected column '" + header[c] + "'");
    }
  }

  Dataset data;
  std::vector<std::vector<double>> xs, zs;
  long current_id = -1;
  long expected_t = 1;
  std::set<long> seen;
  long line_no = 1;

  auto flush = [&]() {
    if (xs.empty()) return;
    const auto T = static_cast<Eigen::Index>(xs.size());
    Sequence s{Matrix(dx, T), dz > 0 ? Matrix(dz, T) : Matrix()};
    for (Eigen::Index t = 0; t < T; ++t) {
      for (Eigen::Index d = 0; d < dx; ++d) s.x(d, t) = xs[t][d];
      for (Eigen::Index d = 0; d < dz; ++d) s.z(d, t) = zs[t][d];
    }
    data.sequences.push_back(std::move(s));
    xs.clear();
    zs.clear();
  };

  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) {
      throw DatasetFormatError("line " + std::to_string(line_no) + ": expected " +
                               std::to_string(header.size()) + " columns");
    }
    const long id = to_long(cells[0], line_no);
    const long t = to_long(cells[1], line_no);
    if (id != current_id) {
      if (seen.count(id) != 0) {
        throw DatasetFormatError("line " + std::to_string(line_no) + ": sequence " +
                                 std::to_string(id) + " is not contiguous");
      }
      flush();
      seen.insert(id);
      current_id = id;
      expected_t = 1;
    }
    if (t != expected_t) {
      throw DatasetFormatError("line " + std::to_string(line_no) + ": sequence " +
                               std::to_string(id) + " has t=" + std::to_string(t) +
                               ", expected " + std::to_string(expected_t));
    }
    ++expected_t;
    std::vector<double> xrow, zrow;
    for (Eigen::Index d = 0; d < dx; ++d) xrow.push_back(to_double(cells[2 + d], line_no));
    for (Eigen::Index d = 0; d < dz; ++d) zrow.push_back(to_double(cells[2 + dx + d], line_no));
    xs.push_back(std::move(xrow));
    zs.push_back(std::move(zrow));
  }
  flush();
  return data;
}

}  // namespace nasmc
