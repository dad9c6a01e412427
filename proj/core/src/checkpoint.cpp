// SPDX-License-Identifier: Apache-2.0
#include "nasmc/checkpoint.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace nasmc {
namespace {

std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_double(const std::string& tok) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0' || errno == ERANGE) {
    throw CheckpointError("bad number '" + tok + "'");
  }
  return v;
}

std::size_t parse_size(const std::string& tok) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(tok, &pos);
  } catch (const std::exception&) {
    throw CheckpointError("bad size '" + tok + "'");
  }
  if (pos != tok.size()) throw CheckpointError("bad size '" + tok + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace

std::optional<std::string> Checkpoint::meta_value(const std::string& key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return v;
  }
  return std::nullopt;
}

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  os << "nasmc-checkpoint 1\n";
  for (const auto& [k, v] : ckpt.meta) os << "meta " << k << ' ' << v << '\n';
  for (const auto& a : ckpt.arrays) {
    os << "array " << a.name << ' ' << a.rows << ' ' << a.cols << '\n';
    for (std::size_t r = 0; r < a.rows; ++r) {
      for (std::size_t c = 0; c < a.cols; ++c) {
        if (c > 0) os << ' ';
        os << hex(a.values[r * a.cols + c]);
      }
      os << '\n';
    }
  }
  os << "end\n";
}

Checkpoint read_checkpoint(std::istream& is) {
  Checkpoint ckpt;
  std::string line;
  if (!std::getline(is, line) || line != "nasmc-checkpoint 1") {
    throw CheckpointError("missing checkpoint header");
  }
  bool ended = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "end") {
      ended = true;
      break;
    }
    if (kind == "meta") {
      std::string key, value;
      ls >> key;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      if (key.empty()) throw CheckpointError("meta line without key");
      ckpt.meta.emplace_back(key, value);
    } else if (kind == "array") {
      std::string name, rows, cols;
      ls >> name >> rows >> cols;
      if (name.empty() || cols.empty()) throw CheckpointError("truncated array header");
      NamedArray a{name, parse_size(rows), parse_size(cols), {}};
      a.values.reserve(a.rows * a.cols);
      for (std::size_t r = 0; r < a.rows; ++r) {
        if (!std::getline(is, line)) throw CheckpointError("array '" + name + "' truncated");
        std::istringstream rs(line);
        std::string tok;
        std::size_t count = 0;
        while (rs >> tok) {
          a.values.push_back(parse_double(tok));
          ++count;
        }
        if (count != a.cols) {
          throw CheckpointError("array '" + name + "' row " + std::to_string(r) +
                                " has wrong length");
        }
      }
      ckpt.arrays.push_back(std::move(a));
    } else {
      throw CheckpointError("unexpected record '" + kind + "'");
    }
  }
  if (!ended) throw CheckpointError("missing end marker");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path);
  if (!os) throw CheckpointError("cannot write checkpoint: " + path.string());
  write_checkpoint(os, ckpt);
  if (!os) throw CheckpointError("error writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw CheckpointError("checkpoint not found: " + path.string());
  try {
    return read_checkpoint(is);
  } catch (const CheckpointError& e) {
    throw CheckpointError("corrupt checkpoint " + path.string() + ": " + e.what());
  }
}

void append_params(Checkpoint& ckpt, const ParamVector& p, const std::string& prefix) {
  for (std::size_t i = 0; i < p.slices().size(); ++i) {
    const auto& s = p.slice(i);
    const auto vals = p.values().subspan(s.offset, s.size());
    ckpt.arrays.push_back(
        NamedArray{prefix + s.name, s.rows, s.cols, std::vector<double>(vals.begin(), vals.end())});
  }
}

void restore_params(const Checkpoint& ckpt, ParamVector& p, const std::string& prefix) {
  for (std::size_t i = 0; i < p.slices().size(); ++i) {
    const auto& s = p.slice(i);
    const NamedArray* a = ckpt.find(prefix + s.name);
    if (a == nullptr) throw CheckpointError("checkpoint lacks array '" + prefix + s.name + "'");
    if (a->rows != s.rows || a->cols != s.cols) {
      throw CheckpointError("array '" + prefix + s.name + "' has shape " +
                            std::to_string(a->rows) + "x" + std::to_string(a->cols) +
                            ", expected " + std::to_string(s.rows) + "x" +
                            std::to_string(s.cols));
    }
    std::copy(a->values.begin(), a->values.end(), p.values().begin() + s.offset);
  }
}

}  // namespace nasmc
