// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace nasmc::app {

enum class Fault { kNone, kGradient };

/// Throws ConfigError for an unknown name.
Fault parse_fault(std::string_view text);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Gradient checks, Kalman equivalence, resampling moments, ancestry
/// consistency and checkpoint round trip. `Fault::kGradient` perturbs every
/// analytic gradient before it is compared.
std::vector<CheckResult> run_selfchecks(std::uint64_t seed, Fault fault = Fault::kNone);

}  // namespace nasmc::app
