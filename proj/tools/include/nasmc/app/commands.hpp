// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "nasmc/app/config.hpp"
#include "nasmc/models.hpp"
#include "nasmc/proposals.hpp"
#include "nasmc/smc.hpp"

namespace nasmc::app {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr std::uint64_t kDefaultSeed = 42;

/// Schema and defaults of a subcommand ("adapt", "infer", "pmmh", "selfcheck").
/// Throws ConfigError for an unknown subcommand.
Config default_config(const std::string& command, bool full_scale);

/// Builders shared by the subcommands. Throw ConfigError on bad settings.
std::unique_ptr<StateSpaceModel> build_model(const Config& cfg);
SmcConfig build_smc(const Config& cfg);
ProposalVariant build_variant(const Config& cfg);

struct RunContext {
  std::uint64_t seed = kDefaultSeed;
  std::filesystem::path out_dir = ".";
  std::ostream* log = nullptr;
};

/// Each returns an exit code; ConfigError and InvalidArgument escape as
/// usage errors, anything else as runtime errors.
int cmd_adapt(const Config& cfg, const RunContext& ctx);
int cmd_infer(const Config& cfg, const RunContext& ctx);
int cmd_pmmh(const Config& cfg, const RunContext& ctx);
int cmd_selfcheck(const Config& cfg, const RunContext& ctx);

/// Full command line without the program name. Prints errors to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nasmc::app
