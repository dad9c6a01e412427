// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <exception>
#include <ostream>

#include "CLI11.hpp"
#include "nasmc/app/commands.hpp"
#include "nasmc/app/selfcheck.hpp"
#include "nasmc/checkpoint.hpp"
#include "nasmc/dataset.hpp"
#include "nasmc/errors.hpp"

namespace nasmc::app {

int cmd_selfcheck(const Config& cfg, const RunContext& ctx) {
  const Fault fault = parse_fault(cfg.get("fault"));
  const auto results = run_selfchecks(ctx.seed, fault);
  bool ok = true;
  for (const auto& r : results) {
    if (ctx.log != nullptr) {
      *ctx.log << (r.passed ? "PASS " : "FAIL ") << r.name << "  " << r.detail << '\n';
    }
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitRuntime;
}

namespace {

struct Options {
  std::string config;
  std::uint64_t seed = kDefaultSeed;
  std::string out = ".";
  bool full_scale = false;
};

// `--key value` or `--key=value` pairs left over after flag parsing.
void apply_overrides(Config& cfg, const std::vector<std::string>& extras) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0 || arg.size() < 3) {
      throw ConfigError("unexpected argument '" + arg + "'");
    }
    const std::string body = arg.substr(2);
    const auto eq = body.find('=');
    if (eq != std::string::npos) {
      cfg.set(body.substr(0, eq), body.substr(eq + 1));
    } else {
      if (i + 1 >= extras.size()) throw ConfigError("override '" + arg + "' needs a value");
      cfg.set(body, extras[++i]);
    }
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Neural adaptive sequential Monte Carlo experiments"};
  app.require_subcommand(1);
  Options opt;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"adapt", "Train a proposal and report held-out ESS, LML and RMSE"},
      {"infer", "Run fixed-proposal SMC over fresh or given sequences"},
      {"pmmh", "Particle marginal Metropolis-Hastings over model parameters"},
      {"selfcheck", "Run gradient, oracle and invariant checks"},
  };
  for (const auto& [name, desc] : commands) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", opt.config, "Flat key = value config file");
    sub->add_option("--seed", opt.seed, "Root seed")->capture_default_str();
    sub->add_option("--out", opt.out, "Output directory")->capture_default_str();
    sub->add_flag("--paper-scale", opt.full_scale, "Use full-scale experiment defaults");
    sub->allow_extras();
    sub->footer("Any config key can be overridden with --<key> <value>.");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  RunContext ctx;
  ctx.seed = opt.seed;
  ctx.out_dir = opt.out;
  ctx.log = &out;
  try {
    Config cfg = default_config(name, opt.full_scale);
    if (!opt.config.empty()) cfg.merge_file(opt.config);
    apply_overrides(cfg, sub->remaining());
    if (name == "adapt") return cmd_adapt(cfg, ctx);
    if (name == "infer") return cmd_infer(cfg, ctx);
    if (name == "pmmh") return cmd_pmmh(cfg, ctx);
    return cmd_selfcheck(cfg, ctx);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace nasmc::app
