// SPDX-License-Identifier: Apache-2.0
#include "nasmc/app/commands.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "nasmc/adapt.hpp"
#include "nasmc/checkpoint.hpp"
#include "nasmc/dataset.hpp"
#include "nasmc/errors.hpp"
#include "nasmc/metrics.hpp"
#include "nasmc/pmmh.hpp"

namespace nasmc::app {

namespace {

using Defaults = std::map<std::string, std::string>;

void add(Defaults& d, const Defaults& more) {
  for (const auto& [k, v] : more) d[k] = v;
}

const Defaults kModelKeys = {
    {"model", "nssm"},  {"sigma_v", "3.1622776601683795"}, {"sigma_w", "1"}, {"init_var", "5"},
    {"lg_a", "0.9"},    {"lg_c", "1"},  {"lg_q", "1"},  {"lg_r", "1"},
    {"lg_m0", "0"},     {"lg_p0", "1"},
};

const Defaults kSmcKeys = {
    {"n_particles", "100"}, {"resample_scheme", "multinomial"}, {"resample_trigger", "always"},
};

const Defaults kProposalKeys = {
    {"variant", "rnn-md-f"}, {"hidden", "0"}, {"components", "3"},
    {"time_features", "true"}, {"zero_head", "true"},
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

std::ostream& log_of(const RunContext& ctx) {
  static std::ostream null_stream(nullptr);
  return ctx.log != nullptr ? *ctx.log : null_stream;
}

// Converts argument errors raised while building objects from settings.
template <class Fn>
auto as_config_error(Fn&& fn) {
  try {
    return fn();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

struct SequenceMetrics {
  double lml = 0.0;
  double mean_ess = 0.0;
  double rmse = std::nan("");
};

SequenceMetrics evaluate(const StateSpaceModel& model, const ProposalModel* proposal,
                         const Sequence& seq, const SmcConfig& smc, const RngStream& s,
                         RunRecord* record = nullptr) {
  RunRecord rec;
  if (proposal != nullptr && proposal->variant().trainable()) {
    ProposalSession session = proposal->session(model, false);
    rec = run_smc(model, &session, seq.x, smc, s);
  } else {
    rec = run_smc(model, nullptr, seq.x, smc, s);
  }
  SequenceMetrics m;
  m.lml = rec.lml;
  m.mean_ess = rec.mean_ess();
  if (seq.has_latent() && smc.record_filtering_stats) m.rmse = rmse(seq.z, rec.posterior_means());
  if (record != nullptr) *record = std::move(rec);
  return m;
}

Dataset load_or_simulate(const Config& cfg, const StateSpaceModel& model, std::size_t count,
                         int T, const RngStream& s) {
  const std::string& path = cfg.get("data");
  if (path.empty()) return simulate_dataset(model, count, T, s);
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read data file " + path);
  Dataset d = read_dataset_csv(in);
  for (const auto& seq : d.sequences) {
    if (static_cast<std::size_t>(seq.x.rows()) != model.obs_dim() ||
        (seq.has_latent() && static_cast<std::size_t>(seq.z.rows()) != model.state_dim())) {
      throw ConfigError("data file " + path + " does not match the model dimensions");
    }
  }
  return d;
}

}  // namespace

Config default_config(const std::string& command, bool full_scale) {
  Defaults d;
  if (command == "adapt") {
    add(d, kModelKeys);
    add(d, kSmcKeys);
    add(d, kProposalKeys);
    add(d, {{"T", "200"}, {"iterations", "200"}, {"minibatch", "1"}, {"lr", "0.01"},
            {"clip_norm", "10"}, {"mode", "batch"}, {"train_source", "generative"},
            {"data", ""}, {"learn_theta", "false"}, {"theta_lr", "0.01"},
            {"checkpoint_every", "0"}, {"eval_sequences", "20"}});
    if (full_scale) add(d, {{"T", "1000"}, {"iterations", "1000"}, {"eval_sequences", "100"}});
  } else if (command == "infer") {
    add(d, kModelKeys);
    add(d, kSmcKeys);
    add(d, kProposalKeys);
    add(d, {{"variant", "prior"}, {"checkpoint", ""}, {"sequences", "20"}, {"T", "200"},
            {"data", ""}});
    if (full_scale) add(d, {{"T", "1000"}, {"sequences", "100"}});
  } else if (command == "pmmh") {
    add(d, kModelKeys);
    add(d, kSmcKeys);
    add(d, kProposalKeys);
    add(d, {{"variant", "prior"}, {"n_particles", "10"}, {"T", "500"}, {"iterations", "500"},
            {"data", ""}, {"theta_init", "10,10"},
            {"rw_scale", "0.3872983346207417,0.28284271247461901"}, {"prior_a", "0.01"},
            {"prior_b", "0.01"}, {"likelihood", "smc"}, {"pretrain_iters", "200"},
            {"readapt_every", "1"}, {"readapt_iters", "1"}, {"lr", "0.01"}, {"burn_in", "0"},
            {"checkpoint", ""}});
    if (full_scale) add(d, {{"pretrain_iters", "500"}});
  } else if (command == "selfcheck") {
    add(d, {{"fault", "none"}});
  } else {
    throw ConfigError("unknown subcommand '" + command + "'");
  }
  return Config(std::move(d));
}

std::unique_ptr<StateSpaceModel> build_model(const Config& cfg) {
  return as_config_error([&]() -> std::unique_ptr<StateSpaceModel> {
    const std::string& name = cfg.get("model");
    if (name == "nssm") {
      return std::make_unique<BenchmarkNssm>(cfg.get_double("sigma_v"), cfg.get_double("sigma_w"),
                                             cfg.get_double("init_var"));
    }
    if (name == "lgssm") {
      return std::make_unique<LinearGaussianSsm>(LinearGaussianSsm::scalar(
          cfg.get_double("lg_a"), cfg.get_double("lg_c"), cfg.get_double("lg_q"),
          cfg.get_double("lg_r"), cfg.get_double("lg_m0"), cfg.get_double("lg_p0")));
    }
    throw ConfigError("unknown model '" + name + "' (want nssm or lgssm)");
  });
}

SmcConfig build_smc(const Config& cfg) {
  return as_config_error([&] {
    SmcConfig s;
    const long n = cfg.get_int("n_particles");
    if (n < 1) throw ConfigError("n_particles must be >= 1");
    s.n_particles = static_cast<std::size_t>(n);
    s.scheme = parse_resample_scheme(cfg.get("resample_scheme"));
    s.trigger = parse_resample_trigger(cfg.get("resample_trigger"));
    s.validate();
    return s;
  });
}

ProposalVariant build_variant(const Config& cfg) {
  return as_config_error([&] {
    ProposalVariant v = ProposalVariant::parse(cfg.get("variant"));
    const long hidden = cfg.get_int("hidden");
    const long comps = cfg.get_int("components");
    if (hidden < 0) throw ConfigError("hidden must be >= 0");
    if (comps < 1) throw ConfigError("components must be >= 1");
    v.hidden = static_cast<std::size_t>(hidden);
    if (v.components > 1) v.components = static_cast<std::size_t>(comps);
    v.time_features = cfg.get_bool("time_features");
    return v;
  });
}

// ---------------------------------------------------------------------------
// adapt

int cmd_adapt(const Config& cfg, const RunContext& ctx) {
  auto model = build_model(cfg);
  const ProposalVariant variant = build_variant(cfg);
  AdaptConfig ac = as_config_error([&] {
    AdaptConfig a;
    a.mode = parse_adapt_mode(cfg.get("mode"));
    a.source = parse_train_source(cfg.get("train_source"));
    a.minibatch = static_cast<std::size_t>(std::max(0L, cfg.get_int("minibatch")));
    a.iterations = cfg.get_int("iterations");
    a.T = static_cast<int>(cfg.get_int("T"));
    a.smc = build_smc(cfg);
    a.optimizer.lr = cfg.get_double("lr");
    a.theta_optimizer.lr = cfg.get_double("theta_lr");
    a.clip_norm = cfg.get_double("clip_norm");
    a.learn_theta = cfg.get_bool("learn_theta");
    a.validate();
    return a;
  });
  const long ckpt_every = cfg.get_int("checkpoint_every");
  const long eval_count = cfg.get_int("eval_sequences");
  if (ckpt_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (eval_count < 1) throw ConfigError("eval_sequences must be >= 1");
  Dataset train;
  if (ac.source == TrainSource::kDataset) {
    if (cfg.get("data").empty()) throw ConfigError("train_source=dataset needs data=<csv>");
    train = load_or_simulate(cfg, *model, 0, ac.T, RngStream(ctx.seed, 0));
  }

  const RngStream root(ctx.seed, 0);
  std::filesystem::create_directories(ctx.out_dir);
  std::ofstream(ctx.out_dir / "config.txt") << cfg.to_text() << "seed = " << ctx.seed << '\n';

  ProposalModel proposal =
      ProposalModel::for_model(variant, *model, fork(root, StreamTag::kInit), cfg.get_bool("zero_head"));
  std::ofstream diag = open_out(ctx.out_dir / "diagnostics.csv");
  diag << "iter,mean_ess,lml,grad_norm_phi,grad_norm_theta\n";
  auto on_iter = [&](const IterationDiagnostics& d, const ProposalModel& p, const StateSpaceModel& m) {
    diag << d.iter << ',' << fmt(d.mean_ess) << ',' << fmt(d.lml) << ',' << fmt(d.grad_norm_phi)
         << ',' << fmt(d.grad_norm_theta) << '\n';
    if (ckpt_every > 0 && d.iter % ckpt_every == 0) {
      Checkpoint c = p.to_checkpoint();
      const auto theta = m.theta();
      c.arrays.push_back({"model.theta", theta.size(), 1, theta});
      save_checkpoint(ctx.out_dir / ("checkpoint_" + std::to_string(d.iter) + ".ckpt"), c);
    }
  };
  AdaptResult res = run_adaptation(ac, *model, proposal, ac.source == TrainSource::kDataset ? &train : nullptr,
                                   root, on_iter);
  diag.close();
  {
    Checkpoint c = proposal.to_checkpoint();
    const auto theta = res.model->theta();
    c.arrays.push_back({"model.theta", theta.size(), 1, theta});
    save_checkpoint(ctx.out_dir / "proposal.ckpt", c);
  }

  // Held-out evaluation with no further adaptation, bootstrap alongside.
  const RngStream eval_root = fork(root, StreamTag::kEval);
  const StateSpaceModel& final_model = *res.model;
  struct Row {
    std::string name;
    std::vector<double> ess, lml, rmse;
  };
  std::vector<Row> rows;
  rows.push_back({"prior", {}, {}, {}});
  if (variant.trainable()) rows.push_back({variant.to_string(), {}, {}, {}});
  for (long j = 0; j < eval_count; ++j) {
    const RngStream es = eval_root.fork(static_cast<std::uint64_t>(j));
    const Sequence seq = simulate(final_model, ac.T, es.fork(0));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const SequenceMetrics m =
          evaluate(final_model, r == 0 ? nullptr : &proposal, seq, ac.smc, es.fork(1));
      rows[r].ess.push_back(m.mean_ess);
      rows[r].lml.push_back(m.lml);
      rows[r].rmse.push_back(m.rmse);
    }
  }
  std::ofstream sum = open_out(ctx.out_dir / "summary.csv");
  sum << "variant,n_particles,ess_mean,ess_std,ess_fraction,lml_mean,lml_std,rmse_mean,rmse_std\n";
  for (const auto& row : rows) {
    const auto e = summarize(row.ess), l = summarize(row.lml), r = summarize(row.rmse);
    sum << row.name << ',' << ac.smc.n_particles << ',' << fmt(e.mean) << ',' << fmt(e.std) << ','
        << fmt(e.mean / static_cast<double>(ac.smc.n_particles)) << ',' << fmt(l.mean) << ','
        << fmt(l.std) << ',' << fmt(r.mean) << ',' << fmt(r.std) << '\n';
    log_of(ctx) << row.name << ": ESS " << e.mean << " (" << e.std << "), LML " << l.mean << " ("
                << l.std << "), RMSE " << r.mean << " (" << r.std << ")\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// infer

int cmd_infer(const Config& cfg, const RunContext& ctx) {
  auto model = build_model(cfg);
  const SmcConfig smc = build_smc(cfg);
  const long count = cfg.get_int("sequences");
  const int T = static_cast<int>(cfg.get_int("T"));
  if (count < 1) throw ConfigError("sequences must be >= 1");
  if (T < 1) throw ConfigError("T must be >= 1");
  std::unique_ptr<ProposalModel> proposal;
  const std::string& ckpt_path = cfg.get("checkpoint");
  if (!ckpt_path.empty()) {
    proposal = std::make_unique<ProposalModel>(ProposalModel::from_checkpoint(load_checkpoint(ckpt_path)));
    if (proposal->state_dim() != model->state_dim() || proposal->obs_dim() != model->obs_dim()) {
      throw ConfigError("checkpoint proposal does not match the model dimensions");
    }
  } else if (build_variant(cfg).trainable()) {
    throw ConfigError("infer: variant '" + cfg.get("variant") + "' needs checkpoint=<path>");
  }

  const RngStream root(ctx.seed, 0);
  const RngStream eval_root = fork(root, StreamTag::kEval);
  const Dataset data = load_or_simulate(cfg, *model, static_cast<std::size_t>(count), T,
                                        fork(root, StreamTag::kSimulate));
  std::filesystem::create_directories(ctx.out_dir);
  std::ofstream(ctx.out_dir / "config.txt") << cfg.to_text() << "seed = " << ctx.seed << '\n';

  const auto* lg = dynamic_cast<const LinearGaussianSsm*>(model.get());
  std::ofstream steps = open_out(ctx.out_dir / "infer_steps.csv");
  std::ofstream seqs = open_out(ctx.out_dir / "infer_sequences.csv");
  steps << "sequence_id,t,ess,log_incremental_normalizer";
  for (std::size_t d = 0; d < model->state_dim(); ++d) steps << ",posterior_mean" << d;
  steps << '\n';
  seqs << "sequence_id,lml,mean_ess,rmse,exact_lml,lml_error\n";
  std::vector<double> errors;
  for (std::size_t j = 0; j < data.size(); ++j) {
    RunRecord rec;
    const SequenceMetrics m = evaluate(*model, proposal.get(), data.sequences[j], smc,
                                       eval_root.fork(j), &rec);
    std::ostringstream block;
    write_run_csv(block, rec, false);
    std::istringstream lines(block.str());
    for (std::string line; std::getline(lines, line);) steps << j << ',' << line << '\n';
    double exact = std::nan("");
    if (lg != nullptr) {
      exact = kalman_filter(*lg, data.sequences[j].x).lml;
      errors.push_back(m.lml - exact);
    }
    seqs << j << ',' << fmt(m.lml) << ',' << fmt(m.mean_ess) << ',' << fmt(m.rmse) << ','
         << fmt(exact) << ',' << fmt(m.lml - exact) << '\n';
  }
  if (!errors.empty()) {
    const auto s = summarize(errors);
    log_of(ctx) << "LML bias vs exact: mean " << s.mean << ", std " << s.std << " over " << s.count
                << " sequences\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// pmmh

int cmd_pmmh(const Config& cfg, const RunContext& ctx) {
  auto truth = build_model(cfg);
  const ProposalVariant variant = build_variant(cfg);
  PmmhConfig pc = as_config_error([&] {
    PmmhConfig p;
    p.iterations = cfg.get_int("iterations");
    p.smc = build_smc(cfg);
    p.theta_init = cfg.get_doubles("theta_init");
    p.rw_scale = cfg.get_doubles("rw_scale");
    p.prior.assign(p.theta_init.size(), InverseGamma{cfg.get_double("prior_a"), cfg.get_double("prior_b")});
    p.burn_in = cfg.get_int("burn_in");
    p.readapt_every = cfg.get_int("readapt_every");
    p.readapt.iterations = cfg.get_int("readapt_iters");
    p.readapt.smc = p.smc;
    p.readapt.optimizer.lr = cfg.get_double("lr");
    p.pretrain.iterations = cfg.get_int("pretrain_iters");
    p.pretrain.smc = p.smc;
    p.pretrain.optimizer.lr = cfg.get_double("lr");
    p.pretrain.T = static_cast<int>(cfg.get_int("T"));
    p.validate(truth->theta().size());
    p.readapt.validate();
    p.pretrain.validate();
    return p;
  });
  const std::string& like_name = cfg.get("likelihood");
  if (like_name != "smc" && like_name != "kalman") {
    throw ConfigError("likelihood must be smc or kalman");
  }
  if (like_name == "kalman" && dynamic_cast<const LinearGaussianSsm*>(truth.get()) == nullptr) {
    throw ConfigError("likelihood=kalman needs model=lgssm");
  }
  const int T = static_cast<int>(cfg.get_int("T"));
  if (T < 1) throw ConfigError("T must be >= 1");

  const RngStream root(ctx.seed, 0);
  const Dataset data = load_or_simulate(cfg, *truth, 1, T, fork(root, StreamTag::kSimulate));
  if (data.size() != 1) throw ConfigError("pmmh uses exactly one observed sequence");
  const Matrix& x = data.sequences.front().x;
  const auto base = as_config_error([&] { return truth->with_theta(pc.theta_init); });

  std::unique_ptr<ProposalModel> proposal;
  if (!cfg.get("checkpoint").empty()) {
    proposal = std::make_unique<ProposalModel>(
        ProposalModel::from_checkpoint(load_checkpoint(cfg.get("checkpoint"))));
  } else if (variant.trainable()) {
    proposal = std::make_unique<ProposalModel>(ProposalModel::for_model(
        variant, *base, fork(root, StreamTag::kInit), cfg.get_bool("zero_head")));
  }
  std::filesystem::create_directories(ctx.out_dir);
  std::ofstream(ctx.out_dir / "config.txt") << cfg.to_text() << "seed = " << ctx.seed << '\n';

  const LikelihoodFn like = like_name == "kalman" ? kalman_likelihood(x) : LikelihoodFn{};
  const PmmhResult res = run_pmmh(pc, *base, x, proposal.get(), root, like);
  const auto names = base->theta_names();
  {
    std::ofstream os = open_out(ctx.out_dir / "trace.csv");
    write_trace_csv(os, res.state, names);
  }
  {
    std::ofstream os = open_out(ctx.out_dir / "summary.txt");
    write_summary(os, res.summary);
  }
  if (res.state.degenerate_count > 0) {
    log_of(ctx) << "warning: " << res.state.degenerate_count
                << " proposals rejected after degenerate SMC weights\n";
  }
  log_of(ctx) << "acceptance rate " << res.summary.acceptance_rate << '\n';
  return kExitOk;
}

}  // namespace nasmc::app
