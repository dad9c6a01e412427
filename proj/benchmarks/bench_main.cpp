// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <cmath>

#include "nasmc/adapt.hpp"
#include "nasmc/mdn.hpp"
#include "nasmc/nnet.hpp"
#include "nasmc/prng.hpp"
#include "nasmc/smc.hpp"

namespace {

using namespace nasmc;

void BM_PhiloxNormal(benchmark::State& state) {
  RngStream s(1, 0);
  for (auto _ : state) benchmark::DoNotOptimize(s.std_normal());
}
BENCHMARK(BM_PhiloxNormal);

void BM_MdnLogDensity(benchmark::State& state) {
  const auto K = static_cast<Eigen::Index>(state.range(0));
  MdnParams m;
  m.mix_logits = Vector::Zero(K);
  m.means = Matrix::Zero(1, K);
  m.log_stds = Matrix::Zero(1, K);
  const Vector z = Vector::Constant(1, 0.3);
  for (auto _ : state) benchmark::DoNotOptimize(mdn_log_density(m, z));
}
BENCHMARK(BM_MdnLogDensity)->Arg(1)->Arg(3)->Arg(10);

void BM_LstmStep(benchmark::State& state) {
  const auto N = static_cast<Eigen::Index>(state.range(0));
  ParamVector::Builder b;
  Lstm cell(b, "l", 5, 50);
  ParamVector p = b.build();
  RngStream s(2, 0);
  cell.init(p, s);
  const Matrix x = Matrix::Ones(5, N);
  LstmState st = LstmState::zeros(50, N);
  for (auto _ : state) benchmark::DoNotOptimize(cell.forward(p, x, st, nullptr));
  state.SetItemsProcessed(state.iterations() * N);
}
BENCHMARK(BM_LstmStep)->Arg(10)->Arg(100);

void BM_SmcRun(benchmark::State& state) {
  const BenchmarkNssm model(std::sqrt(10.0), 1.0);
  const Sequence seq = simulate(model, 100, RngStream(3, 0));
  const ProposalModel prop =
      ProposalModel::for_model(ProposalVariant::parse("rnn-md-f"), model, RngStream(4, 0), true);
  SmcConfig cfg;
  cfg.n_particles = static_cast<std::size_t>(state.range(0));
  const bool adapted = state.range(1) != 0;
  std::uint64_t k = 0;
  for (auto _ : state) {
    if (adapted) {
      ProposalSession sess = prop.session(model, false);
      benchmark::DoNotOptimize(run_smc(model, &sess, seq.x, cfg, RngStream(5, k++)).lml);
    } else {
      benchmark::DoNotOptimize(run_smc(model, nullptr, seq.x, cfg, RngStream(5, k++)).lml);
    }
  }
  state.SetLabel(adapted ? "rnn-md-f" : "bootstrap");
}
BENCHMARK(BM_SmcRun)->Args({100, 0})->Args({100, 1})->Args({1000, 0})->Unit(benchmark::kMillisecond);

void BM_AdaptIteration(benchmark::State& state) {
  const BenchmarkNssm model(std::sqrt(10.0), 1.0);
  ProposalModel prop =
      ProposalModel::for_model(ProposalVariant::parse("rnn-md-f"), model, RngStream(6, 0), true);
  AdaptConfig cfg;
  cfg.iterations = 1;
  cfg.T = 100;
  cfg.smc.n_particles = 100;
  std::uint64_t k = 0;
  for (auto _ : state) run_adaptation(cfg, model, prop, nullptr, RngStream(7, k++));
}
BENCHMARK(BM_AdaptIteration)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
