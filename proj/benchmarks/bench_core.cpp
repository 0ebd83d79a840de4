#include <benchmark/benchmark.h>

#include "ganflow/flows.hpp"
#include "ganflow/forward_models.hpp"
#include "ganflow/gan_prior.hpp"
#include "ganflow/prior_data.hpp"
#include "ganflow/rng.hpp"
#include "ganflow/variational.hpp"

using namespace ganflow;
using Tensor = Eigen::MatrixXd;

namespace {

Tensor gaussian(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  return standard_normal(rng, r, c);
}

// Raw Eigen product vs the same product through a graph node.
void BM_MatMulEigen(benchmark::State& st) {
  const Tensor a = gaussian(100, st.range(0), 1), b = gaussian(st.range(0), 512, 2);
  for (auto _ : st) {
    Tensor c = a * b;
    benchmark::DoNotOptimize(c.data());
  }
}
BENCHMARK(BM_MatMulEigen)->Arg(256)->Arg(1024);

void BM_MatMulGraph(benchmark::State& st) {
  const Tensor a = gaussian(100, st.range(0), 1), b = gaussian(st.range(0), 512, 2);
  for (auto _ : st) {
    ad::Graph g;
    const ad::Var c = ad::matmul(g.constant(a), g.input("b", b));
    benchmark::DoNotOptimize(c.value().data());
  }
}
BENCHMARK(BM_MatMulGraph)->Arg(256)->Arg(1024);

// One WGAN-GP epoch = n_critic critic steps and one generator step.
void BM_WganEpoch(benchmark::State& st) {
  const Eigen::Index n_p = st.range(0);
  const Eigen::Index n_x = n_p * n_p;
  gan::GanTrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch = 64;
  cfg.patience = 0;
  const Tensor data = gaussian(cfg.batch * cfg.n_critic, n_x, 3).array().tanh().matrix();
  for (auto _ : st) {
    auto g = gan::Generator::dense(8, n_x, {128, 512}, 4);
    auto d = gan::Critic::dense(n_x, {512, 128}, 5);
    benchmark::DoNotOptimize(gan::train_wgan(data, g, d, cfg, 6).epochs_run);
  }
}
BENCHMARK(BM_WganEpoch)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_HeatApply(benchmark::State& st) {
  fwd::HeatConfig cfg;
  cfg.n_p = st.range(0);
  const auto f = fwd::make_heat(cfg);
  const Tensor x = gaussian(32, cfg.n_p * cfg.n_p, 7);
  for (auto _ : st) benchmark::DoNotOptimize(f->apply(x).data());
}
BENCHMARK(BM_HeatApply)->Arg(16)->Arg(32);

void BM_RadonApply(benchmark::State& st) {
  fwd::RadonConfig cfg;
  cfg.n_p = st.range(0);
  const auto f = fwd::make_radon(cfg);
  const Tensor x = gaussian(32, cfg.n_p * cfg.n_p, 8);
  for (auto _ : st) benchmark::DoNotOptimize(f->apply(x).data());
}
BENCHMARK(BM_RadonApply)->Arg(32);

void BM_PhaseApply(benchmark::State& st) {
  const Eigen::Index n_p = st.range(0);
  fwd::PhaseForward f(n_p, fwd::build_mask(n_p, 4, 0.08, 9));
  const Tensor x = gaussian(32, n_p * n_p, 10);
  for (auto _ : st) benchmark::DoNotOptimize(f.apply(x).data());
}
BENCHMARK(BM_PhaseApply)->Arg(32);

void BM_Dft2(benchmark::State& st) {
  const Tensor img = gaussian(st.range(0), st.range(0), 11);
  for (auto _ : st) benchmark::DoNotOptimize(fwd::dft2(img).first.data());
}
BENCHMARK(BM_Dft2)->Arg(32);

// VI epochs through a dense generator and the heat operator.
void BM_ViEpochs(benchmark::State& st) {
  const Eigen::Index n_p = 16;
  fwd::HeatConfig hc;
  hc.n_p = n_p;
  auto gen = std::make_shared<gan::Generator>(gan::Generator::dense(5, n_p * n_p, {128, 512}, 12));
  vi::LatentPosteriorModel m{flows::FlowModel::from_spec("", 5, 0), gen, {fwd::make_heat(hc), {1.0}, gaussian(1, n_p * n_p, 13)}};
  vi::VIConfig cfg;
  cfg.epochs = 10;
  cfg.patience = 0;
  for (auto _ : st) {
    m.flow = flows::FlowModel::from_spec(st.range(0) == 0 ? "planar:64" : "coupling:16", 5, 14);
    benchmark::DoNotOptimize(vi::train_flow(m, cfg, 15).epochs_run);
  }
}
BENCHMARK(BM_ViEpochs)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_FlowSample(benchmark::State& st) {
  const auto flow = flows::FlowModel::from_spec("planar:64", 5, 16);
  for (auto _ : st) benchmark::DoNotOptimize(vi::pushforward_samples(flow, 1000, 17).data());
}
BENCHMARK(BM_FlowSample)->Unit(benchmark::kMillisecond);

void BM_PhantomSample(benchmark::State& st) {
  prior::DatasetSpec spec;
  spec.kind = "phantom";
  spec.n_p = st.range(0);
  std::size_t i = 0;
  for (auto _ : st) benchmark::DoNotOptimize(prior::generate_sample(spec, i++).data());
}
BENCHMARK(BM_PhantomSample)->Arg(32);

}  // namespace

BENCHMARK_MAIN();
