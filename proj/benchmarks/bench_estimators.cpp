#include <benchmark/benchmark.h>

#include <vector>

#include "frflab/harness.hpp"
#include "frflab/kernels.hpp"
#include "frflab/lgpr.hpp"
#include "frflab/localwin.hpp"
#include "frflab/spectra.hpp"

using namespace frflab;

namespace {

const spectra::SpectraRecord& record() {
  static const auto rec = spectra::simulate(spectra::TestSystem::lightly_damped(), spectra::ExperimentConfig{});
  return rec;
}

// A window next to the 3 rad/s resonance.
LocalWindow resonant_window(int ell) {
  const auto& rec = record();
  std::size_t k = 0;
  while (rec.omega[k] < 3.0) ++k;
  return extract_window(rec, k, ell);
}

kernels::Family family_of(int i) {
  static const kernels::Family all[] = {kernels::Family::DI, kernels::Family::DP,    kernels::Family::DC,
                                        kernels::Family::R1, kernels::Family::DCpR1, kernels::Family::DPpR1};
  return all[i];
}

}  // namespace

static void BM_WindowNll(benchmark::State& state) {
  const auto f = family_of(static_cast<int>(state.range(0)));
  kernels::ModelOptions mo;
  mo.di_space = kernels::Space::Frf;
  const kernels::PriorModel model(kernels::KernelSpec::of(f), resonant_window(static_cast<int>(state.range(1))), mo);
  RVector eta(model.size());
  std::vector<Index> which;
  for (Index p = 0; p < model.size(); ++p) {
    const auto& h = model.parameters()[static_cast<std::size_t>(p)];
    eta(p) = std::sqrt(h.lower * h.upper);
    if (!h.frozen()) which.push_back(p);
  }
  const double s2 = std::sqrt(model.noise_bounds().first * model.noise_bounds().second);
  for (auto _ : state) benchmark::DoNotOptimize(lgpr::window_nll_with_gradient(model, eta, s2, which));
  state.SetLabel(std::string(kernels::to_string(f)));
}
BENCHMARK(BM_WindowNll)->ArgsProduct({{1, 2, 5}, {5, 10}});

static void BM_EbTune(benchmark::State& state) {
  const auto f = family_of(static_cast<int>(state.range(0)));
  const kernels::PriorModel model(kernels::KernelSpec::of(f), resonant_window(5));
  for (auto _ : state) benchmark::DoNotOptimize(lgpr::eb_tune(model, {}));
  state.SetLabel(std::string(kernels::to_string(f)));
}
BENCHMARK(BM_EbTune)->DenseRange(1, 5, 1)->Unit(benchmark::kMillisecond);

static void BM_ClassicSweep(benchmark::State& state) {
  const auto id = static_cast<harness::MethodId>(state.range(0));
  const auto band = harness::evaluation_band(record());
  for (auto _ : state) benchmark::DoNotOptimize(harness::estimate(id, record(), 5, band));
  state.SetLabel(std::string(harness::method_name(id)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(band.size()));
}
BENCHMARK(BM_ClassicSweep)
    ->Arg(static_cast<int>(harness::MethodId::Lpm2))
    ->Arg(static_cast<int>(harness::MethodId::LrmMdl))
    ->Arg(static_cast<int>(harness::MethodId::IlrmMdl))
    ->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
