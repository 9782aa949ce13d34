#include <benchmark/benchmark.h>

#include "topoformer/dataset.hpp"
#include "topoformer/rng.hpp"
#include "topoformer/simp_static.hpp"
#include "topoformer/vit.hpp"

using namespace topo;

namespace {

DensityField random_density(const Grid& grid, std::uint64_t seed) {
  Rng rng(seed);
  DensityField d = DensityField::constant(grid, 0.5);
  for (double& r : d.rho) r = rng.uniform(0.1, 1.0);
  return d;
}

void BM_StiffnessMatvec(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Grid grid{n, n};
  BoundarySpec bc;
  bc.mask = 0xC000;
  const StiffnessOperator K(grid, Material{}, random_density(grid, 1), 3.0,
                            bc.fixed_dofs(grid));
  std::vector<double> x(grid.dof_count(), 1.0), y(grid.dof_count());
  for (auto _ : state) {
    K.apply(x.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * grid.element_count());
}
BENCHMARK(BM_StiffnessMatvec)->Arg(16)->Arg(32)->Arg(64);

void BM_StaticSolve(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Grid grid{n, n};
  BoundarySpec bc;
  bc.mask = 0xC000;
  const PointLoad load = PointLoad::from_angle(n - 1, n / 2, 4);
  const StiffnessOperator K(grid, Material{}, random_density(grid, 2), 3.0,
                            bc.fixed_dofs(grid));
  for (auto _ : state) {
    DisplacementField u = solve_static(grid, bc, load, K);
    benchmark::DoNotOptimize(u.u.data());
  }
}
BENCHMARK(BM_StaticSolve)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_OptimizerIteration(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Grid grid{n, n};
  BoundarySpec bc;
  bc.mask = 0xC000;
  const PointLoad load = PointLoad::from_angle(n - 1, n / 2, 4);
  DensityField rho = DensityField::constant(grid, 0.4);
  for (auto _ : state) {
    const StiffnessOperator K(grid, Material{}, rho, 3.0, bc.fixed_dofs(grid));
    const DisplacementField u = solve_static(grid, bc, load, K);
    const auto sens = sensitivities(grid, Material{}, rho, u, 3.0);
    const auto filtered = filter_sensitivities(grid, rho, sens, 1.5);
    rho = oc_update(rho, filtered, 0.4, 0.2);
    benchmark::DoNotOptimize(rho.rho.data());
  }
}
BENCHMARK(BM_OptimizerIteration)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_SurrogateForward(benchmark::State& state) {
  ViTConfig vc = ViTConfig::desk();
  ViTModel model(vc);
  Rng rng(1);
  model.init(rng);
  Rng field_rng(2);
  FieldImage img{64, 64, std::vector<double>(4096), std::vector<double>(4096)};
  for (double& v : img.sed) v = field_rng.uniform(0.0, 1.0);
  for (double& v : img.vm) v = field_rng.uniform(0.0, 1.0);
  std::vector<double> cond(22, 0.3);
  for (auto _ : state) {
    auto fwd = model.forward(img, cond);
    benchmark::DoNotOptimize(fwd.prediction.node()->data.data());
  }
  state.SetLabel("desk config, 64x64");
}
BENCHMARK(BM_SurrogateForward)->Unit(benchmark::kMillisecond);

void BM_Patchify(benchmark::State& state) {
  Rng rng(3);
  FieldImage img{64, 64, std::vector<double>(4096), std::vector<double>(4096)};
  for (double& v : img.sed) v = rng.uniform(0.0, 1.0);
  for (double& v : img.vm) v = rng.uniform(0.0, 1.0);
  for (auto _ : state) {
    auto tokens = patchify(img, 8);
    benchmark::DoNotOptimize(tokens.data());
  }
}
BENCHMARK(BM_Patchify);

}  // namespace

BENCHMARK_MAIN();
