// Reduced-system solve time of the dense and block-sparse backends on
// circular loop graphs. Counters report the 6x6 blocks each backend holds.

#include <benchmark/benchmark.h>

#include <map>
#include <memory>

#include "patchslam/bundle_adjust.h"
#include "patchslam/frontend_oracle.h"

namespace ps = patchslam;

namespace {

struct Fixture {
  ps::GeneratedScene scene;
  std::unique_ptr<ps::BAProblem> problem;
  ps::BlockSparseSystem system;
};

const Fixture& loop_system(int frames) {
  static std::map<int, std::unique_ptr<Fixture>> cache;
  auto& slot = cache[frames];
  if (!slot) {
    slot = std::make_unique<Fixture>(
        Fixture{ps::make_loop_scene(frames, 8, 10, 5, 1), nullptr, {}});
    slot->problem = std::make_unique<ps::BAProblem>(slot->scene.graph, 0, frames - 1);
    slot->system = slot->problem->linearize();
    ps::apply_damping(slot->system, 1e-4);
  }
  return *slot;
}

template <ps::SolverBackend B>
void BM_Solve(benchmark::State& state) {
  const Fixture& f = loop_system(static_cast<int>(state.range(0)));
  ps::SolveTiming timing;
  for (auto _ : state) {
    ps::SolveTiming t;
    ps::BAUpdate u = B == ps::SolverBackend::kDense ? ps::solve_dense(f.system, &t)
                                                     : ps::solve_block_sparse(f.system, &t);
    benchmark::DoNotOptimize(u);
    timing = t;
  }
  state.counters["free_poses"] = f.problem->num_free_poses();
  state.counters["blocks"] = static_cast<double>(timing.block_count);
  state.counters["factorize_ms"] = timing.factorize_ms;
}

void Sizes(benchmark::internal::Benchmark* b) {
  for (int n : {10, 20, 50, 100, 300, 500}) b->Arg(n);
  b->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(BM_Solve<ps::SolverBackend::kDense>)->Apply(Sizes);
BENCHMARK(BM_Solve<ps::SolverBackend::kBlockSparse>)->Apply(Sizes);

BENCHMARK_MAIN();
