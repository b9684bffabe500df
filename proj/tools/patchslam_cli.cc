// patchslam command-line front end.
//
//   patchslam run [--config FILE] [--set key=value ...]
//   patchslam gen-scene --graph OUT [--trajectory OUT] [scene options]
//   patchslam eval-ate --estimate FILE --reference FILE [--alignment sim3|se3]
//   patchslam bench-ba --csv OUT [--poses N ...]
//   patchslam export-fixture --type loop-graph|candidate|pose-graph --out OUT
//
// Exit codes: 0 success, 2 bad arguments, configuration or input, 3 numerical
// failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "patchslam/bundle_adjust.h"
#include "patchslam/drift_sim3.h"
#include "patchslam/errors.h"
#include "patchslam/frontend_oracle.h"
#include "patchslam/graph_io.h"
#include "patchslam/harness.h"
#include "patchslam/loop_candidate_io.h"
#include "patchslam/pose_graph_io.h"
#include "patchslam/run_config.h"
#include "patchslam/trajectory.h"

namespace ps = patchslam;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides) {
  ps::RunConfig config;
  if (!config_path.empty()) config = ps::load_run_config(config_path);
  ps::apply_overrides(config, overrides);

  const ps::RepeatReport report = ps::run_repeats(config);
  for (std::size_t r = 0; r < report.runs.size(); ++r) {
    const ps::RunResult& run = report.runs[r];
    std::printf("run %zu frames=%zu closures=%zu pgo_applied=%d wall_ms=%.1f", r,
                run.estimate.size(), run.closures.size(), run.pgo_applied, run.wall_ms);
    if (run.ate) std::printf(" ate=%.9g", *run.ate);
    std::printf("\n");
  }
  if (report.median_ate) std::printf("median_ate=%.9g\n", *report.median_ate);
  std::printf("identical=%s\n", report.identical ? "yes" : "no");

  const ps::RunResult& first = report.runs.front();
  ps::write_outputs(config, first);
  if (!report.identical) {
    std::fprintf(stderr, "error: repeated runs diverged\n");
    return kExitNumerical;
  }
  for (const ps::RunResult& run : report.runs) {
    if (run.stall_exceeded) {
      std::fprintf(stderr, "error: frame took %.1f ms while the worker ran (bound %.1f)\n",
                   run.max_worker_frame_ms, config.classical_stall_bound_ms);
      return kExitNumerical;
    }
  }
  return 0;
}

struct SceneArgs {
  std::string kind = "circle";
  int frames = 50;
  int patches = 96;
  double size = 10.0;
  double laps = 1.0;
  std::uint64_t seed = 0;
  int radius = 6;
  double pixel_sigma = 0.0;
  double outlier_fraction = 0.0;
};

void add_scene_options(CLI::App* app, SceneArgs& a) {
  app->add_option("--kind", a.kind, "line|circle|square-loop|random-walk-with-revisit")
      ->capture_default_str();
  app->add_option("--frames", a.frames)->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--patches", a.patches)->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--size", a.size)->capture_default_str();
  app->add_option("--laps", a.laps)->capture_default_str();
  app->add_option("--seed", a.seed)->capture_default_str();
  app->add_option("--radius", a.radius, "odometry edge radius")->capture_default_str();
  app->add_option("--pixel-sigma", a.pixel_sigma)->capture_default_str();
  app->add_option("--outlier-fraction", a.outlier_fraction)->capture_default_str();
}

ps::SceneSpec scene_spec(const SceneArgs& a) {
  ps::SceneSpec spec;
  try {
    spec.kind = ps::parse_trajectory_kind(a.kind);
  } catch (const std::invalid_argument& e) {
    throw ps::ConfigError(e.what());
  }
  spec.num_frames = a.frames;
  spec.patches_per_frame = a.patches;
  spec.size = a.size;
  spec.laps = a.laps;
  spec.seed = a.seed;
  return spec;
}

int cmd_gen_scene(const SceneArgs& a, const std::string& graph_out,
                  const std::string& trajectory_out) {
  ps::GeneratedScene g = ps::generate(scene_spec(a));
  ps::add_odometry_edges(g.graph, a.radius);
  ps::OracleConfig oracle;
  oracle.pixel_sigma = a.pixel_sigma;
  oracle.outlier_fraction = a.outlier_fraction;
  oracle.seed = a.seed;
  ps::fill_flow(g.graph, g.scene, oracle);
  ps::write_patch_graph(graph_out, g.graph);
  if (!trajectory_out.empty()) {
    ps::Trajectory t;
    for (std::size_t i = 0; i < g.scene.poses.size(); ++i) {
      t.append(g.scene.timestamps[i], g.scene.poses[i]);
    }
    ps::write_tum(trajectory_out, t);
  }
  std::printf("frames=%d edges=%zu patches=%zu\n", g.graph.num_frames(),
              g.graph.num_edges(), g.graph.num_patches());
  return 0;
}

int cmd_eval_ate(const std::string& estimate, const std::string& reference,
                 const std::string& alignment, double gate) {
  std::vector<std::string> warnings;
  const ps::Trajectory est = ps::read_tum(estimate, &warnings);
  const ps::Trajectory ref = ps::read_tum(reference, &warnings);
  for (const std::string& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  const ps::Alignment mode =
      alignment == "se3" ? ps::Alignment::kSE3 : ps::Alignment::kSim3;
  const ps::AteResult r = ps::ate(est, ref, mode, gate);
  std::printf("ate=%.9g associations=%d alignment=%s scale=%.9g\n", r.rmse,
              r.associations, alignment.c_str(), r.alignment.scale());
  return 0;
}

int cmd_bench_ba(const std::vector<int>& poses, int patches, int radius, int repeats,
                 const std::string& csv_path) {
  std::ofstream csv(csv_path);
  if (!csv) throw ps::ConfigError(csv_path + ": cannot open for writing");
  csv << "free-poses,backend,assemble-ms,factorize-ms,solve-ms,peak-block-count\n";
  for (int n : poses) {
    ps::GeneratedScene g = ps::make_loop_scene(n, patches, radius, 5, 1);
    ps::BAProblem problem(g.graph, 0, n - 1);
    ps::BlockSparseSystem system = problem.linearize();
    ps::apply_damping(system, 1e-4);
    for (ps::SolverBackend backend :
         {ps::SolverBackend::kDense, ps::SolverBackend::kBlockSparse}) {
      for (int r = 0; r < repeats; ++r) {
        ps::SolveTiming t;
        if (backend == ps::SolverBackend::kDense) {
          ps::solve_dense(system, &t);
        } else {
          ps::solve_block_sparse(system, &t);
        }
        csv << problem.num_free_poses() << ',' << ps::backend_name(backend) << ','
            << t.assemble_ms << ',' << t.factorize_ms << ',' << t.solve_ms << ','
            << t.block_count << '\n';
      }
    }
    std::printf("free-poses=%d done\n", problem.num_free_poses());
  }
  return 0;
}

int cmd_export_fixture(const std::string& type, const std::string& out, int frames,
                       int patches, std::uint64_t seed) {
  if (type == "loop-graph") {
    ps::GeneratedScene g = ps::make_loop_scene(frames, patches, 6, 5, seed);
    ps::write_patch_graph(out, g.graph);
  } else if (type == "candidate") {
    ps::SceneSpec spec;
    spec.kind = ps::TrajectoryKind::kSquareLoop;
    spec.num_frames = frames;
    spec.patches_per_frame = patches;
    spec.laps = 1.25;
    spec.landmarks_per_frame = 100;
    spec.seed = seed;
    ps::GeneratedScene g = ps::generate(spec);
    ps::SyntheticProviderConfig pc;
    pc.seed = seed;
    ps::SyntheticCandidateProvider provider(g.scene, pc);
    for (int k = frames - 1; k >= 0; --k) {
      if (auto c = provider.query(k)) {
        ps::write_loop_candidate(out, *c);
        std::printf("candidate j=%d k=%d matches=%zu\n", c->frame_j, c->frame_k,
                    c->matches.size());
        return 0;
      }
    }
    throw ps::ConfigError("no revisit in a " + std::to_string(frames) + "-frame scene");
  } else if (type == "pose-graph") {
    ps::PlantedScaleDrift chain = ps::make_scale_drift_chain(frames, 1.01, seed);
    ps::write_pose_graph(out, chain.problem);
  } else {
    throw ps::ConfigError("unknown fixture type '" + type + "'");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"patch-graph visual SLAM backend"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  CLI::App* run = app.add_subcommand("run", "run the pipeline on a scene or fixture");
  run->add_option("--config", config_path, "key = value config file");
  run->add_option("--set", overrides, "override one key, key=value")->take_all();

  SceneArgs scene;
  std::string graph_out;
  std::string trajectory_out;
  CLI::App* gen = app.add_subcommand("gen-scene", "write a synthetic patch graph");
  add_scene_options(gen, scene);
  gen->add_option("--graph", graph_out, "patch graph output")->required();
  gen->add_option("--trajectory", trajectory_out, "ground-truth TUM output");

  std::string estimate;
  std::string reference;
  std::string alignment = "sim3";
  double gate = 0.02;
  CLI::App* eval = app.add_subcommand("eval-ate", "absolute trajectory error");
  eval->add_option("--estimate", estimate)->required();
  eval->add_option("--reference", reference)->required();
  eval->add_option("--alignment", alignment)
      ->check(CLI::IsMember({"sim3", "se3"}))
      ->capture_default_str();
  eval->add_option("--gate", gate, "association gate in seconds")->capture_default_str();

  std::vector<int> bench_poses{10, 20, 50, 100, 200, 300, 500};
  int bench_patches = 8;
  int bench_radius = 10;
  int bench_repeats = 3;
  std::string csv_path;
  CLI::App* bench = app.add_subcommand("bench-ba", "dense vs block-sparse solve timing");
  bench->add_option("--poses", bench_poses)->capture_default_str();
  bench->add_option("--patches", bench_patches)->capture_default_str();
  bench->add_option("--radius", bench_radius)->capture_default_str();
  bench->add_option("--repeats", bench_repeats)->capture_default_str();
  bench->add_option("--csv", csv_path)->required();

  std::string fixture_type;
  std::string fixture_out;
  int fixture_frames = 100;
  int fixture_patches = 32;
  std::uint64_t fixture_seed = 0;
  CLI::App* exp = app.add_subcommand("export-fixture", "write a regression fixture");
  exp->add_option("--type", fixture_type)
      ->required()
      ->check(CLI::IsMember({"loop-graph", "candidate", "pose-graph"}));
  exp->add_option("--out", fixture_out)->required();
  exp->add_option("--frames", fixture_frames)->capture_default_str();
  exp->add_option("--patches", fixture_patches)->capture_default_str();
  exp->add_option("--seed", fixture_seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config_path, overrides);
    if (*gen) return cmd_gen_scene(scene, graph_out, trajectory_out);
    if (*eval) return cmd_eval_ate(estimate, reference, alignment, gate);
    if (*bench) {
      return cmd_bench_ba(bench_poses, bench_patches, bench_radius, bench_repeats,
                          csv_path);
    }
    if (*exp) {
      return cmd_export_fixture(fixture_type, fixture_out, fixture_frames,
                                fixture_patches, fixture_seed);
    }
  } catch (const ps::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const ps::ParseError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return kExitConfig;
  } catch (const ps::InfeasibleVisibility& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const ps::Error& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  }
  return 0;
}
