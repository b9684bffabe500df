#include "patchslam/harness.h"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>
#include <future>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>

#include "patchslam/drift_sim3.h"
#include "patchslam/errors.h"
#include "patchslam/frontend_oracle.h"
#include "patchslam/graph_io.h"
#include "patchslam/pose_graph.h"

namespace patchslam {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n == 0) return 0.0;
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct WorkerOutput {
  int frame_j = 0;
  int frame_k = 0;
  bool ok = false;
  std::string reason;
  DriftEstimate drift;
  PGOReport pgo;
  std::vector<Similarity> solution;
  double ms = 0.0;
};

WorkerOutput classical_worker(LoopCandidate candidate, std::vector<Pose> poses,
                              Intrinsics intr, std::uint64_t seed) {
  const auto t0 = Clock::now();
  WorkerOutput out;
  out.frame_j = candidate.frame_j;
  out.frame_k = candidate.frame_k;
  try {
    RansacOptions ransac;
    ransac.seed = seed;
    out.drift = estimate_drift(candidate, poses, intr, {}, ransac);
    PoseGraphProblem problem = PoseGraphProblem::from_poses(
        poses, {LoopConstraint{candidate.frame_j, candidate.frame_k,
                               out.drift.transform}});
    out.pgo = optimize(problem);
    out.solution = problem.nodes();
    out.ok = true;
  } catch (const Error& e) {
    out.reason = e.what();
  }
  out.ms = ms_since(t0);
  return out;
}

Trajectory trajectory_of(const PatchGraph& graph) {
  Trajectory t;
  for (const Frame& f : graph.frames()) t.append(f.timestamp, f.pose);
  return t;
}

struct PendingJob {
  std::future<WorkerOutput> result;
  int submitted = 0;
  int apply_at = 0;
  int snapshot_frames = 0;
};

RunResult run_fixture(const RunConfig& config) {
  RunResult result;
  PatchGraph graph = read_patch_graph(config.fixture);
  const auto t0 = Clock::now();
  if (graph.num_frames() > 0) {
    BAProblem problem(graph, 0, graph.num_frames() - 1);
    BAOptions options;
    options.max_iterations = config.closure_iterations;
    options.dense_threshold = config.solver_dense_threshold;
    const BAReport report = solve(problem, options);
    result.events.push_back(to_log_line(report));
  }
  const double ms = ms_since(t0);
  result.frames.push_back({graph.num_frames() - 1, ms, false, false});
  result.wall_ms = ms;
  result.peak_resident_dense_features = graph.resident_dense_features();
  result.estimate = trajectory_of(graph);
  return result;
}

}  // namespace

RunResult run(const RunConfig& config) {
  config.validate();
  if (!config.fixture.empty()) return run_fixture(config);

  RunResult result;
  const SceneSpec spec = config.scene_spec();
  const GeneratedScene generated = generate(spec);
  const SyntheticScene& scene = generated.scene;
  const int num_frames = static_cast<int>(scene.poses.size());

  DriftModel drift;
  drift.bias(4) = config.drift_yaw;
  drift.translation_sigma = config.drift_translation_sigma;
  drift.rotation_sigma = config.drift_rotation_sigma;
  drift.seed = config.drift_seed;
  const std::vector<Pose> perceived = drifted_trajectory(scene.poses, drift);

  FlowOracle oracle(scene, config.oracle_config());
  oracle.set_odometry_poses(perceived);
  const FlowFiller filler = [&oracle](PatchGraph& g, std::size_t first,
                                      std::size_t last) {
    oracle.fill(g, first, last);
  };

  ProximityConfig proximity;
  proximity.distance_threshold = config.closure_threshold;
  proximity.min_temporal_gap = config.closure_min_gap;
  proximity.max_edges_per_closure = config.closure_max_edges;
  proximity.backend_range = config.closure_backend_range;
  proximity.heading_gate_deg = config.closure_heading_gate_deg;
  proximity.global_iterations = config.closure_iterations;
  proximity.dense_threshold = config.solver_dense_threshold;
  proximity.validate(config.odometry_radius, config.odometry_window);
  ClosureScheduler closure_schedule(config.closure_min_gap);

  std::unique_ptr<SyntheticCandidateProvider> provider;
  if (config.classical_enabled) {
    SyntheticProviderConfig pc;
    pc.min_gap = config.classical_min_gap;
    pc.retrieval_radius = config.classical_retrieval_radius;
    pc.pixel_sigma = config.classical_pixel_sigma;
    pc.outlier_fraction = config.classical_outlier_fraction;
    pc.seed = config.classical_seed;
    provider = std::make_unique<SyntheticCandidateProvider>(scene, pc);
  }
  DetectionGate gate;
  ClosureScheduler classical_schedule(config.classical_min_gap);
  std::optional<PendingJob> job;

  BAOptions odometry_options;
  odometry_options.max_iterations = config.odometry_iterations;
  odometry_options.dense_threshold = config.solver_dense_threshold;

  PatchGraph graph(spec.intrinsics, spec.patch_size);
  const auto run_start = Clock::now();
  for (int n = 0; n < num_frames; ++n) {
    const auto t0 = Clock::now();
    FrameTiming timing;
    timing.frame = n;
    timing.worker_active = job.has_value();

    Pose init = perceived[n];
    if (n >= 2) {
      const Pose& p1 = graph.frame(n - 1).pose;
      const Pose& p2 = graph.frame(n - 2).pose;
      init = p1 * (p2.inverse() * p1);
    }
    graph.add_frame(init, scene.timestamps[n], scene.patches[n]);
    const std::vector<EdgeSpec> specs =
        make_odometry_edges(graph, n, config.odometry_radius);
    if (!specs.empty()) {
      const std::size_t first = graph.add_edges(specs);
      oracle.fill(graph, first, graph.num_edges());
      BAProblem window(graph, std::max(0, n - config.odometry_window + 1), n);
      solve(window, odometry_options);
    }
    graph.remove_frames_before(n + 1 - config.odometry_radius);
    result.peak_resident_dense_features =
        std::max(result.peak_resident_dense_features, graph.resident_dense_features());

    if (config.closure_enabled && closure_schedule.ready(n)) {
      const int recent_begin =
          std::max(n - config.odometry_window + 1, n + 1 - config.odometry_radius);
      const std::vector<LoopPair> pairs = detect(graph, proximity, recent_begin);
      if (!pairs.empty()) {
        ClosureEvent ev = close(graph, pairs, filler, proximity);
        closure_schedule.fired(n);
        result.events.push_back(ev.log_line());
        result.events.push_back(to_log_line(ev.ba));
        result.closures.push_back(std::move(ev));
        timing.closure = true;
      }
    }

    if (provider) {
      if (job && n >= job->apply_at) {
        WorkerOutput out = job->result.get();
        std::ostringstream os;
        if (out.ok) {
          std::vector<int> node_frames(job->snapshot_frames);
          for (int f = 0; f < job->snapshot_frames; ++f) node_frames[f] = f;
          apply_corrections(graph, node_frames, out.solution);
          ++result.pgo_applied;
          os << "pgo apply frame=" << n << " j=" << out.frame_j << " k=" << out.frame_k
             << " inliers=" << out.drift.inliers
             << " scale=" << out.drift.transform.scale()
             << " initial=" << out.pgo.initial_objective
             << " final=" << out.pgo.final_objective << " worker_ms=" << out.ms;
        } else {
          ++result.pgo_rejected;
          os << "pgo reject frame=" << n << " j=" << out.frame_j << " k=" << out.frame_k
             << " reason=\"" << out.reason << "\"";
        }
        result.events.push_back(os.str());
        job.reset();
      } else if (!job) {
        std::optional<LoopCandidate> candidate = provider->query(n);
        std::optional<std::pair<int, int>> detection;
        if (candidate) detection.emplace(candidate->frame_j, candidate->frame_k);
        if (gate.observe(detection) && classical_schedule.ready(n)) {
          std::vector<Pose> snapshot;
          snapshot.reserve(graph.num_frames());
          for (const Frame& f : graph.frames()) snapshot.push_back(f.pose);
          PendingJob pending;
          pending.submitted = n;
          pending.apply_at = n + config.classical_delay;
          pending.snapshot_frames = graph.num_frames();
          std::ostringstream os;
          os << "pgo submit frame=" << n << " j=" << candidate->frame_j
             << " k=" << candidate->frame_k;
          result.events.push_back(os.str());
          pending.result = std::async(std::launch::async, classical_worker,
                                      std::move(*candidate), std::move(snapshot),
                                      spec.intrinsics, config.classical_seed + n);
          job = std::move(pending);
          classical_schedule.fired(n);
        }
      }
    }

    timing.ms = ms_since(t0);
    if (timing.worker_active) {
      result.max_worker_frame_ms = std::max(result.max_worker_frame_ms, timing.ms);
    }
    std::ostringstream os;
    os << "frame id=" << n << " t=" << scene.timestamps[n] << " ms=" << timing.ms
       << " closure=" << (timing.closure ? 1 : 0)
       << " worker=" << (timing.worker_active ? 1 : 0);
    result.events.push_back(os.str());
    result.frames.push_back(timing);
  }
  if (job) {
    // Results that would land after the last frame are dropped.
    job->result.wait();
    result.events.push_back("pgo drop frame=" + std::to_string(num_frames) +
                            " reason=\"sequence ended\"");
  }
  result.wall_ms = ms_since(run_start);
  result.stall_exceeded = result.max_worker_frame_ms > config.classical_stall_bound_ms;

  result.estimate = trajectory_of(graph);
  for (int i = 0; i < num_frames; ++i) {
    result.reference.append(scene.timestamps[i], scene.poses[i]);
  }
  result.ate = ate(result.estimate, result.reference, Alignment::kSim3).rmse;
  std::ostringstream os;
  os << "summary frames=" << num_frames << " closures=" << result.closures.size()
     << " pgo_applied=" << result.pgo_applied << " pgo_rejected=" << result.pgo_rejected
     << " wall_ms=" << result.wall_ms << " ate=" << *result.ate
     << " peak_resident=" << result.peak_resident_dense_features;
  result.events.push_back(os.str());
  return result;
}

bool bit_identical(const Trajectory& a, const Trajectory& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const StampedPose& x = a[i];
    const StampedPose& y = b[i];
    if (std::memcmp(&x.timestamp, &y.timestamp, sizeof(double)) != 0) return false;
    if (std::memcmp(x.pose.translation().data(), y.pose.translation().data(),
                    3 * sizeof(double)) != 0 ||
        std::memcmp(x.pose.rotation().coeffs().data(),
                    y.pose.rotation().coeffs().data(), 4 * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

RepeatReport run_repeats(const RunConfig& config) {
  RepeatReport report;
  for (int r = 0; r < config.run_repeats; ++r) {
    report.runs.push_back(run(config));
    const RunResult& last = report.runs.back();
    if (last.ate) report.ates.push_back(*last.ate);
    if (r > 0 && !bit_identical(report.runs.front().estimate, last.estimate)) {
      report.identical = false;
    }
  }
  if (!report.ates.empty()) report.median_ate = median(report.ates);
  return report;
}

std::vector<FpsBin> fps_histogram(const std::vector<FrameTiming>& frames) {
  std::map<int, FpsBin> bins;
  for (const FrameTiming& f : frames) {
    const int fps = f.ms > 0.0 ? static_cast<int>(std::min(1000.0 / f.ms, 1e9)) : 1000000000;
    FpsBin& b = bins[fps];
    b.fps = fps;
    ++b.frames;
    if (f.closure) ++b.closure_frames;
  }
  std::vector<FpsBin> out;
  for (const auto& [_, b] : bins) out.push_back(b);
  return out;
}

void write_fps_histogram(std::ostream& out, const std::vector<FpsBin>& bins) {
  out << "fps,frames,closure_frames\n";
  for (const FpsBin& b : bins) {
    out << b.fps << ',' << b.frames << ',' << b.closure_frames << '\n';
  }
}

LatencyModes latency_modes(const std::vector<FrameTiming>& frames) {
  std::vector<double> odo;
  std::vector<double> clo;
  for (const FrameTiming& f : frames) (f.closure ? clo : odo).push_back(f.ms);
  LatencyModes m;
  m.odometry_frames = static_cast<int>(odo.size());
  m.closure_frames = static_cast<int>(clo.size());
  m.odometry_median_ms = median(odo);
  m.closure_median_ms = median(clo);
  return m;
}

void write_outputs(const RunConfig& config, const RunResult& result) {
  auto open = [](const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError(path + ": cannot open for writing");
    return out;
  };
  if (!config.output_trajectory.empty()) {
    write_tum(config.output_trajectory, result.estimate);
  }
  if (!config.output_reference.empty() && !result.reference.empty()) {
    write_tum(config.output_reference, result.reference);
  }
  if (!config.output_events.empty()) {
    std::ofstream out = open(config.output_events);
    for (const std::string& line : result.events) out << line << '\n';
  }
  if (!config.output_histogram.empty()) {
    std::ofstream out = open(config.output_histogram);
    write_fps_histogram(out, fps_histogram(result.frames));
  }
}

}  // namespace patchslam
