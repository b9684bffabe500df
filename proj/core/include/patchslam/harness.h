#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "patchslam/loop_proximity.h"
#include "patchslam/run_config.h"
#include "patchslam/trajectory.h"

namespace patchslam {

struct FrameTiming {
  int frame = 0;
  double ms = 0.0;
  bool closure = false;        // a proximity closure ran in this frame
  bool worker_active = false;  // the classical worker was in flight
};

struct RunResult {
  Trajectory estimate;
  Trajectory reference;  // ground truth; empty for fixture runs
  std::optional<double> ate;  // sim3-aligned RMSE against the reference

  // One line per event; see the README for the grammar.
  std::vector<std::string> events;
  std::vector<FrameTiming> frames;
  std::vector<ClosureEvent> closures;
  int pgo_applied = 0;
  int pgo_rejected = 0;

  double wall_ms = 0.0;
  // Longest frame while the classical worker was in flight, and whether it
  // exceeded classical.stall_bound_ms.
  double max_worker_frame_ms = 0.0;
  bool stall_exceeded = false;
  int peak_resident_dense_features = 0;
};

// Runs the pipeline once: windowed odometry bundle adjustment per frame,
// proximity closures and, if enabled, classical similarity closures on a
// worker thread. The config must already be valid. Throws ConfigError or
// ParseError for unusable inputs, other Errors for numerical failures.
RunResult run(const RunConfig& config);

struct RepeatReport {
  std::vector<RunResult> runs;
  std::vector<double> ates;  // per run, empty without a reference
  std::optional<double> median_ate;
  // Every run produced bit-identical trajectories.
  bool identical = true;
};

// config.run_repeats identical runs.
RepeatReport run_repeats(const RunConfig& config);

// True when both trajectories hold the same timestamps and pose bits.
bool bit_identical(const Trajectory& a, const Trajectory& b);

struct FpsBin {
  int fps = 0;  // floor(1000 / frame ms)
  int frames = 0;
  int closure_frames = 0;
};

// 1 FPS wide bins, ascending, empty bins omitted.
std::vector<FpsBin> fps_histogram(const std::vector<FrameTiming>& frames);
// "fps,frames,closure_frames" header, one row per bin.
void write_fps_histogram(std::ostream& out, const std::vector<FpsBin>& bins);

struct LatencyModes {
  double odometry_median_ms = 0.0;
  double closure_median_ms = 0.0;
  int odometry_frames = 0;
  int closure_frames = 0;
};
LatencyModes latency_modes(const std::vector<FrameTiming>& frames);

// Writes the outputs named in the config (trajectory, reference, events,
// histogram).
void write_outputs(const RunConfig& config, const RunResult& result);

}  // namespace patchslam
