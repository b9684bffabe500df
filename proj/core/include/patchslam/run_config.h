#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "patchslam/frontend_oracle.h"

namespace patchslam {

// Everything a pipeline run depends on. Field names mirror the config keys
// listed by RunConfig::keys().
struct RunConfig {
  // scene.* (ignored when `fixture` is set)
  TrajectoryKind scene_kind = TrajectoryKind::kSquareLoop;
  int scene_frames = 150;
  int scene_patches = 32;
  double scene_size = 10.0;
  double scene_laps = 1.25;
  int scene_landmarks_per_frame = 100;
  std::uint64_t scene_seed = 1;
  std::string fixture;

  // oracle.*
  double oracle_pixel_sigma = 0.0;
  double oracle_outlier_fraction = 0.0;
  double oracle_outlier_magnitude = 20.0;
  double oracle_w_low = 0.0;
  std::uint64_t oracle_seed = 2;

  // drift.*: per-frame bias and noise of the motion the odometry flow sees
  double drift_yaw = 0.0;  // rad per frame about the camera y axis
  double drift_translation_sigma = 0.0;
  double drift_rotation_sigma = 0.0;
  std::uint64_t drift_seed = 3;

  // odometry.*
  int odometry_window = 10;
  int odometry_radius = 13;
  int odometry_iterations = 2;
  int solver_dense_threshold = 48;

  // closure.*
  bool closure_enabled = true;
  double closure_threshold = -1.0;
  int closure_min_gap = 30;
  int closure_max_edges = 288;
  int closure_backend_range = 1000;
  int closure_iterations = 8;
  double closure_heading_gate_deg = -1.0;

  // classical.*
  bool classical_enabled = false;
  int classical_delay = 5;
  int classical_min_gap = 30;
  double classical_retrieval_radius = 1.0;
  double classical_pixel_sigma = 0.0;
  double classical_outlier_fraction = 0.2;
  std::uint64_t classical_seed = 4;
  double classical_stall_bound_ms = 1000.0;

  int run_repeats = 5;

  // output.* (empty = not written)
  std::string output_trajectory;
  std::string output_reference;
  std::string output_events;
  std::string output_histogram;

  // Sets one key from its text value. Throws ConfigError naming `where`.
  void set(const std::string& key, const std::string& value,
           const std::string& where = "<override>");
  // Throws ConfigError on out-of-range or inconsistent values.
  void validate() const;

  SceneSpec scene_spec() const;
  OracleConfig oracle_config() const;

  static std::vector<std::string> keys();
};

// Flat "key = value" lines, '#' comments. Unknown keys and bad values throw
// ConfigError with "<source>:<line>:" context. The result is validated.
RunConfig parse_run_config(std::istream& in, const std::string& source = "<stream>",
                           RunConfig base = {});
RunConfig load_run_config(const std::string& path, RunConfig base = {});

// Applies "key=value" overrides on top of a config, then validates.
void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides);

}  // namespace patchslam
