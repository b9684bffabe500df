#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "patchslam/bundle_adjust.h"
#include "patchslam/patch_graph.h"

namespace patchslam {

struct ProximityConfig {
  // Camera-center distance below which two frames are a revisit; <= 0
  // selects twice the median spacing between consecutive frames.
  double distance_threshold = -1.0;
  int min_temporal_gap = 30;
  int max_edges_per_closure = 288;
  int backend_range = 1000;
  // Optional viewing-direction gate; <= 0 disables it.
  double heading_gate_deg = -1.0;
  int global_iterations = 8;
  int dense_threshold = 48;

  // Throws ConfigError unless min_temporal_gap > odometry_radius and
  // backend_range >= free_window.
  void validate(int odometry_radius, int free_window) const;
};

struct LoopPair {
  int old_frame = 0;
  int recent_frame = 0;
  double distance = 0.0;
};

double median_frame_spacing(const PatchGraph& graph);
double effective_threshold(const PatchGraph& graph, const ProximityConfig& config);

// Pairs with recent_frame >= recent_begin, temporal gap >= min_temporal_gap
// and camera-center distance below the threshold, nearest first.
std::vector<LoopPair> detect(const PatchGraph& graph, const ProximityConfig& config,
                             int recent_begin = 0);

// Fills ideal reprojections and confidences for edges [first, last).
using FlowFiller = std::function<void(PatchGraph&, std::size_t, std::size_t)>;

struct ClosureEvent {
  int anchor = -1;              // recent frame of the best pair
  double timestamp = 0.0;       // of the anchor frame
  std::vector<int> matched;     // old frames that received edges
  std::vector<std::size_t> edges;
  BAReport ba;
  double ba_ms = 0.0;
  int resident_before = 0;      // frames holding dense features
  int resident_after = 0;
  std::size_t patch_features = 0;  // old patches consulted

  // "closure t=<s> anchor=<id> matches=<a,b,..> edges=<n> ba_ms=<ms>"
  std::string log_line() const;
};

// Inserts loop edges from every patch of each candidate's old frame to its
// recent frame (pairs already joined by a loop edge are skipped) up to the
// edge cap, fills their flow, then runs one bundle adjustment over the last
// backend_range frames with odometry and loop edges together. Throws
// std::invalid_argument on an empty candidate list; propagates
// SingularSystem.
ClosureEvent close(PatchGraph& graph, const std::vector<LoopPair>& candidates,
                   const FlowFiller& fill, const ProximityConfig& config);

// Closure cadence: at most one closure per min_temporal_gap frames.
class ClosureScheduler {
 public:
  explicit ClosureScheduler(int cooldown) : cooldown_(cooldown) {}
  bool ready(int frame) const { return last_ < 0 || frame - last_ >= cooldown_; }
  void fired(int frame) { last_ = frame; }

 private:
  int cooldown_;
  int last_ = -1;
};

}  // namespace patchslam
