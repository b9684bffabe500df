#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "patchslam/geometry.h"
#include "patchslam/patch_graph.h"

namespace patchslam {

enum class TrajectoryKind { kLine, kCircle, kSquareLoop, kRandomWalkRevisit };

const char* trajectory_kind_name(TrajectoryKind kind);
// Accepts "line", "circle", "square-loop", "random-walk-with-revisit".
// Throws std::invalid_argument.
TrajectoryKind parse_trajectory_kind(const std::string& name);

struct SceneSpec {
  TrajectoryKind kind = TrajectoryKind::kCircle;
  int num_frames = 50;
  int patches_per_frame = 96;
  // Line length, circle radius or square side length. For the random walk,
  // the length of one step.
  double size = 10.0;
  // Circle and square: number of traversals spread over num_frames.
  double laps = 1.0;
  // Landmarks spawned inside each frame's frustum.
  int landmarks_per_frame = 200;
  double min_depth = 1.0;
  double max_depth = 20.0;
  Intrinsics intrinsics;
  int width = 512;
  int height = 384;
  int patch_size = kDefaultPatchSize;
  double frame_interval = 0.05;  // seconds
  std::uint64_t seed = 0;
};

struct SyntheticScene {
  SceneSpec spec;
  std::vector<Pose> poses;  // ground truth, world-from-camera
  std::vector<double> timestamps;
  std::vector<Vec3> landmarks;
  // Ground-truth patches per frame; track = landmark index.
  std::vector<std::vector<Patch>> patches;
};

// Ground-truth camera trajectory of a SceneSpec (no landmarks).
std::vector<Pose> make_trajectory(const SceneSpec& spec);

// Scene plus a patch graph holding ground-truth poses and depths, without
// edges. Throws InfeasibleVisibility when a frame sees fewer than
// patches_per_frame landmarks, std::invalid_argument on a bad spec.
struct GeneratedScene {
  SyntheticScene scene;
  PatchGraph graph;
};
GeneratedScene generate(const SceneSpec& spec);

// Adds make_odometry_edges for every frame after the first.
void add_odometry_edges(PatchGraph& graph, int radius);

struct OracleConfig {
  double pixel_sigma = 0.0;
  double outlier_fraction = 0.0;  // in [0, 1)
  double outlier_magnitude = 20.0;  // pixels
  double w_low = 0.0;
  std::uint64_t seed = 0;

  void validate() const;  // throws std::invalid_argument
};

// Per-step bias and noise composed onto the ground-truth relative motion:
// D_0 = G_0, D_{i+1} = D_i * (G_i^-1 G_{i+1}) * exp(bias + noise).
struct DriftModel {
  Vec6 bias = Vec6::Zero();
  double translation_sigma = 0.0;
  double rotation_sigma = 0.0;
  std::uint64_t seed = 0;
};
std::vector<Pose> drifted_trajectory(std::span<const Pose> truth,
                                     const DriftModel& model);

// Writes ideal reprojections and confidences the way the learned update
// operator would, from a known world. Odometry edges are generated from
// `odometry_poses` (ground truth unless set), loop edges always from ground
// truth. Edges whose ground-truth reprojection leaves the image or comes
// closer than half the minimum scene depth get confidence (0, 0): the
// oracle has no flow there. Noise draws come from one seeded stream
// consumed in edge order.
class FlowOracle {
 public:
  FlowOracle(const SyntheticScene& scene, const OracleConfig& config);

  void set_odometry_poses(std::vector<Pose> poses);
  const std::vector<Pose>& odometry_poses() const { return odometry_poses_; }

  void fill(PatchGraph& graph, std::size_t first_edge = 0,
            std::size_t last_edge = std::numeric_limits<std::size_t>::max());

  // Number of edges replaced by outliers so far.
  std::size_t outliers() const { return outliers_; }

 private:
  bool in_view(const Patch& patch, const Pose& source, const Pose& target,
               const ReprojectedPatch& rp) const;

  const SyntheticScene* scene_;
  OracleConfig config_;
  std::vector<Pose> odometry_poses_;
  std::mt19937_64 rng_;
  std::size_t outliers_ = 0;
};

void fill_flow(PatchGraph& graph, const SyntheticScene& scene,
               const OracleConfig& config);

// One lap of a circle with odometry edges of the given radius, plus loop
// edges from each of the first `loop_span` frames to the frame mirroring it
// at the end of the lap. Flow is filled from ground truth.
GeneratedScene make_loop_scene(int num_frames, int patches_per_frame, int radius,
                               int loop_span, std::uint64_t seed = 0);

}  // namespace patchslam
