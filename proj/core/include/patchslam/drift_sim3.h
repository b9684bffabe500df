#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "patchslam/geometry.h"
#include "patchslam/patch_graph.h"

namespace patchslam {

struct SyntheticScene;

// Keypoint observations in a frame and its two temporal neighbors. Column i
// of each matrix is keypoint i; NaN marks a missing observation. Every
// keypoint is observed in the center frame.
struct CandidateSide {
  int center = 0;
  int neighbor_a = 0;
  int neighbor_b = 0;
  Eigen::Matrix2Xd center_px;
  Eigen::Matrix2Xd a_px;
  Eigen::Matrix2Xd b_px;

  int size() const { return static_cast<int>(center_px.cols()); }
};

// A retrieved frame pair j (older) / k with 2D correspondences around each
// and keypoint matches (index into side_j, index into side_k).
struct LoopCandidate {
  int frame_j = 0;
  int frame_k = 0;
  CandidateSide side_j;
  CandidateSide side_k;
  std::vector<std::pair<int, int>> matches;
};

struct TriangulationOptions {
  double reprojection_gate = 2.0;  // pixels, RMS over the observations
  int iterations = 10;
};

// Keypoints in the center camera's coordinates.
struct TriangulatedPoints {
  std::vector<int> keypoints;  // indices into the side
  std::vector<Vec3> points;
  std::vector<double> inverse_depths;

  int find(int keypoint) const;  // position in `keypoints` or -1
};

// Structure-only bundle adjustment: one inverse depth per keypoint along its
// center-frame ray, the three poses (world-from-camera) held constant.
// Keypoints with fewer than two observations, non-positive depth, no
// parallax or residual above the gate are dropped. Throws
// InsufficientParallax if none survive.
TriangulatedPoints triangulate(const CandidateSide& side, const Pose& center,
                               const Pose& neighbor_a, const Pose& neighbor_b,
                               const Intrinsics& intr,
                               const TriangulationOptions& options = {});

// Least-squares similarity minimizing sum |s R x_i + t - y_i|^2 (columns of
// the 3 x N inputs); with estimate_scale false, s is held at 1. Throws
// DegenerateConfiguration for fewer than three pairs or collinear /
// coincident points.
Similarity umeyama(const Eigen::Matrix3Xd& source, const Eigen::Matrix3Xd& target,
                   bool estimate_scale = true);

struct RansacOptions {
  int iterations = 512;
  // Inlier distance; <= 0 selects 0.02 x RMS radius of the target cloud.
  double inlier_threshold = -1.0;
  int min_inliers = 12;
  std::uint64_t seed = 0;
};

struct DriftEstimate {
  Similarity transform;  // maps source (j camera) to target (k camera)
  int inliers = 0;
  double inlier_ratio = 0.0;
  double rms_error = 0.0;  // over inliers, scene units
  std::vector<std::uint8_t> inlier_mask;
};

// Best minimal-sample model by inlier count, refit on its inliers. Throws
// DegenerateConfiguration for fewer than four pairs, NoConsensus when the
// best model has fewer than min_inliers inliers.
DriftEstimate ransac_umeyama(const Eigen::Matrix3Xd& source,
                             const Eigen::Matrix3Xd& target,
                             const RansacOptions& options = {});

// Triangulates both sides with the graph's current poses and aligns the
// matched points: the result maps frame-j camera coordinates to frame-k
// camera coordinates.
DriftEstimate estimate_drift(const LoopCandidate& candidate,
                             const std::vector<Pose>& poses,
                             const Intrinsics& intr,
                             const TriangulationOptions& triangulation = {},
                             const RansacOptions& ransac = {});

// Accepts a detection once the same (j bucket, k bucket) pair has been seen
// in `required` consecutive keyframes.
class DetectionGate {
 public:
  explicit DetectionGate(int bucket_width = 5, int required = 2);

  // Called once per keyframe with that keyframe's detection, if any.
  bool observe(std::optional<std::pair<int, int>> detection);

 private:
  int bucket_width_;
  int required_;
  std::optional<std::pair<int, int>> last_;
  int streak_ = 0;
};

class LoopCandidateProvider {
 public:
  virtual ~LoopCandidateProvider() = default;
  // Candidate retrieved for keyframe `frame`, if any.
  virtual std::optional<LoopCandidate> query(int frame) = 0;
};

struct SyntheticProviderConfig {
  int min_gap = 30;             // frames between j and k
  double retrieval_radius = 1.0;  // ground-truth camera distance
  double pixel_sigma = 0.0;
  double outlier_fraction = 0.0;  // of cross matches
  int max_keypoints = 200;
  std::uint64_t seed = 0;
};

// Ground-truth covisibility stands in for retrieval and 2D matching; a
// fraction of the cross matches are re-paired at random.
class SyntheticCandidateProvider : public LoopCandidateProvider {
 public:
  SyntheticCandidateProvider(const SyntheticScene& scene,
                             const SyntheticProviderConfig& config);
  std::optional<LoopCandidate> query(int frame) override;

 private:
  const SyntheticScene* scene_;
  SyntheticProviderConfig config_;
};

// Replays candidates from files (see loop_candidate_io.h).
class FileCandidateProvider : public LoopCandidateProvider {
 public:
  explicit FileCandidateProvider(std::vector<LoopCandidate> candidates);
  static FileCandidateProvider from_files(const std::vector<std::string>& paths);
  std::optional<LoopCandidate> query(int frame) override;

 private:
  std::vector<LoopCandidate> candidates_;
};

}  // namespace patchslam
