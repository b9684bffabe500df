#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "patchslam/geometry.h"

namespace patchslam {

enum class EdgeKind : std::uint8_t { kOdometry = 0, kLoop = 1 };

struct Frame {
  int id = 0;
  Pose pose;  // world-from-camera
  double timestamp = 0.0;
  int patch_count = 0;
  bool is_keyframe = true;
  // False once the frame's dense feature map has been released. Its pose and
  // patches stay in the graph.
  bool has_dense_features = true;
};

// Directed patch -> frame edge (i, k, j): patch k of frame i observed in
// frame j.
struct Edge {
  int source_frame = 0;
  int source_patch = 0;
  int target_frame = 0;
  Eigen::Matrix2Xd ideal;  // target pixel per patch cell, 2 x p^2
  Vec2 confidence = Vec2::Ones();
  EdgeKind kind = EdgeKind::kOdometry;
};

struct EdgeSpec {
  int source_frame = 0;
  int source_patch = 0;
  int target_frame = 0;
  EdgeKind kind = EdgeKind::kOdometry;

  bool operator==(const EdgeSpec&) const = default;
};

struct DenseFeatureReport {
  std::vector<int> released;  // frames that dropped their dense features now
  int resident = 0;           // frames still holding dense features
};

class PatchGraph {
 public:
  explicit PatchGraph(const Intrinsics& intrinsics,
                      int patch_size = kDefaultPatchSize);

  // Appends a frame; every patch must carry the new frame id and the graph's
  // patch size. Returns the new frame id.
  int add_frame(const Pose& initial_pose, double timestamp,
                std::vector<Patch> patches, bool is_keyframe = true);

  // Appends edges with the ideal reprojection set to the current
  // reprojection and confidence (1, 1). Validates all specs before
  // modifying the graph. Returns the index of the first new edge.
  std::size_t add_edges(std::span<const EdgeSpec> specs);

  // Replaces edge (i, k, j) by (j, k', i) where k' is the patch of frame j
  // tracking the same point as patch k of frame i.
  void flip_edge(std::size_t edge_index);

  // Releases dense features of every frame older than `frame_id`. Poses,
  // patches and edges are retained.
  DenseFeatureReport remove_frames_before(int frame_id);
  // Releases one frame's dense features. Returns false if already released.
  bool release_dense_features(int frame_id);

  int num_frames() const { return static_cast<int>(frames_.size()); }
  std::size_t num_edges() const { return edges_.size(); }
  std::size_t num_patches() const;
  int patch_size() const { return patch_size_; }
  const Intrinsics& intrinsics() const { return intrinsics_; }

  const std::vector<Frame>& frames() const { return frames_; }
  const Frame& frame(int i) const { return frames_.at(i); }
  void set_pose(int i, const Pose& pose) { frames_.at(i).pose = pose; }
  void set_keyframe(int i, bool keyframe) { frames_.at(i).is_keyframe = keyframe; }

  const std::vector<Patch>& patches(int frame) const { return patches_.at(frame); }
  const Patch& patch(int frame, int k) const { return patches_.at(frame).at(k); }
  void set_inverse_depth(int frame, int k, double inverse_depth);

  const std::vector<Edge>& edges() const { return edges_; }
  const Edge& edge(std::size_t e) const { return edges_.at(e); }
  Edge& mutable_edge(std::size_t e) { return edges_.at(e); }

  // Index of the patch in `frame` with the given track, or -1.
  int find_track(int frame, std::int64_t track) const;

  // Current reprojection of an edge's source patch into its target frame.
  ReprojectedPatch reproject(const EdgeSpec& spec) const;
  ReprojectedPatch reproject(const Edge& edge) const;

  // Dense-feature accounting. `resident` counts frames that still hold a
  // dense map; `demand` counts distinct edge targets (frames whose dense map
  // is needed to update flow on some edge).
  int resident_dense_features() const;
  int dense_feature_demand() const;

  // Empty string if every structural invariant holds, otherwise a
  // description of the first violation.
  std::string check_invariants() const;

 private:
  void validate(const EdgeSpec& spec) const;

  Intrinsics intrinsics_;
  int patch_size_;
  std::vector<Frame> frames_;
  std::vector<std::vector<Patch>> patches_;
  std::vector<std::unordered_map<std::int64_t, int>> tracks_;
  std::vector<Edge> edges_;
};

// Local connectivity for a newly added frame: its patches to each of the
// previous `radius` frames, and every patch of those frames to the new one.
std::vector<EdgeSpec> make_odometry_edges(const PatchGraph& graph,
                                          int new_frame, int radius);

}  // namespace patchslam
