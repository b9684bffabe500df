#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "patchslam/geometry.h"
#include "patchslam/patch_graph.h"

namespace patchslam {

// Loop term: r_jk = log(delta * S_j^-1 * S_k). A consistent delta is
// S_k^-1 S_j, the map from frame-j camera coordinates to frame-k camera
// coordinates.
struct LoopConstraint {
  int j = 0;
  int k = 0;
  Similarity delta;
};

// Similarity pose graph over keyframes. Node 0 is held constant; all other
// nodes are free. odometry[i] is the constant Delta_(i,i+1).
class PoseGraphProblem {
 public:
  PoseGraphProblem(std::vector<Similarity> nodes,
                   std::vector<Similarity> odometry,
                   std::vector<LoopConstraint> loops);

  // Nodes are the poses as similarities with scale 1 and each Delta is
  // taken from the same poses.
  static PoseGraphProblem from_poses(const std::vector<Pose>& poses,
                                     std::vector<LoopConstraint> loops);

  int num_nodes() const { return static_cast<int>(nodes_.size()); }
  const std::vector<Similarity>& nodes() const { return nodes_; }
  const Similarity& node(int i) const { return nodes_.at(i); }
  void set_node(int i, const Similarity& s) { nodes_.at(i) = s; }
  const std::vector<Similarity>& odometry() const { return odometry_; }
  const std::vector<LoopConstraint>& loops() const { return loops_; }

  // log(Delta_(i,i+1)^-1 S_i^-1 S_(i+1)), 0 <= i < N-1.
  Tangent7 residual_smooth(int i) const;
  Tangent7 residual_loop(std::size_t l) const;

  // Derivatives w.r.t. right perturbations S * exp(delta) of the two nodes.
  void smooth_jacobians(int i, Mat7* d_i, Mat7* d_next) const;
  void loop_jacobians(std::size_t l, Mat7* d_j, Mat7* d_k) const;

  // sum |r_i|^2 + sum |r_jk|^2
  double objective() const;

 private:
  std::vector<Similarity> nodes_;
  std::vector<Similarity> odometry_;
  std::vector<LoopConstraint> loops_;
};

struct PGOOptions {
  int max_iterations = 50;
  double gradient_tolerance = 1e-12;
  double step_tolerance = 1e-14;
  double initial_lambda = 1e-4;
  double lambda_increase = 10.0;
  double lambda_decrease = 0.5;
  double max_lambda = 1e12;
  int max_singular_retries = 8;
};

struct PGOReport {
  int iterations = 0;  // linearizations
  int accepted_steps = 0;
  int rejected_steps = 0;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  double max_residual_norm = 0.0;  // after optimization
  std::vector<double> scales;      // s_i per node
  bool converged = false;
};

// Levenberg-Marquardt over nodes 1..N-1 with a block-sparse Cholesky of the
// 7x7-block normal equations. Throws SingularSystem.
PGOReport optimize(PoseGraphProblem& problem, const PGOOptions& options = {});

// A chain whose odometry steps each carry scale `step_scale`, closed by one
// loop (0, nodes - 1) that `truth` satisfies exactly. Nodes start at the
// truth with every scale reset to 1.
struct PlantedScaleDrift {
  PoseGraphProblem problem;
  std::vector<Similarity> truth;
};
PlantedScaleDrift make_scale_drift_chain(int nodes, double step_scale,
                                         std::uint64_t seed = 0);

// Writes a solution back: frame node_frames[i] gets pose (R_i, t_i) and its
// patch inverse depths are divided by s_i. Every other frame follows the
// closest node frame at or before it (or the first node frame): its pose
// relative to that frame, read from the graph before the update, is
// composed onto the corrected similarity and its depths are divided by the
// same s. Frames added after a snapshot are rebased the same way.
void apply_corrections(PatchGraph& graph, const std::vector<int>& node_frames,
                       const std::vector<Similarity>& solution);

}  // namespace patchslam
