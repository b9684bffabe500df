#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "patchslam/geometry.h"
#include "patchslam/patch_graph.h"

namespace patchslam {

enum class SolverBackend { kDense, kBlockSparse };

const char* backend_name(SolverBackend backend);

// Damped normal equations H dx = b of one Gauss-Newton step, b = -J^T W r.
// Pose variables carry 6 dof, depth variables 1. Depths are eliminated by
// the solvers (Schur complement), so the depth block is stored as a diagonal.
struct BlockSparseSystem {
  struct PoseBlock {
    int row = 0;  // row >= col
    int col = 0;
    Mat6 value = Mat6::Zero();
  };
  struct Coupling {
    int pose = 0;
    int depth = 0;
    Vec6 value = Vec6::Zero();  // H(pose, depth)
  };

  int num_poses = 0;
  int num_depths = 0;
  std::vector<PoseBlock> pose_blocks;  // lower triangle incl. every diagonal
  std::vector<double> depth_diagonal;
  std::vector<Coupling> couplings;     // grouped by depth
  std::vector<int> coupling_offsets;   // CSR over depths, size num_depths + 1
  std::vector<Vec6> pose_rhs;
  Eigen::VectorXd depth_rhs;

  // Dense (6 n_p + n_d) square matrix and right-hand side, unreduced.
  Eigen::MatrixXd full_matrix() const;
  Eigen::VectorXd full_rhs() const;
};

struct BAUpdate {
  std::vector<Vec6> poses;
  Eigen::VectorXd depths;

  double norm() const;
};

struct SolveTiming {
  double assemble_ms = 0.0;   // Schur reduction into the backend's storage
  double factorize_ms = 0.0;
  double solve_ms = 0.0;      // triangular solves + depth back-substitution
  std::size_t block_count = 0;  // 6x6 blocks held by the reduced system
};

// Marquardt damping: every diagonal entry d becomes d + lambda * max(d, 1e-9).
void apply_damping(BlockSparseSystem& system, double lambda);

// Both eliminate depths first and solve the reduced pose system: one with a
// dense Cholesky of the full reduced matrix, the other with a block-sparse
// Cholesky over the co-observation pattern. Throw SingularSystem.
BAUpdate solve_dense(const BlockSparseSystem& system,
                     SolveTiming* timing = nullptr);
BAUpdate solve_block_sparse(const BlockSparseSystem& system,
                            SolveTiming* timing = nullptr);

// Dense iff the number of free poses is at most `threshold`.
SolverBackend select_backend(int free_poses, int threshold);

struct BAOptions {
  int max_iterations = 8;
  // Stop once the largest gradient entry falls below this.
  double gradient_tolerance = 1e-10;
  // Or once an accepted step is shorter than this.
  double step_tolerance = 1e-12;
  double initial_lambda = 1e-4;
  double lambda_increase = 10.0;
  double lambda_decrease = 0.5;
  double max_lambda = 1e12;
  int dense_threshold = 48;
  std::optional<SolverBackend> force_backend;
  // Factorization failures escalate lambda this many times before
  // SingularSystem surfaces.
  int max_singular_retries = 8;
};

// One weighted bundle-adjustment problem over a patch graph: poses with ids in
// [first_free, last_free] and the depths of patches owned by those frames are
// variables; everything else is held constant. The problem includes every
// edge that touches a variable.
//
// Gauge: if no constant pose is connected to the problem, the oldest free
// pose becomes constant. If afterwards fewer than two constant poses are
// connected, the translation scale of the next free pose (its distance to
// the constant pose) is locked as well.
class BAProblem {
 public:
  BAProblem(PatchGraph& graph, int first_free, int last_free);

  PatchGraph& graph() { return *graph_; }
  const PatchGraph& graph() const { return *graph_; }

  const std::vector<int>& free_poses() const { return free_poses_; }
  int num_free_poses() const { return static_cast<int>(free_poses_.size()); }
  // Constant poses touched by at least one problem edge.
  const std::vector<int>& fixed_poses() const { return fixed_poses_; }
  std::optional<int> scale_locked_pose() const { return scale_locked_; }
  int num_free_depths() const { return static_cast<int>(depth_vars_.size()); }
  const std::vector<std::pair<int, int>>& free_depths() const { return depth_vars_; }
  const std::vector<std::size_t>& edges() const { return edges_; }

  std::size_t count_edges(EdgeKind kind) const;
  // Patches with at least one outgoing problem edge whose larger confidence
  // component exceeds `threshold`.
  int active_patch_count(double threshold = 0.5) const;
  // Free depths with zero information (every touching cell has weight 0).
  std::vector<std::pair<int, int>> unconstrained_depths() const;

  // Residual (reprojection - ideal) per problem edge, laid out
  // (x0, y0, x1, y1, ...). Cells behind the target camera read 0.
  std::vector<Eigen::VectorXd> residuals() const;
  // sum over edges and cells of w_x r_x^2 + w_y r_y^2.
  double objective() const;

  // Normal equations at the current graph state (undamped). Unconstrained
  // depths keep an all-zero row, so after damping their update is exactly 0.
  BlockSparseSystem linearize() const;

  // Right-multiplies free poses by exp(update) and adds depth updates
  // (clamped to the inverse-depth floor).
  void apply(const BAUpdate& update);

  struct State {
    std::vector<Pose> poses;
    std::vector<double> depths;
  };
  State save() const;
  void restore(const State& state);

 private:
  struct EdgeSlots {
    int source_pose = -1;  // variable index or -1
    int target_pose = -1;
    int depth = -1;
    int block_ss = -1;
    int block_tt = -1;
    int block_st = -1;  // lower-triangle block joining source and target
    bool st_transposed = false;  // block stores (target, source) orientation
    int coupling_s = -1;
    int coupling_t = -1;
  };

  Vec6 scale_lock_direction() const;

  PatchGraph* graph_;
  std::vector<int> free_poses_;
  std::vector<int> pose_var_;  // frame -> variable or -1
  std::vector<int> fixed_poses_;
  std::optional<int> scale_locked_;
  int scale_anchor_ = -1;
  std::vector<std::pair<int, int>> depth_vars_;
  std::vector<std::vector<int>> depth_var_;  // [frame][patch] -> var or -1
  std::vector<std::size_t> edges_;
  std::vector<EdgeSlots> slots_;
  std::vector<std::pair<int, int>> block_layout_;  // (row, col) per block
  std::vector<std::pair<int, int>> coupling_layout_;  // (pose, depth)
  std::vector<int> coupling_offsets_;
};

struct BAReport {
  int iterations = 0;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  SolverBackend backend = SolverBackend::kDense;
  std::vector<double> iteration_seconds;
  // Objective after each accepted step, preceded by the initial objective.
  std::vector<double> objective_history;
  bool converged = false;
  int accepted_steps = 0;
  int rejected_steps = 0;
  double last_update_norm = 0.0;
  double final_lambda = 0.0;
  SolveTiming timing;  // summed over iterations
  std::size_t odometry_edges = 0;
  std::size_t loop_edges = 0;
  int active_patches = 0;
  std::vector<std::pair<int, int>> unconstrained_depths;
};

// Levenberg-Marquardt over the problem's variables. Accepted steps strictly
// decrease the objective.
BAReport solve(BAProblem& problem, const BAOptions& options = {});

// "ba iterations=... backend=... initial=... final=... converged=..." form.
std::string to_log_line(const BAReport& report);

}  // namespace patchslam
