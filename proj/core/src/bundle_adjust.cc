#include "patchslam/bundle_adjust.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <Eigen/Cholesky>

#include "patchslam/block_sparse.h"
#include "patchslam/errors.h"

namespace patchslam {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::uint64_t pair_key(int a, int b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

// Orthonormal map whose last column is `n`, with the last column then
// zeroed: multiplying a pose Jacobian by it removes motion along n.
Mat6 locked_basis(const Vec6& n) {
  Mat6 Q = Mat6::Identity();
  Vec6 e = Vec6::Zero();
  e(5) = 1.0;
  const Vec6 v = n - e;
  if (v.squaredNorm() > 1e-24) {
    Q -= 2.0 * v * v.transpose() / v.squaredNorm();
  }
  Q.col(5).setZero();
  return Q;
}

BAUpdate back_substitute(const BlockSparseSystem& sys,
                         const Eigen::VectorXd& dp) {
  BAUpdate up;
  up.poses.resize(sys.num_poses);
  for (int a = 0; a < sys.num_poses; ++a) up.poses[a] = dp.segment<6>(6 * a);
  up.depths.resize(sys.num_depths);
  for (int d = 0; d < sys.num_depths; ++d) {
    double acc = sys.depth_rhs(d);
    for (int c = sys.coupling_offsets[d]; c < sys.coupling_offsets[d + 1];
         ++c) {
      const auto& cp = sys.couplings[c];
      acc -= cp.value.dot(up.poses[cp.pose]);
    }
    up.depths(d) = acc / sys.depth_diagonal[d];
  }
  return up;
}

}  // namespace

const char* backend_name(SolverBackend backend) {
  return backend == SolverBackend::kDense ? "dense" : "block-sparse";
}

// ------------------------------------------------------ BlockSparseSystem

Eigen::MatrixXd BlockSparseSystem::full_matrix() const {
  const int np = 6 * num_poses;
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(np + num_depths, np + num_depths);
  for (const PoseBlock& b : pose_blocks) {
    H.block<6, 6>(6 * b.row, 6 * b.col) += b.value;
    if (b.row != b.col) {
      H.block<6, 6>(6 * b.col, 6 * b.row) += b.value.transpose();
    }
  }
  for (int d = 0; d < num_depths; ++d) H(np + d, np + d) = depth_diagonal[d];
  for (const Coupling& c : couplings) {
    H.block<6, 1>(6 * c.pose, np + c.depth) += c.value;
    H.block<1, 6>(np + c.depth, 6 * c.pose) += c.value.transpose();
  }
  return H;
}

Eigen::VectorXd BlockSparseSystem::full_rhs() const {
  Eigen::VectorXd b(6 * num_poses + num_depths);
  for (int a = 0; a < num_poses; ++a) b.segment<6>(6 * a) = pose_rhs[a];
  b.tail(num_depths) = depth_rhs;
  return b;
}

double BAUpdate::norm() const {
  double s = depths.squaredNorm();
  for (const Vec6& p : poses) s += p.squaredNorm();
  return std::sqrt(s);
}

void apply_damping(BlockSparseSystem& sys, double lambda) {
  for (auto& b : sys.pose_blocks) {
    if (b.row != b.col) continue;
    for (int i = 0; i < 6; ++i) {
      b.value(i, i) += lambda * std::max(b.value(i, i), 1e-9);
    }
  }
  for (double& d : sys.depth_diagonal) d += lambda * std::max(d, 1e-9);
}

SolverBackend select_backend(int free_poses, int threshold) {
  return free_poses <= threshold ? SolverBackend::kDense
                                 : SolverBackend::kBlockSparse;
}

BAUpdate solve_dense(const BlockSparseSystem& sys, SolveTiming* timing) {
  auto t0 = Clock::now();
  const int n = 6 * sys.num_poses;
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd rhs(n);
  for (int a = 0; a < sys.num_poses; ++a) rhs.segment<6>(6 * a) = sys.pose_rhs[a];
  for (const auto& b : sys.pose_blocks) {
    S.block<6, 6>(6 * b.row, 6 * b.col) += b.value;
  }
  for (int d = 0; d < sys.num_depths; ++d) {
    const double inv = 1.0 / sys.depth_diagonal[d];
    const int begin = sys.coupling_offsets[d];
    const int end = sys.coupling_offsets[d + 1];
    for (int c1 = begin; c1 < end; ++c1) {
      const auto& u = sys.couplings[c1];
      rhs.segment<6>(6 * u.pose) -= (inv * sys.depth_rhs(d)) * u.value;
      const Vec6 scaled = inv * u.value;
      for (int c2 = begin; c2 < end; ++c2) {
        const auto& v = sys.couplings[c2];
        if (v.pose > u.pose) continue;
        S.block<6, 6>(6 * u.pose, 6 * v.pose).noalias() -=
            scaled * v.value.transpose();
      }
    }
  }
  const double assemble = ms_since(t0);

  t0 = Clock::now();
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success) {
    throw SingularSystem("dense Cholesky of the reduced camera matrix failed");
  }
  const double factorize = ms_since(t0);

  t0 = Clock::now();
  const Eigen::VectorXd dp = llt.solve(rhs);
  BAUpdate up = back_substitute(sys, dp);
  if (timing) {
    timing->assemble_ms += assemble;
    timing->factorize_ms += factorize;
    timing->solve_ms += ms_since(t0);
    timing->block_count = static_cast<std::size_t>(sys.num_poses) *
                          (sys.num_poses + 1) / 2;
  }
  return up;
}

BAUpdate solve_block_sparse(const BlockSparseSystem& sys, SolveTiming* timing) {
  auto t0 = Clock::now();
  const int n = sys.num_poses;
  std::vector<std::vector<int>> lower(n);
  for (const auto& b : sys.pose_blocks) lower[b.col].push_back(b.row);
  for (int d = 0; d < sys.num_depths; ++d) {
    const int begin = sys.coupling_offsets[d];
    const int end = sys.coupling_offsets[d + 1];
    for (int c1 = begin; c1 < end; ++c1) {
      for (int c2 = begin; c2 < end; ++c2) {
        const int r = sys.couplings[c1].pose;
        const int c = sys.couplings[c2].pose;
        if (r > c) lower[c].push_back(r);
      }
    }
  }
  for (auto& rows : lower) {
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  }

  BlockSparseCholesky<6> chol;
  chol.analyze(n, lower);
  Eigen::VectorXd rhs(6 * n);
  for (int a = 0; a < n; ++a) rhs.segment<6>(6 * a) = sys.pose_rhs[a];
  for (const auto& b : sys.pose_blocks) chol.block(b.row, b.col) += b.value;
  for (int d = 0; d < sys.num_depths; ++d) {
    const double inv = 1.0 / sys.depth_diagonal[d];
    const int begin = sys.coupling_offsets[d];
    const int end = sys.coupling_offsets[d + 1];
    for (int c2 = begin; c2 < end; ++c2) {
      const auto& v = sys.couplings[c2];
      rhs.segment<6>(6 * v.pose) -= (inv * sys.depth_rhs(d)) * v.value;
      const Vec6 scaled = inv * v.value;
      for (int c1 = begin; c1 < end; ++c1) {
        const auto& u = sys.couplings[c1];
        if (u.pose < v.pose) continue;
        chol.block(u.pose, v.pose).noalias() -= u.value * scaled.transpose();
      }
    }
  }
  const double assemble = ms_since(t0);

  t0 = Clock::now();
  chol.factorize();
  const double factorize = ms_since(t0);

  t0 = Clock::now();
  const Eigen::VectorXd dp = chol.solve(rhs);
  BAUpdate up = back_substitute(sys, dp);
  if (timing) {
    timing->assemble_ms += assemble;
    timing->factorize_ms += factorize;
    timing->solve_ms += ms_since(t0);
    timing->block_count = chol.block_count();
  }
  return up;
}

// ------------------------------------------------------------ BAProblem

BAProblem::BAProblem(PatchGraph& graph, int first_free, int last_free)
    : graph_(&graph) {
  const int n = graph.num_frames();
  first_free = std::max(first_free, 0);
  last_free = std::min(last_free, n - 1);
  if (first_free > last_free) {
    throw IndexOutOfRange("BAProblem: empty free-pose range");
  }
  auto in_range = [&](int f) { return f >= first_free && f <= last_free; };

  std::vector<char> touched(n, 0);
  depth_var_.resize(n);
  for (int f = 0; f < n; ++f) depth_var_[f].assign(graph.frame(f).patch_count, -1);

  const auto& all_edges = graph.edges();
  for (std::size_t e = 0; e < all_edges.size(); ++e) {
    const Edge& edge = all_edges[e];
    if (!in_range(edge.source_frame) && !in_range(edge.target_frame)) continue;
    edges_.push_back(e);
    touched[edge.source_frame] = 1;
    touched[edge.target_frame] = 1;
    if (in_range(edge.source_frame)) {
      int& var = depth_var_[edge.source_frame][edge.source_patch];
      if (var < 0) {
        var = static_cast<int>(depth_vars_.size());
        depth_vars_.emplace_back(edge.source_frame, edge.source_patch);
      }
    }
  }

  for (int f = 0; f < n; ++f) {
    if (!touched[f]) continue;
    if (in_range(f)) {
      free_poses_.push_back(f);
    } else {
      fixed_poses_.push_back(f);
    }
  }
  if (fixed_poses_.empty() && !free_poses_.empty()) {
    fixed_poses_.push_back(free_poses_.front());
    free_poses_.erase(free_poses_.begin());
  }
  if (fixed_poses_.size() == 1) {
    scale_anchor_ = fixed_poses_.front();
    const Vec3& anchor_t = graph.frame(scale_anchor_).pose.translation();
    for (int f : free_poses_) {
      if ((graph.frame(f).pose.translation() - anchor_t).norm() > 1e-9) {
        scale_locked_ = f;
        break;
      }
    }
  }

  pose_var_.assign(n, -1);
  for (std::size_t v = 0; v < free_poses_.size(); ++v) {
    pose_var_[free_poses_[v]] = static_cast<int>(v);
  }

  // Block layout: diagonals first, then off-diagonal pairs in edge order.
  std::unordered_map<std::uint64_t, int> block_index;
  auto block_of = [&](int r, int c) {
    const auto key = pair_key(r, c);
    auto it = block_index.find(key);
    if (it != block_index.end()) return it->second;
    const int idx = static_cast<int>(block_layout_.size());
    block_layout_.emplace_back(r, c);
    block_index.emplace(key, idx);
    return idx;
  };
  for (std::size_t v = 0; v < free_poses_.size(); ++v) {
    block_of(static_cast<int>(v), static_cast<int>(v));
  }

  // Couplings are laid out grouped by depth variable.
  std::vector<std::vector<int>> depth_poses(depth_vars_.size());
  slots_.resize(edges_.size());
  for (std::size_t i = 0; i < edges_.size(); ++i) {
    const Edge& edge = all_edges[edges_[i]];
    EdgeSlots& s = slots_[i];
    s.source_pose = pose_var_[edge.source_frame];
    s.target_pose = edge.target_frame == edge.source_frame
                        ? -1
                        : pose_var_[edge.target_frame];
    s.depth = depth_var_[edge.source_frame][edge.source_patch];
    if (s.source_pose >= 0) s.block_ss = block_of(s.source_pose, s.source_pose);
    if (s.target_pose >= 0) s.block_tt = block_of(s.target_pose, s.target_pose);
    if (s.source_pose >= 0 && s.target_pose >= 0) {
      if (s.target_pose > s.source_pose) {
        s.block_st = block_of(s.target_pose, s.source_pose);
        s.st_transposed = true;
      } else {
        s.block_st = block_of(s.source_pose, s.target_pose);
      }
    }
    if (s.depth >= 0) {
      if (s.source_pose >= 0) depth_poses[s.depth].push_back(s.source_pose);
      if (s.target_pose >= 0) depth_poses[s.depth].push_back(s.target_pose);
    }
  }

  std::unordered_map<std::uint64_t, int> coupling_index;
  coupling_offsets_.assign(depth_vars_.size() + 1, 0);
  for (std::size_t d = 0; d < depth_vars_.size(); ++d) {
    auto& poses = depth_poses[d];
    std::sort(poses.begin(), poses.end());
    poses.erase(std::unique(poses.begin(), poses.end()), poses.end());
    for (int p : poses) {
      coupling_index.emplace(pair_key(p, static_cast<int>(d)),
                             static_cast<int>(coupling_layout_.size()));
      coupling_layout_.emplace_back(p, static_cast<int>(d));
    }
    coupling_offsets_[d + 1] = static_cast<int>(coupling_layout_.size());
  }
  for (EdgeSlots& s : slots_) {
    if (s.depth < 0) continue;
    if (s.source_pose >= 0) {
      s.coupling_s = coupling_index.at(pair_key(s.source_pose, s.depth));
    }
    if (s.target_pose >= 0) {
      s.coupling_t = coupling_index.at(pair_key(s.target_pose, s.depth));
    }
  }
}

std::size_t BAProblem::count_edges(EdgeKind kind) const {
  std::size_t n = 0;
  for (std::size_t e : edges_) n += graph_->edge(e).kind == kind;
  return n;
}

int BAProblem::active_patch_count(double threshold) const {
  std::unordered_set<std::uint64_t> active;
  for (std::size_t e : edges_) {
    const Edge& edge = graph_->edge(e);
    if (edge.confidence.maxCoeff() > threshold) {
      active.insert(pair_key(edge.source_frame, edge.source_patch));
    }
  }
  return static_cast<int>(active.size());
}

std::vector<std::pair<int, int>> BAProblem::unconstrained_depths() const {
  std::vector<char> informed(depth_vars_.size(), 0);
  for (std::size_t i = 0; i < edges_.size(); ++i) {
    const int d = slots_[i].depth;
    if (d < 0) continue;
    const Edge& edge = graph_->edge(edges_[i]);
    if (edge.confidence.maxCoeff() > 0.0 && edge.source_frame != edge.target_frame) {
      informed[d] = 1;
    }
  }
  std::vector<std::pair<int, int>> out;
  for (std::size_t d = 0; d < depth_vars_.size(); ++d) {
    if (!informed[d]) out.push_back(depth_vars_[d]);
  }
  return out;
}

std::vector<Eigen::VectorXd> BAProblem::residuals() const {
  std::vector<Eigen::VectorXd> out;
  out.reserve(edges_.size());
  const Intrinsics& K = graph_->intrinsics();
  for (std::size_t e : edges_) {
    const Edge& edge = graph_->edge(e);
    const Patch& patch = graph_->patch(edge.source_frame, edge.source_patch);
    const Pose rel = graph_->frame(edge.target_frame).pose.inverse() *
                     graph_->frame(edge.source_frame).pose;
    Eigen::VectorXd r = Eigen::VectorXd::Zero(2 * patch.cell_count());
    for (int c = 0; c < patch.cell_count(); ++c) {
      const Vec3 p = rel * backproject(patch.cell(c), patch.inverse_depth, K);
      if (!(p.z() > kMinDepth)) continue;
      r.segment<2>(2 * c) = project(p, K) - edge.ideal.col(c);
    }
    out.push_back(std::move(r));
  }
  return out;
}

double BAProblem::objective() const {
  double total = 0.0;
  const Intrinsics& K = graph_->intrinsics();
  for (std::size_t e : edges_) {
    const Edge& edge = graph_->edge(e);
    if (edge.confidence.isZero()) continue;
    const Patch& patch = graph_->patch(edge.source_frame, edge.source_patch);
    const Pose rel = graph_->frame(edge.target_frame).pose.inverse() *
                     graph_->frame(edge.source_frame).pose;
    for (int c = 0; c < patch.cell_count(); ++c) {
      const Vec3 p = rel * backproject(patch.cell(c), patch.inverse_depth, K);
      if (!(p.z() > kMinDepth)) continue;
      const Vec2 r = project(p, K) - edge.ideal.col(c);
      total += edge.confidence.x() * r.x() * r.x() +
               edge.confidence.y() * r.y() * r.y();
    }
  }
  return total;
}

Vec6 BAProblem::scale_lock_direction() const {
  const Pose& locked = graph_->frame(*scale_locked_).pose;
  const Vec3 b = locked.translation() -
                 graph_->frame(scale_anchor_).pose.translation();
  Vec6 n = Vec6::Zero();
  n.head<3>() = locked.rotation().conjugate() * b.normalized();
  return n;
}

BlockSparseSystem BAProblem::linearize() const {
  BlockSparseSystem sys;
  sys.num_poses = num_free_poses();
  sys.num_depths = num_free_depths();
  sys.pose_blocks.resize(block_layout_.size());
  for (std::size_t b = 0; b < block_layout_.size(); ++b) {
    sys.pose_blocks[b].row = block_layout_[b].first;
    sys.pose_blocks[b].col = block_layout_[b].second;
  }
  sys.depth_diagonal.assign(sys.num_depths, 0.0);
  sys.couplings.resize(coupling_layout_.size());
  for (std::size_t c = 0; c < coupling_layout_.size(); ++c) {
    sys.couplings[c].pose = coupling_layout_[c].first;
    sys.couplings[c].depth = coupling_layout_[c].second;
  }
  sys.coupling_offsets = coupling_offsets_;
  sys.pose_rhs.assign(sys.num_poses, Vec6::Zero());
  sys.depth_rhs = Eigen::VectorXd::Zero(sys.num_depths);

  const int locked_var = scale_locked_ ? pose_var_[*scale_locked_] : -1;
  const Mat6 lock = scale_locked_ ? locked_basis(scale_lock_direction())
                                  : Mat6::Identity();
  const Intrinsics& K = graph_->intrinsics();

  for (std::size_t i = 0; i < edges_.size(); ++i) {
    const Edge& edge = graph_->edge(edges_[i]);
    const EdgeSlots& s = slots_[i];
    const Patch& patch = graph_->patch(edge.source_frame, edge.source_patch);
    const Pose rel = graph_->frame(edge.target_frame).pose.inverse() *
                     graph_->frame(edge.source_frame).pose;
    const bool self = edge.source_frame == edge.target_frame;
    if (edge.confidence.isZero()) continue;

    Mat6 h_ss = Mat6::Zero(), h_tt = Mat6::Zero(), h_ts = Mat6::Zero();
    Vec6 h_sd = Vec6::Zero(), h_td = Vec6::Zero();
    Vec6 b_s = Vec6::Zero(), b_t = Vec6::Zero();
    double h_dd = 0.0, b_d = 0.0;
    const Eigen::DiagonalMatrix<double, 2> W(edge.confidence.x(),
                                             edge.confidence.y());

    for (int c = 0; c < patch.cell_count(); ++c) {
      const CellReprojection cr =
          reproject_cell(patch.cell(c), patch.inverse_depth, rel, K);
      if (!cr.valid) continue;
      const Vec2 r = cr.pixel - edge.ideal.col(c);
      Mat26 js = cr.d_source;
      Mat26 jt = cr.d_target;
      if (self) {
        js += jt;
        jt.setZero();
      }
      if (s.source_pose >= 0 && s.source_pose == locked_var) js = js * lock;
      if (s.target_pose >= 0 && s.target_pose == locked_var) jt = jt * lock;
      const Eigen::Matrix<double, 6, 2> jsw = js.transpose() * W;
      const Eigen::Matrix<double, 6, 2> jtw = jt.transpose() * W;
      const Vec2 wjd = W * cr.d_inverse_depth;
      h_ss.noalias() += jsw * js;
      h_tt.noalias() += jtw * jt;
      h_ts.noalias() += jtw * js;
      h_sd.noalias() += jsw * cr.d_inverse_depth;
      h_td.noalias() += jtw * cr.d_inverse_depth;
      h_dd += cr.d_inverse_depth.dot(wjd);
      b_s.noalias() -= jsw * r;
      b_t.noalias() -= jtw * r;
      b_d -= wjd.dot(r);
    }

    if (s.block_ss >= 0) sys.pose_blocks[s.block_ss].value += h_ss;
    if (s.block_tt >= 0) sys.pose_blocks[s.block_tt].value += h_tt;
    if (s.block_st >= 0) {
      if (s.st_transposed) {
        sys.pose_blocks[s.block_st].value += h_ts;
      } else {
        sys.pose_blocks[s.block_st].value += h_ts.transpose();
      }
    }
    if (s.source_pose >= 0) sys.pose_rhs[s.source_pose] += b_s;
    if (s.target_pose >= 0) sys.pose_rhs[s.target_pose] += b_t;
    if (s.depth >= 0) {
      sys.depth_diagonal[s.depth] += h_dd;
      sys.depth_rhs(s.depth) += b_d;
      if (s.coupling_s >= 0) sys.couplings[s.coupling_s].value += h_sd;
      if (s.coupling_t >= 0) sys.couplings[s.coupling_t].value += h_td;
    }
  }
  return sys;
}

void BAProblem::apply(const BAUpdate& update) {
  const int locked_var = scale_locked_ ? pose_var_[*scale_locked_] : -1;
  const Mat6 lock = scale_locked_ ? locked_basis(scale_lock_direction())
                                  : Mat6::Identity();
  for (int v = 0; v < num_free_poses(); ++v) {
    const int f = free_poses_[v];
    const Vec6 delta = v == locked_var ? Vec6(lock * update.poses[v])
                                       : update.poses[v];
    graph_->set_pose(f, graph_->frame(f).pose * Pose::exp(delta));
  }
  for (int d = 0; d < num_free_depths(); ++d) {
    const auto [f, k] = depth_vars_[d];
    graph_->set_inverse_depth(f, k,
                              graph_->patch(f, k).inverse_depth + update.depths(d));
  }
}

BAProblem::State BAProblem::save() const {
  State s;
  for (int f : free_poses_) s.poses.push_back(graph_->frame(f).pose);
  for (const auto& [f, k] : depth_vars_) {
    s.depths.push_back(graph_->patch(f, k).inverse_depth);
  }
  return s;
}

void BAProblem::restore(const State& s) {
  for (std::size_t v = 0; v < free_poses_.size(); ++v) {
    graph_->set_pose(free_poses_[v], s.poses[v]);
  }
  for (std::size_t d = 0; d < depth_vars_.size(); ++d) {
    graph_->set_inverse_depth(depth_vars_[d].first, depth_vars_[d].second,
                              s.depths[d]);
  }
}

// ------------------------------------------------------------------ solve

BAReport solve(BAProblem& problem, const BAOptions& options) {
  BAReport report;
  report.backend = options.force_backend.value_or(
      select_backend(problem.num_free_poses(), options.dense_threshold));
  report.odometry_edges = problem.count_edges(EdgeKind::kOdometry);
  report.loop_edges = problem.count_edges(EdgeKind::kLoop);
  report.active_patches = problem.active_patch_count();
  report.unconstrained_depths = problem.unconstrained_depths();

  double cost = problem.objective();
  report.initial_objective = cost;
  report.objective_history.push_back(cost);
  double lambda = options.initial_lambda;

  if (problem.num_free_poses() == 0 && problem.num_free_depths() == 0) {
    report.final_objective = cost;
    report.converged = true;
    return report;
  }

  for (int it = 0; it < options.max_iterations; ++it) {
    const auto t0 = Clock::now();
    const BlockSparseSystem sys = problem.linearize();
    ++report.iterations;

    double gmax = sys.depth_rhs.size() ? sys.depth_rhs.cwiseAbs().maxCoeff() : 0.0;
    for (const Vec6& g : sys.pose_rhs) gmax = std::max(gmax, g.cwiseAbs().maxCoeff());
    if (gmax < options.gradient_tolerance) {
      report.converged = true;
      report.last_update_norm = 0.0;
      report.iteration_seconds.push_back(
          std::chrono::duration<double>(Clock::now() - t0).count());
      break;
    }

    bool stalled = false;
    int singular_retries = 0;
    while (true) {
      BlockSparseSystem damped = sys;
      apply_damping(damped, lambda);
      BAUpdate update;
      try {
        update = report.backend == SolverBackend::kDense
                     ? solve_dense(damped, &report.timing)
                     : solve_block_sparse(damped, &report.timing);
      } catch (const SingularSystem&) {
        if (++singular_retries > options.max_singular_retries) throw;
        lambda *= options.lambda_increase;
        continue;
      }

      const BAProblem::State saved = problem.save();
      problem.apply(update);
      const double new_cost = problem.objective();
      if (new_cost < cost) {
        cost = new_cost;
        report.objective_history.push_back(cost);
        ++report.accepted_steps;
        report.last_update_norm = update.norm();
        lambda *= options.lambda_decrease;
        stalled = report.last_update_norm < options.step_tolerance;
        break;
      }
      problem.restore(saved);
      ++report.rejected_steps;
      lambda *= options.lambda_increase;
      if (lambda > options.max_lambda) {
        stalled = true;
        break;
      }
    }
    report.iteration_seconds.push_back(
        std::chrono::duration<double>(Clock::now() - t0).count());
    if (stalled) {
      // Round-off level steps, or no decrease at any damping.
      report.converged = true;
      break;
    }
  }

  report.final_objective = cost;
  report.final_lambda = lambda;
  return report;
}

std::string to_log_line(const BAReport& r) {
  std::ostringstream os;
  double total = 0.0;
  for (double s : r.iteration_seconds) total += s;
  os << "ba iterations=" << r.iterations << " backend=" << backend_name(r.backend)
     << " initial=" << r.initial_objective << " final=" << r.final_objective
     << " accepted=" << r.accepted_steps << " rejected=" << r.rejected_steps
     << " converged=" << (r.converged ? 1 : 0) << " seconds=" << total
     << " odometry_edges=" << r.odometry_edges
     << " loop_edges=" << r.loop_edges
     << " unconstrained_depths=" << r.unconstrained_depths.size();
  return os.str();
}

}  // namespace patchslam
