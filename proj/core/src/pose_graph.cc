#include "patchslam/pose_graph.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "patchslam/block_sparse.h"
#include "patchslam/errors.h"

namespace patchslam {

PoseGraphProblem::PoseGraphProblem(std::vector<Similarity> nodes,
                                   std::vector<Similarity> odometry,
                                   std::vector<LoopConstraint> loops)
    : nodes_(std::move(nodes)), odometry_(std::move(odometry)),
      loops_(std::move(loops)) {
  if (!nodes_.empty() && odometry_.size() + 1 != nodes_.size()) {
    throw std::invalid_argument("need one odometry constraint per node pair");
  }
  for (const LoopConstraint& l : loops_) {
    if (l.j < 0 || l.k < 0 || l.j >= num_nodes() || l.k >= num_nodes() ||
        l.j == l.k) {
      std::ostringstream os;
      os << "loop (" << l.j << "," << l.k << ") references a missing node";
      throw IndexOutOfRange(os.str());
    }
  }
}

PoseGraphProblem PoseGraphProblem::from_poses(const std::vector<Pose>& poses,
                                              std::vector<LoopConstraint> loops) {
  std::vector<Similarity> nodes;
  nodes.reserve(poses.size());
  for (const Pose& p : poses) nodes.emplace_back(p);
  std::vector<Similarity> odometry;
  for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
    odometry.push_back(nodes[i].inverse() * nodes[i + 1]);
  }
  return PoseGraphProblem(std::move(nodes), std::move(odometry), std::move(loops));
}

Tangent7 PoseGraphProblem::residual_smooth(int i) const {
  return (odometry_.at(i).inverse() * nodes_.at(i).inverse() * nodes_.at(i + 1))
      .log();
}

Tangent7 PoseGraphProblem::residual_loop(std::size_t l) const {
  const LoopConstraint& c = loops_.at(l);
  return (c.delta * nodes_[c.j].inverse() * nodes_[c.k]).log();
}

void PoseGraphProblem::smooth_jacobians(int i, Mat7* d_i, Mat7* d_next) const {
  const Mat7 jinv = sim3_right_jacobian_inverse(residual_smooth(i).vector());
  *d_next = jinv;
  *d_i = -jinv * (nodes_[i + 1].inverse() * nodes_[i]).adjoint();
}

void PoseGraphProblem::loop_jacobians(std::size_t l, Mat7* d_j, Mat7* d_k) const {
  const LoopConstraint& c = loops_.at(l);
  const Mat7 jinv = sim3_right_jacobian_inverse(residual_loop(l).vector());
  *d_k = jinv;
  *d_j = -jinv * (nodes_[c.k].inverse() * nodes_[c.j]).adjoint();
}

double PoseGraphProblem::objective() const {
  double total = 0.0;
  for (int i = 0; i + 1 < num_nodes(); ++i) {
    total += residual_smooth(i).vector().squaredNorm();
  }
  for (std::size_t l = 0; l < loops_.size(); ++l) {
    total += residual_loop(l).vector().squaredNorm();
  }
  return total;
}

namespace {

struct Term {
  int a;  // node indices
  int b;
  Vec7 r;
  Mat7 ja;
  Mat7 jb;
};

}  // namespace

PGOReport optimize(PoseGraphProblem& problem, const PGOOptions& options) {
  PGOReport report;
  const int n = problem.num_nodes();
  double cost = problem.objective();
  report.initial_objective = cost;

  // Variables are nodes 1..n-1 at index node - 1.
  const int nv = std::max(n - 1, 0);
  std::vector<std::vector<int>> lower(nv);
  for (int v = 0; v + 1 < nv; ++v) lower[v].push_back(v + 1);
  for (const LoopConstraint& l : problem.loops()) {
    const int a = std::min(l.j, l.k) - 1;
    const int b = std::max(l.j, l.k) - 1;
    if (a >= 0) lower[a].push_back(b);
  }
  BlockSparseCholesky<7> chol;
  chol.analyze(nv, lower);

  double lambda = options.initial_lambda;
  for (int it = 0; it < options.max_iterations && nv > 0; ++it) {
    std::vector<Term> terms;
    for (int i = 0; i + 1 < n; ++i) {
      Term t{i, i + 1, problem.residual_smooth(i).vector(), {}, {}};
      problem.smooth_jacobians(i, &t.ja, &t.jb);
      terms.push_back(t);
    }
    for (std::size_t l = 0; l < problem.loops().size(); ++l) {
      const LoopConstraint& c = problem.loops()[l];
      Term t{c.j, c.k, problem.residual_loop(l).vector(), {}, {}};
      problem.loop_jacobians(l, &t.ja, &t.jb);
      terms.push_back(t);
    }
    ++report.iterations;

    std::vector<Mat7> diag(nv, Mat7::Zero());
    struct OffDiag {
      int row, col;
      Mat7 value;
    };
    std::vector<OffDiag> off;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(7 * nv);
    for (const Term& t : terms) {
      const int va = t.a - 1;
      const int vb = t.b - 1;
      if (va >= 0) {
        diag[va] += t.ja.transpose() * t.ja;
        g.segment<7>(7 * va) -= t.ja.transpose() * t.r;
      }
      if (vb >= 0) {
        diag[vb] += t.jb.transpose() * t.jb;
        g.segment<7>(7 * vb) -= t.jb.transpose() * t.r;
      }
      if (va >= 0 && vb >= 0) {
        if (vb > va) {
          off.push_back({vb, va, t.jb.transpose() * t.ja});
        } else {
          off.push_back({va, vb, t.ja.transpose() * t.jb});
        }
      }
    }
    if (g.cwiseAbs().maxCoeff() < options.gradient_tolerance) {
      report.converged = true;
      break;
    }

    bool stop = false;
    int retries = 0;
    while (true) {
      chol.set_zero();
      for (int v = 0; v < nv; ++v) {
        Mat7 d = diag[v];
        for (int q = 0; q < 7; ++q) d(q, q) += lambda * std::max(d(q, q), 1e-9);
        chol.block(v, v) = d;
      }
      for (const OffDiag& o : off) chol.block(o.row, o.col) += o.value;
      try {
        chol.factorize();
      } catch (const SingularSystem&) {
        if (++retries > options.max_singular_retries) throw;
        lambda *= options.lambda_increase;
        continue;
      }
      const Eigen::VectorXd dx = chol.solve(g);
      const std::vector<Similarity> saved = problem.nodes();
      for (int v = 0; v < nv; ++v) {
        problem.set_node(v + 1, saved[v + 1] *
                                    Similarity::exp(Vec7(dx.segment<7>(7 * v))));
      }
      const double new_cost = problem.objective();
      if (new_cost < cost) {
        cost = new_cost;
        ++report.accepted_steps;
        lambda *= options.lambda_decrease;
        if (dx.norm() < options.step_tolerance) {
          report.converged = true;
          stop = true;
        }
        break;
      }
      for (int v = 0; v < nv; ++v) problem.set_node(v + 1, saved[v + 1]);
      ++report.rejected_steps;
      lambda *= options.lambda_increase;
      if (lambda > options.max_lambda) {
        report.converged = true;
        stop = true;
        break;
      }
    }
    if (stop) break;
  }
  if (nv == 0) report.converged = true;

  report.final_objective = cost;
  for (int i = 0; i + 1 < n; ++i) {
    report.max_residual_norm = std::max(
        report.max_residual_norm, problem.residual_smooth(i).vector().norm());
  }
  for (std::size_t l = 0; l < problem.loops().size(); ++l) {
    report.max_residual_norm = std::max(
        report.max_residual_norm, problem.residual_loop(l).vector().norm());
  }
  for (const Similarity& s : problem.nodes()) report.scales.push_back(s.scale());
  return report;
}

PlantedScaleDrift make_scale_drift_chain(int nodes, double step_scale,
                                         std::uint64_t seed) {
  if (nodes < 2) throw std::invalid_argument("a chain needs at least two nodes");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.02);
  std::vector<Similarity> truth{Similarity()};
  std::vector<Similarity> odometry;
  for (int i = 0; i + 1 < nodes; ++i) {
    Vec7 xi;
    xi << 0.3 + noise(rng), noise(rng), noise(rng), noise(rng), 0.06 + noise(rng),
        noise(rng), 0.0;
    const Similarity step = Similarity::exp(xi);
    odometry.emplace_back(step.rotation(), step.translation(), step_scale);
    truth.push_back(truth.back() * odometry.back());
  }
  std::vector<Similarity> init;
  for (const Similarity& s : truth) init.emplace_back(s.rotation(), s.translation(), 1.0);
  const int last = nodes - 1;
  std::vector<LoopConstraint> loops{{0, last, truth[last].inverse() * truth[0]}};
  return {PoseGraphProblem(std::move(init), std::move(odometry), std::move(loops)),
          std::move(truth)};
}

void apply_corrections(PatchGraph& graph, const std::vector<int>& node_frames,
                       const std::vector<Similarity>& solution) {
  if (node_frames.size() != solution.size()) {
    throw std::invalid_argument("one solution node per node frame required");
  }
  if (node_frames.empty()) return;
  if (!std::is_sorted(node_frames.begin(), node_frames.end())) {
    throw std::invalid_argument("node frames must be increasing");
  }
  const int n = graph.num_frames();
  std::vector<Pose> before(n);
  for (int f = 0; f < n; ++f) before[f] = graph.frame(f).pose;

  std::size_t node = 0;
  for (int f = 0; f < n; ++f) {
    while (node + 1 < node_frames.size() && node_frames[node + 1] <= f) ++node;
    const int ref = node_frames[node];
    const Similarity& S = solution[node];
    const double s = S.scale();
    const Pose& ref_before = before[ref];
    if (s == 1.0 && S.translation() == ref_before.translation() &&
        S.rotation().coeffs() == ref_before.rotation().coeffs()) {
      continue;
    }
    if (f == ref) {
      graph.set_pose(f, S.pose());
    } else {
      const Pose rel = ref_before.inverse() * before[f];
      graph.set_pose(f, (S * Similarity(rel)).pose());
    }
    if (s != 1.0) {
      for (int k = 0; k < graph.frame(f).patch_count; ++k) {
        graph.set_inverse_depth(f, k, graph.patch(f, k).inverse_depth / s);
      }
    }
  }
}

}  // namespace patchslam
