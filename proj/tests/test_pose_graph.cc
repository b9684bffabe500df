#include <gtest/gtest.h>

#include <numeric>
#include <random>
#include <sstream>

#include <unsupported/Eigen/MatrixFunctions>

#include "patchslam/bundle_adjust.h"
#include "patchslam/errors.h"
#include "patchslam/frontend_oracle.h"
#include "patchslam/pose_graph.h"
#include "patchslam/pose_graph_io.h"
#include "test_support.h"

namespace patchslam {
namespace {

using testing::random_similarity;
using testing::random_vec3;
using testing::to_matrix;

// Tangent of a similarity from the matrix logarithm of its 4x4 form: the
// Lie algebra element is [[hat(w) + sigma I, v], [0, 0]].
Vec7 matrix_log(const Eigen::Matrix4d& m) {
  const Eigen::Matrix4d L = m.log();
  Vec7 out;
  out.head<3>() = L.topRightCorner<3, 1>();
  out(3) = 0.5 * (L(2, 1) - L(1, 2));
  out(4) = 0.5 * (L(0, 2) - L(2, 0));
  out(5) = 0.5 * (L(1, 0) - L(0, 1));
  out(6) = L.topLeftCorner<3, 3>().trace() / 3.0;
  return out;
}

Similarity small_random_similarity(std::mt19937_64& rng, double sigma) {
  Vec7 xi;
  std::normal_distribution<double> n(0.0, sigma);
  for (int i = 0; i < 7; ++i) xi(i) = n(rng);
  return Similarity::exp(xi);
}

PoseGraphProblem random_problem(std::mt19937_64& rng, int nodes, int loops) {
  std::vector<Similarity> s;
  std::vector<Similarity> odo;
  for (int i = 0; i < nodes; ++i) s.push_back(random_similarity(rng));
  for (int i = 0; i + 1 < nodes; ++i) odo.push_back(random_similarity(rng));
  std::vector<LoopConstraint> l;
  std::uniform_int_distribution<int> pick(0, nodes - 2);
  for (int i = 0; i < loops; ++i) {
    const int j = pick(rng);
    std::uniform_int_distribution<int> later(j + 1, nodes - 1);
    l.push_back({j, later(rng), random_similarity(rng)});
  }
  return PoseGraphProblem(s, odo, l);
}

std::vector<Pose> circle_poses(int n) {
  std::vector<Pose> out;
  for (int i = 0; i < n; ++i) {
    const double a = 0.1 * i;
    out.emplace_back(Quat(Eigen::AngleAxisd(a, Vec3::UnitY())),
                     Vec3(3 * std::cos(a), 0.1 * i, 3 * std::sin(a)));
  }
  return out;
}

TEST(Residuals, ZeroAtGroundTruth) {
  const std::vector<Pose> poses = circle_poses(10);
  const Similarity loop_delta = Similarity(poses[9]).inverse() * Similarity(poses[2]);
  const PoseGraphProblem p = PoseGraphProblem::from_poses(poses, {{2, 9, loop_delta}});
  for (int i = 0; i < 9; ++i) EXPECT_LT(p.residual_smooth(i).vector().norm(), 1e-12);
  EXPECT_LT(p.residual_loop(0).vector().norm(), 1e-12);
  EXPECT_LT(p.objective(), 1e-24);
  for (const Similarity& s : p.nodes()) EXPECT_EQ(s.scale(), 1.0);
}

TEST(Residuals, ClosedForms) {
  const double sigma = 0.3;
  const PoseGraphProblem p(std::vector<Similarity>(3),
                           {Similarity(Quat::Identity(), Vec3::Zero(), std::exp(sigma)),
                            Similarity()},
                           {{0, 2, Similarity(Quat::Identity(), Vec3::Zero(), 2.0)}});
  Vec7 smooth = Vec7::Zero();
  smooth(6) = -sigma;
  EXPECT_LT((p.residual_smooth(0).vector() - smooth).norm(), 1e-14);
  EXPECT_LT(p.residual_smooth(1).vector().norm(), 1e-14);
  Vec7 loop = Vec7::Zero();
  loop(6) = std::log(2.0);
  EXPECT_LT((p.residual_loop(0).vector() - loop).norm(), 1e-14);
}

TEST(Residuals, MatchComposeThenMatrixLog) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Similarity> s;
    std::vector<Similarity> odo;
    for (int i = 0; i < 4; ++i) s.push_back(random_similarity(rng));
    for (int i = 0; i < 3; ++i) {
      odo.push_back(s[i].inverse() * s[i + 1] * small_random_similarity(rng, 0.3));
    }
    const Similarity delta = s[3].inverse() * s[1] * small_random_similarity(rng, 0.3);
    const PoseGraphProblem p(s, odo, {{1, 3, delta}});
    for (int i = 0; i < 3; ++i) {
      const Eigen::Matrix4d m = to_matrix(odo[i]).inverse() * to_matrix(s[i]).inverse() *
                                to_matrix(s[i + 1]);
      EXPECT_LT((p.residual_smooth(i).vector() - matrix_log(m)).norm(), 1e-9);
    }
    const Eigen::Matrix4d m = to_matrix(delta) * to_matrix(s[1]).inverse() * to_matrix(s[3]);
    EXPECT_LT((p.residual_loop(0).vector() - matrix_log(m)).norm(), 1e-9);
  }
}

TEST(Jacobians, MatchFiniteDifferences) {
  std::mt19937_64 rng(2);
  const double h = 1e-6;
  auto fd = [&](PoseGraphProblem& p, int node, auto residual) {
    Mat7 J;
    const Similarity base = p.node(node);
    for (int c = 0; c < 7; ++c) {
      Vec7 d = Vec7::Zero();
      d(c) = h;
      p.set_node(node, base * Similarity::exp(d));
      const Vec7 plus = residual();
      p.set_node(node, base * Similarity::exp(-d));
      const Vec7 minus = residual();
      J.col(c) = (plus - minus) / (2 * h);
    }
    p.set_node(node, base);
    return J;
  };
  for (int trial = 0; trial < 100; ++trial) {
    PoseGraphProblem p = random_problem(rng, 4, 2);
    Mat7 a, b;
    p.smooth_jacobians(1, &a, &b);
    auto smooth = [&] { return p.residual_smooth(1).vector(); };
    EXPECT_LT(testing::relative_error(a, fd(p, 1, smooth)), 1e-4);
    EXPECT_LT(testing::relative_error(b, fd(p, 2, smooth)), 1e-4);
    const LoopConstraint& l = p.loops()[0];
    p.loop_jacobians(0, &a, &b);
    auto loop = [&] { return p.residual_loop(0).vector(); };
    EXPECT_LT(testing::relative_error(a, fd(p, l.j, loop)), 1e-4);
    EXPECT_LT(testing::relative_error(b, fd(p, l.k, loop)), 1e-4);
  }
}

TEST(Objective, InvariantUnderCommonLeftSimilarity) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    PoseGraphProblem p = random_problem(rng, 6, 3);
    const double before = p.objective();
    const Similarity T = random_similarity(rng);
    for (int i = 0; i < p.num_nodes(); ++i) p.set_node(i, T * p.node(i));
    EXPECT_NEAR(p.objective(), before, 1e-9 * std::max(1.0, before));
  }
}

TEST(Optimize, ChainRecoveredFromPerturbedNodes) {
  const std::vector<Pose> poses = circle_poses(30);
  PoseGraphProblem p = PoseGraphProblem::from_poses(poses, {});
  std::mt19937_64 rng(4);
  for (int i = 1; i < p.num_nodes(); ++i) {
    p.set_node(i, p.node(i) * small_random_similarity(rng, 0.05));
  }
  const PGOReport r = optimize(p);
  EXPECT_TRUE(r.converged);
  EXPECT_LT(r.final_objective, 1e-12);
  for (int i = 0; i < p.num_nodes(); ++i) {
    EXPECT_LT((to_matrix(p.node(i)) - to_matrix(poses[i])).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Optimize, PlantedScaleDriftClosed) {
  PlantedScaleDrift d = make_scale_drift_chain(100, 1.01, 5);
  EXPECT_GT(d.problem.residual_loop(0).vector().norm(), 0.5);
  const PGOReport r = optimize(d.problem);
  EXPECT_LT(d.problem.residual_loop(0).vector().norm(), 1e-6);
  EXPECT_LE(r.final_objective, r.initial_objective);
  ASSERT_EQ(r.scales.size(), 100u);
  EXPECT_EQ(r.scales[0], 1.0);
  for (int i = 1; i < 100; ++i) {
    EXPECT_GT(r.scales[i], r.scales[i - 1]);
    EXPECT_NEAR(r.scales[i], d.truth[i].scale(), 1e-6);
  }
}

TEST(Optimize, ConsistentChainUnchanged) {
  PoseGraphProblem p = PoseGraphProblem::from_poses(circle_poses(12), {});
  const std::vector<Similarity> before = p.nodes();
  const PGOReport r = optimize(p);
  EXPECT_EQ(r.accepted_steps, 0);
  EXPECT_LT(r.final_objective, 1e-24);
  for (int i = 0; i < p.num_nodes(); ++i) {
    EXPECT_EQ(to_matrix(p.node(i)), to_matrix(before[i]));
  }
}

TEST(Optimize, ObjectiveNeverIncreasesAndIsDeterministic) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const PoseGraphProblem start = random_problem(rng, 8, 4);
    PoseGraphProblem a = start;
    PoseGraphProblem b = start;
    const PGOReport ra = optimize(a);
    const PGOReport rb = optimize(b);
    EXPECT_LE(ra.final_objective, ra.initial_objective);
    EXPECT_EQ(ra.final_objective, rb.final_objective);
    EXPECT_EQ(ra.iterations, rb.iterations);
    for (int i = 0; i < a.num_nodes(); ++i) {
      EXPECT_EQ(to_matrix(a.node(i)), to_matrix(b.node(i)));
    }
  }
}

GeneratedScene small_scene() {
  SceneSpec spec;
  spec.num_frames = 8;
  spec.patches_per_frame = 6;
  spec.landmarks_per_frame = 40;
  spec.seed = 2;
  GeneratedScene s = generate(spec);
  add_odometry_edges(s.graph, 3);
  OracleConfig oc;
  oc.pixel_sigma = 0.5;
  fill_flow(s.graph, s.scene, oc);
  return s;
}

std::vector<Similarity> as_similarities(const PatchGraph& g, const std::vector<int>& frames) {
  std::vector<Similarity> out;
  for (int f : frames) out.emplace_back(g.frame(f).pose);
  return out;
}

std::string dump(const PatchGraph& g) {
  std::ostringstream os;
  os.precision(17);
  for (const Frame& f : g.frames()) {
    os << f.pose.translation().transpose() << ' ' << f.pose.rotation().coeffs().transpose();
    for (int k = 0; k < f.patch_count; ++k) os << ' ' << g.patch(f.id, k).inverse_depth;
    os << '\n';
  }
  return os.str();
}

TEST(ApplyCorrections, IdentitySolutionIsBitIdentical) {
  GeneratedScene s = small_scene();
  const std::string before = dump(s.graph);
  const std::vector<int> nodes{0, 3, 6};
  apply_corrections(s.graph, nodes, as_similarities(s.graph, nodes));
  EXPECT_EQ(dump(s.graph), before);
}

TEST(ApplyCorrections, UniformScaleKeepsReprojectionResiduals) {
  GeneratedScene s = small_scene();
  BAProblem p(s.graph, 0, 7);
  const auto before = p.residuals();
  std::vector<int> nodes{0, 1, 2, 3, 4, 5, 6, 7};
  const double scale = 2.5;
  std::vector<Similarity> solution;
  for (int f : nodes) {
    const Pose& g = s.graph.frame(f).pose;
    solution.emplace_back(g.rotation(), scale * g.translation(), scale);
  }
  const PatchGraph before_graph = s.graph;
  apply_corrections(s.graph, nodes, solution);
  for (int f = 0; f < s.graph.num_frames(); ++f) {
    for (int k = 0; k < s.graph.frame(f).patch_count; ++k) {
      EXPECT_NEAR(s.graph.patch(f, k).inverse_depth,
                  before_graph.patch(f, k).inverse_depth / scale, 1e-15);
    }
  }
  const auto after = p.residuals();
  for (std::size_t e = 0; e < before.size(); ++e) {
    EXPECT_LT((after[e] - before[e]).cwiseAbs().maxCoeff(), 1e-10) << before[e].cwiseAbs().maxCoeff();
  }
}

TEST(ApplyCorrections, SingleNodeRescalesOnlyItsFrame) {
  GeneratedScene s = small_scene();
  std::vector<int> nodes(8);
  std::iota(nodes.begin(), nodes.end(), 0);
  std::vector<Similarity> solution = as_similarities(s.graph, nodes);
  const Pose g4 = s.graph.frame(4).pose;
  solution[4] = Similarity(g4.rotation(), g4.translation() + Vec3(0.1, 0, 0), 1.7);
  PatchGraph before = s.graph;
  apply_corrections(s.graph, nodes, solution);
  for (int f = 0; f < 8; ++f) {
    for (int k = 0; k < s.graph.frame(f).patch_count; ++k) {
      const double expected = before.patch(f, k).inverse_depth / (f == 4 ? 1.7 : 1.0);
      EXPECT_EQ(s.graph.patch(f, k).inverse_depth, expected);
    }
    if (f != 4) {
      EXPECT_EQ(s.graph.frame(f).pose.translation(), before.frame(f).pose.translation());
    }
  }
  EXPECT_LT((s.graph.frame(4).pose.translation() - g4.translation() - Vec3(0.1, 0, 0)).norm(),
            1e-15);
}

TEST(ApplyCorrections, FramesBetweenNodesFollowPrecedingNode) {
  GeneratedScene s = small_scene();
  const std::vector<int> nodes{2, 5};
  const Similarity T(Quat(Eigen::AngleAxisd(0.2, Vec3::UnitZ())), Vec3(1, 2, 3), 1.5);
  std::vector<Similarity> solution;
  for (int f : nodes) solution.push_back(T * Similarity(s.graph.frame(f).pose));
  const PatchGraph before = s.graph;
  apply_corrections(s.graph, nodes, solution);
  // Every frame moves with the same similarity here, so each rigid pose is
  // the left-transformed one and depths scale by 1/1.5.
  for (int f = 0; f < 8; ++f) {
    const Similarity moved = T * Similarity(before.frame(f).pose);
    EXPECT_LT((s.graph.frame(f).pose.translation() - moved.translation()).norm(), 1e-12) << f;
    EXPECT_LT(s.graph.frame(f).pose.rotation().angularDistance(moved.rotation()), 1e-12);
    EXPECT_NEAR(s.graph.patch(f, 0).inverse_depth, before.patch(f, 0).inverse_depth / 1.5,
                1e-15);
  }
}

TEST(PoseGraphIo, RoundTrip) {
  std::mt19937_64 rng(7);
  const PoseGraphProblem p = random_problem(rng, 6, 3);
  std::stringstream buf;
  write_pose_graph(buf, p);
  const PoseGraphProblem back = read_pose_graph(buf);
  std::stringstream again;
  write_pose_graph(again, back);
  EXPECT_EQ(again.str(), buf.str());
  ASSERT_EQ(back.loops().size(), 3u);
  EXPECT_NEAR(back.objective(), p.objective(), 1e-9 * p.objective());
}

TEST(PoseGraphIo, ErrorsNameTheLine) {
  const std::string v = "VERTEX_SIM3:QUAT 0 0 0 0 0 0 0 1 1\nVERTEX_SIM3:QUAT 1 0 0 0 0 0 0 1 1\n";
  const std::string e = "EDGE_SIM3:QUAT 0 1 1 0 0 0 0 0 1 1\n";
  struct Case {
    std::string text;
    int line;
  };
  for (const Case& c : {Case{v + e + "FIX 1\n", 4}, Case{v + e + "EDGE_SIM3:QUAT 0 7 1 0 0 0 0 0 1 1\n", 4},
                        Case{v + "EDGE_SIM3:QUAT 0 1 1 0 0 0 0 0 1 -1\n", 3},
                        Case{v + e + "BOGUS 1\n", 4}}) {
    std::stringstream in(c.text);
    try {
      read_pose_graph(in);
      ADD_FAILURE() << c.text;
    } catch (const ParseError& err) {
      EXPECT_EQ(err.line(), c.line) << c.text;
    }
  }
}

}  // namespace
}  // namespace patchslam
