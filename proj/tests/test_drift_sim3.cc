#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Geometry>

#include "patchslam/drift_sim3.h"
#include "patchslam/errors.h"
#include "patchslam/frontend_oracle.h"
#include "patchslam/loop_candidate_io.h"
#include "test_support.h"

namespace patchslam {
namespace {

using testing::random_quat;
using testing::random_similarity;
using testing::random_vec3;
using testing::to_matrix;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct ThreeViews {
  Pose center;
  Pose a;
  Pose b;
  std::vector<Vec3> points;  // center camera coordinates
  CandidateSide side;
};

ThreeViews three_views(int n, double baseline, double pixel_sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> z(2.0, 8.0);
  std::normal_distribution<double> noise(0.0, pixel_sigma);
  const Intrinsics K;
  ThreeViews v;
  v.center = Pose(random_quat(rng), random_vec3(rng, 1.0));
  v.a = v.center * Pose(Quat(Eigen::AngleAxisd(0.02, Vec3::UnitY())), Vec3(-baseline, 0, 0));
  v.b = v.center * Pose(Quat(Eigen::AngleAxisd(-0.02, Vec3::UnitY())), Vec3(baseline, 0.3 * baseline, 0));
  v.side.center_px.resize(2, n);
  v.side.a_px.resize(2, n);
  v.side.b_px.resize(2, n);
  for (int i = 0; i < n; ++i) {
    const double depth = z(rng);
    const Vec3 x(0.4 * depth * u(rng), 0.3 * depth * u(rng), depth);
    v.points.push_back(x);
    const Vec3 w = v.center * x;
    const Vec2 e0(noise(rng), noise(rng));
    const Vec2 e1(noise(rng), noise(rng));
    const Vec2 e2(noise(rng), noise(rng));
    v.side.center_px.col(i) = project(x, K) + (pixel_sigma > 0 ? e0 : Vec2::Zero());
    v.side.a_px.col(i) = project(v.a.inverse() * w, K) + (pixel_sigma > 0 ? e1 : Vec2::Zero());
    v.side.b_px.col(i) = project(v.b.inverse() * w, K) + (pixel_sigma > 0 ? e2 : Vec2::Zero());
  }
  return v;
}

Eigen::Matrix3Xd random_cloud(std::mt19937_64& rng, int n, double sigma = 2.0) {
  Eigen::Matrix3Xd x(3, n);
  for (int i = 0; i < n; ++i) x.col(i) = random_vec3(rng, sigma);
  return x;
}

Eigen::Matrix3Xd transform(const Similarity& s, const Eigen::Matrix3Xd& x) {
  Eigen::Matrix3Xd y(3, x.cols());
  for (Eigen::Index i = 0; i < x.cols(); ++i) y.col(i) = s * Vec3(x.col(i));
  return y;
}

double sim_distance(const Similarity& a, const Similarity& b) {
  return (to_matrix(a) - to_matrix(b)).cwiseAbs().maxCoeff();
}

TEST(Triangulate, NoiselessPointsRecovered) {
  const ThreeViews v = three_views(60, 0.3, 0.0, 1);
  const TriangulatedPoints t = triangulate(v.side, v.center, v.a, v.b, Intrinsics());
  ASSERT_EQ(t.keypoints.size(), 60u);
  for (std::size_t i = 0; i < t.keypoints.size(); ++i) {
    const Vec3& truth = v.points[t.keypoints[i]];
    EXPECT_LT((t.points[i] - truth).norm(), 1e-8);
    EXPECT_NEAR(t.inverse_depths[i], 1.0 / truth.z(), 1e-10);
  }
  EXPECT_EQ(t.find(7), 7);
}

TEST(Triangulate, SingleObservationDropped) {
  ThreeViews v = three_views(20, 0.3, 0.0, 2);
  v.side.a_px.col(3).setConstant(kNaN);
  v.side.b_px.col(3).setConstant(kNaN);
  v.side.b_px.col(4).setConstant(kNaN);  // still two observations
  const TriangulatedPoints t = triangulate(v.side, v.center, v.a, v.b, Intrinsics());
  EXPECT_EQ(t.find(3), -1);
  ASSERT_GE(t.find(4), 0);
  EXPECT_LT((t.points[t.find(4)] - v.points[4]).norm(), 1e-8);
}

TEST(Triangulate, ZeroBaselineIsInsufficientParallax) {
  ThreeViews v = three_views(20, 0.3, 0.0, 3);
  for (int i = 0; i < v.side.size(); ++i) {
    v.side.a_px.col(i) = v.side.center_px.col(i);
    v.side.b_px.col(i) = v.side.center_px.col(i);
  }
  EXPECT_THROW(triangulate(v.side, v.center, v.center, v.center, Intrinsics()),
               InsufficientParallax);
}

TEST(Triangulate, PixelNoiseErrorMatchesFirstOrderPrediction) {
  // Monte-Carlo: normalized 3D error (error / first-order standard deviation)
  // of a 3-dof Gaussian has median sqrt(chi2_3 median) = 1.538.
  const Intrinsics K;
  const double sigma = 1.0;
  std::vector<double> normalized;
  for (std::uint64_t trial = 0; trial < 40; ++trial) {
    const ThreeViews clean = three_views(50, 0.5, 0.0, 100 + trial);
    const ThreeViews noisy = three_views(50, 0.5, sigma, 100 + trial);
    const TriangulatedPoints t = triangulate(noisy.side, noisy.center, noisy.a, noisy.b, K);
    for (std::size_t i = 0; i < t.keypoints.size(); ++i) {
      const Vec3& x = clean.points[t.keypoints[i]];
      // Linearized covariance of the point from all six pixel measurements:
      // J maps a 3D perturbation to the stacked projections.
      Eigen::Matrix<double, 6, 3> J;
      const Pose views[] = {Pose(), noisy.center.inverse() * noisy.a,
                            noisy.center.inverse() * noisy.b};
      for (int k = 0; k < 3; ++k) {
        for (int d = 0; d < 3; ++d) {
          const double h = 1e-6;
          const Vec3 step = Vec3::Unit(d) * h;
          J.block<2, 1>(2 * k, d) = (project(views[k].inverse() * (x + step), K) -
                                     project(views[k].inverse() * (x - step), K)) /
                                    (2 * h);
        }
      }
      const Mat3 cov = sigma * sigma * (J.transpose() * J).inverse();
      const Vec3 err = t.points[i] - x;
      normalized.push_back(std::sqrt(err.dot(cov.inverse() * err)));
    }
  }
  ASSERT_GT(normalized.size(), 1000u);
  std::nth_element(normalized.begin(), normalized.begin() + normalized.size() / 2,
                   normalized.end());
  const double median = normalized[normalized.size() / 2];
  EXPECT_GT(median, 0.7 * 1.538);
  EXPECT_LT(median, 1.3 * 1.538);
}

TEST(Umeyama, IdentityForEqualClouds) {
  std::mt19937_64 rng(4);
  const Eigen::Matrix3Xd x = random_cloud(rng, 10);
  EXPECT_LT(sim_distance(umeyama(x, x), Similarity()), 1e-12);
}

TEST(Umeyama, RecoversKnownSimilarity) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Similarity S = random_similarity(rng);
    const Eigen::Matrix3Xd x = random_cloud(rng, 3 + trial);
    EXPECT_LT(sim_distance(umeyama(x, transform(S, x)), S), 1e-9);
  }
}

TEST(Umeyama, AgreesWithEigenOnNoisyClouds) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Matrix3Xd x = random_cloud(rng, 30);
    Eigen::Matrix3Xd y = transform(random_similarity(rng), x);
    y += 0.05 * random_cloud(rng, 30, 1.0);
    const Eigen::Matrix4d oracle = Eigen::umeyama(x, y, true);
    EXPECT_LT((to_matrix(umeyama(x, y)) - oracle).cwiseAbs().maxCoeff(), 1e-9);
    const Eigen::Matrix4d rigid = Eigen::umeyama(x, y, false);
    const Similarity mine = umeyama(x, y, false);
    EXPECT_EQ(mine.scale(), 1.0);
    EXPECT_LT((to_matrix(mine) - rigid).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Umeyama, ReflectionCorrected) {
  std::mt19937_64 rng(7);
  const Eigen::Matrix3Xd x = random_cloud(rng, 20);
  Eigen::Matrix3Xd y = x;
  y.row(2) *= -1.0;  // mirror image: best proper rotation, never a reflection
  EXPECT_GT(umeyama(x, y).rotation_matrix().determinant(), 0.0);
}

TEST(Umeyama, LeftEquivariant) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Matrix3Xd x = random_cloud(rng, 25);
    Eigen::Matrix3Xd y = transform(random_similarity(rng), x) + 0.1 * random_cloud(rng, 25, 1.0);
    const Similarity T = random_similarity(rng);
    EXPECT_LT(sim_distance(umeyama(x, transform(T, y)), T * umeyama(x, y)), 1e-8);
  }
}

TEST(Umeyama, SwapGivesInverseForConsistentPairs) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const Similarity S = random_similarity(rng);
    const Eigen::Matrix3Xd x = random_cloud(rng, 12);
    const Eigen::Matrix3Xd y = transform(S, x);
    EXPECT_LT(sim_distance(umeyama(y, x), umeyama(x, y).inverse()), 1e-8);
  }
}

TEST(Umeyama, DegenerateInputsRejected) {
  std::mt19937_64 rng(10);
  const Eigen::Matrix3Xd two = random_cloud(rng, 2);
  EXPECT_THROW(umeyama(two, two), DegenerateConfiguration);
  Eigen::Matrix3Xd line(3, 5);
  for (int i = 0; i < 5; ++i) line.col(i) = Vec3(1, 2, 3) * i;
  EXPECT_THROW(umeyama(line, line), DegenerateConfiguration);
  const Eigen::Matrix3Xd same = Vec3(1, 1, 1).replicate(1, 6);
  EXPECT_THROW(umeyama(same, same), DegenerateConfiguration);
}

TEST(Ransac, CleanPairsAllInliers) {
  std::mt19937_64 rng(11);
  const Similarity S = random_similarity(rng);
  const Eigen::Matrix3Xd x = random_cloud(rng, 100);
  const DriftEstimate d = ransac_umeyama(x, transform(S, x));
  EXPECT_EQ(d.inliers, 100);
  EXPECT_EQ(d.inlier_ratio, 1.0);
  EXPECT_LT(sim_distance(d.transform, S), 1e-9);
  EXPECT_LT(d.rms_error, 1e-9);
}

TEST(Ransac, FortyPercentOutliersRecovered) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Similarity S = random_similarity(rng);
    const Eigen::Matrix3Xd x = random_cloud(rng, 100);
    Eigen::Matrix3Xd y = transform(S, x);
    std::vector<int> idx(100);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<std::uint8_t> truth(100, 1);
    for (int i = 0; i < 40; ++i) {
      y.col(idx[i]) = random_vec3(rng, 10.0) + Vec3(5, 5, 5);
      truth[idx[i]] = 0;
    }
    RansacOptions o;
    o.seed = trial;
    const DriftEstimate d = ransac_umeyama(x, y, o);
    EXPECT_LT(sim_distance(d.transform, S), 1e-6);
    EXPECT_EQ(d.inlier_mask, truth);
    EXPECT_EQ(d.inliers, 60);
    EXPECT_DOUBLE_EQ(d.inlier_ratio, 0.6);
  }
}

TEST(Ransac, UnrelatedPairsHaveNoConsensus) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    RansacOptions o;
    o.seed = trial;
    EXPECT_THROW(ransac_umeyama(random_cloud(rng, 100), random_cloud(rng, 100), o),
                 NoConsensus);
  }
}

TEST(Ransac, TooFewPairs) {
  std::mt19937_64 rng(14);
  const Eigen::Matrix3Xd x = random_cloud(rng, 3);
  EXPECT_THROW(ransac_umeyama(x, x), DegenerateConfiguration);
}

TEST(Ransac, InvariantToPairOrder) {
  std::mt19937_64 rng(15);
  const Similarity S = random_similarity(rng);
  const Eigen::Matrix3Xd x = random_cloud(rng, 80);
  Eigen::Matrix3Xd y = transform(S, x) + 0.01 * random_cloud(rng, 80, 1.0);
  for (int i = 0; i < 25; ++i) y.col(i) = random_vec3(rng, 8.0);
  const DriftEstimate a = ransac_umeyama(x, y);
  std::vector<int> perm(80);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Eigen::Matrix3Xd xs(3, 80), ys(3, 80);
  for (int i = 0; i < 80; ++i) {
    xs.col(i) = x.col(perm[i]);
    ys.col(i) = y.col(perm[i]);
  }
  const DriftEstimate b = ransac_umeyama(xs, ys);
  EXPECT_LT(sim_distance(a.transform, b.transform), 1e-9);
  EXPECT_EQ(a.inliers, b.inliers);
  for (int i = 0; i < 80; ++i) EXPECT_EQ(b.inlier_mask[i], a.inlier_mask[perm[i]]);
}

TEST(Ransac, DeterministicForSeed) {
  std::mt19937_64 rng(16);
  const Eigen::Matrix3Xd x = random_cloud(rng, 50);
  Eigen::Matrix3Xd y = transform(random_similarity(rng), x) + 0.02 * random_cloud(rng, 50, 1.0);
  for (int i = 0; i < 15; ++i) y.col(i) = random_vec3(rng, 8.0);
  const DriftEstimate a = ransac_umeyama(x, y);
  const DriftEstimate b = ransac_umeyama(x, y);
  EXPECT_EQ(to_matrix(a.transform), to_matrix(b.transform));
  EXPECT_EQ(a.inlier_mask, b.inlier_mask);
}

TEST(EstimateDrift, RecoversPlantedRelativeSimilarity) {
  SceneSpec spec;
  spec.kind = TrajectoryKind::kCircle;
  spec.num_frames = 120;
  spec.patches_per_frame = 8;
  spec.landmarks_per_frame = 100;
  spec.laps = 1.25;
  spec.seed = 3;
  const GeneratedScene s = generate(spec);
  SyntheticProviderConfig pc;
  pc.outlier_fraction = 0.2;
  SyntheticCandidateProvider provider(s.scene, pc);
  std::optional<LoopCandidate> c;
  for (int f = 100; f < 120 && !c; ++f) c = provider.query(f);
  ASSERT_TRUE(c.has_value());
  EXPECT_LT(c->frame_j + pc.min_gap, c->frame_k + 1);

  // Odometry estimate drifted in scale and pose after frame j: the recovered
  // transform maps j-camera points to k-camera points of the estimate.
  std::vector<Pose> est = s.scene.poses;
  const double drift_scale = 1.3;
  const Pose kick(Quat(Eigen::AngleAxisd(0.1, Vec3::UnitZ())), Vec3(0.2, -0.1, 0.05));
  const Pose& anchor = s.scene.poses[c->frame_j + 1];
  for (std::size_t f = c->frame_j + 1; f < est.size(); ++f) {
    const Pose rel = anchor.inverse() * s.scene.poses[f];
    est[f] = anchor * kick * Pose(rel.rotation(), drift_scale * rel.translation());
  }
  const DriftEstimate d = estimate_drift(*c, est, s.graph.intrinsics());
  // Truth: the j camera at true scale, the k camera at drifted scale.
  const Pose truth_jk = s.scene.poses[c->frame_k].inverse() * s.scene.poses[c->frame_j];
  const Similarity expected(truth_jk.rotation(), drift_scale * truth_jk.translation(),
                            drift_scale);
  EXPECT_LT(sim_distance(d.transform, expected), 1e-6);
  EXPECT_GE(d.inliers, 12);
  EXPECT_LT(d.inlier_ratio, 1.0);
}

TEST(DetectionGate, NeedsConsecutiveConsistentDetections) {
  DetectionGate gate(5, 2);
  EXPECT_FALSE(gate.observe(std::pair{10, 60}));
  EXPECT_TRUE(gate.observe(std::pair{12, 61}));  // same buckets
  EXPECT_FALSE(gate.observe(std::pair{12, 62}));  // streak restarted
  EXPECT_FALSE(gate.observe(std::nullopt));
  EXPECT_FALSE(gate.observe(std::pair{12, 63}));
  EXPECT_FALSE(gate.observe(std::pair{20, 64}));  // different j bucket
  EXPECT_TRUE(gate.observe(std::pair{21, 64}));
}

TEST(FileProvider, ReplaysByFrame) {
  LoopCandidate c;
  c.frame_j = 3;
  c.frame_k = 50;
  FileCandidateProvider p({c});
  EXPECT_FALSE(p.query(49).has_value());
  ASSERT_TRUE(p.query(50).has_value());
  EXPECT_EQ(p.query(50)->frame_j, 3);
}

TEST(CandidateIo, RoundTripIsBitExact) {
  SceneSpec spec;
  spec.kind = TrajectoryKind::kCircle;
  spec.num_frames = 80;
  spec.patches_per_frame = 4;
  spec.landmarks_per_frame = 60;
  spec.laps = 1.25;
  const GeneratedScene s = generate(spec);
  SyntheticProviderConfig pc;
  pc.pixel_sigma = 0.5;
  pc.max_keypoints = 40;
  SyntheticCandidateProvider provider(s.scene, pc);
  std::optional<LoopCandidate> c;
  for (int f = 60; f < 80 && !c; ++f) c = provider.query(f);
  ASSERT_TRUE(c.has_value());
  c->side_j.a_px(0, 1) = kNaN;
  c->side_j.a_px(1, 1) = kNaN;

  std::stringstream buf;
  write_loop_candidate(buf, *c);
  const LoopCandidate back = read_loop_candidate(buf);
  std::stringstream again;
  write_loop_candidate(again, back);
  EXPECT_EQ(again.str(), buf.str());
  EXPECT_EQ(back.matches, c->matches);
  EXPECT_EQ(back.side_k.center_px, c->side_k.center_px);
  EXPECT_TRUE(std::isnan(back.side_j.a_px(0, 1)));
}

TEST(CandidateIo, MalformedRowNamesLine) {
  std::stringstream in(
      "LOOPCANDIDATE 1\nLOOP 1 40\nSIDE 1 0 2 1\n1 2 3 4 5 6\n"
      "SIDE 40 39 41 1\n1 2 3 x 5 6\nMATCHES 1\n0 0\n");
  try {
    read_loop_candidate(in, "cand.txt");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 6);
  }
}

TEST(CandidateIo, MatchIndexOutOfRangeRejected) {
  std::stringstream in(
      "LOOPCANDIDATE 1\nLOOP 1 40\nSIDE 1 0 2 1\n1 2 3 4 5 6\n"
      "SIDE 40 39 41 1\n1 2 3 4 5 6\nMATCHES 1\n0 3\n");
  EXPECT_THROW(read_loop_candidate(in), ParseError);
}

}  // namespace
}  // namespace patchslam
