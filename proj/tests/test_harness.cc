#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "patchslam/errors.h"
#include "patchslam/graph_io.h"
#include "patchslam/harness.h"
#include "patchslam/run_config.h"
#include "patchslam/trajectory.h"
#include "test_support.h"

namespace patchslam {
namespace {

using testing::random_pose;
using testing::random_similarity;

Trajectory random_trajectory(std::mt19937_64& rng, int n) {
  Trajectory t;
  for (int i = 0; i < n; ++i) t.append(0.05 * i, random_pose(rng, 3.0));
  return t;
}

RunConfig small_config() {
  RunConfig c;
  c.scene_kind = TrajectoryKind::kSquareLoop;
  c.scene_frames = 60;
  c.scene_patches = 12;
  c.scene_landmarks_per_frame = 60;
  c.odometry_radius = 4;
  c.odometry_window = 6;
  c.closure_min_gap = 20;
  c.run_repeats = 2;
  return c;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("patchslam_test_" + name);
}

TEST(RunConfigParse, KeysAndComments) {
  std::stringstream in(
      "# comment\n"
      "scene.kind = circle\n"
      "scene.frames=40\n"
      "\n"
      "odometry.window = 12\n"
      "closure.enabled = false\n"
      "oracle.pixel_sigma = 0.25\n");
  const RunConfig c = parse_run_config(in, "run.cfg");
  EXPECT_EQ(c.scene_kind, TrajectoryKind::kCircle);
  EXPECT_EQ(c.scene_frames, 40);
  EXPECT_EQ(c.odometry_window, 12);
  EXPECT_FALSE(c.closure_enabled);
  EXPECT_EQ(c.oracle_pixel_sigma, 0.25);
  EXPECT_EQ(c.odometry_radius, 13);
}

TEST(RunConfigParse, UnknownKeyNamesFileAndLine) {
  std::stringstream in("scene.frames = 40\nscene.frmaes = 41\n");
  try {
    parse_run_config(in, "run.cfg");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("scene.frmaes"), std::string::npos);
  }
}

TEST(RunConfigParse, BadValuesRejected) {
  for (const char* text : {"scene.frames = many\n", "scene.frames = 4x\n",
                           "closure.enabled = maybe\n", "scene.kind = spiral\n",
                           "no equals sign\n"}) {
    std::stringstream in(text);
    EXPECT_THROW(parse_run_config(in), ConfigError) << text;
  }
}

TEST(RunConfigParse, EveryListedKeyIsAccepted) {
  for (const std::string& key : RunConfig::keys()) {
    RunConfig c;
    std::string value = "1";
    if (key == "scene.kind") value = "line";
    if (key.rfind("output.", 0) == 0 || key == "fixture") value = "x";
    if (key == "closure.enabled" || key == "classical.enabled") value = "true";
    EXPECT_NO_THROW(c.set(key, value)) << key;
  }
}

TEST(RunConfigParse, OverridesApplyAfterFileAndValidate) {
  std::stringstream in("odometry.window = 12\n");
  RunConfig c = parse_run_config(in);
  apply_overrides(c, {"odometry.window=20", "closure.backend_range=30"});
  EXPECT_EQ(c.odometry_window, 20);
  EXPECT_EQ(c.closure_backend_range, 30);
  EXPECT_THROW(apply_overrides(c, {"odometry.window"}), ConfigError);
  EXPECT_THROW(apply_overrides(c, {"bogus=1"}), ConfigError);
}

TEST(RunConfigParse, ValidationOfRelations) {
  RunConfig c;
  c.closure_min_gap = c.odometry_radius;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig();
  c.closure_backend_range = c.odometry_window - 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig();
  c.oracle_outlier_fraction = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig();
  c.scene_frames = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(RunConfig().validate());
}

TEST(TrajectoryType, TimestampsMustIncrease) {
  Trajectory t;
  t.append(1.0, Pose());
  EXPECT_THROW(t.append(1.0, Pose()), std::invalid_argument);
  EXPECT_THROW(t.append(0.5, Pose()), std::invalid_argument);
  t.append(1.5, Pose());
  EXPECT_EQ(t.size(), 2u);
  EXPECT_EQ(t.associate(1.49, 0.02), 1);
  EXPECT_EQ(t.associate(1.2, 0.02), -1);
}

TEST(Tum, RoundTrip) {
  std::mt19937_64 rng(1);
  const Trajectory t = random_trajectory(rng, 50);
  std::stringstream buf;
  write_tum(buf, t);
  const Trajectory back = read_tum(buf);
  ASSERT_EQ(back.size(), t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_NEAR(back[i].timestamp, t[i].timestamp, 1e-9);
    EXPECT_LT((back[i].pose.translation() - t[i].pose.translation()).norm(), 1e-9);
    EXPECT_LT(back[i].pose.rotation().angularDistance(t[i].pose.rotation()), 1e-9);
  }
}

TEST(Tum, MalformedLineNamed) {
  std::stringstream in("# header\n0 0 0 0 0 0 0 1\n0.1 0 0 0 0 0 0\n");
  try {
    read_tum(in, "traj.txt");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3);
    EXPECT_NE(std::string(e.what()).find("traj.txt:3"), std::string::npos);
  }
}

TEST(Tum, DenormalizedQuaternionWarns) {
  std::stringstream in(
      "0 0 0 0 0 0 0 1\n"
      "0.1 1 0 0 0 0 0 1.0005\n"
      "0.2 2 0 0 0 0 0 2\n");
  std::vector<std::string> warnings;
  const Trajectory t = read_tum(in, "traj.txt", &warnings);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("traj.txt:3"), std::string::npos) << warnings[0];
  EXPECT_NEAR(t[2].pose.rotation().norm(), 1.0, 1e-15);
  EXPECT_NEAR(t[2].pose.rotation().w(), 1.0, 1e-15);
}

TEST(Ate, ZeroForIdenticalTrajectories) {
  std::mt19937_64 rng(2);
  const Trajectory t = random_trajectory(rng, 30);
  EXPECT_LT(ate(t, t).rmse, 1e-12);
  EXPECT_LT(ate(t, t, Alignment::kSE3).rmse, 1e-12);
  EXPECT_EQ(ate(t, t).associations, 30);
}

TEST(Ate, Sim3AlignmentAbsorbsSimilarity) {
  std::mt19937_64 rng(3);
  const Trajectory ref = random_trajectory(rng, 30);
  const Similarity S = random_similarity(rng);
  Trajectory est;
  for (const StampedPose& r : ref.records()) {
    est.append(r.timestamp, (S * Similarity(r.pose)).pose());
  }
  EXPECT_LT(ate(est, ref).rmse, 1e-9);
  if (std::abs(S.scale() - 1.0) > 0.05) {
    EXPECT_GT(ate(est, ref, Alignment::kSE3).rmse, 1e-3);
  }
}

TEST(Ate, HandConstructedConstantOffset) {
  // Every grid center is visited twice, once per orientation, and the
  // estimate is displaced by a fixed body-frame offset. In the world the
  // offsets are +e and -e along x at each center, so they cancel in the
  // centroid and in the cross-covariance: the best rigid alignment is the
  // identity and every residual has norm e.
  Trajectory ref, est;
  const double e = 0.3;
  const Quat flip(Eigen::AngleAxisd(M_PI, Vec3::UnitZ()));
  int i = 0;
  for (int x = 0; x < 3; ++x) {
    for (int y = 0; y < 4; ++y) {
      for (const Quat& q : {Quat::Identity(), flip}) {
        const Vec3 c(2.0 * x, 1.0 * y * y, 0.5 * x * y);
        ref.append(0.1 * i, Pose(q, c));
        est.append(0.1 * i, Pose(q, c + q * Vec3(e, 0, 0)));
        ++i;
      }
    }
  }
  EXPECT_NEAR(ate(est, ref, Alignment::kSE3).rmse, e, 1e-9);
}

TEST(Ate, AssociationGate) {
  std::mt19937_64 rng(4);
  const Trajectory ref = random_trajectory(rng, 10);
  Trajectory shifted;
  for (const StampedPose& r : ref.records()) shifted.append(r.timestamp + 0.015, r.pose);
  EXPECT_EQ(ate(shifted, ref).associations, 10);
  EXPECT_THROW(ate(shifted, ref, Alignment::kSim3, 0.01), NoAssociations);
}

TEST(Run, SingleFrameScene) {
  RunConfig c = small_config();
  c.scene_frames = 1;
  const RunResult r = run(c);
  EXPECT_EQ(r.estimate.size(), 1u);
  EXPECT_TRUE(r.closures.empty());
  ASSERT_TRUE(r.ate.has_value());
  EXPECT_EQ(*r.ate, 0.0);
}

TEST(Run, EventTimingsNonnegativeAndSumToWallTime) {
  const RunResult r = run(small_config());
  ASSERT_EQ(r.frames.size(), 60u);
  double sum = 0.0;
  for (const FrameTiming& t : r.frames) {
    EXPECT_GE(t.ms, 0.0);
    sum += t.ms;
  }
  EXPECT_NEAR(sum, r.wall_ms, 0.05 * r.wall_ms);
  int frame_lines = 0;
  for (const std::string& line : r.events) frame_lines += line.rfind("frame ", 0) == 0;
  EXPECT_EQ(frame_lines, 60);
  EXPECT_EQ(r.events.back().rfind("summary ", 0), 0u);
  EXPECT_FALSE(r.closures.empty());
}

TEST(Run, ClosureImprovesDriftedSquareLoop) {
  RunConfig c = small_config();
  c.scene_frames = 100;
  c.drift_yaw = 4e-4;
  const RunResult on = run(c);
  c.closure_enabled = false;
  const RunResult off = run(c);
  ASSERT_TRUE(on.ate && off.ate);
  EXPECT_FALSE(on.closures.empty());
  EXPECT_TRUE(off.closures.empty());
  EXPECT_LT(*on.ate, *off.ate);
  EXPECT_LE(on.peak_resident_dense_features, c.odometry_window + c.odometry_radius);
}

TEST(Run, RepeatsAreBitIdenticalAndMedianReported) {
  RunConfig c = small_config();
  c.scene_frames = 40;
  c.run_repeats = 3;
  const RepeatReport rep = run_repeats(c);
  EXPECT_EQ(rep.runs.size(), 3u);
  EXPECT_TRUE(rep.identical);
  ASSERT_EQ(rep.ates.size(), 3u);
  ASSERT_TRUE(rep.median_ate.has_value());
  EXPECT_EQ(*rep.median_ate, rep.ates[1]);
}

TEST(Run, FixtureReplay) {
  SceneSpec spec;
  spec.num_frames = 10;
  spec.patches_per_frame = 8;
  spec.landmarks_per_frame = 40;
  GeneratedScene s = generate(spec);
  add_odometry_edges(s.graph, 3);
  fill_flow(s.graph, s.scene, {});
  const auto path = temp_path("fixture.graph");
  write_patch_graph(path.string(), s.graph);
  RunConfig c;
  c.fixture = path.string();
  const RunResult r = run(c);
  EXPECT_EQ(r.estimate.size(), 10u);
  EXPECT_TRUE(r.reference.empty());
  EXPECT_FALSE(r.ate.has_value());

  std::ofstream(path) << "PATCHGRAPH 1\nPATCH_SIZE 3\nbroken\n";
  try {
    run(c);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3);
  }
  std::filesystem::remove(path);
}

TEST(Histogram, BinsByFloorOfFps) {
  const std::vector<FrameTiming> frames{
      {0, 10.0, false, false}, {1, 10.5, false, false}, {2, 500.0, true, false},
      {3, 9.9, false, false}, {4, 1500.0, true, false}};
  const std::vector<FpsBin> bins = fps_histogram(frames);
  ASSERT_EQ(bins.size(), 5u);
  const int fps[] = {0, 2, 95, 100, 101};
  for (int b = 0; b < 5; ++b) {
    EXPECT_EQ(bins[b].fps, fps[b]);
    EXPECT_EQ(bins[b].frames, 1);
    EXPECT_EQ(bins[b].closure_frames, b < 2 ? 1 : 0);
  }
  std::ostringstream os;
  write_fps_histogram(os, bins);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "fps,frames,closure_frames");
  EXPECT_NE(os.str().find("\n2,1,1\n"), std::string::npos);

  const LatencyModes m = latency_modes(frames);
  EXPECT_EQ(m.odometry_frames, 3);
  EXPECT_EQ(m.closure_frames, 2);
  EXPECT_DOUBLE_EQ(m.odometry_median_ms, 10.0);
  EXPECT_DOUBLE_EQ(m.closure_median_ms, 1000.0);
}

TEST(Outputs, WrittenToConfiguredPaths) {
  RunConfig c = small_config();
  c.scene_frames = 30;
  c.output_trajectory = temp_path("est.txt").string();
  c.output_reference = temp_path("ref.txt").string();
  c.output_events = temp_path("events.log").string();
  c.output_histogram = temp_path("hist.csv").string();
  const RunResult r = run(c);
  write_outputs(c, r);
  const Trajectory est = read_tum(c.output_trajectory);
  const Trajectory ref = read_tum(c.output_reference);
  ASSERT_EQ(est.size(), r.estimate.size());
  for (std::size_t i = 0; i < est.size(); ++i) {
    EXPECT_LT((est[i].pose.translation() - r.estimate[i].pose.translation()).norm(), 1e-9);
  }
  EXPECT_NEAR(ate(est, ref).rmse, *r.ate, 1e-12);
  std::ifstream events(c.output_events);
  std::string first;
  std::getline(events, first);
  EXPECT_EQ(first, r.events.front());
  std::ifstream hist(c.output_histogram);
  std::getline(hist, first);
  EXPECT_EQ(first, "fps,frames,closure_frames");
  for (const auto& p : {c.output_trajectory, c.output_reference, c.output_events,
                        c.output_histogram}) {
    std::filesystem::remove(p);
  }
}

TEST(Classical, WorkerAppliesCorrectionWithoutStall) {
  RunConfig c = small_config();
  c.scene_frames = 90;
  c.scene_laps = 1.25;
  c.classical_enabled = true;
  c.classical_min_gap = 30;
  const RunResult r = run(c);
  EXPECT_GE(r.pgo_applied + r.pgo_rejected, 1);
  EXPECT_FALSE(r.stall_exceeded);
  bool submitted = false;
  for (const std::string& line : r.events) submitted |= line.rfind("pgo submit", 0) == 0;
  EXPECT_TRUE(submitted);
}

}  // namespace
}  // namespace patchslam
