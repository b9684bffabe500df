#include "patchslam/frontend_oracle.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "patchslam/errors.h"

namespace patchslam {

namespace {

// Camera z along `forward`, camera y pointing to world -z.
Quat look_along(const Vec3& forward) {
  const Vec3 z = forward.normalized();
  const Vec3 up(0.0, 0.0, 1.0);
  Vec3 x = (-up).cross(z);
  if (x.norm() < 1e-9) x = Vec3::UnitX();
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 R;
  R.col(0) = x;
  R.col(1) = y;
  R.col(2) = z;
  return Quat(R);
}

Vec3 square_point(double s, double side) {
  const double half = 0.5 * side;
  const int leg = static_cast<int>(std::floor(s / side)) % 4;
  const double a = s - std::floor(s / side) * side;
  switch (leg) {
    case 0: return {-half + a, -half, 0.0};
    case 1: return {half, -half + a, 0.0};
    case 2: return {half - a, half, 0.0};
    default: return {-half, half - a, 0.0};
  }
}

void validate_spec(const SceneSpec& s) {
  std::ostringstream os;
  if (s.num_frames < 1) os << "num_frames must be >= 1";
  else if (s.patches_per_frame < 0) os << "patches_per_frame must be >= 0";
  else if (!(s.size > 0.0)) os << "size must be positive";
  else if (!(s.laps > 0.0)) os << "laps must be positive";
  else if (s.landmarks_per_frame < 0) os << "landmarks_per_frame must be >= 0";
  else if (!(s.min_depth > 0.0) || !(s.max_depth > s.min_depth))
    os << "depth range must satisfy 0 < min_depth < max_depth";
  else if (s.patch_size < 1 || s.width <= s.patch_size || s.height <= s.patch_size)
    os << "image must be larger than a patch";
  else if (!(s.frame_interval > 0.0)) os << "frame_interval must be positive";
  if (!os.str().empty()) throw std::invalid_argument(os.str());
}

}  // namespace

const char* trajectory_kind_name(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::kLine: return "line";
    case TrajectoryKind::kCircle: return "circle";
    case TrajectoryKind::kSquareLoop: return "square-loop";
    case TrajectoryKind::kRandomWalkRevisit: return "random-walk-with-revisit";
  }
  return "unknown";
}

TrajectoryKind parse_trajectory_kind(const std::string& name) {
  for (auto k : {TrajectoryKind::kLine, TrajectoryKind::kCircle,
                 TrajectoryKind::kSquareLoop, TrajectoryKind::kRandomWalkRevisit}) {
    if (name == trajectory_kind_name(k)) return k;
  }
  throw std::invalid_argument("unknown trajectory kind '" + name + "'");
}

std::vector<Pose> make_trajectory(const SceneSpec& spec) {
  validate_spec(spec);
  const int n = spec.num_frames;
  std::vector<Pose> poses;
  poses.reserve(n);
  switch (spec.kind) {
    case TrajectoryKind::kLine:
      for (int i = 0; i < n; ++i) {
        const double a = n > 1 ? static_cast<double>(i) / (n - 1) : 0.0;
        poses.emplace_back(look_along(Vec3::UnitX()), Vec3(spec.size * a, 0, 0));
      }
      break;
    case TrajectoryKind::kCircle:
      for (int i = 0; i < n; ++i) {
        const double th = 2.0 * std::numbers::pi * spec.laps * i / n;
        const Vec3 p = spec.size * Vec3(std::cos(th), std::sin(th), 0.0);
        poses.emplace_back(look_along(-p), p);
      }
      break;
    case TrajectoryKind::kSquareLoop: {
      const double perimeter = 4.0 * spec.size;
      for (int i = 0; i < n; ++i) {
        const Vec3 p = square_point(perimeter * spec.laps * i / n, spec.size);
        poses.emplace_back(look_along(-p), p);
      }
      break;
    }
    case TrajectoryKind::kRandomWalkRevisit: {
      std::mt19937_64 rng(spec.seed ^ 0x5eedULL);
      std::uniform_real_distribution<double> turn(-0.3, 0.3);
      const int outbound = std::max(1, static_cast<int>(0.7 * n));
      std::vector<Vec3> pts(n, Vec3::Zero());
      double heading = 0.0;
      for (int i = 1; i < outbound && i < n; ++i) {
        heading += turn(rng);
        pts[i] = pts[i - 1] +
                 spec.size * Vec3(std::cos(heading), std::sin(heading), 0.0);
      }
      const Vec3 last = pts[std::min(outbound, n) - 1];
      for (int i = outbound; i < n; ++i) {
        const double a = static_cast<double>(i - outbound + 1) / (n - outbound);
        pts[i] = last + a * (pts[0] - last);
      }
      for (int i = 0; i < n; ++i) {
        const double yaw = 0.2 * std::sin(0.1 * i);
        poses.emplace_back(
            look_along(Vec3(-std::sin(yaw), std::cos(yaw), 0.0)), pts[i]);
      }
      break;
    }
  }
  return poses;
}

GeneratedScene generate(const SceneSpec& spec) {
  SyntheticScene scene;
  scene.spec = spec;
  scene.poses = make_trajectory(spec);
  const int n = spec.num_frames;
  const Intrinsics& K = spec.intrinsics;
  std::mt19937_64 rng(spec.seed);
  const double margin = 0.5 * (spec.patch_size - 1);
  std::uniform_real_distribution<double> u_dist(margin, spec.width - 1 - margin);
  std::uniform_real_distribution<double> v_dist(margin, spec.height - 1 - margin);
  std::uniform_real_distribution<double> z_dist(spec.min_depth, spec.max_depth);

  for (int i = 0; i < n; ++i) {
    scene.timestamps.push_back(i * spec.frame_interval);
    for (int l = 0; l < spec.landmarks_per_frame; ++l) {
      const Vec2 uv(u_dist(rng), v_dist(rng));
      const double z = z_dist(rng);
      scene.landmarks.push_back(scene.poses[i] * backproject(uv, 1.0 / z, K));
    }
  }

  PatchGraph graph(K, spec.patch_size);
  for (int i = 0; i < n; ++i) {
    const Pose inv = scene.poses[i].inverse();
    const Mat3 R = inv.rotation_matrix();
    std::vector<int> visible;
    for (std::size_t l = 0; l < scene.landmarks.size(); ++l) {
      const Vec3 x = R * scene.landmarks[l] + inv.translation();
      if (x.z() < spec.min_depth || x.z() > spec.max_depth) continue;
      const Vec2 uv = project(x, K);
      if (uv.x() < margin || uv.x() > spec.width - 1 - margin ||
          uv.y() < margin || uv.y() > spec.height - 1 - margin) {
        continue;
      }
      visible.push_back(static_cast<int>(l));
    }
    if (static_cast<int>(visible.size()) < spec.patches_per_frame) {
      std::ostringstream os;
      os << "frame " << i << " sees " << visible.size() << " landmarks, "
         << spec.patches_per_frame << " patches requested";
      throw InfeasibleVisibility(os.str());
    }
    for (int k = 0; k < spec.patches_per_frame; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, visible.size() - 1);
      std::swap(visible[k], visible[pick(rng)]);
    }
    visible.resize(spec.patches_per_frame);
    std::sort(visible.begin(), visible.end());

    std::vector<Patch> patches;
    patches.reserve(visible.size());
    for (int l : visible) {
      const Vec3 x = inv * scene.landmarks[l];
      Patch p;
      p.frame = i;
      p.center = project(x, K);
      p.inverse_depth = 1.0 / x.z();
      p.track = l;
      p.size = spec.patch_size;
      patches.push_back(p);
    }
    scene.patches.push_back(patches);
    graph.add_frame(scene.poses[i], scene.timestamps[i], std::move(patches));
  }
  return GeneratedScene{std::move(scene), std::move(graph)};
}

void add_odometry_edges(PatchGraph& graph, int radius) {
  for (int f = 1; f < graph.num_frames(); ++f) {
    const auto specs = make_odometry_edges(graph, f, radius);
    graph.add_edges(specs);
  }
}

void OracleConfig::validate() const {
  if (!(pixel_sigma >= 0.0)) throw std::invalid_argument("pixel_sigma must be >= 0");
  if (!(outlier_fraction >= 0.0 && outlier_fraction < 1.0)) {
    throw std::invalid_argument("outlier_fraction must be in [0, 1)");
  }
  if (!(w_low >= 0.0 && w_low <= 1.0)) {
    throw std::invalid_argument("w_low must be in [0, 1]");
  }
}

std::vector<Pose> drifted_trajectory(std::span<const Pose> truth,
                                     const DriftModel& model) {
  std::vector<Pose> out;
  if (truth.empty()) return out;
  std::mt19937_64 rng(model.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  out.push_back(truth[0]);
  for (std::size_t i = 1; i < truth.size(); ++i) {
    Vec6 xi = model.bias;
    for (int a = 0; a < 3; ++a) xi(a) += model.translation_sigma * normal(rng);
    for (int a = 3; a < 6; ++a) xi(a) += model.rotation_sigma * normal(rng);
    out.push_back(out.back() * (truth[i - 1].inverse() * truth[i]) *
                  Pose::exp(xi));
  }
  return out;
}

FlowOracle::FlowOracle(const SyntheticScene& scene, const OracleConfig& config)
    : scene_(&scene), config_(config), odometry_poses_(scene.poses),
      rng_(config.seed) {
  config_.validate();
}

void FlowOracle::set_odometry_poses(std::vector<Pose> poses) {
  if (poses.size() != scene_->poses.size()) {
    throw std::invalid_argument("odometry poses must cover every scene frame");
  }
  odometry_poses_ = std::move(poses);
}

bool FlowOracle::in_view(const Patch& patch, const Pose& source,
                         const Pose& target, const ReprojectedPatch& rp) const {
  if (rp.any_behind) return false;
  const SceneSpec& spec = scene_->spec;
  const Vec3 x = target.inverse() *
                 (source * backproject(patch.center, patch.inverse_depth,
                                       spec.intrinsics));
  if (x.z() < 0.5 * spec.min_depth) return false;
  for (Eigen::Index c = 0; c < rp.pixels.cols(); ++c) {
    const double u = rp.pixels(0, c);
    const double v = rp.pixels(1, c);
    if (!(u >= 0.0 && u <= spec.width - 1 && v >= 0.0 && v <= spec.height - 1)) {
      return false;
    }
  }
  return true;
}

void FlowOracle::fill(PatchGraph& graph, std::size_t first_edge,
                      std::size_t last_edge) {
  const Intrinsics& K = graph.intrinsics();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  last_edge = std::min(last_edge, graph.num_edges());
  for (std::size_t e = first_edge; e < last_edge; ++e) {
    Edge& edge = graph.mutable_edge(e);
    const auto& poses =
        edge.kind == EdgeKind::kLoop ? scene_->poses : odometry_poses_;
    const Patch& truth = scene_->patches.at(edge.source_frame).at(edge.source_patch);
    const ReprojectedPatch rp = reproject_patch(
        truth, poses.at(edge.source_frame), poses.at(edge.target_frame), K);

    const bool outlier = unit(rng_) < config_.outlier_fraction;
    edge.ideal = rp.pixels;
    if (outlier) {
      const double angle = 2.0 * std::numbers::pi * unit(rng_);
      const Vec2 offset =
          config_.outlier_magnitude * Vec2(std::cos(angle), std::sin(angle));
      edge.ideal.colwise() += offset;
      edge.confidence = Vec2::Constant(config_.w_low);
      ++outliers_;
    } else {
      if (config_.pixel_sigma > 0.0) {
        for (Eigen::Index c = 0; c < edge.ideal.cols(); ++c) {
          edge.ideal(0, c) += config_.pixel_sigma * normal(rng_);
          edge.ideal(1, c) += config_.pixel_sigma * normal(rng_);
        }
      }
      edge.confidence = Vec2::Ones();
    }
    if (!in_view(truth, poses.at(edge.source_frame),
                 poses.at(edge.target_frame), rp)) {
      for (Eigen::Index c = 0; c < edge.ideal.cols(); ++c) {
        if (rp.behind[c]) edge.ideal.col(c).setZero();
      }
      edge.confidence.setZero();
    }
  }
}

void fill_flow(PatchGraph& graph, const SyntheticScene& scene,
               const OracleConfig& config) {
  FlowOracle oracle(scene, config);
  oracle.fill(graph);
}

GeneratedScene make_loop_scene(int num_frames, int patches_per_frame, int radius,
                               int loop_span, std::uint64_t seed) {
  SceneSpec spec;
  spec.kind = TrajectoryKind::kCircle;
  spec.num_frames = num_frames;
  spec.patches_per_frame = patches_per_frame;
  spec.landmarks_per_frame = std::max(2 * patches_per_frame, 16);
  spec.seed = seed;
  GeneratedScene g = generate(spec);
  add_odometry_edges(g.graph, radius);
  std::vector<EdgeSpec> loops;
  for (int d = 0; d < loop_span && d < num_frames - 1 - d - radius; ++d) {
    const int recent = num_frames - 1 - d;
    for (int k = 0; k < patches_per_frame; ++k) {
      loops.push_back({d, k, recent, EdgeKind::kLoop});
    }
  }
  g.graph.add_edges(loops);
  fill_flow(g.graph, g.scene, {});
  return g;
}

}  // namespace patchslam
