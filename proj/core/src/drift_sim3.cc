#include "patchslam/drift_sim3.h"

#include <algorithm>
#include <iterator>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/SVD>

#include "patchslam/errors.h"
#include "patchslam/frontend_oracle.h"
#include "patchslam/loop_candidate_io.h"

namespace patchslam {

namespace {

struct Observation {
  Pose target_from_center;
  Vec2 pixel;
};

// Linear least squares for the inverse depth d from
// u (R r + t d)_z - (R r + t d)_x = 0 and the matching v row.
std::optional<double> linear_inverse_depth(const Vec3& ray,
                                           const std::vector<Observation>& obs,
                                           const Intrinsics& K) {
  double aa = 0.0, ab = 0.0;
  for (const Observation& o : obs) {
    const Vec3 Rr = o.target_from_center.rotation() * ray;
    const Vec3& t = o.target_from_center.translation();
    const double x = (o.pixel.x() - K.cx) / K.fx;
    const double y = (o.pixel.y() - K.cy) / K.fy;
    const double a1 = x * t.z() - t.x();
    const double b1 = Rr.x() - x * Rr.z();
    const double a2 = y * t.z() - t.y();
    const double b2 = Rr.y() - y * Rr.z();
    aa += a1 * a1 + a2 * a2;
    ab += a1 * b1 + a2 * b2;
  }
  if (aa < 1e-18) return std::nullopt;
  return ab / aa;
}

}  // namespace

int TriangulatedPoints::find(int keypoint) const {
  const auto it = std::lower_bound(keypoints.begin(), keypoints.end(), keypoint);
  if (it == keypoints.end() || *it != keypoint) return -1;
  return static_cast<int>(it - keypoints.begin());
}

TriangulatedPoints triangulate(const CandidateSide& side, const Pose& center,
                               const Pose& neighbor_a, const Pose& neighbor_b,
                               const Intrinsics& K,
                               const TriangulationOptions& options) {
  const Pose to_a = neighbor_a.inverse() * center;
  const Pose to_b = neighbor_b.inverse() * center;

  TriangulatedPoints out;
  for (int i = 0; i < side.size(); ++i) {
    const Vec2 px = side.center_px.col(i);
    if (!px.allFinite()) continue;
    std::vector<Observation> obs;
    if (i < side.a_px.cols() && side.a_px.col(i).allFinite()) {
      obs.push_back({to_a, side.a_px.col(i)});
    }
    if (i < side.b_px.cols() && side.b_px.col(i).allFinite()) {
      obs.push_back({to_b, side.b_px.col(i)});
    }
    if (obs.empty()) continue;

    const Vec3 ray = backproject(px, 1.0, K);
    const auto init = linear_inverse_depth(ray, obs, K);
    if (!init || !(*init > 0.0)) continue;
    double d = *init;

    bool ok = true;
    for (int it = 0; it < options.iterations && ok; ++it) {
      double h = 0.0, g = 0.0;
      for (const Observation& o : obs) {
        const CellReprojection cr = reproject_cell(px, d, o.target_from_center, K);
        if (!cr.valid) {
          ok = false;
          break;
        }
        h += cr.d_inverse_depth.squaredNorm();
        g += cr.d_inverse_depth.dot(cr.pixel - o.pixel);
      }
      if (!ok || h < 1e-18) break;
      const double step = g / h;
      d -= step;
      if (!(d > 0.0)) ok = false;
      if (std::abs(step) < 1e-15 * d) break;
    }
    double sq = 0.0;
    for (const Observation& o : obs) {
      if (!ok) break;
      const CellReprojection cr = reproject_cell(px, d, o.target_from_center, K);
      ok = cr.valid;
      sq += (cr.pixel - o.pixel).squaredNorm();
    }
    if (!ok) continue;
    const double rms = std::sqrt(sq / obs.size());
    if (!(rms <= options.reprojection_gate)) continue;

    out.keypoints.push_back(i);
    out.inverse_depths.push_back(d);
    out.points.push_back(ray / d);
  }
  if (out.points.empty()) {
    std::ostringstream os;
    os << "no keypoint of frame " << side.center << " could be triangulated";
    throw InsufficientParallax(os.str());
  }
  return out;
}

Similarity umeyama(const Eigen::Matrix3Xd& x, const Eigen::Matrix3Xd& y,
                   bool estimate_scale) {
  const Eigen::Index n = x.cols();
  if (n < 3 || y.cols() != n) {
    throw DegenerateConfiguration("umeyama needs at least three point pairs");
  }
  const Vec3 mx = x.rowwise().mean();
  const Vec3 my = y.rowwise().mean();
  const Eigen::Matrix3Xd xc = x.colwise() - mx;
  const Eigen::Matrix3Xd yc = y.colwise() - my;
  const double var_x = xc.squaredNorm() / n;
  const Mat3 sigma = yc * xc.transpose() / static_cast<double>(n);

  Eigen::JacobiSVD<Mat3> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(var_x > 0.0) || !(sv(1) > 1e-12 * std::max(sv(0), 1e-300))) {
    throw DegenerateConfiguration("point sets are collinear or coincident");
  }
  Vec3 s = Vec3::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s(2) = -1.0;
  const Mat3 R = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
  const double scale = estimate_scale ? sv.dot(s) / var_x : 1.0;
  const Vec3 t = my - scale * R * mx;
  return Similarity(Quat(R), t, scale);
}

DriftEstimate ransac_umeyama(const Eigen::Matrix3Xd& source,
                             const Eigen::Matrix3Xd& target,
                             const RansacOptions& options) {
  const int n = static_cast<int>(source.cols());
  if (n < 4 || target.cols() != n) {
    throw DegenerateConfiguration("RANSAC needs at least four point pairs");
  }
  double threshold = options.inlier_threshold;
  if (threshold <= 0.0) {
    const Vec3 mean = target.rowwise().mean();
    threshold = 0.02 * std::sqrt((target.colwise() - mean).squaredNorm() / n);
  }
  const double th2 = threshold * threshold;

  auto score = [&](const Similarity& S, std::vector<std::uint8_t>& mask) {
    int count = 0;
    double sq = 0.0;
    const Mat3 sR = S.scale() * S.rotation_matrix();
    for (int i = 0; i < n; ++i) {
      const double e = (sR * source.col(i) + S.translation() - target.col(i))
                           .squaredNorm();
      mask[i] = e < th2;
      if (mask[i]) {
        ++count;
        sq += e;
      }
    }
    return std::make_pair(count, sq);
  };

  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<int> pick(0, n - 1);
  std::vector<std::uint8_t> mask(n), best_mask(n, 0);
  int best = -1;
  double best_sq = std::numeric_limits<double>::infinity();
  Eigen::Matrix3Xd xs(3, 3), ys(3, 3);
  for (int it = 0; it < options.iterations; ++it) {
    int a = pick(rng), b = pick(rng), c = pick(rng);
    if (a == b || b == c || a == c) continue;
    xs << source.col(a), source.col(b), source.col(c);
    ys << target.col(a), target.col(b), target.col(c);
    Similarity S;
    try {
      S = umeyama(xs, ys);
    } catch (const DegenerateConfiguration&) {
      continue;
    }
    const auto [count, sq] = score(S, mask);
    if (count > best || (count == best && sq < best_sq)) {
      best = count;
      best_sq = sq;
      best_mask = mask;
    }
  }
  if (best < std::max(options.min_inliers, 3)) {
    std::ostringstream os;
    os << "best model has " << std::max(best, 0) << " inliers, "
       << options.min_inliers << " required";
    throw NoConsensus(os.str());
  }

  // Refit on the inlier set until it stops changing.
  DriftEstimate est;
  for (int round = 0; round < 5; ++round) {
    std::vector<int> idx;
    for (int i = 0; i < n; ++i) {
      if (best_mask[i]) idx.push_back(i);
    }
    Eigen::Matrix3Xd xi(3, idx.size()), yi(3, idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      xi.col(k) = source.col(idx[k]);
      yi.col(k) = target.col(idx[k]);
    }
    est.transform = umeyama(xi, yi);
    const auto [count, sq] = score(est.transform, mask);
    const bool same = mask == best_mask;
    est.inliers = count;
    est.rms_error = count > 0 ? std::sqrt(sq / count) : 0.0;
    if (count < 3) break;
    best_mask = mask;
    if (same) break;
  }
  if (est.inliers < options.min_inliers) {
    throw NoConsensus("refit model lost its inlier support");
  }
  est.inlier_mask = best_mask;
  est.inlier_ratio = static_cast<double>(est.inliers) / n;
  return est;
}

DriftEstimate estimate_drift(const LoopCandidate& cand,
                             const std::vector<Pose>& poses,
                             const Intrinsics& K,
                             const TriangulationOptions& triangulation,
                             const RansacOptions& ransac) {
  auto side = [&](const CandidateSide& s) {
    return triangulate(s, poses.at(s.center), poses.at(s.neighbor_a),
                       poses.at(s.neighbor_b), K, triangulation);
  };
  const TriangulatedPoints pj = side(cand.side_j);
  const TriangulatedPoints pk = side(cand.side_k);
  std::vector<std::pair<int, int>> pairs;
  for (const auto& [ij, ik] : cand.matches) {
    const int a = pj.find(ij);
    const int b = pk.find(ik);
    if (a >= 0 && b >= 0) pairs.emplace_back(a, b);
  }
  if (pairs.size() < 4) {
    throw NoConsensus("fewer than four matches survived triangulation");
  }
  Eigen::Matrix3Xd src(3, pairs.size()), dst(3, pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    src.col(i) = pj.points[pairs[i].first];
    dst.col(i) = pk.points[pairs[i].second];
  }
  return ransac_umeyama(src, dst, ransac);
}

DetectionGate::DetectionGate(int bucket_width, int required)
    : bucket_width_(std::max(bucket_width, 1)), required_(std::max(required, 1)) {}

bool DetectionGate::observe(std::optional<std::pair<int, int>> detection) {
  if (!detection) {
    last_.reset();
    streak_ = 0;
    return false;
  }
  const std::pair<int, int> bucket{detection->first / bucket_width_,
                                   detection->second / bucket_width_};
  streak_ = (last_ && *last_ == bucket) ? streak_ + 1 : 1;
  last_ = bucket;
  if (streak_ >= required_) {
    streak_ = 0;
    last_.reset();
    return true;
  }
  return false;
}

// ---------------------------------------------------------------- providers

SyntheticCandidateProvider::SyntheticCandidateProvider(
    const SyntheticScene& scene, const SyntheticProviderConfig& config)
    : scene_(&scene), config_(config) {}

std::optional<LoopCandidate> SyntheticCandidateProvider::query(int k) {
  const auto& poses = scene_->poses;
  if (k < 2 || k >= static_cast<int>(poses.size())) return std::nullopt;
  int j = -1;
  double best = config_.retrieval_radius;
  for (int i = 0; i + config_.min_gap <= k; ++i) {
    const double d = (poses[i].translation() - poses[k].translation()).norm();
    if (d < best) {
      best = d;
      j = i;
    }
  }
  if (j < 0) return std::nullopt;

  const SceneSpec& spec = scene_->spec;
  const Intrinsics& K = spec.intrinsics;
  std::mt19937_64 rng(config_.seed ^ (static_cast<std::uint64_t>(k) << 20) ^
                      static_cast<std::uint64_t>(j));
  std::normal_distribution<double> noise(0.0, 1.0);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  auto observe = [&](int frame, const Vec3& x) -> std::optional<Vec2> {
    const Vec3 c = poses[frame].inverse() * x;
    if (c.z() < spec.min_depth) return std::nullopt;
    const Vec2 uv = project(c, K);
    if (uv.x() < 0 || uv.x() > spec.width - 1 || uv.y() < 0 ||
        uv.y() > spec.height - 1) {
      return std::nullopt;
    }
    return uv + config_.pixel_sigma * Vec2(noise(rng), noise(rng));
  };

  auto visible = [&](int c) {
    std::vector<int> out;
    for (std::size_t l = 0; l < scene_->landmarks.size(); ++l) {
      const Vec3 cam = poses[c].inverse() * scene_->landmarks[l];
      if (cam.z() < spec.min_depth || cam.z() > spec.max_depth) continue;
      const Vec2 uv = project(cam, K);
      if (uv.x() < 0 || uv.x() > spec.width - 1 || uv.y() < 0 ||
          uv.y() > spec.height - 1) {
        continue;
      }
      out.push_back(static_cast<int>(l));
    }
    return out;
  };

  // Up to three quarters of the keypoint budget goes to landmarks seen from
  // both places, the way descriptor matching would surface them; the rest is
  // unmatched clutter.
  auto select = [&](const std::vector<int>& own, const std::vector<int>& matched) {
    std::vector<int> rest;
    std::set_difference(own.begin(), own.end(), matched.begin(), matched.end(),
                        std::back_inserter(rest));
    std::shuffle(rest.begin(), rest.end(), rng);
    const std::size_t room =
        static_cast<std::size_t>(config_.max_keypoints) - matched.size();
    if (rest.size() > room) rest.resize(room);
    std::vector<int> out = matched;
    out.insert(out.end(), rest.begin(), rest.end());
    std::sort(out.begin(), out.end());
    return out;
  };

  auto make_side = [&](int c, const std::vector<int>& landmarks) {
    CandidateSide side;
    side.center = c;
    side.neighbor_a = c >= 2 ? c - 1 : c + 1;
    side.neighbor_b = c >= 2 ? c - 2 : c + 2;
    const int n = static_cast<int>(landmarks.size());
    side.center_px.resize(2, n);
    side.a_px.resize(2, n);
    side.b_px.resize(2, n);
    for (int i = 0; i < n; ++i) {
      const Vec3& x = scene_->landmarks[landmarks[i]];
      side.center_px.col(i) = observe(c, x).value_or(Vec2(nan, nan));
      side.a_px.col(i) = observe(side.neighbor_a, x).value_or(Vec2(nan, nan));
      side.b_px.col(i) = observe(side.neighbor_b, x).value_or(Vec2(nan, nan));
    }
    return side;
  };

  const std::vector<int> vis_j = visible(j);
  const std::vector<int> vis_k = visible(k);
  std::vector<int> shared;
  std::set_intersection(vis_j.begin(), vis_j.end(), vis_k.begin(), vis_k.end(),
                        std::back_inserter(shared));
  std::shuffle(shared.begin(), shared.end(), rng);
  const std::size_t matched_cap = static_cast<std::size_t>(config_.max_keypoints) * 3 / 4;
  if (shared.size() > matched_cap) shared.resize(matched_cap);
  std::sort(shared.begin(), shared.end());
  const std::vector<int> lj = select(vis_j, shared);
  const std::vector<int> lk = select(vis_k, shared);

  LoopCandidate cand;
  cand.frame_j = j;
  cand.frame_k = k;
  cand.side_j = make_side(j, lj);
  cand.side_k = make_side(k, lk);
  for (int a = 0; a < static_cast<int>(lj.size()); ++a) {
    const auto it = std::lower_bound(lk.begin(), lk.end(), lj[a]);
    if (it != lk.end() && *it == lj[a]) {
      cand.matches.emplace_back(a, static_cast<int>(it - lk.begin()));
    }
  }
  if (!lk.empty() && config_.outlier_fraction > 0.0) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> any(0, static_cast<int>(lk.size()) - 1);
    for (auto& m : cand.matches) {
      if (unit(rng) < config_.outlier_fraction) m.second = any(rng);
    }
  }
  return cand;
}

FileCandidateProvider::FileCandidateProvider(std::vector<LoopCandidate> candidates)
    : candidates_(std::move(candidates)) {}

FileCandidateProvider FileCandidateProvider::from_files(
    const std::vector<std::string>& paths) {
  std::vector<LoopCandidate> all;
  for (const auto& p : paths) all.push_back(read_loop_candidate(p));
  return FileCandidateProvider(std::move(all));
}

std::optional<LoopCandidate> FileCandidateProvider::query(int frame) {
  for (const LoopCandidate& c : candidates_) {
    if (c.frame_k == frame) return c;
  }
  return std::nullopt;
}

}  // namespace patchslam
