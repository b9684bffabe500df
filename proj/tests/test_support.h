#pragma once

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Geometry>

#include "patchslam/geometry.h"

namespace patchslam::testing {

inline Vec3 random_vec3(std::mt19937_64& rng, double sigma) {
  std::normal_distribution<double> n(0.0, sigma);
  return Vec3(n(rng), n(rng), n(rng));
}

inline Quat random_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Quat q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q;
}

inline Pose random_pose(std::mt19937_64& rng, double translation_sigma = 1.0) {
  return Pose(random_quat(rng), random_vec3(rng, translation_sigma));
}

inline Similarity random_similarity(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> log_s(-1.0, 1.0);
  return Similarity(random_quat(rng), random_vec3(rng, 1.0), std::exp(log_s(rng)));
}

// 4x4 homogeneous matrix of s R x + t.
inline Eigen::Matrix4d to_matrix(const Similarity& s) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = s.scale() * s.rotation_matrix();
  m.topRightCorner<3, 1>() = s.translation();
  return m;
}

inline Eigen::Matrix4d to_matrix(const Pose& p) { return to_matrix(Similarity(p)); }

inline double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

// Camera-center RMSE after a least-squares similarity alignment computed by
// Eigen's own Umeyama, kept separate from the library's implementation.
inline double aligned_center_rmse(const std::vector<Pose>& estimate,
                                  const std::vector<Pose>& truth) {
  const auto n = static_cast<Eigen::Index>(estimate.size());
  Eigen::Matrix3Xd a(3, n);
  Eigen::Matrix3Xd b(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    a.col(i) = estimate[i].translation();
    b.col(i) = truth[i].translation();
  }
  const Eigen::Matrix4d T = Eigen::umeyama(a, b, true);
  const Eigen::Matrix3Xd aligned =
      (T.topLeftCorner<3, 3>() * a).colwise() + T.topRightCorner<3, 1>();
  return std::sqrt((aligned - b).colwise().squaredNorm().mean());
}

}  // namespace patchslam::testing
