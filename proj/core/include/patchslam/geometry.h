#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace patchslam {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec7 = Eigen::Matrix<double, 7, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat7 = Eigen::Matrix<double, 7, 7>;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat26 = Eigen::Matrix<double, 2, 6>;
using Quat = Eigen::Quaterniond;

// Below this angle / log-scale the exp and log maps switch to their Taylor
// branches.
inline constexpr double kSmallAngle = 1e-8;
// A camera-frame point with Z at or below this is not projectable.
inline constexpr double kMinDepth = 1e-8;
// Inverse depths are clamped to at least this value after every update.
inline constexpr double kInverseDepthFloor = 1e-6;
inline constexpr int kDefaultPatchSize = 3;

Mat3 hat(const Vec3& w);

Quat so3_exp(const Vec3& omega);
Vec3 so3_log(const Quat& q);

// W(sigma, omega) = sum_n (sigma I + hat(omega))^n / (n+1)!. Maps the
// translational tangent part to the group translation for Sim(3); with
// sigma = 0 it is the usual SE(3) V matrix.
Mat3 sim3_translation_jacobian(double sigma, const Vec3& omega);

// Rigid transform x -> R x + t. Tangent coordinates are ordered
// (translational, rotational) and group perturbations are applied on the
// right: T * exp(xi).
class Pose {
 public:
  Pose() : q_(Quat::Identity()), t_(Vec3::Zero()) {}
  Pose(const Quat& q, const Vec3& t) : q_(q.normalized()), t_(t) {}

  static Pose identity() { return Pose(); }
  static Pose exp(const Vec6& xi);
  Vec6 log() const;

  Pose inverse() const;
  Pose operator*(const Pose& other) const;
  Vec3 operator*(const Vec3& x) const { return q_ * x + t_; }

  const Quat& rotation() const { return q_; }
  Mat3 rotation_matrix() const { return q_.toRotationMatrix(); }
  const Vec3& translation() const { return t_; }

  // Adj(T) such that T exp(xi) T^-1 = exp(Adj(T) xi).
  Mat6 adjoint() const;

 private:
  Quat q_;
  Vec3 t_;
};

// Sim(3) tangent vector in the fixed (translational, rotational, log-scale)
// order.
struct Tangent7 {
  Vec3 translational = Vec3::Zero();
  Vec3 rotational = Vec3::Zero();
  double log_scale = 0.0;

  Vec7 vector() const;
  static Tangent7 from_vector(const Vec7& v);
};

// Similarity x -> s R x + t with s > 0.
class Similarity {
 public:
  Similarity() : q_(Quat::Identity()), t_(Vec3::Zero()), s_(1.0) {}
  Similarity(const Quat& q, const Vec3& t, double scale);
  explicit Similarity(const Pose& pose, double scale = 1.0)
      : Similarity(pose.rotation(), pose.translation(), scale) {}

  static Similarity identity() { return Similarity(); }
  static Similarity exp(const Tangent7& xi);
  static Similarity exp(const Vec7& xi) { return exp(Tangent7::from_vector(xi)); }
  Tangent7 log() const;

  Similarity inverse() const;
  Similarity operator*(const Similarity& other) const;
  Vec3 operator*(const Vec3& x) const { return s_ * (q_ * x) + t_; }

  const Quat& rotation() const { return q_; }
  Mat3 rotation_matrix() const { return q_.toRotationMatrix(); }
  const Vec3& translation() const { return t_; }
  double scale() const { return s_; }

  // Drops the scale.
  Pose pose() const { return Pose(q_, t_); }

  // Adj(S) such that S exp(xi) S^-1 = exp(Adj(S) xi).
  Mat7 adjoint() const;

 private:
  Quat q_;
  Vec3 t_;
  double s_;
};

// Lie-algebra adjoint ad(xi) of sim(3), so that [xi, eta] = ad(xi) eta.
Mat7 sim3_ad(const Vec7& xi);
// Right Jacobian: exp(xi + d) ~= exp(xi) exp(J_r(xi) d).
Mat7 sim3_right_jacobian(const Vec7& xi);
Mat7 sim3_right_jacobian_inverse(const Vec7& xi);

struct Intrinsics {
  double fx = 320.0;
  double fy = 320.0;
  double cx = 256.0;
  double cy = 192.0;

  Intrinsics() = default;
  // Throws std::invalid_argument unless fx, fy > 0.
  Intrinsics(double fx, double fy, double cx, double cy);
};

Vec2 project(const Vec3& point, const Intrinsics& intr);
Vec3 backproject(const Vec2& pixel, double inverse_depth,
                 const Intrinsics& intr);

// A p x p pixel grid sharing one inverse depth. The grid is axis aligned
// with unit spacing and centered on `center`; cells are stored row-major.
struct Patch {
  int frame = 0;
  Vec2 center = Vec2::Zero();
  double inverse_depth = 1.0;
  // Identifier of the scene point the patch tracks; -1 if unknown. Two
  // patches in different frames with the same track are counterparts.
  std::int64_t track = -1;
  int size = kDefaultPatchSize;

  int cell_count() const { return size * size; }
  Vec2 cell(int c) const;
  Eigen::Matrix2Xd grid() const;
};

struct ReprojectedPatch {
  Eigen::Matrix2Xd pixels;
  // Per cell: landed at or behind the target camera's image plane.
  std::vector<std::uint8_t> behind;
  bool any_behind = false;
};

// Reprojects every cell of `patch` from camera `source` into camera `target`
// (both world-from-camera). Behind-camera cells are flagged and keep a NaN
// pixel; this is not an error.
ReprojectedPatch reproject_patch(const Patch& patch, const Pose& source,
                                 const Pose& target, const Intrinsics& intr);

// Reprojection of a single cell with analytic derivatives. Pose derivatives
// are w.r.t. right perturbations source * exp(a), target * exp(b).
struct CellReprojection {
  Vec2 pixel = Vec2::Zero();
  Mat26 d_source = Mat26::Zero();
  Mat26 d_target = Mat26::Zero();
  Vec2 d_inverse_depth = Vec2::Zero();
  bool valid = false;
};

// `target_from_source` is target^-1 * source.
CellReprojection reproject_cell(const Vec2& pixel, double inverse_depth,
                                const Pose& target_from_source,
                                const Intrinsics& intr);

}  // namespace patchslam
