#include "patchslam/geometry.h"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/LU>

#include "patchslam/errors.h"

namespace patchslam {

Mat3 hat(const Vec3& w) {
  Mat3 m;
  m << 0.0, -w.z(), w.y(),
       w.z(), 0.0, -w.x(),
       -w.y(), w.x(), 0.0;
  return m;
}

Quat so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  if (theta < kSmallAngle) {
    Quat q(1.0, 0.5 * omega.x(), 0.5 * omega.y(), 0.5 * omega.z());
    return q.normalized();
  }
  const double half = 0.5 * theta;
  const Vec3 v = (std::sin(half) / theta) * omega;
  return Quat(std::cos(half), v.x(), v.y(), v.z());
}

Vec3 so3_log(const Quat& q_in) {
  Quat q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Vec3 v = q.vec();
  const double n = v.norm();
  if (n < kSmallAngle) {
    return (2.0 / q.w()) * v;
  }
  const double theta = 2.0 * std::atan2(n, q.w());
  return (theta / n) * v;
}

Mat3 sim3_translation_jacobian(double sigma, const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 I = Mat3::Identity();
  const Mat3 Omega = hat(omega);

  // Near the origin the closed form cancels badly; the power series of
  // (sigma I + Omega) converges fast there.
  if (std::abs(sigma) < 0.5 && theta < 0.5) {
    const Mat3 A = sigma * I + Omega;
    Mat3 term = I;
    Mat3 W = I;
    for (int n = 1; n < 40; ++n) {
      term = term * A / static_cast<double>(n + 1);
      W += term;
      if (term.lpNorm<Eigen::Infinity>() < 1e-20) break;
    }
    return W;
  }

  const Mat3 Omega2 = Omega * Omega;
  const double scale = std::exp(sigma);
  double a_coef, b_coef, c_coef;
  if (std::abs(sigma) < kSmallAngle) {
    c_coef = 1.0;
    const double theta2 = theta * theta;
    a_coef = (1.0 - std::cos(theta)) / theta2;
    b_coef = (theta - std::sin(theta)) / (theta2 * theta);
  } else {
    c_coef = std::expm1(sigma) / sigma;
    const double sigma2 = sigma * sigma;
    if (theta < kSmallAngle) {
      a_coef = ((sigma - 1.0) * scale + 1.0) / sigma2;
      b_coef = (scale * 0.5 * sigma2 + scale - 1.0 - sigma * scale) /
               (sigma2 * sigma);
    } else {
      const double theta2 = theta * theta;
      const double a = scale * std::sin(theta);
      const double b = scale * std::cos(theta);
      const double c = theta2 + sigma2;
      a_coef = (a * sigma + (1.0 - b) * theta) / (theta * c);
      b_coef = (c_coef - ((b - 1.0) * sigma + a * theta) / c) / theta2;
    }
  }
  return a_coef * Omega + b_coef * Omega2 + c_coef * I;
}

// ---------------------------------------------------------------- Pose

Pose Pose::exp(const Vec6& xi) {
  const Vec3 v = xi.head<3>();
  const Vec3 omega = xi.tail<3>();
  return Pose(so3_exp(omega), sim3_translation_jacobian(0.0, omega) * v);
}

Vec6 Pose::log() const {
  const Vec3 omega = so3_log(q_);
  Vec6 xi;
  xi.head<3>() = sim3_translation_jacobian(0.0, omega).partialPivLu().solve(t_);
  xi.tail<3>() = omega;
  return xi;
}

Pose Pose::inverse() const {
  const Quat qi = q_.conjugate();
  return Pose(qi, -(qi * t_));
}

Pose Pose::operator*(const Pose& other) const {
  return Pose(q_ * other.q_, q_ * other.t_ + t_);
}

Mat6 Pose::adjoint() const {
  const Mat3 R = rotation_matrix();
  Mat6 adj = Mat6::Zero();
  adj.block<3, 3>(0, 0) = R;
  adj.block<3, 3>(0, 3) = hat(t_) * R;
  adj.block<3, 3>(3, 3) = R;
  return adj;
}

// ---------------------------------------------------------- Similarity

Vec7 Tangent7::vector() const {
  Vec7 v;
  v << translational, rotational, log_scale;
  return v;
}

Tangent7 Tangent7::from_vector(const Vec7& v) {
  return Tangent7{v.head<3>(), v.segment<3>(3), v(6)};
}

Similarity::Similarity(const Quat& q, const Vec3& t, double scale)
    : q_(q.normalized()), t_(t), s_(scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw std::invalid_argument("similarity scale must be positive");
  }
}

Similarity Similarity::exp(const Tangent7& xi) {
  const Mat3 W = sim3_translation_jacobian(xi.log_scale, xi.rotational);
  return Similarity(so3_exp(xi.rotational), W * xi.translational,
                    std::exp(xi.log_scale));
}

Tangent7 Similarity::log() const {
  Tangent7 xi;
  xi.rotational = so3_log(q_);
  xi.log_scale = std::log(s_);
  xi.translational = sim3_translation_jacobian(xi.log_scale, xi.rotational)
                         .partialPivLu()
                         .solve(t_);
  return xi;
}

Similarity Similarity::inverse() const {
  const Quat qi = q_.conjugate();
  const double si = 1.0 / s_;
  return Similarity(qi, -si * (qi * t_), si);
}

Similarity Similarity::operator*(const Similarity& other) const {
  return Similarity(q_ * other.q_, s_ * (q_ * other.t_) + t_, s_ * other.s_);
}

Mat7 Similarity::adjoint() const {
  const Mat3 R = rotation_matrix();
  Mat7 adj = Mat7::Zero();
  adj.block<3, 3>(0, 0) = s_ * R;
  adj.block<3, 3>(0, 3) = hat(t_) * R;
  adj.block<3, 1>(0, 6) = -t_;
  adj.block<3, 3>(3, 3) = R;
  adj(6, 6) = 1.0;
  return adj;
}

Mat7 sim3_ad(const Vec7& xi) {
  const Vec3 v = xi.head<3>();
  const Vec3 w = xi.segment<3>(3);
  const double sigma = xi(6);
  Mat7 ad = Mat7::Zero();
  ad.block<3, 3>(0, 0) = hat(w) + sigma * Mat3::Identity();
  ad.block<3, 3>(0, 3) = hat(v);
  ad.block<3, 1>(0, 6) = -v;
  ad.block<3, 3>(3, 3) = hat(w);
  return ad;
}

Mat7 sim3_right_jacobian(const Vec7& xi) {
  const Mat7 minus_ad = -sim3_ad(xi);
  Mat7 term = Mat7::Identity();
  Mat7 J = Mat7::Identity();
  for (int n = 1; n < 120; ++n) {
    term = term * minus_ad / static_cast<double>(n + 1);
    J += term;
    if (term.lpNorm<Eigen::Infinity>() <
        1e-18 * J.lpNorm<Eigen::Infinity>()) {
      break;
    }
  }
  return J;
}

Mat7 sim3_right_jacobian_inverse(const Vec7& xi) {
  return sim3_right_jacobian(xi).partialPivLu().inverse();
}

// ------------------------------------------------------------ camera

Intrinsics::Intrinsics(double fx_, double fy_, double cx_, double cy_)
    : fx(fx_), fy(fy_), cx(cx_), cy(cy_) {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw std::invalid_argument("focal lengths must be positive");
  }
}

Vec2 project(const Vec3& point, const Intrinsics& intr) {
  if (!(point.z() > kMinDepth)) {
    throw NonPositiveDepth("cannot project a point with Z <= epsilon");
  }
  return Vec2(intr.fx * point.x() / point.z() + intr.cx,
              intr.fy * point.y() / point.z() + intr.cy);
}

Vec3 backproject(const Vec2& pixel, double inverse_depth,
                 const Intrinsics& intr) {
  if (!(inverse_depth > 0.0)) {
    throw NonPositiveDepth("inverse depth must be positive");
  }
  const Vec3 ray((pixel.x() - intr.cx) / intr.fx,
                 (pixel.y() - intr.cy) / intr.fy, 1.0);
  return ray / inverse_depth;
}

Vec2 Patch::cell(int c) const {
  const double half = 0.5 * (size - 1);
  const int row = c / size;
  const int col = c % size;
  return center + Vec2(col - half, row - half);
}

Eigen::Matrix2Xd Patch::grid() const {
  Eigen::Matrix2Xd g(2, cell_count());
  for (int c = 0; c < cell_count(); ++c) g.col(c) = cell(c);
  return g;
}

ReprojectedPatch reproject_patch(const Patch& patch, const Pose& source,
                                 const Pose& target, const Intrinsics& intr) {
  if (!(patch.inverse_depth > 0.0)) {
    throw NonPositiveDepth("patch inverse depth must be positive");
  }
  const Pose rel = target.inverse() * source;
  ReprojectedPatch out;
  const int n = patch.cell_count();
  out.pixels.resize(2, n);
  out.behind.assign(n, 0);
  for (int c = 0; c < n; ++c) {
    const Vec3 p = rel * backproject(patch.cell(c), patch.inverse_depth, intr);
    if (p.z() > kMinDepth) {
      out.pixels.col(c) = project(p, intr);
    } else {
      out.pixels.col(c).setConstant(std::numeric_limits<double>::quiet_NaN());
      out.behind[c] = 1;
      out.any_behind = true;
    }
  }
  return out;
}

CellReprojection reproject_cell(const Vec2& pixel, double inverse_depth,
                                const Pose& target_from_source,
                                const Intrinsics& intr) {
  CellReprojection out;
  const Vec3 x = backproject(pixel, inverse_depth, intr);
  const Mat3 R = target_from_source.rotation_matrix();
  const Vec3 p = R * x + target_from_source.translation();
  if (!(p.z() > kMinDepth)) return out;

  const double iz = 1.0 / p.z();
  out.pixel = Vec2(intr.fx * p.x() * iz + intr.cx,
                   intr.fy * p.y() * iz + intr.cy);
  Mat23 dpi;
  dpi << intr.fx * iz, 0.0, -intr.fx * p.x() * iz * iz,
         0.0, intr.fy * iz, -intr.fy * p.y() * iz * iz;

  Eigen::Matrix<double, 3, 6> dp_source;
  dp_source.leftCols<3>() = R;
  dp_source.rightCols<3>() = -R * hat(x);
  Eigen::Matrix<double, 3, 6> dp_target;
  dp_target.leftCols<3>() = -Mat3::Identity();
  dp_target.rightCols<3>() = hat(p);

  out.d_source = dpi * dp_source;
  out.d_target = dpi * dp_target;
  out.d_inverse_depth = dpi * (R * (-x / inverse_depth));
  out.valid = true;
  return out;
}

}  // namespace patchslam
