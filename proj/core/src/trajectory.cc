#include "patchslam/trajectory.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <Eigen/SVD>

#include "patchslam/drift_sim3.h"
#include "patchslam/errors.h"

namespace patchslam {

void Trajectory::append(double timestamp, const Pose& pose) {
  if (!records_.empty() && !(timestamp > records_.back().timestamp)) {
    throw std::invalid_argument("trajectory timestamps must increase strictly");
  }
  records_.push_back({timestamp, pose});
}

int Trajectory::associate(double timestamp, double gate) const {
  const auto it = std::lower_bound(
      records_.begin(), records_.end(), timestamp,
      [](const StampedPose& r, double t) { return r.timestamp < t; });
  int best = -1;
  double best_dt = gate;
  for (auto c : {it, it == records_.begin() ? it : it - 1}) {
    if (c == records_.end()) continue;
    const double dt = std::abs(c->timestamp - timestamp);
    if (dt <= best_dt) {
      best_dt = dt;
      best = static_cast<int>(c - records_.begin());
    }
  }
  return best;
}

void write_tum(std::ostream& out, const Trajectory& trajectory) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const StampedPose& r : trajectory.records()) {
    const Vec3& t = r.pose.translation();
    const Quat& q = r.pose.rotation();
    out << r.timestamp << ' ' << t.x() << ' ' << t.y() << ' ' << t.z() << ' '
        << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << q.w() << "\n";
  }
}

void write_tum(const std::string& path, const Trajectory& trajectory) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_tum(out, trajectory);
}

Trajectory read_tum(std::istream& in, const std::string& source,
                    std::vector<std::string>* warnings) {
  Trajectory traj;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    double v[8];
    for (double& x : v) {
      if (!(ls >> x)) throw ParseError(source, line_no, "expected 8 numbers");
    }
    std::string extra;
    if (ls >> extra) throw ParseError(source, line_no, "trailing field '" + extra + "'");
    Quat q(v[7], v[4], v[5], v[6]);
    const double norm = q.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw ParseError(source, line_no, "invalid quaternion");
    }
    if (std::abs(norm - 1.0) > 1e-3 && warnings) {
      std::ostringstream os;
      os << source << ":" << line_no << ": quaternion norm " << norm
         << " normalized";
      warnings->push_back(os.str());
    }
    try {
      traj.append(v[0], Pose(q, Vec3(v[1], v[2], v[3])));
    } catch (const std::invalid_argument&) {
      throw ParseError(source, line_no, "timestamp does not increase");
    }
  }
  return traj;
}

Trajectory read_tum(const std::string& path, std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file");
  return read_tum(in, path, warnings);
}

namespace {

// Rotation from camera orientations (chordal mean of R_ref R_est^T), then
// scale and translation in closed form.
Similarity align_by_orientation(const Eigen::Matrix3Xd& x, const Eigen::Matrix3Xd& y,
                                const std::vector<Mat3>& rel, bool with_scale) {
  Mat3 sum = Mat3::Zero();
  for (const Mat3& r : rel) sum += r;
  Eigen::JacobiSVD<Mat3> svd(sum, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 R = svd.matrixU() * svd.matrixV().transpose();
  if (R.determinant() < 0.0) {
    Mat3 U = svd.matrixU();
    U.col(2) *= -1.0;
    R = U * svd.matrixV().transpose();
  }
  const Vec3 mx = x.rowwise().mean();
  const Vec3 my = y.rowwise().mean();
  const Eigen::Matrix3Xd xc = R * (x.colwise() - mx);
  const Eigen::Matrix3Xd yc = y.colwise() - my;
  double s = 1.0;
  if (with_scale && xc.squaredNorm() > 0.0) {
    s = (xc.cwiseProduct(yc)).sum() / xc.squaredNorm();
    if (!(s > 0.0)) s = 1.0;
  }
  return Similarity(Quat(R), my - s * R * mx, s);
}

}  // namespace

AteResult ate(const Trajectory& estimate, const Trajectory& reference,
              Alignment alignment, double gate) {
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    const int j = reference.associate(estimate[i].timestamp, gate);
    if (j >= 0) pairs.emplace_back(static_cast<int>(i), j);
  }
  if (pairs.empty()) {
    throw NoAssociations("no estimate timestamp lies within the gate of a reference one");
  }
  const int n = static_cast<int>(pairs.size());
  Eigen::Matrix3Xd x(3, n), y(3, n);
  std::vector<Mat3> rel;
  for (int i = 0; i < n; ++i) {
    const Pose& pe = estimate[pairs[i].first].pose;
    const Pose& pr = reference[pairs[i].second].pose;
    x.col(i) = pe.translation();
    y.col(i) = pr.translation();
    rel.push_back(pr.rotation_matrix() * pe.rotation_matrix().transpose());
  }
  const bool with_scale = alignment == Alignment::kSim3;
  AteResult res;
  res.associations = n;
  try {
    res.alignment = umeyama(x, y, with_scale);
  } catch (const DegenerateConfiguration&) {
    res.alignment = align_by_orientation(x, y, rel, with_scale);
  }
  double sq = 0.0;
  for (int i = 0; i < n; ++i) {
    sq += (res.alignment * Vec3(x.col(i)) - y.col(i)).squaredNorm();
  }
  res.rmse = std::sqrt(sq / n);
  return res;
}

}  // namespace patchslam
