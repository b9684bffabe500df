#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "patchslam/geometry.h"

namespace patchslam {

struct StampedPose {
  double timestamp = 0.0;
  Pose pose;
};

// Poses ordered by strictly increasing timestamp.
class Trajectory {
 public:
  Trajectory() = default;

  // Throws std::invalid_argument unless timestamp exceeds the last one.
  void append(double timestamp, const Pose& pose);

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const StampedPose& operator[](std::size_t i) const { return records_[i]; }
  const std::vector<StampedPose>& records() const { return records_; }

  // Index of the record nearest to `timestamp` within `gate`, or -1.
  int associate(double timestamp, double gate) const;

 private:
  std::vector<StampedPose> records_;
};

// TUM format: "timestamp tx ty tz qx qy qz qw" per line, '#' comments.
// Written with 17 significant digits. On import quaternions are normalized;
// a warning naming the line is appended to `warnings` when the norm was off
// by more than 1e-3. Throws ParseError naming the line.
void write_tum(std::ostream& out, const Trajectory& trajectory);
void write_tum(const std::string& path, const Trajectory& trajectory);
Trajectory read_tum(std::istream& in, const std::string& source = "<stream>",
                    std::vector<std::string>* warnings = nullptr);
Trajectory read_tum(const std::string& path,
                    std::vector<std::string>* warnings = nullptr);

enum class Alignment { kSE3, kSim3 };

struct AteResult {
  double rmse = 0.0;
  int associations = 0;
  Similarity alignment;  // maps estimate positions onto the reference
};

// Translational RMSE after the closed-form alignment of associated camera
// centers. Timestamps associate when they differ by at most `gate` seconds.
// When the centers are collinear the rotation is taken from the camera
// orientations instead. Throws NoAssociations.
AteResult ate(const Trajectory& estimate, const Trajectory& reference,
              Alignment alignment = Alignment::kSim3, double gate = 0.02);

}  // namespace patchslam
