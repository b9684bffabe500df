#pragma once

#include <iosfwd>
#include <string>

#include "patchslam/pose_graph.h"

namespace patchslam {

// g2o-style Sim(3) records, one per line, '#' starts a comment line:
//
//   VERTEX_SIM3:QUAT <id> <tx> <ty> <tz> <qx> <qy> <qz> <qw> <s>
//   EDGE_SIM3:QUAT <a> <b> <tx> <ty> <tz> <qx> <qy> <qz> <qw> <s>
//   FIX <id>
//
// Vertex ids are 0..N-1, each listed once. An edge measurement Z_ab is the
// expected S_a^-1 S_b. The first edge (i, i+1) for each i is the odometry
// Delta_(i,i+1); every other edge (a, b) is a loop constraint with j = b,
// k = a and delta = Z_ab, so loops are written newer vertex first. Only
// vertex 0 may be fixed. Doubles are written
// with 17 significant digits.
void write_pose_graph(std::ostream& out, const PoseGraphProblem& problem);
void write_pose_graph(const std::string& path, const PoseGraphProblem& problem);

// Throws ParseError naming the offending line. Quaternions are normalized.
PoseGraphProblem read_pose_graph(std::istream& in,
                                 const std::string& source = "<stream>");
PoseGraphProblem read_pose_graph(const std::string& path);

}  // namespace patchslam
