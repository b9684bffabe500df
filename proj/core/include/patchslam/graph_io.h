#pragma once

#include <iosfwd>
#include <string>

#include "patchslam/patch_graph.h"

namespace patchslam {

// Line-oriented patch-graph fixture format. One record per line, fields
// separated by whitespace, '#' starts a comment line:
//
//   PATCHGRAPH 1
//   PATCH_SIZE <p>
//   INTRINSICS <fx> <fy> <cx> <cy>
//   FRAME <id> <timestamp> <keyframe 0|1> <dense 0|1> <tx> <ty> <tz> <qx> <qy> <qz> <qw>
//   PATCH <frame> <index> <track> <u> <v> <inverse_depth>
//   EDGE <src_frame> <src_patch> <dst_frame> <odometry|loop> <wx> <wy> <u_0> <v_0> ... <u_{p*p-1}> <v_{p*p-1}>
//
// PATCH_SIZE and INTRINSICS come before any FRAME. Frames appear in id
// order, each followed by its patches in index order. EDGE records come
// after all frames. (u, v) of a PATCH is the grid center; the grid itself is
// implied. Doubles are written with 17 significant digits so a write/read
// cycle is bit-exact.
void write_patch_graph(std::ostream& out, const PatchGraph& graph);
void write_patch_graph(const std::string& path, const PatchGraph& graph);

// Throws ParseError naming the offending line.
PatchGraph read_patch_graph(std::istream& in,
                            const std::string& source = "<stream>");
PatchGraph read_patch_graph(const std::string& path);

}  // namespace patchslam
