#pragma once

#include <iosfwd>
#include <string>

#include "patchslam/drift_sim3.h"

namespace patchslam {

// Line-oriented LoopCandidate format, '#' starts a comment line:
//
//   LOOPCANDIDATE 1
//   LOOP <frame_j> <frame_k>
//   SIDE <center> <neighbor_a> <neighbor_b> <n>
//   <u> <v> <u_a> <v_a> <u_b> <v_b>          (n rows, "nan" = not observed)
//   SIDE ...                                 (the frame_k side)
//   MATCHES <m>
//   <index_j> <index_k>                      (m rows)
//
// The first SIDE belongs to frame_j, the second to frame_k. Doubles are
// written with 17 significant digits.
void write_loop_candidate(std::ostream& out, const LoopCandidate& candidate);
void write_loop_candidate(const std::string& path, const LoopCandidate& candidate);

// Throws ParseError naming the offending line.
LoopCandidate read_loop_candidate(std::istream& in,
                                  const std::string& source = "<stream>");
LoopCandidate read_loop_candidate(const std::string& path);

}  // namespace patchslam
