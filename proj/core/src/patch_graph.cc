#include "patchslam/patch_graph.h"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "patchslam/errors.h"

namespace patchslam {

PatchGraph::PatchGraph(const Intrinsics& intrinsics, int patch_size)
    : intrinsics_(intrinsics), patch_size_(patch_size) {
  if (patch_size < 1) throw std::invalid_argument("patch size must be >= 1");
}

int PatchGraph::add_frame(const Pose& initial_pose, double timestamp,
                          std::vector<Patch> patches, bool is_keyframe) {
  const int id = num_frames();
  std::unordered_map<std::int64_t, int> tracks;
  for (std::size_t k = 0; k < patches.size(); ++k) {
    const Patch& p = patches[k];
    if (p.frame != id) {
      std::ostringstream os;
      os << "patch " << k << " carries frame id " << p.frame
         << ", expected " << id;
      throw InconsistentFrameId(os.str());
    }
    if (p.size != patch_size_) {
      throw std::invalid_argument("patch size does not match graph");
    }
    if (p.track >= 0) tracks.emplace(p.track, static_cast<int>(k));
  }
  for (Patch& p : patches) {
    p.inverse_depth = std::max(p.inverse_depth, kInverseDepthFloor);
  }

  Frame f;
  f.id = id;
  f.pose = initial_pose;
  f.timestamp = timestamp;
  f.patch_count = static_cast<int>(patches.size());
  f.is_keyframe = is_keyframe;
  frames_.push_back(f);
  patches_.push_back(std::move(patches));
  tracks_.push_back(std::move(tracks));
  return id;
}

void PatchGraph::validate(const EdgeSpec& s) const {
  if (s.source_frame < 0 || s.source_frame >= num_frames() ||
      s.target_frame < 0 || s.target_frame >= num_frames() ||
      s.source_patch < 0 ||
      s.source_patch >= static_cast<int>(patches_[s.source_frame].size())) {
    std::ostringstream os;
    os << "edge (" << s.source_frame << "," << s.source_patch << ","
       << s.target_frame << ") references a missing frame or patch";
    throw IndexOutOfRange(os.str());
  }
  if (s.kind == EdgeKind::kLoop && s.source_frame == s.target_frame) {
    throw IndexOutOfRange("loop edges must connect distinct frames");
  }
}

std::size_t PatchGraph::add_edges(std::span<const EdgeSpec> specs) {
  for (const EdgeSpec& s : specs) validate(s);
  const std::size_t first = edges_.size();
  edges_.reserve(edges_.size() + specs.size());
  for (const EdgeSpec& s : specs) {
    Edge e;
    e.source_frame = s.source_frame;
    e.source_patch = s.source_patch;
    e.target_frame = s.target_frame;
    e.kind = s.kind;
    e.ideal = reproject(s).pixels;
    e.confidence = Vec2::Ones();
    edges_.push_back(std::move(e));
  }
  return first;
}

void PatchGraph::flip_edge(std::size_t edge_index) {
  if (edge_index >= edges_.size()) {
    throw IndexOutOfRange("flip_edge: edge index out of range");
  }
  Edge& e = edges_[edge_index];
  const Patch& src = patches_[e.source_frame][e.source_patch];
  const int counterpart =
      src.track >= 0 ? find_track(e.target_frame, src.track) : -1;
  if (counterpart < 0) {
    std::ostringstream os;
    os << "frame " << e.target_frame << " has no patch co-visible with patch "
       << e.source_patch << " of frame " << e.source_frame;
    throw NoCounterpartPatch(os.str());
  }
  const EdgeSpec flipped{e.target_frame, counterpart, e.source_frame, e.kind};
  e.source_frame = flipped.source_frame;
  e.source_patch = flipped.source_patch;
  e.target_frame = flipped.target_frame;
  e.ideal = reproject(flipped).pixels;
}

DenseFeatureReport PatchGraph::remove_frames_before(int frame_id) {
  DenseFeatureReport report;
  const int end = std::min(frame_id, num_frames());
  for (int i = 0; i < end; ++i) {
    if (frames_[i].has_dense_features) {
      frames_[i].has_dense_features = false;
      report.released.push_back(i);
    }
  }
  report.resident = resident_dense_features();
  return report;
}

bool PatchGraph::release_dense_features(int frame_id) {
  Frame& f = frames_.at(frame_id);
  const bool was = f.has_dense_features;
  f.has_dense_features = false;
  return was;
}

std::size_t PatchGraph::num_patches() const {
  std::size_t n = 0;
  for (const auto& p : patches_) n += p.size();
  return n;
}

void PatchGraph::set_inverse_depth(int frame, int k, double inverse_depth) {
  patches_.at(frame).at(k).inverse_depth =
      std::max(inverse_depth, kInverseDepthFloor);
}

int PatchGraph::find_track(int frame, std::int64_t track) const {
  const auto& m = tracks_.at(frame);
  const auto it = m.find(track);
  return it == m.end() ? -1 : it->second;
}

ReprojectedPatch PatchGraph::reproject(const EdgeSpec& s) const {
  return reproject_patch(patches_[s.source_frame][s.source_patch],
                         frames_[s.source_frame].pose,
                         frames_[s.target_frame].pose, intrinsics_);
}

ReprojectedPatch PatchGraph::reproject(const Edge& e) const {
  return reproject_patch(patches_[e.source_frame][e.source_patch],
                         frames_[e.source_frame].pose,
                         frames_[e.target_frame].pose, intrinsics_);
}

int PatchGraph::resident_dense_features() const {
  return static_cast<int>(std::count_if(
      frames_.begin(), frames_.end(),
      [](const Frame& f) { return f.has_dense_features; }));
}

int PatchGraph::dense_feature_demand() const {
  std::unordered_set<int> targets;
  for (const Edge& e : edges_) targets.insert(e.target_frame);
  return static_cast<int>(targets.size());
}

std::string PatchGraph::check_invariants() const {
  std::ostringstream os;
  for (int i = 0; i < num_frames(); ++i) {
    if (frames_[i].id != i) {
      os << "frame " << i << " has id " << frames_[i].id;
      return os.str();
    }
    if (frames_[i].patch_count != static_cast<int>(patches_[i].size())) {
      os << "frame " << i << " patch count mismatch";
      return os.str();
    }
    for (const Patch& p : patches_[i]) {
      if (p.frame != i) {
        os << "patch in frame " << i << " tagged " << p.frame;
        return os.str();
      }
      if (!(p.inverse_depth > 0.0)) {
        os << "non-positive inverse depth in frame " << i;
        return os.str();
      }
    }
  }
  const int cells = patch_size_ * patch_size_;
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const Edge& edge = edges_[e];
    if (edge.source_frame < 0 || edge.source_frame >= num_frames() ||
        edge.target_frame < 0 || edge.target_frame >= num_frames() ||
        edge.source_patch < 0 ||
        edge.source_patch >=
            static_cast<int>(patches_[edge.source_frame].size())) {
      os << "edge " << e << " dangles";
      return os.str();
    }
    if (edge.ideal.cols() != cells) {
      os << "edge " << e << " ideal reprojection has wrong size";
      return os.str();
    }
    if ((edge.confidence.array() < 0.0).any() ||
        (edge.confidence.array() > 1.0).any()) {
      os << "edge " << e << " confidence outside [0,1]";
      return os.str();
    }
    if (edge.kind == EdgeKind::kLoop &&
        edge.source_frame == edge.target_frame) {
      os << "loop edge " << e << " is a self edge";
      return os.str();
    }
  }
  return {};
}

std::vector<EdgeSpec> make_odometry_edges(const PatchGraph& graph,
                                          int new_frame, int radius) {
  std::vector<EdgeSpec> specs;
  const int first = std::max(0, new_frame - radius);
  const int k_new = graph.frame(new_frame).patch_count;
  for (int j = first; j < new_frame; ++j) {
    for (int k = 0; k < k_new; ++k) {
      specs.push_back({new_frame, k, j, EdgeKind::kOdometry});
    }
  }
  for (int i = first; i < new_frame; ++i) {
    const int k_old = graph.frame(i).patch_count;
    for (int k = 0; k < k_old; ++k) {
      specs.push_back({i, k, new_frame, EdgeKind::kOdometry});
    }
  }
  return specs;
}

}  // namespace patchslam
