#include "patchslam/loop_proximity.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include "patchslam/errors.h"

namespace patchslam {

void ProximityConfig::validate(int odometry_radius, int free_window) const {
  std::ostringstream os;
  if (min_temporal_gap <= odometry_radius) {
    os << "min_temporal_gap (" << min_temporal_gap
       << ") must exceed the odometry radius (" << odometry_radius << ")";
  } else if (backend_range < free_window) {
    os << "backend_range (" << backend_range
       << ") must be at least the free window (" << free_window << ")";
  } else if (max_edges_per_closure < 1) {
    os << "max_edges_per_closure must be positive";
  } else if (global_iterations < 1) {
    os << "global_iterations must be positive";
  }
  if (!os.str().empty()) throw ConfigError(os.str());
}

double median_frame_spacing(const PatchGraph& graph) {
  std::vector<double> d;
  for (int i = 1; i < graph.num_frames(); ++i) {
    d.push_back((graph.frame(i).pose.translation() -
                 graph.frame(i - 1).pose.translation())
                    .norm());
  }
  if (d.empty()) return 0.0;
  const auto mid = d.begin() + d.size() / 2;
  std::nth_element(d.begin(), mid, d.end());
  return *mid;
}

double effective_threshold(const PatchGraph& graph, const ProximityConfig& config) {
  return config.distance_threshold > 0.0 ? config.distance_threshold
                                         : 2.0 * median_frame_spacing(graph);
}

std::vector<LoopPair> detect(const PatchGraph& graph, const ProximityConfig& config,
                             int recent_begin) {
  std::vector<LoopPair> out;
  const double threshold = effective_threshold(graph, config);
  if (!(threshold > 0.0)) return out;
  const double cos_gate = config.heading_gate_deg > 0.0
                              ? std::cos(config.heading_gate_deg *
                                         std::numbers::pi / 180.0)
                              : -2.0;
  for (int r = std::max(recent_begin, 0); r < graph.num_frames(); ++r) {
    const Pose& pr = graph.frame(r).pose;
    const Vec3 zr = pr.rotation() * Vec3::UnitZ();
    for (int o = 0; o + config.min_temporal_gap <= r; ++o) {
      const Pose& po = graph.frame(o).pose;
      const double d = (po.translation() - pr.translation()).norm();
      if (!(d < threshold)) continue;
      if ((po.rotation() * Vec3::UnitZ()).dot(zr) < cos_gate) continue;
      out.push_back({o, r, d});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const LoopPair& a, const LoopPair& b) {
    return a.distance < b.distance;
  });
  return out;
}

std::string ClosureEvent::log_line() const {
  std::ostringstream os;
  os << "closure t=" << timestamp << " anchor=" << anchor << " matches=";
  for (std::size_t i = 0; i < matched.size(); ++i) {
    os << (i ? "," : "") << matched[i];
  }
  os << " edges=" << edges.size() << " ba_ms=" << ba_ms;
  return os.str();
}

ClosureEvent close(PatchGraph& graph, const std::vector<LoopPair>& candidates,
                   const FlowFiller& fill, const ProximityConfig& config) {
  if (candidates.empty()) throw std::invalid_argument("no loop candidates");
  ClosureEvent ev;
  ev.anchor = candidates.front().recent_frame;
  ev.timestamp = graph.frame(ev.anchor).timestamp;
  ev.resident_before = graph.resident_dense_features();

  std::set<std::pair<int, int>> joined;
  for (const Edge& e : graph.edges()) {
    if (e.kind == EdgeKind::kLoop) joined.emplace(e.source_frame, e.target_frame);
  }
  std::vector<EdgeSpec> specs;
  const std::size_t cap = static_cast<std::size_t>(config.max_edges_per_closure);
  for (const LoopPair& c : candidates) {
    if (specs.size() >= cap) break;
    if (!joined.emplace(c.old_frame, c.recent_frame).second) continue;
    const int count = graph.frame(c.old_frame).patch_count;
    for (int k = 0; k < count && specs.size() < cap; ++k) {
      specs.push_back({c.old_frame, k, c.recent_frame, EdgeKind::kLoop});
    }
    if (std::find(ev.matched.begin(), ev.matched.end(), c.old_frame) == ev.matched.end()) {
      ev.matched.push_back(c.old_frame);
    }
  }
  ev.patch_features = specs.size();

  const std::size_t first = graph.add_edges(specs);
  const std::size_t last = graph.num_edges();
  for (std::size_t e = first; e < last; ++e) ev.edges.push_back(e);
  if (fill) fill(graph, first, last);

  const auto t0 = std::chrono::steady_clock::now();
  const int n = graph.num_frames();
  BAProblem problem(graph, std::max(0, n - config.backend_range), n - 1);
  BAOptions options;
  options.max_iterations = config.global_iterations;
  options.dense_threshold = config.dense_threshold;
  ev.ba = solve(problem, options);
  ev.ba_ms = std::chrono::duration<double, std::milli>(
                 std::chrono::steady_clock::now() - t0)
                 .count();
  ev.resident_after = graph.resident_dense_features();
  return ev;
}

}  // namespace patchslam
