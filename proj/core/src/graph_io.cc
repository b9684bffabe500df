#include "patchslam/graph_io.h"

#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>

#include "patchslam/errors.h"

namespace patchslam {

namespace {

const char* kind_name(EdgeKind kind) {
  return kind == EdgeKind::kLoop ? "loop" : "odometry";
}

struct PendingFrame {
  Pose pose;
  double timestamp = 0.0;
  bool keyframe = true;
  bool dense = true;
  std::vector<Patch> patches;
};

}  // namespace

void write_patch_graph(std::ostream& out, const PatchGraph& graph) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  const Intrinsics& K = graph.intrinsics();
  out << "PATCHGRAPH 1\n";
  out << "PATCH_SIZE " << graph.patch_size() << "\n";
  out << "INTRINSICS " << K.fx << ' ' << K.fy << ' ' << K.cx << ' ' << K.cy
      << "\n";
  for (const Frame& f : graph.frames()) {
    const Vec3& t = f.pose.translation();
    const Quat& q = f.pose.rotation();
    out << "FRAME " << f.id << ' ' << f.timestamp << ' '
        << (f.is_keyframe ? 1 : 0) << ' ' << (f.has_dense_features ? 1 : 0)
        << ' ' << t.x() << ' ' << t.y() << ' ' << t.z() << ' ' << q.x()
        << ' ' << q.y() << ' ' << q.z() << ' ' << q.w() << "\n";
    const auto& patches = graph.patches(f.id);
    for (std::size_t k = 0; k < patches.size(); ++k) {
      const Patch& p = patches[k];
      out << "PATCH " << p.frame << ' ' << k << ' ' << p.track << ' '
          << p.center.x() << ' ' << p.center.y() << ' ' << p.inverse_depth
          << "\n";
    }
  }
  for (const Edge& e : graph.edges()) {
    out << "EDGE " << e.source_frame << ' ' << e.source_patch << ' '
        << e.target_frame << ' ' << kind_name(e.kind) << ' '
        << e.confidence.x() << ' ' << e.confidence.y();
    for (int c = 0; c < e.ideal.cols(); ++c) {
      out << ' ' << e.ideal(0, c) << ' ' << e.ideal(1, c);
    }
    out << "\n";
  }
}

void write_patch_graph(const std::string& path, const PatchGraph& graph) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_patch_graph(out, graph);
}

PatchGraph read_patch_graph(std::istream& in, const std::string& source) {
  std::optional<int> patch_size;
  std::optional<Intrinsics> intr;
  std::optional<PatchGraph> graph;
  std::optional<PendingFrame> pending;
  bool header = false;
  bool edges_started = false;
  int line_no = 0;

  auto fail = [&](const std::string& what) -> ParseError {
    return ParseError(source, line_no, what);
  };
  auto ensure_graph = [&]() {
    if (!graph) {
      if (!patch_size || !intr) {
        throw fail("PATCH_SIZE and INTRINSICS must precede frames");
      }
      graph.emplace(*intr, *patch_size);
    }
  };
  auto flush = [&]() {
    if (!pending) return;
    ensure_graph();
    const int id = graph->add_frame(pending->pose, pending->timestamp,
                                    std::move(pending->patches),
                                    pending->keyframe);
    if (!pending->dense) graph->release_dense_features(id);
    pending.reset();
  };

  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;

    try {
      if (tag == "PATCHGRAPH") {
        int version = 0;
        if (!(ls >> version) || version != 1) {
          throw fail("unsupported PATCHGRAPH version");
        }
        header = true;
      } else if (!header) {
        throw fail("missing PATCHGRAPH header");
      } else if (tag == "PATCH_SIZE") {
        int p = 0;
        if (!(ls >> p) || p < 1) throw fail("bad PATCH_SIZE");
        patch_size = p;
      } else if (tag == "INTRINSICS") {
        double fx, fy, cx, cy;
        if (!(ls >> fx >> fy >> cx >> cy)) throw fail("bad INTRINSICS");
        intr = Intrinsics(fx, fy, cx, cy);
      } else if (tag == "FRAME") {
        if (edges_started) throw fail("FRAME after EDGE records");
        flush();
        ensure_graph();
        int id, kf, dense;
        double ts, tx, ty, tz, qx, qy, qz, qw;
        if (!(ls >> id >> ts >> kf >> dense >> tx >> ty >> tz >> qx >> qy >>
              qz >> qw)) {
          throw fail("bad FRAME record");
        }
        if (id != graph->num_frames()) throw fail("frame ids out of order");
        pending.emplace();
        pending->pose = Pose(Quat(qw, qx, qy, qz), Vec3(tx, ty, tz));
        pending->timestamp = ts;
        pending->keyframe = kf != 0;
        pending->dense = dense != 0;
      } else if (tag == "PATCH") {
        if (!pending) throw fail("PATCH outside a FRAME");
        Patch p;
        int index;
        if (!(ls >> p.frame >> index >> p.track >> p.center.x() >>
              p.center.y() >> p.inverse_depth)) {
          throw fail("bad PATCH record");
        }
        if (index != static_cast<int>(pending->patches.size())) {
          throw fail("patch indices out of order");
        }
        p.size = *patch_size;
        pending->patches.push_back(p);
      } else if (tag == "EDGE") {
        flush();
        ensure_graph();
        edges_started = true;
        EdgeSpec s;
        std::string kind;
        Vec2 w;
        if (!(ls >> s.source_frame >> s.source_patch >> s.target_frame >>
              kind >> w.x() >> w.y())) {
          throw fail("bad EDGE record");
        }
        if (kind == "odometry") {
          s.kind = EdgeKind::kOdometry;
        } else if (kind == "loop") {
          s.kind = EdgeKind::kLoop;
        } else {
          throw fail("unknown edge kind '" + kind + "'");
        }
        const int cells = graph->patch_size() * graph->patch_size();
        Eigen::Matrix2Xd ideal(2, cells);
        for (int c = 0; c < cells; ++c) {
          if (!(ls >> ideal(0, c) >> ideal(1, c))) {
            throw fail("EDGE record has too few pixel values");
          }
        }
        const std::size_t e = graph->add_edges(std::span(&s, 1));
        Edge& edge = graph->mutable_edge(e);
        edge.ideal = ideal;
        edge.confidence = w;
      } else {
        throw fail("unknown record '" + tag + "'");
      }
      std::string extra;
      if (ls >> extra) throw fail("trailing fields");
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw fail(e.what());
    } catch (const std::invalid_argument& e) {
      throw fail(e.what());
    }
  }
  flush();
  if (!header) throw ParseError(source, line_no, "missing PATCHGRAPH header");
  ensure_graph();
  return std::move(*graph);
}

PatchGraph read_patch_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file");
  return read_patch_graph(in, path);
}

}  // namespace patchslam
