#include "patchslam/pose_graph_io.h"

#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include "patchslam/errors.h"

namespace patchslam {

namespace {

void write_sim3(std::ostream& out, const Similarity& s) {
  const Vec3& t = s.translation();
  const Quat& q = s.rotation();
  out << t.x() << ' ' << t.y() << ' ' << t.z() << ' ' << q.x() << ' ' << q.y() << ' '
      << q.z() << ' ' << q.w() << ' ' << s.scale();
}

Similarity read_sim3(std::istringstream& in, const std::string& source, int line) {
  double v[8];
  for (double& x : v) {
    if (!(in >> x)) throw ParseError(source, line, "expected 8 numbers for a Sim(3)");
  }
  Quat q(v[6], v[3], v[4], v[5]);
  const double norm = q.norm();
  if (!(norm > 0.0)) throw ParseError(source, line, "zero quaternion");
  if (!(v[7] > 0.0)) throw ParseError(source, line, "scale must be positive");
  q.coeffs() /= norm;
  return Similarity(q, Vec3(v[0], v[1], v[2]), v[7]);
}

void expect_end(std::istringstream& in, const std::string& source, int line) {
  std::string extra;
  if (in >> extra) throw ParseError(source, line, "trailing field '" + extra + "'");
}

}  // namespace

void write_pose_graph(std::ostream& out, const PoseGraphProblem& problem) {
  const auto old_precision = out.precision(17);
  for (int i = 0; i < problem.num_nodes(); ++i) {
    out << "VERTEX_SIM3:QUAT " << i << ' ';
    write_sim3(out, problem.node(i));
    out << '\n';
  }
  if (problem.num_nodes() > 0) out << "FIX 0\n";
  for (std::size_t i = 0; i < problem.odometry().size(); ++i) {
    out << "EDGE_SIM3:QUAT " << i << ' ' << i + 1 << ' ';
    write_sim3(out, problem.odometry()[i]);
    out << '\n';
  }
  for (const LoopConstraint& l : problem.loops()) {
    out << "EDGE_SIM3:QUAT " << l.k << ' ' << l.j << ' ';
    write_sim3(out, l.delta);
    out << '\n';
  }
  out.precision(old_precision);
}

void write_pose_graph(const std::string& path, const PoseGraphProblem& problem) {
  std::ofstream out(path);
  if (!out) throw ParseError(path, 0, "cannot open for writing");
  write_pose_graph(out, problem);
}

PoseGraphProblem read_pose_graph(std::istream& in, const std::string& source) {
  std::map<int, Similarity> vertices;
  std::map<int, Similarity> odometry;  // keyed by the lower vertex
  std::vector<std::pair<int, LoopConstraint>> loops;  // with source line
  std::string text;
  int line = 0;
  while (std::getline(in, text)) {
    ++line;
    std::istringstream ls(text);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "VERTEX_SIM3:QUAT") {
      int id = 0;
      if (!(ls >> id) || id < 0) throw ParseError(source, line, "bad vertex id");
      const Similarity s = read_sim3(ls, source, line);
      expect_end(ls, source, line);
      if (!vertices.emplace(id, s).second) {
        throw ParseError(source, line, "duplicate vertex " + std::to_string(id));
      }
    } else if (tag == "EDGE_SIM3:QUAT") {
      int a = 0;
      int b = 0;
      if (!(ls >> a >> b) || a < 0 || b < 0 || a == b) {
        throw ParseError(source, line, "bad edge endpoints");
      }
      const Similarity z = read_sim3(ls, source, line);
      expect_end(ls, source, line);
      if (b == a + 1 && !odometry.count(a)) {
        odometry.emplace(a, z);
      } else {
        loops.push_back({line, LoopConstraint{b, a, z}});
      }
    } else if (tag == "FIX") {
      int id = 0;
      if (!(ls >> id)) throw ParseError(source, line, "bad FIX id");
      expect_end(ls, source, line);
      if (id != 0) throw ParseError(source, line, "only vertex 0 can be fixed");
    } else {
      throw ParseError(source, line, "unknown record '" + tag + "'");
    }
  }

  const int n = static_cast<int>(vertices.size());
  std::vector<Similarity> nodes;
  for (const auto& [id, s] : vertices) {
    if (id != static_cast<int>(nodes.size())) {
      throw ParseError(source, 0, "vertex ids must be 0.." + std::to_string(n - 1));
    }
    nodes.push_back(s);
  }
  std::vector<Similarity> chain;
  for (int i = 0; i + 1 < n; ++i) {
    const auto it = odometry.find(i);
    if (it == odometry.end()) {
      throw ParseError(source, 0, "missing odometry edge " + std::to_string(i) + " " +
                                      std::to_string(i + 1));
    }
    chain.push_back(it->second);
  }
  if (static_cast<int>(odometry.size()) != std::max(n - 1, 0)) {
    throw ParseError(source, 0, "odometry edge references a missing vertex");
  }
  std::vector<LoopConstraint> constraints;
  for (const auto& [l, c] : loops) {
    if (c.j >= n || c.k >= n) {
      throw ParseError(source, l, "edge references a missing vertex");
    }
    constraints.push_back(c);
  }
  return PoseGraphProblem(std::move(nodes), std::move(chain), std::move(constraints));
}

PoseGraphProblem read_pose_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open");
  return read_pose_graph(in, path);
}

}  // namespace patchslam
