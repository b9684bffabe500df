#include "patchslam/loop_candidate_io.h"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <vector>

#include "patchslam/errors.h"

namespace patchslam {

namespace {

void write_side(std::ostream& out, const CandidateSide& s) {
  out << "SIDE " << s.center << ' ' << s.neighbor_a << ' ' << s.neighbor_b
      << ' ' << s.size() << "\n";
  auto put = [&](double v) {
    if (std::isnan(v)) {
      out << "nan";
    } else {
      out << v;
    }
  };
  for (int i = 0; i < s.size(); ++i) {
    put(s.center_px(0, i)); out << ' '; put(s.center_px(1, i)); out << ' ';
    put(s.a_px(0, i)); out << ' '; put(s.a_px(1, i)); out << ' ';
    put(s.b_px(0, i)); out << ' '; put(s.b_px(1, i)); out << "\n";
  }
}

class Reader {
 public:
  Reader(std::istream& in, std::string source)
      : in_(in), source_(std::move(source)) {}

  // Next non-comment line split into tokens; throws at end of input.
  std::vector<std::string> next() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_;
      std::istringstream ls(line);
      std::vector<std::string> tokens;
      std::string tok;
      while (ls >> tok) tokens.push_back(tok);
      if (tokens.empty() || tokens[0][0] == '#') continue;
      return tokens;
    }
    throw fail("unexpected end of input");
  }

  ParseError fail(const std::string& what) const {
    return ParseError(source_, line_, what);
  }

  double number(const std::string& tok) const {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw fail("bad number '" + tok + "'");
    return v;
  }

  int integer(const std::string& tok) const {
    char* end = nullptr;
    const long v = std::strtol(tok.c_str(), &end, 10);
    if (end == tok.c_str() || *end != '\0') throw fail("bad integer '" + tok + "'");
    return static_cast<int>(v);
  }

  std::vector<std::string> record(const char* tag, std::size_t fields) {
    auto t = next();
    if (t[0] != tag) throw fail(std::string("expected ") + tag);
    if (t.size() != fields + 1) throw fail(std::string("malformed ") + tag);
    return t;
  }

 private:
  std::istream& in_;
  std::string source_;
  int line_ = 0;
};

CandidateSide read_side(Reader& r) {
  const auto t = r.record("SIDE", 4);
  CandidateSide s;
  s.center = r.integer(t[1]);
  s.neighbor_a = r.integer(t[2]);
  s.neighbor_b = r.integer(t[3]);
  const int n = r.integer(t[4]);
  if (n < 0) throw r.fail("negative keypoint count");
  s.center_px.resize(2, n);
  s.a_px.resize(2, n);
  s.b_px.resize(2, n);
  for (int i = 0; i < n; ++i) {
    const auto row = r.next();
    if (row.size() != 6) throw r.fail("keypoint rows have 6 fields");
    s.center_px.col(i) << r.number(row[0]), r.number(row[1]);
    s.a_px.col(i) << r.number(row[2]), r.number(row[3]);
    s.b_px.col(i) << r.number(row[4]), r.number(row[5]);
    if (!s.center_px.col(i).allFinite()) {
      throw r.fail("keypoint must be observed in the center frame");
    }
  }
  return s;
}

}  // namespace

void write_loop_candidate(std::ostream& out, const LoopCandidate& c) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "LOOPCANDIDATE 1\n";
  out << "LOOP " << c.frame_j << ' ' << c.frame_k << "\n";
  write_side(out, c.side_j);
  write_side(out, c.side_k);
  out << "MATCHES " << c.matches.size() << "\n";
  for (const auto& [a, b] : c.matches) out << a << ' ' << b << "\n";
}

void write_loop_candidate(const std::string& path, const LoopCandidate& c) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_loop_candidate(out, c);
}

LoopCandidate read_loop_candidate(std::istream& in, const std::string& source) {
  Reader r(in, source);
  const auto header = r.record("LOOPCANDIDATE", 1);
  if (header[1] != "1") throw r.fail("unsupported LOOPCANDIDATE version");
  const auto loop = r.record("LOOP", 2);
  LoopCandidate c;
  c.frame_j = r.integer(loop[1]);
  c.frame_k = r.integer(loop[2]);
  if (c.frame_j >= c.frame_k) throw r.fail("frame_j must be older than frame_k");
  c.side_j = read_side(r);
  c.side_k = read_side(r);
  if (c.side_j.center != c.frame_j || c.side_k.center != c.frame_k) {
    throw r.fail("SIDE centers must match the LOOP frames");
  }
  const auto m = r.record("MATCHES", 1);
  const int count = r.integer(m[1]);
  if (count < 0) throw r.fail("negative match count");
  for (int i = 0; i < count; ++i) {
    const auto row = r.next();
    if (row.size() != 2) throw r.fail("match rows have 2 fields");
    const int a = r.integer(row[0]);
    const int b = r.integer(row[1]);
    if (a < 0 || a >= c.side_j.size() || b < 0 || b >= c.side_k.size()) {
      throw r.fail("match references a missing keypoint");
    }
    c.matches.emplace_back(a, b);
  }
  return c;
}

LoopCandidate read_loop_candidate(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file");
  return read_loop_candidate(in, path);
}

}  // namespace patchslam
