#include "patchslam/run_config.h"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "patchslam/errors.h"

namespace patchslam {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& where, const std::string& key,
                      const std::string& value, const char* expected) {
  throw ConfigError(where + ": key '" + key + "' expects " + expected +
                    ", got '" + value + "'");
}

int to_int(const std::string& where, const std::string& key, const std::string& v) {
  int out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad(where, key, v, "an integer");
  return out;
}

std::uint64_t to_u64(const std::string& where, const std::string& key,
                     const std::string& v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    bad(where, key, v, "an unsigned integer");
  }
  return out;
}

double to_double(const std::string& where, const std::string& key,
                 const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    bad(where, key, v, "a number");
  }
  if (used != v.size()) bad(where, key, v, "a number");
  return out;
}

bool to_bool(const std::string& where, const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  bad(where, key, v, "a boolean");
}

using Setter = std::function<void(RunConfig&, const std::string& where,
                                  const std::string& key, const std::string& v)>;

template <typename T>
Setter int_field(T RunConfig::*field) {
  return [field](RunConfig& c, const std::string& w, const std::string& k,
                 const std::string& v) { c.*field = to_int(w, k, v); };
}
Setter u64_field(std::uint64_t RunConfig::*field) {
  return [field](RunConfig& c, const std::string& w, const std::string& k,
                 const std::string& v) { c.*field = to_u64(w, k, v); };
}
Setter double_field(double RunConfig::*field) {
  return [field](RunConfig& c, const std::string& w, const std::string& k,
                 const std::string& v) { c.*field = to_double(w, k, v); };
}
Setter bool_field(bool RunConfig::*field) {
  return [field](RunConfig& c, const std::string& w, const std::string& k,
                 const std::string& v) { c.*field = to_bool(w, k, v); };
}
Setter string_field(std::string RunConfig::*field) {
  return [field](RunConfig& c, const std::string&, const std::string&,
                 const std::string& v) { c.*field = v; };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"scene.kind",
       [](RunConfig& c, const std::string& w, const std::string& k,
          const std::string& v) {
         try {
           c.scene_kind = parse_trajectory_kind(v);
         } catch (const std::invalid_argument&) {
           bad(w, k, v, "line|circle|square-loop|random-walk-with-revisit");
         }
       }},
      {"scene.frames", int_field(&RunConfig::scene_frames)},
      {"scene.patches", int_field(&RunConfig::scene_patches)},
      {"scene.size", double_field(&RunConfig::scene_size)},
      {"scene.laps", double_field(&RunConfig::scene_laps)},
      {"scene.landmarks_per_frame", int_field(&RunConfig::scene_landmarks_per_frame)},
      {"scene.seed", u64_field(&RunConfig::scene_seed)},
      {"fixture", string_field(&RunConfig::fixture)},
      {"oracle.pixel_sigma", double_field(&RunConfig::oracle_pixel_sigma)},
      {"oracle.outlier_fraction", double_field(&RunConfig::oracle_outlier_fraction)},
      {"oracle.outlier_magnitude", double_field(&RunConfig::oracle_outlier_magnitude)},
      {"oracle.w_low", double_field(&RunConfig::oracle_w_low)},
      {"oracle.seed", u64_field(&RunConfig::oracle_seed)},
      {"drift.yaw", double_field(&RunConfig::drift_yaw)},
      {"drift.translation_sigma", double_field(&RunConfig::drift_translation_sigma)},
      {"drift.rotation_sigma", double_field(&RunConfig::drift_rotation_sigma)},
      {"drift.seed", u64_field(&RunConfig::drift_seed)},
      {"odometry.window", int_field(&RunConfig::odometry_window)},
      {"odometry.radius", int_field(&RunConfig::odometry_radius)},
      {"odometry.iterations", int_field(&RunConfig::odometry_iterations)},
      {"solver.dense_threshold", int_field(&RunConfig::solver_dense_threshold)},
      {"closure.enabled", bool_field(&RunConfig::closure_enabled)},
      {"closure.threshold", double_field(&RunConfig::closure_threshold)},
      {"closure.min_gap", int_field(&RunConfig::closure_min_gap)},
      {"closure.max_edges", int_field(&RunConfig::closure_max_edges)},
      {"closure.backend_range", int_field(&RunConfig::closure_backend_range)},
      {"closure.iterations", int_field(&RunConfig::closure_iterations)},
      {"closure.heading_gate_deg", double_field(&RunConfig::closure_heading_gate_deg)},
      {"classical.enabled", bool_field(&RunConfig::classical_enabled)},
      {"classical.delay", int_field(&RunConfig::classical_delay)},
      {"classical.min_gap", int_field(&RunConfig::classical_min_gap)},
      {"classical.retrieval_radius", double_field(&RunConfig::classical_retrieval_radius)},
      {"classical.pixel_sigma", double_field(&RunConfig::classical_pixel_sigma)},
      {"classical.outlier_fraction", double_field(&RunConfig::classical_outlier_fraction)},
      {"classical.seed", u64_field(&RunConfig::classical_seed)},
      {"classical.stall_bound_ms", double_field(&RunConfig::classical_stall_bound_ms)},
      {"run.repeats", int_field(&RunConfig::run_repeats)},
      {"output.trajectory", string_field(&RunConfig::output_trajectory)},
      {"output.reference", string_field(&RunConfig::output_reference)},
      {"output.events", string_field(&RunConfig::output_events)},
      {"output.histogram", string_field(&RunConfig::output_histogram)},
  };
  return table;
}

}  // namespace

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, _] : setters()) out.push_back(k);
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value,
                    const std::string& where) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError(where + ": unknown key '" + key + "'");
  it->second(*this, where, key, value);
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid configuration: " + what);
  };
  require(scene_frames >= 1, "scene.frames must be >= 1");
  require(scene_patches >= 1, "scene.patches must be >= 1");
  require(scene_size > 0.0, "scene.size must be positive");
  require(scene_laps > 0.0, "scene.laps must be positive");
  require(scene_landmarks_per_frame >= 0, "scene.landmarks_per_frame must be >= 0");
  require(oracle_pixel_sigma >= 0.0, "oracle.pixel_sigma must be >= 0");
  require(oracle_outlier_fraction >= 0.0 && oracle_outlier_fraction < 1.0,
          "oracle.outlier_fraction must be in [0, 1)");
  require(oracle_w_low >= 0.0 && oracle_w_low <= 1.0, "oracle.w_low must be in [0, 1]");
  require(drift_translation_sigma >= 0.0 && drift_rotation_sigma >= 0.0,
          "drift sigmas must be >= 0");
  require(odometry_window >= 1, "odometry.window must be >= 1");
  require(odometry_radius >= 1, "odometry.radius must be >= 1");
  require(odometry_iterations >= 1, "odometry.iterations must be >= 1");
  require(solver_dense_threshold >= 0, "solver.dense_threshold must be >= 0");
  require(closure_min_gap > odometry_radius,
          "closure.min_gap must exceed odometry.radius");
  require(closure_backend_range >= odometry_window,
          "closure.backend_range must be >= odometry.window");
  require(closure_max_edges >= 1, "closure.max_edges must be >= 1");
  require(closure_iterations >= 1, "closure.iterations must be >= 1");
  require(classical_delay >= 1, "classical.delay must be >= 1");
  require(classical_min_gap >= 1, "classical.min_gap must be >= 1");
  require(classical_outlier_fraction >= 0.0 && classical_outlier_fraction < 1.0,
          "classical.outlier_fraction must be in [0, 1)");
  require(classical_stall_bound_ms > 0.0, "classical.stall_bound_ms must be positive");
  require(run_repeats >= 1, "run.repeats must be >= 1");
}

SceneSpec RunConfig::scene_spec() const {
  SceneSpec s;
  s.kind = scene_kind;
  s.num_frames = scene_frames;
  s.patches_per_frame = scene_patches;
  s.size = scene_size;
  s.laps = scene_laps;
  s.landmarks_per_frame = scene_landmarks_per_frame;
  s.seed = scene_seed;
  return s;
}

OracleConfig RunConfig::oracle_config() const {
  OracleConfig o;
  o.pixel_sigma = oracle_pixel_sigma;
  o.outlier_fraction = oracle_outlier_fraction;
  o.outlier_magnitude = oracle_outlier_magnitude;
  o.w_low = oracle_w_low;
  o.seed = oracle_seed;
  return o;
}

RunConfig parse_run_config(std::istream& in, const std::string& source,
                           RunConfig base) {
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(where + ": expected 'key = value'");
    }
    base.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)), where);
  }
  base.validate();
  return base;
}

RunConfig load_run_config(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  return parse_run_config(in, path, std::move(base));
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides) {
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("override '" + o + "' is not key=value");
    }
    config.set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)), "--set " + o);
  }
  config.validate();
}

}  // namespace patchslam
