#pragma once

/// @file config.hpp
/// JSON run configuration. Parsing is strict: unknown keys, wrong types and
/// out-of-range values are rejected with the offending key path. Absent keys
/// take the defaults below, and to_json() emits the complete effective
/// configuration, which parses back to an equal value.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "wsireg/error.hpp"

namespace wsireg {

struct PreprocessingConfig {
  int target_long_side = 1024;  ///< raster size for the affine stage
  double low_percentile = 1.0;
  double high_percentile = 99.0;
  int fill = 0;  ///< padding value after inversion
  bool operator==(const PreprocessingConfig&) const = default;
};

struct InitialAlignmentConfig {
  bool enabled = true;
  double angle_step_deg = 15.0;
  int refine_max_iters = 100;
  int working_long_side = 1024;
  int search_long_side = 512;
  std::string trace_path;  ///< CSV iteration,cost; empty disables
  bool operator==(const InitialAlignmentConfig&) const = default;
};

struct NonrigidConfig {
  bool enabled = true;
  int levels = 3;
  std::vector<int> iterations{100, 100, 50};
  double step = 0.5;
  double sigma = 2.0;
  int registration_long_side = 2048;
  std::string trace_path;  ///< CSV level,iteration,data_cost; empty disables
  bool operator==(const NonrigidConfig&) const = default;
};

struct OutputConfig {
  std::string directory = ".";  ///< base for relative output paths
  std::string warped_path = "warped.tiff";
  std::string field_path = "field.dhdf";
  std::string report_path = "report.json";
  std::string qc_path = "qc.png";  ///< checkerboard preview; empty disables
  int save_levels = 0;             ///< pyramid levels in the warped TIFF; 0 = automatic
  int tile_size = 512;
  std::string interpolation = "bilinear";
  int fill = 255;
  bool operator==(const OutputConfig&) const = default;
};

struct RegistrationConfig {
  std::string fixed;
  std::string moving;
  PreprocessingConfig preprocessing;
  InitialAlignmentConfig initial_alignment;
  NonrigidConfig nonrigid;
  OutputConfig output;
  std::uint64_t seed = 0;
  bool operator==(const RegistrationConfig&) const = default;
};

namespace detail {

class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw_config(where() + ": expected an object");
    for (auto it = j_.begin(); it != j_.end(); ++it) keys_.push_back(it.key());
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const nlohmann::json* find(const std::string& key) {
    known_.push_back(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void integer(const std::string& key, int& out, long long lo, long long hi) {
    if (const auto* v = find(key)) {
      if (!v->is_number_integer()) throw_config(child(key) + ": expected an integer");
      const auto x = v->get<long long>();
      if (x < lo || x > hi) range(key, lo, hi);
      out = static_cast<int>(x);
    }
  }

  void seed(const std::string& key, std::uint64_t& out) {
    if (const auto* v = find(key)) {
      if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() && v->get<long long>() < 0)) {
        throw_config(child(key) + ": expected a non-negative integer");
      }
      out = v->get<std::uint64_t>();
    }
  }

  /// Real in [lo, hi]; `open_lo` excludes lo itself.
  void real(const std::string& key, double& out, double lo, double hi, bool open_lo = false) {
    if (const auto* v = find(key)) {
      if (!v->is_number()) throw_config(child(key) + ": expected a number");
      const double x = v->get<double>();
      if (!(open_lo ? x > lo : x >= lo) || !(x <= hi)) {
        throw_config(child(key) + ": " + std::to_string(x) + " outside " + (open_lo ? "(" : "[") + std::to_string(lo) +
                     ", " + std::to_string(hi) + "]");
      }
      out = x;
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (const auto* v = find(key)) {
      if (!v->is_boolean()) throw_config(child(key) + ": expected true or false");
      out = v->get<bool>();
    }
  }

  void string(const std::string& key, std::string& out) {
    if (const auto* v = find(key)) {
      if (!v->is_string()) throw_config(child(key) + ": expected a string");
      out = v->get<std::string>();
    }
  }

  /// Rejects every key that no accessor asked for.
  void finish() const {
    for (const auto& k : keys_) {
      if (std::find(known_.begin(), known_.end(), k) == known_.end()) throw_config(child(k) + ": unknown key");
    }
  }

  std::string where() const { return path_.empty() ? "config" : path_; }

  [[noreturn]] void range(const std::string& key, long long lo, long long hi) const {
    throw_config(child(key) + ": must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::vector<std::string> keys_;
  std::vector<std::string> known_;
};

inline void check_tile_size(int t, const std::string& path) {
  if (t % 16 != 0) throw_config(path + ": must be a multiple of 16");
}

}  // namespace detail

inline RegistrationConfig config_from_json(const nlohmann::json& root) {
  RegistrationConfig cfg;
  detail::ObjectReader top(root, "");
  top.string("fixed", cfg.fixed);
  top.string("moving", cfg.moving);
  top.seed("seed", cfg.seed);

  if (const auto* j = top.find("preprocessing")) {
    auto& p = cfg.preprocessing;
    detail::ObjectReader r(*j, "preprocessing");
    r.integer("target_long_side", p.target_long_side, 64, 65536);
    r.real("low_percentile", p.low_percentile, 0, 100);
    r.real("high_percentile", p.high_percentile, 0, 100);
    r.integer("fill", p.fill, 0, 255);
    r.finish();
    if (!(p.low_percentile < p.high_percentile)) {
      throw_config("preprocessing.high_percentile: must exceed preprocessing.low_percentile");
    }
  }

  if (const auto* j = top.find("initial_alignment")) {
    auto& a = cfg.initial_alignment;
    detail::ObjectReader r(*j, "initial_alignment");
    r.boolean("enabled", a.enabled);
    r.real("angle_step_deg", a.angle_step_deg, 0, 90, true);
    r.integer("refine_max_iters", a.refine_max_iters, 0, 100000);
    r.integer("working_long_side", a.working_long_side, 64, 16384);
    r.integer("search_long_side", a.search_long_side, 64, 16384);
    r.string("trace_path", a.trace_path);
    r.finish();
  }

  if (const auto* j = top.find("nonrigid")) {
    auto& n = cfg.nonrigid;
    detail::ObjectReader r(*j, "nonrigid");
    r.boolean("enabled", n.enabled);
    const bool has_levels = j->contains("levels");
    r.integer("levels", n.levels, 1, 8);
    if (const auto* it = r.find("iterations")) {
      if (!it->is_array() || it->empty()) throw_config("nonrigid.iterations: expected a non-empty array of integers");
      n.iterations.clear();
      for (std::size_t i = 0; i < it->size(); ++i) {
        const auto& v = (*it)[i];
        const std::string path = "nonrigid.iterations[" + std::to_string(i) + "]";
        if (!v.is_number_integer()) throw_config(path + ": expected an integer");
        const auto x = v.get<long long>();
        if (x < 0 || x > 100000) throw_config(path + ": must be in [0, 100000]");
        n.iterations.push_back(static_cast<int>(x));
      }
      if (!has_levels) n.levels = static_cast<int>(n.iterations.size());
    } else if (has_levels) {
      n.iterations.assign(static_cast<std::size_t>(n.levels), 100);
      n.iterations.back() = 50;
    }
    if (static_cast<int>(n.iterations.size()) != n.levels) {
      throw_config("nonrigid.iterations: has " + std::to_string(n.iterations.size()) + " entries but nonrigid.levels is " +
                   std::to_string(n.levels));
    }
    r.real("step", n.step, 0, 100, true);
    r.real("sigma", n.sigma, 0, 50);
    r.integer("registration_long_side", n.registration_long_side, 64, 16384);
    r.string("trace_path", n.trace_path);
    r.finish();
  }

  if (const auto* j = top.find("output")) {
    auto& o = cfg.output;
    detail::ObjectReader r(*j, "output");
    r.string("directory", o.directory);
    r.string("warped_path", o.warped_path);
    r.string("field_path", o.field_path);
    r.string("report_path", o.report_path);
    r.string("qc_path", o.qc_path);
    r.integer("save_levels", o.save_levels, 0, 16);
    r.integer("tile_size", o.tile_size, 16, 4096);
    detail::check_tile_size(o.tile_size, "output.tile_size");
    r.string("interpolation", o.interpolation);
    if (o.interpolation != "bilinear" && o.interpolation != "nearest") {
      throw_config("output.interpolation: expected \"bilinear\" or \"nearest\"");
    }
    r.integer("fill", o.fill, 0, 255);
    r.finish();
  }
  top.finish();
  return cfg;
}

inline RegistrationConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw_config(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline nlohmann::json to_json(const RegistrationConfig& c) {
  nlohmann::json j;
  j["fixed"] = c.fixed;
  j["moving"] = c.moving;
  j["seed"] = c.seed;
  j["preprocessing"] = {{"target_long_side", c.preprocessing.target_long_side},
                        {"low_percentile", c.preprocessing.low_percentile},
                        {"high_percentile", c.preprocessing.high_percentile},
                        {"fill", c.preprocessing.fill}};
  j["initial_alignment"] = {{"enabled", c.initial_alignment.enabled},
                            {"angle_step_deg", c.initial_alignment.angle_step_deg},
                            {"refine_max_iters", c.initial_alignment.refine_max_iters},
                            {"working_long_side", c.initial_alignment.working_long_side},
                            {"search_long_side", c.initial_alignment.search_long_side},
                            {"trace_path", c.initial_alignment.trace_path}};
  j["nonrigid"] = {{"enabled", c.nonrigid.enabled},
                   {"levels", c.nonrigid.levels},
                   {"iterations", c.nonrigid.iterations},
                   {"step", c.nonrigid.step},
                   {"sigma", c.nonrigid.sigma},
                   {"registration_long_side", c.nonrigid.registration_long_side},
                   {"trace_path", c.nonrigid.trace_path}};
  j["output"] = {{"directory", c.output.directory},
                 {"warped_path", c.output.warped_path},
                 {"field_path", c.output.field_path},
                 {"report_path", c.output.report_path},
                 {"qc_path", c.output.qc_path},
                 {"save_levels", c.output.save_levels},
                 {"tile_size", c.output.tile_size},
                 {"interpolation", c.output.interpolation},
                 {"fill", c.output.fill}};
  return j;
}

}  // namespace wsireg
