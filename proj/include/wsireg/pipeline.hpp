#pragma once

/// @file pipeline.hpp
/// End-to-end registration run driven by a RegistrationConfig:
/// load -> preprocess -> initial alignment -> nonrigid -> compose ->
/// save field -> tiled warp -> QC preview, with a JSON report written for
/// every run, failed ones included.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "wsireg/config.hpp"
#include "wsireg/field.hpp"
#include "wsireg/initial_alignment.hpp"
#include "wsireg/nonrigid.hpp"
#include "wsireg/png.hpp"
#include "wsireg/preprocessing.hpp"
#include "wsireg/pyramid_io.hpp"
#include "wsireg/warping.hpp"

namespace wsireg {

/// Alternating cell x cell blocks, `a` in the top-left block.
inline Raster render_checkerboard(const Raster& a, const Raster& b, int cell) {
  if (!a.same_shape(b)) throw_argument("render_checkerboard: rasters differ in shape");
  if (cell <= 0) throw_argument("render_checkerboard: cell must be positive");
  Raster out = a;
  const int ch = a.channels();
  for (int y = 0; y < a.height(); ++y) {
    const int by = y / cell;
    for (int x = 0; x < a.width(); ++x) {
      if ((x / cell + by) % 2 == 0) continue;
      for (int c = 0; c < ch; ++c) out.at(x, y, c) = b.at(x, y, c);
    }
  }
  return out;
}

/// Number of grid nodes where id + u/s has a non-positive Jacobian
/// determinant (forward differences), i.e. where the map folds.
inline std::size_t count_folded_nodes(const DisplacementField& f) {
  std::size_t n = 0;
  const double s = f.scale();
  for (int j = 0; j + 1 < f.grid_height(); ++j) {
    for (int i = 0; i + 1 < f.grid_width(); ++i) {
      const Point u = f.at(i, j), ux = f.at(i + 1, j), uy = f.at(i, j + 1);
      const double a = 1 + (ux.x - u.x) / s, b = (uy.x - u.x) / s;
      const double c = (ux.y - u.y) / s, d = 1 + (uy.y - u.y) / s;
      if (a * d - b * c <= 0) ++n;
    }
  }
  return n;
}

struct RunReport {
  std::string status = "running";
  nlohmann::json data = nlohmann::json::object();
  std::vector<std::pair<std::string, double>> stages;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const {
    nlohmann::json j = data;
    j["status"] = status;
    nlohmann::json st = nlohmann::json::array();
    for (const auto& [name, seconds] : stages) st.push_back({{"stage", name}, {"seconds", seconds}});
    j["stages"] = st;
    j["warnings"] = warnings;
    return j;
  }

  void write(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw_io("cannot write report '" + path + "'");
    os << to_json().dump(2) << '\n';
    if (!os) throw_io("write failed on report '" + path + "'");
  }
};

/// Failure inside a pipeline stage; carries the partial report.
class StageError : public Error {
 public:
  StageError(ErrorKind kind, std::string stage, const std::string& message, RunReport report)
      : Error(kind, "stage " + stage + ": " + message), stage_(std::move(stage)), report_(std::move(report)) {}

  const std::string& stage() const noexcept { return stage_; }
  const RunReport& report() const noexcept { return report_; }

 private:
  std::string stage_;
  RunReport report_;
};

inline std::string resolve_output(const OutputConfig& o, const std::string& p) {
  if (p.empty()) return p;
  const std::filesystem::path path(p);
  if (path.is_absolute()) return p;
  return (std::filesystem::path(o.directory) / path).string();
}

inline nlohmann::json affine_json(const AffineTransform& t) {
  const auto& p = t.params();
  return nlohmann::json::array({p[0], p[1], p[2], p[3], p[4], p[5]});
}

inline void write_affine_trace(const std::string& path, const std::vector<std::vector<double>>& traces) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw_io("cannot write trace '" + path + "'");
  os << "pass,iteration,cost\n";
  os.precision(17);
  for (std::size_t p = 0; p < traces.size(); ++p) {
    for (std::size_t i = 0; i < traces[p].size(); ++i) os << p << ',' << i << ',' << traces[p][i] << '\n';
  }
}

inline void write_nonrigid_trace(const std::string& path, const std::vector<NonrigidTracePoint>& trace) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw_io("cannot write trace '" + path + "'");
  os << "level,iteration,data_cost\n";
  os.precision(17);
  for (const auto& t : trace) os << t.level << ',' << t.iteration << ',' << t.cost << '\n';
}

inline LevelSchedule schedule_from_config(const NonrigidConfig& n) {
  LevelSchedule s;
  const int levels = static_cast<int>(n.iterations.size());
  for (int i = 0; i < levels; ++i) s.levels.push_back({1 << (levels - 1 - i), n.iterations[static_cast<std::size_t>(i)], n.step, n.sigma});
  return s;
}

/// Preview rasters at a common scale, reduced to one channel if the
/// channel counts differ.
inline Raster qc_checkerboard(const PyramidImage& fixed, const PyramidImage& moving, const DisplacementField& total,
                              std::uint8_t fill) {
  const double long_side = static_cast<double>(std::max(fixed.width(), fixed.height()));
  const double scale = std::max(1.0, long_side / 1024.0);
  Raster f = read_at_scale(fixed, scale);
  Raster m = warp_preview(total, read_at_scale(moving, scale), scale, f.width(), f.height(), fill);
  if (f.channels() != m.channels()) {
    f = to_grayscale(f);
    m = to_grayscale(m);
  }
  return render_checkerboard(f, m, std::max(16, std::max(f.width(), f.height()) / 16));
}

/// Runs the full pipeline. Throws StageError (after writing the partial
/// report) on failure.
inline RunReport run_pipeline(const RegistrationConfig& cfg) {
  using clock = std::chrono::steady_clock;
  RunReport report;
  report.data["config"] = to_json(cfg);
  const OutputConfig& out = cfg.output;
  const std::string report_path = resolve_output(out, out.report_path.empty() ? "report.json" : out.report_path);
  std::string stage = "setup";
  auto t0 = clock::now();
  auto finish_stage = [&](const std::string& next) {
    const auto now = clock::now();
    report.stages.emplace_back(stage, std::chrono::duration<double>(now - t0).count());
    t0 = now;
    stage = next;
  };

  try {
    std::error_code ec;
    std::filesystem::create_directories(out.directory, ec);
    if (ec) throw_io("cannot create output directory '" + out.directory + "': " + ec.message());
    if (cfg.fixed.empty()) throw_config("fixed: input path missing");
    if (cfg.moving.empty()) throw_config("moving: input path missing");
    finish_stage("load");

    const PyramidImage fixed = load_image(cfg.fixed);
    const PyramidImage moving = load_image(cfg.moving);
    auto image_json = [](const PyramidImage& img) {
      return nlohmann::json{{"width", img.width()}, {"height", img.height()}, {"channels", img.channels()},
                            {"levels", img.num_levels()}};
    };
    report.data["images"] = {{"fixed", image_json(fixed)}, {"moving", image_json(moving)}};
    finish_stage("preprocess");

    const long long long_side = std::max({fixed.width(), fixed.height(), moving.width(), moving.height()});
    PreprocessOptions popt;
    popt.normalize = {cfg.preprocessing.low_percentile, cfg.preprocessing.high_percentile};
    const int affine_side = static_cast<int>(std::min<long long>(cfg.preprocessing.target_long_side, long_side));
    PreprocessedPair pair = preprocess_pair(fixed, moving, std::max(64, affine_side), popt);
    if (cfg.preprocessing.fill != 0) {
      // Padding beyond the unpadded extents takes the configured fill.
      auto refill = [&](Raster& r, int w, int h) {
        for (int y = 0; y < r.height(); ++y) {
          for (int x = (y < h ? w : 0); x < r.width(); ++x) r.at(x, y) = static_cast<std::uint8_t>(cfg.preprocessing.fill);
        }
      };
      refill(pair.fixed, pair.fixed_width, pair.fixed_height);
      refill(pair.moving, pair.moving_width, pair.moving_height);
    }
    report.data["preprocessing"] = {{"scale", pair.scale},
                                    {"width", pair.fixed.width()},
                                    {"height", pair.fixed.height()},
                                    {"fixed_degenerate", pair.fixed_degenerate},
                                    {"moving_degenerate", pair.moving_degenerate}};
    if (pair.fixed_degenerate) report.warnings.push_back("fixed image has no intensity contrast after preprocessing");
    if (pair.moving_degenerate) report.warnings.push_back("moving image has no intensity contrast after preprocessing");
    finish_stage("initial_alignment");

    AffineTransform affine;
    nlohmann::json ia = {{"enabled", cfg.initial_alignment.enabled}};
    if (cfg.initial_alignment.enabled) {
      InitialAlignmentOptions io;
      io.rotation.angle_step = cfg.initial_alignment.angle_step_deg;
      io.rotation.search_long_side = cfg.initial_alignment.search_long_side;
      io.refine.working_long_side = cfg.initial_alignment.working_long_side;
      io.refine_max_iters = cfg.initial_alignment.refine_max_iters;
      const InitialAlignmentResult r = run_initial(pair, io);
      affine = r.transform;
      ia["rotation_angle_deg"] = r.rotation_angle;
      ia["rotation_score"] = r.rotation_score;
      ia["initial_ncc"] = r.initial_ncc;
      ia["final_ncc"] = r.final_ncc;
      ia["low_confidence"] = r.low_confidence;
      if (r.low_confidence) {
        report.warnings.push_back("initial alignment has low confidence; using centroid translation only");
      }
      if (!cfg.initial_alignment.trace_path.empty()) {
        write_affine_trace(resolve_output(out, cfg.initial_alignment.trace_path), r.traces);
      }
    }
    if (!affine.invertible()) throw_numerical("initial alignment produced a singular transform");
    ia["matrix"] = affine_json(affine);
    report.data["initial_alignment"] = ia;
    finish_stage("nonrigid");

    DisplacementField field;
    nlohmann::json nr = {{"enabled", cfg.nonrigid.enabled}};
    if (cfg.nonrigid.enabled) {
      const int side = static_cast<int>(std::min<long long>(cfg.nonrigid.registration_long_side, long_side));
      const PreprocessedPair reg =
          side == affine_side ? pair : preprocess_pair(fixed, moving, std::max(64, side), popt);
      const LevelSchedule schedule = schedule_from_config(cfg.nonrigid);
      NonrigidResult r = run_nonrigid(reg, affine, schedule);
      field = std::move(r.field);
      nlohmann::json levels = nlohmann::json::array();
      for (std::size_t li = 0; li < schedule.levels.size(); ++li) {
        double first = 0, last = 0;
        int iters = 0;
        for (const auto& t : r.trace) {
          if (t.level != static_cast<int>(li)) continue;
          if (t.iteration == 0) first = t.cost;
          last = t.cost;
          iters = t.iteration;
        }
        levels.push_back({{"factor", schedule.levels[li].factor},
                          {"initial_cost", first},
                          {"final_cost", last},
                          {"iterations_run", iters}});
      }
      nr["registration_scale"] = reg.scale;
      nr["levels"] = levels;
      nr["final_cost"] = r.final_cost;
      nr["max_displacement"] = field.max_magnitude();
      const std::size_t folded = count_folded_nodes(field);
      nr["folded_nodes"] = folded;
      if (folded > 0) report.warnings.push_back("nonrigid field folds at " + std::to_string(folded) + " grid nodes");
      if (!cfg.nonrigid.trace_path.empty()) write_nonrigid_trace(resolve_output(out, cfg.nonrigid.trace_path), r.trace);
    } else {
      const auto [gw, gh] = fitted_grid(fixed.width(), fixed.height(), std::max(1.0, pair.scale));
      field = DisplacementField(gw, gh, fixed.width(), fixed.height());
    }
    nr["grid"] = {field.grid_width(), field.grid_height()};
    report.data["nonrigid"] = nr;
    finish_stage("compose");

    // The warp uses exactly the values stored in the field file, so warping
    // from the saved file reproduces the pipeline output.
    const DisplacementField total = compose_affine_with_field(affine, field).quantized();
    if (!total.all_finite()) throw_numerical("composed field contains non-finite values");
    finish_stage("save_field");

    const std::string field_path = resolve_output(out, out.field_path);
    const std::string warped_path = resolve_output(out, out.warped_path);
    nlohmann::json artifacts = {{"report", report_path}};
    if (!field_path.empty()) {
      write_dhdf(field_path, total);
      artifacts["field"] = field_path;
    }
    report.data["artifacts"] = artifacts;
    finish_stage("warp");

    if (!warped_path.empty()) {
      WarpPlan plan{&total, &moving, fixed.width(), fixed.height(), out.tile_size,
                    parse_interpolation(out.interpolation), static_cast<std::uint8_t>(out.fill)};
      const WarpStats ws = warp_image_tiled(plan, warped_path, out.save_levels);
      report.data["warp"] = {{"tiles", ws.tiles},
                             {"bytes_written", ws.bytes_written},
                             {"max_fan_in", ws.max_fan_in},
                             {"source_tiles_read", ws.source_tiles_read}};
      artifacts["warped"] = warped_path;
      report.data["artifacts"] = artifacts;
    }
    finish_stage("qc");

    if (!out.qc_path.empty()) {
      const std::string qc = resolve_output(out, out.qc_path);
      png::write(qc, qc_checkerboard(fixed, moving, total, static_cast<std::uint8_t>(out.fill)));
      artifacts["qc"] = qc;
      report.data["artifacts"] = artifacts;
    }
    finish_stage("report");
    report.status = "ok";
    report.write(report_path);
    return report;
  } catch (const Error& e) {
    finish_stage(stage);
    report.status = "failed";
    report.data["error"] = {{"stage", stage}, {"kind", to_string(e.kind())}, {"message", e.what()}};
    try {
      report.write(report_path);
    } catch (const Error&) {
      report.warnings.push_back("report could not be written to '" + report_path + "'");
    }
    throw StageError(e.kind(), stage, e.what(), report);
  }
}

}  // namespace wsireg
