// Command-line front end: register, warp, transform-points, evaluate,
// synth, preprocess. Exit codes: 0 ok, 2 config, 3 IO, 4 numerical.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "wsireg/wsireg.hpp"

namespace fs = std::filesystem;
using namespace wsireg;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw_io("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int cmd_register(const std::string& config, const std::string& fixed, const std::string& moving,
                 const std::string& out_dir) {
  RegistrationConfig cfg = config.empty() ? RegistrationConfig{} : parse_config(read_text(config));
  if (!fixed.empty()) cfg.fixed = fixed;
  if (!moving.empty()) cfg.moving = moving;
  if (!out_dir.empty()) cfg.output.directory = out_dir;
  const RunReport report = run_pipeline(cfg);
  std::cout << "registration finished; report at " << resolve_output(cfg.output, cfg.output.report_path) << '\n';
  for (const auto& w : report.warnings) std::cout << "warning: " << w << '\n';
  return 0;
}

int cmd_warp(const std::string& field_path, const std::string& input, const std::string& output,
             const std::string& interp, int tile, int fill, int levels) {
  const DisplacementField field = read_dhdf(field_path);
  const PyramidImage src = load_image(input);
  WarpPlan plan{&field, &src, field.level0_width(), field.level0_height(), tile, parse_interpolation(interp),
                static_cast<std::uint8_t>(fill)};
  const WarpStats st = warp_image_tiled(plan, output, levels);
  std::cout << "wrote " << output << ": " << st.tiles << " tiles, " << st.bytes_written << " bytes, max fan-in "
            << st.max_fan_in << '\n';
  return 0;
}

int cmd_transform_points(const std::string& field_path, const std::string& points, const std::string& direction,
                         const std::string& output) {
  const DisplacementField field = read_dhdf(field_path);
  const Direction dir = parse_direction(direction);
  const LandmarkSet in = read_landmarks(points, dir == Direction::fixed_to_moving ? Frame::fixed : Frame::moving);
  const LandmarkSet out = transform_points(in, field, dir);
  write_landmarks(output, out);
  const auto failed = std::count(out.converged.begin(), out.converged.end(), false);
  std::cout << "transformed " << out.size() << " points";
  if (failed > 0) std::cout << " (" << failed << " did not converge)";
  std::cout << '\n';
  return 0;
}

int cmd_evaluate(const std::string& warped, const std::string& target, double diag) {
  const LandmarkSet a = read_landmarks(warped, Frame::fixed);
  const LandmarkSet b = read_landmarks(target, Frame::fixed);
  const RtreSummary s = compute_rtre(a, b, diag);
  nlohmann::json j = {{"count", s.values.size()}, {"median", s.median}, {"mean", s.mean}, {"max", s.max}};
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_synth(std::uint64_t seed, int size, double max_deform, const std::string& out_dir, bool alternate_stain,
              bool identity) {
  SyntheticOptions opt = identity ? SyntheticOptions::identity(seed, size) : SyntheticOptions{};
  opt.seed = seed;
  opt.size = size;
  opt.max_deform = max_deform;
  opt.alternate_stain = alternate_stain;
  const SyntheticScene scene(opt);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw_io("cannot create '" + out_dir + "': " + ec.message());
  const auto path = [&](const char* name) { return (fs::path(out_dir) / name).string(); };
  const int levels = auto_num_levels(size, size);
  save_pyramid_tiff(scene.fixed_source(), path("fixed.tiff"), kDefaultTileSize, levels);
  save_pyramid_tiff(scene.moving_source(), path("moving.tiff"), kDefaultTileSize, levels);
  write_dhdf(path("ground_truth.dhdf"), scene.ground_truth());
  write_landmarks(path("fixed_landmarks.csv"), scene.fixed_landmarks());
  write_landmarks(path("moving_landmarks.csv"), scene.moving_landmarks());
  std::cout << "wrote synthetic pair to " << out_dir << " (affine " << to_string(scene.affine()) << ")\n";
  return 0;
}

int cmd_preprocess(const std::string& input, const std::string& output, int long_side) {
  const PyramidImage img = load_image(input);
  const PreprocessedPair pair = preprocess_pair(img, img, long_side);
  png::write(output, pair.fixed);
  std::cout << "wrote " << output << " (" << pair.fixed.width() << "x" << pair.fixed.height() << ", scale "
            << pair.scale << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Whole-slide image registration"};
  app.require_subcommand(1);

  std::string config, fixed, moving, out_dir;
  auto* reg = app.add_subcommand("register", "Run the registration pipeline");
  reg->add_option("--config", config, "JSON configuration");
  reg->add_option("--fixed", fixed, "Fixed image (overrides the config)");
  reg->add_option("--moving", moving, "Moving image (overrides the config)");
  reg->add_option("--out-dir", out_dir, "Output directory (overrides the config)");

  std::string field, input, output, interp = "bilinear";
  int tile = kDefaultTileSize, fill = 255, levels = 0;
  auto* warp = app.add_subcommand("warp", "Warp an image with a saved displacement field");
  warp->add_option("--field", field, "DHDF displacement field")->required();
  warp->add_option("--input", input, "Source image (TIFF or PNG)")->required();
  warp->add_option("--output", output, "Output pyramid TIFF")->required();
  warp->add_option("--interp", interp, "bilinear or nearest")->check(CLI::IsMember({"bilinear", "nearest"}));
  warp->add_option("--tile", tile, "Tile size");
  warp->add_option("--fill", fill, "Fill value outside the source")->check(CLI::Range(0, 255));
  warp->add_option("--levels", levels, "Pyramid levels (0 = automatic)");

  std::string points, direction;
  auto* tp = app.add_subcommand("transform-points", "Map landmarks through a displacement field");
  tp->add_option("--field", field, "DHDF displacement field")->required();
  tp->add_option("--points", points, "Landmark CSV")->required();
  tp->add_option("--direction", direction, "fixed-to-moving or moving-to-fixed")
      ->required()
      ->check(CLI::IsMember({"fixed-to-moving", "moving-to-fixed"}));
  tp->add_option("--output", output, "Output CSV")->required();

  std::string warped_points, target_points;
  double diag = 0;
  auto* ev = app.add_subcommand("evaluate", "Relative target registration error");
  ev->add_option("--warped-points", warped_points, "Landmark CSV")->required();
  ev->add_option("--target-points", target_points, "Landmark CSV")->required();
  ev->add_option("--diag", diag, "Normalizing diagonal, level-0 px")->required();

  std::uint64_t seed = 0;
  int size = 2048;
  double max_deform = 0;
  bool alternate = false, identity = false;
  auto* syn = app.add_subcommand("synth", "Generate a synthetic pair with ground truth");
  syn->add_option("--seed", seed, "Random seed");
  syn->add_option("--size", size, "Side length in pixels");
  syn->add_option("--max-deform", max_deform, "Maximum nonrigid displacement, px");
  syn->add_option("--out-dir", out_dir, "Output directory")->required();
  syn->add_flag("--alternate-stain", alternate, "Render the moving image with a different stain palette");
  syn->add_flag("--identity", identity, "No affine perturbation");

  int long_side = 1024;
  auto* pre = app.add_subcommand("preprocess", "Write the normalized registration raster of one image");
  pre->add_option("--input", input, "Image (TIFF or PNG)")->required();
  pre->add_option("--output", output, "Output PNG")->required();
  pre->add_option("--long-side", long_side, "Target long side, px");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ErrorKind::config);
  }

  try {
    if (*reg) return cmd_register(config, fixed, moving, out_dir);
    if (*warp) return cmd_warp(field, input, output, interp, tile, fill, levels);
    if (*tp) return cmd_transform_points(field, points, direction, output);
    if (*ev) return cmd_evaluate(warped_points, target_points, diag);
    if (*syn) return cmd_synth(seed, size, max_deform, out_dir, alternate, identity);
    if (*pre) return cmd_preprocess(input, output, long_side);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    // Caller mistakes surface as configuration errors on the command line.
    return e.kind() == ErrorKind::argument ? static_cast<int>(ErrorKind::config) : e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
