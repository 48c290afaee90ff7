#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "metaspline/image_io.hpp"
#include "metaspline/multilevel.hpp"
#include "metaspline/pipeline.hpp"
#include "metaspline/render.hpp"

namespace metaspline {
namespace detail {

inline std::string frame_name(const char* stem, int k) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03d.png", stem, k);
  return buf;
}

inline bool parse_mode(const std::string& s, Mode& mode) {
  if (s == "spline") mode = Mode::spline;
  else if (s == "geodesic") mode = Mode::geodesic;
  else return false;
  return true;
}

inline bool parse_boundary(const std::string& s, Boundary& bc) {
  if (s == "natural") bc = Boundary::natural;
  else if (s == "periodic") bc = Boundary::periodic;
  else if (s == "hermite") bc = Boundary::hermite;
  else return false;
  return true;
}

inline const char* mode_name(Mode m) {
  return m == Mode::spline ? "spline" : "geodesic";
}

inline const char* boundary_name(Boundary b) {
  switch (b) {
    case Boundary::natural: return "natural";
    case Boundary::periodic: return "periodic";
    default: return "hermite";
  }
}

inline std::string config_echo(const SolverConfig& cfg) {
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "K=%d delta=%.17g sigma=%.17g theta=%.17g levels=%d iters=%d "
                "beta=%.17g mode=%s bc=%s",
                cfg.K, cfg.delta, cfg.sigma, cfg.theta, cfg.levels, cfg.iters,
                cfg.beta, mode_name(cfg.mode), boundary_name(cfg.boundary));
  return buf;
}

// Flow color scale shared by all frames of a sequence: the largest vector
// magnitude present, or 1 when every field vanishes.
inline double flow_scale(const std::vector<ImageGrid>& fields) {
  double s = 0.0;
  for (const ImageGrid& f : fields)
    for (int y = 0; y < f.height; ++y)
      for (int x = 0; x < f.width; ++x) {
        const double vx = f.at(x, y, 0), vy = f.at(x, y, 1);
        s = std::max(s, std::sqrt(vx * vx + vy * vy));
      }
  return s > 0.0 ? s : 1.0;
}

inline void write_state_outputs(const SplineState& s, const SolverConfig& cfg,
                                const std::filesystem::path& dir,
                                const std::string& echo) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "flow");
  fs::create_directories(dir / "accel");
  fs::create_directories(dir / "wdot");
  fs::create_directories(dir / "zbar");
  for (int k = 0; k <= cfg.K; ++k)
    save_image(s.u(k), (dir / frame_name("frame", k)).string());

  const ImageGrid id = identity_deformation(s.u(0).width, s.u(0).height);
  std::vector<ImageGrid> displacements;
  for (int k = 1; k <= cfg.K; ++k)
    displacements.push_back(difference(s.phi(k), id));
  const double dscale = flow_scale(displacements);
  for (int k = 1; k <= cfg.K; ++k)
    save_image(render_flow(displacements[k - 1], dscale),
               (dir / "flow" / frame_name("flow", k)).string());

  const int n_accel =
      cfg.boundary == Boundary::periodic ? cfg.K : cfg.K - 1;
  std::vector<ImageGrid> accels;
  for (int k = 1; k <= n_accel; ++k) {
    const int next = k == cfg.K ? 1 : k + 1;
    accels.push_back(discrete_acceleration(s.phi(k), s.phi(next), cfg.K));
  }
  const double ascale = flow_scale(accels);
  for (int k = 1; k <= n_accel; ++k)
    save_image(render_flow(accels[k - 1], ascale),
               (dir / "accel" / frame_name("accel", k)).string());

  for (int k = 1; k <= cfg.K - 1; ++k) {
    const ImageGrid w = second_material_derivative(
        s.u(k - 1), s.u(k), s.u(k + 1), s.phi(k), s.phi(k + 1), cfg.K);
    save_image(render_scalar(channel_magnitude(w)),
               (dir / "wdot" / frame_name("wdot", k)).string());
  }
  for (int k = 1; k <= cfg.K; ++k)
    save_image(render_scalar(channel_magnitude(s.z(k))),
               (dir / "zbar" / frame_name("zbar", k)).string());

  write_energy_csv(total_energy(s, cfg), (dir / "energy.csv").string(), echo);
}

}  // namespace detail

// Command line driver. args excludes the program name. Returns the process
// exit code: 0 on success, 2 when a key frame file cannot be loaded, 1 on
// any other usage or runtime error.
inline int run_cli(const std::vector<std::string>& args) {
  namespace fs = std::filesystem;
  CLI::App app{"temporally smooth spline interpolation of key frame images"};
  std::string config_path, out_dir, mode_str, bc_str;
  std::vector<std::string> keyframe_args;
  SolverConfig cfg;
  cfg.levels = 5;
  cfg.iters = 250;
  app.add_option("--config", config_path, "JSON configuration file");
  app.add_option("--keyframe", keyframe_args,
                 "key frame as INDEX:PATH (repeatable; overrides the config "
                 "list when given)");
  app.add_option("--K", cfg.K, "number of time steps");
  app.add_option("--delta", cfg.delta, "viscous dissipation weight");
  app.add_option("--sigma", cfg.sigma, "path energy scale");
  app.add_option("--theta", cfg.theta, "intensity misfit weight");
  app.add_option("--levels", cfg.levels, "multilevel depth");
  app.add_option("--iters", cfg.iters, "outer iterations per level");
  app.add_option("--beta", cfg.beta, "inertial extrapolation weight");
  app.add_option("--mode", mode_str, "spline or geodesic");
  app.add_option("--bc", bc_str, "natural, periodic, or hermite");
  app.add_option("--out", out_dir, "output directory")->required();
  bool dump_levels = false;
  app.add_flag("--dump-levels", dump_levels,
               "write frames and energy for every level");

  std::vector<const char*> argv;
  argv.push_back("metaspline");
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  struct KeySpec {
    int index;
    std::string path;
  };
  std::vector<KeySpec> key_specs;
  try {
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) {
        std::cerr << "error: cannot open config " << config_path << "\n";
        return 1;
      }
      nlohmann::json j = nlohmann::json::parse(in);
      if (j.contains("K") && !app.count("--K")) cfg.K = j["K"].get<int>();
      if (j.contains("delta") && !app.count("--delta"))
        cfg.delta = j["delta"].get<double>();
      if (j.contains("sigma") && !app.count("--sigma"))
        cfg.sigma = j["sigma"].get<double>();
      if (j.contains("theta") && !app.count("--theta"))
        cfg.theta = j["theta"].get<double>();
      if (j.contains("levels") && !app.count("--levels"))
        cfg.levels = j["levels"].get<int>();
      if (j.contains("iters") && !app.count("--iters"))
        cfg.iters = j["iters"].get<int>();
      if (j.contains("beta") && !app.count("--beta"))
        cfg.beta = j["beta"].get<double>();
      if (j.contains("mode") && mode_str.empty())
        mode_str = j["mode"].get<std::string>();
      if (j.contains("bc") && bc_str.empty()) bc_str = j["bc"].get<std::string>();
      if (j.contains("keyframes") && keyframe_args.empty())
        for (const auto& kf : j["keyframes"])
          key_specs.push_back(
              {kf.at("index").get<int>(), kf.at("path").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: bad config " << config_path << ": " << e.what() << "\n";
    return 1;
  }
  for (const std::string& spec : keyframe_args) {
    const std::size_t colon = spec.find(':');
    if (colon == 0 || colon == std::string::npos || colon + 1 == spec.size()) {
      std::cerr << "error: --keyframe expects INDEX:PATH, got " << spec << "\n";
      return 1;
    }
    int index = 0;
    try {
      index = std::stoi(spec.substr(0, colon));
    } catch (const std::exception&) {
      std::cerr << "error: bad key frame index in " << spec << "\n";
      return 1;
    }
    key_specs.push_back({index, spec.substr(colon + 1)});
  }
  if (!mode_str.empty() && !detail::parse_mode(mode_str, cfg.mode)) {
    std::cerr << "error: unknown mode " << mode_str << "\n";
    return 1;
  }
  if (!bc_str.empty() && !detail::parse_boundary(bc_str, cfg.boundary)) {
    std::cerr << "error: unknown bc " << bc_str << "\n";
    return 1;
  }
  if (cfg.mode == Mode::geodesic) cfg.sigma = 1.0;
  if (key_specs.size() < 2) {
    std::cerr << "error: at least two key frames are required\n";
    return 1;
  }

  KeyFrameSet keys;
  for (const KeySpec& ks : key_specs) {
    try {
      keys.push_back({ks.index, load_image(ks.path)});
    } catch (const std::exception& e) {
      std::cerr << "error: key frame " << ks.path << ": " << e.what() << "\n";
      return 2;
    }
  }
  cfg.fixed_indices.clear();
  for (const KeyFrame& kf : keys) cfg.fixed_indices.push_back(kf.index);

  try {
    cfg.validate();
    validate_keyframes(keys, cfg);
    const fs::path out(out_dir);
    fs::create_directories(out);
    const std::string echo = detail::config_echo(cfg);
    SolveReport report;
    auto on_level = [&](int level, const SplineState& s) {
      if (!dump_levels) return;
      char sub[32];
      std::snprintf(sub, sizeof sub, "level_%d", level);
      detail::write_state_outputs(s, cfg, out / sub, echo);
    };
    const SplineState s = solve_multilevel(keys, cfg, &report, on_level);
    detail::write_state_outputs(s, cfg, out, echo);
    write_iteration_csv(report.iterations, (out / "iterations.csv").string(), echo);
    write_lipschitz_csv(report.iterations, (out / "lipschitz.csv").string(), echo);
    if (report.det_warnings > 0)
      std::cerr << "warning: " << report.det_warnings
                << " deformation updates stayed at the determinant floor\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace metaspline
