#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "metaspline/image_io.hpp"
#include "metaspline/pipeline.hpp"

// Generates the synthetic test inputs (Gaussian bumps and binary shapes)
// used by the interpolation benchmarks.
int main(int argc, char** argv) {
  CLI::App app{"synthetic key frame generator"};
  std::string kind, out_path;
  int width = 64, height = 64;
  double amplitude = 1.0, cx = 0.5, cy = 0.5, stddev = 0.1, size = 0.2;
  app.add_option("--kind", kind, "gaussian, circle, or square")->required();
  app.add_option("--width", width, "grid width");
  app.add_option("--height", height, "grid height");
  app.add_option("--amplitude", amplitude, "gaussian peak value");
  app.add_option("--cx", cx, "center x in [0, 1]");
  app.add_option("--cy", cy, "center y in [0, 1]");
  app.add_option("--stddev", stddev, "gaussian standard deviation");
  app.add_option("--size", size, "circle radius or square side");
  app.add_option("--out", out_path, "output image path")->required();
  CLI11_PARSE(app, argc, argv);
  try {
    metaspline::ImageGrid u(3, 3, 1);
    if (kind == "gaussian") {
      u = metaspline::synth_gaussian(width, height, amplitude, cx, cy, stddev);
    } else if (kind == "circle") {
      u = metaspline::synth_shape(width, height, metaspline::ShapeKind::circle,
                                  cx, cy, size);
    } else if (kind == "square") {
      u = metaspline::synth_shape(width, height, metaspline::ShapeKind::square,
                                  cx, cy, size);
    } else {
      std::cerr << "error: unknown kind " << kind << "\n";
      return 1;
    }
    metaspline::save_image(u, out_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
