#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace metaspline {

// Dense raster on the unit square, row-major and channel-interleaved.
// Node (x, y) sits at normalized coordinates (x/(width-1), y/(height-1));
// its values start at index (y*width + x)*channels.
struct ImageGrid {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> values;

  ImageGrid() = default;

  ImageGrid(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c) {
    if (w < 3 || h < 3)
      throw std::invalid_argument("ImageGrid: grid must be at least 3x3");
    if (c < 1)
      throw std::invalid_argument("ImageGrid: channel count must be positive");
    values.assign(static_cast<std::size_t>(w) * h * c, fill);
  }

  std::size_t index(int x, int y, int ch) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + ch;
  }

  double& at(int x, int y, int ch = 0) { return values[index(x, y, ch)]; }
  double at(int x, int y, int ch = 0) const { return values[index(x, y, ch)]; }

  std::size_t node_count() const {
    return static_cast<std::size_t>(width) * height;
  }

  bool same_shape(const ImageGrid& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }

  // Grid spacings of the normalized domain.
  double hx() const { return 1.0 / (width - 1); }
  double hy() const { return 1.0 / (height - 1); }
};

inline void require_same_shape(const ImageGrid& a, const ImageGrid& b,
                               const char* where) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(where) + ": shape mismatch");
}

// Deformations are 2-channel grids: channel 0 holds the x component,
// channel 1 the y component, both in normalized coordinates.
inline ImageGrid identity_deformation(int width, int height) {
  ImageGrid phi(width, height, 2);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      phi.at(x, y, 0) = x * phi.hx();
      phi.at(x, y, 1) = y * phi.hy();
    }
  return phi;
}

// ((1/(MN)) sum_nodes ||u(node)||_p^p)^(1/p), inner norm over channels.
inline double lp_norm(const ImageGrid& u, double p) {
  if (p < 1.0) throw std::invalid_argument("lp_norm: p must be >= 1");
  double acc = 0.0;
  for (double v : u.values) {
    if (!std::isfinite(v))
      throw std::domain_error("lp_norm: non-finite value");
    acc += std::pow(std::abs(v), p);
  }
  return std::pow(acc / static_cast<double>(u.node_count()), 1.0 / p);
}

// Unweighted Euclidean pairing over raw entries; the adjoint convention
// used by every operator in this library.
inline double dot(const ImageGrid& a, const ImageGrid& b) {
  require_same_shape(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i)
    acc += a.values[i] * b.values[i];
  return acc;
}

inline double squared_norm(const ImageGrid& a) {
  double acc = 0.0;
  for (double v : a.values) acc += v * v;
  return acc;
}

// y += alpha * x
inline void axpy(double alpha, const ImageGrid& x, ImageGrid& y) {
  require_same_shape(x, y, "axpy");
  for (std::size_t i = 0; i < x.values.size(); ++i)
    y.values[i] += alpha * x.values[i];
}

inline ImageGrid scaled(const ImageGrid& x, double alpha) {
  ImageGrid r = x;
  for (double& v : r.values) v *= alpha;
  return r;
}

inline ImageGrid difference(const ImageGrid& a, const ImageGrid& b) {
  require_same_shape(a, b, "difference");
  ImageGrid r = a;
  for (std::size_t i = 0; i < r.values.size(); ++i) r.values[i] -= b.values[i];
  return r;
}

inline double max_abs_difference(const ImageGrid& a, const ImageGrid& b) {
  require_same_shape(a, b, "max_abs_difference");
  double m = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i)
    m = std::max(m, std::abs(a.values[i] - b.values[i]));
  return m;
}

}  // namespace metaspline
