#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "metaspline/ipalm.hpp"

namespace metaspline {

// Gaussian bump in normalized coordinates, not normalized to unit mass.
inline ImageGrid synth_gaussian(int width, int height, double amplitude,
                                double cx, double cy, double stddev) {
  if (!(stddev > 0.0))
    throw std::invalid_argument("synth_gaussian: stddev must be > 0");
  ImageGrid u(width, height, 1);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double dx = x * u.hx() - cx;
      const double dy = y * u.hy() - cy;
      u.at(x, y, 0) =
          amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * stddev * stddev));
    }
  return u;
}

enum class ShapeKind { circle, square };

// Shape with a two-pixel linear ramp across the boundary (value 0.5 exactly
// on it). Within the ramp the warp misfit is linear in the deformation, so
// the linearized proximal step stays valid for displacement corrections up
// to the ramp width; a hard 0/1 edge would make that step overshoot.
// circle: size is the radius; square: size is the side.
// A zero size yields the all-zero image.
inline ImageGrid synth_shape(int width, int height, ShapeKind kind, double cx,
                             double cy, double size) {
  if (size < 0.0) throw std::invalid_argument("synth_shape: negative size");
  ImageGrid u(width, height, 1);
  if (size == 0.0) return u;
  const double half = kind == ShapeKind::square ? size / 2.0 : size;
  if (cx - half < 0.0 || cx + half > 1.0 || cy - half < 0.0 || cy + half > 1.0)
    throw std::invalid_argument("synth_shape: shape exceeds the domain");
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double px = x * u.hx() - cx;
      const double py = y * u.hy() - cy;
      double sdf_px;  // signed inside distance in pixel units
      if (kind == ShapeKind::circle) {
        sdf_px = (size - std::sqrt(px * px + py * py)) / u.hx();
      } else {
        const double dx = (size / 2.0 - std::abs(px)) / u.hx();
        const double dy = (size / 2.0 - std::abs(py)) / u.hy();
        sdf_px = std::min(dx, dy);
      }
      u.at(x, y, 0) = std::clamp(0.5 + 0.5 * sdf_px, 0.0, 1.0);
    }
  return u;
}

struct GaussianParams {
  double mass = 0;  // mean intensity
  double cx = 0;
  double cy = 0;  // intensity centroid in normalized coordinates
};

inline GaussianParams extract_gaussian_params(const ImageGrid& u) {
  double total = 0, sx = 0, sy = 0;
  for (int y = 0; y < u.height; ++y)
    for (int x = 0; x < u.width; ++x) {
      double w = 0;
      for (int ch = 0; ch < u.channels; ++ch) w += u.at(x, y, ch);
      total += w;
      sx += w * x * u.hx();
      sy += w * y * u.hy();
    }
  if (!(total > 0.0))
    throw std::invalid_argument("extract_gaussian_params: nonpositive mass");
  GaussianParams p;
  p.mass = total / u.node_count();
  p.cx = sx / total;
  p.cy = sy / total;
  return p;
}

// Natural cubic spline through (times[i], points[i]) in R^d, evaluated at
// eval_times; outside the knot range the end polynomials are extended.
inline std::vector<std::vector<double>> euclidean_cubic_spline(
    const std::vector<double>& times, const std::vector<std::vector<double>>& points,
    const std::vector<double>& eval_times) {
  const int n = static_cast<int>(times.size());
  if (n < 3) throw std::invalid_argument("euclidean_cubic_spline: need >= 3 knots");
  if (points.size() != times.size())
    throw std::invalid_argument("euclidean_cubic_spline: size mismatch");
  const std::size_t dim = points.front().size();
  for (const auto& p : points)
    if (p.size() != dim)
      throw std::invalid_argument("euclidean_cubic_spline: ragged points");
  for (int i = 1; i < n; ++i)
    if (!(times[i] > times[i - 1]))
      throw std::invalid_argument(
          "euclidean_cubic_spline: times must be strictly increasing");

  // Second derivatives per coordinate from the natural tridiagonal system.
  std::vector<std::vector<double>> m(dim, std::vector<double>(n, 0.0));
  std::vector<double> lower(n), diag(n), upper(n), rhs(n), scratch(n);
  for (std::size_t d = 0; d < dim; ++d) {
    lower[0] = 0;
    diag[0] = 1;
    upper[0] = 0;
    rhs[0] = 0;
    for (int i = 1; i < n - 1; ++i) {
      const double hl = times[i] - times[i - 1];
      const double hr = times[i + 1] - times[i];
      lower[i] = hl / 6.0;
      diag[i] = (hl + hr) / 3.0;
      upper[i] = hr / 6.0;
      rhs[i] = (points[i + 1][d] - points[i][d]) / hr -
               (points[i][d] - points[i - 1][d]) / hl;
    }
    lower[n - 1] = 0;
    diag[n - 1] = 1;
    upper[n - 1] = 0;
    rhs[n - 1] = 0;
    m[d] = rhs;
    detail::solve_tridiagonal(lower, diag, upper, m[d].data(), n, 1, scratch);
  }

  std::vector<std::vector<double>> out;
  out.reserve(eval_times.size());
  for (double t : eval_times) {
    int i = 0;
    while (i < n - 2 && t > times[i + 1]) ++i;
    const double h = times[i + 1] - times[i];
    const double a = (times[i + 1] - t) / h;
    const double b = (t - times[i]) / h;
    std::vector<double> value(dim);
    for (std::size_t d = 0; d < dim; ++d)
      value[d] = a * points[i][d] + b * points[i + 1][d] +
                 ((a * a * a - a) * m[d][i] + (b * b * b - b) * m[d][i + 1]) *
                     (h * h) / 6.0;
    out.push_back(std::move(value));
  }
  return out;
}

// Number of samples above the threshold along the central row.
inline int width_profile(const ImageGrid& u, double threshold) {
  const int y = u.height / 2;
  int count = 0;
  for (int x = 0; x < u.width; ++x)
    if (u.at(x, y, 0) > threshold) ++count;
  return count;
}

namespace detail {

inline void write_csv_line(std::ofstream& out, const char* buf) { out << buf; }

}  // namespace detail

inline void write_iteration_csv(const std::vector<IterationRecord>& records,
                                const std::string& path,
                                const std::string& comment = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  if (!comment.empty()) out << "# " << comment << "\n";
  out << "iter,level,E_total,E_WD,E_WA,E_Ds,E_Dg,E_znorm,min_det\n";
  char buf[320];
  for (const IterationRecord& r : records) {
    std::snprintf(buf, sizeof(buf),
                  "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.iter,
                  r.level, r.e_total, r.e_wd, r.e_wa, r.e_ds, r.e_dg, r.e_znorm,
                  r.min_det);
    detail::write_csv_line(out, buf);
  }
}

inline void write_lipschitz_csv(const std::vector<IterationRecord>& records,
                                const std::string& path,
                                const std::string& comment = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  if (!comment.empty()) out << "# " << comment << "\n";
  out << "iter,level,L_phi,L_z,L_u\n";
  char buf[200];
  for (const IterationRecord& r : records) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%.17g\n", r.iter, r.level,
                  r.l_phi, r.l_z, r.l_u);
    detail::write_csv_line(out, buf);
  }
}

}  // namespace metaspline
