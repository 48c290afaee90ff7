#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "metaspline/image.hpp"

namespace metaspline {

// Centered cubic B-spline; support (-2, 2), C^2, partition of unity on the
// integer lattice.
inline double bspline3(double t) {
  t = std::abs(t);
  if (t < 1.0) return 2.0 / 3.0 - t * t + 0.5 * t * t * t;
  if (t < 2.0) {
    const double w = 2.0 - t;
    return w * w * w / 6.0;
  }
  return 0.0;
}

inline double bspline3_deriv(double t) {
  const double a = std::abs(t);
  double d;
  if (a < 1.0)
    d = -2.0 * a + 1.5 * a * a;
  else if (a < 2.0) {
    const double w = 2.0 - a;
    d = -0.5 * w * w;
  } else
    return 0.0;
  return t < 0.0 ? -d : d;
}

namespace detail {

// Whole-sample mirror fold: -1 -> 1, n -> n-2.
inline int mirror_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0)
      i = -i;
    else
      i = 2 * (n - 1) - i;
  }
  return i;
}

// Weights of the four coefficients around a sample with fractional offset
// f in [0, 1): indices base-1..base+2 where base = floor of the sample.
inline void sample_weights(double f, std::array<double, 4>& w) {
  const double g = 1.0 - f;
  w[0] = g * g * g / 6.0;
  w[1] = 2.0 / 3.0 - f * f + 0.5 * f * f * f;
  w[2] = 2.0 / 3.0 - g * g + 0.5 * g * g * g;
  w[3] = f * f * f / 6.0;
}

// d/df of the weights above.
inline void sample_weight_derivs(double f, std::array<double, 4>& d) {
  const double g = 1.0 - f;
  d[0] = -0.5 * g * g;
  d[1] = -2.0 * f + 1.5 * f * f;
  d[2] = 2.0 * g - 1.5 * g * g;
  d[3] = 0.5 * f * f;
}

// Thomas elimination for a tridiagonal system; rhs is overwritten with the
// solution. lower[0] and upper[n-1] are unused.
inline void solve_tridiagonal(const std::vector<double>& lower,
                              const std::vector<double>& diag,
                              const std::vector<double>& upper,
                              double* rhs, int n, int stride,
                              std::vector<double>& scratch) {
  scratch.resize(n);
  double piv = diag[0];
  scratch[0] = upper[0] / piv;
  rhs[0] /= piv;
  for (int i = 1; i < n; ++i) {
    piv = diag[i] - lower[i] * scratch[i - 1];
    if (i < n - 1) scratch[i] = upper[i] / piv;
    rhs[i * stride] = (rhs[i * stride] - lower[i] * rhs[(i - 1) * stride]) / piv;
  }
  for (int i = n - 2; i >= 0; --i)
    rhs[i * stride] -= scratch[i] * rhs[(i + 1) * stride];
}

// Interpolation system along one axis under the mirror boundary: interior
// rows (1/6, 2/3, 1/6); the folded end rows become (2/3, 1/3) and (1/3, 2/3).
inline void axis_bands(int n, bool transpose, std::vector<double>& lower,
                       std::vector<double>& diag, std::vector<double>& upper) {
  lower.assign(n, 1.0 / 6.0);
  diag.assign(n, 2.0 / 3.0);
  upper.assign(n, 1.0 / 6.0);
  if (!transpose) {
    upper[0] = 1.0 / 3.0;
    lower[n - 1] = 1.0 / 3.0;
  } else {
    lower[1] = 1.0 / 3.0;
    upper[n - 2] = 1.0 / 3.0;
  }
}

inline void filter_axes(ImageGrid& u, bool transpose) {
  std::vector<double> lower, diag, upper, scratch;
  const int c = u.channels;
  axis_bands(u.width, transpose, lower, diag, upper);
  for (int y = 0; y < u.height; ++y)
    for (int ch = 0; ch < c; ++ch)
      solve_tridiagonal(lower, diag, upper, &u.values[u.index(0, y, ch)],
                        u.width, c, scratch);
  axis_bands(u.height, transpose, lower, diag, upper);
  for (int x = 0; x < u.width; ++x)
    for (int ch = 0; ch < c; ++ch)
      solve_tridiagonal(lower, diag, upper, &u.values[u.index(x, 0, ch)],
                        u.height, u.width * c, scratch);
}

}  // namespace detail

// Coefficients c with sum_i c_i B(x - i) interpolating u at the nodes,
// mirror-symmetric continuation outside the grid.
inline ImageGrid prefilter(const ImageGrid& u) {
  ImageGrid c = u;
  detail::filter_axes(c, /*transpose=*/false);
  return c;
}

// Solves with the transpose of the interpolation system; second leg of the
// warp adjoint.
inline ImageGrid prefilter_transpose(const ImageGrid& u) {
  ImageGrid c = u;
  detail::filter_axes(c, /*transpose=*/true);
  return c;
}

namespace detail {

struct SampleStencil {
  int ix[4];
  int iy[4];
  std::array<double, 4> wx;
  std::array<double, 4> wy;
  double fx, fy;
};

// phi components are clamped to [0, 1] before lookup; kernel arguments are
// taken in grid-index units.
inline SampleStencil stencil_at(const ImageGrid& coeffs, double px, double py) {
  SampleStencil s;
  px = std::min(std::max(px, 0.0), 1.0) * (coeffs.width - 1);
  py = std::min(std::max(py, 0.0), 1.0) * (coeffs.height - 1);
  int bx = static_cast<int>(std::floor(px));
  int by = static_cast<int>(std::floor(py));
  if (bx > coeffs.width - 2) bx = coeffs.width - 2;
  if (by > coeffs.height - 2) by = coeffs.height - 2;
  s.fx = px - bx;
  s.fy = py - by;
  sample_weights(s.fx, s.wx);
  sample_weights(s.fy, s.wy);
  for (int m = 0; m < 4; ++m) {
    s.ix[m] = mirror_index(bx - 1 + m, coeffs.width);
    s.iy[m] = mirror_index(by - 1 + m, coeffs.height);
  }
  return s;
}

}  // namespace detail

// Evaluates the spline defined by prefiltered coefficients at the points of
// phi. Use this form when the same field is sampled under many deformations.
inline ImageGrid warp_coefficients(const ImageGrid& coeffs,
                                   const ImageGrid& phi) {
  if (phi.channels != 2)
    throw std::invalid_argument("warp: deformation must have 2 channels");
  if (phi.width != coeffs.width || phi.height != coeffs.height)
    throw std::invalid_argument("warp: grid size mismatch");
  ImageGrid out(coeffs.width, coeffs.height, coeffs.channels);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      const auto s =
          detail::stencil_at(coeffs, phi.at(x, y, 0), phi.at(x, y, 1));
      for (int ch = 0; ch < out.channels; ++ch) {
        double acc = 0.0;
        for (int l = 0; l < 4; ++l) {
          double row = 0.0;
          for (int m = 0; m < 4; ++m)
            row += s.wx[m] * coeffs.at(s.ix[m], s.iy[l], ch);
          acc += s.wy[l] * row;
        }
        out.at(x, y, ch) = acc;
      }
    }
  return out;
}

// T[u, phi]: cubic interpolation of u at the deformed positions.
inline ImageGrid warp(const ImageGrid& u, const ImageGrid& phi) {
  return warp_coefficients(prefilter(u), phi);
}

// Adjoint of u -> warp(u, phi) under the unweighted entry pairing: splat the
// stencil weights, then solve the transposed interpolation system.
inline ImageGrid warp_adjoint(const ImageGrid& g, const ImageGrid& phi) {
  if (phi.channels != 2)
    throw std::invalid_argument("warp_adjoint: deformation must have 2 channels");
  if (phi.width != g.width || phi.height != g.height)
    throw std::invalid_argument("warp_adjoint: grid size mismatch");
  ImageGrid splat(g.width, g.height, g.channels);
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      const auto s = detail::stencil_at(g, phi.at(x, y, 0), phi.at(x, y, 1));
      for (int ch = 0; ch < g.channels; ++ch) {
        const double v = g.at(x, y, ch);
        for (int l = 0; l < 4; ++l)
          for (int m = 0; m < 4; ++m)
            splat.at(s.ix[m], s.iy[l], ch) += s.wx[m] * s.wy[l] * v;
      }
    }
  return prefilter_transpose(splat);
}

// Spatial derivative of T[u, phi] with respect to the evaluation point, in
// normalized coordinates. Output has 2*channels(u) channels ordered
// (du0/dx, du0/dy, du1/dx, ...). Where a phi component is clamped the
// derivative in that direction is zero.
inline ImageGrid warp_point_derivative_coefficients(const ImageGrid& coeffs,
                                                    const ImageGrid& phi) {
  if (phi.channels != 2)
    throw std::invalid_argument("warp_point_derivative: deformation must have 2 channels");
  if (phi.width != coeffs.width || phi.height != coeffs.height)
    throw std::invalid_argument("warp_point_derivative: grid size mismatch");
  ImageGrid out(coeffs.width, coeffs.height, 2 * coeffs.channels);
  const double sx = coeffs.width - 1;
  const double sy = coeffs.height - 1;
  std::array<double, 4> dwx, dwy;
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      const double px = phi.at(x, y, 0);
      const double py = phi.at(x, y, 1);
      const auto s = detail::stencil_at(coeffs, px, py);
      detail::sample_weight_derivs(s.fx, dwx);
      detail::sample_weight_derivs(s.fy, dwy);
      const bool clamped_x = px < 0.0 || px > 1.0;
      const bool clamped_y = py < 0.0 || py > 1.0;
      for (int ch = 0; ch < coeffs.channels; ++ch) {
        double gx = 0.0, gy = 0.0;
        for (int l = 0; l < 4; ++l) {
          double row = 0.0, drow = 0.0;
          for (int m = 0; m < 4; ++m) {
            const double cij = coeffs.at(s.ix[m], s.iy[l], ch);
            row += s.wx[m] * cij;
            drow += dwx[m] * cij;
          }
          gx += s.wy[l] * drow;
          gy += dwy[l] * row;
        }
        out.at(x, y, 2 * ch) = clamped_x ? 0.0 : gx * sx;
        out.at(x, y, 2 * ch + 1) = clamped_y ? 0.0 : gy * sy;
      }
    }
  return out;
}

inline ImageGrid warp_point_derivative(const ImageGrid& u,
                                       const ImageGrid& phi) {
  return warp_point_derivative_coefficients(prefilter(u), phi);
}

}  // namespace metaspline
