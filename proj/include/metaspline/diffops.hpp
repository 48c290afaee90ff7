#pragma once

#include <cmath>

#include "metaspline/image.hpp"

namespace metaspline {

// Forward-difference Jacobian of a 2-channel field, scaled by the grid
// spacing. Output channels (df0/dx, df0/dy, df1/dx, df1/dy); the missing
// last difference along each axis is zero.
inline ImageGrid jacobian(const ImageGrid& f) {
  if (f.channels != 2)
    throw std::invalid_argument("jacobian: field must have 2 channels");
  ImageGrid J(f.width, f.height, 4);
  const double ix = f.width - 1;
  const double iy = f.height - 1;
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x)
      for (int ch = 0; ch < 2; ++ch) {
        const double v = f.at(x, y, ch);
        J.at(x, y, 2 * ch) =
            x + 1 < f.width ? (f.at(x + 1, y, ch) - v) * ix : 0.0;
        J.at(x, y, 2 * ch + 1) =
            y + 1 < f.height ? (f.at(x, y + 1, ch) - v) * iy : 0.0;
      }
  return J;
}

// Exact adjoint of jacobian under the unweighted entry pairing.
inline ImageGrid jacobian_adjoint(const ImageGrid& g) {
  if (g.channels != 4)
    throw std::invalid_argument("jacobian_adjoint: field must have 4 channels");
  ImageGrid out(g.width, g.height, 2);
  const double ix = g.width - 1;
  const double iy = g.height - 1;
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x)
      for (int ch = 0; ch < 2; ++ch) {
        double acc = 0.0;
        if (x >= 1) acc += g.at(x - 1, y, 2 * ch) * ix;
        if (x <= g.width - 2) acc -= g.at(x, y, 2 * ch) * ix;
        if (y >= 1) acc += g.at(x, y - 1, 2 * ch + 1) * iy;
        if (y <= g.height - 2) acc -= g.at(x, y, 2 * ch + 1) * iy;
        out.at(x, y, ch) = acc;
      }
  return out;
}

// Sobel gradient of every channel, mirror boundary, normalized by 1/(8h).
// Output channels (du0/dx, du0/dy, du1/dx, ...).
inline ImageGrid sobel_gradient(const ImageGrid& u) {
  ImageGrid out(u.width, u.height, 2 * u.channels);
  const double nx = (u.width - 1) / 8.0;
  const double ny = (u.height - 1) / 8.0;
  auto fold = [](int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * (n - 1) - i;
    return i;
  };
  static const double smooth[3] = {1.0, 2.0, 1.0};
  for (int y = 0; y < u.height; ++y)
    for (int x = 0; x < u.width; ++x) {
      const int xm = fold(x - 1, u.width), xp = fold(x + 1, u.width);
      const int ym = fold(y - 1, u.height), yp = fold(y + 1, u.height);
      const int ys[3] = {ym, y, yp};
      const int xs[3] = {xm, x, xp};
      for (int ch = 0; ch < u.channels; ++ch) {
        double gx = 0.0, gy = 0.0;
        for (int t = 0; t < 3; ++t) {
          gx += smooth[t] * (u.at(xp, ys[t], ch) - u.at(xm, ys[t], ch));
          gy += smooth[t] * (u.at(xs[t], yp, ch) - u.at(xs[t], ym, ch));
        }
        out.at(x, y, 2 * ch) = gx * nx;
        out.at(x, y, 2 * ch + 1) = gy * ny;
      }
    }
  return out;
}

// Pointwise determinant of a 4-channel Jacobian field.
inline ImageGrid det_jacobian(const ImageGrid& J) {
  if (J.channels != 4)
    throw std::invalid_argument("det_jacobian: field must have 4 channels");
  ImageGrid out(J.width, J.height, 1);
  for (int y = 0; y < J.height; ++y)
    for (int x = 0; x < J.width; ++x)
      out.at(x, y) = J.at(x, y, 0) * J.at(x, y, 3) -
                     J.at(x, y, 1) * J.at(x, y, 2);
  return out;
}

// Jacobian of a deformation evaluated through its displacement, so the
// identity map gets exactly I at every node including the Neumann rows.
inline ImageGrid deformation_jacobian(const ImageGrid& phi) {
  ImageGrid d = difference(phi, identity_deformation(phi.width, phi.height));
  ImageGrid J = jacobian(d);
  for (int y = 0; y < J.height; ++y)
    for (int x = 0; x < J.width; ++x) {
      J.at(x, y, 0) += 1.0;
      J.at(x, y, 3) += 1.0;
    }
  return J;
}

inline double min_determinant(const ImageGrid& phi) {
  const ImageGrid det = det_jacobian(deformation_jacobian(phi));
  double m = det.values[0];
  for (double v : det.values) m = std::min(m, v);
  return m;
}

// |sym(B)|_F^2 per node for a 4-channel field; equals W_A(B), and W_D of a
// deformation when B is the displacement Jacobian.
inline double symmetric_square_sum(const ImageGrid& J) {
  if (J.channels != 4)
    throw std::invalid_argument("symmetric_square_sum: field must have 4 channels");
  double acc = 0.0;
  for (int y = 0; y < J.height; ++y)
    for (int x = 0; x < J.width; ++x) {
      const double off = 0.5 * (J.at(x, y, 1) + J.at(x, y, 2));
      acc += J.at(x, y, 0) * J.at(x, y, 0) + 2.0 * off * off +
             J.at(x, y, 3) * J.at(x, y, 3);
    }
  return acc;
}

// Gradient of symmetric_square_sum with respect to the field, 2 * sym(B).
inline ImageGrid symmetric_square_grad(const ImageGrid& J) {
  ImageGrid g(J.width, J.height, 4);
  for (int y = 0; y < J.height; ++y)
    for (int x = 0; x < J.width; ++x) {
      const double off = J.at(x, y, 1) + J.at(x, y, 2);
      g.at(x, y, 0) = 2.0 * J.at(x, y, 0);
      g.at(x, y, 1) = off;
      g.at(x, y, 2) = off;
      g.at(x, y, 3) = 2.0 * J.at(x, y, 3);
    }
  return g;
}

}  // namespace metaspline
