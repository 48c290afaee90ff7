#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "metaspline/image.hpp"

namespace metaspline {

// Color-wheel rendering of a two-channel vector field: hue encodes the
// direction, brightness the magnitude saturating at the given scale.
inline ImageGrid render_flow(const ImageGrid& v, double scale) {
  if (v.channels != 2)
    throw std::invalid_argument("render_flow: two-channel field expected");
  if (!(scale > 0.0)) throw std::invalid_argument("render_flow: scale must be > 0");
  ImageGrid out(v.width, v.height, 3);
  constexpr double two_pi = 6.283185307179586476925286766559;
  for (int y = 0; y < v.height; ++y)
    for (int x = 0; x < v.width; ++x) {
      const double vx = v.at(x, y, 0);
      const double vy = v.at(x, y, 1);
      const double mag = std::sqrt(vx * vx + vy * vy);
      const double value = std::min(mag / scale, 1.0);
      double hue = std::atan2(vy, vx) / two_pi;  // [-1/2, 1/2]
      if (hue < 0.0) hue += 1.0;
      const double h6 = std::min(hue * 6.0, 6.0 - 1e-12);
      const int sector = static_cast<int>(h6);
      const double f = h6 - sector;
      const double p = 0.0;  // saturation is fixed at 1
      const double q = value * (1.0 - f);
      const double t = value * f;
      double r, g, b;
      switch (sector) {
        case 0: r = value; g = t; b = p; break;
        case 1: r = q; g = value; b = p; break;
        case 2: r = p; g = value; b = t; break;
        case 3: r = p; g = q; b = value; break;
        case 4: r = t; g = p; b = value; break;
        default: r = value; g = p; b = q; break;
      }
      out.at(x, y, 0) = r;
      out.at(x, y, 1) = g;
      out.at(x, y, 2) = b;
    }
  return out;
}

// Affine rescaling of a scalar field to [0, 1]; a constant field maps to 0.
inline ImageGrid render_scalar(const ImageGrid& u) {
  if (u.channels != 1)
    throw std::invalid_argument("render_scalar: single channel expected");
  double lo = u.values.front(), hi = lo;
  for (double v : u.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  ImageGrid out(u.width, u.height, 1);
  if (hi > lo)
    for (std::size_t i = 0; i < u.values.size(); ++i)
      out.values[i] = (u.values[i] - lo) / (hi - lo);
  return out;
}

// Per-node Euclidean magnitude across channels, for scalar renderings of
// multichannel diagnostics.
inline ImageGrid channel_magnitude(const ImageGrid& u) {
  ImageGrid out(u.width, u.height, 1);
  for (int y = 0; y < u.height; ++y)
    for (int x = 0; x < u.width; ++x) {
      double acc = 0.0;
      for (int ch = 0; ch < u.channels; ++ch) {
        const double v = u.at(x, y, ch);
        acc += v * v;
      }
      out.at(x, y, 0) = std::sqrt(acc);
    }
  return out;
}

}  // namespace metaspline
