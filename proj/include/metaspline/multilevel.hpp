#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "metaspline/ipalm.hpp"

namespace metaspline {

// Halves each dimension by 2x2 box averaging; odd trailing samples are
// mirrored (index n folds to n - 2).
inline ImageGrid restrict_image(const ImageGrid& u) {
  if (u.width < 6 || u.height < 6)
    throw std::invalid_argument("restrict_image: dimensions below 6");
  const int w = (u.width + 1) / 2;
  const int h = (u.height + 1) / 2;
  ImageGrid out(w, h, u.channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < u.channels; ++ch) {
        double acc = 0.0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            acc += u.at(detail::mirror_index(2 * x + dx, u.width),
                        detail::mirror_index(2 * y + dy, u.height), ch);
        out.at(x, y, ch) = acc / 4.0;
      }
  return out;
}

// Bilinear interpolation in normalized coordinates; exact on the shared
// nodes of a nested pair and on any grid function linear in (x, y).
inline ImageGrid prolong_image(const ImageGrid& u, int target_width,
                               int target_height) {
  if (target_width < u.width || target_height < u.height)
    throw std::invalid_argument("prolong_image: target smaller than source");
  ImageGrid out(target_width, target_height, u.channels);
  for (int y = 0; y < target_height; ++y) {
    const double sy = y * (u.height - 1.0) / (target_height - 1.0);
    const int y0 = std::min(static_cast<int>(sy), u.height - 2);
    const double fy = sy - y0;
    for (int x = 0; x < target_width; ++x) {
      const double sx = x * (u.width - 1.0) / (target_width - 1.0);
      const int x0 = std::min(static_cast<int>(sx), u.width - 2);
      const double fx = sx - x0;
      for (int ch = 0; ch < u.channels; ++ch) {
        const double a = u.at(x0, y0, ch) * (1 - fx) + u.at(x0 + 1, y0, ch) * fx;
        const double b =
            u.at(x0, y0 + 1, ch) * (1 - fx) + u.at(x0 + 1, y0 + 1, ch) * fx;
        out.at(x, y, ch) = a * (1 - fy) + b * fy;
      }
    }
  }
  return out;
}

// Deformations are prolonged through their displacement so that identity
// maps to identity and boundary nodes stay on the boundary.
inline ImageGrid prolong_deformation(const ImageGrid& phi, int target_width,
                                     int target_height) {
  if (phi.channels != 2)
    throw std::invalid_argument("prolong_deformation: two channels expected");
  const ImageGrid d =
      difference(phi, identity_deformation(phi.width, phi.height));
  ImageGrid out = prolong_image(d, target_width, target_height);
  axpy(1.0, identity_deformation(target_width, target_height), out);
  return out;
}

inline SplineState prolong_state(const SplineState& s, int target_width,
                                 int target_height) {
  SplineState out;
  for (const ImageGrid& u : s.images)
    out.images.push_back(prolong_image(u, target_width, target_height));
  for (const ImageGrid& z : s.slacks)
    out.slacks.push_back(prolong_image(z, target_width, target_height));
  for (const ImageGrid& p : s.deformations)
    out.deformations.push_back(prolong_deformation(p, target_width, target_height));
  return out;
}

// Identity deformations, images piecewise linear in time between the key
// indices (held constant outside them), slacks as scaled image differences.
inline SplineState initial_state(const KeyFrameSet& keys, const SolverConfig& cfg) {
  validate_keyframes(keys, cfg);
  const ImageGrid& first = keys.front().image;
  SplineState s;
  s.images.resize(cfg.K + 1);
  for (int k = 0; k <= cfg.K; ++k) {
    std::size_t seg = 0;
    while (seg + 1 < keys.size() && keys[seg + 1].index < k) ++seg;
    if (k <= keys.front().index) {
      s.images[k] = keys.front().image;
    } else if (k >= keys.back().index) {
      s.images[k] = keys.back().image;
    } else {
      const KeyFrame& a = keys[seg];
      const KeyFrame& b = keys[seg + 1];
      const double t = double(k - a.index) / double(b.index - a.index);
      ImageGrid u = scaled(a.image, 1.0 - t);
      axpy(t, b.image, u);
      s.images[k] = std::move(u);
    }
  }
  for (int k = 1; k <= cfg.K; ++k) {
    ImageGrid z = difference(s.images[k], s.images[k - 1]);
    for (double& v : z.values) v *= cfg.K;
    s.slacks.push_back(std::move(z));
  }
  const ImageGrid id = identity_deformation(first.width, first.height);
  s.deformations.assign(cfg.K, id);
  return s;
}

// Copies each key image into its slot unchanged, bit for bit.
inline void impose_keyframes(SplineState& s, const KeyFrameSet& keys) {
  for (const KeyFrame& kf : keys) s.images[kf.index] = kf.image;
}

// Coarse-to-fine solve: the key frames are restricted level by level, the
// coarsest problem starts from the canonical initialization, and each
// solution is prolonged to seed the next finer level. Key frames are
// re-imposed exactly after initialization and after every prolongation.
// Level 0 is the finest; with cfg.levels == 1 this is a direct solve.
inline SplineState solve_multilevel(
    const KeyFrameSet& keys, const SolverConfig& cfg, SolveReport* report = nullptr,
    const std::function<void(int, const SplineState&)>& on_level = nullptr) {
  cfg.validate();
  validate_keyframes(keys, cfg);
  std::vector<KeyFrameSet> pyramid(cfg.levels);
  pyramid[0] = keys;
  for (int l = 1; l < cfg.levels; ++l) {
    pyramid[l] = pyramid[l - 1];
    for (KeyFrame& kf : pyramid[l]) {
      if (kf.image.width < 6 || kf.image.height < 6)
        throw std::invalid_argument(
            "solve_multilevel: level " + std::to_string(l) +
            " would shrink below the minimum grid");
      kf.image = restrict_image(kf.image);
    }
  }
  SplineState s = initial_state(pyramid[cfg.levels - 1], cfg);
  SolveReport acc;
  for (int l = cfg.levels - 1; l >= 0; --l) {
    impose_keyframes(s, pyramid[l]);
    SolveReport r = ipalm_solve(s, cfg, l);
    acc.det_warnings += r.det_warnings;
    acc.iterations.insert(acc.iterations.end(), r.iterations.begin(),
                          r.iterations.end());
    if (on_level) on_level(l, s);
    if (l > 0) {
      const ImageGrid& target = pyramid[l - 1].front().image;
      s = prolong_state(s, target.width, target.height);
    }
  }
  if (report) *report = std::move(acc);
  return s;
}

}  // namespace metaspline
