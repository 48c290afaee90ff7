#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "metaspline/bspline.hpp"
#include "metaspline/diffops.hpp"
#include "metaspline/image.hpp"

namespace metaspline {

enum class Mode { spline, geodesic };
enum class Boundary { natural, periodic, hermite };

struct SolverConfig {
  int K = 8;
  double delta = 5e-3;
  double sigma = 1.0;
  double theta = 5e-4;
  Mode mode = Mode::spline;
  Boundary boundary = Boundary::natural;
  std::vector<int> fixed_indices;  // sorted, within 0..K
  int levels = 1;
  int iters = 100;
  double beta = 0.7071067811865476;  // 1/sqrt(2)
  double det_floor = 1e-6;

  bool is_fixed(int k) const {
    for (int i : fixed_indices)
      if (i == k) return true;
    return false;
  }

  void validate() const {
    if (K < 2) throw std::invalid_argument("SolverConfig: K must be >= 2");
    if (delta <= 0 || sigma <= 0 || theta <= 0)
      throw std::invalid_argument("SolverConfig: weights must be positive");
    if (beta < 0 || beta >= 1)
      throw std::invalid_argument("SolverConfig: beta must lie in [0,1)");
    if (levels < 1 || iters < 1)
      throw std::invalid_argument("SolverConfig: levels and iters must be >= 1");
    if (fixed_indices.size() < 2)
      throw std::invalid_argument("SolverConfig: at least 2 fixed indices");
    for (std::size_t i = 0; i < fixed_indices.size(); ++i) {
      if (fixed_indices[i] < 0 || fixed_indices[i] > K)
        throw std::invalid_argument("SolverConfig: fixed index out of range");
      if (i > 0 && fixed_indices[i] <= fixed_indices[i - 1])
        throw std::invalid_argument("SolverConfig: fixed indices must be sorted");
    }
    if (boundary == Boundary::hermite &&
        (!is_fixed(0) || !is_fixed(K)))
      throw std::invalid_argument("SolverConfig: hermite requires 0 and K fixed");
  }
};

// Path variables of one interpolation problem: images u_0..u_K, slack
// derivatives zbar_1..zbar_K and deformations phi_1..phi_K. Deformation k
// carries material from frame k-1 to frame k, u_k(phi_k(x)) ~ u_{k-1}(x).
struct SplineState {
  std::vector<ImageGrid> images;        // length K+1
  std::vector<ImageGrid> slacks;        // length K, slacks[k-1] = zbar_k
  std::vector<ImageGrid> deformations;  // length K, deformations[k-1] = phi_k

  const ImageGrid& u(int k) const { return images[k]; }
  ImageGrid& u(int k) { return images[k]; }
  const ImageGrid& z(int k) const { return slacks[k - 1]; }
  ImageGrid& z(int k) { return slacks[k - 1]; }
  const ImageGrid& phi(int k) const { return deformations[k - 1]; }
  ImageGrid& phi(int k) { return deformations[k - 1]; }

  int frame_count() const { return static_cast<int>(images.size()) - 1; }

  void validate(const SolverConfig& cfg) const {
    if (frame_count() != cfg.K || slacks.size() != static_cast<std::size_t>(cfg.K) ||
        deformations.size() != static_cast<std::size_t>(cfg.K))
      throw std::invalid_argument("SplineState: wrong path length");
    for (const auto& v : images) require_same_shape(v, images[0], "SplineState images");
    for (const auto& v : slacks) require_same_shape(v, images[0], "SplineState slacks");
    for (const auto& v : deformations) {
      if (v.channels != 2)
        throw std::invalid_argument("SplineState: deformations need 2 channels");
      if (v.width != images[0].width || v.height != images[0].height)
        throw std::invalid_argument("SplineState: deformation size mismatch");
    }
  }
};

struct KeyFrame {
  int index;
  ImageGrid image;
};
using KeyFrameSet = std::vector<KeyFrame>;

inline void validate_keyframes(const KeyFrameSet& keys, const SolverConfig& cfg) {
  if (keys.size() < 2)
    throw std::invalid_argument("KeyFrameSet: need at least 2 key frames");
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (keys[i].index < 0 || keys[i].index > cfg.K)
      throw std::invalid_argument("KeyFrameSet: index out of range");
    if (i > 0 && keys[i].index <= keys[i - 1].index)
      throw std::invalid_argument("KeyFrameSet: indices must be strictly increasing");
    require_same_shape(keys[i].image, keys[0].image, "KeyFrameSet");
  }
}

// ---------------------------------------------------------------------------
// Path quantities

inline ImageGrid discrete_velocity(const ImageGrid& phi, int K) {
  ImageGrid v = difference(phi, identity_deformation(phi.width, phi.height));
  for (double& x : v.values) x *= K;
  return v;
}

// a_k = K^2 (T[phi_{k+1} - id, phi_k] - (phi_k - id)); the successor's
// displacement pulled back along phi_k, minus the own displacement.
inline ImageGrid discrete_acceleration(const ImageGrid& phi_k,
                                       const ImageGrid& phi_k1, int K) {
  require_same_shape(phi_k, phi_k1, "discrete_acceleration");
  const ImageGrid id = identity_deformation(phi_k.width, phi_k.height);
  ImageGrid a = warp(difference(phi_k1, id), phi_k);
  axpy(-1.0, phi_k, a);
  axpy(1.0, id, a);
  for (double& x : a.values) x *= static_cast<double>(K) * K;
  return a;
}

// zhat_k = K (u_k o phi_k - u_{k-1})
inline ImageGrid material_derivative(const ImageGrid& u_km1, const ImageGrid& u_k,
                                     const ImageGrid& phi_k, int K) {
  require_same_shape(u_km1, u_k, "material_derivative");
  ImageGrid z = warp(u_k, phi_k);
  axpy(-1.0, u_km1, z);
  for (double& x : z.values) x *= K;
  return z;
}

// what_k = K^2 (u_{k+1} o phi_{k+1} o phi_k - 2 u_k o phi_k + u_{k-1})
inline ImageGrid second_material_derivative(const ImageGrid& u_km1,
                                            const ImageGrid& u_k,
                                            const ImageGrid& u_k1,
                                            const ImageGrid& phi_k,
                                            const ImageGrid& phi_k1, int K) {
  ImageGrid w = warp(warp(u_k1, phi_k1), phi_k);
  axpy(-2.0, warp(u_k, phi_k), w);
  axpy(1.0, u_km1, w);
  for (double& x : w.values) x *= static_cast<double>(K) * K;
  return w;
}

inline double elastic_density(double a11, double a12, double a21, double a22) {
  const double off = 0.5 * (a12 + a21);
  return (a11 - 1.0) * (a11 - 1.0) + 2.0 * off * off + (a22 - 1.0) * (a22 - 1.0);
}

inline double accel_density(double a11, double a12, double a21, double a22) {
  const double off = 0.5 * (a12 + a21);
  return a11 * a11 + 2.0 * off * off + a22 * a22;
}

namespace detail {

// (1/(2c)) sum_j ||pred^j - target^j||^2_{L2_MN}
inline double half_mean_square_misfit(const ImageGrid& pred,
                                      const ImageGrid& target) {
  require_same_shape(pred, target, "mismatch term");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const double d = pred.values[i] - target.values[i];
    acc += d * d;
  }
  return acc / (2.0 * pred.channels * pred.node_count());
}

}  // namespace detail

// D^s: (1/(2c)) sum_j ||T[zbar_{k+1}^j, phi_k] - zbar_k^j||^2
inline double slack_transport_mismatch(const ImageGrid& z_k, const ImageGrid& z_k1,
                                       const ImageGrid& phi_k) {
  return detail::half_mean_square_misfit(warp(z_k1, phi_k), z_k);
}

// D^g: (1/(2c)) sum_j ||K (T[u_k^j, phi_k] - u_{k-1}^j) - zbar_k^j||^2
inline double intensity_mismatch(const ImageGrid& u_km1, const ImageGrid& u_k,
                                 const ImageGrid& z_k, const ImageGrid& phi_k,
                                 int K) {
  return detail::half_mean_square_misfit(material_derivative(u_km1, u_k, phi_k, K),
                                         z_k);
}

// The weighted summands of the fully discrete energy, indexed by time step.
// All entries carry their sigma/delta/theta/K prefactors so that
// total == sum of every stored entry.
struct EnergyBreakdown {
  std::vector<double> elastic_reg;      // k = 1..K: sigma K ||W_D(grad phi_k)||
  std::vector<double> accel_reg;        // (1/K) ||W_A(grad a_k)||
  std::vector<double> slack_transport;  // (K/delta) D^s_k
  std::vector<double> slack_norm;       // k = 1..K: sigma/(delta K) ||zbar_k||^2
  std::vector<double> intensity_misfit; // k = 1..K: (1/(theta K)) D^g_k
  double total = 0.0;

  double sum_elastic() const { return sum(elastic_reg); }
  double sum_accel() const { return sum(accel_reg); }
  double sum_transport() const { return sum(slack_transport); }
  double sum_slack_norm() const { return sum(slack_norm); }
  double sum_misfit() const { return sum(intensity_misfit); }

  static double sum(const std::vector<double>& v) {
    double a = 0.0;
    for (double x : v) a += x;
    return a;
  }
};

namespace detail {

// Number of acceleration/transport terms: K-1 for open paths, K when the
// path wraps around (K+1 identified with 1).
inline int spline_term_count(const SolverConfig& cfg) {
  return cfg.boundary == Boundary::periodic ? cfg.K : cfg.K - 1;
}

inline int wrap_frame(int k, const SolverConfig& cfg) {
  return k == cfg.K + 1 ? 1 : k;
}

}  // namespace detail

inline EnergyBreakdown total_energy(const SplineState& s, const SolverConfig& cfg) {
  s.validate(cfg);
  const int K = cfg.K;
  const double mn = static_cast<double>(s.images[0].node_count());
  EnergyBreakdown b;
  b.elastic_reg.assign(K + 1, 0.0);
  b.accel_reg.assign(K + 1, 0.0);
  b.slack_transport.assign(K + 1, 0.0);
  b.slack_norm.assign(K + 1, 0.0);
  b.intensity_misfit.assign(K + 1, 0.0);

  const bool spline_terms = cfg.mode == Mode::spline;
  const int n_spline = detail::spline_term_count(cfg);

  for (int k = 1; k <= K; ++k) {
    b.elastic_reg[k] = cfg.sigma * K / mn *
                       symmetric_square_sum(jacobian(difference(
                           s.phi(k), identity_deformation(s.phi(k).width,
                                                          s.phi(k).height))));
    b.slack_norm[k] =
        cfg.sigma / (cfg.delta * K) * squared_norm(s.z(k)) /
        (mn);
    b.intensity_misfit[k] =
        1.0 / (cfg.theta * K) *
        intensity_mismatch(s.u(k - 1), s.u(k), s.z(k), s.phi(k), K);
    if (spline_terms && k <= n_spline) {
      const int k1 = detail::wrap_frame(k + 1, cfg);
      b.accel_reg[k] =
          1.0 / K / mn *
          symmetric_square_sum(jacobian(discrete_acceleration(s.phi(k), s.phi(k1), K)));
      b.slack_transport[k] =
          K / cfg.delta * slack_transport_mismatch(s.z(k), s.z(k1), s.phi(k));
    }
  }
  b.total = b.sum_elastic() + b.sum_accel() + b.sum_transport() +
            b.sum_slack_norm() + b.sum_misfit();
  if (!std::isfinite(b.total))
    throw std::domain_error("total_energy: non-finite energy");
  return b;
}

inline void write_energy_csv(const EnergyBreakdown& b, const std::string& path,
                             const std::string& comment = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  char line[512];
  if (!comment.empty()) out << "# " << comment << "\n";
  out << "k,elastic_reg,accel_reg,slack_transport,slack_norm,intensity_misfit\n";
  for (std::size_t k = 1; k < b.elastic_reg.size(); ++k) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", k,
                  b.elastic_reg[k], b.accel_reg[k], b.slack_transport[k],
                  b.slack_norm[k], b.intensity_misfit[k]);
    out << line;
  }
  std::snprintf(line, sizeof line, "total,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                b.sum_elastic(), b.sum_accel(), b.sum_transport(),
                b.sum_slack_norm(), b.sum_misfit());
  out << line;
}

}  // namespace metaspline
