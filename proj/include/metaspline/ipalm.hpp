#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "metaspline/energy.hpp"

namespace metaspline {

// Gradients are taken with respect to the raw grid entries (so they carry
// the 1/(MN) norm weights and match finite differences of total_energy).
// Step sizes and the proximal anchor live in the L2_MN metric, under which
// the per-pixel prox weights below are mesh independent: the Lipschitz
// gradient is MN times the entry gradient.

// 0.5*(sobel grad of warp(utilde, phi_ref) + sobel grad of u), per channel.
inline ImageGrid lambda_field(const ImageGrid& u, const ImageGrid& utilde,
                              const ImageGrid& phi_ref) {
  require_same_shape(u, utilde, "lambda_field");
  ImageGrid lam = sobel_gradient(warp(utilde, phi_ref));
  const ImageGrid lu = sobel_gradient(u);
  for (std::size_t i = 0; i < lam.values.size(); ++i)
    lam.values[i] = 0.5 * (lam.values[i] + lu.values[i]);
  return lam;
}

// Linearized data terms of one deformation block, all evaluated at phi_ref.
struct LinearizationPoint {
  ImageGrid phi_ref;
  bool has_transport = false;
  ImageGrid lambda_s;    // 2c channels, includes no weight
  ImageGrid residual_s;  // c channels: T[z_{k+1}, ref] - z_k
  ImageGrid lambda_g;    // 2c channels, carries the K factor
  ImageGrid residual_g;  // c channels: K T[u_k, ref] - K u_{k-1} - z_k
};

namespace detail {

inline bool spline_term_active(const SolverConfig& cfg, int j) {
  return cfg.mode == Mode::spline && j >= 1 && j <= spline_term_count(cfg);
}

// Index of the spline term whose payload (warped field) is block k, or 0.
inline int predecessor_term(const SolverConfig& cfg, int k) {
  const int j = k >= 2 ? k - 1 : (cfg.boundary == Boundary::periodic ? cfg.K : 0);
  return (j != 0 && spline_term_active(cfg, j)) ? j : 0;
}

inline void zero_boundary(ImageGrid& g) {
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x)
      if (x == 0 || y == 0 || x == g.width - 1 || y == g.height - 1)
        for (int ch = 0; ch < g.channels; ++ch) g.at(x, y, ch) = 0.0;
}

inline void boundary_identity(ImageGrid& phi) {
  for (int y = 0; y < phi.height; ++y)
    for (int x = 0; x < phi.width; ++x)
      if (x == 0 || y == 0 || x == phi.width - 1 || y == phi.height - 1) {
        phi.at(x, y, 0) = x * phi.hx();
        phi.at(x, y, 1) = y * phi.hy();
      }
}

struct PhiBlockCtx {
  int k = 0;
  int payload = 0;  // frame index warped inside a_k, 0 when a_k inactive
  int pred = 0;     // spline term with phi_k as payload, 0 when none
  ImageGrid id;
  ImageGrid payload_coeffs;  // prefiltered displacement of the payload frame
};

inline PhiBlockCtx make_phi_ctx(const SplineState& s, const SolverConfig& cfg,
                                int k) {
  PhiBlockCtx ctx;
  ctx.k = k;
  ctx.id = identity_deformation(s.u(0).width, s.u(0).height);
  if (spline_term_active(cfg, k)) {
    ctx.payload = wrap_frame(k + 1, cfg);
    ctx.payload_coeffs = prefilter(difference(s.phi(ctx.payload), ctx.id));
  }
  ctx.pred = predecessor_term(cfg, k);
  return ctx;
}

// sigma K ||W_D|| + (1/K)(||W_A(grad a_k)|| + ||W_A(grad a_{k-1})||) with
// phi_k replaced by x, all other blocks read from the state.
inline double phi_smooth_energy(const PhiBlockCtx& ctx, const SplineState& s,
                                const SolverConfig& cfg, const ImageGrid& x) {
  const double mn = static_cast<double>(x.node_count());
  const double K = cfg.K;
  const ImageGrid dx = difference(x, ctx.id);
  double e = cfg.sigma * K / mn * symmetric_square_sum(jacobian(dx));
  if (ctx.payload) {
    ImageGrid a = warp_coefficients(ctx.payload_coeffs, x);
    axpy(-1.0, dx, a);
    for (double& v : a.values) v *= K * K;
    e += 1.0 / K / mn * symmetric_square_sum(jacobian(a));
  }
  if (ctx.pred) {
    const ImageGrid& base = s.phi(ctx.pred);
    ImageGrid a = warp(dx, base);
    axpy(-1.0, base, a);
    axpy(1.0, ctx.id, a);
    for (double& v : a.values) v *= K * K;
    e += 1.0 / K / mn * symmetric_square_sum(jacobian(a));
  }
  return e;
}

// d/da of (1/K)(1/MN) sum W_A(grad a).
inline ImageGrid accel_term_gradient(const ImageGrid& a, double K, double mn) {
  ImageGrid g = jacobian_adjoint(symmetric_square_grad(jacobian(a)));
  for (double& v : g.values) v /= K * mn;
  return g;
}

inline ImageGrid phi_smooth_gradient(const PhiBlockCtx& ctx, const SplineState& s,
                                     const SolverConfig& cfg, const ImageGrid& x) {
  const double mn = static_cast<double>(x.node_count());
  const double K = cfg.K;
  const double K2 = K * K;
  const ImageGrid dx = difference(x, ctx.id);
  ImageGrid g = jacobian_adjoint(symmetric_square_grad(jacobian(dx)));
  for (double& v : g.values) v *= cfg.sigma * K / mn;
  if (ctx.payload) {
    ImageGrid a = warp_coefficients(ctx.payload_coeffs, x);
    axpy(-1.0, dx, a);
    for (double& v : a.values) v *= K2;
    const ImageGrid G = accel_term_gradient(a, K, mn);
    const ImageGrid P = warp_point_derivative_coefficients(ctx.payload_coeffs, x);
    for (int y = 0; y < g.height; ++y)
      for (int xx = 0; xx < g.width; ++xx) {
        const double g0 = G.at(xx, y, 0), g1 = G.at(xx, y, 1);
        g.at(xx, y, 0) +=
            K2 * (g0 * P.at(xx, y, 0) + g1 * P.at(xx, y, 2) - g0);
        g.at(xx, y, 1) +=
            K2 * (g0 * P.at(xx, y, 1) + g1 * P.at(xx, y, 3) - g1);
      }
  }
  if (ctx.pred) {
    const ImageGrid& base = s.phi(ctx.pred);
    ImageGrid a = warp(dx, base);
    axpy(-1.0, base, a);
    axpy(1.0, ctx.id, a);
    for (double& v : a.values) v *= K2;
    ImageGrid G = accel_term_gradient(a, K, mn);
    G = warp_adjoint(G, base);
    axpy(K2, G, g);
  }
  return g;
}

struct SlackBlockCtx {
  int k = 0;
  int pred = 0;          // spline term with z_k as payload
  bool transport = false;
  ImageGrid warped_next;   // T[z_{k+1}, phi_k], fixed during the line search
  ImageGrid misfit_fixed;  // K (T[u_k, phi_k] - u_{k-1})
};

inline SlackBlockCtx make_slack_ctx(const SplineState& s, const SolverConfig& cfg,
                                    int k) {
  SlackBlockCtx ctx;
  ctx.k = k;
  ctx.transport = spline_term_active(cfg, k);
  if (ctx.transport)
    ctx.warped_next = warp(s.z(wrap_frame(k + 1, cfg)), s.phi(k));
  ctx.pred = predecessor_term(cfg, k);
  ctx.misfit_fixed = warp(s.u(k), s.phi(k));
  axpy(-1.0, s.u(k - 1), ctx.misfit_fixed);
  for (double& v : ctx.misfit_fixed.values) v *= cfg.K;
  return ctx;
}

inline double slack_energy(const SlackBlockCtx& ctx, const SplineState& s,
                           const SolverConfig& cfg, const ImageGrid& zc) {
  const double mn = static_cast<double>(zc.node_count());
  const double K = cfg.K;
  double e = cfg.sigma / (cfg.delta * K) * squared_norm(zc) / mn;
  if (ctx.transport)
    e += K / cfg.delta * half_mean_square_misfit(ctx.warped_next, zc);
  if (ctx.pred)
    e += K / cfg.delta *
         half_mean_square_misfit(warp(zc, s.phi(ctx.pred)), s.z(ctx.pred));
  e += 1.0 / (cfg.theta * K) * half_mean_square_misfit(ctx.misfit_fixed, zc);
  return e;
}

inline ImageGrid slack_gradient(const SlackBlockCtx& ctx, const SplineState& s,
                                const SolverConfig& cfg, const ImageGrid& zc) {
  const double mn = static_cast<double>(zc.node_count());
  const double K = cfg.K;
  const double c = zc.channels;
  ImageGrid g = scaled(zc, 2.0 * cfg.sigma / (cfg.delta * K * mn));
  if (ctx.transport) {
    ImageGrid r = difference(ctx.warped_next, zc);
    axpy(-K / (cfg.delta * c * mn), r, g);
  }
  if (ctx.pred) {
    ImageGrid r = warp(zc, s.phi(ctx.pred));
    axpy(-1.0, s.z(ctx.pred), r);
    r = warp_adjoint(r, s.phi(ctx.pred));
    axpy(K / (cfg.delta * c * mn), r, g);
  }
  ImageGrid rg = difference(ctx.misfit_fixed, zc);
  axpy(-1.0 / (cfg.theta * K * c * mn), rg, g);
  return g;
}

struct ImageBlockCtx {
  int k = 0;
  ImageGrid warped_next;  // T[u_{k+1}, phi_{k+1}], fixed during the line search
};

inline ImageBlockCtx make_image_ctx(const SplineState& s, const SolverConfig& cfg,
                                    int k) {
  ImageBlockCtx ctx;
  ctx.k = k;
  if (k <= cfg.K - 1) ctx.warped_next = warp(s.u(k + 1), s.phi(k + 1));
  return ctx;
}

inline double image_energy(const ImageBlockCtx& ctx, const SplineState& s,
                           const SolverConfig& cfg, const ImageGrid& uc) {
  const double K = cfg.K;
  const int k = ctx.k;
  double e = 0.0;
  if (k >= 1) {
    ImageGrid pred = warp(uc, s.phi(k));
    axpy(-1.0, s.u(k - 1), pred);
    for (double& v : pred.values) v *= K;
    e += 1.0 / (cfg.theta * K) * half_mean_square_misfit(pred, s.z(k));
  }
  if (k <= cfg.K - 1) {
    ImageGrid pred = difference(ctx.warped_next, uc);
    for (double& v : pred.values) v *= K;
    e += 1.0 / (cfg.theta * K) * half_mean_square_misfit(pred, s.z(k + 1));
  }
  return e;
}

inline ImageGrid image_gradient(const ImageBlockCtx& ctx, const SplineState& s,
                                const SolverConfig& cfg, const ImageGrid& uc) {
  const double mn = static_cast<double>(uc.node_count());
  const double K = cfg.K;
  const double c = uc.channels;
  const int k = ctx.k;
  ImageGrid g(uc.width, uc.height, uc.channels);
  if (k >= 1) {
    ImageGrid r = warp(uc, s.phi(k));
    axpy(-1.0, s.u(k - 1), r);
    for (double& v : r.values) v *= K;
    axpy(-1.0, s.z(k), r);
    r = warp_adjoint(r, s.phi(k));
    axpy(1.0 / (cfg.theta * c * mn), r, g);
  }
  if (k <= cfg.K - 1) {
    ImageGrid r = difference(ctx.warped_next, uc);
    for (double& v : r.values) v *= K;
    axpy(-1.0, s.z(k + 1), r);
    axpy(-1.0 / (cfg.theta * c * mn), r, g);
  }
  return g;
}

}  // namespace detail

// Exact gradient of the smooth phi_k coupling (elastic term plus the two
// acceleration terms touching phi_k), evaluated at the state's value.
inline ImageGrid grad_deformation_smooth(int k, const SplineState& s,
                                         const SolverConfig& cfg) {
  if (k < 1 || k > cfg.K)
    throw std::out_of_range("grad_deformation_smooth: k out of range");
  const auto ctx = detail::make_phi_ctx(s, cfg, k);
  return detail::phi_smooth_gradient(ctx, s, cfg, s.phi(k));
}

// Exact gradient of the warp-coupled data terms (slack transport at k and
// intensity misfit at k) with respect to phi_k. Not used by the solver
// (which linearizes these terms); provided for full-energy gradient checks.
inline ImageGrid grad_deformation_data(int k, const SplineState& s,
                                       const SolverConfig& cfg) {
  if (k < 1 || k > cfg.K)
    throw std::out_of_range("grad_deformation_data: k out of range");
  const double mn = static_cast<double>(s.u(0).node_count());
  const double K = cfg.K;
  const double c = s.u(0).channels;
  const ImageGrid& x = s.phi(k);
  ImageGrid g(x.width, x.height, 2);
  if (detail::spline_term_active(cfg, k)) {
    const ImageGrid coeffs = prefilter(s.z(detail::wrap_frame(k + 1, cfg)));
    const ImageGrid r = difference(warp_coefficients(coeffs, x), s.z(k));
    const ImageGrid P = warp_point_derivative_coefficients(coeffs, x);
    const double w = K / (cfg.delta * c * mn);
    for (int y = 0; y < g.height; ++y)
      for (int xx = 0; xx < g.width; ++xx)
        for (int ch = 0; ch < r.channels; ++ch) {
          const double rv = w * r.at(xx, y, ch);
          g.at(xx, y, 0) += rv * P.at(xx, y, 2 * ch);
          g.at(xx, y, 1) += rv * P.at(xx, y, 2 * ch + 1);
        }
  }
  {
    const ImageGrid coeffs = prefilter(s.u(k));
    ImageGrid r = warp_coefficients(coeffs, x);
    axpy(-1.0, s.u(k - 1), r);
    for (double& v : r.values) v *= K;
    axpy(-1.0, s.z(k), r);
    const ImageGrid P = warp_point_derivative_coefficients(coeffs, x);
    const double w = 1.0 / (cfg.theta * c * mn);
    for (int y = 0; y < g.height; ++y)
      for (int xx = 0; xx < g.width; ++xx)
        for (int ch = 0; ch < r.channels; ++ch) {
          const double rv = w * r.at(xx, y, ch);
          g.at(xx, y, 0) += rv * P.at(xx, y, 2 * ch);
          g.at(xx, y, 1) += rv * P.at(xx, y, 2 * ch + 1);
        }
  }
  return g;
}

inline ImageGrid grad_slack(int k, const SplineState& s, const SolverConfig& cfg) {
  if (k < 1 || k > cfg.K) throw std::out_of_range("grad_slack: k out of range");
  const auto ctx = detail::make_slack_ctx(s, cfg, k);
  return detail::slack_gradient(ctx, s, cfg, s.z(k));
}

inline ImageGrid grad_image(int k, const SplineState& s, const SolverConfig& cfg) {
  if (k < 0 || k > cfg.K) throw std::out_of_range("grad_image: k out of range");
  if (cfg.is_fixed(k))
    throw std::invalid_argument("grad_image: constrained frame");
  const auto ctx = detail::make_image_ctx(s, cfg, k);
  return detail::image_gradient(ctx, s, cfg, s.u(k));
}

inline LinearizationPoint make_linearization(const SplineState& s,
                                             const SolverConfig& cfg, int k,
                                             const ImageGrid& phi_ref) {
  LinearizationPoint lin;
  lin.phi_ref = phi_ref;
  lin.has_transport = detail::spline_term_active(cfg, k);
  if (lin.has_transport) {
    const ImageGrid warped = warp(s.z(detail::wrap_frame(k + 1, cfg)), phi_ref);
    ImageGrid lam = sobel_gradient(warped);
    const ImageGrid lz = sobel_gradient(s.z(k));
    for (std::size_t i = 0; i < lam.values.size(); ++i)
      lam.values[i] = 0.5 * (lam.values[i] + lz.values[i]);
    lin.lambda_s = std::move(lam);
    lin.residual_s = difference(warped, s.z(k));
  }
  const double K = cfg.K;
  const ImageGrid warped_u = warp(s.u(k), phi_ref);
  ImageGrid lam = sobel_gradient(warped_u);
  for (double& v : lam.values) v *= K;
  ImageGrid anchor = scaled(s.u(k - 1), K);
  axpy(1.0, s.z(k), anchor);
  const ImageGrid la = sobel_gradient(anchor);
  for (std::size_t i = 0; i < lam.values.size(); ++i)
    lam.values[i] = 0.5 * (lam.values[i] + la.values[i]);
  lin.lambda_g = std::move(lam);
  ImageGrid rg = scaled(warped_u, K);
  axpy(-K, s.u(k - 1), rg);
  axpy(-1.0, s.z(k), rg);
  lin.residual_g = std::move(rg);
  return lin;
}

// Per-pixel minimizer of
//   tau/2 |psi - phi_trial|^2
//   + K/(2 c delta) sum_j (r^s_j + Lambda^s_j . (psi - phi_ref))^2
//   + 1/(2 c theta K) sum_j (r^g_j + Lambda^g_j . (psi - phi_ref))^2
// via the 2x2 SPD normal equations. Boundary nodes are left for the caller.
inline ImageGrid prox_deformation(const ImageGrid& phi_trial, double tau,
                                  const LinearizationPoint& lin,
                                  const SolverConfig& cfg) {
  if (tau <= 0.0) throw std::invalid_argument("prox_deformation: tau <= 0");
  const int c = lin.residual_g.channels;
  const double ws = lin.has_transport ? cfg.K / (c * cfg.delta) : 0.0;
  const double wg = 1.0 / (c * cfg.theta * cfg.K);
  ImageGrid out(phi_trial.width, phi_trial.height, 2);
  for (int y = 0; y < phi_trial.height; ++y)
    for (int x = 0; x < phi_trial.width; ++x) {
      double m11 = 0.0, m12 = 0.0, m22 = 0.0;  // weighted sum Lambda Lambda^T
      double rv0 = 0.0, rv1 = 0.0;             // weighted sum r Lambda
      for (int ch = 0; ch < c; ++ch) {
        if (lin.has_transport) {
          const double l0 = lin.lambda_s.at(x, y, 2 * ch);
          const double l1 = lin.lambda_s.at(x, y, 2 * ch + 1);
          const double r = lin.residual_s.at(x, y, ch);
          m11 += ws * l0 * l0;
          m12 += ws * l0 * l1;
          m22 += ws * l1 * l1;
          rv0 += ws * r * l0;
          rv1 += ws * r * l1;
        }
        const double g0 = lin.lambda_g.at(x, y, 2 * ch);
        const double g1 = lin.lambda_g.at(x, y, 2 * ch + 1);
        const double rg = lin.residual_g.at(x, y, ch);
        m11 += wg * g0 * g0;
        m12 += wg * g0 * g1;
        m22 += wg * g1 * g1;
        rv0 += wg * rg * g0;
        rv1 += wg * rg * g1;
      }
      const double ref0 = lin.phi_ref.at(x, y, 0);
      const double ref1 = lin.phi_ref.at(x, y, 1);
      const double b0 = tau * phi_trial.at(x, y, 0) + m11 * ref0 + m12 * ref1 - rv0;
      const double b1 = tau * phi_trial.at(x, y, 1) + m12 * ref0 + m22 * ref1 - rv1;
      const double a11 = tau + m11, a12 = m12, a22 = tau + m22;
      const double det = a11 * a22 - a12 * a12;
      out.at(x, y, 0) = (b0 * a22 - b1 * a12) / det;
      out.at(x, y, 1) = (b1 * a11 - b0 * a12) / det;
    }
  return out;
}

// Smallest L = candidate * 2^m satisfying the descent condition
//   f(x - (1/L) grad) <= f(x) - |grad|^2 / (2L)
// in the L2_MN metric; writes the accepted point to x_out.
template <class EvalF>
inline double backtracking_lipschitz(const ImageGrid& x, const ImageGrid& g,
                                     double f_x, EvalF&& f, double candidate,
                                     ImageGrid& x_out) {
  if (!std::isfinite(f_x))
    throw std::domain_error("backtracking_lipschitz: non-finite energy");
  const double mn = static_cast<double>(x.node_count());
  const double gg = mn * squared_norm(g);  // |grad|^2_MN with grad_MN = MN*g
  const double slack = 1e-13 * (1.0 + std::abs(f_x));
  double L = candidate;
  for (int m = 0; m < 60; ++m, L *= 2.0) {
    ImageGrid trial = x;
    axpy(-mn / L, g, trial);
    const double f_trial = f(trial);
    if (std::isfinite(f_trial) && f_trial <= f_x - gg / (2.0 * L) + slack) {
      x_out = std::move(trial);
      return L;
    }
  }
  throw std::runtime_error("backtracking_lipschitz: no admissible step found");
}

struct IterationRecord {
  int iter = 0;
  int level = 0;
  double e_total = 0, e_wd = 0, e_wa = 0, e_ds = 0, e_dg = 0, e_znorm = 0;
  double min_det = 0;
  double l_phi = 0, l_z = 0, l_u = 0;  // mean Lipschitz estimates
};

struct SolveReport {
  std::vector<IterationRecord> iterations;
  int det_warnings = 0;
};

namespace detail {

inline ImageGrid damp_to_det_floor(const ImageGrid& phi_old, ImageGrid phi_new,
                                   double floor_, int& warnings) {
  if (min_determinant(phi_new) > floor_) return phi_new;
  ImageGrid trial;
  double t = 1.0;
  for (int m = 0; m < 20; ++m) {
    t *= 0.5;
    trial = phi_old;
    for (std::size_t i = 0; i < trial.values.size(); ++i)
      trial.values[i] += t * (phi_new.values[i] - phi_old.values[i]);
    if (min_determinant(trial) > floor_) return trial;
  }
  ++warnings;
  return trial;
}

}  // namespace detail

// One call runs cfg.iters outer iterations of the inertial alternating
// sweep on the given state (images, slacks, deformations updated in place).
inline SolveReport ipalm_solve(SplineState& s, const SolverConfig& cfg,
                               int level = 0) {
  cfg.validate();
  s.validate(cfg);
  const int K = cfg.K;
  const bool hermite = cfg.boundary == Boundary::hermite;
  auto phi_frozen = [&](int k) { return hermite && (k == 1 || k == K); };
  auto z_frozen = [&](int k) { return hermite && (k == 1 || k == K); };
  auto u_free = [&](int k) {
    return !cfg.is_fixed(k) && !(hermite && (k == 0 || k == K));
  };

  std::vector<ImageGrid> phi_prev, z_prev, u_prev;
  for (int k = 1; k <= K; ++k) phi_prev.push_back(s.phi(k));
  for (int k = 1; k <= K; ++k) z_prev.push_back(s.z(k));
  for (int k = 0; k <= K; ++k) u_prev.push_back(s.u(k));
  std::vector<double> l_phi(K + 1, 1.0), l_z(K + 1, 1.0), l_u(K + 1, 1.0);
  // The carried estimate never drops below the initial scale: near a flat
  // smooth part the halved candidate always passes the descent test, and a
  // vanishing tau would leave the linearized deformation step unanchored.
  const double l_min = 1.0;

  SolveReport report;
  report.iterations.reserve(cfg.iters);

  auto extrapolate = [&](const ImageGrid& cur, const ImageGrid& prev) {
    ImageGrid e = cur;
    for (std::size_t i = 0; i < e.values.size(); ++i)
      e.values[i] += cfg.beta * (cur.values[i] - prev.values[i]);
    return e;
  };

  for (int iter = 0; iter < cfg.iters; ++iter) {
    if (u_free(0)) {
      const auto ctx = detail::make_image_ctx(s, cfg, 0);
      const ImageGrid ub = extrapolate(s.u(0), u_prev[0]);
      const double f0 = detail::image_energy(ctx, s, cfg, ub);
      const ImageGrid g = detail::image_gradient(ctx, s, cfg, ub);
      ImageGrid unew;
      l_u[0] = backtracking_lipschitz(
          ub, g, f0,
          [&](const ImageGrid& c) { return detail::image_energy(ctx, s, cfg, c); },
          std::max(l_u[0] / 2.0, l_min), unew);
      u_prev[0] = std::move(s.u(0));
      s.u(0) = std::move(unew);
    }
    for (int k = 1; k <= K; ++k) {
      if (!phi_frozen(k)) {
        const auto ctx = detail::make_phi_ctx(s, cfg, k);
        ImageGrid pb = extrapolate(s.phi(k), phi_prev[k - 1]);
        detail::boundary_identity(pb);
        const double f0 = detail::phi_smooth_energy(ctx, s, cfg, pb);
        ImageGrid g = detail::phi_smooth_gradient(ctx, s, cfg, pb);
        detail::zero_boundary(g);
        ImageGrid phi_t;
        l_phi[k] = backtracking_lipschitz(
            pb, g, f0,
            [&](const ImageGrid& c) {
              return detail::phi_smooth_energy(ctx, s, cfg, c);
            },
            std::max(l_phi[k] / 2.0, l_min), phi_t);
        const LinearizationPoint lin = make_linearization(s, cfg, k, pb);
        ImageGrid phi_new = prox_deformation(phi_t, l_phi[k], lin, cfg);
        detail::boundary_identity(phi_new);
        phi_new = detail::damp_to_det_floor(s.phi(k), std::move(phi_new),
                                            cfg.det_floor, report.det_warnings);
        phi_prev[k - 1] = std::move(s.phi(k));
        s.phi(k) = std::move(phi_new);
      }
      if (!z_frozen(k)) {
        const auto ctx = detail::make_slack_ctx(s, cfg, k);
        const ImageGrid zb = extrapolate(s.z(k), z_prev[k - 1]);
        const double f0 = detail::slack_energy(ctx, s, cfg, zb);
        const ImageGrid g = detail::slack_gradient(ctx, s, cfg, zb);
        ImageGrid znew;
        l_z[k] = backtracking_lipschitz(
            zb, g, f0,
            [&](const ImageGrid& c) { return detail::slack_energy(ctx, s, cfg, c); },
            std::max(l_z[k] / 2.0, l_min), znew);
        z_prev[k - 1] = std::move(s.z(k));
        s.z(k) = std::move(znew);
      }
      if (u_free(k)) {
        const auto ctx = detail::make_image_ctx(s, cfg, k);
        const ImageGrid ub = extrapolate(s.u(k), u_prev[k]);
        const double f0 = detail::image_energy(ctx, s, cfg, ub);
        const ImageGrid g = detail::image_gradient(ctx, s, cfg, ub);
        ImageGrid unew;
        l_u[k] = backtracking_lipschitz(
            ub, g, f0,
            [&](const ImageGrid& c) { return detail::image_energy(ctx, s, cfg, c); },
            std::max(l_u[k] / 2.0, l_min), unew);
        u_prev[k] = std::move(s.u(k));
        s.u(k) = std::move(unew);
      }
    }

    EnergyBreakdown b;
    try {
      b = total_energy(s, cfg);
    } catch (const std::domain_error&) {
      throw std::runtime_error(
          "ipalm_solve: non-finite energy at level " + std::to_string(level) +
          ", iteration " + std::to_string(iter));
    }
    IterationRecord rec;
    rec.iter = iter;
    rec.level = level;
    rec.e_total = b.total;
    rec.e_wd = b.sum_elastic();
    rec.e_wa = b.sum_accel();
    rec.e_ds = b.sum_transport();
    rec.e_dg = b.sum_misfit();
    rec.e_znorm = b.sum_slack_norm();
    rec.min_det = min_determinant(s.phi(1));
    for (int k = 2; k <= K; ++k)
      rec.min_det = std::min(rec.min_det, min_determinant(s.phi(k)));
    double sp = 0, sz = 0, su = 0;
    int nu = 0;
    for (int k = 1; k <= K; ++k) sp += l_phi[k];
    for (int k = 1; k <= K; ++k) sz += l_z[k];
    for (int k = 0; k <= K; ++k)
      if (u_free(k)) {
        su += l_u[k];
        ++nu;
      }
    rec.l_phi = sp / K;
    rec.l_z = sz / K;
    rec.l_u = nu ? su / nu : 0.0;
    report.iterations.push_back(rec);
  }
  return report;
}

}  // namespace metaspline
