#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "metaspline/ipalm.hpp"
#include "oracle.hpp"

using Catch::Matchers::WithinAbs;
using metaspline::Boundary;
using metaspline::ImageGrid;
using metaspline::LinearizationPoint;
using metaspline::Mode;
using metaspline::SolverConfig;
using metaspline::SplineState;

namespace {

SolverConfig small_config(int K) {
  SolverConfig cfg;
  cfg.K = K;
  cfg.delta = 0.05;
  cfg.sigma = 0.8;
  cfg.theta = 0.02;
  cfg.fixed_indices = {0, K};
  return cfg;
}

// Relative L2 distance between two gradients over the entries selected by
// keep(x, y).
template <class Keep>
double relative_error(const ImageGrid& a, const ImageGrid& b, Keep&& keep) {
  double num = 0.0, den = 0.0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (!keep(x, y)) continue;
      for (int ch = 0; ch < a.channels; ++ch) {
        const double d = a.at(x, y, ch) - b.at(x, y, ch);
        num += d * d;
        den += b.at(x, y, ch) * b.at(x, y, ch);
      }
    }
  return std::sqrt(num) / std::sqrt(den > 0.0 ? den : 1.0);
}

const auto keep_all = [](int, int) { return true; };

}  // namespace

TEST_CASE("lambda field of matching ramps") {
  const int n = 9;
  ImageGrid ramp(n, n, 1);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) ramp.at(x, y, 0) = x / (n - 1.0);
  const ImageGrid id = metaspline::identity_deformation(n, n);
  const ImageGrid lam = metaspline::lambda_field(ramp, ramp, id);
  REQUIRE(lam.channels == 2);
  for (int y = 0; y < n; ++y)
    for (int x = 1; x + 1 < n; ++x) {
      CHECK_THAT(lam.at(x, y, 0), WithinAbs(1.0, 1e-9));
      CHECK_THAT(lam.at(x, y, 1), WithinAbs(0.0, 1e-9));
    }
  const ImageGrid c(5, 5, 1, 0.7);
  const ImageGrid id5 = metaspline::identity_deformation(5, 5);
  for (double v : metaspline::lambda_field(c, c, id5).values)
    CHECK(std::abs(v) <= 1e-12);
}

TEST_CASE("lambda field recomposes warp and sobel") {
  std::mt19937 rng(61);
  const ImageGrid u = oracle::random_image(7, 7, 2, rng);
  const ImageGrid ut = oracle::random_image(7, 7, 2, rng);
  const ImageGrid phi = oracle::random_interior_deformation(7, 7, 0.05, rng);
  const ImageGrid lam = metaspline::lambda_field(u, ut, phi);
  ImageGrid ref = metaspline::sobel_gradient(metaspline::warp(ut, phi));
  const ImageGrid gu = metaspline::sobel_gradient(u);
  for (std::size_t i = 0; i < ref.values.size(); ++i)
    ref.values[i] = 0.5 * (ref.values[i] + gu.values[i]);
  CHECK(metaspline::max_abs_difference(lam, ref) == 0.0);
}

TEST_CASE("prox with zero linearization returns the trial point") {
  const int n = 5;
  SolverConfig cfg = small_config(2);
  LinearizationPoint lin;
  lin.phi_ref = metaspline::identity_deformation(n, n);
  lin.has_transport = false;
  lin.lambda_g = ImageGrid(n, n, 2, 0.0);
  lin.residual_g = ImageGrid(n, n, 1, 0.0);
  std::mt19937 rng(62);
  const ImageGrid trial = oracle::random_interior_deformation(n, n, 0.1, rng);
  const ImageGrid out = metaspline::prox_deformation(trial, 2.5, lin, cfg);
  CHECK(metaspline::max_abs_difference(out, trial) <= 1e-14);
}

TEST_CASE("huge anchor weight pins the prox to the trial point") {
  std::mt19937 rng(63);
  SolverConfig cfg = small_config(3);
  const SplineState s = oracle::random_state(cfg, 6, 6, 1, rng);
  const ImageGrid ref = oracle::random_interior_deformation(6, 6, 0.04, rng);
  const LinearizationPoint lin = metaspline::make_linearization(s, cfg, 1, ref);
  const ImageGrid trial = oracle::random_interior_deformation(6, 6, 0.05, rng);
  const ImageGrid out = metaspline::prox_deformation(trial, 1e12, lin, cfg);
  CHECK(metaspline::max_abs_difference(out, trial) <= 1e-6);
}

TEST_CASE("prox minimizes its per-pixel quadratic") {
  std::mt19937 rng(64);
  SolverConfig cfg = small_config(3);
  const SplineState s = oracle::random_state(cfg, 6, 6, 1, rng);
  const ImageGrid ref = oracle::random_interior_deformation(6, 6, 0.04, rng);
  const int k = 2;
  const LinearizationPoint lin = metaspline::make_linearization(s, cfg, k, ref);
  const ImageGrid trial = oracle::random_interior_deformation(6, 6, 0.05, rng);
  const double tau = 3.7;
  const ImageGrid out = metaspline::prox_deformation(trial, tau, lin, cfg);
  const int c = 1;
  const double ws = cfg.K / (c * cfg.delta);
  const double wg = 1.0 / (c * cfg.theta * cfg.K);
  for (int y = 1; y < 6; y += 2)
    for (int x = 1; x < 6; x += 2) {
      auto q = [&](double px, double py) {
        const double d0 = px - lin.phi_ref.at(x, y, 0);
        const double d1 = py - lin.phi_ref.at(x, y, 1);
        const double a0 = px - trial.at(x, y, 0);
        const double a1 = py - trial.at(x, y, 1);
        double val = tau / 2.0 * (a0 * a0 + a1 * a1);
        const double rs = lin.residual_s.at(x, y, 0) +
                          lin.lambda_s.at(x, y, 0) * d0 +
                          lin.lambda_s.at(x, y, 1) * d1;
        val += ws / 2.0 * rs * rs;
        const double rg = lin.residual_g.at(x, y, 0) +
                          lin.lambda_g.at(x, y, 0) * d0 +
                          lin.lambda_g.at(x, y, 1) * d1;
        val += wg / 2.0 * rg * rg;
        return val;
      };
      // The bounded local search cannot certify the argmin when it lies far
      // from the trial point, but it must never beat the prox result.
      const auto [bx, by] = oracle::minimize_2d(q, trial.at(x, y, 0),
                                                trial.at(x, y, 1), 0.5);
      const double q_ref = q(bx, by);
      CHECK(q(out.at(x, y, 0), out.at(x, y, 1)) <=
            q_ref + 1e-10 * (1.0 + std::abs(q_ref)));
      // First-order optimality of the quadratic at the returned point.
      const double h = 1e-6;
      const double gx =
          (q(out.at(x, y, 0) + h, out.at(x, y, 1)) -
           q(out.at(x, y, 0) - h, out.at(x, y, 1))) /
          (2.0 * h);
      const double gy =
          (q(out.at(x, y, 0), out.at(x, y, 1) + h) -
           q(out.at(x, y, 0), out.at(x, y, 1) - h)) /
          (2.0 * h);
      CHECK(std::abs(gx) <= 1e-7);
      CHECK(std::abs(gy) <= 1e-7);
    }
}

TEST_CASE("smooth deformation gradient vanishes at identity") {
  SolverConfig cfg = small_config(3);
  SplineState s;
  s.images.assign(4, ImageGrid(6, 6, 1, 0.5));
  s.slacks.assign(3, ImageGrid(6, 6, 1, 0.0));
  s.deformations.assign(3, metaspline::identity_deformation(6, 6));
  for (int k = 1; k <= 3; ++k) {
    const ImageGrid g = metaspline::grad_deformation_smooth(k, s, cfg);
    for (double v : g.values) CHECK(std::abs(v) <= 1e-11);
  }
}

TEST_CASE("smooth deformation gradient matches finite differences") {
  std::mt19937 rng(65);
  SolverConfig cfg = small_config(3);
  for (const Boundary bc : {Boundary::natural, Boundary::periodic}) {
    cfg.boundary = bc;
    SplineState s = oracle::random_state(cfg, 6, 6, 1, rng);
    for (int k = 1; k <= 3; ++k) {
      const ImageGrid g = metaspline::grad_deformation_smooth(k, s, cfg);
      const auto ctx = metaspline::detail::make_phi_ctx(s, cfg, k);
      const ImageGrid fd = oracle::fd_gradient(
          [&](const ImageGrid& cand) {
            return metaspline::detail::phi_smooth_energy(ctx, s, cfg, cand);
          },
          s.phi(k), 1e-5);
      CHECK(relative_error(g, fd, keep_all) <= 1e-5);
    }
  }
}

TEST_CASE("geodesic mode reduces the smooth gradient to the elastic term") {
  std::mt19937 rng(66);
  SolverConfig cfg = small_config(3);
  SolverConfig geo = cfg;
  geo.mode = Mode::geodesic;
  const SplineState s = oracle::random_state(cfg, 6, 6, 1, rng);
  const ImageGrid g = metaspline::grad_deformation_smooth(2, s, geo);
  const ImageGrid d = metaspline::difference(
      s.phi(2), metaspline::identity_deformation(6, 6));
  ImageGrid expected = metaspline::jacobian_adjoint(
      metaspline::symmetric_square_grad(metaspline::jacobian(d)));
  for (double& v : expected.values) v *= geo.sigma * geo.K / 36.0;
  CHECK(metaspline::max_abs_difference(g, expected) <= 1e-13);
}

TEST_CASE("full deformation gradient matches finite differences inside") {
  std::mt19937 rng(67);
  SolverConfig cfg = small_config(3);
  SplineState s = oracle::random_state(cfg, 6, 6, 1, rng);
  for (int k = 1; k <= 3; ++k) {
    ImageGrid g = metaspline::grad_deformation_smooth(k, s, cfg);
    metaspline::axpy(1.0, metaspline::grad_deformation_data(k, s, cfg), g);
    ImageGrid phi = s.phi(k);
    const ImageGrid fd = oracle::fd_gradient(
        [&](const ImageGrid& cand) {
          SplineState probe = s;
          probe.phi(k) = cand;
          return metaspline::total_energy(probe, cfg).total;
        },
        phi, 1e-5);
    const auto interior = [&](int x, int y) {
      return x > 0 && y > 0 && x + 1 < 6 && y + 1 < 6;
    };
    CHECK(relative_error(g, fd, interior) <= 1e-5);
  }
}

TEST_CASE("slack gradient matches finite differences") {
  std::mt19937 rng(68);
  SolverConfig cfg = small_config(3);
  for (const Boundary bc : {Boundary::natural, Boundary::periodic}) {
    cfg.boundary = bc;
    SplineState s = oracle::random_state(cfg, 6, 6, 1, rng);
    for (int k = 1; k <= 3; ++k) {
      const ImageGrid g = metaspline::grad_slack(k, s, cfg);
      const ImageGrid fd = oracle::fd_gradient(
          [&](const ImageGrid& cand) {
            SplineState probe = s;
            probe.z(k) = cand;
            return metaspline::total_energy(probe, cfg).total;
          },
          s.z(k), 1e-5);
      CHECK(relative_error(g, fd, keep_all) <= 1e-5);
    }
  }
}

TEST_CASE("slack gradient of the norm term alone") {
  SolverConfig cfg = small_config(2);
  cfg.mode = Mode::geodesic;
  const int n = 5;
  SplineState s;
  s.images = {ImageGrid(n, n, 1, 0.1), ImageGrid(n, n, 1, 0.1 + 1.0 / cfg.K),
              ImageGrid(n, n, 1, 0.1 + 2.0 / cfg.K)};
  s.slacks.assign(2, ImageGrid(n, n, 1, 1.0));
  s.deformations.assign(2, metaspline::identity_deformation(n, n));
  const ImageGrid g = metaspline::grad_slack(1, s, cfg);
  const double expected = 2.0 * cfg.sigma / (cfg.delta * cfg.K * n * n);
  for (double v : g.values) CHECK_THAT(v, WithinAbs(expected, 1e-12));
}

TEST_CASE("image gradient matches finite differences") {
  std::mt19937 rng(69);
  SolverConfig cfg = small_config(3);
  SplineState s = oracle::random_state(cfg, 6, 6, 1, rng);
  for (int k = 1; k <= 2; ++k) {
    const ImageGrid g = metaspline::grad_image(k, s, cfg);
    const ImageGrid fd = oracle::fd_gradient(
        [&](const ImageGrid& cand) {
          SplineState probe = s;
          probe.u(k) = cand;
          return metaspline::total_energy(probe, cfg).total;
        },
        s.u(k), 1e-5);
    CHECK(relative_error(g, fd, keep_all) <= 1e-5);
  }
  CHECK_THROWS_AS(metaspline::grad_image(0, s, cfg), std::invalid_argument);
  CHECK_THROWS_AS(metaspline::grad_image(3, s, cfg), std::invalid_argument);
}

TEST_CASE("image gradient reduces to second differences at identity") {
  SolverConfig cfg = small_config(2);
  const int n = 6;
  std::mt19937 rng(70);
  SplineState s;
  s.images.push_back(oracle::random_image(n, n, 1, rng));
  s.images.push_back(oracle::random_image(n, n, 1, rng));
  s.images.push_back(oracle::random_image(n, n, 1, rng));
  s.slacks.assign(2, ImageGrid(n, n, 1, 0.0));
  s.deformations.assign(2, metaspline::identity_deformation(n, n));
  const ImageGrid g = metaspline::grad_image(1, s, cfg);
  const double w = cfg.K / (cfg.theta * n * n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double expected =
          w * (2.0 * s.u(1).at(x, y, 0) - s.u(0).at(x, y, 0) -
               s.u(2).at(x, y, 0));
      CHECK_THAT(g.at(x, y, 0), WithinAbs(expected, 1e-9));
    }
}

TEST_CASE("backtracking brackets a quadratic curvature") {
  const int n = 3;
  const double a = 37.3;
  std::mt19937 rng(71);
  const ImageGrid x = oracle::random_image(n, n, 1, rng, 0.5, 1.5);
  const double mn = n * n;
  auto f = [&](const ImageGrid& v) {
    return 0.5 * a * metaspline::squared_norm(v) / mn;
  };
  const ImageGrid g = metaspline::scaled(x, a / mn);
  ImageGrid accepted;
  const double L = metaspline::backtracking_lipschitz(x, g, f(x), f, 1.0, accepted);
  CHECK(L >= a * (1.0 - 1e-9));
  CHECK(L <= 2.0 * a);
  // The next-smaller ladder rung must violate the descent condition.
  const double gg = mn * metaspline::squared_norm(g);
  ImageGrid trial = x;
  metaspline::axpy(-mn / (L / 2.0), g, trial);
  CHECK(f(trial) > f(x) - gg / L + 1e-13 * (1.0 + std::abs(f(x))));
}

TEST_CASE("backtracking accepts the candidate for linear objectives") {
  const int n = 3;
  std::mt19937 rng(72);
  const ImageGrid x = oracle::random_image(n, n, 1, rng);
  const ImageGrid c = oracle::random_image(n, n, 1, rng, -1.0, 1.0);
  auto f = [&](const ImageGrid& v) {
    double acc = 0.0;
    for (std::size_t i = 0; i < v.values.size(); ++i)
      acc += c.values[i] * v.values[i];
    return acc;
  };
  ImageGrid accepted;
  const double L =
      metaspline::backtracking_lipschitz(x, c, f(x), f, 0.125, accepted);
  CHECK(L == 0.125);
  CHECK_THROWS_AS(metaspline::backtracking_lipschitz(
                      x, c, std::numeric_limits<double>::quiet_NaN(), f, 1.0,
                      accepted),
                  std::domain_error);
}

TEST_CASE("backtracking satisfies the descent condition on an energy block") {
  std::mt19937 rng(73);
  SolverConfig cfg = small_config(3);
  SplineState s = oracle::random_state(cfg, 6, 6, 1, rng);
  const auto ctx = metaspline::detail::make_slack_ctx(s, cfg, 2);
  auto f = [&](const ImageGrid& z) {
    return metaspline::detail::slack_energy(ctx, s, cfg, z);
  };
  const ImageGrid g = metaspline::detail::slack_gradient(ctx, s, cfg, s.z(2));
  const double fx = f(s.z(2));
  ImageGrid accepted;
  const double L = metaspline::backtracking_lipschitz(s.z(2), g, fx, f, 1.0, accepted);
  const double gg = 36.0 * metaspline::squared_norm(g);
  CHECK(f(accepted) <= fx - gg / (2.0 * L) + 1e-12 * (1.0 + std::abs(fx)));
}

TEST_CASE("solver leaves a zero-energy state in place") {
  SolverConfig cfg = small_config(4);
  cfg.iters = 5;
  SplineState s;
  s.images.assign(5, ImageGrid(8, 8, 1, 0.35));
  s.slacks.assign(4, ImageGrid(8, 8, 1, 0.0));
  s.deformations.assign(4, metaspline::identity_deformation(8, 8));
  const SplineState before = s;
  metaspline::ipalm_solve(s, cfg);
  CHECK(metaspline::total_energy(s, cfg).total <= 1e-10);
  for (int k = 0; k <= 4; ++k)
    CHECK(metaspline::max_abs_difference(s.u(k), before.u(k)) <= 1e-6);
  for (int k = 1; k <= 4; ++k) {
    CHECK(metaspline::max_abs_difference(s.z(k), before.z(k)) <= 1e-6);
    CHECK(metaspline::max_abs_difference(s.phi(k), before.phi(k)) <= 1e-6);
  }
}

TEST_CASE("solver decreases the energy on random instances") {
  std::mt19937 rng(74);
  for (const Boundary bc : {Boundary::natural, Boundary::periodic}) {
    SolverConfig cfg = small_config(3);
    cfg.boundary = bc;
    cfg.iters = 8;
    SplineState s = oracle::random_state(cfg, 8, 8, 1, rng, 0.01);
    const double before = metaspline::total_energy(s, cfg).total;
    const auto report = metaspline::ipalm_solve(s, cfg);
    const double after = metaspline::total_energy(s, cfg).total;
    CHECK(after <= before);
    REQUIRE(report.iterations.size() == 8);
    CHECK(report.iterations.back().e_total ==
          Catch::Approx(after).epsilon(1e-12));
    for (const auto& rec : report.iterations) {
      CHECK(rec.min_det > 0.0);
      CHECK(rec.l_phi > 0.0);
    }
  }
}

TEST_CASE("solver preserves constrained data bitwise") {
  std::mt19937 rng(75);
  SolverConfig cfg = small_config(4);
  cfg.iters = 4;
  SplineState s = oracle::random_state(cfg, 8, 8, 1, rng, 0.01);
  const ImageGrid u0 = s.u(0), uK = s.u(4);
  metaspline::ipalm_solve(s, cfg);
  CHECK(s.u(0).values == u0.values);
  CHECK(s.u(4).values == uK.values);
  const ImageGrid id = metaspline::identity_deformation(8, 8);
  for (int k = 1; k <= 4; ++k)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        if (x == 0 || y == 0 || x == 7 || y == 7) {
          CHECK(s.phi(k).at(x, y, 0) == id.at(x, y, 0));
          CHECK(s.phi(k).at(x, y, 1) == id.at(x, y, 1));
        }
}

TEST_CASE("hermite boundary freezes the end blocks") {
  std::mt19937 rng(76);
  SolverConfig cfg = small_config(3);
  cfg.boundary = Boundary::hermite;
  cfg.fixed_indices = {0, 3};
  cfg.iters = 4;
  SplineState s = oracle::random_state(cfg, 6, 6, 1, rng, 0.01);
  const SplineState before = s;
  metaspline::ipalm_solve(s, cfg);
  CHECK(s.phi(1).values == before.phi(1).values);
  CHECK(s.phi(3).values == before.phi(3).values);
  CHECK(s.z(1).values == before.z(1).values);
  CHECK(s.z(3).values == before.z(3).values);
  CHECK(s.u(0).values == before.u(0).values);
  CHECK(s.u(3).values == before.u(3).values);
  CHECK(s.phi(2).values != before.phi(2).values);
}

TEST_CASE("single free block with no inertia descends monotonically") {
  SolverConfig cfg = small_config(2);
  cfg.boundary = Boundary::hermite;
  cfg.fixed_indices = {0, 2};
  cfg.beta = 0.0;
  cfg.iters = 25;
  std::mt19937 rng(77);
  SplineState s;
  s.images.push_back(oracle::random_image(8, 8, 1, rng));
  s.images.push_back(oracle::random_image(8, 8, 1, rng));
  s.images.push_back(oracle::random_image(8, 8, 1, rng));
  s.slacks.assign(2, ImageGrid(8, 8, 1, 0.0));
  s.deformations.assign(2, metaspline::identity_deformation(8, 8));
  const auto report = metaspline::ipalm_solve(s, cfg);
  double prev = metaspline::total_energy(s, cfg).total;
  REQUIRE(report.iterations.size() == 25);
  for (std::size_t i = 1; i < report.iterations.size(); ++i) {
    const double drop_slack =
        1e-10 * (1.0 + std::abs(report.iterations[i - 1].e_total));
    CHECK(report.iterations[i].e_total <=
          report.iterations[i - 1].e_total + drop_slack);
  }
  CHECK(report.iterations.back().e_total == Catch::Approx(prev).epsilon(1e-12));
}

TEST_CASE("determinant damping pulls a folding update back") {
  const int n = 8;
  const ImageGrid id = metaspline::identity_deformation(n, n);
  ImageGrid folded = id;
  // Strong leftward push in the middle columns inverts cells.
  for (int y = 1; y + 1 < n; ++y)
    for (int x = 1; x + 1 < n; ++x)
      folded.at(x, y, 0) -= (x % 2) ? 0.6 : 0.0;
  REQUIRE(metaspline::min_determinant(folded) <= 0.0);
  int warnings = 0;
  const ImageGrid damped =
      metaspline::detail::damp_to_det_floor(id, folded, 1e-6, warnings);
  CHECK(warnings == 0);
  CHECK(metaspline::min_determinant(damped) > 1e-6);
  CHECK(metaspline::max_abs_difference(damped, id) <
        metaspline::max_abs_difference(folded, id));

  // When even the most damped step stays folded the warning counter ticks.
  int warnings2 = 0;
  const ImageGrid still = metaspline::detail::damp_to_det_floor(
      folded, folded, 1e-6, warnings2);
  CHECK(warnings2 == 1);
  CHECK(metaspline::max_abs_difference(still, folded) <= 1e-12);
}
