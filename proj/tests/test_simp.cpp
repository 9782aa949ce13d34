#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "topoformer/simp_static.hpp"

using namespace topo;

namespace {

struct Instance {
  Grid grid;
  Material mat;
  BoundarySpec bc;
  PointLoad load;
  DensityField rho;
};

Instance random_instance(std::uint64_t seed, int nx, int ny) {
  Instance in;
  in.grid = Grid{nx, ny};
  in.bc.mask = (1u << 14) | (1u << 15);  // clamp the left edge
  in.load = PointLoad::from_angle(nx - 1, ny / 2, 5);
  in.rho = DensityField::constant(in.grid, 0.5);
  Rng rng(seed);
  for (auto& r : in.rho.rho) r = rng.uniform(0.2, 0.9);
  return in;
}

double solve_compliance(const Instance& in, const DensityField& rho) {
  const auto fixed = in.bc.fixed_dofs(in.grid);
  StiffnessOperator K(in.grid, in.mat, rho, 3.0, fixed);
  DisplacementField u = solve_static(in.grid, in.bc, in.load, K, 1e-12);
  return compliance(u.u, in.load.force_vector(in.grid));
}

}  // namespace

TEST_CASE("static sensitivities match central finite differences on 4x4") {
  Instance in = random_instance(101, 4, 4);
  const auto fixed = in.bc.fixed_dofs(in.grid);
  StiffnessOperator K(in.grid, in.mat, in.rho, 3.0, fixed);
  DisplacementField u = solve_static(in.grid, in.bc, in.load, K, 1e-12);
  auto sens = sensitivities(in.grid, in.mat, in.rho, u, 3.0);

  const double h = 1e-6;
  for (int e = 0; e < in.grid.element_count(); ++e) {
    DensityField rp = in.rho, rm = in.rho;
    rp.rho[e] += h;
    rm.rho[e] -= h;
    const double fd = (solve_compliance(in, rp) - solve_compliance(in, rm)) / (2 * h);
    CHECK(sens[e] <= 0.0);
    CHECK(std::abs(sens[e] - fd) / std::max(std::abs(fd), 1e-12) < 1e-3);
  }
}

TEST_CASE("zero displacement gives zero sensitivities") {
  Instance in = random_instance(5, 3, 3);
  DisplacementField u;
  u.u.assign(in.grid.dof_count(), 0.0);
  for (double s : sensitivities(in.grid, in.mat, in.rho, u, 3.0)) CHECK(s == 0.0);
}

TEST_CASE("sensitivity filter") {
  Grid g{5, 5};
  SUBCASE("uniform field unchanged") {
    DensityField rho = DensityField::constant(g, 0.5);
    std::vector<double> sens(g.element_count(), -2.0);
    auto f = filter_sensitivities(g, rho, sens, 1.5);
    for (double v : f) CHECK(v == doctest::Approx(-2.0).epsilon(1e-12));
  }
  SUBCASE("radius 1.0 keeps only the element itself") {
    Rng rng(1);
    DensityField rho = DensityField::constant(g, 0.5);
    std::vector<double> sens = testutil::random_vector(rng, g.element_count(), -3.0, -0.1);
    auto f = filter_sensitivities(g, rho, sens, 1.0);
    for (int e = 0; e < g.element_count(); ++e)
      CHECK(f[e] == doctest::Approx(sens[e]).epsilon(1e-12));
  }
  SUBCASE("single spike spreads over the 4-neighborhood with conic weights") {
    DensityField rho = DensityField::constant(g, 0.5);
    std::vector<double> sens(g.element_count(), 0.0);
    const int cx = 2, cy = 2;
    const int center = g.element(cx, cy);
    sens[center] = -1.0;
    const double rmin = 1.5;
    auto f = filter_sensitivities(g, rho, sens, rmin);
    // direct evaluation: filtered_e = sum_j w_ej rho_j s_j / (max(1e-3,rho_e) sum_j w_ej)
    auto expected_at = [&](int ex, int ey) {
      double num = 0.0, den = 0.0;
      for (int jy = 0; jy < g.nely; ++jy)
        for (int jx = 0; jx < g.nelx; ++jx) {
          const double dist = std::hypot(ex - jx, ey - jy);
          const double w = std::max(0.0, rmin - dist);
          den += w;
          num += w * rho.rho[g.element(jx, jy)] * sens[g.element(jx, jy)];
        }
      return num / (std::max(1e-3, rho.rho[g.element(ex, ey)]) * den);
    };
    int nonzero = 0;
    for (int ey = 0; ey < g.nely; ++ey)
      for (int ex = 0; ex < g.nelx; ++ex) {
        const double v = f[g.element(ex, ey)];
        CHECK(v == doctest::Approx(expected_at(ex, ey)).epsilon(1e-12));
        if (v != 0.0) {
          ++nonzero;
          // rmin = 1.5 reaches diagonal neighbours (dist sqrt(2) < 1.5)
          CHECK(std::max(std::abs(ex - cx), std::abs(ey - cy)) <= 1);
        }
      }
    CHECK(nonzero == 9);
    CHECK(f[center] < f[g.element(cx + 1, cy)]);  // more negative at the spike
  }
  SUBCASE("sign preserved on random fields") {
    Rng rng(9);
    DensityField rho = DensityField::constant(g, 0.5);
    for (auto& r : rho.rho) r = rng.uniform(0.1, 1.0);
    std::vector<double> sens = testutil::random_vector(rng, g.element_count(), -5.0, -0.01);
    for (double v : filter_sensitivities(g, rho, sens, 1.5)) CHECK(v < 0.0);
  }
}

TEST_CASE("OC update") {
  Grid g{8, 8};
  SUBCASE("uniform sensitivities give uniform density at the target") {
    DensityField rho = DensityField::constant(g, 0.7);
    std::vector<double> sens(g.element_count(), -1.5);
    DensityField next = oc_update(rho, sens, 0.5, 0.2);
    for (double r : next.rho) CHECK(r == doctest::Approx(0.5).epsilon(1e-3));
  }
  SUBCASE("steeper sensitivity attracts more density") {
    Grid g2{2, 1};
    DensityField rho;
    rho.nelx = 2;
    rho.nely = 1;
    rho.rho = {0.5, 0.5};
    DensityField next = oc_update(rho, {-4.0, -1.0}, 0.5, 0.2);
    CHECK(next.rho[0] > next.rho[1]);
    CHECK((next.rho[0] + next.rho[1]) / 2 == doctest::Approx(0.5).epsilon(1e-4));
  }
  SUBCASE("random instances hit the volume target within 1e-4") {
    Rng rng(21);
    for (int t = 0; t < 5; ++t) {
      DensityField rho = DensityField::constant(g, 0.5);
      for (auto& r : rho.rho) r = rng.uniform(0.05, 0.95);
      std::vector<double> sens =
          testutil::random_vector(rng, g.element_count(), -9.0, -0.01);
      // the target must be reachable under the elementwise move limit
      double lo = 0.0, hi = 0.0;
      for (double r : rho.rho) {
        lo += std::max(0.0, r - 0.2);
        hi += std::min(1.0, r + 0.2);
      }
      lo /= rho.rho.size();
      hi /= rho.rho.size();
      const double f = rng.uniform(lo + 0.01, hi - 0.01);
      DensityField next = oc_update(rho, sens, f, 0.2);
      CHECK(std::abs(next.mean() - f) <= 1e-4);
      for (int e = 0; e < g.element_count(); ++e) {
        CHECK(next.rho[e] >= std::max(0.0, rho.rho[e] - 0.2) - 1e-12);
        CHECK(next.rho[e] <= std::min(1.0, rho.rho[e] + 0.2) + 1e-12);
      }
    }
  }
  SUBCASE("infeasible volume fraction rejected") {
    DensityField rho = DensityField::constant(g, 0.5);
    std::vector<double> sens(g.element_count(), -1.0);
    CHECK_THROWS(oc_update(rho, sens, 1.5, 0.2));
  }
}

TEST_CASE("16x8 cantilever optimization converges with conserved volume") {
  StaticProblem problem;
  problem.grid = Grid{16, 8};
  problem.bc.mask = (1u << 14) | (1u << 15);
  problem.load = PointLoad{15, 3, 0.0, -1.0, -1};
  OptimizerConfig config;
  config.volume_fraction = 0.4;

  OptimizeResult res = optimize_static(problem, config);
  CHECK(res.converged);
  CHECK(static_cast<int>(res.compliance_history.size()) <= config.max_iterations);
  CHECK(std::abs(res.density.mean() - 0.4) <= 1e-3);
  CHECK(res.compliance_history.back() < res.compliance_history.front());
  // the stopping rule guarantees the final relative change is below tolerance
  const std::size_t n = res.compliance_history.size();
  REQUIRE(n >= 2);
  const double rel = std::abs(res.compliance_history[n - 1] -
                              res.compliance_history[n - 2]) /
                     res.compliance_history[n - 2];
  CHECK(rel <= config.tolerance);

  SUBCASE("infinite tolerance returns after one iteration") {
    OptimizerConfig one = config;
    one.tolerance = std::numeric_limits<double>::infinity();
    OptimizeResult r1 = optimize_static(problem, one);
    CHECK(r1.compliance_history.size() <= 2);
  }
}

TEST_CASE("mirrored problem produces the mirrored topology") {
  StaticProblem problem;
  problem.grid = Grid{8, 8};
  problem.bc.mask = (1u << 14) | (1u << 15);  // left edge
  problem.load = PointLoad{7, 2, 0.0, -1.0, -1};

  StaticProblem mirrored = problem;
  mirrored.bc.mask = (1u << 10) | (1u << 11);  // right edge
  mirrored.load = PointLoad{0, 2, 0.0, -1.0, -1};

  OptimizerConfig config;
  OptimizeResult a = optimize_static(problem, config);
  OptimizeResult b = optimize_static(mirrored, config);
  REQUIRE(a.converged);
  REQUIRE(b.converged);
  DensityField ba = heaviside_binarize(a.density, 0.5);
  DensityField bb = heaviside_binarize(b.density, 0.5);
  const Grid& g = problem.grid;
  for (int ey = 0; ey < g.nely; ++ey)
    for (int ex = 0; ex < g.nelx; ++ex)
      CHECK(ba.rho[g.element(ex, ey)] ==
            bb.rho[g.element(g.nelx - 1 - ex, ey)]);
}

TEST_CASE("binarization") {
  Grid g{4, 1};
  DensityField rho;
  rho.nelx = 4;
  rho.nely = 1;
  rho.rho = {0.7, 0.5, 0.49, 0.2};
  DensityField b = heaviside_binarize(rho, 0.5);
  CHECK(b.rho == std::vector<double>{1.0, 1.0, 0.0, 0.0});
  DensityField bb = heaviside_binarize(b, 0.5);
  CHECK(bb.rho == b.rho);  // idempotent

  SUBCASE("volume-preserving variant lands within 2% of the target") {
    Rng rng(77);
    Grid g2{16, 16};
    DensityField field = DensityField::constant(g2, 0.5);
    for (auto& r : field.rho) r = rng.uniform(0.0, 1.0);
    for (double f : {0.3, 0.4, 0.5}) {
      DensityField vb = binarize_volume_preserving(field, f);
      for (double v : vb.rho) CHECK((v == 0.0 || v == 1.0));
      CHECK(std::abs(vb.mean() - f) <= 0.02);
    }
  }
}
