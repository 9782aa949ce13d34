#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "helpers.hpp"
#include "topoformer/fea.hpp"

using namespace topo;

namespace {

/// Quadrature oracle: integrate B^T D B over the unit square with 2x2 Gauss
/// points (exact for the bilinear Q4 integrand).
ElementMatrix gauss_stiffness(double E, double nu) {
  Eigen::Matrix3d D;
  D << 1.0, nu, 0.0, nu, 1.0, 0.0, 0.0, 0.0, (1.0 - nu) / 2.0;
  D *= E / (1.0 - nu * nu);
  ElementMatrix ke = ElementMatrix::Zero();
  const double g = 1.0 / std::sqrt(3.0);
  const double pts[2] = {-g, g};
  // shape functions on [-1,1]^2 at corner order (-1,-1),(1,-1),(1,1),(-1,1)
  const double xs[4] = {-1, 1, 1, -1};
  const double ys[4] = {-1, -1, 1, 1};
  for (double xi : pts)
    for (double eta : pts) {
      Eigen::Matrix<double, 3, 8> B = Eigen::Matrix<double, 3, 8>::Zero();
      for (int a = 0; a < 4; ++a) {
        // physical derivatives: x = (xi+1)/2 so d/dx = 2 d/dxi
        const double dNdx = xs[a] * (1.0 + ys[a] * eta) / 4.0 * 2.0;
        const double dNdy = ys[a] * (1.0 + xs[a] * xi) / 4.0 * 2.0;
        B(0, 2 * a) = dNdx;
        B(1, 2 * a + 1) = dNdy;
        B(2, 2 * a) = dNdy;
        B(2, 2 * a + 1) = dNdx;
      }
      ke += 0.25 * B.transpose() * D * B;  // jacobian det = 1/4
    }
  return ke;
}

}  // namespace

TEST_CASE("element stiffness matches 2x2 Gauss quadrature oracle") {
  Material mat{1.0, 1.0, 0.3};
  ElementMatrix ke = element_stiffness(mat);
  ElementMatrix oracle = gauss_stiffness(1.0, 0.3);
  CHECK((ke - oracle).cwiseAbs().maxCoeff() < 1e-12);

  SUBCASE("other Poisson ratios") {
    for (double nu : {0.0, 0.25, 0.45}) {
      ElementMatrix k = element_stiffness(Material{2.5, 2.5, nu});
      CHECK((k - gauss_stiffness(2.5, nu)).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("element stiffness symmetry and rigid-body modes") {
  ElementMatrix ke = element_stiffness(Material{1.0, 1.0, 0.3});
  CHECK((ke - ke.transpose()).cwiseAbs().maxCoeff() < 1e-14);

  Eigen::Matrix<double, 8, 1> tx, ty, rot;
  const double xs[4] = {0, 1, 1, 0}, ys[4] = {0, 0, 1, 1};
  for (int a = 0; a < 4; ++a) {
    tx(2 * a) = 1.0;
    tx(2 * a + 1) = 0.0;
    ty(2 * a) = 0.0;
    ty(2 * a + 1) = 1.0;
    rot(2 * a) = -ys[a];
    rot(2 * a + 1) = xs[a];
  }
  CHECK((ke * tx).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((ke * ty).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((ke * rot).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("SIMP interpolation endpoints and midpoint") {
  Grid g{2, 2};
  Material mat;
  std::vector<std::uint8_t> fixed(g.dof_count(), 0);
  fixed[0] = 1;

  auto scale_of = [&](double rho_val, double penalty) {
    DensityField rho = DensityField::constant(g, rho_val);
    StiffnessOperator K(g, mat, rho, penalty, fixed);
    return K;
  };

  // rho=1 equals assembly at E0; rho=0 equals Emin; rho=0.5 is the cube law
  Eigen::MatrixXd k1 = testutil::densify(scale_of(1.0, 3.0), g.dof_count());
  Eigen::MatrixXd k0 = testutil::densify(scale_of(0.0, 3.0), g.dof_count());
  Eigen::MatrixXd kh = testutil::densify(scale_of(0.5, 3.0), g.dof_count());
  const double s1 = mat.E0;
  const double s0 = mat.Emin;
  const double sh = mat.Emin + 0.125 * (mat.E0 - mat.Emin);
  // off the fixed DOF the operators are exact scalar multiples of each other
  for (int i = 1; i < g.dof_count(); ++i)
    for (int j = 1; j < g.dof_count(); ++j) {
      CHECK(k0(i, j) == doctest::Approx(k1(i, j) * s0 / s1).epsilon(1e-12));
      CHECK(kh(i, j) == doctest::Approx(k1(i, j) * sh / s1).epsilon(1e-12));
    }
}

TEST_CASE("boundary sites cover the expected nodes") {
  Grid g{4, 4};
  CHECK(BoundarySpec::site_nodes(g, 0) == std::vector<int>{g.node(0, 0)});
  CHECK(BoundarySpec::site_nodes(g, 1) == std::vector<int>{g.node(4, 0)});
  CHECK(BoundarySpec::site_nodes(g, 2) == std::vector<int>{g.node(4, 4)});
  CHECK(BoundarySpec::site_nodes(g, 3) == std::vector<int>{g.node(0, 4)});
  CHECK(BoundarySpec::site_nodes(g, 4) == std::vector<int>{g.node(2, 0)});
  CHECK(BoundarySpec::site_nodes(g, 7) == std::vector<int>{g.node(0, 2)});
  // half-edge runs are inclusive corner..midpoint ranges
  auto run = BoundarySpec::site_nodes(g, 8);  // bottom-left
  CHECK(run == std::vector<int>{g.node(0, 0), g.node(1, 0), g.node(2, 0)});
  auto top_left = BoundarySpec::site_nodes(g, 13);
  CHECK(top_left.size() == 3);
  for (int node : top_left) {
    int found = 0;
    for (int x = 0; x <= 2; ++x)
      if (node == g.node(x, 4)) found = 1;
    CHECK(found == 1);
  }

  SUBCASE("every site lies on the boundary") {
    for (int s = 0; s < 16; ++s)
      for (int node : BoundarySpec::site_nodes(g, s)) {
        const int x = node / (g.nely + 1), y = node % (g.nely + 1);
        CHECK((x == 0 || x == g.nelx || y == 0 || y == g.nely));
      }
  }
}

TEST_CASE("point load node selection") {
  Grid g{4, 4};
  CHECK(PointLoad{0, 0}.node(g) == g.node(0, 0));
  CHECK(PointLoad{3, 0}.node(g) == g.node(4, 0));    // right edge -> ex+1
  CHECK(PointLoad{3, 3}.node(g) == g.node(4, 4));    // top-right corner
  CHECK(PointLoad{0, 3}.node(g) == g.node(0, 4));    // top edge -> ey+1
  CHECK(PointLoad{1, 0}.node(g) == g.node(1, 0));    // bottom edge, lower tie
  CHECK(PointLoad{3, 1}.node(g) == g.node(4, 1));    // right edge
}

TEST_CASE("load angles are multiples of 60 degrees") {
  for (int a = 0; a < 6; ++a) {
    PointLoad load = PointLoad::from_angle(0, 0, a);
    const double theta = a * M_PI / 3.0;
    CHECK(load.fx == doctest::Approx(std::cos(theta)).epsilon(1e-12));
    CHECK(load.fy == doctest::Approx(std::sin(theta)).epsilon(1e-12));
    CHECK(load.magnitude() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("static solve matches dense LU oracle on small grids") {
  Rng rng(7);
  for (int trial = 0; trial < 6; ++trial) {
    const int nx = 1 + static_cast<int>(rng.uniform_int(8));
    const int ny = 1 + static_cast<int>(rng.uniform_int(8));
    Grid g{nx, ny};
    Material mat;
    BoundarySpec bc;
    bc.mask = static_cast<std::uint16_t>(1u << 15);  // left-bottom run
    DensityField rho = DensityField::constant(g, 1.0);
    for (auto& r : rho.rho) r = rng.uniform(0.3, 1.0);
    PointLoad load = PointLoad::from_angle(nx - 1, ny - 1,
                                           static_cast<int>(rng.uniform_int(6)));
    const auto fixed = bc.fixed_dofs(g);
    StiffnessOperator K(g, mat, rho, 3.0, fixed);
    DisplacementField u = solve_static(g, bc, load, K, 1e-12);
    auto oracle = testutil::dense_lu_solve(g, mat, rho, 3.0, fixed,
                                           load.force_vector(g));
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      num += (u.u[i] - oracle[i]) * (u.u[i] - oracle[i]);
      den += oracle[i] * oracle[i];
    }
    CHECK(std::sqrt(num / den) < 1e-10);
  }
}

TEST_CASE("2x1 cantilever tip displacement matches the dense oracle") {
  Grid g{2, 1};
  Material mat;
  BoundarySpec bc;
  bc.mask = (1u << 15) | (1u << 14);  // whole left edge
  DensityField rho = DensityField::constant(g, 1.0);
  PointLoad load{1, 0, 0.0, -1.0, -1};
  const auto fixed = bc.fixed_dofs(g);
  StiffnessOperator K(g, mat, rho, 3.0, fixed);
  DisplacementField u = solve_static(g, bc, load, K, 1e-12);
  auto oracle = testutil::dense_lu_solve(g, mat, rho, 3.0, fixed,
                                         load.force_vector(g));
  const int tip = 2 * load.node(g) + 1;
  CHECK(u.u[tip] == doctest::Approx(oracle[tip]).epsilon(1e-10));
  CHECK(u.u[tip] < 0.0);
}

TEST_CASE("solve properties: zero load, linearity, fixed DOFs") {
  Grid g{4, 3};
  BoundarySpec bc;
  bc.mask = 1u << 15;  // left-bottom half edge (several nodes: well posed)
  DensityField rho = DensityField::constant(g, 1.0);
  const auto fixed = bc.fixed_dofs(g);
  StiffnessOperator K(g, Material{}, rho, 3.0, fixed);

  PointLoad zero{3, 2, 0.0, 0.0, -1};
  DisplacementField u0 = solve_static(g, bc, zero, K);
  for (double v : u0.u) CHECK(v == 0.0);

  PointLoad load{3, 2, 0.7, -0.4, -1};
  DisplacementField u1 = solve_static(g, bc, load, K, 1e-12);
  for (double alpha : {-1.0, 2.0, 10.0}) {
    PointLoad scaled{3, 2, alpha * 0.7, alpha * -0.4, -1};
    DisplacementField ua = solve_static(g, bc, scaled, K, 1e-12);
    for (std::size_t i = 0; i < ua.u.size(); ++i)
      CHECK(ua.u[i] == doctest::Approx(alpha * u1.u[i]).epsilon(1e-6));
  }
  for (int node : bc.fixed_nodes(g)) {
    CHECK(u1.u[2 * node] == 0.0);
    CHECK(u1.u[2 * node + 1] == 0.0);
  }
}

TEST_CASE("unconstrained system raises instead of returning NaN") {
  Grid g{2, 2};
  BoundarySpec bc;  // no fixed sites
  DensityField rho = DensityField::constant(g, 1.0);
  StiffnessOperator K(g, Material{}, rho, 3.0, bc.fixed_dofs(g));
  CHECK_THROWS(solve_static(g, bc, PointLoad{1, 1, 1.0, 0.0, 0}, K));
}

TEST_CASE("compliance forms agree: f^T u == u^T K u") {
  Grid g{5, 4};
  BoundarySpec bc;
  bc.mask = 1u << 8;
  DensityField rho = DensityField::constant(g, 1.0);
  Rng rng(3);
  for (auto& r : rho.rho) r = rng.uniform(0.4, 1.0);
  const auto fixed = bc.fixed_dofs(g);
  StiffnessOperator K(g, Material{}, rho, 3.0, fixed);
  PointLoad load{4, 3, 0.6, 0.8, -1};
  DisplacementField u = solve_static(g, bc, load, K, 1e-12);
  auto f = load.force_vector(g);
  const double c_fu = compliance(u.u, f);
  std::vector<double> ku(u.u.size());
  K.apply(u.u.data(), ku.data());
  const double c_uku = compliance(u.u, ku);
  CHECK(c_fu >= 0.0);
  CHECK(c_fu == doctest::Approx(c_uku).epsilon(1e-8));

  SUBCASE("stiffer material strictly lowers compliance") {
    StiffnessOperator K2(g, Material{2.0, 2e-9, 0.3}, rho, 3.0, fixed);
    DisplacementField u2 = solve_static(g, bc, load, K2, 1e-12);
    CHECK(compliance(u2.u, f) < c_fu);
  }
}

TEST_CASE("element field closed forms") {
  // impose homogeneous strain states directly and check the stress recovery
  Grid g{1, 1};
  Material mat{1.0, 1.0, 0.3};
  const double E = mat.E0, nu = mat.nu;

  auto fields_for = [&](double exx, double eyy, double gxy) {
    DisplacementField u;
    u.u.assign(g.dof_count(), 0.0);
    const double xs[4] = {0, 1, 1, 0}, ys[4] = {0, 0, 1, 1};
    const int corner_node[4] = {g.node(0, 0), g.node(1, 0), g.node(1, 1),
                                g.node(0, 1)};
    for (int a = 0; a < 4; ++a) {
      u.u[2 * corner_node[a]] = exx * xs[a] + gxy * ys[a];
      u.u[2 * corner_node[a] + 1] = eyy * ys[a];
    }
    return element_fields(g, mat, u);
  };

  SUBCASE("uniaxial stress") {
    // sigma_x = s, sigma_y = 0 needs eyy = -nu*exx
    const double exx = 0.01;
    FieldImage f = fields_for(exx, -nu * exx, 0.0);
    const double s = E * exx;
    CHECK(f.vm[0] == doctest::Approx(std::abs(s)).epsilon(1e-10));
    CHECK(f.sed[0] == doctest::Approx(s * s / (2.0 * E)).epsilon(1e-10));
  }
  SUBCASE("equibiaxial stress") {
    const double e = 0.01;  // exx = eyy = e gives sigma_x = sigma_y
    FieldImage f = fields_for(e, e, 0.0);
    const double s = E / (1.0 - nu) * e;
    CHECK(f.vm[0] == doctest::Approx(std::abs(s)).epsilon(1e-10));
  }
  SUBCASE("pure shear") {
    const double gxy = 0.02;
    FieldImage f = fields_for(0.0, 0.0, gxy);
    const double tau = E / (2.0 * (1.0 + nu)) * gxy;
    CHECK(f.vm[0] == doctest::Approx(std::sqrt(3.0) * std::abs(tau)).epsilon(1e-10));
  }
}

TEST_CASE("patch test: uniform vertical stress on a fixed-bottom 2x2 grid") {
  Grid g{2, 2};
  Material mat;
  // fix the whole bottom edge
  BoundarySpec bc;
  bc.mask = (1u << 8) | (1u << 9);
  const auto fixed_nodes = bc.fixed_nodes(g);
  CHECK(fixed_nodes.size() == 3);
  // fix only vertical DOFs except one node to avoid Poisson locking:
  // build the fixed set manually for the traction patch test
  std::vector<std::uint8_t> fixed(g.dof_count(), 0);
  for (int x = 0; x <= g.nelx; ++x) fixed[2 * g.node(x, 0) + 1] = 1;
  fixed[2 * g.node(0, 0)] = 1;

  DensityField rho = DensityField::constant(g, 1.0);
  StiffnessOperator K(g, mat, rho, 3.0, fixed);
  // traction-equivalent nodal loads for unit tension on the top edge
  std::vector<double> f(g.dof_count(), 0.0);
  f[2 * g.node(0, 2) + 1] = 0.5;
  f[2 * g.node(1, 2) + 1] = 1.0;
  f[2 * g.node(2, 2) + 1] = 0.5;

  std::vector<double> u(g.dof_count(), 0.0);
  auto res = pcg(K, K.diagonal(), f, u, 1e-13, 10 * g.dof_count());
  CHECK(res.converged);

  DisplacementField disp{u};
  FieldImage fields = element_fields(g, mat, disp);
  // recover sigma_y per element from vm == |sigma_y| under uniaxial tension
  for (int e = 0; e < g.element_count(); ++e)
    CHECK(fields.vm[e] == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("field normalization") {
  FieldImage raw;
  raw.nelx = 2;
  raw.nely = 2;
  raw.sed = {1.0, 4.0, 2.0, 0.5};
  raw.vm = {0.0, 0.0, 0.0, 0.0};
  FieldImage n = normalize_fields(raw);
  CHECK(n.sed[1] == 1.0);
  CHECK(n.sed[0] == doctest::Approx(0.25));
  for (double v : n.vm) CHECK(v == 0.0);

  SUBCASE("ordering preserved") {
    Rng rng(11);
    FieldImage r2;
    r2.nelx = 4;
    r2.nely = 1;
    r2.sed = testutil::random_vector(rng, 4, 0.1, 9.0);
    r2.vm = testutil::random_vector(rng, 4, 0.1, 9.0);
    FieldImage n2 = normalize_fields(r2);
    for (int i = 0; i < 3; ++i)
      CHECK((r2.sed[i] < r2.sed[i + 1]) == (n2.sed[i] < n2.sed[i + 1]));
  }
  SUBCASE("non-finite input rejected") {
    raw.sed[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS(normalize_fields(raw));
  }
}

TEST_CASE("consistent element mass rows sum to the element mass") {
  ElementMatrix me = element_mass_consistent();
  CHECK((me - me.transpose()).cwiseAbs().maxCoeff() < 1e-15);
  // each DOF direction carries total mass 1 for a unit-density unit square
  for (int i = 0; i < 8; ++i) {
    double row = 0.0;
    for (int j = i % 2; j < 8; j += 2) row += me(i, j);
    CHECK(row == doctest::Approx(0.25).epsilon(1e-12));
  }
}
