#include "topoformer/fea.hpp"

#include <cmath>
#include <stdexcept>

namespace topo {

void Grid::element_dofs(int ex, int ey, int out[8]) const {
  const int n1 = node(ex, ey);
  const int n2 = node(ex + 1, ey);
  const int n3 = node(ex + 1, ey + 1);
  const int n4 = node(ex, ey + 1);
  out[0] = 2 * n1;
  out[1] = 2 * n1 + 1;
  out[2] = 2 * n2;
  out[3] = 2 * n2 + 1;
  out[4] = 2 * n3;
  out[5] = 2 * n3 + 1;
  out[6] = 2 * n4;
  out[7] = 2 * n4 + 1;
}

namespace {

// KE = E/(1-nu^2) * (A + nu*B); exact for the unit square bilinear quad in
// plane stress, DOFs CCW from lower-left. Derived symbolically once.
// clang-format off
constexpr double kA[8][8] = {
  { 1./2.,  1./8., -1./4., -1./8., -1./4., -1./8.,  0.,     1./8.},
  { 1./8.,  1./2.,  1./8.,  0.,    -1./8., -1./4., -1./8., -1./4.},
  {-1./4.,  1./8.,  1./2., -1./8.,  0.,    -1./8., -1./4.,  1./8.},
  {-1./8.,  0.,    -1./8.,  1./2.,  1./8., -1./4.,  1./8., -1./4.},
  {-1./4., -1./8.,  0.,     1./8.,  1./2.,  1./8., -1./4., -1./8.},
  {-1./8., -1./4., -1./8., -1./4.,  1./8.,  1./2.,  1./8.,  0.},
  { 0.,    -1./8., -1./4.,  1./8., -1./4.,  1./8.,  1./2., -1./8.},
  { 1./8., -1./4.,  1./8., -1./4., -1./8.,  0.,    -1./8.,  1./2.},
};
constexpr double kB[8][8] = {
  {-1./6.,   1./8., -1./12.,  3./8.,  1./12., -1./8.,  1./6.,  -3./8.},
  { 1./8.,  -1./6., -3./8.,   1./6., -1./8.,   1./12., 3./8.,  -1./12.},
  {-1./12., -3./8., -1./6.,  -1./8.,  1./6.,   3./8.,  1./12.,  1./8.},
  { 3./8.,   1./6., -1./8.,  -1./6., -3./8.,  -1./12., 1./8.,   1./12.},
  { 1./12., -1./8.,  1./6.,  -3./8., -1./6.,   1./8., -1./12.,  3./8.},
  {-1./8.,   1./12., 3./8.,  -1./12., 1./8.,  -1./6., -3./8.,   1./6.},
  { 1./6.,   3./8.,  1./12.,  1./8., -1./12., -3./8., -1./6.,  -1./8.},
  {-3./8.,  -1./12., 1./8.,   1./12., 3./8.,   1./6., -1./8.,  -1./6.},
};
// clang-format on

}  // namespace

ElementMatrix element_stiffness(const Material& material) {
  ElementMatrix ke;
  const double c = material.E0 / (1.0 - material.nu * material.nu);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      ke(i, j) = c * (kA[i][j] + material.nu * kB[i][j]);
  return ke;
}

ElementMatrix element_mass_consistent() {
  // 1D node-pair weights 4/2/1 (same/adjacent/opposite node), mass/36.
  static constexpr int w[4][4] = {
      {4, 2, 1, 2}, {2, 4, 2, 1}, {1, 2, 4, 2}, {2, 1, 2, 4}};
  ElementMatrix m = ElementMatrix::Zero();
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) {
      m(2 * a, 2 * b) = w[a][b] / 36.0;
      m(2 * a + 1, 2 * b + 1) = w[a][b] / 36.0;
    }
  return m;
}

int BoundarySpec::site_count() const {
  int c = 0;
  for (int s = 0; s < 16; ++s)
    if (mask & (1u << s)) ++c;
  return c;
}

std::vector<int> BoundarySpec::site_nodes(const Grid& g, int s) {
  const int mx = g.nelx / 2;  // midpoint node coordinates
  const int my = g.nely / 2;
  auto run_x = [&](int x0, int x1, int y) {
    std::vector<int> nodes;
    for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x)
      nodes.push_back(g.node(x, y));
    return nodes;
  };
  auto run_y = [&](int y0, int y1, int x) {
    std::vector<int> nodes;
    for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
      nodes.push_back(g.node(x, y));
    return nodes;
  };
  switch (s) {
    case 0: return {g.node(0, 0)};                 // corner BL
    case 1: return {g.node(g.nelx, 0)};            // corner BR
    case 2: return {g.node(g.nelx, g.nely)};       // corner TR
    case 3: return {g.node(0, g.nely)};            // corner TL
    case 4: return {g.node(mx, 0)};                // midpoint bottom
    case 5: return {g.node(g.nelx, my)};           // midpoint right
    case 6: return {g.node(mx, g.nely)};           // midpoint top
    case 7: return {g.node(0, my)};                // midpoint left
    case 8: return run_x(0, mx, 0);                // bottom edge, left half
    case 9: return run_x(mx, g.nelx, 0);           // bottom edge, right half
    case 10: return run_y(0, my, g.nelx);          // right edge, bottom half
    case 11: return run_y(my, g.nely, g.nelx);     // right edge, top half
    case 12: return run_x(mx, g.nelx, g.nely);     // top edge, right half
    case 13: return run_x(0, mx, g.nely);          // top edge, left half
    case 14: return run_y(my, g.nely, 0);          // left edge, top half
    case 15: return run_y(0, my, 0);               // left edge, bottom half
    default: throw std::invalid_argument("BoundarySpec: site out of range");
  }
}

std::vector<int> BoundarySpec::fixed_nodes(const Grid& g) const {
  std::vector<int> nodes;
  for (int s = 0; s < 16; ++s) {
    if (!(mask & (1u << s))) continue;
    auto sn = site_nodes(g, s);
    nodes.insert(nodes.end(), sn.begin(), sn.end());
  }
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  return nodes;
}

std::vector<std::uint8_t> BoundarySpec::fixed_dofs(const Grid& g) const {
  std::vector<std::uint8_t> fixed(g.dof_count(), 0);
  for (int n : fixed_nodes(g)) {
    fixed[2 * n] = 1;
    fixed[2 * n + 1] = 1;
  }
  return fixed;
}

double PointLoad::magnitude() const { return std::hypot(fx, fy); }

int PointLoad::node(const Grid& g) const {
  const bool on_left = ex == 0;
  const bool on_right = ex == g.nelx - 1;
  const bool on_bottom = ey == 0;
  const bool on_top = ey == g.nely - 1;
  if (!(on_left || on_right || on_bottom || on_top))
    throw std::invalid_argument("PointLoad: element is not on the boundary");
  // Corner of the element on the domain boundary; outermost for corner
  // elements, lower coordinate when the choice is free along the edge.
  const int nx = on_right ? ex + 1 : ex;
  const int ny = on_top ? ey + 1 : ey;
  return g.node(nx, ny);
}

std::vector<double> PointLoad::force_vector(const Grid& g) const {
  std::vector<double> f(g.dof_count(), 0.0);
  const int n = node(g);
  f[2 * n] = fx;
  f[2 * n + 1] = fy;
  return f;
}

PointLoad PointLoad::from_angle(int ex, int ey, int angle_index, double magnitude) {
  const double theta = angle_index * (M_PI / 3.0);  // 60 degrees per step
  PointLoad load;
  load.ex = ex;
  load.ey = ey;
  load.fx = magnitude * std::cos(theta);
  load.fy = magnitude * std::sin(theta);
  load.angle_index = angle_index;
  return load;
}

DensityField DensityField::constant(const Grid& g, double value) {
  DensityField d;
  d.nelx = g.nelx;
  d.nely = g.nely;
  d.rho.assign(g.element_count(), value);
  return d;
}

double DensityField::mean() const {
  double s = 0.0;
  for (double v : rho) s += v;
  return rho.empty() ? 0.0 : s / static_cast<double>(rho.size());
}

StiffnessOperator::StiffnessOperator(const Grid& grid, const Material& material,
                                     const DensityField& density, double penalty,
                                     std::vector<std::uint8_t> fixed)
    : grid_(grid), fixed_(std::move(fixed)) {
  if (density.nelx != grid.nelx || density.nely != grid.nely)
    throw std::invalid_argument("assemble_stiffness: density/grid dimension mismatch");
  Material unit = material;
  unit.E0 = 1.0;
  ke_ = element_stiffness(unit);
  scale_.resize(grid.element_count());
  for (int e = 0; e < grid.element_count(); ++e) {
    const double rho = density.rho[e];
    scale_[e] = material.Emin + std::pow(rho, penalty) * (material.E0 - material.Emin);
  }
  // assemble diagonal for the Jacobi preconditioner
  diag_.assign(grid.dof_count(), 0.0);
  int dofs[8];
  for (int ey = 0; ey < grid.nely; ++ey)
    for (int ex = 0; ex < grid.nelx; ++ex) {
      grid.element_dofs(ex, ey, dofs);
      const double s = scale_[grid.element(ex, ey)];
      for (int i = 0; i < 8; ++i) diag_[dofs[i]] += s * ke_(i, i);
    }
  if (!fixed_.empty())
    for (int i = 0; i < grid.dof_count(); ++i)
      if (fixed_[i]) diag_[i] = 1.0;
}

void StiffnessOperator::apply(const double* x, double* y) const {
  const int ndof = grid_.dof_count();
  std::fill(y, y + ndof, 0.0);
  int dofs[8];
  double xe[8];
  for (int ey = 0; ey < grid_.nely; ++ey)
    for (int ex = 0; ex < grid_.nelx; ++ex) {
      grid_.element_dofs(ex, ey, dofs);
      const double s = scale_[grid_.element(ex, ey)];
      for (int i = 0; i < 8; ++i) {
        const double xi = x[dofs[i]];
        xe[i] = (!fixed_.empty() && fixed_[dofs[i]]) ? 0.0 : xi;
      }
      for (int i = 0; i < 8; ++i) {
        if (!fixed_.empty() && fixed_[dofs[i]]) continue;
        double acc = 0.0;
        for (int j = 0; j < 8; ++j) acc += ke_(i, j) * xe[j];
        y[dofs[i]] += s * acc;
      }
    }
  if (!fixed_.empty())
    for (int i = 0; i < ndof; ++i)
      if (fixed_[i]) y[i] = x[i];
}

DisplacementField solve_static(const Grid& grid, const BoundarySpec& bc,
                               const PointLoad& load, const StiffnessOperator& K,
                               double tol, const std::vector<double>* warm_start) {
  if (bc.site_count() == 0)
    throw std::runtime_error("solve_static: no boundary conditions (singular system)");
  std::vector<double> f = load.force_vector(grid);
  const auto& fixed = K.fixed();
  for (int i = 0; i < grid.dof_count(); ++i)
    if (fixed[i]) f[i] = 0.0;

  DisplacementField u;
  u.u.assign(grid.dof_count(), 0.0);
  if (warm_start && warm_start->size() == u.u.size()) u.u = *warm_start;
  for (int i = 0; i < grid.dof_count(); ++i)
    if (fixed[i]) u.u[i] = 0.0;

  const int cap = 10 * grid.dof_count();
  PcgResult res = pcg(K, K.diagonal(), f, u.u, tol, cap);
  if (!res.converged)
    throw std::runtime_error(
        "solve_static: PCG did not converge (relative residual " +
        std::to_string(res.relative_residual) +
        "); system may be singular or insufficiently constrained");
  return u;
}

double compliance(const std::vector<double>& u, const std::vector<double>& f) {
  double c = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) c += u[i] * f[i];
  return c;
}

FieldImage element_fields(const Grid& grid, const Material& material,
                          const DisplacementField& u) {
  FieldImage img;
  img.nelx = grid.nelx;
  img.nely = grid.nely;
  img.sed.assign(grid.element_count(), 0.0);
  img.vm.assign(grid.element_count(), 0.0);

  // B matrix at the element center (xi = eta = 0) for the unit square:
  // dN/dx = 2*dN/dxi. Constitutive matrix D for plane stress.
  const double E = material.E0;
  const double nu = material.nu;
  const double d = E / (1.0 - nu * nu);
  // node order CCW from lower-left; dN/dx, dN/dy at center
  const double dNdx[4] = {-0.5, 0.5, 0.5, -0.5};
  const double dNdy[4] = {-0.5, -0.5, 0.5, 0.5};

  int dofs[8];
  for (int ey = 0; ey < grid.nely; ++ey)
    for (int ex = 0; ex < grid.nelx; ++ex) {
      grid.element_dofs(ex, ey, dofs);
      double exx = 0.0, eyy = 0.0, gxy = 0.0;
      for (int a = 0; a < 4; ++a) {
        const double ux = u.u[dofs[2 * a]];
        const double uy = u.u[dofs[2 * a + 1]];
        exx += dNdx[a] * ux;
        eyy += dNdy[a] * uy;
        gxy += dNdy[a] * ux + dNdx[a] * uy;
      }
      const double sx = d * (exx + nu * eyy);
      const double sy = d * (nu * exx + eyy);
      const double txy = d * (1.0 - nu) / 2.0 * gxy;
      const int e = grid.element(ex, ey);
      img.sed[e] = 0.5 * (sx * exx + sy * eyy + txy * gxy);
      img.vm[e] = std::sqrt(sx * sx - sx * sy + sy * sy + 3.0 * txy * txy);
    }
  return img;
}

FieldImage normalize_fields(const FieldImage& raw) {
  auto normalize = [](const std::vector<double>& in) {
    double mx = 0.0;
    for (double v : in) {
      if (!std::isfinite(v))
        throw std::invalid_argument("normalize_fields: non-finite value in field");
      mx = std::max(mx, v);
    }
    std::vector<double> out(in.size());
    if (mx == 0.0) return out;
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] / mx;
    return out;
  };
  FieldImage img;
  img.nelx = raw.nelx;
  img.nely = raw.nely;
  img.sed = normalize(raw.sed);
  img.vm = normalize(raw.vm);
  return img;
}

}  // namespace topo
