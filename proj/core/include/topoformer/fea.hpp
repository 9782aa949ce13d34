#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace topo {

/// Regular grid of unit square bilinear quad elements.
///
/// Conventions (fixed throughout the project):
///  - nodes are numbered column-major with y fastest: node(x, y) = x*(nely+1) + y
///  - element (ex, ey) has corner nodes CCW from lower-left:
///    (ex,ey), (ex+1,ey), (ex+1,ey+1), (ex,ey+1)
///  - DOFs are (2*node, 2*node+1) for (ux, uy)
///  - element images are row-major with y as the row index: pixel = ey*nelx + ex
struct Grid {
  int nelx = 1;
  int nely = 1;

  int node_count() const { return (nelx + 1) * (nely + 1); }
  int dof_count() const { return 2 * node_count(); }
  int element_count() const { return nelx * nely; }
  int node(int x, int y) const { return x * (nely + 1) + y; }
  int element(int ex, int ey) const { return ey * nelx + ex; }

  /// The 8 global DOF indices of element (ex, ey), CCW from lower-left.
  void element_dofs(int ex, int ey, int out[8]) const;
};

struct Material {
  double E0 = 1.0;
  double Emin = 1e-9;
  double nu = 0.3;
};

/// 16 canonical fixture sites on the domain boundary: 4 corner nodes,
/// 4 edge-midpoint nodes, and 8 half-edge node runs between each corner and
/// its adjacent midpoint (inclusive). Each site fixes both x and y DOFs.
///
/// Bit layout of the mask:
///   0..3   corners: BL, BR, TR, TL
///   4..7   midpoints: bottom, right, top, left
///   8..15  half-edge runs: bottom-left, bottom-right, right-bottom,
///          right-top, top-right, top-left, left-top, left-bottom
struct BoundarySpec {
  std::uint16_t mask = 0;

  int site_count() const;
  /// Nodes belonging to site `s` (0..15) on `grid`.
  static std::vector<int> site_nodes(const Grid& grid, int s);
  /// Sorted unique fixed node indices for this mask.
  std::vector<int> fixed_nodes(const Grid& grid) const;
  /// Per-DOF fixed flags (length = dof_count).
  std::vector<std::uint8_t> fixed_dofs(const Grid& grid) const;
};

/// Unit point load applied at a boundary element's boundary corner node.
/// The force vector (fx, fy) is stored explicitly so that augmented samples
/// whose angle leaves the canonical 6-angle set remain representable;
/// angle_index is kept for provenance (-1 when not one of the 6 angles).
struct PointLoad {
  int ex = 0;
  int ey = 0;
  double fx = 1.0;
  double fy = 0.0;
  int angle_index = 0;

  double magnitude() const;
  /// The node the force acts on: the element corner on the domain boundary
  /// (outermost corner for corner elements; for edge elements the corner
  /// nearest the domain edge, ties broken toward lower node coordinates).
  int node(const Grid& grid) const;
  /// Global force vector (length = dof_count).
  std::vector<double> force_vector(const Grid& grid) const;

  static PointLoad from_angle(int ex, int ey, int angle_index, double magnitude = 1.0);
};

/// Per-element density in [0, 1], image layout (row-major, y as rows).
struct DensityField {
  int nelx = 0;
  int nely = 0;
  std::vector<double> rho;

  static DensityField constant(const Grid& g, double value);
  double mean() const;
};

/// Two-channel per-element image: strain energy density and von Mises stress.
struct FieldImage {
  int nelx = 0;
  int nely = 0;
  std::vector<double> sed;
  std::vector<double> vm;
};

struct DisplacementField {
  std::vector<double> u;
};

using ElementMatrix = Eigen::Matrix<double, 8, 8>;

/// Closed-form plane-stress Q4 stiffness for a unit square element,
/// KE = E/(1-nu^2) * (A + nu*B) with rational tables A, B.
ElementMatrix element_stiffness(const Material& material);

/// Consistent mass matrix of a solid unit square element with unit density.
ElementMatrix element_mass_consistent();

/// Matrix-free global stiffness with SIMP interpolation
/// E_e = Emin + rho_e^p (E0 - Emin). Fixed DOFs are eliminated by
/// projection: fixed rows/columns act as identity.
class StiffnessOperator {
 public:
  StiffnessOperator(const Grid& grid, const Material& material,
                    const DensityField& density, double penalty,
                    std::vector<std::uint8_t> fixed);

  void apply(const double* x, double* y) const;
  const std::vector<double>& diagonal() const { return diag_; }
  const Grid& grid() const { return grid_; }
  const std::vector<std::uint8_t>& fixed() const { return fixed_; }

 private:
  Grid grid_;
  ElementMatrix ke_;
  std::vector<double> scale_;  // per-element E_e
  std::vector<std::uint8_t> fixed_;
  std::vector<double> diag_;
};

struct PcgResult {
  int iterations = 0;
  double relative_residual = 0.0;
  bool converged = false;
};

/// Jacobi-preconditioned conjugate gradient. `x` holds the initial guess on
/// entry and the solution on exit. Convergence: ||b - Ax|| < tol * ||b||.
template <typename Op>
PcgResult pcg(const Op& A, const std::vector<double>& diag,
              const std::vector<double>& b, std::vector<double>& x,
              double tol, int max_iter, double atol = 0.0) {
  const std::size_t n = b.size();
  std::vector<double> r(n), z(n), p(n), q(n);

  double bnorm = 0.0;
  for (std::size_t i = 0; i < n; ++i) bnorm += b[i] * b[i];
  bnorm = std::sqrt(bnorm);
  if (bnorm == 0.0) {
    std::fill(x.begin(), x.end(), 0.0);
    return {0, 0.0, true};
  }

  A.apply(x.data(), q.data());
  for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - q[i];

  auto precond = [&](const std::vector<double>& in, std::vector<double>& out) {
    for (std::size_t i = 0; i < n; ++i)
      out[i] = diag[i] > 0.0 ? in[i] / diag[i] : in[i];
  };

  precond(r, z);
  p = z;
  double rz = 0.0, rnorm2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    rz += r[i] * z[i];
    rnorm2 += r[i] * r[i];
  }

  // Stop on either the relative criterion or an absolute floor.  The floor
  // matters for transient solves whose right-hand side decays to near zero
  // (e.g. late steps of an impulse response): the relative tolerance becomes
  // unreachable in finite precision even though the residual is negligible
  // against the problem's force scale.
  const double stop = std::max(tol * bnorm, atol);
  PcgResult res;
  res.relative_residual = std::sqrt(rnorm2) / bnorm;
  if (std::sqrt(rnorm2) < stop) {
    res.converged = true;
    return res;
  }

  for (int it = 1; it <= max_iter; ++it) {
    A.apply(p.data(), q.data());
    double pq = 0.0;
    for (std::size_t i = 0; i < n; ++i) pq += p[i] * q[i];
    if (pq <= 0.0) {
      // Rounding breakdown (or a genuinely indefinite operator).  Accept the
      // iterate if the residual already sits below the absolute floor.
      res.converged = std::sqrt(rnorm2) < stop;
      break;
    }
    const double alpha = rz / pq;
    rnorm2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * q[i];
      rnorm2 += r[i] * r[i];
    }
    res.iterations = it;
    res.relative_residual = std::sqrt(rnorm2) / bnorm;
    if (std::sqrt(rnorm2) < stop) {
      res.converged = true;
      return res;
    }
    precond(r, z);
    double rz_new = 0.0;
    for (std::size_t i = 0; i < n; ++i) rz_new += r[i] * z[i];
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  return res;
}

/// Solves K u = f for the load with the boundary conditions applied.
/// Throws std::runtime_error if the reduced system does not converge
/// (insufficient constraints / disconnected load).
DisplacementField solve_static(const Grid& grid, const BoundarySpec& bc,
                               const PointLoad& load, const StiffnessOperator& K,
                               double tol = 1e-8,
                               const std::vector<double>* warm_start = nullptr);

/// Compliance C = f^T u.
double compliance(const std::vector<double>& u, const std::vector<double>& f);

/// Per-element strain energy density and von Mises stress at element centers,
/// evaluated on the solid material (not normalized).
FieldImage element_fields(const Grid& grid, const Material& material,
                          const DisplacementField& u);

/// Divides each channel by its own maximum; an all-zero channel stays zero.
/// Throws std::invalid_argument on NaN/Inf input.
FieldImage normalize_fields(const FieldImage& raw);

}  // namespace topo
