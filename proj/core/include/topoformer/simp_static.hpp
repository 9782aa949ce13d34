#pragma once

#include <vector>

#include "topoformer/fea.hpp"

namespace topo {

struct OptimizerConfig {
  double penalty = 3.0;
  double volume_fraction = 0.4;
  double filter_radius = 1.5;   // elements
  double move_limit = 0.2;
  double tolerance = 1e-3;      // relative compliance change
  int max_iterations = 300;
  double oc_damping = 0.5;
};

/// dC/drho_e = -p rho_e^(p-1) (E0-Emin) u_e^T Ke u_e  (always <= 0).
std::vector<double> sensitivities(const Grid& grid, const Material& material,
                                  const DensityField& density,
                                  const DisplacementField& u, double penalty);

/// Density-weighted sensitivity filter with conic weights max(0, rmin - dist).
std::vector<double> filter_sensitivities(const Grid& grid,
                                         const DensityField& density,
                                         const std::vector<double>& sens,
                                         double rmin);

/// Optimality-criteria update with bisection on the volume multiplier.
/// Requires sens <= 0 elementwise; result satisfies |mean(rho) - f| <= 1e-4.
DensityField oc_update(const DensityField& density,
                       const std::vector<double>& sens, double volume_fraction,
                       double move_limit, double damping = 0.5);

struct OptimizeResult {
  DensityField density;
  std::vector<double> compliance_history;
  bool converged = false;
};

struct StaticProblem {
  Grid grid;
  Material material;
  BoundarySpec bc;
  PointLoad load;
};

OptimizeResult optimize_static(const StaticProblem& problem,
                               const OptimizerConfig& config);

/// Thresholds to {0,1} with the >= convention.
DensityField heaviside_binarize(const DensityField& density, double threshold);

/// Binarize at 0.5; if the binary volume moves more than 2% from
/// `volume_fraction`, re-bisect the threshold until it is within 1%.
DensityField binarize_volume_preserving(const DensityField& density,
                                        double volume_fraction);

}  // namespace topo
