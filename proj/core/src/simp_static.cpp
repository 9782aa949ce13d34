#include "topoformer/simp_static.hpp"

#include <cmath>
#include <stdexcept>

namespace topo {

std::vector<double> sensitivities(const Grid& grid, const Material& material,
                                  const DensityField& density,
                                  const DisplacementField& u, double penalty) {
  Material unit = material;
  unit.E0 = 1.0;
  const ElementMatrix ke = element_stiffness(unit);
  std::vector<double> sens(grid.element_count(), 0.0);
  int dofs[8];
  double ue[8];
  for (int ey = 0; ey < grid.nely; ++ey)
    for (int ex = 0; ex < grid.nelx; ++ex) {
      grid.element_dofs(ex, ey, dofs);
      for (int i = 0; i < 8; ++i) ue[i] = u.u[dofs[i]];
      double quad = 0.0;
      for (int i = 0; i < 8; ++i) {
        double acc = 0.0;
        for (int j = 0; j < 8; ++j) acc += ke(i, j) * ue[j];
        quad += ue[i] * acc;
      }
      const int e = grid.element(ex, ey);
      const double rho = density.rho[e];
      sens[e] = -penalty * std::pow(rho, penalty - 1.0) *
                (material.E0 - material.Emin) * quad;
    }
  return sens;
}

std::vector<double> filter_sensitivities(const Grid& grid,
                                         const DensityField& density,
                                         const std::vector<double>& sens,
                                         double rmin) {
  std::vector<double> out(sens.size(), 0.0);
  const int reach = static_cast<int>(std::ceil(rmin)) - 1;
  for (int ey = 0; ey < grid.nely; ++ey)
    for (int ex = 0; ex < grid.nelx; ++ex) {
      double num = 0.0, den = 0.0;
      for (int jy = std::max(0, ey - reach); jy <= std::min(grid.nely - 1, ey + reach); ++jy)
        for (int jx = std::max(0, ex - reach); jx <= std::min(grid.nelx - 1, ex + reach); ++jx) {
          const double dist = std::hypot(double(jx - ex), double(jy - ey));
          const double w = rmin - dist;
          if (w <= 0.0) continue;
          const int j = grid.element(jx, jy);
          num += w * density.rho[j] * sens[j];
          den += w;
        }
      const int e = grid.element(ex, ey);
      out[e] = num / (std::max(1e-3, density.rho[e]) * den);
    }
  return out;
}

DensityField oc_update(const DensityField& density,
                       const std::vector<double>& sens, double volume_fraction,
                       double move_limit, double damping) {
  if (volume_fraction <= 0.0 || volume_fraction >= 1.0)
    throw std::invalid_argument("oc_update: volume fraction must be in (0,1)");
  const std::size_t n = density.rho.size();
  DensityField out = density;
  double steepest = 0.0;
  for (double s : sens) steepest = std::max(steepest, -s);
  if (steepest == 0.0) return out;  // no descent direction, keep the volume

  auto mean_for = [&](double lambda) {
    double s = 0.0;
    for (std::size_t e = 0; e < n; ++e) {
      const double rho = density.rho[e];
      const double be = std::max(0.0, -sens[e]) / lambda;
      double v = rho * std::pow(be, damping);
      v = std::min(v, std::min(1.0, rho + move_limit));
      // floor at 1e-3: fully void elements make the dynamic effective
      // system needlessly ill-conditioned (standard SIMP practice)
      v = std::max(v, std::max(1e-3, rho - move_limit));
      out.rho[e] = v;
      s += v;
    }
    return s / static_cast<double>(n);
  };

  // Bracket the multiplier relative to the steepest sensitivity so the
  // bisection is invariant to the objective's overall scale.
  double lo = steepest * 1e-12, hi = steepest * 1e12;
  // mean is decreasing in lambda; bisect until volume matches
  for (int it = 0; it < 200 && (hi - lo) / (lo + hi) > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mean_for(mid) > volume_fraction)
      lo = mid;
    else
      hi = mid;
  }
  mean_for(0.5 * (lo + hi));
  if (std::fabs(out.mean() - volume_fraction) > 1e-4) {
    // Fall back to geometric bisection bracketed by the full sensitivity
    // range; impulse-type objectives can spread |sens| over hundreds of
    // orders of magnitude, putting the multiplier far from the steepest
    // scale.
    double tiniest = steepest;
    for (double s : sens)
      if (-s > 0.0) tiniest = std::min(tiniest, -s);
    double glo = std::log(tiniest) - 60.0, ghi = std::log(steepest) + 60.0;
    for (int it = 0; it < 300; ++it) {
      const double mid = std::exp(0.5 * (glo + ghi));
      if (mean_for(mid) > volume_fraction)
        glo = std::log(mid);
      else
        ghi = std::log(mid);
    }
    mean_for(std::exp(0.5 * (glo + ghi)));
  }
  return out;
}

OptimizeResult optimize_static(const StaticProblem& problem,
                               const OptimizerConfig& config) {
  const Grid& grid = problem.grid;
  OptimizeResult result;
  result.density = DensityField::constant(grid, config.volume_fraction);

  const auto fixed = problem.bc.fixed_dofs(grid);
  const std::vector<double> f = problem.load.force_vector(grid);
  std::vector<double> warm(grid.dof_count(), 0.0);

  for (int it = 0; it < config.max_iterations; ++it) {
    StiffnessOperator K(grid, problem.material, result.density, config.penalty, fixed);
    DisplacementField u = solve_static(grid, problem.bc, problem.load, K, 1e-8, &warm);
    warm = u.u;
    const double c = compliance(u.u, f);
    result.compliance_history.push_back(c);

    auto sens = sensitivities(grid, problem.material, result.density, u, config.penalty);
    sens = filter_sensitivities(grid, result.density, sens, config.filter_radius);
    result.density = oc_update(result.density, sens, config.volume_fraction,
                               config.move_limit, config.oc_damping);

    if (it > 0) {
      const double prev = result.compliance_history[it - 1];
      if (std::fabs(c - prev) <= config.tolerance * std::fabs(prev)) {
        result.converged = true;
        break;
      }
    }
    if (!std::isfinite(config.tolerance)) break;  // epsilon = inf: stop after one pass
  }
  if (!std::isfinite(config.tolerance)) result.converged = true;
  return result;
}

DensityField heaviside_binarize(const DensityField& density, double threshold) {
  DensityField out = density;
  for (double& v : out.rho) v = (v >= threshold) ? 1.0 : 0.0;
  return out;
}

DensityField binarize_volume_preserving(const DensityField& density,
                                        double volume_fraction) {
  DensityField out = heaviside_binarize(density, 0.5);
  if (std::fabs(out.mean() - volume_fraction) <= 0.02) return out;
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    out = heaviside_binarize(density, mid);
    const double err = out.mean() - volume_fraction;
    if (std::fabs(err) <= 0.01) return out;
    if (err > 0.0)
      lo = mid;  // too much material: raise threshold
    else
      hi = mid;
  }
  return out;  // discrete volume may not reach 1%; closest threshold wins
}

}  // namespace topo
