#pragma once

#include <functional>
#include <vector>

#include "topoformer/fea.hpp"
#include "topoformer/simp_static.hpp"

namespace topo {

struct TimeGrid {
  double t_end = 1.0;
  int n_steps = 200;
  double dt() const { return t_end / n_steps; }
};

enum class LoadShape { kSine, kImpulse };

/// Magnitude profile g(t): sine = sin(2*pi*t); impulse = (t/0.25) e^(-t/0.25 + 1).
double load_shape_value(LoadShape shape, double t);

struct DynamicLoad {
  PointLoad base;
  LoadShape shape = LoadShape::kSine;

  /// g(t_i) at each time node i = 0..n_steps.
  std::vector<double> samples(const TimeGrid& tg) const;
};

enum class MassMode { kLumped, kConsistent };

struct DynamicsConfig {
  double rayleigh_alpha = 0.1;
  double rayleigh_beta = 0.02;
  double newmark_beta = 0.25;
  double newmark_gamma = 0.5;
  MassMode mass_mode = MassMode::kLumped;
  TimeGrid time;
  // optional design-dependent element damping c(rho) = c_min + rho^p (c_0 - c_min)
  bool element_damping = false;
  double c_min = 0.0;
  double c_0 = 0.0;
  double damping_penalty = 3.0;
};

/// Global mass with unpenalized (linear in rho) element mass; lumped mode is
/// diagonal with m_e/4 per node per DOF, consistent mode uses the full NtN
/// integral.
class MassOperator {
 public:
  MassOperator(const Grid& grid, const DensityField& density, MassMode mode);

  void apply(const double* x, double* y) const;
  const std::vector<double>& diagonal() const { return diag_; }
  bool is_diagonal() const { return mode_ == MassMode::kLumped; }

 private:
  Grid grid_;
  MassMode mode_;
  std::vector<double> mass_;  // per-element total mass
  std::vector<double> diag_;
  ElementMatrix me_;
};

/// C = alpha*M + beta*K, with an optional design-dependent element damping
/// term c(rho_e) * Ke^unit added per element.
class DampingOperator {
 public:
  DampingOperator(const MassOperator& M, const StiffnessOperator& K,
                  double alpha, double beta);
  DampingOperator(const Grid& grid, const MassOperator& M, const StiffnessOperator& K,
                  double alpha, double beta, const DensityField& density,
                  double c_min, double c_0, double penalty);

  void apply(const double* x, double* y) const;
  const std::vector<double>& diagonal() const { return diag_; }

 private:
  const MassOperator* mass_;
  const StiffnessOperator* stiffness_;
  double alpha_;
  double beta_;
  std::vector<double> diag_;
  // element damping (empty when disabled)
  Grid grid_;
  std::vector<double> c_scale_;
  ElementMatrix ke_unit_;
};

struct NewmarkResult {
  /// Displacement history u(t_i), i = 0..n_steps (row i = full DOF vector).
  std::vector<std::vector<double>> u;
  /// Matching velocity history.
  std::vector<std::vector<double>> v;
};

/// Average-acceleration Newmark integration with zero initial displacement
/// and velocity. Fixed DOFs stay zero. Throws on a singular effective matrix.
NewmarkResult newmark_integrate(const MassOperator& M, const DampingOperator& C,
                                const StiffnessOperator& K,
                                const std::vector<double>& static_force,
                                const std::vector<double>& g_samples,
                                const TimeGrid& tg,
                                const std::vector<std::uint8_t>& fixed,
                                double newmark_beta = 0.25,
                                double newmark_gamma = 0.5,
                                double solver_tol = 1e-8);

/// Variant with explicit initial conditions, used by the SDOF validation tests.
NewmarkResult newmark_integrate_ic(const MassOperator& M, const DampingOperator& C,
                                   const StiffnessOperator& K,
                                   const std::vector<double>& static_force,
                                   const std::vector<double>& g_samples,
                                   const TimeGrid& tg,
                                   const std::vector<std::uint8_t>& fixed,
                                   const std::vector<double>& u0,
                                   const std::vector<double>& v0,
                                   double newmark_beta = 0.25,
                                   double newmark_gamma = 0.5,
                                   double solver_tol = 1e-8);

/// C_dyn = sum_i f(t_i)^T u(t_i) dt. Throws on history length mismatch.
double dynamic_compliance(const std::vector<std::vector<double>>& f_hist,
                          const std::vector<std::vector<double>>& u_hist,
                          double dt);

/// Approximate descent gradient -sum_i u_e^T (dKe/drho) u_e dt. The exact
/// adjoint gradient carries additional mass/damping terms that are omitted
/// here; the sign makes the OC update reduce C_dyn.
std::vector<double> dynamic_sensitivities(
    const Grid& grid, const Material& material, const DensityField& density,
    const std::vector<std::vector<double>>& u_hist, double dt, double penalty);

struct DynamicProblem {
  Grid grid;
  Material material;
  BoundarySpec bc;
  DynamicLoad load;
};

OptimizeResult optimize_dynamic(const DynamicProblem& problem,
                                const DynamicsConfig& dynamics,
                                const OptimizerConfig& config);

/// Dynamic compliance of a fixed design under the problem's load.
double evaluate_dynamic_compliance(const DynamicProblem& problem,
                                   const DynamicsConfig& dynamics,
                                   const DensityField& density, double penalty);

}  // namespace topo
