#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "topoformer/fea.hpp"
#include "topoformer/rng.hpp"
#include "topoformer/tensor.hpp"

namespace testutil {

/// Dense matrix of any matrix-free operator, built column by column.
template <typename Op>
Eigen::MatrixXd densify(const Op& A, int n) {
  Eigen::MatrixXd M(n, n);
  std::vector<double> e(n, 0.0), col(n);
  for (int j = 0; j < n; ++j) {
    e[j] = 1.0;
    A.apply(e.data(), col.data());
    for (int i = 0; i < n; ++i) M(i, j) = col[i];
    e[j] = 0.0;
  }
  return M;
}

/// Independent dense oracle: assemble the SIMP-scaled global stiffness from
/// scratch with its own connectivity walk, apply boundary conditions by
/// identity rows/columns, and solve with a full-pivot LU.
inline std::vector<double> dense_lu_solve(const topo::Grid& grid,
                                          const topo::Material& mat,
                                          const topo::DensityField& rho,
                                          double penalty,
                                          const std::vector<std::uint8_t>& fixed,
                                          const std::vector<double>& f) {
  const int n = grid.dof_count();
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n, n);
  const topo::ElementMatrix ke = topo::element_stiffness(topo::Material{1.0, 1.0, mat.nu});
  for (int ey = 0; ey < grid.nely; ++ey)
    for (int ex = 0; ex < grid.nelx; ++ex) {
      const double r = rho.rho[grid.element(ex, ey)];
      const double scale = mat.Emin + std::pow(r, penalty) * (mat.E0 - mat.Emin);
      int dofs[8];
      grid.element_dofs(ex, ey, dofs);
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) K(dofs[i], dofs[j]) += scale * ke(i, j);
    }
  Eigen::VectorXd b(n);
  for (int i = 0; i < n; ++i) b(i) = fixed[i] ? 0.0 : f[i];
  for (int i = 0; i < n; ++i)
    if (fixed[i]) {
      K.row(i).setZero();
      K.col(i).setZero();
      K(i, i) = 1.0;
    }
  Eigen::VectorXd u = Eigen::FullPivLU<Eigen::MatrixXd>(K).solve(b);
  return std::vector<double>(u.data(), u.data() + n);
}

/// Central finite difference of a scalar function of one tensor entry.
inline double central_fd(const std::function<double()>& eval, double& slot,
                         double h) {
  const double saved = slot;
  slot = saved + h;
  const double fp = eval();
  slot = saved - h;
  const double fm = eval();
  slot = saved;
  return (fp - fm) / (2.0 * h);
}

/// Max relative mismatch between analytic grads of `inputs` and central
/// finite differences of `make_loss`, which must rebuild the graph from the
/// current input data on every call.
inline double gradcheck(std::vector<topo::ad::Tensor>& inputs,
                        const std::function<topo::ad::Tensor()>& make_loss,
                        double h = 1e-5) {
  using topo::ad::Tensor;
  Tensor loss = make_loss();
  for (auto& t : inputs) t.zero_grad();
  topo::ad::backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) analytic.push_back(t.grad());

  double worst = 0.0;
  auto eval = [&]() { return make_loss().value(); };
  for (std::size_t k = 0; k < inputs.size(); ++k)
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double fd = central_fd(eval, inputs[k].data()[i], h);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(fd), std::abs(a), 1e-6});
      worst = std::max(worst, std::abs(fd - a) / denom);
    }
  return worst;
}

inline std::vector<double> random_vector(topo::Rng& rng, std::size_t n,
                                         double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace testutil
