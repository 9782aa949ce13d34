#pragma once

#include <vector>

#include "topoformer/fea.hpp"
#include "topoformer/tensor.hpp"

namespace topo {

struct LossWeights {
  double pixel = 1.0;
  double vf = 0.1;
  double load = 0.1;
  double fm = 0.1;
  double mask = 0.0;  // optional masked-reconstruction term, off by default
};

/// Mean squared error over all pixels.
ad::Tensor pixel_loss(const ad::Tensor& pred, const ad::Tensor& target);

/// |f - mean(pred)|.
ad::Tensor vf_loss(const ad::Tensor& pred, double volume_fraction);

/// 1 - rho_at_load * |F|, clamped to [0, 1]. `load_pixel` is the flat index
/// of the load element in the prediction image.
ad::Tensor load_discrepancy_loss(const ad::Tensor& pred, int load_pixel,
                                 double load_magnitude = 1.0);

/// Exact 4-connectivity flood-fill labeling of a binary map. Labels are
/// 1..k for material cells, 0 for void.
struct ComponentLabels {
  std::vector<int> labels;
  int count = 0;
};
ComponentLabels connected_components(const std::vector<double>& binary,
                                     int width, int height);

/// Soft mass outside the load-connected component divided by total soft
/// mass. Components come from iterative 4-neighbor label propagation gated
/// by the thresholded (0.5) densities; the gradient flows through the soft
/// mass ratio. All-void prediction gives 1.
ad::Tensor floating_material_loss(const ad::Tensor& pred, int load_pixel,
                                  int width, int height);

struct LossTerms {
  ad::Tensor total;
  double pixel = 0.0, vf = 0.0, load = 0.0, fm = 0.0, mask = 0.0;
};

/// Weighted sum of the pixel loss and the auxiliary losses. When
/// `weights.mask > 0`, adds MSE between prediction and target restricted to
/// the masked patch positions.
LossTerms total_loss(const ad::Tensor& pred, const ad::Tensor& target,
                     double volume_fraction, int load_pixel,
                     double load_magnitude, int width, int height,
                     const LossWeights& weights,
                     const std::vector<int>& mask_indices = {},
                     int patch_size = 8);

}  // namespace topo
