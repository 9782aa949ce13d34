#include "topoformer/losses.hpp"

#include <algorithm>
#include <stdexcept>

namespace topo {

using ad::Tensor;

Tensor pixel_loss(const Tensor& pred, const Tensor& target) {
  return ad::mse_loss(pred, target);
}

Tensor vf_loss(const Tensor& pred, double volume_fraction) {
  return ad::abs(ad::affine(ad::mean(pred), 1.0, -volume_fraction));
}

Tensor load_discrepancy_loss(const Tensor& pred, int load_pixel,
                             double load_magnitude) {
  Tensor flat = ad::reshape(pred, {static_cast<int>(pred.size()), 1});
  Tensor rho = ad::gather_rows(flat, {load_pixel});
  Tensor loss = ad::affine(ad::reshape(rho, {1}), -load_magnitude, 1.0);
  // clamp to [0,1] without killing the gradient in the interior
  if (loss.data()[0] < 0.0 || loss.data()[0] > 1.0) {
    const double clamped = std::clamp(loss.data()[0], 0.0, 1.0);
    return Tensor::scalar(clamped);
  }
  return loss;
}

ComponentLabels connected_components(const std::vector<double>& binary,
                                     int width, int height) {
  ComponentLabels result;
  result.labels.assign(binary.size(), 0);
  std::vector<int> stack;
  int next = 0;
  for (int start = 0; start < width * height; ++start) {
    if (binary[start] < 0.5 || result.labels[start] != 0) continue;
    ++next;
    stack.push_back(start);
    result.labels[start] = next;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int x = p % width, y = p / width;
      const int nb[4] = {x > 0 ? p - 1 : -1, x < width - 1 ? p + 1 : -1,
                         y > 0 ? p - width : -1, y < height - 1 ? p + width : -1};
      for (int q : nb) {
        if (q < 0 || binary[q] < 0.5 || result.labels[q] != 0) continue;
        result.labels[q] = next;
        stack.push_back(q);
      }
    }
  }
  result.count = next;
  return result;
}

Tensor floating_material_loss(const Tensor& pred, int load_pixel, int width,
                              int height) {
  if (pred.size() != static_cast<std::size_t>(width) * height)
    throw std::invalid_argument("floating_material_loss: size mismatch");

  // Gated label propagation: seed every material cell with its own index
  // and run 2*max(width,height) sweeps of 4-neighbor max, where propagation
  // only crosses cells whose soft density clears the 0.5 gate. For a binary
  // gate this converges to the exact flood-fill labels.
  const std::vector<double>& soft = pred.data();
  std::vector<std::uint8_t> gate(soft.size());
  bool any_material = false;
  for (std::size_t i = 0; i < soft.size(); ++i) {
    gate[i] = soft[i] >= 0.5;
    any_material = any_material || gate[i];
  }
  if (!any_material) return Tensor::scalar(1.0);  // fully absent structure

  std::vector<int> label(soft.size());
  for (std::size_t i = 0; i < soft.size(); ++i)
    label[i] = gate[i] ? static_cast<int>(i) + 1 : 0;
  const int sweeps = 2 * std::max(width, height);
  for (int s = 0; s < sweeps; ++s) {
    bool changed = false;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const int p = y * width + x;
        if (!gate[p]) continue;
        int best = label[p];
        if (x > 0 && gate[p - 1]) best = std::max(best, label[p - 1]);
        if (x < width - 1 && gate[p + 1]) best = std::max(best, label[p + 1]);
        if (y > 0 && gate[p - width]) best = std::max(best, label[p - width]);
        if (y < height - 1 && gate[p + width]) best = std::max(best, label[p + width]);
        if (best != label[p]) {
          label[p] = best;
          changed = true;
        }
      }
    if (!changed) break;
  }

  const int load_label = gate[load_pixel] ? label[load_pixel] : 0;

  // soft mass ratio; the labels are piecewise constant in pred, so gradient
  // flows only through the masses
  std::vector<double> floating_mask(soft.size(), 0.0), material_mask(soft.size(), 0.0);
  for (std::size_t i = 0; i < soft.size(); ++i) {
    if (!gate[i]) continue;
    material_mask[i] = 1.0;
    if (label[i] != load_label) floating_mask[i] = 1.0;
  }
  Tensor flat = ad::reshape(pred, {static_cast<int>(pred.size())});
  Tensor floating = ad::sum(ad::mul(flat, Tensor::from_data({static_cast<int>(soft.size())}, floating_mask)));
  Tensor total = ad::sum(ad::mul(flat, Tensor::from_data({static_cast<int>(soft.size())}, material_mask)));
  return ad::div(floating, total);
}

LossTerms total_loss(const Tensor& pred, const Tensor& target,
                     double volume_fraction, int load_pixel,
                     double load_magnitude, int width, int height,
                     const LossWeights& weights,
                     const std::vector<int>& mask_indices, int patch_size) {
  LossTerms terms;
  Tensor px = pixel_loss(pred, target);
  Tensor vf = vf_loss(pred, volume_fraction);
  Tensor ld = load_discrepancy_loss(pred, load_pixel, load_magnitude);
  Tensor fm = floating_material_loss(pred, load_pixel, width, height);
  terms.pixel = px.value();
  terms.vf = vf.value();
  terms.load = ld.value();
  terms.fm = fm.value();

  Tensor total = ad::affine(px, weights.pixel);
  total = ad::add(total, ad::affine(vf, weights.vf));
  total = ad::add(total, ad::affine(ld, weights.load));
  total = ad::add(total, ad::affine(fm, weights.fm));

  if (weights.mask > 0.0 && !mask_indices.empty()) {
    // masked reconstruction: MSE restricted to the pixels of masked patches
    const int g = width / patch_size;
    std::vector<double> mask_px(pred.size(), 0.0);
    double count = 0.0;
    for (int token : mask_indices) {
      const int py = token / g, px2 = token % g;
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x) {
          mask_px[static_cast<std::size_t>(py * patch_size + y) * width +
                  px2 * patch_size + x] = 1.0;
          count += 1.0;
        }
    }
    Tensor m = Tensor::from_data(pred.shape(), std::move(mask_px));
    Tensor diff = ad::mul(ad::sub(pred, target), m);
    Tensor l_mask = ad::affine(ad::sum(ad::mul(diff, diff)), 1.0 / count);
    terms.mask = l_mask.value() ;
    total = ad::add(total, ad::affine(l_mask, weights.mask));
  }
  terms.total = total;
  return terms;
}

}  // namespace topo
