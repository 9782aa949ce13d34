#pragma once

#include <string>
#include <vector>

#include "topoformer/dataset.hpp"
#include "topoformer/losses.hpp"
#include "topoformer/vit.hpp"

namespace topo {

struct TrainConfig {
  int iterations = 20000;
  int batch_size = 32;
  double learning_rate = 1e-4;
  int warmup_steps = 500;
  std::uint64_t seed = 0;
  LossWeights weights;
  int checkpoint_every = 5000;
  std::string checkpoint_path;  // empty = no checkpoints
  std::string loss_log_path;    // empty = no CSV
  int log_every = 50;
};

struct LossRow {
  int step = 0;
  double pixel = 0, vf = 0, load = 0, fm = 0, total = 0;
};

struct TrainResult {
  std::vector<LossRow> log;
  double final_loss = 0.0;
};

/// Cosine schedule with linear warmup.
double lr_at_step(const TrainConfig& config, int step);

/// Supervised Adam training of the surrogate on `data`. Deterministic given
/// the seed. Throws before the first step on a model/dataset schema mismatch
/// (static model on dynamic data or vice versa).
TrainResult train(ViTModel& model, const std::vector<Sample>& data,
                  const TrainConfig& config);

/// Transfer learning: widens the class projection 22 -> 32 when needed
/// (zero-initialized new rows) and updates only the parameters of the given
/// groups; every other parameter stays bit-identical. Groups:
/// class_projection | decoder_projection | decoder_layers.
TrainResult finetune(ViTModel& model, const std::vector<std::string>& groups,
                     const std::vector<Sample>& dynamic_data,
                     const TrainConfig& config);

/// Mean total validation loss (inference mode, no masking).
double validation_loss(ViTModel& model, const std::vector<Sample>& data,
                       const LossWeights& weights);

}  // namespace topo
