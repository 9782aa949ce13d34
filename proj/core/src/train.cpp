#include "topoformer/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace topo {

using ad::Tensor;

double lr_at_step(const TrainConfig& config, int step) {
  if (config.warmup_steps > 0 && step < config.warmup_steps)
    return config.learning_rate * (step + 1) / config.warmup_steps;
  const int total = std::max(1, config.iterations - config.warmup_steps);
  const int k = std::min(total, step - config.warmup_steps);
  return 0.5 * config.learning_rate * (1.0 + std::cos(M_PI * k / total));
}

namespace {

void check_schema(const ViTModel& model, const std::vector<Sample>& data) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  const bool dynamic_data = data[0].spec.kind == ProblemKind::kDynamic;
  const int want = dynamic_data ? 32 : 22;
  if (model.config().condition_dim != want)
    throw std::invalid_argument(
        "train: model condition_dim " + std::to_string(model.config().condition_dim) +
        " does not match " + (dynamic_data ? std::string("dynamic") : std::string("static")) +
        " dataset (needs " + std::to_string(want) + ")");
  if (model.config().grid != data[0].spec.grid.nelx ||
      model.config().grid != data[0].spec.grid.nely)
    throw std::invalid_argument("train: model grid does not match dataset grid");
}

Tensor sample_loss(ViTModel& model, const Sample& sample, const LossWeights& weights,
                   bool training, Rng* rng, LossRow* row) {
  const auto cond = condition_vector(sample.spec, sample.fft);
  ViTModel::Forward fwd = model.forward(sample.fields, cond, training, rng);
  Tensor target = Tensor::from_data(fwd.prediction.shape(), sample.topology.rho);
  LossTerms terms = total_loss(fwd.prediction, target, sample.spec.vf,
                               load_pixel(sample.spec), sample.spec.load.magnitude(),
                               sample.spec.grid.nelx, sample.spec.grid.nely, weights,
                               fwd.mask_indices, model.config().patch_size);
  if (row) {
    row->pixel += terms.pixel;
    row->vf += terms.vf;
    row->load += terms.load;
    row->fm += terms.fm;
  }
  return terms.total;
}

TrainResult run_training(ViTModel& model, const std::vector<Sample>& data,
                         const TrainConfig& config,
                         const std::vector<std::string>* group_names) {
  check_schema(model, data);
  if (config.iterations < 1 || config.batch_size < 1)
    throw std::invalid_argument("train: iterations and batch size must be >= 1");

  std::vector<Tensor> trainable;
  if (group_names) {
    for (const auto& name : *group_names) trainable.push_back(model.param(name));
  } else {
    for (auto& [name, t] : model.params()) trainable.push_back(t);
  }

  Rng rng(config.seed);
  ad::AdamState adam;
  TrainResult result;
  std::FILE* log_file = nullptr;
  if (!config.loss_log_path.empty()) {
    log_file = std::fopen(config.loss_log_path.c_str(), "w");
    if (!log_file)
      throw std::runtime_error("train: cannot open loss log " + config.loss_log_path);
    std::fprintf(log_file, "step,pixel,vf,load,fm,total\n");
  }

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();  // trigger shuffle on first use

  for (int step = 0; step < config.iterations; ++step) {
    LossRow row;
    row.step = step;
    Tensor batch_total;
    for (int b = 0; b < config.batch_size; ++b) {
      if (cursor >= order.size()) {
        for (std::size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1], order[rng.uniform_int(i)]);
        cursor = 0;
      }
      const Sample& sample = data[order[cursor++]];
      Tensor loss = sample_loss(model, sample, config.weights, true, &rng, &row);
      batch_total = b == 0 ? loss : ad::add(batch_total, loss);
    }
    Tensor mean_loss = ad::affine(batch_total, 1.0 / config.batch_size);
    for (Tensor& t : trainable) t.zero_grad();
    ad::backward(mean_loss);
    ad::adam_step(trainable, adam, lr_at_step(config, step));

    row.pixel /= config.batch_size;
    row.vf /= config.batch_size;
    row.load /= config.batch_size;
    row.fm /= config.batch_size;
    row.total = mean_loss.value();
    result.final_loss = row.total;
    if (step % config.log_every == 0 || step == config.iterations - 1) {
      result.log.push_back(row);
      if (log_file)
        std::fprintf(log_file, "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", row.step, row.pixel,
                     row.vf, row.load, row.fm, row.total);
    }
    if (!config.checkpoint_path.empty() && config.checkpoint_every > 0 &&
        (step + 1) % config.checkpoint_every == 0)
      model.save_checkpoint(config.checkpoint_path + ".step" + std::to_string(step + 1));
  }
  if (!config.checkpoint_path.empty()) model.save_checkpoint(config.checkpoint_path);
  if (log_file) std::fclose(log_file);
  return result;
}

}  // namespace

TrainResult train(ViTModel& model, const std::vector<Sample>& data,
                  const TrainConfig& config) {
  return run_training(model, data, config, nullptr);
}

TrainResult finetune(ViTModel& model, const std::vector<std::string>& groups,
                     const std::vector<Sample>& dynamic_data,
                     const TrainConfig& config) {
  if (groups.empty()) throw std::invalid_argument("finetune: group set is empty");
  if (model.config().condition_dim == 22) model.widen_condition_input(32);
  std::vector<std::string> names;
  for (const auto& group : groups)
    for (const auto& name : model.group_param_names(group))
      if (std::find(names.begin(), names.end(), name) == names.end())
        names.push_back(name);
  return run_training(model, dynamic_data, config, &names);
}

double validation_loss(ViTModel& model, const std::vector<Sample>& data,
                       const LossWeights& weights) {
  if (data.empty()) throw std::invalid_argument("validation_loss: empty dataset");
  ad::NoGradGuard no_grad;  // scoring only, no backward pass
  double total = 0.0;
  for (const Sample& sample : data) {
    Tensor loss = sample_loss(model, sample, weights, false, nullptr, nullptr);
    total += loss.value();
  }
  return total / static_cast<double>(data.size());
}

}  // namespace topo
