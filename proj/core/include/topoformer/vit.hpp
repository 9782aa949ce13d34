#pragma once

#include <string>
#include <vector>

#include "topoformer/fea.hpp"
#include "topoformer/rng.hpp"
#include "topoformer/tensor.hpp"

namespace topo {

struct ViTConfig {
  int hidden_dim = 64;    // D
  int layers = 4;         // L
  int heads = 4;          // h
  int patch_size = 8;     // P
  int grid = 64;          // H = W
  int in_channels = 2;
  int mlp_ratio = 4;
  double mask_ratio = 0.15;  // training-time token masking
  int condition_dim = 22;    // 22 static, 32 dynamic (adds 10 FFT amplitudes)

  int tokens() const { return (grid / patch_size) * (grid / patch_size); }
  int patch_dim() const { return patch_size * patch_size * in_channels; }
  void validate() const;

  static ViTConfig desk() { return ViTConfig{}; }
  /// Named size families: tiny, small, base, large, huge.
  static ViTConfig family(const std::string& name);
};

/// Patch rows: row i is the flattened P x P block at patch-grid position
/// (i % (grid/P), i / (grid/P)), channel-major then row-major within a patch.
std::vector<double> patchify(const FieldImage& fields, int patch_size);
/// Inverse of patchify for a single-channel image (grid x grid, row-major).
std::vector<double> unpatchify(const std::vector<double>& tokens, int grid,
                               int patch_size);
/// Patch rows of a single-channel image (N x P^2), same ordering.
std::vector<double> patchify_single(const std::vector<double>& image, int grid,
                                    int patch_size);

class ViTModel {
 public:
  ViTModel() = default;
  explicit ViTModel(const ViTConfig& config);

  /// Truncated-normal(0.02) projections, zero biases and LN shifts.
  void init(Rng& rng);

  const ViTConfig& config() const { return config_; }
  std::vector<std::pair<std::string, ad::Tensor>>& params() { return params_; }
  const std::vector<std::pair<std::string, ad::Tensor>>& params() const {
    return params_;
  }
  ad::Tensor& param(const std::string& name);
  std::size_t parameter_count() const;

  /// Two-layer MLP projection of the condition vector into one token.
  ad::Tensor class_token(const std::vector<double>& cond);

  /// Token masking: |M| = round(ratio*N) patch-token indices without
  /// replacement; masked rows become the learned mask embedding. The class
  /// token (row 0 downstream) is never masked.
  std::vector<int> draw_mask(double ratio, Rng& rng) const;

  /// One pre-norm transformer block: X + MHSA(LN(X)), then + MLP(LN(.)).
  ad::Tensor attention_block(const ad::Tensor& x, int layer);

  /// Attention probability matrices of the most recent forward pass, one
  /// entry per (layer, head) in execution order.
  const std::vector<ad::Tensor>& last_attention() const { return last_attention_; }

  struct Forward {
    ad::Tensor prediction;        // (grid*grid) values in (0,1)
    ad::Tensor tokens_out;        // N x P^2 decoder output before unpatchify
    std::vector<int> mask_indices;
  };

  /// Full surrogate pass. In training mode, token masking uses `rng`
  /// (required when mask_ratio > 0); inference mode never masks.
  Forward forward(const FieldImage& fields, const std::vector<double>& cond,
                  bool training = false, Rng* rng = nullptr);

  void save_checkpoint(const std::string& path) const;
  static ViTModel load_checkpoint(const std::string& path);

  /// Widens the class-projection input from 22 to 32 columns with
  /// zero-initialized new rows, so zero FFT features reproduce the static
  /// model exactly.
  void widen_condition_input(int new_dim);

  /// Parameter names belonging to a fine-tune group: "class_projection",
  /// "decoder_projection" or "decoder_layers".
  std::vector<std::string> group_param_names(const std::string& group) const;

 private:
  void add_param(const std::string& name, std::vector<int> shape);

  ViTConfig config_;
  std::vector<std::pair<std::string, ad::Tensor>> params_;
  std::vector<ad::Tensor> last_attention_;
};

}  // namespace topo
