#include "topoformer/vit.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <optional>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "topoformer/io.hpp"

namespace topo {

using ad::Tensor;
using json = nlohmann::json;

void ViTConfig::validate() const {
  if (hidden_dim % heads != 0)
    throw std::invalid_argument("ViTConfig: hidden_dim must divide by heads");
  if (grid % patch_size != 0)
    throw std::invalid_argument("ViTConfig: grid must divide by patch_size");
  if (mask_ratio < 0.0 || mask_ratio >= 1.0)
    throw std::invalid_argument("ViTConfig: mask_ratio must be in [0,1)");
  if (condition_dim != 22 && condition_dim != 32)
    throw std::invalid_argument("ViTConfig: condition_dim must be 22 or 32");
}

ViTConfig ViTConfig::family(const std::string& name) {
  ViTConfig c;
  if (name == "tiny") {
    c.hidden_dim = 192; c.layers = 12; c.heads = 3;
  } else if (name == "small") {
    c.hidden_dim = 384; c.layers = 12; c.heads = 6;
  } else if (name == "base") {
    c.hidden_dim = 768; c.layers = 12; c.heads = 12;
  } else if (name == "large") {
    c.hidden_dim = 1024; c.layers = 24; c.heads = 16;
  } else if (name == "huge") {
    c.hidden_dim = 1280; c.layers = 32; c.heads = 16;
  } else if (name == "desk") {
    // defaults
  } else {
    throw std::invalid_argument("ViTConfig: unknown family '" + name + "'");
  }
  return c;
}

std::vector<double> patchify_single(const std::vector<double>& image, int grid,
                                    int patch_size) {
  if (grid % patch_size != 0)
    throw std::invalid_argument("patchify: grid not divisible by patch size");
  const int g = grid / patch_size;
  std::vector<double> out(static_cast<std::size_t>(g) * g * patch_size * patch_size);
  std::size_t k = 0;
  for (int py = 0; py < g; ++py)
    for (int px = 0; px < g; ++px)
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x)
          out[k++] = image[static_cast<std::size_t>(py * patch_size + y) * grid +
                           px * patch_size + x];
  return out;
}

std::vector<double> patchify(const FieldImage& fields, int patch_size) {
  if (fields.nelx != fields.nely)
    throw std::invalid_argument("patchify: expects a square field image");
  const int grid = fields.nelx;
  if (grid % patch_size != 0)
    throw std::invalid_argument("patchify: grid not divisible by patch size");
  const int g = grid / patch_size;
  const int pp = patch_size * patch_size;
  std::vector<double> out(static_cast<std::size_t>(g) * g * 2 * pp);
  const std::vector<double>* channels[2] = {&fields.sed, &fields.vm};
  for (int py = 0; py < g; ++py)
    for (int px = 0; px < g; ++px) {
      const std::size_t row = static_cast<std::size_t>(py) * g + px;
      std::size_t k = row * 2 * pp;
      for (int c = 0; c < 2; ++c)
        for (int y = 0; y < patch_size; ++y)
          for (int x = 0; x < patch_size; ++x)
            out[k++] = (*channels[c])[static_cast<std::size_t>(py * patch_size + y) *
                                          grid + px * patch_size + x];
    }
  return out;
}

std::vector<double> unpatchify(const std::vector<double>& tokens, int grid,
                               int patch_size) {
  const int g = grid / patch_size;
  const int pp = patch_size * patch_size;
  std::vector<double> out(static_cast<std::size_t>(grid) * grid);
  for (int py = 0; py < g; ++py)
    for (int px = 0; px < g; ++px) {
      const std::size_t row = static_cast<std::size_t>(py) * g + px;
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x)
          out[static_cast<std::size_t>(py * patch_size + y) * grid +
              px * patch_size + x] = tokens[row * pp + y * patch_size + x];
    }
  return out;
}

ViTModel::ViTModel(const ViTConfig& config) : config_(config) {
  config_.validate();
  const int D = config_.hidden_dim;
  const int N = config_.tokens();
  const int pd = config_.patch_dim();
  const int pp = config_.patch_size * config_.patch_size;

  add_param("patch_embed.weight", {pd, D});
  add_param("patch_embed.bias", {D});
  add_param("pos_embed", {N + 1, D});
  add_param("class_proj.fc1.weight", {config_.condition_dim, D});
  add_param("class_proj.fc1.bias", {D});
  add_param("class_proj.fc2.weight", {D, D});
  add_param("class_proj.fc2.bias", {D});
  add_param("mask_token", {1, D});
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    add_param(p + "ln1.gamma", {D});
    add_param(p + "ln1.beta", {D});
    add_param(p + "attn.wq", {D, D});
    add_param(p + "attn.bq", {D});
    add_param(p + "attn.wk", {D, D});
    add_param(p + "attn.bk", {D});
    add_param(p + "attn.wv", {D, D});
    add_param(p + "attn.bv", {D});
    add_param(p + "attn.wo", {D, D});
    add_param(p + "attn.bo", {D});
    add_param(p + "ln2.gamma", {D});
    add_param(p + "ln2.beta", {D});
    add_param(p + "mlp.fc1.weight", {D, config_.mlp_ratio * D});
    add_param(p + "mlp.fc1.bias", {config_.mlp_ratio * D});
    add_param(p + "mlp.fc2.weight", {config_.mlp_ratio * D, D});
    add_param(p + "mlp.fc2.bias", {D});
  }
  add_param("final_ln.gamma", {D});
  add_param("final_ln.beta", {D});
  add_param("decoder.weight", {D, pp});
  add_param("decoder.bias", {pp});
}

void ViTModel::add_param(const std::string& name, std::vector<int> shape) {
  params_.emplace_back(name, Tensor::zeros(std::move(shape), true));
}

void ViTModel::init(Rng& rng) {
  for (auto& [name, t] : params_) {
    const bool is_scale = name.ends_with("gamma");
    const bool is_shift = name.ends_with("beta") || name.ends_with("bias");
    if (is_scale) {
      std::fill(t.data().begin(), t.data().end(), 1.0);
    } else if (is_shift) {
      std::fill(t.data().begin(), t.data().end(), 0.0);
    } else {
      for (double& v : t.data()) v = rng.truncated_normal(0.02);
    }
  }
}

ad::Tensor& ViTModel::param(const std::string& name) {
  for (auto& [n, t] : params_)
    if (n == name) return t;
  throw std::invalid_argument("ViTModel: unknown parameter '" + name + "'");
}

std::size_t ViTModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

Tensor ViTModel::class_token(const std::vector<double>& cond) {
  if (static_cast<int>(cond.size()) != config_.condition_dim)
    throw std::invalid_argument(
        "class_token: condition length " + std::to_string(cond.size()) +
        " does not match config condition_dim " +
        std::to_string(config_.condition_dim));
  Tensor c = Tensor::from_data({1, config_.condition_dim}, cond);
  Tensor h = ad::gelu(ad::add(ad::matmul(c, param("class_proj.fc1.weight")),
                              param("class_proj.fc1.bias")));
  return ad::add(ad::matmul(h, param("class_proj.fc2.weight")),
                 param("class_proj.fc2.bias"));
}

std::vector<int> ViTModel::draw_mask(double ratio, Rng& rng) const {
  const int N = config_.tokens();
  const int k = static_cast<int>(std::lround(ratio * N));
  std::vector<int> idx(N);
  for (int i = 0; i < N; ++i) idx[i] = i;
  // partial Fisher-Yates
  for (int i = 0; i < k; ++i) {
    const int j = i + static_cast<int>(rng.uniform_int(N - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

Tensor ViTModel::attention_block(const Tensor& x, int layer) {
  const std::string p = "blocks." + std::to_string(layer) + ".";
  const int D = config_.hidden_dim;
  const int h = config_.heads;
  const int dk = D / h;

  Tensor xn = ad::layer_norm(x, param(p + "ln1.gamma"), param(p + "ln1.beta"));
  Tensor q = ad::add(ad::matmul(xn, param(p + "attn.wq")), param(p + "attn.bq"));
  Tensor k = ad::add(ad::matmul(xn, param(p + "attn.wk")), param(p + "attn.bk"));
  Tensor v = ad::add(ad::matmul(xn, param(p + "attn.wv")), param(p + "attn.bv"));

  Tensor heads_out;
  for (int head = 0; head < h; ++head) {
    Tensor qh = ad::slice(q, 1, head * dk, dk);
    Tensor kh = ad::slice(k, 1, head * dk, dk);
    Tensor vh = ad::slice(v, 1, head * dk, dk);
    Tensor scores = ad::affine(ad::matmul(qh, ad::transpose(kh)),
                               1.0 / std::sqrt(static_cast<double>(dk)));
    Tensor attn = ad::softmax(scores);
    last_attention_.push_back(attn);
    Tensor oh = ad::matmul(attn, vh);
    heads_out = head == 0 ? oh : ad::concat(heads_out, oh, 1);
  }
  Tensor attn_out = ad::add(ad::matmul(heads_out, param(p + "attn.wo")),
                            param(p + "attn.bo"));
  Tensor x1 = ad::add(x, attn_out);

  Tensor x1n = ad::layer_norm(x1, param(p + "ln2.gamma"), param(p + "ln2.beta"));
  Tensor hdn = ad::gelu(ad::add(ad::matmul(x1n, param(p + "mlp.fc1.weight")),
                                param(p + "mlp.fc1.bias")));
  Tensor mlp_out = ad::add(ad::matmul(hdn, param(p + "mlp.fc2.weight")),
                           param(p + "mlp.fc2.bias"));
  return ad::add(x1, mlp_out);
}

ViTModel::Forward ViTModel::forward(const FieldImage& fields,
                                    const std::vector<double>& cond,
                                    bool training, Rng* rng) {
  const int N = config_.tokens();
  const int D = config_.hidden_dim;
  last_attention_.clear();

  Tensor patches = Tensor::from_data({N, config_.patch_dim()},
                                     patchify(fields, config_.patch_size));
  Tensor tokens = ad::add(ad::matmul(patches, param("patch_embed.weight")),
                          param("patch_embed.bias"));

  Forward result;
  if (training && config_.mask_ratio > 0.0) {
    if (!rng)
      throw std::invalid_argument("forward: training with mask_ratio > 0 needs an rng");
    result.mask_indices = draw_mask(config_.mask_ratio, *rng);
    if (!result.mask_indices.empty())
      tokens = ad::replace_rows(tokens, result.mask_indices, param("mask_token"));
  }

  Tensor x = ad::concat(class_token(cond), tokens, 0);  // class token owns slot 0
  x = ad::add(x, param("pos_embed"));

  for (int l = 0; l < config_.layers; ++l) x = attention_block(x, l);

  x = ad::layer_norm(x, param("final_ln.gamma"), param("final_ln.beta"));
  Tensor patch_tokens = ad::slice(x, 0, 1, N);  // drop the class token
  Tensor decoded = ad::sigmoid(ad::add(ad::matmul(patch_tokens, param("decoder.weight")),
                                       param("decoder.bias")));
  result.tokens_out = decoded;

  // unpatchify: reorder token pixels into the image layout via gather on a
  // reshaped view; the permutation is constant, so a data-level remap with a
  // dedicated op would be equivalent. gather_rows keeps it in the graph.
  const int pp = config_.patch_size * config_.patch_size;
  std::vector<int> perm(static_cast<std::size_t>(config_.grid) * config_.grid);
  const int g = config_.grid / config_.patch_size;
  for (int y = 0; y < config_.grid; ++y)
    for (int x2 = 0; x2 < config_.grid; ++x2) {
      const int py = y / config_.patch_size, px = x2 / config_.patch_size;
      const int iy = y % config_.patch_size, ix = x2 % config_.patch_size;
      perm[static_cast<std::size_t>(y) * config_.grid + x2] =
          (py * g + px) * pp + iy * config_.patch_size + ix;
    }
  Tensor flat = ad::reshape(decoded, {N * pp, 1});
  Tensor image = ad::gather_rows(flat, perm);
  result.prediction = ad::reshape(image, {config_.grid, config_.grid});
  (void)D;
  return result;
}

void ViTModel::widen_condition_input(int new_dim) {
  if (new_dim <= config_.condition_dim)
    throw std::invalid_argument("widen_condition_input: new dim must be larger");
  Tensor& w = param("class_proj.fc1.weight");
  const int old_dim = config_.condition_dim;
  const int D = config_.hidden_dim;
  std::vector<double> widened(static_cast<std::size_t>(new_dim) * D, 0.0);
  for (int i = 0; i < old_dim; ++i)
    for (int j = 0; j < D; ++j)
      widened[static_cast<std::size_t>(i) * D + j] = w.data()[static_cast<std::size_t>(i) * D + j];
  for (auto& [name, t] : params_)
    if (name == "class_proj.fc1.weight")
      t = Tensor::from_data({new_dim, D}, std::move(widened), true);
  config_.condition_dim = new_dim;
}

std::vector<std::string> ViTModel::group_param_names(const std::string& group) const {
  std::vector<std::string> names;
  auto add_prefix = [&](const std::string& prefix) {
    for (const auto& [name, t] : params_)
      if (name.rfind(prefix, 0) == 0) names.push_back(name);
  };
  if (group == "class_projection") {
    add_prefix("class_proj.");
  } else if (group == "decoder_projection") {
    add_prefix("decoder.");
  } else if (group == "decoder_layers") {
    add_prefix("class_proj.");
    add_prefix("decoder.");
    for (int l = std::max(0, config_.layers - 3); l < config_.layers; ++l)
      add_prefix("blocks." + std::to_string(l) + ".");
  } else {
    throw std::invalid_argument("unknown fine-tune group '" + group + "'");
  }
  return names;
}

namespace {

json config_to_json(const ViTConfig& c) {
  return json{{"hidden_dim", c.hidden_dim}, {"layers", c.layers},
              {"heads", c.heads},           {"patch_size", c.patch_size},
              {"grid", c.grid},             {"in_channels", c.in_channels},
              {"mlp_ratio", c.mlp_ratio},   {"mask_ratio", c.mask_ratio},
              {"condition_dim", c.condition_dim}};
}

ViTConfig config_from_json(const json& j) {
  ViTConfig c;
  c.hidden_dim = j.at("hidden_dim");
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.patch_size = j.at("patch_size");
  c.grid = j.at("grid");
  c.in_channels = j.at("in_channels");
  c.mlp_ratio = j.at("mlp_ratio");
  c.mask_ratio = j.at("mask_ratio");
  c.condition_dim = j.at("condition_dim");
  return c;
}

}  // namespace

void ViTModel::save_checkpoint(const std::string& path) const {
  json header;
  header["config"] = config_to_json(config_);
  header["params"] = json::array();
  for (const auto& [name, t] : params_)
    header["params"].push_back({{"name", name}, {"shape", t.shape()}});
  const std::string header_str = header.dump();

  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  std::fwrite("TOPOCK01", 1, 8, f);
  const std::uint32_t len = static_cast<std::uint32_t>(header_str.size());
  std::uint8_t lenb[4] = {static_cast<std::uint8_t>(len), static_cast<std::uint8_t>(len >> 8),
                          static_cast<std::uint8_t>(len >> 16), static_cast<std::uint8_t>(len >> 24)};
  std::fwrite(lenb, 1, 4, f);
  std::fwrite(header_str.data(), 1, header_str.size(), f);
  for (const auto& [name, t] : params_) {
    const std::size_t bytes = t.size() * sizeof(double);
    std::fwrite(t.data().data(), 1, bytes, f);
    const std::uint32_t crc = crc32(t.data().data(), bytes);
    std::uint8_t crcb[4] = {static_cast<std::uint8_t>(crc), static_cast<std::uint8_t>(crc >> 8),
                            static_cast<std::uint8_t>(crc >> 16), static_cast<std::uint8_t>(crc >> 24)};
    std::fwrite(crcb, 1, 4, f);
  }
  std::fclose(f);
}

ViTModel ViTModel::load_checkpoint(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  auto fail = [&](const std::string& msg) -> ViTModel {
    std::fclose(f);
    throw std::runtime_error("load_checkpoint: " + msg + " in " + path);
  };
  char magic[8];
  if (std::fread(magic, 1, 8, f) != 8 || std::memcmp(magic, "TOPOCK01", 8) != 0)
    return fail("bad magic");
  std::uint8_t lenb[4];
  if (std::fread(lenb, 1, 4, f) != 4) return fail("truncated header length");
  const std::uint32_t len = detail::get_u32(lenb);
  std::string header_str(len, '\0');
  if (std::fread(header_str.data(), 1, len, f) != len) return fail("truncated header");
  json header = json::parse(header_str, nullptr, false);
  if (header.is_discarded()) return fail("invalid header JSON");

  ViTModel model(config_from_json(header.at("config")));
  std::size_t i = 0;
  for (const auto& entry : header.at("params")) {
    if (i >= model.params_.size()) return fail("parameter count mismatch");
    auto& [name, t] = model.params_[i];
    if (entry.at("name") != name) return fail("parameter name mismatch at " + name);
    const std::size_t bytes = t.size() * sizeof(double);
    if (std::fread(t.data().data(), 1, bytes, f) != bytes)
      return fail("truncated parameter " + name);
    std::uint8_t crcb[4];
    if (std::fread(crcb, 1, 4, f) != 4) return fail("truncated checksum");
    if (detail::get_u32(crcb) != crc32(t.data().data(), bytes))
      return fail("checksum failure for " + name);
    ++i;
  }
  std::fclose(f);
  if (i != model.params_.size())
    throw std::runtime_error("load_checkpoint: missing parameters in " + path);
  return model;
}

}  // namespace topo
