#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "helpers.hpp"
#include "topoformer/vit.hpp"

using namespace topo;
using ad::Tensor;

namespace {

FieldImage random_fields(Rng& rng, int grid) {
  FieldImage f;
  f.nelx = grid;
  f.nely = grid;
  f.sed = testutil::random_vector(rng, static_cast<std::size_t>(grid) * grid, 0, 1);
  f.vm = testutil::random_vector(rng, static_cast<std::size_t>(grid) * grid, 0, 1);
  return f;
}

ViTConfig mini_config() {
  ViTConfig c;
  c.hidden_dim = 16;
  c.layers = 2;
  c.heads = 2;
  c.patch_size = 4;
  c.grid = 16;
  return c;
}

}  // namespace

TEST_CASE("patchify shapes and round trip") {
  Rng rng(1);
  SUBCASE("64x64 with P=8 gives 64 tokens of length 128") {
    FieldImage f = random_fields(rng, 64);
    auto tokens = patchify(f, 8);
    CHECK(tokens.size() == 64u * 128u);
  }
  SUBCASE("16x16 with P=4 gives 16 tokens of length 32") {
    FieldImage f = random_fields(rng, 16);
    CHECK(patchify(f, 4).size() == 16u * 32u);
  }
  SUBCASE("single-channel round trip is bit exact") {
    auto img = testutil::random_vector(rng, 64 * 64, 0, 1);
    auto back = unpatchify(patchify_single(img, 64, 8), 64, 8);
    CHECK(back == img);
  }
  SUBCASE("indivisible grid rejected") {
    FieldImage f = random_fields(rng, 10);
    CHECK_THROWS(patchify(f, 8));
  }
}

TEST_CASE("forward contract for every size family plus desk") {
  Rng rng(2);
  FieldImage f = random_fields(rng, 64);
  std::vector<double> cond(22, 0.3);
  for (const char* name : {"desk", "tiny", "small", "base", "large", "huge"}) {
    INFO(name);
    ViTConfig cfg = std::string(name) == "desk" ? ViTConfig::desk()
                                                : ViTConfig::family(name);
    ViTModel model(cfg);
    Rng init(42);
    model.init(init);
    // the largest family barely fits in RAM; skip graph recording so
    // intermediate activations free eagerly
    ad::NoGradGuard no_grad;
    auto fwd = model.forward(f, cond);
    CHECK(fwd.prediction.shape() == std::vector<int>{64, 64});
    for (double v : fwd.prediction.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("family table matches the published configurations") {
  CHECK(ViTConfig::family("tiny").hidden_dim == 192);
  CHECK(ViTConfig::family("tiny").layers == 12);
  CHECK(ViTConfig::family("tiny").heads == 3);
  CHECK(ViTConfig::family("small").hidden_dim == 384);
  CHECK(ViTConfig::family("small").heads == 6);
  CHECK(ViTConfig::family("base").hidden_dim == 768);
  CHECK(ViTConfig::family("base").heads == 12);
  CHECK(ViTConfig::family("large").hidden_dim == 1024);
  CHECK(ViTConfig::family("large").layers == 24);
  CHECK(ViTConfig::family("huge").hidden_dim == 1280);
  CHECK(ViTConfig::family("huge").layers == 32);
  CHECK(ViTConfig::family("huge").heads == 16);
  CHECK_THROWS(ViTConfig::family("giant"));
}

TEST_CASE("attention matches a brute-force nested-loop oracle") {
  // single block, identity-friendly small case: N=3 tokens, D=4, 2 heads
  ViTConfig cfg;
  cfg.hidden_dim = 4;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.patch_size = 4;
  cfg.grid = 8;  // 4 patch tokens, we feed X directly to attention_block
  ViTModel model(cfg);
  Rng init(7);
  model.init(init);

  Rng rng(8);
  const int n = 3, d = 4, h = 2, dk = d / h;
  Tensor x = Tensor::from_data({n, d}, testutil::random_vector(rng, n * d));
  Tensor out = model.attention_block(x, 0);
  CHECK(out.shape() == std::vector<int>{n, d});

  // oracle: replicate pre-norm MHSA + MLP with explicit loops
  auto P = [&](const std::string& name) { return model.param(name).data(); };
  auto ln = [&](const std::vector<double>& in, const std::vector<double>& g,
                const std::vector<double>& b) {
    std::vector<double> out_v(in.size());
    for (int i = 0; i < n; ++i) {
      double mu = 0.0, var = 0.0;
      for (int j = 0; j < d; ++j) mu += in[i * d + j];
      mu /= d;
      for (int j = 0; j < d; ++j) var += (in[i * d + j] - mu) * (in[i * d + j] - mu);
      var /= d;
      for (int j = 0; j < d; ++j)
        out_v[i * d + j] = (in[i * d + j] - mu) / std::sqrt(var + 1e-5) * g[j] + b[j];
    }
    return out_v;
  };
  auto linear = [&](const std::vector<double>& in, const std::vector<double>& w,
                    const std::vector<double>& b, int din, int dout) {
    std::vector<double> out_v(static_cast<std::size_t>(n) * dout, 0.0);
    for (int i = 0; i < n; ++i)
      for (int o = 0; o < dout; ++o) {
        double acc = b.empty() ? 0.0 : b[o];
        for (int j = 0; j < din; ++j) acc += in[i * din + j] * w[j * dout + o];
        out_v[i * dout + o] = acc;
      }
    return out_v;
  };

  auto xn = ln(x.data(), P("blocks.0.ln1.gamma"), P("blocks.0.ln1.beta"));
  auto q = linear(xn, P("blocks.0.attn.wq"), P("blocks.0.attn.bq"), d, d);
  auto k = linear(xn, P("blocks.0.attn.wk"), P("blocks.0.attn.bk"), d, d);
  auto v = linear(xn, P("blocks.0.attn.wv"), P("blocks.0.attn.bv"), d, d);
  std::vector<double> heads_out(static_cast<std::size_t>(n) * d, 0.0);
  for (int head = 0; head < h; ++head) {
    const int off = head * dk;
    for (int i = 0; i < n; ++i) {
      std::vector<double> scores(n);
      double mx = -1e300;
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int c = 0; c < dk; ++c) s += q[i * d + off + c] * k[j * d + off + c];
        scores[j] = s / std::sqrt(static_cast<double>(dk));
        mx = std::max(mx, scores[j]);
      }
      double z = 0.0;
      for (double& s : scores) {
        s = std::exp(s - mx);
        z += s;
      }
      for (int j = 0; j < n; ++j)
        for (int c = 0; c < dk; ++c)
          heads_out[i * d + off + c] += scores[j] / z * v[j * d + off + c];
    }
  }
  auto attn = linear(heads_out, P("blocks.0.attn.wo"), P("blocks.0.attn.bo"), d, d);
  std::vector<double> mid(x.size());
  for (std::size_t i = 0; i < mid.size(); ++i) mid[i] = x.data()[i] + attn[i];
  auto mn = ln(mid, P("blocks.0.ln2.gamma"), P("blocks.0.ln2.beta"));
  auto h1 = linear(mn, P("blocks.0.mlp.fc1.weight"), P("blocks.0.mlp.fc1.bias"), d, 4 * d);
  for (double& val : h1) val = 0.5 * val * (1.0 + std::erf(val / std::sqrt(2.0)));
  auto h2 = linear(h1, P("blocks.0.mlp.fc2.weight"), P("blocks.0.mlp.fc2.bias"), 4 * d, d);
  for (std::size_t i = 0; i < mid.size(); ++i) {
    CHECK(out.data()[i] == doctest::Approx(mid[i] + h2[i]).epsilon(1e-10));
  }
}

TEST_CASE("attention degenerate cases") {
  ViTConfig cfg;
  cfg.hidden_dim = 6;
  cfg.layers = 1;
  cfg.heads = 2;
  ViTModel model(cfg);
  Rng init(3);
  model.init(init);
  Rng rng(4);

  SUBCASE("two identical tokens attend half-and-half (output rows equal)") {
    auto row = testutil::random_vector(rng, 6);
    std::vector<double> data;
    data.insert(data.end(), row.begin(), row.end());
    data.insert(data.end(), row.begin(), row.end());
    Tensor x = Tensor::from_data({2, 6}, data);
    Tensor out = model.attention_block(x, 0);
    for (int j = 0; j < 6; ++j)
      CHECK(out.data()[j] == doctest::Approx(out.data()[6 + j]).epsilon(1e-12));
  }
  SUBCASE("single token is passed through attention as its own value") {
    Tensor x = Tensor::from_data({1, 6}, testutil::random_vector(rng, 6));
    Tensor out = model.attention_block(x, 0);  // softmax over one entry = 1
    CHECK(out.shape() == std::vector<int>{1, 6});
    for (double v : out.data()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("attention rows sum to 1 within 1e-12 at every layer and head") {
  ViTConfig cfg = mini_config();
  ViTModel model(cfg);
  Rng init(23);
  model.init(init);
  Rng rng(24);
  FieldImage f = random_fields(rng, cfg.grid);
  model.forward(f, std::vector<double>(22, 0.3));
  REQUIRE(model.last_attention().size() ==
          static_cast<std::size_t>(cfg.layers * cfg.heads));
  for (const auto& attn : model.last_attention()) {
    const int rows = attn.shape()[0], cols = attn.shape()[1];
    for (int i = 0; i < rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < cols; ++j) s += attn.data()[i * cols + j];
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("class token projection") {
  ViTConfig cfg = mini_config();
  ViTModel model(cfg);
  Rng init(5);
  model.init(init);
  std::vector<double> cond(22, 0.4);
  Tensor tok = model.class_token(cond);
  CHECK(tok.shape() == std::vector<int>{1, cfg.hidden_dim});

  SUBCASE("length mismatch rejected") {
    CHECK_THROWS(model.class_token(std::vector<double>(32, 0.1)));
  }
  SUBCASE("vf sensitivity") {
    std::vector<double> cond2 = cond;
    cond2[21] = 0.9;
    Tensor tok2 = model.class_token(cond2);
    double diff = 0.0;
    for (std::size_t i = 0; i < tok.size(); ++i)
      diff = std::max(diff, std::abs(tok.data()[i] - tok2.data()[i]));
    CHECK(diff > 0.0);
  }
}

TEST_CASE("token masking") {
  ViTConfig cfg;  // desk: 64 tokens
  Rng rng(9);
  ViTModel model(cfg);
  SUBCASE("ratio 0 masks nothing") {
    CHECK(model.draw_mask(0.0, rng).empty());
  }
  SUBCASE("count is round(ratio*N), all distinct, in range") {
    auto m = model.draw_mask(0.15, rng);
    CHECK(m.size() == 10);  // round(0.15*64)
    std::vector<int> seen(64, 0);
    for (int i : m) {
      CHECK(i >= 0);
      CHECK(i < 64);
      CHECK(seen[i] == 0);
      seen[i] = 1;
    }
  }
  SUBCASE("ratio just below 1 leaves one token") {
    auto m = model.draw_mask(1.0 - 1.0 / 64.0, rng);
    CHECK(m.size() == 63);
  }
  SUBCASE("same seed, same mask") {
    Rng a(77), b(77);
    CHECK(model.draw_mask(0.3, a) == model.draw_mask(0.3, b));
  }
}

TEST_CASE("mask ratio 0 in training equals inference bit-exactly") {
  ViTConfig cfg = mini_config();
  cfg.mask_ratio = 0.0;
  ViTModel model(cfg);
  Rng init(11);
  model.init(init);
  Rng rng(12);
  FieldImage f = random_fields(rng, cfg.grid);
  std::vector<double> cond(22, 0.25);
  auto train_out = model.forward(f, cond, true, &rng);
  auto infer_out = model.forward(f, cond, false);
  CHECK(train_out.prediction.data() == infer_out.prediction.data());
  CHECK(train_out.mask_indices.empty());
}

TEST_CASE("positional sensitivity and live conditioning") {
  ViTConfig cfg = mini_config();
  ViTModel model(cfg);
  Rng init(13);
  model.init(init);
  Rng rng(14);
  FieldImage f = random_fields(rng, cfg.grid);
  std::vector<double> cond(22, 0.3);
  auto base = model.forward(f, cond);

  SUBCASE("permuting the input patches changes the output") {
    FieldImage swapped = f;
    // swap two patch blocks in both channels
    for (int y = 0; y < cfg.patch_size; ++y)
      for (int x = 0; x < cfg.patch_size; ++x) {
        const int a = y * cfg.grid + x;
        const int b = y * cfg.grid + x + cfg.patch_size;
        std::swap(swapped.sed[a], swapped.sed[b]);
        std::swap(swapped.vm[a], swapped.vm[b]);
      }
    auto other = model.forward(swapped, cond);
    double diff = 0.0;
    for (std::size_t i = 0; i < base.prediction.size(); ++i)
      diff = std::max(diff, std::abs(base.prediction.data()[i] -
                                     other.prediction.data()[i]));
    CHECK(diff > 0.0);
  }
  SUBCASE("changing the condition vector changes the output") {
    std::vector<double> cond2 = cond;
    cond2[4] = 0.9;
    auto other = model.forward(f, cond2);
    double diff = 0.0;
    for (std::size_t i = 0; i < base.prediction.size(); ++i)
      diff = std::max(diff, std::abs(base.prediction.data()[i] -
                                     other.prediction.data()[i]));
    CHECK(diff > 0.0);
  }
}

TEST_CASE("full-model gradcheck on a grid-16 miniature") {
  ViTConfig cfg = mini_config();
  ViTModel model(cfg);
  Rng init(15);
  model.init(init);
  Rng rng(16);
  FieldImage f = random_fields(rng, cfg.grid);
  std::vector<double> cond(22, 0.35);
  auto target_vec = testutil::random_vector(rng, 16 * 16, 0, 1);

  auto loss_of = [&] {
    auto fwd = model.forward(f, cond);
    Tensor target = Tensor::from_data(fwd.prediction.shape(), target_vec);
    return ad::mse_loss(fwd.prediction, target);
  };

  // analytic gradients
  Tensor loss = loss_of();
  for (auto& [name, t] : model.params()) t.zero_grad();
  ad::backward(loss);

  SUBCASE("every parameter tensor receives some gradient") {
    for (auto& [name, t] : model.params()) {
      if (name == "mask_token") continue;  // unused at inference
      double mx = 0.0;
      for (double g : t.grad()) mx = std::max(mx, std::abs(g));
      INFO(name);
      CHECK(mx > 0.0);
    }
  }

  SUBCASE("50 sampled parameter entries match finite differences") {
    std::vector<std::pair<std::string, double>> grads;
    for (auto& [name, t] : model.params())
      for (std::size_t i = 0; i < t.size(); ++i)
        grads.push_back({name + "[" + std::to_string(i) + "]", t.grad()[i]});

    Rng pick(17);
    double worst = 0.0;
    auto eval = [&] { return loss_of().value(); };
    std::size_t flat_index = 0;
    for (int s = 0; s < 50; ++s) {
      // choose a parameter tensor, then an entry
      auto& entry = model.params()[pick.uniform_int(model.params().size())];
      if (entry.first == "mask_token") continue;
      auto& t = entry.second;
      const std::size_t i = pick.uniform_int(t.size());
      const double analytic = t.grad()[i];
      const double fd = testutil::central_fd(eval, t.data()[i], 1e-5);
      const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-8});
      worst = std::max(worst, std::abs(fd - analytic) / denom);
      (void)flat_index;
    }
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("checkpoint round trip preserves the forward pass") {
  ViTConfig cfg = mini_config();
  ViTModel model(cfg);
  Rng init(18);
  model.init(init);
  const std::string path = "vit_roundtrip.ckpt";
  model.save_checkpoint(path);
  ViTModel loaded = ViTModel::load_checkpoint(path);
  CHECK(loaded.config().hidden_dim == cfg.hidden_dim);
  CHECK(loaded.config().layers == cfg.layers);

  Rng rng(19);
  FieldImage f = random_fields(rng, cfg.grid);
  std::vector<double> cond(22, 0.5);
  auto a = model.forward(f, cond);
  auto b = loaded.forward(f, cond);
  CHECK(a.prediction.data() == b.prediction.data());

  SUBCASE("corrupting a parameter byte fails the checksum") {
    FILE* file = std::fopen(path.c_str(), "r+b");
    REQUIRE(file);
    std::fseek(file, -40, SEEK_END);
    std::fputc(0xA5, file);
    std::fclose(file);
    CHECK_THROWS(ViTModel::load_checkpoint(path));
  }
  std::filesystem::remove(path);
}

TEST_CASE("condition-input widening is exact on zero-padded inputs") {
  ViTConfig cfg = mini_config();
  ViTModel model(cfg);
  Rng init(20);
  model.init(init);
  Rng rng(21);
  FieldImage f = random_fields(rng, cfg.grid);
  std::vector<double> cond(22, 0.3);
  auto before = model.forward(f, cond);

  model.widen_condition_input(32);
  CHECK(model.config().condition_dim == 32);
  std::vector<double> cond32 = cond;
  cond32.resize(32, 0.0);
  auto after = model.forward(f, cond32);
  CHECK(before.prediction.data() == after.prediction.data());
}

TEST_CASE("finetune groups partition the expected parameters") {
  ViTConfig cfg = ViTConfig::desk();
  ViTModel model(cfg);
  auto cp = model.group_param_names("class_projection");
  for (const auto& n : cp) CHECK(n.rfind("class_proj.", 0) == 0);
  CHECK(!cp.empty());
  auto dp = model.group_param_names("decoder_projection");
  for (const auto& n : dp) CHECK(n.rfind("decoder.", 0) == 0);
  auto dl = model.group_param_names("decoder_layers");
  // decoder_layers = both projections plus the last 3 blocks
  for (const auto& n : cp) CHECK(std::count(dl.begin(), dl.end(), n) == 1);
  for (const auto& n : dp) CHECK(std::count(dl.begin(), dl.end(), n) == 1);
  int block_params = 0;
  for (const auto& n : dl)
    if (n.rfind("blocks.", 0) == 0) {
      ++block_params;
      const int layer = std::stoi(n.substr(7));
      CHECK(layer >= cfg.layers - 3);
    }
  CHECK(block_params > 0);
  CHECK_THROWS(model.group_param_names("everything"));
}
