// Command-line front end: dataset generation, optimization, training,
// inference, evaluation and benchmarking as reproducible subcommands.
//
// Exit codes: 0 success, 1 usage error, 2 I/O error, 3 schema error.
// Every run writes a JSON manifest (success and failure alike).

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "topoformer/dataset.hpp"
#include "topoformer/eval.hpp"
#include "topoformer/io.hpp"
#include "topoformer/train.hpp"
#include "topoformer/vit.hpp"

#ifndef TOPOFORMER_BUILD_ID
#define TOPOFORMER_BUILD_ID "unknown"
#endif

namespace {

using nlohmann::json;
using namespace topo;

constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitSchema = 3;

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string timestamp_utc() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw SchemaError(path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Config parsing

ProblemSpec spec_from_json(const json& j) {
  ProblemSpec s;
  try {
    s.grid.nelx = j.value("nelx", 64);
    s.grid.nely = j.value("nely", 64);
    s.material.E0 = j.value("e0", 1.0);
    s.material.Emin = j.value("emin", 1e-9);
    s.material.nu = j.value("nu", 0.3);
    s.bc.mask = static_cast<std::uint16_t>(j.at("bc_mask").get<unsigned>());
    const json& load = j.at("load");
    s.load.ex = load.at("ex").get<int>();
    s.load.ey = load.at("ey").get<int>();
    s.load.fx = load.at("fx").get<double>();
    s.load.fy = load.at("fy").get<double>();
    s.load.angle_index = load.value("angle_index", -1);
    s.vf = j.value("vf", 0.4);
    const std::string kind = j.value("kind", std::string("static"));
    if (kind == "static")
      s.kind = ProblemKind::kStatic;
    else if (kind == "dynamic")
      s.kind = ProblemKind::kDynamic;
    else
      throw SchemaError("unknown problem kind: " + kind);
    const std::string shape = j.value("load_shape", std::string("sine"));
    if (shape == "sine")
      s.shape = LoadShape::kSine;
    else if (shape == "impulse")
      s.shape = LoadShape::kImpulse;
    else
      throw SchemaError("unknown load shape: " + shape);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("problem spec: ") + e.what());
  }
  if (s.grid.nelx < 1 || s.grid.nely < 1 || s.vf <= 0.0 || s.vf > 1.0)
    throw SchemaError("problem spec: invalid grid or volume fraction");
  return s;
}

json spec_to_json(const ProblemSpec& s) {
  return {{"nelx", s.grid.nelx},
          {"nely", s.grid.nely},
          {"e0", s.material.E0},
          {"emin", s.material.Emin},
          {"nu", s.material.nu},
          {"bc_mask", s.bc.mask},
          {"load",
           {{"ex", s.load.ex},
            {"ey", s.load.ey},
            {"fx", s.load.fx},
            {"fy", s.load.fy},
            {"angle_index", s.load.angle_index}}},
          {"vf", s.vf},
          {"kind", s.kind == ProblemKind::kStatic ? "static" : "dynamic"},
          {"load_shape", s.shape == LoadShape::kSine ? "sine" : "impulse"}};
}

GenerateConfig generate_config_from_json(const json& j) {
  GenerateConfig c;
  try {
    if (j.contains("optimizer")) {
      const json& o = j["optimizer"];
      c.optimizer.penalty = o.value("penalty", c.optimizer.penalty);
      c.optimizer.filter_radius = o.value("filter_radius", c.optimizer.filter_radius);
      c.optimizer.move_limit = o.value("move_limit", c.optimizer.move_limit);
      c.optimizer.tolerance = o.value("tolerance", c.optimizer.tolerance);
      c.optimizer.max_iterations =
          o.value("max_iterations", c.optimizer.max_iterations);
    }
    if (j.contains("dynamics")) {
      const json& d = j["dynamics"];
      c.dynamics.time.t_end = d.value("t_end", c.dynamics.time.t_end);
      c.dynamics.time.n_steps = d.value("n_steps", c.dynamics.time.n_steps);
      c.dynamics.rayleigh_alpha = d.value("rayleigh_alpha", c.dynamics.rayleigh_alpha);
      c.dynamics.rayleigh_beta = d.value("rayleigh_beta", c.dynamics.rayleigh_beta);
    }
    c.fft_samples = j.value("fft_samples", c.fft_samples);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("generate config: ") + e.what());
  }
  return c;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  try {
    c.iterations = j.value("iterations", c.iterations);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.log_every = j.value("log_every", c.log_every);
    c.loss_log_path = j.value("loss_log", c.loss_log_path);
    if (j.contains("weights")) {
      const json& w = j["weights"];
      c.weights.pixel = w.value("pixel", c.weights.pixel);
      c.weights.vf = w.value("vf", c.weights.vf);
      c.weights.load = w.value("load", c.weights.load);
      c.weights.fm = w.value("fm", c.weights.fm);
      c.weights.mask = w.value("mask", c.weights.mask);
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("train config: ") + e.what());
  }
  return c;
}

ViTConfig model_config_from_json(const json& j, int grid, int condition_dim) {
  ViTConfig c = ViTConfig::desk();
  try {
    if (j.contains("model")) {
      const json& m = j["model"];
      if (m.contains("family")) {
        const std::string family = m["family"].get<std::string>();
        c = family == "desk" ? ViTConfig::desk() : ViTConfig::family(family);
      }
      c.hidden_dim = m.value("hidden_dim", c.hidden_dim);
      c.layers = m.value("layers", c.layers);
      c.heads = m.value("heads", c.heads);
      c.patch_size = m.value("patch_size", c.patch_size);
      c.mask_ratio = m.value("mask_ratio", c.mask_ratio);
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("model config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  c.grid = grid;
  c.condition_dim = condition_dim;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Output helpers

/// Densities as an 8-bit PGM, bottom element row rendered at the bottom.
void write_density_pgm(const std::string& path, const DensityField& d) {
  std::vector<double> pixels(d.rho.size());
  for (int y = 0; y < d.nely; ++y)
    for (int x = 0; x < d.nelx; ++x)
      pixels[static_cast<std::size_t>(d.nely - 1 - y) * d.nelx + x] =
          d.rho[static_cast<std::size_t>(y) * d.nelx + x];
  write_pgm(path, pixels, d.nelx, d.nely);
}

// ---------------------------------------------------------------------------
// Manifest plumbing

struct RunContext {
  std::string subcommand;
  json config;  // merged file + flag configuration
  std::uint64_t seed = 0;
  std::string manifest_path = "run_manifest.json";
  std::vector<std::string> outputs;
};

void write_manifest(const RunContext& ctx, const std::string& start,
                    const std::string& status, const std::string& error) {
  json j{{"subcommand", ctx.subcommand}, {"config", ctx.config},
         {"seed", ctx.seed},             {"build_id", TOPOFORMER_BUILD_ID},
         {"started_at", start},          {"finished_at", timestamp_utc()},
         {"status", status},             {"outputs", ctx.outputs}};
  if (!error.empty()) j["error"] = error;
  std::ofstream out(ctx.manifest_path);
  if (out) out << j.dump(2) << "\n";
}

/// Runs `body`, writes the manifest on every path, maps exceptions to codes.
int run_with_manifest(RunContext& ctx, const std::function<void()>& body) {
  const std::string start = timestamp_utc();
  try {
    body();
  } catch (const SchemaError& e) {
    std::cerr << ctx.subcommand << ": " << e.what() << "\n";
    write_manifest(ctx, start, "failed", e.what());
    return kExitSchema;
  } catch (const std::invalid_argument& e) {
    std::cerr << ctx.subcommand << ": " << e.what() << "\n";
    write_manifest(ctx, start, "failed", e.what());
    return kExitSchema;
  } catch (const json::exception& e) {
    std::cerr << ctx.subcommand << ": " << e.what() << "\n";
    write_manifest(ctx, start, "failed", e.what());
    return kExitSchema;
  } catch (const std::exception& e) {
    std::cerr << ctx.subcommand << ": " << e.what() << "\n";
    write_manifest(ctx, start, "failed", e.what());
    return kExitIo;
  }
  write_manifest(ctx, start, "ok", "");
  return 0;
}

std::uint64_t env_seed_default() {
  const char* env = std::getenv("TOPOFORMER_SEED");
  return env ? std::strtoull(env, nullptr, 10) : 0;
}

Dataset read_dataset_checked(const std::string& path) {
  try {
    return read_dataset(path);
  } catch (const std::runtime_error& e) {
    // distinguish an unreadable file (I/O) from a corrupt one (schema)
    std::ifstream probe(path);
    if (!probe) throw IoError("cannot open " + path);
    throw SchemaError(e.what());
  }
}

ViTModel load_checkpoint_checked(const std::string& path) {
  try {
    return ViTModel::load_checkpoint(path);
  } catch (const std::runtime_error& e) {
    std::ifstream probe(path);
    if (!probe) throw IoError("cannot open " + path);
    throw SchemaError(e.what());
  }
}

/// Generates `n` converged samples from a deterministic seed stream; chunks
/// are computed in parallel but appended in seed order, so the dataset is
/// independent of `jobs`.
std::vector<Sample> generate_samples(ProblemKind kind, int n, std::uint64_t seed,
                                     int grid, const GenerateConfig& config,
                                     int jobs) {
  std::vector<Sample> out;
  out.reserve(n);
  std::uint64_t next = seed;
  jobs = std::max(1, jobs);
  const int chunk = std::max(jobs, 4);
  while (static_cast<int>(out.size()) < n) {
    std::vector<std::optional<Sample>> results(chunk);
    auto worker = [&](int start) {
      for (int i = start; i < chunk; i += jobs) {
        const ProblemSpec spec = sample_problem(next + i, kind, grid, grid);
        results[i] = generate_sample(spec, config);
      }
    };
    if (jobs == 1) {
      worker(0);
    } else {
      std::vector<std::thread> pool;
      for (int j = 0; j < jobs; ++j) pool.emplace_back(worker, j);
      for (auto& t : pool) t.join();
    }
    for (int i = 0; i < chunk && static_cast<int>(out.size()) < n; ++i)
      if (results[i]) out.push_back(std::move(*results[i]));
    next += chunk;
  }
  return out;
}

json report_to_json(const MetricsReport& r) {
  return {{"mean_compliance_error_pct", r.mean_ce},
          {"frac_ce_over_30_pct", r.frac_ce_over_30},
          {"median_ce_pct", r.median_ce},
          {"mean_vf_error_pct", r.mean_vf_error},
          {"load_discrepancy_pct", r.load_discrepancy},
          {"floating_material_pct", r.floating_material},
          {"sample_count", r.sample_count},
          {"failed_count", r.failed_count}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer surrogate toolkit for density-based structural "
               "topology optimization"};
  app.require_subcommand(1);

  // shared flag storage
  std::string kind_str = "static", out_path, spec_path, config_path, data_path;
  std::string ckpt_path, base_path, report_path, image_path, csv_path;
  std::string groups_str, manifest_path;
  std::uint64_t seed = env_seed_default();
  int n = 10, grid = 64, jobs = static_cast<int>(std::max(
      1u, std::thread::hardware_concurrency()));
  double threshold = 0.5;
  bool oracle = false;

  auto add_manifest = [&](CLI::App* cmd) {
    cmd->add_option("--manifest", manifest_path,
                    "Run manifest path (default: run_manifest.json)");
  };
  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed,
                    "Random seed (default: $TOPOFORMER_SEED or 0)");
  };

  CLI::App* gen = app.add_subcommand("gen", "Generate a ground-truth dataset");
  gen->add_option("--kind", kind_str, "static | dynamic")
      ->check(CLI::IsMember({"static", "dynamic"}));
  gen->add_option("--n", n, "Number of samples")->check(CLI::PositiveNumber);
  gen->add_option("--grid", grid, "Square grid size")->check(CLI::PositiveNumber);
  gen->add_option("--out", out_path, "Output dataset file")->required();
  gen->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  gen->add_option("--config", config_path, "Generator config JSON");
  add_seed(gen);
  add_manifest(gen);

  CLI::App* fields = app.add_subcommand(
      "fields", "Physics input fields of a problem spec (uniform domain)");
  fields->add_option("--spec", spec_path, "Problem spec JSON")->required();
  fields->add_option("--out", out_path, "Output PGM (energy | stress panels)")
      ->required();
  add_manifest(fields);

  CLI::App* optimize =
      app.add_subcommand("optimize", "Run the iterative optimizer on one spec");
  optimize->add_option("--spec", spec_path, "Problem spec JSON")->required();
  optimize->add_option("--out", out_path, "Output density PGM")->required();
  optimize->add_option("--config", config_path, "Generator config JSON");
  add_manifest(optimize);

  CLI::App* train_cmd = app.add_subcommand("train", "Train the surrogate");
  train_cmd->add_option("--config", config_path, "Training config JSON");
  train_cmd->add_option("--data", data_path, "Training dataset")->required();
  train_cmd->add_option("--out", out_path, "Output checkpoint")->required();
  add_seed(train_cmd);
  add_manifest(train_cmd);

  CLI::App* finetune_cmd =
      app.add_subcommand("finetune", "Transfer-train parameter groups");
  finetune_cmd->add_option("--base", base_path, "Base checkpoint")->required();
  finetune_cmd
      ->add_option("--groups", groups_str,
                   "Comma-separated: class_projection,decoder_projection,"
                   "decoder_layers")
      ->required();
  finetune_cmd->add_option("--data", data_path, "Dynamic dataset")->required();
  finetune_cmd->add_option("--out", out_path, "Output checkpoint")->required();
  finetune_cmd->add_option("--config", config_path, "Training config JSON");
  add_seed(finetune_cmd);
  add_manifest(finetune_cmd);

  CLI::App* infer = app.add_subcommand("infer", "Predict one topology");
  infer->add_option("--ckpt", ckpt_path, "Model checkpoint")->required();
  infer->add_option("--spec", spec_path, "Problem spec JSON")->required();
  infer->add_option("--out-image", image_path, "Output density PGM")->required();
  add_manifest(infer);

  CLI::App* eval_cmd = app.add_subcommand("eval", "Score a model on a dataset");
  eval_cmd->add_option("--ckpt", ckpt_path, "Model checkpoint");
  eval_cmd->add_option("--data", data_path, "Validation dataset")->required();
  eval_cmd->add_option("--report", report_path, "Metrics JSON")->required();
  eval_cmd->add_option("--csv", csv_path, "Optional per-sample CSV");
  eval_cmd->add_option("--threshold", threshold, "Binarization threshold");
  eval_cmd->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  eval_cmd->add_flag("--oracle", oracle,
                     "Score the stored ground truth instead of a model");
  eval_cmd->add_option("--config", config_path, "Generator config JSON");
  add_manifest(eval_cmd);

  CLI::App* bench =
      app.add_subcommand("bench", "Optimizer vs. inference wall-clock ratio");
  bench->add_option("--ckpt", ckpt_path, "Model checkpoint")->required();
  bench->add_option("--n", n, "Problem count (>= 5)")->check(CLI::PositiveNumber);
  bench->add_option("--kind", kind_str, "static | dynamic")
      ->check(CLI::IsMember({"static", "dynamic"}));
  bench->add_option("--grid", grid, "Square grid size")->check(CLI::PositiveNumber);
  bench->add_option("--report", report_path, "Output report JSON");
  bench->add_option("--config", config_path, "Generator config JSON");
  add_seed(bench);
  add_manifest(bench);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // exits 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  RunContext ctx;
  ctx.seed = seed;
  if (!manifest_path.empty()) ctx.manifest_path = manifest_path;

  // ------------------------------------------------------------------ gen
  if (gen->parsed()) {
    ctx.subcommand = "gen";
    json file_config = config_path.empty() ? json::object()
                                           : read_json_file(config_path);
    ctx.config = {{"kind", kind_str}, {"n", n},       {"grid", grid},
                  {"jobs", jobs},     {"out", out_path}, {"generator", file_config}};
    return run_with_manifest(ctx, [&] {
      const GenerateConfig gc = generate_config_from_json(file_config);
      const ProblemKind kind =
          kind_str == "static" ? ProblemKind::kStatic : ProblemKind::kDynamic;
      std::vector<Sample> samples =
          generate_samples(kind, n, seed, grid, gc, jobs);
      // keep the embedded header free of run-specific fields so identical
      // seeds produce byte-identical files regardless of path or job count
      json header_config = ctx.config;
      header_config.erase("out");
      header_config.erase("jobs");
      write_dataset(out_path, samples, header_config);
      ctx.outputs.push_back(out_path);
      std::cout << "wrote " << samples.size() << " samples to " << out_path
                << "\n";
    });
  }

  // --------------------------------------------------------------- fields
  if (fields->parsed()) {
    ctx.subcommand = "fields";
    ctx.config = {{"spec", spec_path}, {"out", out_path}};
    return run_with_manifest(ctx, [&] {
      const ProblemSpec spec = spec_from_json(read_json_file(spec_path));
      const FieldImage img = uniform_domain_fields(spec);
      const int w = spec.grid.nelx, h = spec.grid.nely, gap = 2;
      const int width = 2 * w + gap;
      std::vector<double> pixels(static_cast<std::size_t>(width) * h, 0.5);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const std::size_t src = static_cast<std::size_t>(y) * w + x;
          const std::size_t row = static_cast<std::size_t>(h - 1 - y) * width;
          pixels[row + x] = img.sed[src];
          pixels[row + w + gap + x] = img.vm[src];
        }
      write_pgm(out_path, pixels, width, h);
      ctx.outputs.push_back(out_path);
    });
  }

  // ------------------------------------------------------------- optimize
  if (optimize->parsed()) {
    ctx.subcommand = "optimize";
    json file_config = config_path.empty() ? json::object()
                                           : read_json_file(config_path);
    ctx.config = {{"spec", spec_path}, {"out", out_path},
                  {"generator", file_config}};
    return run_with_manifest(ctx, [&] {
      const ProblemSpec spec = spec_from_json(read_json_file(spec_path));
      const GenerateConfig gc = generate_config_from_json(file_config);
      OptimizerConfig oc = gc.optimizer;
      oc.volume_fraction = spec.vf;
      OptimizeResult result;
      if (spec.kind == ProblemKind::kStatic)
        result = optimize_static({spec.grid, spec.material, spec.bc, spec.load}, oc);
      else
        result = optimize_dynamic({spec.grid, spec.material, spec.bc,
                                   DynamicLoad{spec.load, spec.shape}},
                                  gc.dynamics, oc);
      write_density_pgm(out_path, result.density);
      ctx.outputs.push_back(out_path);
      const std::string summary_path = out_path + ".json";
      write_json_file(summary_path,
                      {{"spec", spec_to_json(spec)},
                       {"converged", result.converged},
                       {"iterations", result.compliance_history.size()},
                       {"final_compliance", result.compliance_history.back()},
                       {"mean_density", result.density.mean()}});
      ctx.outputs.push_back(summary_path);
    });
  }

  // ---------------------------------------------------------------- train
  if (train_cmd->parsed()) {
    ctx.subcommand = "train";
    json file_config = config_path.empty() ? json::object()
                                           : read_json_file(config_path);
    ctx.config = {{"data", data_path}, {"out", out_path},
                  {"train", file_config}};
    return run_with_manifest(ctx, [&] {
      Dataset dataset = read_dataset_checked(data_path);
      if (dataset.samples.empty())
        throw SchemaError("dataset " + data_path + " is empty");
      const ProblemSpec& first = dataset.samples[0].spec;
      if (first.grid.nelx != first.grid.nely)
        throw SchemaError("training requires a square grid");
      const int cond =
          first.kind == ProblemKind::kDynamic ? 32 : 22;
      ViTModel model(
          model_config_from_json(file_config, first.grid.nelx, cond));
      Rng rng(seed);
      model.init(rng);
      TrainConfig tc = train_config_from_json(file_config);
      tc.seed = seed;
      tc.checkpoint_path = out_path;
      TrainResult result = train(model, dataset.samples, tc);
      ctx.outputs.push_back(out_path);
      if (!tc.loss_log_path.empty()) ctx.outputs.push_back(tc.loss_log_path);
      std::cout << "final loss " << result.final_loss << "\n";
    });
  }

  // ------------------------------------------------------------- finetune
  if (finetune_cmd->parsed()) {
    ctx.subcommand = "finetune";
    json file_config = config_path.empty() ? json::object()
                                           : read_json_file(config_path);
    ctx.config = {{"base", base_path}, {"groups", groups_str},
                  {"data", data_path}, {"out", out_path},
                  {"train", file_config}};
    return run_with_manifest(ctx, [&] {
      ViTModel model = load_checkpoint_checked(base_path);
      Dataset dataset = read_dataset_checked(data_path);
      std::vector<std::string> groups;
      for (std::size_t pos = 0; pos < groups_str.size();) {
        std::size_t comma = groups_str.find(',', pos);
        if (comma == std::string::npos) comma = groups_str.size();
        if (comma > pos) groups.push_back(groups_str.substr(pos, comma - pos));
        pos = comma + 1;
      }
      TrainConfig tc = train_config_from_json(file_config);
      tc.seed = seed;
      tc.checkpoint_path = out_path;
      TrainResult result = finetune(model, groups, dataset.samples, tc);
      ctx.outputs.push_back(out_path);
      std::cout << "final loss " << result.final_loss << "\n";
    });
  }

  // ---------------------------------------------------------------- infer
  if (infer->parsed()) {
    ctx.subcommand = "infer";
    ctx.config = {{"ckpt", ckpt_path}, {"spec", spec_path},
                  {"out_image", image_path}};
    return run_with_manifest(ctx, [&] {
      ViTModel model = load_checkpoint_checked(ckpt_path);
      const ProblemSpec spec = spec_from_json(read_json_file(spec_path));
      const int want = spec.kind == ProblemKind::kDynamic ? 32 : 22;
      if (model.config().condition_dim != want)
        throw SchemaError("checkpoint condition size does not match spec kind");
      if (model.config().grid != spec.grid.nelx ||
          model.config().grid != spec.grid.nely)
        throw SchemaError("checkpoint grid does not match spec grid");
      std::vector<double> fft;
      if (spec.kind == ProblemKind::kDynamic)
        fft = fft_load_features(spec.shape);
      const FieldImage img = uniform_domain_fields(spec);
      ad::NoGradGuard no_grad;  // inference only
      auto fwd = model.forward(img, condition_vector(spec, fft));
      DensityField pred{spec.grid.nelx, spec.grid.nely, fwd.prediction.node()->data};
      write_density_pgm(image_path, pred);
      ctx.outputs.push_back(image_path);
      const DensityField binary = heaviside_binarize(pred, 0.5);
      const std::string summary_path = image_path + ".json";
      write_json_file(summary_path, {{"spec", spec_to_json(spec)},
                                     {"predicted_vf", pred.mean()},
                                     {"predicted_vf_binary", binary.mean()},
                                     {"target_vf", spec.vf}});
      ctx.outputs.push_back(summary_path);
    });
  }

  // ----------------------------------------------------------------- eval
  if (eval_cmd->parsed()) {
    ctx.subcommand = "eval";
    json file_config = config_path.empty() ? json::object()
                                           : read_json_file(config_path);
    ctx.config = {{"ckpt", ckpt_path},   {"data", data_path},
                  {"report", report_path}, {"threshold", threshold},
                  {"jobs", jobs},          {"oracle", oracle},
                  {"generator", file_config}};
    return run_with_manifest(ctx, [&] {
      if (!oracle && ckpt_path.empty())
        throw SchemaError("eval needs --ckpt unless --oracle is given");
      Dataset dataset = read_dataset_checked(data_path);
      const GenerateConfig gc = generate_config_from_json(file_config);
      EvalResult result;
      if (oracle) {
        std::vector<DensityField> preds;
        preds.reserve(dataset.samples.size());
        for (const Sample& s : dataset.samples) preds.push_back(s.topology);
        result = evaluate_designs(preds, dataset.samples, gc, threshold, jobs);
      } else {
        ViTModel model = load_checkpoint_checked(ckpt_path);
        const ProblemSpec& first = dataset.samples.at(0).spec;
        const int want = first.kind == ProblemKind::kDynamic ? 32 : 22;
        if (model.config().condition_dim != want ||
            model.config().grid != first.grid.nelx)
          throw SchemaError("checkpoint does not match dataset schema");
        result = evaluate(model, dataset.samples, gc, threshold, jobs);
      }
      write_metrics_json(result, report_path);
      ctx.outputs.push_back(report_path);
      if (!csv_path.empty()) {
        write_sample_csv(result.rows, csv_path);
        ctx.outputs.push_back(csv_path);
      }
      std::cout << "mean CE " << result.threshold.mean_ce << "% over "
                << result.threshold.sample_count << " samples\n";
    });
  }

  // ---------------------------------------------------------------- bench
  if (bench->parsed()) {
    ctx.subcommand = "bench";
    json file_config = config_path.empty() ? json::object()
                                           : read_json_file(config_path);
    ctx.config = {{"ckpt", ckpt_path}, {"n", n},
                  {"kind", kind_str},  {"grid", grid},
                  {"report", report_path}, {"generator", file_config}};
    return run_with_manifest(ctx, [&] {
      ViTModel model = load_checkpoint_checked(ckpt_path);
      const GenerateConfig gc = generate_config_from_json(file_config);
      const ProblemKind kind =
          kind_str == "static" ? ProblemKind::kStatic : ProblemKind::kDynamic;
      std::vector<ProblemSpec> problems;
      for (int i = 0; i < n; ++i)
        problems.push_back(sample_problem(seed + i, kind, grid, grid));
      BenchResult r = bench_speedup(model, problems, gc);
      json j{{"optimizer_mean_seconds", r.optimizer_mean_seconds},
             {"inference_mean_seconds", r.inference_mean_seconds},
             {"speedup_ratio", r.ratio},
             {"problem_count", r.problem_count},
             {"kind", kind_str}};
      std::cout << "speedup " << r.ratio << "x over " << r.problem_count
                << " problems\n";
      if (!report_path.empty()) {
        write_json_file(report_path, j);
        ctx.outputs.push_back(report_path);
      }
    });
  }

  return kExitUsage;  // unreachable: a subcommand is required
}
