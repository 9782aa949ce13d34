#include "topoformer/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <thread>

#include "topoformer/io.hpp"
#include "topoformer/losses.hpp"

namespace topo {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

DensityField prediction_density(const ad::Tensor& prediction, const Grid& grid) {
  DensityField d;
  d.nelx = grid.nelx;
  d.nely = grid.nely;
  d.rho = prediction.node()->data;
  return d;
}

nlohmann::json report_json(const MetricsReport& r) {
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

SampleMetrics evaluate_design(const Sample& sample, const DensityField& binary,
                              const GenerateConfig& config, int index) {
  SampleMetrics m;
  m.index = index;
  m.gt_compliance = sample.gt_compliance;
  m.pred_compliance = compliance_of_design(sample.spec, binary, config);
  m.failed = !std::isfinite(m.pred_compliance);
  m.ce = m.failed ? std::numeric_limits<double>::infinity()
                  : std::abs(m.pred_compliance - m.gt_compliance) /
                        m.gt_compliance * 100.0;
  double mean = 0.0;
  for (double v : binary.rho) mean += v;
  mean /= static_cast<double>(binary.rho.size());
  m.vf_error = std::abs(mean - sample.spec.vf) * 100.0;
  m.load_missing = binary.rho[load_pixel(sample.spec)] == 0.0 ? 1 : 0;
  const auto cc =
      connected_components(binary.rho, binary.nelx, binary.nely);
  m.floating = cc.count > 1 ? 1 : 0;
  return m;
}

MetricsReport aggregate_metrics(const std::vector<SampleMetrics>& rows) {
  if (rows.empty()) throw std::invalid_argument("aggregate_metrics: no samples");
  MetricsReport r;
  r.sample_count = static_cast<int>(rows.size());
  std::vector<double> kept;
  double ce_sum = 0.0;
  int ce_n = 0, over = 0;
  for (const auto& m : rows) {
    if (m.failed) {
      ++r.failed_count;
      ++over;
    } else {
      ce_sum += m.ce;
      ++ce_n;
      if (m.ce > 30.0)
        ++over;
      else
        kept.push_back(m.ce);
    }
    r.mean_vf_error += m.vf_error;
    r.load_discrepancy += m.load_missing;
    r.floating_material += m.floating;
  }
  r.mean_ce = ce_n > 0 ? ce_sum / ce_n : std::numeric_limits<double>::infinity();
  r.frac_ce_over_30 = 100.0 * over / rows.size();
  r.mean_vf_error /= rows.size();
  r.load_discrepancy *= 100.0 / rows.size();
  r.floating_material *= 100.0 / rows.size();
  if (!kept.empty()) {
    std::sort(kept.begin(), kept.end());
    const std::size_t n = kept.size();
    r.median_ce = n % 2 ? kept[n / 2] : 0.5 * (kept[n / 2 - 1] + kept[n / 2]);
  } else {
    r.median_ce = std::numeric_limits<double>::infinity();
  }
  return r;
}

EvalResult evaluate_designs(const std::vector<DensityField>& predictions,
                            const std::vector<Sample>& data,
                            const GenerateConfig& config, double threshold,
                            int jobs) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty validation set");
  if (predictions.size() != data.size())
    throw std::invalid_argument("evaluate: prediction/sample count mismatch");
  const auto t0 = Clock::now();
  EvalResult result;
  result.rows.resize(data.size());
  result.rows_vf_matched.resize(data.size());

  auto worker = [&](int start, int stride) {
    for (std::size_t i = start; i < data.size(); i += stride) {
      DensityField hard = heaviside_binarize(predictions[i], threshold);
      result.rows[i] = evaluate_design(data[i], hard, config, static_cast<int>(i));
      DensityField matched = binarize_volume_preserving(predictions[i],
                                                        data[i].spec.vf);
      result.rows_vf_matched[i] =
          evaluate_design(data[i], matched, config, static_cast<int>(i));
    }
  };
  jobs = std::max(1, jobs);
  if (jobs == 1) {
    worker(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker, j, jobs);
    for (auto& t : pool) t.join();
  }
  result.threshold = aggregate_metrics(result.rows);
  result.vf_matched = aggregate_metrics(result.rows_vf_matched);
  result.wall_seconds = seconds_since(t0);
  return result;
}

EvalResult evaluate(ViTModel& model, const std::vector<Sample>& data,
                    const GenerateConfig& config, double threshold, int jobs) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty validation set");
  std::vector<DensityField> predictions(data.size());
  double infer_seconds = 0.0;
  ad::NoGradGuard no_grad;  // inference only
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto t0 = Clock::now();
    const auto cond = condition_vector(data[i].spec, data[i].fft);
    auto fwd = model.forward(data[i].fields, cond);
    predictions[i] = prediction_density(fwd.prediction, data[i].spec.grid);
    infer_seconds += seconds_since(t0);
  }
  EvalResult result = evaluate_designs(predictions, data, config, threshold, jobs);
  result.mean_inference_seconds = infer_seconds / data.size();
  return result;
}

BenchResult bench_speedup(ViTModel& model, const std::vector<ProblemSpec>& problems,
                          const GenerateConfig& config) {
  if (problems.size() < 5)
    throw std::invalid_argument("bench_speedup: needs at least 5 problems");
  BenchResult r;
  r.problem_count = static_cast<int>(problems.size());
  {
    // warm-up forward so first-call effects (page faults, lazy buffers) do
    // not pollute the per-problem inference timing
    ad::NoGradGuard no_grad;
    const ProblemSpec& spec = problems.front();
    std::vector<double> fft;
    if (spec.kind == ProblemKind::kDynamic)
      fft = fft_load_features(spec.shape, config.fft_samples);
    model.forward(uniform_domain_fields(spec), condition_vector(spec, fft));
  }
  for (const ProblemSpec& spec : problems) {
    OptimizerConfig oc = config.optimizer;
    oc.volume_fraction = spec.vf;
    auto t0 = Clock::now();
    if (spec.kind == ProblemKind::kStatic) {
      optimize_static({spec.grid, spec.material, spec.bc, spec.load}, oc);
    } else {
      optimize_dynamic({spec.grid, spec.material, spec.bc,
                        DynamicLoad{spec.load, spec.shape}},
                       config.dynamics, oc);
    }
    r.optimizer_mean_seconds += seconds_since(t0);

    t0 = Clock::now();
    FieldImage fields = uniform_domain_fields(spec);
    std::vector<double> fft;
    if (spec.kind == ProblemKind::kDynamic)
      fft = fft_load_features(spec.shape, config.fft_samples);
    {
      ad::NoGradGuard no_grad;  // time pure inference
      model.forward(fields, condition_vector(spec, fft));
    }
    r.inference_mean_seconds += seconds_since(t0);
  }
  r.optimizer_mean_seconds /= problems.size();
  r.inference_mean_seconds /= problems.size();
  r.ratio = r.optimizer_mean_seconds / r.inference_mean_seconds;
  return r;
}

void write_metrics_json(const EvalResult& result, const std::string& path) {
  nlohmann::json j{{"threshold", report_json(result.threshold)},
                   {"vf_matched", report_json(result.vf_matched)},
                   {"wall_seconds", result.wall_seconds},
                   {"mean_inference_seconds", result.mean_inference_seconds}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << j.dump(2) << "\n";
}

void write_sample_csv(const std::vector<SampleMetrics>& rows,
                      const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot open " + path);
  std::fprintf(f, "index,gt_compliance,pred_compliance,ce_pct,vf_error_pct,"
                  "load_missing,floating,failed\n");
  for (const auto& m : rows)
    std::fprintf(f, "%d,%.9g,%.9g,%.9g,%.9g,%d,%d,%d\n", m.index,
                 m.gt_compliance, m.pred_compliance, m.ce, m.vf_error,
                 m.load_missing, m.floating, m.failed ? 1 : 0);
  std::fclose(f);
}

void write_triptych(const DensityField& truth, const DensityField& prediction,
                    const std::string& path) {
  if (truth.nelx != prediction.nelx || truth.nely != prediction.nely)
    throw std::invalid_argument("write_triptych: size mismatch");
  const int w = truth.nelx, h = truth.nely;
  const int gap = 2;
  const int width = 3 * w + 2 * gap;
  std::vector<double> pixels(static_cast<std::size_t>(width) * h, 0.5);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t src = static_cast<std::size_t>(y) * w + x;
      // row 0 of the image is the top; density row 0 is the bottom
      const std::size_t row = static_cast<std::size_t>(h - 1 - y) * width;
      pixels[row + x] = truth.rho[src];
      pixels[row + w + gap + x] = prediction.rho[src];
      pixels[row + 2 * (w + gap) + x] =
          0.5 + 0.5 * (prediction.rho[src] - truth.rho[src]);
    }
  write_pgm(path, pixels, width, h);
}

}  // namespace topo
