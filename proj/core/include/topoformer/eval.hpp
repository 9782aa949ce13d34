#pragma once

#include <string>
#include <vector>

#include "topoformer/dataset.hpp"
#include "topoformer/vit.hpp"

namespace topo {

struct SampleMetrics {
  int index = 0;
  double gt_compliance = 0.0;
  double pred_compliance = 0.0;
  double ce = 0.0;        // |C_pred - C_gt| / C_gt * 100; +inf when failed
  double vf_error = 0.0;  // |mean(binary) - f| * 100
  int load_missing = 0;   // 1 when the binary density at the load element is 0
  int floating = 0;       // 1 when the binary design has > 1 component
  bool failed = false;    // void or singular prediction
};

struct MetricsReport {
  double mean_ce = 0.0;            // over non-failed samples
  double frac_ce_over_30 = 0.0;    // %, failed samples count here
  double median_ce = 0.0;          // over samples with CE <= 30% only
  double mean_vf_error = 0.0;      // %
  double load_discrepancy = 0.0;   // % of samples with load_missing
  double floating_material = 0.0;  // % of samples with floating
  int sample_count = 0;
  int failed_count = 0;
};

struct EvalResult {
  MetricsReport threshold;   // fixed-threshold binarization
  MetricsReport vf_matched;  // volume-preserving binarization
  std::vector<SampleMetrics> rows;             // fixed threshold
  std::vector<SampleMetrics> rows_vf_matched;  // volume matched
  double wall_seconds = 0.0;
  double mean_inference_seconds = 0.0;
};

/// Metrics of one binary design against the sample's ground truth.
SampleMetrics evaluate_design(const Sample& sample, const DensityField& binary,
                              const GenerateConfig& config, int index = 0);

/// Aggregates per-sample rows into a report.
MetricsReport aggregate_metrics(const std::vector<SampleMetrics>& rows);

/// Runs the surrogate over the validation set, binarizes each prediction at
/// `threshold` and (separately) with volume matching, and scores both.
/// Deterministic given model + data + threshold. `jobs` threads process
/// samples independently; the result is independent of `jobs`.
EvalResult evaluate(ViTModel& model, const std::vector<Sample>& data,
                    const GenerateConfig& config, double threshold = 0.5,
                    int jobs = 1);

/// Scores precomputed densities instead of model outputs (ground-truth
/// passthrough gives an all-zero report). `predictions[i]` pairs with
/// `data[i]`.
EvalResult evaluate_designs(const std::vector<DensityField>& predictions,
                            const std::vector<Sample>& data,
                            const GenerateConfig& config, double threshold = 0.5,
                            int jobs = 1);

struct BenchResult {
  double optimizer_mean_seconds = 0.0;
  double inference_mean_seconds = 0.0;
  double ratio = 0.0;
  int problem_count = 0;
};

/// Wall-clocks the iterative optimizer and the surrogate forward pass on the
/// same problem set. Requires at least 5 problems.
BenchResult bench_speedup(ViTModel& model, const std::vector<ProblemSpec>& problems,
                          const GenerateConfig& config);

void write_metrics_json(const EvalResult& result, const std::string& path);
void write_sample_csv(const std::vector<SampleMetrics>& rows,
                      const std::string& path);
/// Side-by-side PGM: ground truth | prediction | signed difference
/// (difference remapped so 0.5 is grey).
void write_triptych(const DensityField& truth, const DensityField& prediction,
                    const std::string& path);

}  // namespace topo
