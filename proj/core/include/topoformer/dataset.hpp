#pragma once

#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <string>
#include <vector>

#include "topoformer/fea.hpp"
#include "topoformer/simp_dynamic.hpp"
#include "topoformer/simp_static.hpp"

namespace topo {

enum class ProblemKind { kStatic, kDynamic };

struct ProblemSpec {
  Grid grid{64, 64};
  Material material;
  BoundarySpec bc;
  PointLoad load;
  ProblemKind kind = ProblemKind::kStatic;
  LoadShape shape = LoadShape::kSine;  // dynamic only
  double vf = 0.4;
};

struct Sample {
  ProblemSpec spec;
  FieldImage fields;       // normalized, computed on the uniform domain
  DensityField topology;   // binary ground truth
  double gt_compliance = 0.0;
  std::vector<double> fft;  // 10 amplitudes, dynamic only
};

/// Uniform draws per the dataset protocol: boundary element, one of 6 load
/// angles, 1-4 distinct fixture sites, vf ~ U[0.30, 0.50]; dynamic kind adds
/// a load shape. Deterministic in the seed.
ProblemSpec sample_problem(std::uint64_t seed, ProblemKind kind,
                           int nelx = 64, int nely = 64);

/// Magnitudes of DFT bins 0..9 of g(t) sampled at n uniform points on [0,1),
/// normalized by n. Throws if n < 20.
std::vector<double> fft_load_features(LoadShape shape, int n_time_samples = 256);

/// Magnitudes of DFT bins 0..9 of an arbitrary sample vector, normalized by
/// its length. Throws if fewer than 20 samples are given.
std::vector<double> dft_magnitudes(const std::vector<double>& samples);

/// Flattened condition scalars for the class-token projection:
/// 22 static (pos x/nelx, pos y/nely, cos, sin, magnitude, 16 fixture bits,
/// vf); dynamic appends the 10 FFT amplitudes (32 total).
std::vector<double> condition_vector(const ProblemSpec& spec,
                                     const std::vector<double>& fft = {});

struct GenerateConfig {
  OptimizerConfig optimizer;
  DynamicsConfig dynamics;
  int fft_samples = 256;
};

/// Runs the full pipeline for one spec: uniform-domain fields, ground-truth
/// optimization, volume-preserving binarization, compliance of the binary
/// design. Returns nullopt when the optimizer hits the iteration cap without
/// converging (the sample is excluded). Output values are quantized to f32
/// so that serialization round-trips bit-exactly.
std::optional<Sample> generate_sample(const ProblemSpec& spec,
                                      const GenerateConfig& config);

/// Compliance of a fixed binary design under the spec's load (static f^T u or
/// dynamic time-summed work). Returns +inf for a fully void design or when
/// the solve fails.
double compliance_of_design(const ProblemSpec& spec, const DensityField& density,
                            const GenerateConfig& config);

/// The flat pixel index of the load element in image layout.
int load_pixel(const ProblemSpec& spec);

/// Normalized strain-energy-density and von Mises fields of the uniform
/// full-material domain under the spec's load: the surrogate's input image.
FieldImage uniform_domain_fields(const ProblemSpec& spec);

/// Dihedral-group transforms (identity, 3 rotations, 4 reflections) applied
/// consistently to fields, topology, fixtures, load position and direction.
/// Requires a square grid. Index 0 is the identity.
Sample transform_sample(const Sample& sample, int transform);
std::vector<Sample> augment(const Sample& sample);

/// Container file: magic "TOPODS01", length-prefixed JSON manifest, then
/// per-sample little-endian f32 records each followed by a CRC32.
void write_dataset(const std::string& path, const std::vector<Sample>& samples,
                   const nlohmann::json& generator_config);

struct Dataset {
  std::vector<Sample> samples;
  std::string manifest_json;
};
Dataset read_dataset(const std::string& path);

}  // namespace topo
