#include "topoformer/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "topoformer/io.hpp"
#include "topoformer/rng.hpp"

namespace topo {

using json = nlohmann::json;

namespace {

std::vector<std::pair<int, int>> boundary_elements(int nelx, int nely) {
  std::vector<std::pair<int, int>> out;
  for (int ey = 0; ey < nely; ++ey)
    for (int ex = 0; ex < nelx; ++ex)
      if (ex == 0 || ex == nelx - 1 || ey == 0 || ey == nely - 1)
        out.emplace_back(ex, ey);
  return out;
}

}  // namespace

ProblemSpec sample_problem(std::uint64_t seed, ProblemKind kind, int nelx,
                           int nely) {
  Rng rng(seed);
  ProblemSpec spec;
  spec.grid = Grid{nelx, nely};
  spec.kind = kind;

  const auto boundary = boundary_elements(nelx, nely);
  const auto [ex, ey] = boundary[rng.uniform_int(boundary.size())];
  const int angle = static_cast<int>(rng.uniform_int(6));
  spec.load = PointLoad::from_angle(ex, ey, angle, 1.0);

  const int bc_count = 1 + static_cast<int>(rng.uniform_int(4));
  int sites[16];
  for (int i = 0; i < 16; ++i) sites[i] = i;
  int drawn = 0;
  auto draw_site = [&] {
    const int j = drawn + static_cast<int>(rng.uniform_int(16 - drawn));
    std::swap(sites[drawn], sites[j]);
    spec.bc.mask |= static_cast<std::uint16_t>(1u << sites[drawn]);
    ++drawn;
  };
  for (int i = 0; i < bc_count; ++i) draw_site();
  // a single pinned node leaves the rigid rotation unconstrained, which makes
  // the static system singular; keep adding sites until >= 2 nodes are pinned
  auto pinned_nodes = [&] {
    const auto fixed = spec.bc.fixed_dofs(spec.grid);
    int count = 0;
    for (std::size_t i = 0; i + 1 < fixed.size(); i += 2)
      if (fixed[i] || fixed[i + 1]) ++count;
    return count;
  };
  while (drawn < 16 && pinned_nodes() < 2) draw_site();

  // a load whose nonzero components all land on fixed DOFs produces zero
  // compliance and a degenerate sample; redraw the load location until at
  // least one loaded DOF is free
  const auto fixed = spec.bc.fixed_dofs(spec.grid);
  auto load_is_live = [&](const PointLoad& l) {
    const int node = l.node(spec.grid);
    return (l.fx != 0.0 && !fixed[2 * node]) ||
           (l.fy != 0.0 && !fixed[2 * node + 1]);
  };
  while (!load_is_live(spec.load)) {
    const auto [lx, ly] = boundary[rng.uniform_int(boundary.size())];
    spec.load = PointLoad::from_angle(
        lx, ly, static_cast<int>(rng.uniform_int(6)), 1.0);
  }

  spec.vf = rng.uniform(0.30, 0.50);
  if (kind == ProblemKind::kDynamic)
    spec.shape = rng.uniform_int(2) == 0 ? LoadShape::kSine : LoadShape::kImpulse;
  return spec;
}

std::vector<double> dft_magnitudes(const std::vector<double>& samples) {
  const int n = static_cast<int>(samples.size());
  if (n < 20)
    throw std::invalid_argument("dft_magnitudes: need at least 20 time samples");
  std::vector<double> amps(10);
  for (int k = 0; k < 10; ++k) {
    double re = 0.0, im = 0.0;
    for (int i = 0; i < n; ++i) {
      const double phi = -2.0 * M_PI * k * i / n;
      re += samples[i] * std::cos(phi);
      im += samples[i] * std::sin(phi);
    }
    amps[k] = std::hypot(re, im) / n;
  }
  return amps;
}

std::vector<double> fft_load_features(LoadShape shape, int n) {
  if (n < 20)
    throw std::invalid_argument("fft_load_features: need at least 20 time samples");
  std::vector<double> g(n);
  for (int i = 0; i < n; ++i) g[i] = load_shape_value(shape, double(i) / n);
  return dft_magnitudes(g);
}

std::vector<double> condition_vector(const ProblemSpec& spec,
                                     const std::vector<double>& fft) {
  std::vector<double> cond;
  cond.reserve(spec.kind == ProblemKind::kDynamic ? 32 : 22);
  const double mag = spec.load.magnitude();
  cond.push_back(double(spec.load.ex) / spec.grid.nelx);
  cond.push_back(double(spec.load.ey) / spec.grid.nely);
  cond.push_back(mag > 0.0 ? spec.load.fx / mag : 0.0);
  cond.push_back(mag > 0.0 ? spec.load.fy / mag : 0.0);
  cond.push_back(mag);
  for (int s = 0; s < 16; ++s)
    cond.push_back((spec.bc.mask >> s) & 1u ? 1.0 : 0.0);
  cond.push_back(spec.vf);
  if (spec.kind == ProblemKind::kDynamic) {
    if (fft.size() != 10)
      throw std::invalid_argument("condition_vector: dynamic spec needs 10 FFT amplitudes");
    cond.insert(cond.end(), fft.begin(), fft.end());
  }
  return cond;
}

int load_pixel(const ProblemSpec& spec) {
  return spec.load.ey * spec.grid.nelx + spec.load.ex;
}

double compliance_of_design(const ProblemSpec& spec, const DensityField& density,
                            const GenerateConfig& config) {
  bool any = false;
  for (double v : density.rho) any = any || v > 0.0;
  if (!any) return std::numeric_limits<double>::infinity();
  try {
    if (spec.kind == ProblemKind::kStatic) {
      const auto fixed = spec.bc.fixed_dofs(spec.grid);
      StiffnessOperator K(spec.grid, spec.material, density,
                          config.optimizer.penalty, fixed);
      DisplacementField u = solve_static(spec.grid, spec.bc, spec.load, K);
      return compliance(u.u, spec.load.force_vector(spec.grid));
    }
    DynamicProblem dp{spec.grid, spec.material, spec.bc, DynamicLoad{spec.load, spec.shape}};
    return evaluate_dynamic_compliance(dp, config.dynamics, density,
                                       config.optimizer.penalty);
  } catch (const std::runtime_error&) {
    return std::numeric_limits<double>::infinity();
  }
}

namespace {

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void quantize(Sample& s) {
  for (double& v : s.fields.sed) v = f32(v);
  for (double& v : s.fields.vm) v = f32(v);
  for (double& v : s.topology.rho) v = f32(v);
  for (double& v : s.fft) v = f32(v);
  s.spec.load.fx = f32(s.spec.load.fx);
  s.spec.load.fy = f32(s.spec.load.fy);
  s.spec.vf = f32(s.spec.vf);
}

}  // namespace

FieldImage uniform_domain_fields(const ProblemSpec& spec) {
  DensityField uniform = DensityField::constant(spec.grid, 1.0);
  const auto fixed = spec.bc.fixed_dofs(spec.grid);
  StiffnessOperator K(spec.grid, spec.material, uniform, 1.0, fixed);
  DisplacementField u = solve_static(spec.grid, spec.bc, spec.load, K);
  return normalize_fields(element_fields(spec.grid, spec.material, u));
}

std::optional<Sample> generate_sample(const ProblemSpec& spec,
                                      const GenerateConfig& config) {
  Sample sample;
  sample.spec = spec;
  sample.fields = uniform_domain_fields(spec);

  if (spec.kind == ProblemKind::kStatic) {
    StaticProblem problem{spec.grid, spec.material, spec.bc, spec.load};
    OptimizerConfig oc = config.optimizer;
    oc.volume_fraction = spec.vf;
    OptimizeResult res = optimize_static(problem, oc);
    if (!res.converged) return std::nullopt;
    sample.topology = binarize_volume_preserving(res.density, spec.vf);
  } else {
    DynamicProblem problem{spec.grid, spec.material, spec.bc,
                           DynamicLoad{spec.load, spec.shape}};
    OptimizerConfig oc = config.optimizer;
    oc.volume_fraction = spec.vf;
    OptimizeResult res = optimize_dynamic(problem, config.dynamics, oc);
    if (!res.converged) return std::nullopt;
    sample.topology = binarize_volume_preserving(res.density, spec.vf);
    sample.fft = fft_load_features(spec.shape, config.fft_samples);
  }
  sample.gt_compliance = compliance_of_design(spec, sample.topology, config);
  if (!std::isfinite(sample.gt_compliance)) return std::nullopt;
  quantize(sample);
  return sample;
}

namespace {

/// Dihedral transforms for a square n x n element grid. Index t = m*4 + r:
/// first an optional horizontal mirror (m), then r CCW quarter turns.
struct Dihedral {
  int n;  // elements per side
  int t;

  void map_element(int ex, int ey, int* ox, int* oy) const {
    int x = ex, y = ey;
    if (t >= 4) x = n - 1 - x;
    for (int i = 0; i < t % 4; ++i) {
      const int nx = n - 1 - y, ny = x;
      x = nx;
      y = ny;
    }
    *ox = x;
    *oy = y;
  }

  void map_node(int x, int y, int* ox, int* oy) const {
    if (t >= 4) x = n - x;
    for (int i = 0; i < t % 4; ++i) {
      const int nx = n - y, ny = x;
      x = nx;
      y = ny;
    }
    *ox = x;
    *oy = y;
  }

  void map_vector(double fx, double fy, double* ox, double* oy) const {
    if (t >= 4) fx = -fx;
    for (int i = 0; i < t % 4; ++i) {
      const double nx = -fy, ny = fx;
      fx = nx;
      fy = ny;
    }
    *ox = fx;
    *oy = fy;
  }
};

std::vector<double> transform_image(const std::vector<double>& in,
                                    const Dihedral& d) {
  std::vector<double> out(in.size());
  for (int ey = 0; ey < d.n; ++ey)
    for (int ex = 0; ex < d.n; ++ex) {
      int ox, oy;
      d.map_element(ex, ey, &ox, &oy);
      out[oy * d.n + ox] = in[ey * d.n + ex];
    }
  return out;
}

std::uint16_t transform_mask(std::uint16_t mask, const Grid& grid,
                             const Dihedral& d) {
  std::uint16_t out = 0;
  for (int s = 0; s < 16; ++s) {
    if (!(mask & (1u << s))) continue;
    std::vector<int> nodes = BoundarySpec::site_nodes(grid, s);
    std::vector<int> mapped;
    for (int node : nodes) {
      const int x = node / (grid.nely + 1), y = node % (grid.nely + 1);
      int ox, oy;
      d.map_node(x, y, &ox, &oy);
      mapped.push_back(grid.node(ox, oy));
    }
    std::sort(mapped.begin(), mapped.end());
    bool found = false;
    for (int s2 = 0; s2 < 16 && !found; ++s2) {
      std::vector<int> cand = BoundarySpec::site_nodes(grid, s2);
      std::sort(cand.begin(), cand.end());
      if (cand == mapped) {
        out |= static_cast<std::uint16_t>(1u << s2);
        found = true;
      }
    }
    if (!found)
      throw std::logic_error("augment: transformed fixture site has no canonical id");
  }
  return out;
}

}  // namespace

Sample transform_sample(const Sample& sample, int transform) {
  if (sample.spec.grid.nelx != sample.spec.grid.nely)
    throw std::invalid_argument("augment: rotations need a square grid");
  if (transform == 0) return sample;
  const Dihedral d{sample.spec.grid.nelx, transform};

  Sample out = sample;
  out.fields.sed = transform_image(sample.fields.sed, d);
  out.fields.vm = transform_image(sample.fields.vm, d);
  out.topology.rho = transform_image(sample.topology.rho, d);
  out.spec.bc.mask = transform_mask(sample.spec.bc.mask, sample.spec.grid, d);

  int ox, oy;
  d.map_element(sample.spec.load.ex, sample.spec.load.ey, &ox, &oy);
  double fx, fy;
  d.map_vector(sample.spec.load.fx, sample.spec.load.fy, &fx, &fy);
  out.spec.load.ex = ox;
  out.spec.load.ey = oy;
  out.spec.load.fx = fx;
  out.spec.load.fy = fy;
  // keep the canonical angle index when the transformed direction still lies
  // on the 6-angle set (quarter turns generally leave it)
  out.spec.load.angle_index = -1;
  const double mag = out.spec.load.magnitude();
  if (mag > 0.0) {
    for (int k = 0; k < 6; ++k) {
      const double theta = k * (M_PI / 3.0);
      if (std::fabs(fx / mag - std::cos(theta)) < 1e-9 &&
          std::fabs(fy / mag - std::sin(theta)) < 1e-9) {
        out.spec.load.angle_index = k;
        break;
      }
    }
  }
  return out;
}

std::vector<Sample> augment(const Sample& sample) {
  std::vector<Sample> out;
  out.reserve(8);
  for (int t = 0; t < 8; ++t) out.push_back(transform_sample(sample, t));
  return out;
}

// ---- container serialization ------------------------------------------------

namespace {

constexpr char kMagic[8] = {'T', 'O', 'P', 'O', 'D', 'S', '0', '1'};

std::vector<std::uint8_t> encode_record(const Sample& s) {
  std::vector<std::uint8_t> rec;
  const int nel = s.spec.grid.element_count();
  rec.reserve((21 + 3 * nel) * 4);
  detail::put_f32(rec, static_cast<float>(s.spec.load.ex));
  detail::put_f32(rec, static_cast<float>(s.spec.load.ey));
  detail::put_f32(rec, static_cast<float>(s.spec.load.fx));
  detail::put_f32(rec, static_cast<float>(s.spec.load.fy));
  detail::put_f32(rec, static_cast<float>(s.spec.load.angle_index));
  detail::put_f32(rec, static_cast<float>(s.spec.bc.mask));
  detail::put_f32(rec, static_cast<float>(s.spec.vf));
  detail::put_f32(rec, s.spec.kind == ProblemKind::kDynamic ? 1.0f : 0.0f);
  detail::put_f32(rec, s.spec.shape == LoadShape::kImpulse ? 1.0f : 0.0f);
  // gt_compliance keeps full f64 precision across two 32-bit slots
  std::uint64_t bits;
  std::memcpy(&bits, &s.gt_compliance, 8);
  detail::put_u32(rec, static_cast<std::uint32_t>(bits));
  detail::put_u32(rec, static_cast<std::uint32_t>(bits >> 32));
  for (int i = 0; i < 10; ++i)
    detail::put_f32(rec, i < static_cast<int>(s.fft.size())
                             ? static_cast<float>(s.fft[i])
                             : 0.0f);
  for (double v : s.fields.sed) detail::put_f32(rec, static_cast<float>(v));
  for (double v : s.fields.vm) detail::put_f32(rec, static_cast<float>(v));
  for (double v : s.topology.rho) detail::put_f32(rec, static_cast<float>(v));
  return rec;
}

Sample decode_record(const std::uint8_t* p, int nelx, int nely,
                     ProblemKind kind) {
  Sample s;
  s.spec.grid = Grid{nelx, nely};
  auto f = [&](int slot) { return static_cast<double>(detail::get_f32(p + 4 * slot)); };
  s.spec.load.ex = static_cast<int>(f(0));
  s.spec.load.ey = static_cast<int>(f(1));
  s.spec.load.fx = f(2);
  s.spec.load.fy = f(3);
  s.spec.load.angle_index = static_cast<int>(f(4));
  s.spec.bc.mask = static_cast<std::uint16_t>(f(5));
  s.spec.vf = f(6);
  s.spec.kind = f(7) != 0.0 ? ProblemKind::kDynamic : ProblemKind::kStatic;
  s.spec.shape = f(8) != 0.0 ? LoadShape::kImpulse : LoadShape::kSine;
  std::uint64_t bits = static_cast<std::uint64_t>(detail::get_u32(p + 4 * 9)) |
                       (static_cast<std::uint64_t>(detail::get_u32(p + 4 * 10)) << 32);
  std::memcpy(&s.gt_compliance, &bits, 8);
  if (s.spec.kind == ProblemKind::kDynamic) {
    s.fft.resize(10);
    for (int i = 0; i < 10; ++i) s.fft[i] = f(11 + i);
  }
  const int nel = nelx * nely;
  s.fields.nelx = nelx;
  s.fields.nely = nely;
  s.fields.sed.resize(nel);
  s.fields.vm.resize(nel);
  s.topology.nelx = nelx;
  s.topology.nely = nely;
  s.topology.rho.resize(nel);
  for (int i = 0; i < nel; ++i) s.fields.sed[i] = f(21 + i);
  for (int i = 0; i < nel; ++i) s.fields.vm[i] = f(21 + nel + i);
  for (int i = 0; i < nel; ++i) s.topology.rho[i] = f(21 + 2 * nel + i);
  (void)kind;
  return s;
}

}  // namespace

void write_dataset(const std::string& path, const std::vector<Sample>& samples,
                   const json& generator_config) {
  json manifest;
  manifest["format"] = "TOPODS01";
  manifest["count"] = samples.size();
  manifest["endianness"] = "little";
  if (!samples.empty()) {
    manifest["grid"] = {{"nelx", samples[0].spec.grid.nelx},
                        {"nely", samples[0].spec.grid.nely}};
    manifest["kind"] =
        samples[0].spec.kind == ProblemKind::kDynamic ? "dynamic" : "static";
  } else {
    manifest["grid"] = {{"nelx", 64}, {"nely", 64}};
    manifest["kind"] = "static";
  }
  manifest["layout"] =
      "21 f32 slots (ex, ey, fx, fy, angle_index, bc_mask, vf, kind, shape, "
      "gt_compliance as f64 in slots 9-10, fft[10]) then sed, vm, topology "
      "row-major (y-major); each record followed by CRC32";
  manifest["generator"] = generator_config;
  const std::string mstr = manifest.dump();

  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("write_dataset: cannot open " + path);
  std::fwrite(kMagic, 1, 8, f);
  std::vector<std::uint8_t> lenb;
  detail::put_u32(lenb, static_cast<std::uint32_t>(mstr.size()));
  std::fwrite(lenb.data(), 1, 4, f);
  std::fwrite(mstr.data(), 1, mstr.size(), f);
  for (const Sample& s : samples) {
    const auto rec = encode_record(s);
    std::fwrite(rec.data(), 1, rec.size(), f);
    std::vector<std::uint8_t> crcb;
    detail::put_u32(crcb, crc32(rec.data(), rec.size()));
    std::fwrite(crcb.data(), 1, 4, f);
  }
  std::fclose(f);
}

Dataset read_dataset(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("read_dataset: cannot open " + path);
  auto fail = [&](const std::string& msg) -> Dataset {
    std::fclose(f);
    throw std::runtime_error("read_dataset: " + msg + " in " + path);
  };
  char magic[8];
  if (std::fread(magic, 1, 8, f) != 8) return fail("truncated magic");
  if (std::memcmp(magic, kMagic, 8) != 0) return fail("bad magic / version mismatch");
  std::uint8_t lenb[4];
  if (std::fread(lenb, 1, 4, f) != 4) return fail("truncated manifest length");
  const std::uint32_t len = detail::get_u32(lenb);
  std::string mstr(len, '\0');
  if (std::fread(mstr.data(), 1, len, f) != len) return fail("truncated manifest");
  json manifest = json::parse(mstr, nullptr, false);
  if (manifest.is_discarded()) return fail("invalid manifest JSON");

  const std::size_t count = manifest.at("count");
  const int nelx = manifest.at("grid").at("nelx");
  const int nely = manifest.at("grid").at("nely");
  const ProblemKind kind =
      manifest.at("kind") == "dynamic" ? ProblemKind::kDynamic : ProblemKind::kStatic;
  const std::size_t rec_bytes = (21 + 3 * static_cast<std::size_t>(nelx) * nely) * 4;

  Dataset ds;
  ds.manifest_json = mstr;
  ds.samples.reserve(count);
  std::vector<std::uint8_t> rec(rec_bytes);
  for (std::size_t i = 0; i < count; ++i) {
    if (std::fread(rec.data(), 1, rec_bytes, f) != rec_bytes)
      return fail("truncated record " + std::to_string(i));
    std::uint8_t crcb[4];
    if (std::fread(crcb, 1, 4, f) != 4)
      return fail("truncated checksum for record " + std::to_string(i));
    if (detail::get_u32(crcb) != crc32(rec.data(), rec.size()))
      return fail("checksum failure at record " + std::to_string(i));
    ds.samples.push_back(decode_record(rec.data(), nelx, nely, kind));
  }
  std::fclose(f);
  return ds;
}

}  // namespace topo
