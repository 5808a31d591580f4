#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "ctmr/data.hpp"
#include "ctmr/errors.hpp"
#include "ctmr/rng.hpp"

namespace ctmr::data {

namespace {

struct Wave {
  double fx, fy, fz, phase, amplitude;
};

struct Anatomy {
  double cx, cy;      // brain ellipse centre (pixels)
  double ax, ay;      // semi-axes
  double angle;
  std::vector<Wave> texture;
};

struct Lesion {
  double cx, cy, cz;
  double rx, ry;      // in-plane radii at the lesion's central slice
  double hz;          // half extent in slices
  double angle;
  double wobble_amp, wobble_freq, wobble_phase;
};

Anatomy sample_anatomy(const PhantomOptions& o, Rng& rng) {
  const double s = o.image_size;
  Anatomy a;
  a.cx = (s - 1) / 2.0 + rng.uniform(-0.03, 0.03) * s;
  a.cy = (s - 1) / 2.0 + rng.uniform(-0.03, 0.03) * s;
  a.ax = rng.uniform(0.34, 0.40) * s;
  a.ay = rng.uniform(0.40, 0.45) * s;
  a.angle = rng.uniform(-0.15, 0.15);
  for (int k = 0; k < 4; ++k) {
    const double f = 2.0 * std::numbers::pi / s;
    a.texture.push_back({f * rng.uniform(-4.0, 4.0), f * rng.uniform(-4.0, 4.0), rng.uniform(-0.6, 0.6),
                         rng.uniform(0.0, 2.0 * std::numbers::pi), rng.uniform(0.02, 0.05)});
  }
  return a;
}

// Normalized elliptical radius: < 1 inside the brain.
double brain_radius(const Anatomy& a, double x, double y) {
  const double dx = x - a.cx;
  const double dy = y - a.cy;
  const double c = std::cos(a.angle), s = std::sin(a.angle);
  const double u = (c * dx + s * dy) / a.ax;
  const double v = (-s * dx + c * dy) / a.ay;
  return std::sqrt(u * u + v * v);
}

double texture(const Anatomy& a, double x, double y, double z) {
  double t = 0.0;
  for (const auto& w : a.texture) t += w.amplitude * std::sin(w.fx * x + w.fy * y + w.fz * z + w.phase);
  return t;
}

Lesion sample_lesion(const PhantomOptions& o, const Anatomy& a, int depth, Rng& rng) {
  const double s = o.image_size;
  Lesion l;
  // Centre within 55% of the brain radius so the blob stays inside it.
  const double rho = 0.55 * std::sqrt(rng.uniform(0.0, 1.0));
  const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double u = rho * std::cos(phi) * a.ax;
  const double v = rho * std::sin(phi) * a.ay;
  const double c = std::cos(a.angle), sn = std::sin(a.angle);
  l.cx = a.cx + c * u - sn * v;
  l.cy = a.cy + sn * u + c * v;
  l.cz = rng.uniform_int(0, depth - 1);
  l.rx = rng.uniform(0.07, 0.14) * s;
  l.ry = rng.uniform(0.07, 0.14) * s;
  l.hz = rng.uniform(1.0, std::max(1.0, depth / 2.0));
  l.angle = rng.uniform(0.0, std::numbers::pi);
  l.wobble_amp = rng.uniform(0.0, 0.15);
  l.wobble_freq = rng.uniform_int(2, 4);
  l.wobble_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return l;
}

// Normalized lesion radius at (x, y, z): <= 1 inside the core.
double lesion_radius(const Lesion& l, double x, double y, double z) {
  const double dz = (z - l.cz) / (l.hz + 0.5);
  if (std::fabs(dz) >= 1.0) return 1e9;
  const double taper = std::sqrt(1.0 - dz * dz);
  const double dx = x - l.cx;
  const double dy = y - l.cy;
  const double c = std::cos(l.angle), s = std::sin(l.angle);
  const double u = (c * dx + s * dy) / (l.rx * taper);
  const double v = (-s * dx + c * dy) / (l.ry * taper);
  const double theta = std::atan2(v, u);
  const double wobble = 1.0 + l.wobble_amp * std::sin(l.wobble_freq * theta + l.wobble_phase);
  return std::sqrt(u * u + v * v) / wobble;
}

// 1 inside the core, fading to 0 across the rim.
double core_weight(double r) { return std::clamp((1.15 - r) / 0.3, 0.0, 1.0); }
// Hypoperfused penumbra reaching out to 1.6x the core radius.
double penumbra_weight(double r) { return std::clamp((1.6 - r) / 0.4, 0.0, 1.0); }

float clamp_unit(double v) { return static_cast<float>(std::clamp(v, -1.0, 1.0)); }

}  // namespace

void PhantomOptions::validate() const {
  if (n_subjects < 1) throw ArgumentError("phantom: need at least one subject");
  if (scans_per_subject < 1) throw ArgumentError("phantom: need at least one scan per subject");
  if (image_size < 16 || image_size % 4 != 0) {
    throw ArgumentError("phantom: image size must be a multiple of 4 and >= 16, got " + std::to_string(image_size));
  }
  if (min_slices < kMinSlices || max_slices > kMaxSlices || min_slices > max_slices) {
    throw ArgumentError("phantom: slice range must lie within [2, 22]");
  }
}

std::string phantom_subject_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "subj-%03d", index);
  return buf;
}

int phantom_scan_count(const PhantomOptions& options, int subject_index) {
  if (!options.jitter_scans) return options.scans_per_subject;
  Rng rng(derive_seed(derive_seed(options.seed, "scan-count"), static_cast<std::uint64_t>(subject_index)));
  return rng.uniform_int(1, options.scans_per_subject);
}

std::vector<ChannelNormalization> default_normalization() {
  return {{"CT", "HU", 0.0, 80.0},          {"CBF", "ml/100g/min", 0.0, 100.0},
          {"CBV", "ml/100g", 0.0, 8.0},     {"MTT", "s", 0.0, 20.0},
          {"Tmax", "s", 0.0, 25.0},         {"DWI", "a.u.", 0.0, 1500.0}};
}

ScanRecord make_phantom_scan(const PhantomOptions& o, int subject_index, int scan_index) {
  o.validate();
  const auto subject_seed = derive_seed(derive_seed(o.seed, "subject"), static_cast<std::uint64_t>(subject_index));
  Rng anatomy_rng(subject_seed);
  const Anatomy anatomy = sample_anatomy(o, anatomy_rng);

  Rng rng(derive_seed(subject_seed, static_cast<std::uint64_t>(scan_index) + 1));
  const int depth = rng.uniform_int(o.min_slices, o.max_slices);
  const int s = o.image_size;
  const int n_lesions = rng.uniform_int(1, 3);
  std::vector<Lesion> lesions;
  for (int i = 0; i < n_lesions; ++i) lesions.push_back(sample_lesion(o, anatomy, depth, rng));

  ScanRecord rec;
  rec.subject_id = phantom_subject_id(subject_index);
  rec.scan_id = rec.subject_id + "_scan-" + std::to_string(scan_index);
  rec.spacing = o.spacing;
  rec.ctp = Tensor::full({kCtpChannels, depth, s, s}, kBackground);
  rec.dwi = Tensor::full({1, depth, s, s}, kBackground);
  rec.mask = Tensor::zeros({1, depth, s, s});
  auto ctp = rec.ctp.data();
  auto dwi = rec.dwi.data();
  auto mask = rec.mask.data();
  const std::size_t plane = static_cast<std::size_t>(s) * s;
  const std::size_t volume = plane * depth;
  const auto& c = o.contrast;

  // Per-channel baseline inside the brain and texture gain.
  constexpr double base[kCtpChannels] = {0.10, 0.30, 0.20, -0.30, -0.40};
  constexpr double gain[kCtpChannels] = {1.0, 0.6, 0.5, 0.4, 0.4};
  const double core_offset[kCtpChannels] = {-c.ct_lesion, c.cbf_factor, c.cbv_factor, c.mtt_factor, c.tmax_factor};
  // Penumbra: perfusion delayed and flow reduced, volume preserved, CT unchanged.
  const double penumbra_offset[kCtpChannels] = {0.0, 0.4 * c.cbf_factor, 0.0, 0.6 * c.mtt_factor,
                                                0.6 * c.tmax_factor};

  for (int z = 0; z < depth; ++z) {
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const std::size_t idx = static_cast<std::size_t>(z) * plane + static_cast<std::size_t>(y) * s + x;
        if (brain_radius(anatomy, x, y) >= 1.0) continue;
        double r = 1e9;
        for (const auto& l : lesions) r = std::min(r, lesion_radius(l, x, y, z));
        const double core = core_weight(r);
        const double pen = std::max(0.0, penumbra_weight(r) - core);
        const double tex = texture(anatomy, x, y, z);
        for (int ch = 0; ch < kCtpChannels; ++ch) {
          const double v = base[ch] + gain[ch] * tex + core_offset[ch] * core + penumbra_offset[ch] * pen +
                           rng.normal(0.0, c.sigma_ct);
          ctp[static_cast<std::size_t>(ch) * volume + idx] = clamp_unit(v);
        }
        dwi[idx] = clamp_unit(-0.2 + 0.8 * tex + c.dwi_lesion * core + rng.normal(0.0, c.sigma_mr));
        mask[idx] = r <= 1.0 ? 1.0f : 0.0f;
      }
    }
  }
  return rec;
}

Manifest make_phantom_corpus(const PhantomOptions& options, const std::filesystem::path& out_dir) {
  options.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());

  Manifest manifest;
  manifest.spacing = options.spacing;
  manifest.image_size = options.image_size;
  manifest.normalization = default_normalization();
  manifest.root = out_dir;
  for (int i = 0; i < options.n_subjects; ++i) {
    SubjectEntry subject;
    subject.id = phantom_subject_id(i);
    std::filesystem::create_directories(out_dir / subject.id, ec);
    if (ec) throw IoError("cannot create subject directory: " + ec.message());
    const int scans = phantom_scan_count(options, i);
    for (int k = 0; k < scans; ++k) {
      const auto rec = make_phantom_scan(options, i, k);
      ScanEntry entry;
      entry.id = rec.scan_id;
      const std::string stem = subject.id + "/scan-" + std::to_string(k);
      entry.ctp = stem + "_ctp.ctmr";
      entry.dwi = stem + "_dwi.ctmr";
      entry.mask = stem + "_mask.ctmr";
      entry.slices = rec.slices();
      write_stack(rec.ctp, out_dir / entry.ctp, Dtype::float32);
      write_stack(rec.dwi, out_dir / entry.dwi, Dtype::float32);
      write_stack(rec.mask, out_dir / entry.mask, Dtype::uint8);
      subject.scans.push_back(std::move(entry));
    }
    manifest.subjects.push_back(std::move(subject));
  }
  manifest.save(out_dir / "manifest.json");
  return manifest;
}

}  // namespace ctmr::data
