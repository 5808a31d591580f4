#include "ctmr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ctmr/errors.hpp"

namespace ctmr::metrics {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_same_shape(const MaskVolume& a, const MaskVolume& b) {
  if (a.depth != b.depth || a.height != b.height || a.width != b.width) {
    throw ShapeError("metrics: mask shapes differ: [" + std::to_string(a.depth) + ", " + std::to_string(a.height) +
                     ", " + std::to_string(a.width) + "] vs [" + std::to_string(b.depth) + ", " +
                     std::to_string(b.height) + ", " + std::to_string(b.width) + "]");
  }
}

std::int64_t overlap(const MaskVolume& a, const MaskVolume& b) {
  check_same_shape(a, b);
  std::int64_t n = 0;
  for (std::size_t i = 0; i < a.voxels.size(); ++i) n += a.voxels[i] & b.voxels[i];
  return n;
}

double ratio_or_convention(std::int64_t num, std::int64_t den, std::int64_t other) {
  if (den > 0) return static_cast<double>(num) / static_cast<double>(den);
  return other == 0 ? 1.0 : 0.0;
}

// 1D lower envelope of parabolas (Felzenszwalb & Huttenlocher) with sample
// spacing `s`. `f` holds squared distances, +inf for "no feature"; on return
// `f[q]` is the envelope value and `site[q]` the sample it came from.
void envelope_1d(std::vector<double>& f, double s, std::vector<int>& site, std::vector<int>& v,
                 std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  const double s2 = s * s;
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    double boundary = -kInf;
    while (k >= 0) {
      const int p = v[k];
      boundary = ((f[q] + s2 * q * q) - (f[p] + s2 * p * p)) / (2.0 * s2 * (q - p));
      if (boundary <= z[k]) {
        --k;
        boundary = -kInf;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = boundary;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(site.begin(), site.end(), -1);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    site[q] = v[j];
  }
  for (int q = 0; q < n; ++q) {
    const double d = static_cast<double>(q - site[q]);
    z[q] = s2 * d * d + f[site[q]];
  }
  std::copy(z.begin(), z.begin() + n, f.begin());
}

double directed_mean_and_max(const MaskVolume& from_boundary, const std::vector<double>& dist2, double& max_out) {
  double sum = 0.0;
  double mx = 0.0;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < from_boundary.voxels.size(); ++i) {
    if (!from_boundary.voxels[i]) continue;
    const double d = std::sqrt(dist2[i]);
    sum += d;
    mx = std::max(mx, d);
    ++n;
  }
  max_out = mx;
  return n ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace

MaskVolume MaskVolume::from_tensor(const Tensor& t, const char* what) {
  if (!t.defined()) throw ShapeError(std::string("metrics: ") + what + " is undefined");
  const auto& s = t.shape();
  MaskVolume m;
  if (s.size() == 3) {
    m.depth = s[0], m.height = s[1], m.width = s[2];
  } else if (s.size() == 4 && s[0] == 1) {
    m.depth = s[1], m.height = s[2], m.width = s[3];
  } else {
    throw ShapeError(std::string("metrics: ") + what + " must be [D, H, W] or [1, D, H, W], got " + to_string(s));
  }
  m.voxels.resize(t.data().size());
  std::size_t i = 0;
  for (float v : t.data()) {
    if (v != 0.0f && v != 1.0f) {
      throw ArgumentError(std::string("metrics: ") + what + " is not binary (value " + std::to_string(v) + ")");
    }
    m.voxels[i++] = v == 1.0f ? 1 : 0;
  }
  return m;
}

std::int64_t MaskVolume::count() const {
  std::int64_t n = 0;
  for (auto v : voxels) n += v;
  return n;
}

double dice(const MaskVolume& p, const MaskVolume& g) {
  const auto inter = overlap(p, g);
  const auto total = p.count() + g.count();
  if (total == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

double precision(const MaskVolume& p, const MaskVolume& g) {
  return ratio_or_convention(overlap(p, g), p.count(), g.count());
}

double recall(const MaskVolume& p, const MaskVolume& g) {
  return ratio_or_convention(overlap(p, g), g.count(), p.count());
}

double dice(const Tensor& pred, const Tensor& gt) {
  return dice(MaskVolume::from_tensor(pred, "prediction"), MaskVolume::from_tensor(gt, "ground truth"));
}
double precision(const Tensor& pred, const Tensor& gt) {
  return precision(MaskVolume::from_tensor(pred, "prediction"), MaskVolume::from_tensor(gt, "ground truth"));
}
double recall(const Tensor& pred, const Tensor& gt) {
  return recall(MaskVolume::from_tensor(pred, "prediction"), MaskVolume::from_tensor(gt, "ground truth"));
}

MaskVolume boundary(const MaskVolume& m) {
  MaskVolume b = m;
  std::fill(b.voxels.begin(), b.voxels.end(), 0);
  auto inside = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
    if (z < 0 || z >= m.depth || y < 0 || y >= m.height || x < 0 || x >= m.width) return false;
    return m.at(z, y, x) != 0;
  };
  for (std::int64_t z = 0; z < m.depth; ++z) {
    for (std::int64_t y = 0; y < m.height; ++y) {
      for (std::int64_t x = 0; x < m.width; ++x) {
        if (!m.at(z, y, x)) continue;
        const bool edge = !inside(z - 1, y, x) || !inside(z + 1, y, x) || !inside(z, y - 1, x) ||
                          !inside(z, y + 1, x) || !inside(z, y, x - 1) || !inside(z, y, x + 1);
        if (edge) b.voxels[static_cast<std::size_t>((z * m.height + y) * m.width + x)] = 1;
      }
    }
  }
  return b;
}

std::vector<double> squared_distance_transform(const MaskVolume& features, const Spacing& spacing) {
  const auto d = features.depth, h = features.height, w = features.width;
  const std::size_t total = features.voxels.size();
  std::vector<double> dist(total);
  for (std::size_t i = 0; i < total; ++i) dist[i] = features.voxels[i] ? 0.0 : kInf;
  // Nearest feature voxel per voxel, as a flat index.
  std::vector<std::int64_t> nearest(total);
  for (std::size_t i = 0; i < total; ++i) nearest[i] = static_cast<std::int64_t>(i);

  const std::int64_t longest = std::max({d, h, w});
  std::vector<double> line(longest), z(longest + 1);
  std::vector<int> site(longest), v(longest);
  std::vector<std::int64_t> from(longest);
  auto pass = [&](std::int64_t n, std::int64_t stride, std::int64_t count_outer, auto base_of, double s) {
    line.resize(n);
    site.resize(n);
    from.resize(n);
    for (std::int64_t o = 0; o < count_outer; ++o) {
      const std::int64_t base = base_of(o);
      for (std::int64_t i = 0; i < n; ++i) {
        line[i] = dist[base + i * stride];
        from[i] = nearest[base + i * stride];
      }
      envelope_1d(line, s, site, v, z);
      for (std::int64_t i = 0; i < n; ++i) {
        dist[base + i * stride] = line[i];
        if (site[i] >= 0) nearest[base + i * stride] = from[site[i]];
      }
    }
  };
  // x lines, then y lines, then z lines.
  pass(w, 1, d * h, [&](std::int64_t o) { return o * w; }, spacing.x);
  pass(h, w, d * w, [&](std::int64_t o) { return (o / w) * h * w + (o % w); }, spacing.y);
  pass(d, h * w, h * w, [&](std::int64_t o) { return o; }, spacing.z);

  // The envelope selects the nearest feature; its distance is then evaluated
  // in one fixed form so the result does not depend on the pass order.
  const std::int64_t plane = h * w;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(total); ++i) {
    if (dist[i] == kInf) continue;
    const std::int64_t j = nearest[i];
    const double ex = static_cast<double>(i % w - j % w) * spacing.x;
    const double ey = static_cast<double>((i / w) % h - (j / w) % h) * spacing.y;
    const double ez = static_cast<double>(i / plane - j / plane) * spacing.z;
    dist[i] = ex * ex + ey * ey + ez * ez;
  }
  return dist;
}

SurfaceDistances surface_distances(const MaskVolume& p, const MaskVolume& g, const Spacing& spacing) {
  check_same_shape(p, g);
  const bool pe = p.empty(), ge = g.empty();
  if (pe && ge) return {0.0, 0.0};
  if (pe || ge) {
    const double ex = static_cast<double>(p.width) * spacing.x;
    const double ey = static_cast<double>(p.height) * spacing.y;
    const double ez = static_cast<double>(p.depth) * spacing.z;
    const double diag = std::sqrt(ex * ex + ey * ey + ez * ez);
    return {diag, diag};
  }
  const MaskVolume bp = boundary(p);
  const MaskVolume bg = boundary(g);
  double max_pg = 0.0, max_gp = 0.0;
  const double mean_pg = directed_mean_and_max(bp, squared_distance_transform(bg, spacing), max_pg);
  const double mean_gp = directed_mean_and_max(bg, squared_distance_transform(bp, spacing), max_gp);
  return {std::max(max_pg, max_gp), 0.5 * (mean_pg + mean_gp)};
}

double hausdorff_mm(const Tensor& pred, const Tensor& gt, const Spacing& spacing) {
  return surface_distances(MaskVolume::from_tensor(pred, "prediction"), MaskVolume::from_tensor(gt, "ground truth"),
                           spacing)
      .hausdorff_mm;
}

double avg_dist_mm(const Tensor& pred, const Tensor& gt, const Spacing& spacing) {
  return surface_distances(MaskVolume::from_tensor(pred, "prediction"), MaskVolume::from_tensor(gt, "ground truth"),
                           spacing)
      .avg_dist_mm;
}

double avd_ml(const MaskVolume& p, const MaskVolume& g, const Spacing& spacing) {
  check_same_shape(p, g);
  const auto diff = std::llabs(p.count() - g.count());
  return static_cast<double>(diff) * spacing.voxel_volume_mm3() / 1000.0;
}

double avd_ml(const Tensor& pred, const Tensor& gt, const Spacing& spacing) {
  return avd_ml(MaskVolume::from_tensor(pred, "prediction"), MaskVolume::from_tensor(gt, "ground truth"), spacing);
}

MetricRow evaluate_scan(std::string scan_id, const Tensor& pred, const Tensor& gt, const Spacing& spacing) {
  const auto p = MaskVolume::from_tensor(pred, "prediction");
  const auto g = MaskVolume::from_tensor(gt, "ground truth");
  check_same_shape(p, g);
  const auto sd = surface_distances(p, g, spacing);
  MetricRow row;
  row.scan_id = std::move(scan_id);
  row.dice = dice(p, g);
  row.hausdorff_mm = sd.hausdorff_mm;
  row.avg_dist_mm = sd.avg_dist_mm;
  row.precision = precision(p, g);
  row.recall = recall(p, g);
  row.avd_ml = avd_ml(p, g, spacing);
  return row;
}

Summary summarize(const std::vector<double>& values) {
  if (values.empty()) throw ArgumentError("summarize: no values");
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

MetricsReport aggregate(std::string label, std::vector<MetricRow> rows) {
  if (rows.empty()) throw ArgumentError("aggregate: no rows for '" + label + "'");
  MetricsReport r;
  r.label = std::move(label);
  r.rows = std::move(rows);
  for (int m = 0; m < kMetricCount; ++m) {
    std::vector<double> column;
    column.reserve(r.rows.size());
    for (const auto& row : r.rows) column.push_back(row.values()[m]);
    r.summary[m] = summarize(column);
  }
  return r;
}

}  // namespace ctmr::metrics
