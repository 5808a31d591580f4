#include "support/metric_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace oracle {

namespace {

struct Point {
  int z, y, x;
};

std::vector<Point> surface(const Volume& m) {
  static const int dz[6] = {1, -1, 0, 0, 0, 0};
  static const int dy[6] = {0, 0, 1, -1, 0, 0};
  static const int dx[6] = {0, 0, 0, 0, 1, -1};
  std::vector<Point> out;
  for (int z = 0; z < m.d; ++z)
    for (int y = 0; y < m.h; ++y)
      for (int x = 0; x < m.w; ++x) {
        if (!m.at(z, y, x)) continue;
        bool edge = false;
        for (int k = 0; k < 6 && !edge; ++k) {
          const int nz = z + dz[k], ny = y + dy[k], nx = x + dx[k];
          edge = !m.inside(nz, ny, nx) || !m.at(nz, ny, nx);
        }
        if (edge) out.push_back({z, y, x});
      }
  return out;
}

// Distance from each point of `from` to its nearest point of `to`.
std::vector<double> nearest(const std::vector<Point>& from, const std::vector<Point>& to, const ctmr::Spacing& s) {
  std::vector<double> out;
  for (const auto& a : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& b : to) {
      const double ex = (a.x - b.x) * s.x, ey = (a.y - b.y) * s.y, ez = (a.z - b.z) * s.z;
      best = std::min(best, ex * ex + ey * ey + ez * ez);
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

}  // namespace

Metrics brute_force(const Volume& p, const Volume& g, const ctmr::Spacing& s) {
  long np = 0, ng = 0, both = 0;
  for (std::size_t i = 0; i < p.v.size(); ++i) {
    np += p.v[i];
    ng += g.v[i];
    both += p.v[i] & g.v[i];
  }
  Metrics m;
  m.dice = np + ng == 0 ? 1.0 : 2.0 * both / static_cast<double>(np + ng);
  // Empty denominators: 0 against a nonempty mask, 1 when both are empty.
  m.precision = np == 0 ? (ng == 0 ? 1.0 : 0.0) : both / static_cast<double>(np);
  m.recall = ng == 0 ? (np == 0 ? 1.0 : 0.0) : both / static_cast<double>(ng);
  m.avd_ml = std::abs(np - ng) * (s.x * s.y * s.z) / 1000.0;
  if (np == 0 && ng == 0) return m;
  if (np == 0 || ng == 0) {
    m.hausdorff = m.avg_dist = std::sqrt(std::pow(p.w * s.x, 2) + std::pow(p.h * s.y, 2) + std::pow(p.d * s.z, 2));
    return m;
  }
  const auto sp = surface(p), sg = surface(g);
  const auto pg = nearest(sp, sg, s), gp = nearest(sg, sp, s);
  double sum_pg = 0, sum_gp = 0;
  for (double v : pg) {
    m.hausdorff = std::max(m.hausdorff, v);
    sum_pg += v;
  }
  for (double v : gp) {
    m.hausdorff = std::max(m.hausdorff, v);
    sum_gp += v;
  }
  m.avg_dist = 0.5 * (sum_pg / static_cast<double>(pg.size()) + sum_gp / static_cast<double>(gp.size()));
  return m;
}

Volume random_volume(int d, int h, int w, double density, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution on(density);
  Volume v{d, h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(d) * h * w)};
  for (auto& x : v.v) x = on(rng) ? 1 : 0;
  return v;
}

}  // namespace oracle
