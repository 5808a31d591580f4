#include <cmath>
#include <numbers>

#include "ctmr/data.hpp"
#include "ctmr/errors.hpp"
#include "ctmr/rng.hpp"

namespace ctmr::data {

namespace {

struct PlaneView {
  std::int64_t planes = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
};

// Accepts [C, S, S] or [1, C, S, S].
PlaneView plane_view(const Tensor& t, const char* what) {
  const auto& s = t.shape();
  if (s.size() == 3) return {s[0], s[1], s[2]};
  if (s.size() == 4 && s[0] == 1) return {s[1], s[2], s[3]};
  throw ShapeError(std::string("affine_augment: ") + what + " must be [C, S, S] or [1, C, S, S], got " + to_string(s));
}

// Inverse map from output pixel to source pixel about the image centre.
struct InverseMap {
  double a, b, c, d;  // 2x2 inverse linear part
  double cx, cy, tx, ty;

  void operator()(double x, double y, double& sx, double& sy) const {
    const double u = x - cx - tx;
    const double v = y - cy - ty;
    sx = cx + a * u + b * v;
    sy = cy + c * u + d * v;
  }
};

InverseMap inverse_map(const AffineParams& p, std::int64_t h, std::int64_t w) {
  const double theta = p.rotation_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta) / p.scale;
  const double sn = std::sin(theta) / p.scale;
  return {cs, sn, -sn, cs, (w - 1) / 2.0, (h - 1) / 2.0, p.tx, p.ty};
}

}  // namespace

void AugmentRanges::validate() const {
  if (!(rotation_deg >= 0.0 && rotation_deg <= 45.0)) {
    throw ArgumentError("augment: rotation range must be in [0, 45] degrees, got " + std::to_string(rotation_deg));
  }
  if (!(translation_frac >= 0.0 && translation_frac <= 0.5)) {
    throw ArgumentError("augment: translation range must be in [0, 0.5], got " + std::to_string(translation_frac));
  }
  if (!(scale_lo >= 0.5 && scale_hi <= 2.0 && scale_lo <= scale_hi)) {
    throw ArgumentError("augment: scale range must satisfy 0.5 <= lo <= hi <= 2");
  }
}

AffineParams sample_affine(const AugmentRanges& ranges, int image_size, std::uint64_t seed) {
  ranges.validate();
  Rng rng(seed);
  AffineParams p;
  p.rotation_deg = rng.uniform(-ranges.rotation_deg, ranges.rotation_deg);
  p.tx = rng.uniform(-ranges.translation_frac, ranges.translation_frac) * image_size;
  p.ty = rng.uniform(-ranges.translation_frac, ranges.translation_frac) * image_size;
  p.scale = rng.uniform(ranges.scale_lo, ranges.scale_hi);
  // Collapse signed zeros and degenerate intervals to the exact identity.
  if (ranges.rotation_deg == 0.0) p.rotation_deg = 0.0;
  if (ranges.translation_frac == 0.0) p.tx = p.ty = 0.0;
  if (ranges.scale_lo == ranges.scale_hi) p.scale = ranges.scale_lo;
  return p;
}

std::pair<Tensor, Tensor> apply_affine(const Tensor& channels, const Tensor& mask, const AffineParams& params) {
  const PlaneView cv = plane_view(channels, "channels");
  if (mask.defined()) {
    const PlaneView mv = plane_view(mask, "mask");
    if (mv.planes != 1 || mv.height != cv.height || mv.width != cv.width) {
      throw ShapeError("affine_augment: mask " + to_string(mask.shape()) + " does not match channels " +
                       to_string(channels.shape()));
    }
  }
  if (!(params.scale > 0.0)) throw ArgumentError("affine_augment: scale must be positive");
  if (params.is_identity()) return {channels.detach(), mask.defined() ? mask.detach() : Tensor()};

  const auto h = cv.height, w = cv.width;
  const InverseMap inv = inverse_map(params, h, w);
  Tensor out_channels(channels.shape());
  Tensor out_mask = mask.defined() ? Tensor(mask.shape()) : Tensor();
  const auto src = channels.data();
  auto dst = out_channels.data();
  const auto plane = static_cast<std::size_t>(h * w);

  auto tap = [&](std::int64_t ch, std::int64_t x, std::int64_t y) -> double {
    if (x < 0 || x >= w || y < 0 || y >= h) return kBackground;
    return src[ch * plane + y * w + x];
  };

  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      double sx, sy;
      inv(static_cast<double>(x), static_cast<double>(y), sx, sy);
      const double fx = std::floor(sx), fy = std::floor(sy);
      const auto x0 = static_cast<std::int64_t>(fx), y0 = static_cast<std::int64_t>(fy);
      const double ax = sx - fx, ay = sy - fy;
      const std::size_t o = static_cast<std::size_t>(y * w + x);
      for (std::int64_t ch = 0; ch < cv.planes; ++ch) {
        const double top = (1.0 - ax) * tap(ch, x0, y0) + ax * tap(ch, x0 + 1, y0);
        const double bottom = (1.0 - ax) * tap(ch, x0, y0 + 1) + ax * tap(ch, x0 + 1, y0 + 1);
        dst[ch * plane + o] = static_cast<float>((1.0 - ay) * top + ay * bottom);
      }
      if (mask.defined()) {
        const auto nx = static_cast<std::int64_t>(std::floor(sx + 0.5));
        const auto ny = static_cast<std::int64_t>(std::floor(sy + 0.5));
        const bool inside = nx >= 0 && nx < w && ny >= 0 && ny < h;
        out_mask.data()[o] = inside ? mask.data()[ny * w + nx] : 0.0f;
      }
    }
  }
  return {out_channels, out_mask};
}

std::pair<Tensor, Tensor> affine_augment(const Tensor& channels, const Tensor& mask, const AugmentRanges& ranges,
                                         std::uint64_t seed) {
  const PlaneView cv = plane_view(channels, "channels");
  return apply_affine(channels, mask, sample_affine(ranges, static_cast<int>(cv.width), seed));
}

}  // namespace ctmr::data
