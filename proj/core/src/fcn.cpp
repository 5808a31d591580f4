#include "ctmr/fcn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctmr/autograd.hpp"
#include "ctmr/errors.hpp"
#include "ctmr/ops.hpp"
#include "ctmr/rng.hpp"

namespace ctmr::fcn {

namespace {

using nn::ConvSpec;
using nn::ParamSet;

Tensor conv(const Tensor& x, const ParamSet& p, const std::string& name, Conv2dOptions opts = {}) {
  return conv2d(x, p.get(name + ".weight"), p.get(name + ".bias"), opts);
}

struct Block {
  std::string name;
  int in, out, dilation;
};

std::vector<Block> trunk_blocks(const FcnConfig& cfg) {
  const std::string pre = prefix_of(cfg.mode);
  std::vector<Block> blocks;
  const int stem_out = cfg.stem_widths.back();
  blocks.push_back({pre + "block0", stem_out, stem_out, 1});
  int in = stem_out;
  for (std::size_t i = 0; i < cfg.dilations.size(); ++i) {
    blocks.push_back({pre + "block" + std::to_string(i + 1), in, cfg.trunk_width, cfg.dilations[i]});
    in = cfg.trunk_width;
  }
  return blocks;
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

int channels_of(InputMode mode) { return mode == InputMode::ctp ? 5 : 6; }
const char* label_of(InputMode mode) { return mode == InputMode::ctp ? "FCN" : "FCN-CGAN"; }
std::string prefix_of(InputMode mode) { return mode == InputMode::ctp ? "fcn-ctp." : "fcn-ctp-mr."; }

void FcnConfig::validate() const {
  if (stem_widths.size() != 2) throw ArgumentError("fcn: the stem has exactly two stride-2 convolutions");
  if (dilations.empty() || bins.empty()) throw ArgumentError("fcn: dilations and bins must be non-empty");
  if (image_size < 8 || image_size % 4 != 0) {
    throw ArgumentError("fcn: image size must be divisible by 4, got " + std::to_string(image_size));
  }
  for (int d : dilations) {
    if (d < 1) throw ArgumentError("fcn: dilation rates must be >= 1");
  }
  for (int b : bins) {
    if (b < 1 || b > trunk_side()) {
      throw ArgumentError("fcn: pyramid bin " + std::to_string(b) + " exceeds the trunk side " +
                          std::to_string(trunk_side()));
    }
  }
  if (!(gamma >= 0.0f) || !(alpha >= 0.0f && alpha <= 1.0f)) throw ArgumentError("fcn: invalid focal parameters");
}

ParamSet make_fcn_params(const FcnConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::string pre = prefix_of(cfg.mode);
  std::vector<ConvSpec> layers = {
      {pre + "stem1", cfg.in_channels(), cfg.stem_widths[0], 3},
      {pre + "stem2", cfg.stem_widths[0], cfg.stem_widths[1], 3},
  };
  for (const auto& b : trunk_blocks(cfg)) {
    layers.push_back({b.name + ".conv1", b.in, b.out, 3});
    layers.push_back({b.name + ".conv2", b.out, b.out, 3});
    if (b.in != b.out) layers.push_back({b.name + ".proj", b.in, b.out, 1});
  }
  for (int bin : cfg.bins) layers.push_back({pre + "pool" + std::to_string(bin), cfg.trunk_width, cfg.branch_width, 1});
  const int fused = cfg.trunk_width + cfg.branch_width * static_cast<int>(cfg.bins.size());
  layers.push_back({pre + "fuse", fused, cfg.head_width, 3});
  layers.push_back({pre + "classifier", cfg.head_width, 1, 1});
  return nn::init_params(layers, seed);
}

void check_params(const ParamSet& params, const FcnConfig& cfg) {
  const std::string pre = prefix_of(cfg.mode);
  if (params.empty() || params[0].name.rfind(pre, 0) != 0) {
    const std::string found = params.empty() ? "an empty parameter set" : "'" + params[0].name + "'";
    const char* other = cfg.mode == InputMode::ctp ? "FCN-CGAN (6-channel)" : "FCN (5-channel)";
    throw SchemaError(std::string("fcn: expected a ") + label_of(cfg.mode) + " model, found " + found +
                      "; the checkpoint was probably trained as " + other);
  }
  const ParamSet expected = make_fcn_params(cfg, 0);
  if (expected.size() != params.size()) throw SchemaError("fcn: parameter count does not match the configuration");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (expected[i].name != params[i].name || expected[i].tensor.shape() != params[i].tensor.shape()) {
      throw SchemaError("fcn: parameter '" + params[i].name + "' does not match the configuration");
    }
  }
}

Tensor fcn_trunk(const Tensor& x, const ParamSet& p, const FcnConfig& cfg) {
  cfg.validate();
  if (x.ndim() != 4 || x.dim(0) != 1) throw ShapeError("fcn: expected [1, C, S, S], got " + to_string(x.shape()));
  if (x.dim(1) != cfg.in_channels()) {
    throw ShapeError("fcn: " + std::string(label_of(cfg.mode)) + " model takes " + std::to_string(cfg.in_channels()) +
                     " channels (" + (cfg.mode == InputMode::ctp ? "CTP only" : "CTP + derived MR") + "), got " +
                     std::to_string(x.dim(1)));
  }
  if (x.dim(2) != cfg.image_size || x.dim(3) != cfg.image_size) {
    throw ShapeError("fcn: expected " + std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size) +
                     " slices, got " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)));
  }
  const std::string pre = prefix_of(cfg.mode);
  Tensor h = relu(conv(x, p, pre + "stem1", {2, 1}));
  h = relu(conv(h, p, pre + "stem2", {2, 1}));
  for (const auto& b : trunk_blocks(cfg)) {
    const Conv2dOptions dil{1, b.dilation, b.dilation};
    Tensor r = relu(conv(h, p, b.name + ".conv1", dil));
    r = conv(r, p, b.name + ".conv2", dil);
    Tensor skip = b.in == b.out ? h : conv(h, p, b.name + ".proj");
    h = relu(add(skip, r));
  }
  return h;
}

Tensor fcn_forward(const Tensor& x, const ParamSet& p, const FcnConfig& cfg) {
  const std::string pre = prefix_of(cfg.mode);
  Tensor trunk = fcn_trunk(x, p, cfg);
  const int side = static_cast<int>(trunk.dim(2));
  std::vector<Tensor> parts = {trunk};
  for (int bin : cfg.bins) {
    Tensor branch = relu(conv(adaptive_avg_pool2d(trunk, bin), p, pre + "pool" + std::to_string(bin)));
    parts.push_back(upsample_bilinear(branch, side, side));
  }
  Tensor h = relu(conv(concat_channels(parts), p, pre + "fuse", {1, 1}));
  Tensor logits = conv(h, p, pre + "classifier");
  return upsample_bilinear(logits, cfg.image_size, cfg.image_size);
}

Tensor focal_loss(const Tensor& logits, const Tensor& mask, float gamma, float alpha) {
  if (logits.shape() != mask.shape()) {
    throw ShapeError("focal_loss: logits " + to_string(logits.shape()) + " vs mask " + to_string(mask.shape()));
  }
  for (float v : mask.data()) {
    if (v != 0.0f && v != 1.0f) throw ArgumentError("focal_loss: mask is not binary (value " + std::to_string(v) + ")");
  }
  const auto z = logits.data();
  const auto y = mask.data();
  const std::size_t n = z.size();
  const double g = gamma;
  // With s = +1 for lesion and -1 for background, p_t = sigmoid(s z).
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = y[i] == 1.0f ? 1.0 : -1.0;
    const double at = y[i] == 1.0f ? alpha : 1.0 - alpha;
    const double log_pt = -softplus(-s * z[i]);
    const double one_minus = std::exp(-softplus(s * z[i]));
    total += -at * std::pow(one_minus, g) * log_pt;
  }
  Tensor out = Tensor::scalar(static_cast<float>(total / static_cast<double>(n)));
  if (should_record({&logits})) {
    Tensor lg = logits;
    Tensor m = mask.detach();
    Tape::local().record(
        out,
        [lg, m, g, alpha](std::span<const float> grad_out) {
          const auto z = lg.data();
          const auto y = m.data();
          const std::size_t n = z.size();
          std::vector<float> dz(n);
          const double go = grad_out[0] / static_cast<double>(n);
          for (std::size_t i = 0; i < n; ++i) {
            const double s = y[i] == 1.0f ? 1.0 : -1.0;
            const double at = y[i] == 1.0f ? alpha : 1.0 - alpha;
            const double log_pt = -softplus(-s * z[i]);
            const double pt = std::exp(log_pt);
            const double q = std::exp(-softplus(s * z[i]));  // 1 - p_t
            const double d = -at * s * (std::pow(q, g + 1.0) - g * std::pow(q, g) * pt * log_pt);
            dz[i] = static_cast<float>(go * d);
          }
          accumulate_grad(lg, dz);
        },
        "focal_loss");
  }
  return out;
}

Tensor predict_mask(const Tensor& logits) {
  Tensor out(logits.shape());
  auto dst = out.data();
  const auto src = logits.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0f ? 1.0f : 0.0f;
  return out;
}

Tensor slice_input(const data::ScanRecord& scan, const Tensor& derived_mr, int z) {
  Tensor ctp = data::slice_of(scan.ctp, z);
  if (!derived_mr.defined()) return ctp;
  if (derived_mr.ndim() != 4 || derived_mr.dim(0) != 1 || derived_mr.dim(1) != scan.ctp.dim(1) ||
      derived_mr.dim(2) != scan.ctp.dim(2) || derived_mr.dim(3) != scan.ctp.dim(3)) {
    throw ShapeError(scan.scan_id + ": derived MR " + to_string(derived_mr.shape()) + " does not match the CTP stack " +
                     to_string(scan.ctp.shape()));
  }
  return concat_channels({ctp, data::slice_of(derived_mr, z)});
}

std::vector<Sample> scan_samples(const data::ScanRecord& scan, const Tensor& derived_mr) {
  std::vector<Sample> out;
  for (int z = 0; z < scan.slices(); ++z) out.push_back({slice_input(scan, derived_mr, z), data::slice_of(scan.mask, z)});
  return out;
}

double train_epoch(const std::vector<Sample>& dataset, ParamSet& params, nn::AdamState& adam, const FcnConfig& cfg,
                   const data::AugmentRanges& augment, std::uint64_t seed) {
  if (dataset.empty()) throw ArgumentError("fcn train_epoch: empty dataset");
  for (const auto& s : dataset) {
    if (s.image.ndim() != 4 || s.image.dim(1) != cfg.in_channels()) {
      throw ShapeError(std::string("fcn train_epoch: ") + label_of(cfg.mode) + " expects " +
                       std::to_string(cfg.in_channels()) + "-channel samples, got " + to_string(s.image.shape()));
    }
  }
  augment.validate();
  const bool augmenting = !(augment.rotation_deg == 0.0 && augment.translation_frac == 0.0 &&
                            augment.scale_lo == 1.0 && augment.scale_hi == 1.0);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "order"));
  std::shuffle(order.begin(), order.end(), rng.engine());

  Tape::local().reset();
  params.set_requires_grad(true);
  double total = 0.0;
  for (std::size_t step = 0; step < order.size(); ++step) {
    const Sample& s = dataset[order[step]];
    Tensor image = s.image, mask = s.mask;
    if (augmenting) {
      std::tie(image, mask) = data::affine_augment(s.image, s.mask, augment, derive_seed(seed, order[step] + 1));
    }
    params.zero_grad();
    Tensor loss = focal_loss(fcn_forward(image, params, cfg), mask, cfg.gamma, cfg.alpha);
    if (!std::isfinite(loss.item())) {
      const auto culprit = Tape::local().first_non_finite();
      Tape::local().reset();
      throw NonFiniteError("fcn loss is not finite; first non-finite tensor: " + culprit.value_or("none on tape"));
    }
    total += loss.item();
    backward(loss);
    nn::adam_step(params, adam);
  }
  params.zero_grad();
  return total / static_cast<double>(order.size());
}

Tensor segment_scan(const data::ScanRecord& scan, const Tensor& derived_mr, const ParamSet& params,
                    const FcnConfig& cfg) {
  NoGradGuard no_grad;
  std::vector<Tensor> slices;
  for (int z = 0; z < scan.slices(); ++z) {
    slices.push_back(predict_mask(fcn_forward(slice_input(scan, derived_mr, z), params, cfg)));
  }
  return data::stack_slices(slices);
}

}  // namespace ctmr::fcn
