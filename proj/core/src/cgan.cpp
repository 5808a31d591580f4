#include "ctmr/cgan.hpp"

#include <cmath>

#include "ctmr/autograd.hpp"
#include "ctmr/errors.hpp"
#include "ctmr/ops.hpp"
#include "ctmr/rng.hpp"

namespace ctmr::cgan {

namespace {

using nn::ConvSpec;
using nn::ParamSet;

std::string res_name(int i, int j) { return "g.res" + std::to_string(i) + ".conv" + std::to_string(j); }

Tensor conv(const Tensor& x, const ParamSet& p, const std::string& name, Conv2dOptions opts = {}) {
  return conv2d(x, p.get(name + ".weight"), p.get(name + ".bias"), opts);
}

Tensor in_relu(const Tensor& x) { return relu(instance_norm2d(x)); }

void check_input(const Tensor& x, int channels, int size, const char* who) {
  if (x.ndim() != 4 || x.dim(0) != 1) {
    throw ShapeError(std::string(who) + ": expected a [1, C, S, S] batch, got " + to_string(x.shape()));
  }
  if (x.dim(1) != channels) {
    throw ShapeError(std::string(who) + ": expected " + std::to_string(channels) + " input channels, got " +
                     std::to_string(x.dim(1)));
  }
  if (x.dim(2) != size || x.dim(3) != size) {
    throw ShapeError(std::string(who) + ": expected " + std::to_string(size) + "x" + std::to_string(size) +
                     " slices, got " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)));
  }
}

Tensor constant_like(const Tensor& t, float v) { return Tensor::full(t.shape(), v); }

}  // namespace

GeneratorConfig GeneratorConfig::desk() {
  GeneratorConfig c;
  c.n_resnet_blocks = 3;
  c.image_size = 64;
  return c;
}

void GeneratorConfig::validate() const {
  if (in_channels < 1 || out_channels < 1 || base_width < 1) throw ArgumentError("generator: widths must be positive");
  if (n_resnet_blocks < 1) throw ArgumentError("generator: need at least one residual block");
  if (image_size < 8 || image_size % 4 != 0) {
    throw ArgumentError("generator: image size must be divisible by 4, got " + std::to_string(image_size));
  }
  if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) throw ArgumentError("generator: dropout rate must be in [0, 1)");
}

void DiscriminatorConfig::validate() const {
  if (in_channels < 1) throw ArgumentError("discriminator: in_channels must be positive");
  if (widths.size() < 2) throw ArgumentError("discriminator: need at least two widths");
  for (int w : widths) {
    if (w < 1) throw ArgumentError("discriminator: widths must be positive");
  }
  if (kernel < 1 || padding < 0) throw ArgumentError("discriminator: invalid kernel or padding");
}

ParamSet make_generator_params(const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int b = cfg.base_width;
  std::vector<ConvSpec> layers = {
      {"g.stem", cfg.in_channels, b, 7},
      {"g.down1", b, 2 * b, 3},
      {"g.down2", 2 * b, 4 * b, 3},
  };
  for (int i = 0; i < cfg.n_resnet_blocks; ++i) {
    layers.push_back({res_name(i, 1), 4 * b, 4 * b, 3});
    layers.push_back({res_name(i, 2), 4 * b, 4 * b, 3});
  }
  layers.push_back({"g.up1", 4 * b, 2 * b, 3, true, true});
  layers.push_back({"g.up2", 2 * b, b, 3, true, true});
  layers.push_back({"g.head", b, cfg.out_channels, 7});
  return nn::init_params(layers, seed);
}

ParamSet make_discriminator_params(const DiscriminatorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<ConvSpec> layers;
  int in = cfg.in_channels;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    layers.push_back({"d.conv" + std::to_string(i), in, cfg.widths[i], cfg.kernel});
    in = cfg.widths[i];
  }
  layers.push_back({"d.conv" + std::to_string(cfg.widths.size()), in, 1, cfg.kernel});
  return nn::init_params(layers, seed);
}

Tensor generator_forward(const Tensor& x, const ParamSet& p, const GeneratorConfig& cfg, bool dropout_active,
                         std::uint64_t seed) {
  cfg.validate();
  check_input(x, cfg.in_channels, cfg.image_size, "generator");
  Tensor h = in_relu(conv(reflection_pad2d(x, 3), p, "g.stem"));
  h = in_relu(conv(h, p, "g.down1", {2, 1}));
  h = in_relu(conv(h, p, "g.down2", {2, 1}));
  for (int i = 0; i < cfg.n_resnet_blocks; ++i) {
    Tensor r = in_relu(conv(reflection_pad2d(h, 1), p, res_name(i, 1)));
    r = dropout(r, cfg.dropout_rate, derive_seed(seed, static_cast<std::uint64_t>(i)), dropout_active);
    r = instance_norm2d(conv(reflection_pad2d(r, 1), p, res_name(i, 2)));
    h = add(h, r);
  }
  const ConvTranspose2dOptions up{2, 1, 1};
  h = in_relu(conv_transpose2d(h, p.get("g.up1.weight"), p.get("g.up1.bias"), up));
  h = in_relu(conv_transpose2d(h, p.get("g.up2.weight"), p.get("g.up2.bias"), up));
  return tanh(conv(reflection_pad2d(h, 3), p, "g.head"));
}

DiscriminatorOutput discriminator_forward(const Tensor& condition, const Tensor& image, const ParamSet& p,
                                          const DiscriminatorConfig& cfg) {
  cfg.validate();
  if (condition.ndim() != 4 || image.ndim() != 4 || condition.dim(0) != 1 || image.dim(0) != 1) {
    throw ShapeError("discriminator: expected [1, C, S, S] inputs, got " + to_string(condition.shape()) + " and " +
                     to_string(image.shape()));
  }
  if (condition.dim(2) != image.dim(2) || condition.dim(3) != image.dim(3)) {
    throw ShapeError("discriminator: condition " + to_string(condition.shape()) + " and image " +
                     to_string(image.shape()) + " differ in spatial size");
  }
  if (condition.dim(1) + image.dim(1) != cfg.in_channels) {
    throw ShapeError("discriminator: expected " + std::to_string(cfg.in_channels) + " stacked channels, got " +
                     std::to_string(condition.dim(1) + image.dim(1)));
  }
  Tensor h = concat_channels({condition, image});
  const int n = static_cast<int>(cfg.widths.size());
  for (int i = 0; i < n; ++i) {
    const int stride = i + 1 < n ? 2 : 1;
    h = conv(h, p, "d.conv" + std::to_string(i), {stride, cfg.padding});
    if (i > 0) h = instance_norm2d(h);
    h = leaky_relu(h, cfg.leaky_slope);
  }
  Tensor map = conv(h, p, "d.conv" + std::to_string(n), {1, cfg.padding});
  Tensor score = mean(map);
  return {map, score};
}

int map_side(const DiscriminatorConfig& cfg, int image_size) {
  cfg.validate();
  int s = image_size;
  const int n = static_cast<int>(cfg.widths.size());
  for (int i = 0; i <= n; ++i) {
    const int stride = i + 1 < n ? 2 : 1;
    s = conv_output_size(s, cfg.kernel, stride, cfg.padding);
  }
  return s;
}

int receptive_field(const DiscriminatorConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(cfg.widths.size());
  int rf = 1;
  for (int i = n; i >= 0; --i) {
    const int stride = i + 1 < n ? 2 : 1;
    rf = (rf - 1) * stride + cfg.kernel;
  }
  return rf;
}

Tensor d_loss(const Tensor& real_map, const Tensor& fake_map) {
  return add(bce_with_logits(real_map, constant_like(real_map, 1.0f)),
             bce_with_logits(fake_map, constant_like(fake_map, 0.0f)));
}

Tensor g_adv_loss(const Tensor& fake_map) { return bce_with_logits(fake_map, constant_like(fake_map, 1.0f)); }

Tensor g_total_loss(const Tensor& fake_map, const Tensor& generated, const Tensor& target, float lambda) {
  if (generated.shape() != target.shape()) {
    throw ShapeError("g_total_loss: generated " + to_string(generated.shape()) + " vs target " +
                     to_string(target.shape()));
  }
  if (!(lambda >= 0.0f)) throw ArgumentError("g_total_loss: lambda must be non-negative");
  return add(g_adv_loss(fake_map), scale(l1_loss(generated, target), lambda));
}

CganModel CganModel::create(const GeneratorConfig& g_config, const DiscriminatorConfig& d_config, std::uint64_t seed,
                            nn::AdamOptions adam) {
  CganModel m;
  m.g_config = g_config;
  m.d_config = d_config;
  m.g = make_generator_params(g_config, derive_seed(seed, "generator"));
  m.d = make_discriminator_params(d_config, derive_seed(seed, "discriminator"));
  m.g_adam = nn::make_adam(m.g, adam);
  m.d_adam = nn::make_adam(m.d, adam);
  return m;
}

namespace {

void require_finite(const Tensor& loss, const char* what) {
  if (std::isfinite(loss.item())) return;
  const auto culprit = Tape::local().first_non_finite();
  Tape::local().reset();
  throw NonFiniteError(std::string(what) + " is not finite; first non-finite tensor: " +
                       culprit.value_or("none on tape (non-finite input or parameter)"));
}

struct RequiresGradScope {
  ParamSet& frozen;
  ParamSet& trained;
  RequiresGradScope(ParamSet& f, ParamSet& t) : frozen(f), trained(t) {
    frozen.set_requires_grad(false);
    trained.set_requires_grad(true);
    trained.zero_grad();
  }
  ~RequiresGradScope() {
    frozen.set_requires_grad(true);
    trained.set_requires_grad(true);
  }
};

}  // namespace

StepResult train_step(CganModel& model, const Tensor& x, const Tensor& y, float lambda, std::uint64_t seed) {
  check_input(y, model.g_config.out_channels, model.g_config.image_size, "train_step target");
  Tape::local().reset();
  StepResult out;
  const std::uint64_t dropout_seed = derive_seed(seed, "dropout");

  {
    Tensor fake;
    {
      NoGradGuard no_grad;
      fake = generator_forward(x, model.g, model.g_config, true, dropout_seed);
    }
    RequiresGradScope scope(model.g, model.d);
    const auto real = discriminator_forward(x, y, model.d, model.d_config);
    const auto faked = discriminator_forward(x, fake, model.d, model.d_config);
    Tensor loss = d_loss(real.map, faked.map);
    require_finite(loss, "discriminator loss");
    out.d_loss = loss.item();
    backward(loss);
    nn::adam_step(model.d, model.d_adam);
  }
  {
    RequiresGradScope scope(model.d, model.g);
    Tensor generated = generator_forward(x, model.g, model.g_config, true, dropout_seed);
    const auto faked = discriminator_forward(x, generated, model.d, model.d_config);
    Tensor adv = g_adv_loss(faked.map);
    Tensor l1 = l1_loss(generated, y);
    Tensor loss = add(adv, scale(l1, lambda));
    require_finite(loss, "generator loss");
    out.g_loss = loss.item();
    out.g_adv = adv.item();
    out.l1 = l1.item();
    backward(loss);
    nn::adam_step(model.g, model.g_adam);
  }
  model.d.zero_grad();
  model.g.zero_grad();
  return out;
}

}  // namespace ctmr::cgan
