#pragma once

#include <cstdint>
#include <vector>

#include "ctmr/nn.hpp"
#include "ctmr/tensor.hpp"

namespace ctmr::cgan {

struct GeneratorConfig {
  int in_channels = 5;
  int out_channels = 1;
  int base_width = 64;
  int n_resnet_blocks = 9;
  int image_size = 256;
  float dropout_rate = 0.5f;

  // S = 64 with three residual blocks.
  static GeneratorConfig desk();
  void validate() const;
};

struct DiscriminatorConfig {
  int in_channels = 6;
  std::vector<int> widths = {64, 128, 256, 512};
  int kernel = 4;
  int padding = 1;
  float leaky_slope = 0.2f;

  void validate() const;
};

// Parameter names are prefixed "g." and "d." respectively.
nn::ParamSet make_generator_params(const GeneratorConfig& cfg, std::uint64_t seed);
nn::ParamSet make_discriminator_params(const DiscriminatorConfig& cfg, std::uint64_t seed);

/// x [1, in, S, S] -> [1, out, S, S] in [-1, 1]. Dropout inside the residual
/// blocks is seeded per block from `seed`.
Tensor generator_forward(const Tensor& x, const nn::ParamSet& params, const GeneratorConfig& cfg, bool dropout_active,
                         std::uint64_t seed);

struct DiscriminatorOutput {
  Tensor map;    // [1, 1, P, P] logits
  Tensor score;  // mean of the map
};

// Concatenates condition [1, C, S, S] and image [1, 1, S, S] on channels.
DiscriminatorOutput discriminator_forward(const Tensor& condition, const Tensor& image, const nn::ParamSet& params,
                                          const DiscriminatorConfig& cfg);

int map_side(const DiscriminatorConfig& cfg, int image_size);
int receptive_field(const DiscriminatorConfig& cfg);

// -mean log sigmoid(real) - mean log(1 - sigmoid(fake))
Tensor d_loss(const Tensor& real_map, const Tensor& fake_map);
// -mean log sigmoid(fake)
Tensor g_adv_loss(const Tensor& fake_map);
// g_adv_loss + lambda * mean |target - generated|
Tensor g_total_loss(const Tensor& fake_map, const Tensor& generated, const Tensor& target, float lambda);

struct CganModel {
  GeneratorConfig g_config;
  DiscriminatorConfig d_config;
  nn::ParamSet g;
  nn::ParamSet d;
  nn::AdamState g_adam;
  nn::AdamState d_adam;

  static CganModel create(const GeneratorConfig& g_config, const DiscriminatorConfig& d_config, std::uint64_t seed,
                          nn::AdamOptions adam = {});
};

struct StepResult {
  double d_loss = 0.0;
  double g_loss = 0.0;
  double g_adv = 0.0;
  double l1 = 0.0;
};

/// One Adam step on D with G frozen, then one Adam step on G with D frozen.
/// Throws NonFiniteError naming the first non-finite tensor if a loss is
/// not finite.
StepResult train_step(CganModel& model, const Tensor& x, const Tensor& y, float lambda, std::uint64_t seed);

}  // namespace ctmr::cgan
