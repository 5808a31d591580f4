#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctmr/data.hpp"
#include "ctmr/nn.hpp"
#include "ctmr/tensor.hpp"

namespace ctmr::fcn {

enum class InputMode { ctp, ctp_mr };  // 5 channels (FCN) or 6 (FCN-CGAN)

int channels_of(InputMode mode);
const char* label_of(InputMode mode);   // "FCN" / "FCN-CGAN"
std::string prefix_of(InputMode mode);  // parameter-name prefix

struct FcnConfig {
  InputMode mode = InputMode::ctp;
  std::vector<int> stem_widths = {32, 64};  // two stride-2 convolutions
  int trunk_width = 128;
  std::vector<int> dilations = {1, 2, 4};
  std::vector<int> bins = {1, 2, 3, 6};
  int branch_width = 32;
  int head_width = 64;
  float gamma = 2.0f;
  float alpha = 0.25f;
  int image_size = 64;

  int in_channels() const { return channels_of(mode); }
  int trunk_side() const { return image_size / 4; }
  void validate() const;
};

nn::ParamSet make_fcn_params(const FcnConfig& cfg, std::uint64_t seed);

// Residual trunk features at 1/4 resolution.
Tensor fcn_trunk(const Tensor& x, const nn::ParamSet& params, const FcnConfig& cfg);
// x [1, C, S, S] -> logits [1, 1, S, S].
Tensor fcn_forward(const Tensor& x, const nn::ParamSet& params, const FcnConfig& cfg);

// Verifies that a parameter set was built for `cfg`'s input mode and shape.
void check_params(const nn::ParamSet& params, const FcnConfig& cfg);

/// Mean over pixels of -alpha_t (1 - p_t)^gamma log p_t. Throws on a
/// non-binary mask or shape mismatch.
Tensor focal_loss(const Tensor& logits, const Tensor& mask, float gamma, float alpha);

// sigmoid(logit) > 0.5, i.e. logit > 0.
Tensor predict_mask(const Tensor& logits);

struct Sample {
  Tensor image;  // [1, C, S, S]
  Tensor mask;   // [1, 1, S, S]
};

// Slices of one scan, optionally with a derived-MR stack appended as the
// sixth channel.
std::vector<Sample> scan_samples(const data::ScanRecord& scan, const Tensor& derived_mr = {});
// Single input slice for inference.
Tensor slice_input(const data::ScanRecord& scan, const Tensor& derived_mr, int z);

/// One shuffled, slice-wise pass with batch size 1. Each slice gets its own
/// affine transform when augmentation is enabled. Returns the mean loss.
double train_epoch(const std::vector<Sample>& dataset, nn::ParamSet& params, nn::AdamState& adam,
                   const FcnConfig& cfg, const data::AugmentRanges& augment, std::uint64_t seed);

// Binary [1, D, S, S] prediction for a whole scan.
Tensor segment_scan(const data::ScanRecord& scan, const Tensor& derived_mr, const nn::ParamSet& params,
                    const FcnConfig& cfg);

}  // namespace ctmr::fcn
