#pragma once

// Double-precision reference implementations used as test oracles. Nothing
// here shares code with the library beyond reading its parameter sets.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ctmr/cgan.hpp"
#include "ctmr/fcn.hpp"
#include "ctmr/nn.hpp"
#include "ctmr/tensor.hpp"

namespace ref {

// Dense [C, H, W] volume in doubles (batch size 1 throughout).
struct Map {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;

  Map() = default;
  Map(int c_, int h_, int w_, double fill = 0.0)
      : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, fill) {}
  double& at(int ch, int y, int x) { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  double at(int ch, int y, int x) const { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
};

// [1, C, H, W] tensor <-> Map.
Map from_tensor(const ctmr::Tensor& t);
ctmr::Tensor to_tensor(const Map& m);

struct Array {
  std::vector<std::int64_t> shape;
  std::vector<double> v;
};

using Params = std::map<std::string, Array>;
Params from_params(const ctmr::nn::ParamSet& p);

// Direct nested-loop operators.
Map conv2d(const Map& x, const Array& w, const Array* b, int stride, int pad, int dilation);
Map conv_transpose2d(const Map& x, const Array& w, const Array* b, int stride, int pad, int output_padding);
Map reflection_pad(const Map& x, int pad);
Map instance_norm(const Map& x, double eps = 1e-5);
Map relu(Map x);
Map leaky_relu(Map x, double slope);
Map tanh(Map x);
Map multiply(Map x, const Map& y);
Map add(Map x, const Map& y);
Map concat(const std::vector<Map>& parts);
Map adaptive_avg_pool(const Map& x, int bins);
Map upsample_bilinear(const Map& x, int out_h, int out_w);

// Dropout masks are inputs to the reference: mask i holds 0 or 1/(1-rate)
// for residual block i.
Map generator(const Map& x, const Params& p, const ctmr::cgan::GeneratorConfig& cfg, const std::vector<Map>& masks);
Map discriminator(const Map& condition, const Map& image, const Params& p, const ctmr::cgan::DiscriminatorConfig& cfg);
Map fcn(const Map& x, const Params& p, const ctmr::fcn::FcnConfig& cfg);

double focal_loss(const Map& logits, const Map& mask, double gamma, double alpha);

// sum_i out_i * proj_i
double project(const Map& out, const Map& proj);

}  // namespace ref
