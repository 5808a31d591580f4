#include "ctmr/nn.hpp"

#include <cmath>

#include "ctmr/errors.hpp"
#include "ctmr/rng.hpp"

namespace ctmr::nn {

Tensor& ParamSet::add(std::string name, Tensor tensor) {
  if (contains(name)) throw DuplicateNameError("duplicate parameter name '" + name + "'");
  entries_.push_back({std::move(name), std::move(tensor)});
  return entries_.back().tensor;
}

bool ParamSet::contains(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

const Tensor& ParamSet::get(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw SchemaError("no parameter named '" + std::string(name) + "'");
}

Tensor& ParamSet::get(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const ParamSet&>(*this).get(name));
}

std::int64_t ParamSet::total_elements() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

void ParamSet::set_requires_grad(bool flag) {
  for (auto& e : entries_) e.tensor.set_requires_grad(flag);
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  for (const auto& e : entries_) out.add(e.name, e.tensor.clone());
  return out;
}

bool bitwise_equal(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || !ctmr::bitwise_equal(a[i].tensor, b[i].tensor)) return false;
  }
  return true;
}

void assign_parameters(ParamSet& target, const ParamSet& source) {
  if (target.size() != source.size()) {
    throw SchemaError("parameter count mismatch: model has " + std::to_string(target.size()) + ", source has " +
                      std::to_string(source.size()));
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto& t = target[i];
    const auto& s = source[i];
    if (t.name != s.name) {
      throw SchemaError("parameter " + std::to_string(i) + " is '" + t.name + "' in the model but '" + s.name +
                        "' in the source");
    }
    if (t.tensor.shape() != s.tensor.shape()) {
      throw SchemaError("parameter '" + t.name + "' has shape " + to_string(t.tensor.shape()) +
                        " in the model but " + to_string(s.tensor.shape()) + " in the source");
    }
  }
  for (auto& e : target) {
    const auto src = source.get(e.name).data();
    std::copy(src.begin(), src.end(), e.tensor.data().begin());
  }
}

void add_conv(ParamSet& params, const ConvSpec& spec, std::uint64_t seed) {
  const Shape shape = spec.transposed ? Shape{spec.in_channels, spec.out_channels, spec.kernel, spec.kernel}
                                      : Shape{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel};
  Tensor weight(shape);
  Rng rng(derive_seed(seed, spec.name));
  for (auto& v : weight.data()) v = static_cast<float>(rng.normal(0.0, 0.02));
  params.add(spec.name + ".weight", weight.set_requires_grad(true));
  if (spec.bias) params.add(spec.name + ".bias", Tensor::zeros({spec.out_channels}).set_requires_grad(true));
}

ParamSet init_params(std::span<const ConvSpec> layers, std::uint64_t seed) {
  ParamSet params;
  for (const auto& layer : layers) add_conv(params, layer, seed);
  return params;
}

AdamState make_adam(const ParamSet& params, AdamOptions options) {
  AdamState state;
  state.options = options;
  for (const auto& e : params) {
    state.names.push_back(e.name);
    state.m.push_back(Tensor::zeros(e.tensor.shape()));
    state.v.push_back(Tensor::zeros(e.tensor.shape()));
  }
  return state;
}

void adam_step(ParamSet& params, AdamState& state) {
  if (state.names.size() != params.size()) {
    throw SchemaError("optimizer state tracks " + std::to_string(state.names.size()) + " parameters, model has " +
                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = params[i];
    if (state.names[i] != e.name) throw SchemaError("optimizer state out of order at '" + e.name + "'");
    if (!e.tensor.has_grad()) throw Error("adam_step: parameter '" + e.name + "' has no gradient");
  }
  ++state.step;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(static_cast<double>(o.beta1), t);
  const double bc2 = 1.0 - std::pow(static_cast<double>(o.beta2), t);
  const float b1 = o.beta1, b2 = o.beta2;
  const float step_size = static_cast<float>(o.lr / bc1);
  const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const float eps = o.eps;
  std::size_t i = 0;
  for (auto& e : params) {
    float* w = e.tensor.data().data();
    const float* g = e.tensor.grad().data();
    float* m = state.m[i].data().data();
    float* v = state.v[i].data().data();
    const std::size_t n = e.tensor.data().size();
    for (std::size_t k = 0; k < n; ++k) {
      m[k] = b1 * m[k] + (1.0f - b1) * g[k];
      v[k] = b2 * v[k] + (1.0f - b2) * g[k] * g[k];
      w[k] -= step_size * m[k] / (std::sqrt(v[k]) * inv_sqrt_bc2 + eps);
    }
    ++i;
  }
}

}  // namespace ctmr::nn
