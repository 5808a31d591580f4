#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctmr/tensor.hpp"

namespace ctmr::nn {

/// Ordered, uniquely named parameter collection. Iteration order is the
/// insertion order and is preserved by checkpoints.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  // Throws DuplicateNameError if the name exists.
  Tensor& add(std::string name, Tensor tensor);

  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::int64_t total_elements() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }

  void zero_grad();
  void set_requires_grad(bool flag);

  // Deep copy with fresh storage.
  ParamSet clone() const;

 private:
  std::vector<Entry> entries_;
};

bool bitwise_equal(const ParamSet& a, const ParamSet& b);

// Copies values from `source` into `target`. Names, order and shapes must
// match exactly, otherwise SchemaError; nothing is modified on failure.
void assign_parameters(ParamSet& target, const ParamSet& source);

struct ConvSpec {
  std::string name;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  bool bias = true;
  // Transposed convolutions store weights as [in, out, k, k].
  bool transposed = false;
};

// Adds `<name>.weight` ~ Normal(0, 0.02) and a zero `<name>.bias`.
void add_conv(ParamSet& params, const ConvSpec& spec, std::uint64_t seed);

ParamSet init_params(std::span<const ConvSpec> layers, std::uint64_t seed);

struct AdamOptions {
  float lr = 2e-4f;
  float beta1 = 0.5f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  // Moment buffers, one per parameter in ParamSet order.
  std::vector<std::string> names;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

AdamState make_adam(const ParamSet& params, AdamOptions options = {});

/// One bias-corrected Adam update from the gradients stored on `params`.
/// Throws if any parameter has no gradient or the state does not match.
void adam_step(ParamSet& params, AdamState& state);

// ---------------------------------------------------------------------------
// Checkpoint container

struct Checkpoint {
  ParamSet params;
  std::optional<AdamState> adam;
};

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params, const AdamState* adam = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_checkpoint(const ParamSet& params, const AdamState* adam = nullptr);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace ctmr::nn
