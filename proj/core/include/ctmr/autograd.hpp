#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctmr/tensor.hpp"

namespace ctmr {

/// Per-thread record of differentiable operations.
///
/// Ops append a node when any input needs a gradient. Node order is the
/// recording order, so inputs always precede the ops that consume them and
/// a reverse sweep is a valid topological traversal. backward() consumes the
/// tape: every node is visited at most once, then the tape is reset.
class Tape {
 public:
  // Receives d(loss)/d(output) and accumulates into the inputs.
  using BackwardFn = std::function<void(std::span<const float> grad_output)>;

  static Tape& local();

  void record(const Tensor& output, BackwardFn fn, const char* op_name);
  void backward(const Tensor& loss);
  void reset();

  std::size_t size() const { return nodes_.size(); }
  std::uint64_t epoch() const { return epoch_; }

  // Name and slot of the first recorded op whose output holds NaN/Inf.
  std::optional<std::string> first_non_finite() const;

 private:
  struct Node {
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn backward;
    const char* op_name;
  };

  std::vector<Node> nodes_;
  std::uint64_t epoch_ = 1;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// When enabled, every recorded op checks its output and throws
// NonFiniteError naming the op.
void set_anomaly_detection(bool enabled);
bool anomaly_detection();

// A tensor needs a gradient when it is a requires_grad leaf or an
// intermediate result on the current tape.
bool needs_grad(const Tensor& t);
bool should_record(std::initializer_list<const Tensor*> inputs);

// Adds `g` into t's gradient buffer if t needs one.
void accumulate_grad(const Tensor& t, std::span<const float> g);

void backward(const Tensor& loss);

}  // namespace ctmr
