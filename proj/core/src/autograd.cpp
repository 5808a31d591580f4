#include "ctmr/autograd.hpp"

#include <cmath>

#include "ctmr/errors.hpp"

namespace ctmr {

namespace {

thread_local bool t_grad_enabled = true;
thread_local bool t_anomaly = false;

}  // namespace

Tape& Tape::local() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(const Tensor& output, BackwardFn fn, const char* op_name) {
  auto& im = output.impl();
  if (t_anomaly && !output.all_finite()) {
    throw NonFiniteError(std::string("non-finite output from op '") + op_name + "' at tape slot " +
                         std::to_string(nodes_.size()));
  }
  im.tape_slot = static_cast<std::int64_t>(nodes_.size());
  im.tape_epoch = epoch_;
  nodes_.push_back(Node{output.impl_ptr(), std::move(fn), op_name});
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!loss.on_tape()) {
    throw Error("backward() called on a tensor that is not on the current tape");
  }
  auto& root = loss.impl();
  root.grad.assign(1, 1.0f);
  for (auto slot = root.tape_slot; slot >= 0; --slot) {
    auto& node = nodes_[static_cast<std::size_t>(slot)];
    if (node.output->grad.empty()) continue;
    node.backward(node.output->grad);
  }
  reset();
}

void Tape::reset() {
  nodes_.clear();
  ++epoch_;
}

std::optional<std::string> Tape::first_non_finite() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    for (float v : nodes_[i].output->data) {
      if (!std::isfinite(v)) {
        return std::string(nodes_[i].op_name) + " (tape slot " + std::to_string(i) + ", shape " +
               to_string(nodes_[i].output->shape) + ")";
      }
    }
  }
  return std::nullopt;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void set_anomaly_detection(bool enabled) { t_anomaly = enabled; }
bool anomaly_detection() { return t_anomaly; }

bool needs_grad(const Tensor& t) { return t.defined() && (t.requires_grad() || t.on_tape()); }

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!t_grad_enabled) return false;
  for (const Tensor* t : inputs) {
    if (t && needs_grad(*t)) return true;
  }
  return false;
}

void accumulate_grad(const Tensor& t, std::span<const float> g) {
  if (!needs_grad(t)) return;
  Tensor handle = t;
  auto dst = handle.mutable_grad();
  if (dst.size() != g.size()) {
    throw ShapeError("gradient size mismatch for tensor " + to_string(t.shape()));
  }
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void backward(const Tensor& loss) { Tape::local().backward(loss); }

}  // namespace ctmr
