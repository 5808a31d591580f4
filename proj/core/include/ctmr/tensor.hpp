#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ctmr {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  // Empty until the first gradient is accumulated.
  std::vector<float> grad;
  bool requires_grad = false;
  // Slot on the owning thread's tape; meaningful only while tape_epoch
  // matches the tape's current epoch.
  std::int64_t tape_slot = -1;
  std::uint64_t tape_epoch = 0;
};

}  // namespace detail

/// Dense row-major float32 tensor.
///
/// A Tensor is a handle: copies share storage, which is what lets the tape
/// and a ParamSet refer to the same parameter. Use clone() for a deep copy
/// and detach() for a copy that is cut off from the tape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0f); }
  static Tensor full(Shape shape, float value) { return Tensor(std::move(shape), value); }
  static Tensor scalar(float value) { return Tensor(Shape{1}, value); }

  bool defined() const noexcept { return impl_ != nullptr; }

  const Shape& shape() const;
  std::int64_t dim(int axis) const;
  int ndim() const;
  std::int64_t numel() const;

  std::span<float> data();
  std::span<const float> data() const;
  float operator[](std::int64_t i) const { return data()[static_cast<std::size_t>(i)]; }
  float item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const float> grad() const;
  // Allocates a zero buffer on first use.
  std::span<float> mutable_grad();
  void zero_grad();

  // True while the tensor is the output of an op recorded on the current
  // thread's tape.
  bool on_tape() const;

  Tensor detach() const;
  Tensor clone() const;

  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }
  bool all_finite() const;

  detail::TensorImpl& impl() const;
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

bool bitwise_equal(const Tensor& a, const Tensor& b);
float max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace ctmr
