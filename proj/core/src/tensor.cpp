#include "ctmr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "ctmr/autograd.hpp"
#include "ctmr/errors.hpp"

namespace ctmr {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  const auto n = shape_numel(shape);
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<std::size_t>(n), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : impl_(std::make_shared<detail::TensorImpl>()) {
  const auto n = shape_numel(shape);
  if (static_cast<std::int64_t>(values.size()) != n) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " + to_string(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

detail::TensorImpl& Tensor::impl() const {
  if (!impl_) throw Error("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::int64_t Tensor::dim(int axis) const {
  const auto& s = shape();
  const int n = static_cast<int>(s.size());
  if (axis < 0) axis += n;
  if (axis < 0 || axis >= n) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  return s[static_cast<std::size_t>(axis)];
}

int Tensor::ndim() const { return static_cast<int>(shape().size()); }
std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl().data.size()); }

std::span<float> Tensor::data() { return impl().data; }
std::span<const float> Tensor::data() const { return impl().data; }

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() needs a single-element tensor, got " + to_string(shape()));
  return impl().data[0];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  impl().requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return !impl().grad.empty(); }
std::span<const float> Tensor::grad() const { return impl().grad; }

std::span<float> Tensor::mutable_grad() {
  auto& im = impl();
  if (im.grad.empty()) im.grad.assign(im.data.size(), 0.0f);
  return im.grad;
}

void Tensor::zero_grad() {
  auto& g = impl().grad;
  g.clear();
  g.shrink_to_fit();
}

bool Tensor::on_tape() const {
  const auto& im = impl();
  return im.tape_slot >= 0 && im.tape_epoch == Tape::local().epoch();
}

Tensor Tensor::detach() const {
  Tensor out(shape(), std::vector<float>(impl().data));
  return out;
}

Tensor Tensor::clone() const {
  Tensor out = detach();
  out.impl().requires_grad = impl().requires_grad;
  out.impl().grad = impl().grad;
  return out;
}

bool Tensor::all_finite() const {
  return std::all_of(impl().data.begin(), impl().data.end(), [](float v) { return std::isfinite(v); });
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  const auto da = a.data();
  const auto db = b.data();
  return std::memcmp(da.data(), db.data(), da.size_bytes()) == 0;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  float m = 0.0f;
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) m = std::max(m, std::fabs(da[i] - db[i]));
  return m;
}

}  // namespace ctmr
