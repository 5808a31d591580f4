#include <algorithm>
#include <cmath>
#include <random>

#include "ctmr/autograd.hpp"
#include "ctmr/errors.hpp"
#include "ctmr/ops.hpp"

namespace ctmr {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

float softplus(float x) { return std::max(x, 0.0f) + std::log1p(std::exp(-std::fabs(x))); }

float stable_sigmoid(float z) {
  if (z >= 0.0f) return 1.0f / (1.0f + std::exp(-z));
  const float e = std::exp(z);
  return e / (1.0f + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto o = out.data();
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = da[i] + db[i];
  if (should_record({&a, &b})) {
    Tape::local().record(out, [a, b](std::span<const float> g) {
      accumulate_grad(a, g);
      accumulate_grad(b, g);
    }, "add");
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  auto o = out.data();
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = da[i] - db[i];
  if (should_record({&a, &b})) {
    Tape::local().record(out, [a, b](std::span<const float> g) {
      accumulate_grad(a, g);
      if (needs_grad(b)) {
        std::vector<float> neg(g.begin(), g.end());
        for (auto& v : neg) v = -v;
        accumulate_grad(b, neg);
      }
    }, "sub");
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  auto o = out.data();
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = da[i] * db[i];
  if (should_record({&a, &b})) {
    Tape::local().record(out, [a, b](std::span<const float> g) {
      const auto da = a.data();
      const auto db = b.data();
      std::vector<float> buf(g.size());
      if (needs_grad(a)) {
        for (std::size_t i = 0; i < g.size(); ++i) buf[i] = g[i] * db[i];
        accumulate_grad(a, buf);
      }
      if (needs_grad(b)) {
        for (std::size_t i = 0; i < g.size(); ++i) buf[i] = g[i] * da[i];
        accumulate_grad(b, buf);
      }
    }, "mul");
  }
  return out;
}

Tensor scale(const Tensor& a, float factor) {
  Tensor out(a.shape());
  auto o = out.data();
  const auto da = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = da[i] * factor;
  if (should_record({&a})) {
    Tape::local().record(out, [a, factor](std::span<const float> g) {
      std::vector<float> buf(g.begin(), g.end());
      for (auto& v : buf) v *= factor;
      accumulate_grad(a, buf);
    }, "scale");
  }
  return out;
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (should_record({&a})) {
    Tape::local().record(out, [a](std::span<const float> g) {
      std::vector<float> buf(static_cast<std::size_t>(a.numel()), g[0]);
      accumulate_grad(a, buf);
    }, "sum");
  }
  return out;
}

Tensor mean(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  const auto n = static_cast<double>(a.numel());
  Tensor out = Tensor::scalar(static_cast<float>(acc / n));
  if (should_record({&a})) {
    Tape::local().record(out, [a, n](std::span<const float> g) {
      std::vector<float> buf(static_cast<std::size_t>(a.numel()), static_cast<float>(g[0] / n));
      accumulate_grad(a, buf);
    }, "mean");
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  Tensor out(std::move(shape), std::vector<float>(a.data().begin(), a.data().end()));
  if (should_record({&a})) {
    Tape::local().record(out, [a](std::span<const float> g) { accumulate_grad(a, g); }, "reshape");
  }
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ArgumentError("concat_channels: no inputs");
  const auto& s0 = parts.front().shape();
  if (s0.size() != 4) throw ShapeError("concat_channels expects NCHW tensors, got " + to_string(s0));
  std::int64_t channels = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3]) {
      throw ShapeError("concat_channels: " + to_string(s) + " incompatible with " + to_string(s0));
    }
    channels += s[1];
  }
  const auto n = s0[0];
  const auto plane = s0[2] * s0[3];
  Tensor out(Shape{n, channels, s0[2], s0[3]});
  auto o = out.data();
  std::int64_t c_off = 0;
  for (const auto& p : parts) {
    const auto c = p.dim(1);
    const auto src = p.data();
    for (std::int64_t b = 0; b < n; ++b) {
      std::copy_n(src.begin() + b * c * plane, c * plane, o.begin() + (b * channels + c_off) * plane);
    }
    c_off += c;
  }
  bool record = false;
  for (const auto& p : parts) record = record || should_record({&p});
  if (record) {
    Tape::local().record(out, [parts, n, channels, plane](std::span<const float> g) {
      std::int64_t off = 0;
      for (const auto& p : parts) {
        const auto c = p.dim(1);
        if (needs_grad(p)) {
          std::vector<float> buf(static_cast<std::size_t>(p.numel()));
          for (std::int64_t b = 0; b < n; ++b) {
            std::copy_n(g.begin() + (b * channels + off) * plane, c * plane, buf.begin() + b * c * plane);
          }
          accumulate_grad(p, buf);
        }
        off += c;
      }
    }, "concat_channels");
  }
  return out;
}

Tensor activation(const Tensor& x, Activation act) {
  Tensor out(x.shape());
  auto o = out.data();
  const auto dx = x.data();
  switch (act.kind) {
    case ActivationKind::relu:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = dx[i] > 0.0f ? dx[i] : 0.0f;
      break;
    case ActivationKind::leaky_relu:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = dx[i] > 0.0f ? dx[i] : act.slope * dx[i];
      break;
    case ActivationKind::tanh:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(dx[i]);
      break;
    case ActivationKind::sigmoid:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = stable_sigmoid(dx[i]);
      break;
  }
  if (should_record({&x})) {
    Tape::local().record(out, [x, out, act](std::span<const float> g) {
      const auto dx = x.data();
      const auto y = out.data();
      std::vector<float> buf(g.size());
      switch (act.kind) {
        case ActivationKind::relu:
          for (std::size_t i = 0; i < g.size(); ++i) buf[i] = dx[i] > 0.0f ? g[i] : 0.0f;
          break;
        case ActivationKind::leaky_relu:
          for (std::size_t i = 0; i < g.size(); ++i) buf[i] = dx[i] > 0.0f ? g[i] : act.slope * g[i];
          break;
        case ActivationKind::tanh:
          for (std::size_t i = 0; i < g.size(); ++i) buf[i] = g[i] * (1.0f - y[i] * y[i]);
          break;
        case ActivationKind::sigmoid:
          for (std::size_t i = 0; i < g.size(); ++i) buf[i] = g[i] * y[i] * (1.0f - y[i]);
          break;
      }
      accumulate_grad(x, buf);
    }, "activation");
  }
  return out;
}

Tensor dropout(const Tensor& x, float rate, std::uint64_t seed, bool active) {
  if (!(rate >= 0.0f && rate < 1.0f)) {
    throw ArgumentError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!active || rate == 0.0f) {
    // Identity, but still a distinct node so callers get a fresh tensor.
    Tensor out(x.shape(), std::vector<float>(x.data().begin(), x.data().end()));
    if (should_record({&x})) {
      Tape::local().record(out, [x](std::span<const float> g) { accumulate_grad(x, g); }, "dropout");
    }
    return out;
  }
  const float keep_scale = 1.0f / (1.0f - rate);
  std::vector<float> mask(static_cast<std::size_t>(x.numel()));
  std::mt19937_64 engine(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& m : mask) m = u(engine) < rate ? 0.0f : keep_scale;

  Tensor out(x.shape());
  auto o = out.data();
  const auto dx = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = dx[i] * mask[i];
  if (should_record({&x})) {
    Tape::local().record(out, [x, mask = std::move(mask)](std::span<const float> g) {
      std::vector<float> buf(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) buf[i] = g[i] * mask[i];
      accumulate_grad(x, buf);
    }, "dropout");
  }
  return out;
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  require_same_shape(logits, targets, "bce_with_logits");
  const auto z = logits.data();
  const auto t = targets.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    // Terms with zero weight are skipped so saturated logits stay finite.
    if (t[i] != 0.0f) acc += static_cast<double>(t[i]) * softplus(-z[i]);
    if (t[i] != 1.0f) acc += static_cast<double>(1.0f - t[i]) * softplus(z[i]);
  }
  const auto n = static_cast<double>(z.size());
  Tensor out = Tensor::scalar(static_cast<float>(acc / n));
  if (should_record({&logits})) {
    Tape::local().record(out, [logits, targets, n](std::span<const float> g) {
      const auto z = logits.data();
      const auto t = targets.data();
      const float s = static_cast<float>(g[0] / n);
      std::vector<float> buf(z.size());
      for (std::size_t i = 0; i < z.size(); ++i) buf[i] = s * (stable_sigmoid(z[i]) - t[i]);
      accumulate_grad(logits, buf);
    }, "bce_with_logits");
  }
  return out;
}

Tensor l1_loss(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "l1_loss");
  const auto da = a.data();
  const auto db = b.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < da.size(); ++i) acc += std::fabs(static_cast<double>(da[i]) - db[i]);
  const auto n = static_cast<double>(da.size());
  Tensor out = Tensor::scalar(static_cast<float>(acc / n));
  if (should_record({&a, &b})) {
    Tape::local().record(out, [a, b, n](std::span<const float> g) {
      const auto da = a.data();
      const auto db = b.data();
      const float s = static_cast<float>(g[0] / n);
      std::vector<float> buf(da.size());
      for (std::size_t i = 0; i < da.size(); ++i) {
        const float d = da[i] - db[i];
        buf[i] = d > 0.0f ? s : (d < 0.0f ? -s : 0.0f);
      }
      accumulate_grad(a, buf);
      if (needs_grad(b)) {
        for (auto& v : buf) v = -v;
        accumulate_grad(b, buf);
      }
    }, "l1_loss");
  }
  return out;
}

}  // namespace ctmr
