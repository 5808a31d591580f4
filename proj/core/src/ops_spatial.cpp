#include <algorithm>
#include <cmath>
#include <string>

#include "ctmr/autograd.hpp"
#include "ctmr/errors.hpp"
#include "ctmr/ops.hpp"

namespace ctmr {

namespace {

struct Nchw {
  int n, c, h, w;
  int planes() const { return n * c; }
  int plane() const { return h * w; }
};

Nchw dims_of(const Tensor& t, const char* op) {
  if (t.ndim() != 4) throw ShapeError(std::string(op) + ": expected NCHW input, got " + to_string(t.shape()));
  return {static_cast<int>(t.dim(0)), static_cast<int>(t.dim(1)), static_cast<int>(t.dim(2)),
          static_cast<int>(t.dim(3))};
}

int reflect(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

// Source index and interpolation weight for align_corners = false.
struct Tap {
  int lo, hi;
  float w_hi;
};

std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    int lo = static_cast<int>(src);
    if (lo > in - 1) lo = in - 1;
    const int hi = std::min(lo + 1, in - 1);
    taps[static_cast<std::size_t>(o)] = {lo, hi, static_cast<float>(src - lo)};
  }
  return taps;
}

}  // namespace

Tensor reflection_pad2d(const Tensor& input, int pad) {
  const auto d = dims_of(input, "reflection_pad2d");
  if (pad < 0) throw ArgumentError("reflection_pad2d: pad must be >= 0");
  if (pad >= d.h || pad >= d.w) {
    throw ShapeError("reflection_pad2d: pad " + std::to_string(pad) + " must be smaller than spatial extent " +
                     std::to_string(d.h) + "x" + std::to_string(d.w));
  }
  const int oh = d.h + 2 * pad;
  const int ow = d.w + 2 * pad;
  Tensor out(Shape{d.n, d.c, oh, ow});
  const float* x = input.data().data();
  float* o = out.data().data();
  for (int p = 0; p < d.planes(); ++p) {
    const float* src = x + static_cast<std::ptrdiff_t>(p) * d.plane();
    float* dst = o + static_cast<std::ptrdiff_t>(p) * oh * ow;
    for (int i = 0; i < oh; ++i) {
      const int si = reflect(i - pad, d.h);
      for (int j = 0; j < ow; ++j) dst[i * ow + j] = src[si * d.w + reflect(j - pad, d.w)];
    }
  }
  if (should_record({&input})) {
    Tape::local().record(out, [input, d, pad, oh, ow](std::span<const float> g) {
      std::vector<float> dx(static_cast<std::size_t>(input.numel()), 0.0f);
      for (int p = 0; p < d.planes(); ++p) {
        const float* src = g.data() + static_cast<std::ptrdiff_t>(p) * oh * ow;
        float* dst = dx.data() + static_cast<std::ptrdiff_t>(p) * d.plane();
        for (int i = 0; i < oh; ++i) {
          const int si = reflect(i - pad, d.h);
          for (int j = 0; j < ow; ++j) dst[si * d.w + reflect(j - pad, d.w)] += src[i * ow + j];
        }
      }
      accumulate_grad(input, dx);
    }, "reflection_pad2d");
  }
  return out;
}

Tensor instance_norm2d(const Tensor& input, float eps) {
  const auto d = dims_of(input, "instance_norm2d");
  const int m = d.plane();
  Tensor out(input.shape());
  std::vector<float> inv_std(static_cast<std::size_t>(d.planes()));
  const float* x = input.data().data();
  float* o = out.data().data();
  for (int p = 0; p < d.planes(); ++p) {
    const float* src = x + static_cast<std::ptrdiff_t>(p) * m;
    double mu = 0.0;
    for (int i = 0; i < m; ++i) mu += src[i];
    mu /= m;
    double var = 0.0;
    for (int i = 0; i < m; ++i) {
      const double c = src[i] - mu;
      var += c * c;
    }
    var /= m;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(p)] = static_cast<float>(is);
    float* dst = o + static_cast<std::ptrdiff_t>(p) * m;
    for (int i = 0; i < m; ++i) dst[i] = static_cast<float>((src[i] - mu) * is);
  }
  if (should_record({&input})) {
    Tape::local().record(out, [input, out, inv_std = std::move(inv_std), d, m](std::span<const float> g) {
      // dx = inv_std * (g - mean(g) - xhat * mean(g * xhat))
      std::vector<float> dx(static_cast<std::size_t>(input.numel()));
      const float* xhat = out.data().data();
      for (int p = 0; p < d.planes(); ++p) {
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(p) * m;
        double mg = 0.0, mgx = 0.0;
        for (int i = 0; i < m; ++i) {
          mg += g[static_cast<std::size_t>(off + i)];
          mgx += static_cast<double>(g[static_cast<std::size_t>(off + i)]) * xhat[off + i];
        }
        mg /= m;
        mgx /= m;
        const double is = inv_std[static_cast<std::size_t>(p)];
        for (int i = 0; i < m; ++i) {
          dx[static_cast<std::size_t>(off + i)] =
              static_cast<float>(is * (g[static_cast<std::size_t>(off + i)] - mg - xhat[off + i] * mgx));
        }
      }
      accumulate_grad(input, dx);
    }, "instance_norm2d");
  }
  return out;
}

Tensor avg_pool2d(const Tensor& input, int kernel, int stride) {
  const auto d = dims_of(input, "avg_pool2d");
  if (kernel < 1 || stride < 1) throw ArgumentError("avg_pool2d: kernel and stride must be >= 1");
  if (kernel > d.h || kernel > d.w) throw ShapeError("avg_pool2d: kernel larger than input");
  const int oh = (d.h - kernel) / stride + 1;
  const int ow = (d.w - kernel) / stride + 1;
  const float inv = 1.0f / static_cast<float>(kernel * kernel);
  Tensor out(Shape{d.n, d.c, oh, ow});
  const float* x = input.data().data();
  float* o = out.data().data();
  for (int p = 0; p < d.planes(); ++p) {
    const float* src = x + static_cast<std::ptrdiff_t>(p) * d.plane();
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        double acc = 0.0;
        for (int a = 0; a < kernel; ++a)
          for (int b = 0; b < kernel; ++b) acc += src[(i * stride + a) * d.w + j * stride + b];
        o[(static_cast<std::ptrdiff_t>(p) * oh + i) * ow + j] = static_cast<float>(acc) * inv;
      }
    }
  }
  if (should_record({&input})) {
    Tape::local().record(out, [input, d, kernel, stride, oh, ow, inv](std::span<const float> g) {
      std::vector<float> dx(static_cast<std::size_t>(input.numel()), 0.0f);
      for (int p = 0; p < d.planes(); ++p) {
        float* dst = dx.data() + static_cast<std::ptrdiff_t>(p) * d.plane();
        for (int i = 0; i < oh; ++i) {
          for (int j = 0; j < ow; ++j) {
            const float v = g[static_cast<std::size_t>((static_cast<std::ptrdiff_t>(p) * oh + i) * ow + j)] * inv;
            for (int a = 0; a < kernel; ++a)
              for (int b = 0; b < kernel; ++b) dst[(i * stride + a) * d.w + j * stride + b] += v;
          }
        }
      }
      accumulate_grad(input, dx);
    }, "avg_pool2d");
  }
  return out;
}

Tensor adaptive_avg_pool2d(const Tensor& input, int bins) {
  const auto d = dims_of(input, "adaptive_avg_pool2d");
  if (bins < 1) throw ArgumentError("adaptive_avg_pool2d: bins must be >= 1");
  if (bins > d.h || bins > d.w) {
    throw ShapeError("adaptive_avg_pool2d: " + std::to_string(bins) + " bins exceed spatial extent " +
                     std::to_string(d.h) + "x" + std::to_string(d.w));
  }
  auto range = [bins](int i, int n) {
    const int lo = (i * n) / bins;
    const int hi = ((i + 1) * n + bins - 1) / bins;
    return std::pair{lo, hi};
  };
  Tensor out(Shape{d.n, d.c, bins, bins});
  const float* x = input.data().data();
  float* o = out.data().data();
  for (int p = 0; p < d.planes(); ++p) {
    const float* src = x + static_cast<std::ptrdiff_t>(p) * d.plane();
    for (int i = 0; i < bins; ++i) {
      const auto [h0, h1] = range(i, d.h);
      for (int j = 0; j < bins; ++j) {
        const auto [w0, w1] = range(j, d.w);
        double acc = 0.0;
        for (int a = h0; a < h1; ++a)
          for (int b = w0; b < w1; ++b) acc += src[a * d.w + b];
        o[(static_cast<std::ptrdiff_t>(p) * bins + i) * bins + j] =
            static_cast<float>(acc / ((h1 - h0) * (w1 - w0)));
      }
    }
  }
  if (should_record({&input})) {
    Tape::local().record(out, [input, d, bins, range](std::span<const float> g) {
      std::vector<float> dx(static_cast<std::size_t>(input.numel()), 0.0f);
      for (int p = 0; p < d.planes(); ++p) {
        float* dst = dx.data() + static_cast<std::ptrdiff_t>(p) * d.plane();
        for (int i = 0; i < bins; ++i) {
          const auto [h0, h1] = range(i, d.h);
          for (int j = 0; j < bins; ++j) {
            const auto [w0, w1] = range(j, d.w);
            const float v = g[static_cast<std::size_t>((static_cast<std::ptrdiff_t>(p) * bins + i) * bins + j)] /
                            static_cast<float>((h1 - h0) * (w1 - w0));
            for (int a = h0; a < h1; ++a)
              for (int b = w0; b < w1; ++b) dst[a * d.w + b] += v;
          }
        }
      }
      accumulate_grad(input, dx);
    }, "adaptive_avg_pool2d");
  }
  return out;
}

Tensor upsample_bilinear(const Tensor& input, int out_h, int out_w) {
  const auto d = dims_of(input, "upsample_bilinear");
  if (out_h < 1 || out_w < 1) throw ArgumentError("upsample_bilinear: output size must be >= 1");
  const auto ty = bilinear_taps(d.h, out_h);
  const auto tx = bilinear_taps(d.w, out_w);
  Tensor out(Shape{d.n, d.c, out_h, out_w});
  const float* x = input.data().data();
  float* o = out.data().data();
  for (int p = 0; p < d.planes(); ++p) {
    const float* src = x + static_cast<std::ptrdiff_t>(p) * d.plane();
    float* dst = o + static_cast<std::ptrdiff_t>(p) * out_h * out_w;
    for (int i = 0; i < out_h; ++i) {
      const auto& a = ty[static_cast<std::size_t>(i)];
      for (int j = 0; j < out_w; ++j) {
        const auto& b = tx[static_cast<std::size_t>(j)];
        // Lerp form keeps constant planes exactly constant.
        const float t0 = src[a.lo * d.w + b.lo];
        const float t1 = src[a.lo * d.w + b.hi];
        const float b0 = src[a.hi * d.w + b.lo];
        const float b1 = src[a.hi * d.w + b.hi];
        const float top = t0 + b.w_hi * (t1 - t0);
        const float bot = b0 + b.w_hi * (b1 - b0);
        dst[i * out_w + j] = top + a.w_hi * (bot - top);
      }
    }
  }
  if (should_record({&input})) {
    Tape::local().record(out, [input, d, ty, tx, out_h, out_w](std::span<const float> g) {
      std::vector<float> dx(static_cast<std::size_t>(input.numel()), 0.0f);
      for (int p = 0; p < d.planes(); ++p) {
        const float* src = g.data() + static_cast<std::ptrdiff_t>(p) * out_h * out_w;
        float* dst = dx.data() + static_cast<std::ptrdiff_t>(p) * d.plane();
        for (int i = 0; i < out_h; ++i) {
          const auto& a = ty[static_cast<std::size_t>(i)];
          for (int j = 0; j < out_w; ++j) {
            const auto& b = tx[static_cast<std::size_t>(j)];
            const float v = src[i * out_w + j];
            dst[a.lo * d.w + b.lo] += v * (1.0f - a.w_hi) * (1.0f - b.w_hi);
            dst[a.lo * d.w + b.hi] += v * (1.0f - a.w_hi) * b.w_hi;
            dst[a.hi * d.w + b.lo] += v * a.w_hi * (1.0f - b.w_hi);
            dst[a.hi * d.w + b.hi] += v * a.w_hi * b.w_hi;
          }
        }
      }
      accumulate_grad(input, dx);
    }, "upsample_bilinear");
  }
  return out;
}

}  // namespace ctmr
