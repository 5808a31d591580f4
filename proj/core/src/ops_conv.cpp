#include <Eigen/Core>

#include <algorithm>
#include <string>

#include "ctmr/autograd.hpp"
#include "ctmr/errors.hpp"
#include "ctmr/ops.hpp"

namespace ctmr {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

struct Geometry {
  int channels, height, width;   // image side
  int kh, kw;
  int stride, padding, dilation;
  int out_h, out_w;              // column side
  bool trivial() const {
    return kh == 1 && kw == 1 && stride == 1 && padding == 0 && height == out_h && width == out_w;
  }
};

// Per-thread scratch reused across calls. Large im2col matrices would
// otherwise be freshly mapped and page-faulted on every call.
float* scratch(int slot, std::size_t n) {
  thread_local std::vector<float> buffers[2];
  auto& b = buffers[slot];
  if (b.size() < n) b.resize(n);
  return b.data();
}

// Output columns [lo, hi) whose input column lies inside the image.
void valid_range(int out_w, int width, int stride, int offset, int& lo, int& hi) {
  // iw = ow * stride + offset must satisfy 0 <= iw < width.
  lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  hi = width - offset <= 0 ? 0 : (width - offset - 1) / stride + 1;
  lo = std::min(lo, out_w);
  hi = std::clamp(hi, lo, out_w);
}

// Unfolds image patches into a [channels*kh*kw, out_h*out_w] matrix.
void im2col(const float* image, const Geometry& g, float* col) {
  const int cols = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    const float* plane = image + static_cast<std::ptrdiff_t>(c) * g.height * g.width;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        float* row = col + (static_cast<std::ptrdiff_t>(c) * g.kh * g.kw + ki * g.kw + kj) * cols;
        const int offset = kj * g.dilation - g.padding;
        int lo, hi;
        valid_range(g.out_w, g.width, g.stride, offset, lo, hi);
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.padding + ki * g.dilation;
          float* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= g.height) {
            std::fill_n(dst, g.out_w, 0.0f);
            continue;
          }
          const float* src = plane + ih * g.width;
          std::fill_n(dst, lo, 0.0f);
          if (g.stride == 1) {
            std::copy(src + lo + offset, src + hi + offset, dst + lo);
          } else {
            for (int ow = lo; ow < hi; ++ow) dst[ow] = src[ow * g.stride + offset];
          }
          std::fill(dst + hi, dst + g.out_w, 0.0f);
        }
      }
    }
  }
}

// Adjoint of im2col: scatters columns back into an (accumulated) image.
void col2im(const float* col, const Geometry& g, float* image) {
  const int cols = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    float* plane = image + static_cast<std::ptrdiff_t>(c) * g.height * g.width;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        const float* row = col + (static_cast<std::ptrdiff_t>(c) * g.kh * g.kw + ki * g.kw + kj) * cols;
        const int offset = kj * g.dilation - g.padding;
        int lo, hi;
        valid_range(g.out_w, g.width, g.stride, offset, lo, hi);
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.padding + ki * g.dilation;
          if (ih < 0 || ih >= g.height) continue;
          float* dst = plane + ih * g.width;
          const float* src = row + oh * g.out_w;
          if (g.stride == 1) {
            for (int ow = lo; ow < hi; ++ow) dst[ow + offset] += src[ow];
          } else {
            for (int ow = lo; ow < hi; ++ow) dst[ow * g.stride + offset] += src[ow];
          }
        }
      }
    }
  }
}

// Direct stride-1 kernels for layers with very few output features, where
// the im2col matrix is far larger than the work done on it.
bool use_direct(const Geometry& g, int features) { return features <= 4 && g.stride == 1 && !g.trivial(); }

template <typename Fn>
void for_each_tap(const Geometry& g, Fn&& fn) {
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        const int offset = kj * g.dilation - g.padding;
        int lo, hi;
        valid_range(g.out_w, g.width, 1, offset, lo, hi);
        const int k = (c * g.kh + ki) * g.kw + kj;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh - g.padding + ki * g.dilation;
          if (ih < 0 || ih >= g.height) continue;
          const std::ptrdiff_t in = (static_cast<std::ptrdiff_t>(c) * g.height + ih) * g.width + offset;
          fn(k, in, oh * g.out_w, lo, hi);
        }
      }
    }
  }
}

void direct_forward(const float* x, const Geometry& g, const float* w, int features, float* out) {
  const int k_rows = g.channels * g.kh * g.kw;
  const int cols = g.out_h * g.out_w;
  std::fill_n(out, static_cast<std::ptrdiff_t>(features) * cols, 0.0f);
  for (int f = 0; f < features; ++f) {
    float* o = out + static_cast<std::ptrdiff_t>(f) * cols;
    const float* wf = w + static_cast<std::ptrdiff_t>(f) * k_rows;
    for_each_tap(g, [&](int k, std::ptrdiff_t in, int row, int lo, int hi) {
      const float wv = wf[k];
      const float* src = x + in;
      float* dst = o + row;
      for (int ow = lo; ow < hi; ++ow) dst[ow] += wv * src[ow];
    });
  }
}

void direct_backward(const float* x, const float* gout, const Geometry& g, const float* w, int features,
                     float* dx, float* dw) {
  const int k_rows = g.channels * g.kh * g.kw;
  const int cols = g.out_h * g.out_w;
  for (int f = 0; f < features; ++f) {
    const float* gf = gout + static_cast<std::ptrdiff_t>(f) * cols;
    const float* wf = w + static_cast<std::ptrdiff_t>(f) * k_rows;
    float* dwf = dw ? dw + static_cast<std::ptrdiff_t>(f) * k_rows : nullptr;
    for_each_tap(g, [&](int k, std::ptrdiff_t in, int row, int lo, int hi) {
      const float* src = gf + row;
      if (dx) {
        const float wv = wf[k];
        float* dst = dx + in;
        for (int ow = lo; ow < hi; ++ow) dst[ow] += wv * src[ow];
      }
      if (dwf) {
        const float* xs = x + in;
        float acc = 0.0f;
        for (int ow = lo; ow < hi; ++ow) acc += xs[ow] * src[ow];
        dwf[k] += acc;
      }
    });
  }
}

void require_4d(const Tensor& t, const char* op, const char* what) {
  if (t.ndim() != 4) {
    throw ShapeError(std::string(op) + ": " + what + " must be 4-D, got " + to_string(t.shape()));
  }
}

void check_bias(const Tensor& bias, std::int64_t features, const char* op) {
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != features)) {
    throw ShapeError(std::string(op) + ": bias must have shape [" + std::to_string(features) + "], got " +
                     to_string(bias.shape()));
  }
}

void add_bias(float* out, const Tensor& bias, int features, int plane) {
  if (!bias.defined()) return;
  const auto b = bias.data();
  for (int f = 0; f < features; ++f) {
    float* p = out + static_cast<std::ptrdiff_t>(f) * plane;
    for (int i = 0; i < plane; ++i) p[i] += b[static_cast<std::size_t>(f)];
  }
}

void bias_grad(std::span<const float> g, int batch, int features, int plane, std::vector<float>& db) {
  db.assign(static_cast<std::size_t>(features), 0.0f);
  for (int n = 0; n < batch; ++n) {
    for (int f = 0; f < features; ++f) {
      const float* p = g.data() + (static_cast<std::ptrdiff_t>(n) * features + f) * plane;
      double acc = 0.0;
      for (int i = 0; i < plane; ++i) acc += p[i];
      db[static_cast<std::size_t>(f)] += static_cast<float>(acc);
    }
  }
}

}  // namespace

int conv_output_size(int in, int kernel, int stride, int padding, int dilation) {
  return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
}

int conv_transpose_output_size(int in, int kernel, int stride, int padding, int output_padding) {
  return (in - 1) * stride - 2 * padding + kernel + output_padding;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dOptions opts) {
  require_4d(input, "conv2d", "input");
  require_4d(weight, "conv2d", "weight");
  if (opts.stride < 1) throw ArgumentError("conv2d: stride must be >= 1, got " + std::to_string(opts.stride));
  if (opts.dilation < 1) throw ArgumentError("conv2d: dilation must be >= 1, got " + std::to_string(opts.dilation));
  if (opts.padding < 0) throw ArgumentError("conv2d: padding must be >= 0");
  const int batch = static_cast<int>(input.dim(0));
  const int channels = static_cast<int>(input.dim(1));
  const int height = static_cast<int>(input.dim(2));
  const int width = static_cast<int>(input.dim(3));
  const int features = static_cast<int>(weight.dim(0));
  if (weight.dim(1) != channels) {
    throw ShapeError("conv2d: channel dimension mismatch, weight expects " + std::to_string(weight.dim(1)) +
                     " input channels but input has " + std::to_string(channels));
  }
  check_bias(bias, features, "conv2d");
  const int kh = static_cast<int>(weight.dim(2));
  const int kw = static_cast<int>(weight.dim(3));
  const int span_h = opts.dilation * (kh - 1) + 1;
  const int span_w = opts.dilation * (kw - 1) + 1;
  if (height + 2 * opts.padding < span_h) {
    throw ShapeError("conv2d: height dimension " + std::to_string(height) + " (padded " +
                     std::to_string(height + 2 * opts.padding) + ") smaller than dilated kernel " +
                     std::to_string(span_h));
  }
  if (width + 2 * opts.padding < span_w) {
    throw ShapeError("conv2d: width dimension " + std::to_string(width) + " (padded " +
                     std::to_string(width + 2 * opts.padding) + ") smaller than dilated kernel " +
                     std::to_string(span_w));
  }
  const Geometry geo{channels, height, width, kh, kw, opts.stride, opts.padding, opts.dilation,
                     conv_output_size(height, kh, opts.stride, opts.padding, opts.dilation),
                     conv_output_size(width, kw, opts.stride, opts.padding, opts.dilation)};
  const int k_rows = channels * kh * kw;
  const int cols = geo.out_h * geo.out_w;

  Tensor out(Shape{batch, features, geo.out_h, geo.out_w});
  const bool direct = use_direct(geo, features);
  float* col = geo.trivial() || direct ? nullptr : scratch(0, static_cast<std::size_t>(k_rows) * cols);
  const ConstMatMap w(weight.data().data(), features, k_rows);
  for (int n = 0; n < batch; ++n) {
    const float* x = input.data().data() + static_cast<std::ptrdiff_t>(n) * channels * height * width;
    float* o = out.data().data() + static_cast<std::ptrdiff_t>(n) * features * cols;
    if (direct) {
      direct_forward(x, geo, weight.data().data(), features, o);
    } else {
      const float* colp = x;
      if (!geo.trivial()) {
        im2col(x, geo, col);
        colp = col;
      }
      MatMap(o, features, cols).noalias() = w * ConstMatMap(colp, k_rows, cols);
    }
    add_bias(o, bias, features, cols);
  }

  if (should_record({&input, &weight, &bias})) {
    Tape::local().record(out, [input, weight, bias, geo, batch, features, k_rows, cols](std::span<const float> g) {
      const bool want_x = needs_grad(input);
      const bool want_w = needs_grad(weight);
      const bool direct = use_direct(geo, features);
      const bool im2col_path = !geo.trivial() && !direct;
      float* col = im2col_path ? scratch(0, static_cast<std::size_t>(k_rows) * cols) : nullptr;
      float* dcol = im2col_path ? scratch(1, static_cast<std::size_t>(k_rows) * cols) : nullptr;
      std::vector<float> dx;
      if (want_x) dx.assign(static_cast<std::size_t>(input.numel()), 0.0f);
      RowMatrix dw;
      if (want_w) dw = RowMatrix::Zero(features, k_rows);
      const ConstMatMap w(weight.data().data(), features, k_rows);
      const int image = geo.channels * geo.height * geo.width;
      for (int n = 0; n < batch; ++n) {
        if (direct) {
          direct_backward(input.data().data() + static_cast<std::ptrdiff_t>(n) * image,
                          g.data() + static_cast<std::ptrdiff_t>(n) * features * cols, geo, weight.data().data(),
                          features, want_x ? dx.data() + static_cast<std::ptrdiff_t>(n) * image : nullptr,
                          want_w ? dw.data() : nullptr);
          continue;
        }
        const ConstMatMap gout(g.data() + static_cast<std::ptrdiff_t>(n) * features * cols, features, cols);
        if (want_w) {
          const float* x = input.data().data() + static_cast<std::ptrdiff_t>(n) * image;
          const float* colp = x;
          if (!geo.trivial()) {
            im2col(x, geo, col);
            colp = col;
          }
          dw.noalias() += gout * ConstMatMap(colp, k_rows, cols).transpose();
        }
        if (want_x) {
          if (geo.trivial()) {
            MatMap(dx.data() + static_cast<std::ptrdiff_t>(n) * image, k_rows, cols).noalias() = w.transpose() * gout;
          } else {
            MatMap(dcol, k_rows, cols).noalias() = w.transpose() * gout;
            col2im(dcol, geo, dx.data() + static_cast<std::ptrdiff_t>(n) * image);
          }
        }
      }
      if (want_x) accumulate_grad(input, dx);
      if (want_w) accumulate_grad(weight, std::span<const float>(dw.data(), static_cast<std::size_t>(dw.size())));
      if (needs_grad(bias)) {
        std::vector<float> db;
        bias_grad(g, batch, features, cols, db);
        accumulate_grad(bias, db);
      }
    }, "conv2d");
  }
  return out;
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias, ConvTranspose2dOptions opts) {
  require_4d(input, "conv_transpose2d", "input");
  require_4d(weight, "conv_transpose2d", "weight");
  if (opts.stride < 1) throw ArgumentError("conv_transpose2d: stride must be >= 1");
  if (opts.padding < 0) throw ArgumentError("conv_transpose2d: padding must be >= 0");
  if (opts.output_padding < 0 || opts.output_padding >= opts.stride) {
    throw ArgumentError("conv_transpose2d: output_padding (" + std::to_string(opts.output_padding) +
                        ") must be smaller than stride (" + std::to_string(opts.stride) + ")");
  }
  const int batch = static_cast<int>(input.dim(0));
  const int channels = static_cast<int>(input.dim(1));
  const int height = static_cast<int>(input.dim(2));
  const int width = static_cast<int>(input.dim(3));
  if (weight.dim(0) != channels) {
    throw ShapeError("conv_transpose2d: channel dimension mismatch, weight expects " + std::to_string(weight.dim(0)) +
                     " input channels but input has " + std::to_string(channels));
  }
  const int features = static_cast<int>(weight.dim(1));
  check_bias(bias, features, "conv_transpose2d");
  const int kh = static_cast<int>(weight.dim(2));
  const int kw = static_cast<int>(weight.dim(3));
  const int out_h = conv_transpose_output_size(height, kh, opts.stride, opts.padding, opts.output_padding);
  const int out_w = conv_transpose_output_size(width, kw, opts.stride, opts.padding, opts.output_padding);
  if (out_h < 1 || out_w < 1) throw ShapeError("conv_transpose2d: output would be empty");

  // The output plays the role of the image in the matching forward conv.
  const Geometry geo{features, out_h, out_w, kh, kw, opts.stride, opts.padding, 1, height, width};
  const int k_rows = features * kh * kw;
  const int cols = height * width;
  const int out_plane = out_h * out_w;

  Tensor out(Shape{batch, features, out_h, out_w});
  float* col = scratch(0, static_cast<std::size_t>(k_rows) * cols);
  const ConstMatMap w(weight.data().data(), channels, k_rows);
  for (int n = 0; n < batch; ++n) {
    const ConstMatMap x(input.data().data() + static_cast<std::ptrdiff_t>(n) * channels * cols, channels, cols);
    MatMap(col, k_rows, cols).noalias() = w.transpose() * x;
    float* o = out.data().data() + static_cast<std::ptrdiff_t>(n) * features * out_plane;
    col2im(col, geo, o);
    add_bias(o, bias, features, out_plane);
  }

  if (should_record({&input, &weight, &bias})) {
    Tape::local().record(out, [input, weight, bias, geo, batch, channels, features, k_rows, cols,
                               out_plane](std::span<const float> g) {
      const bool want_x = needs_grad(input);
      const bool want_w = needs_grad(weight);
      float* gcol = scratch(0, static_cast<std::size_t>(k_rows) * cols);
      std::vector<float> dx;
      if (want_x) dx.assign(static_cast<std::size_t>(input.numel()), 0.0f);
      RowMatrix dw;
      if (want_w) dw = RowMatrix::Zero(channels, k_rows);
      const ConstMatMap w(weight.data().data(), channels, k_rows);
      for (int n = 0; n < batch; ++n) {
        im2col(g.data() + static_cast<std::ptrdiff_t>(n) * features * out_plane, geo, gcol);
        const ConstMatMap gc(gcol, k_rows, cols);
        if (want_x) {
          MatMap(dx.data() + static_cast<std::ptrdiff_t>(n) * channels * cols, channels, cols).noalias() = w * gc;
        }
        if (want_w) {
          const ConstMatMap x(input.data().data() + static_cast<std::ptrdiff_t>(n) * channels * cols, channels, cols);
          dw.noalias() += x * gc.transpose();
        }
      }
      if (want_x) accumulate_grad(input, dx);
      if (want_w) accumulate_grad(weight, std::span<const float>(dw.data(), static_cast<std::size_t>(dw.size())));
      if (needs_grad(bias)) {
        std::vector<float> db;
        bias_grad(g, batch, features, out_plane, db);
        accumulate_grad(bias, db);
      }
    }, "conv_transpose2d");
  }
  return out;
}

}  // namespace ctmr
