#include "ctmr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ctmr/autograd.hpp"
#include "ctmr/ops.hpp"
#include "ctmr/rng.hpp"

namespace ctmr {

Tensor random_uniform(Shape shape, float lo, float hi, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

namespace {

double projected(const Tensor& out, const Tensor& w) {
  double acc = 0.0;
  const auto o = out.data();
  const auto dw = w.data();
  for (std::size_t i = 0; i < o.size(); ++i) acc += static_cast<double>(o[i]) * dw[i];
  return acc;
}

std::vector<std::size_t> pick_elements(std::size_t n, std::size_t limit, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (limit == 0 || limit >= n) return idx;
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckResult check_gradients(const std::function<Tensor()>& forward, std::vector<Tensor> wrt,
                                const GradCheckOptions& options) {
  std::vector<bool> previous;
  for (auto& t : wrt) {
    previous.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tape::local().reset();

  Tensor out = forward();
  const Tensor w = random_uniform(out.shape(), -1.0f, 1.0f, derive_seed(options.seed, "projection"));
  backward(sum(mul(out, w)));

  std::vector<std::vector<float>> analytic;
  for (auto& t : wrt) {
    analytic.emplace_back(t.has_grad() ? std::vector<float>(t.grad().begin(), t.grad().end())
                                       : std::vector<float>(static_cast<std::size_t>(t.numel()), 0.0f));
  }

  GradCheckResult result;
  Rng rng(derive_seed(options.seed, "elements"));
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    auto data = wrt[k].data();
    for (auto i : pick_elements(data.size(), options.max_elements_per_tensor, rng)) {
      const float original = data[i];
      data[i] = static_cast<float>(original + options.step);
      const double plus = projected(forward(), w);
      data[i] = static_cast<float>(original - options.step);
      const double minus = projected(forward(), w);
      data[i] = original;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[k][i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), options.denominator_floor});
      const double rel = std::fabs(a - numeric) / denom;
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        std::ostringstream os;
        os << k << '[' << i << "]: analytic " << a << " numeric " << numeric;
        result.worst = os.str();
      }
    }
  }
  result.passed = result.max_rel_error < options.tolerance;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    wrt[k].set_requires_grad(previous[k]);
    wrt[k].zero_grad();
  }
  return result;
}

std::vector<GradCheckEntry> run_op_gradcheck_suite(std::uint64_t seed, const GradCheckOptions& options) {
  std::vector<GradCheckEntry> entries;
  std::uint64_t stream = 0;
  auto rnd = [&](Shape s, float lo = -1.0f, float hi = 1.0f) {
    return random_uniform(std::move(s), lo, hi, derive_seed(seed, ++stream));
  };
  auto run = [&](std::string name, const std::function<Tensor()>& f, std::vector<Tensor> wrt) {
    GradCheckOptions o = options;
    o.seed = derive_seed(seed, name);
    entries.push_back({std::move(name), check_gradients(f, std::move(wrt), o)});
  };
  // Inputs for kinked activations are kept away from zero so the central
  // difference never straddles the kink.
  auto away_from_zero = [&](Shape s) {
    Tensor t = rnd(std::move(s), 0.1f, 1.0f);
    Rng signs(derive_seed(seed, ++stream));
    for (auto& v : t.data()) v = signs.uniform(0.0, 1.0) < 0.5 ? -v : v;
    return t;
  };

  const std::vector<std::pair<Shape, Shape>> conv_shapes{
      {{1, 2, 6, 6}, {3, 2, 3, 3}}, {{2, 3, 7, 5}, {2, 3, 2, 2}}};
  for (std::size_t s = 0; s < conv_shapes.size(); ++s) {
    const auto tag = "#" + std::to_string(s);
    Tensor x = rnd(conv_shapes[s].first);
    Tensor w = rnd(conv_shapes[s].second);
    Tensor b = rnd({conv_shapes[s].second[0]});
    run("conv2d" + tag, [=] { return conv2d(x, w, b, {1, 1, 1}); }, {x, w, b});
    run("conv2d_strided_dilated" + tag, [=] { return conv2d(x, w, b, {2, 1, 2}); }, {x, w, b});
  }

  {
    Tensor x = rnd({1, 3, 4, 4});
    Tensor w = rnd({3, 2, 3, 3});
    Tensor b = rnd({2});
    run("conv_transpose2d#0", [=] { return conv_transpose2d(x, w, b, {2, 1, 1}); }, {x, w, b});
    Tensor x2 = rnd({2, 2, 3, 5});
    Tensor w2 = rnd({2, 3, 4, 4});
    Tensor b2 = rnd({3});
    run("conv_transpose2d#1", [=] { return conv_transpose2d(x2, w2, b2, {2, 0, 0}); }, {x2, w2, b2});
  }

  for (const Shape& s : {Shape{1, 2, 4, 5}, Shape{2, 1, 6, 6}}) {
    const auto tag = "#" + std::to_string(s[0] - 1);
    Tensor x = rnd(s);
    run("reflection_pad2d" + tag, [=] { return reflection_pad2d(x, 2); }, {x});
    run("instance_norm2d" + tag, [=] { return instance_norm2d(x); }, {x});
    run("avg_pool2d" + tag, [=] { return avg_pool2d(x, 2, 2); }, {x});
    run("adaptive_avg_pool2d" + tag, [=] { return adaptive_avg_pool2d(x, 3); }, {x});
    run("upsample_bilinear" + tag, [=] { return upsample_bilinear(x, 7, 9); }, {x});
    Tensor k = away_from_zero(s);
    run("relu" + tag, [=] { return relu(k); }, {k});
    run("leaky_relu" + tag, [=] { return leaky_relu(k, 0.2f); }, {k});
    run("tanh" + tag, [=] { return tanh(x); }, {x});
    run("sigmoid" + tag, [=] { return sigmoid(x); }, {x});
    run("dropout" + tag, [=] { return dropout(x, 0.5f, 99, true); }, {x});
  }

  for (const Shape& s : {Shape{5}, Shape{2, 3, 2}}) {
    const auto tag = "#" + std::to_string(s.size() == 1 ? 0 : 1);
    Tensor a = rnd(s);
    Tensor b = rnd(s);
    run("add" + tag, [=] { return add(a, b); }, {a, b});
    run("sub" + tag, [=] { return sub(a, b); }, {a, b});
    run("mul" + tag, [=] { return mul(a, b); }, {a, b});
    run("scale" + tag, [=] { return scale(a, -1.7f); }, {a});
    run("sum" + tag, [=] { return sum(a); }, {a});
    run("mean" + tag, [=] { return mean(a); }, {a});
    run("reshape" + tag, [=] { return reshape(a, {a.numel()}); }, {a});
    Tensor targets(s);
    Rng coin(derive_seed(seed, ++stream));
    for (auto& v : targets.data()) v = coin.uniform(0.0, 1.0) < 0.5 ? 0.0f : 1.0f;
    Tensor z = rnd(s, -3.0f, 3.0f);
    run("bce_with_logits" + tag, [=] { return bce_with_logits(z, targets); }, {z});
    // Target offset keeps |a - t| away from the kink at zero.
    Tensor target = a.detach();
    Tensor offset = rnd(s, 0.2f, 1.0f);
    for (std::size_t i = 0; i < target.data().size(); ++i) target.data()[i] += offset.data()[i];
    run("l1_loss" + tag, [=] { return l1_loss(a, target); }, {a});
  }

  for (int variant = 0; variant < 2; ++variant) {
    const auto tag = "#" + std::to_string(variant);
    Tensor a = rnd({1, 2, 3, 3 + variant});
    Tensor b = rnd({1, 1 + variant, 3, 3 + variant});
    run("concat_channels" + tag, [=] { return concat_channels({a, b}); }, {a, b});
  }
  return entries;
}

}  // namespace ctmr
