#include <doctest.h>

#include <cmath>
#include <fstream>

#include "ctmr/autograd.hpp"
#include "ctmr/cgan.hpp"
#include "ctmr/errors.hpp"
#include "ctmr/gradcheck.hpp"
#include "ctmr/nn.hpp"
#include "ctmr/ops.hpp"
#include "support/temp_dir.hpp"

using namespace ctmr;
using namespace ctmr::nn;

namespace {

ParamSet three_params() {
  ParamSet p;
  p.add("a.weight", random_uniform({2, 3, 3, 3}, -1, 1, 1));
  p.add("a.bias", random_uniform({2}, -1, 1, 2));
  p.add("b.weight", random_uniform({1, 2, 1, 1}, -1, 1, 3));
  return p;
}

// One Adam step on the scalar quadratic (w - target)^2.
void quadratic_step(ParamSet& p, AdamState& s, float target) {
  Tensor& w = p.get("w");
  w.zero_grad();
  const Tensor d = sub(w, Tensor::scalar(target));
  backward(sum(mul(d, d)));
  adam_step(p, s);
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& b) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST_CASE("init_params: zero biases and N(0, 0.02) weights") {
  ParamSet p;
  add_conv(p, {"big", 100, 100, 1, true, false}, 7);
  const Tensor& b = p.get("big.bias");
  for (float v : b.data()) CHECK(v == 0.0f);
  const Tensor& w = p.get("big.weight");
  REQUIRE(w.numel() == 10000);
  double m = 0.0, q = 0.0;
  for (float v : w.data()) m += v;
  m /= w.numel();
  for (float v : w.data()) q += (v - m) * (v - m);
  const double sd = std::sqrt(q / (w.numel() - 1));
  CHECK(std::abs(m) <= 0.002);
  CHECK(std::abs(sd - 0.02) <= 0.002);
  ParamSet again;
  add_conv(again, {"big", 100, 100, 1, true, false}, 7);
  CHECK(bitwise_equal(p, again));
  ParamSet other;
  add_conv(other, {"big", 100, 100, 1, true, false}, 8);
  CHECK_FALSE(bitwise_equal(p, other));
}

TEST_CASE("init_params builds every layer with its own stream") {
  const std::vector<ConvSpec> layers = {{"c1", 3, 4, 3}, {"t1", 4, 2, 3, true, true}, {"c2", 2, 1, 1, false}};
  const ParamSet p = init_params(layers, 11);
  CHECK(p.size() == 5);
  CHECK(p.get("c1.weight").shape() == Shape{4, 3, 3, 3});
  CHECK(p.get("t1.weight").shape() == Shape{4, 2, 3, 3});
  CHECK(p.get("t1.bias").shape() == Shape{2});
  CHECK_FALSE(p.contains("c2.bias"));
  CHECK(bitwise_equal(p, init_params(layers, 11)));
}

TEST_CASE("ParamSet names are unique") {
  ParamSet p;
  p.add("x", Tensor::zeros({1}));
  CHECK_THROWS_AS(p.add("x", Tensor::zeros({1})), DuplicateNameError);
  CHECK_THROWS_AS(p.get("y"), SchemaError);
}

TEST_CASE("adam first step") {
  ParamSet p;
  p.add("w", Tensor::scalar(1.0f)).set_requires_grad(true);
  AdamState s = make_adam(p, {2e-4f, 0.5f, 0.999f, 1e-8f});
  p.get("w").mutable_grad()[0] = 2.0f;
  adam_step(p, s);
  // m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
  const double expect = 1.0 - 2e-4 * 2.0 / (2.0 + 1e-8);
  CHECK(p.get("w").item() == doctest::Approx(expect).epsilon(1e-7));
  CHECK(p.get("w").item() == doctest::Approx(0.9998).epsilon(1e-6));
  CHECK(s.step == 1);
}

TEST_CASE("adam leaves a parameter with zero gradient unchanged") {
  ParamSet p;
  p.add("w", Tensor::scalar(0.37f)).set_requires_grad(true);
  AdamState s = make_adam(p);
  p.get("w").mutable_grad()[0] = 0.0f;
  for (int i = 0; i < 3; ++i) adam_step(p, s);
  CHECK(p.get("w").item() == 0.37f);
  CHECK(s.step == 3);
}

TEST_CASE("adam rejects a parameter without gradient") {
  ParamSet p;
  p.add("w", Tensor::scalar(1.0f)).set_requires_grad(true);
  AdamState s = make_adam(p);
  CHECK_THROWS_AS(adam_step(p, s), Error);
}

TEST_CASE("adam descends a scalar quadratic") {
  ParamSet p;
  p.add("w", Tensor::scalar(0.0f)).set_requires_grad(true);
  AdamState s = make_adam(p, {0.1f, 0.5f, 0.999f, 1e-8f});
  for (int i = 0; i < 50; ++i) quadratic_step(p, s, 3.0f);
  CHECK(std::abs(p.get("w").item() - 3.0f) < 3.0f);
  CHECK(s.step == 50);

  ParamSet q;
  q.add("w", Tensor::scalar(0.0f)).set_requires_grad(true);
  AdamState t = make_adam(q);
  double prev = 9.0;
  for (int i = 0; i < 100; ++i) {
    quadratic_step(q, t, 3.0f);
    const double f = std::pow(q.get("w").item() - 3.0, 2);
    CHECK(f < prev);
    prev = f;
  }
}

TEST_CASE("checkpoint round-trip is bitwise") {
  testing::TempDir dir;
  ParamSet p = three_params();
  p.set_requires_grad(true);
  for (auto& e : p) {
    auto g = e.tensor.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = 0.1f * static_cast<float>(i + 1);
  }
  AdamState s = make_adam(p);
  adam_step(p, s);
  adam_step(p, s);
  save_checkpoint(dir / "a.ckpt", p, &s);
  const Checkpoint c = load_checkpoint(dir / "a.ckpt");
  CHECK(bitwise_equal(c.params, p));
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(c.params[i].name == p[i].name);
  REQUIRE(c.adam.has_value());
  CHECK(c.adam->step == 2);
  CHECK(c.adam->names == s.names);
  for (std::size_t i = 0; i < s.m.size(); ++i) {
    CHECK(ctmr::bitwise_equal(c.adam->m[i], s.m[i]));
    CHECK(ctmr::bitwise_equal(c.adam->v[i], s.v[i]));
  }
  save_checkpoint(dir / "b.ckpt", c.params, &*c.adam);
  CHECK(read_bytes(dir / "a.ckpt") == read_bytes(dir / "b.ckpt"));

  save_checkpoint(dir / "p.ckpt", p);
  CHECK_FALSE(load_checkpoint(dir / "p.ckpt").adam.has_value());
}

TEST_CASE("checkpoint layout") {
  ParamSet p;
  p.add("ab", Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  const auto bytes = encode_checkpoint(p);
  // magic 4, version 1, count 4, name length 2, name 2, ndim 1, dims 8, payload 24
  CHECK(bytes.size() == 4 + 1 + 4 + 2 + 2 + 1 + 8 + 24);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "CKPT");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 1);
  CHECK(bytes[9] == 2);
  CHECK(bytes[13] == 2);
  CHECK(bytes[14] == 2);
  CHECK(bytes[18] == 3);
}

TEST_CASE("corrupted checkpoints raise typed errors") {
  const auto good = encode_checkpoint(three_params());
  auto bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), BadMagicError);
  auto bad_version = good;
  bad_version[4] = 9;
  CHECK_THROWS_AS(decode_checkpoint(bad_version), VersionError);
  const std::vector<std::uint8_t> truncated(good.begin(), good.end() - 5);
  CHECK_THROWS_AS(decode_checkpoint(truncated), TruncatedError);
  auto trailing = good;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(trailing), TrailingDataError);

  ParamSet dup;
  dup.add("aa", Tensor::zeros({1}));
  dup.add("ab", Tensor::zeros({1}));
  auto dup_bytes = encode_checkpoint(dup);
  // Second name starts after magic, version, count and the first entry (2 + 2 + 1 + 4 + 4 bytes).
  dup_bytes[9 + 13 + 2 + 1] = 'a';
  CHECK_THROWS_AS(decode_checkpoint(dup_bytes), DuplicateNameError);

  testing::TempDir dir;
  write_bytes(dir / "bad.ckpt", bad_magic);
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST_CASE("assigning parameters detects renamed or reshaped entries") {
  ParamSet target = three_params();
  ParamSet renamed;
  renamed.add("a.weight", Tensor::zeros({2, 3, 3, 3}));
  renamed.add("a.bias", Tensor::zeros({2}));
  renamed.add("c.weight", Tensor::zeros({1, 2, 1, 1}));
  CHECK_THROWS_AS(assign_parameters(target, renamed), SchemaError);
  ParamSet reshaped = three_params();
  reshaped.get("a.bias") = Tensor::zeros({3});
  CHECK_THROWS_AS(assign_parameters(target, reshaped), SchemaError);
  ParamSet source = three_params().clone();
  for (auto& e : source) e.tensor.data()[0] = 42.0f;
  assign_parameters(target, source);
  CHECK(bitwise_equal(target, source));
}

TEST_CASE("a reloaded tiny generator computes the same forward pass") {
  testing::TempDir dir;
  cgan::GeneratorConfig cfg;
  cfg.base_width = 4;
  cfg.n_resnet_blocks = 1;
  cfg.image_size = 16;
  const ParamSet g = cgan::make_generator_params(cfg, 5);
  save_checkpoint(dir / "g.ckpt", g);
  const Checkpoint c = load_checkpoint(dir / "g.ckpt");
  const Tensor x = random_uniform({1, 5, 16, 16}, -1, 1, 6);
  NoGradGuard guard;
  CHECK(ctmr::bitwise_equal(cgan::generator_forward(x, g, cfg, true, 9), cgan::generator_forward(x, c.params, cfg, true, 9)));
  CHECK(ctmr::bitwise_equal(cgan::generator_forward(x, g, cfg, false, 0), cgan::generator_forward(x, c.params, cfg, false, 0)));
}
