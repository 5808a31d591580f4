#include <limits>
#include <set>

#include "binary_io.hpp"
#include "ctmr/errors.hpp"
#include "ctmr/nn.hpp"

namespace ctmr::nn {

namespace {

constexpr std::string_view kMagic = "CKPT";
constexpr std::string_view kAdamMagic = "ADAM";
constexpr std::uint8_t kVersion = 1;
// Guards allocation on corrupted headers; far above any model here.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

void write_entry(detail::ByteWriter& w, const std::string& name, const Tensor& t) {
  if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw ArgumentError("parameter name too long");
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.tag(name);
  w.u8(static_cast<std::uint8_t>(t.ndim()));
  for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  w.f32_array(t.data());
}

std::vector<std::pair<std::string, Tensor>> read_entries(detail::ByteReader& r) {
  const auto count = r.u32("parameter count");
  std::vector<std::pair<std::string, Tensor>> out;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.u16("name length");
    auto name = r.string(len, "name");
    if (!seen.insert(name).second) {
      throw DuplicateNameError(r.context() + ": duplicate parameter name '" + name + "'");
    }
    const auto ndim = r.u8("ndim");
    if (ndim == 0) throw FormatError(r.context() + ": parameter '" + name + "' has zero dimensions");
    Shape shape;
    std::uint64_t n = 1;
    for (int d = 0; d < ndim; ++d) {
      const auto dim = r.u32("dims");
      if (dim == 0) throw FormatError(r.context() + ": parameter '" + name + "' has a zero-sized dimension");
      n *= dim;
      if (n > kMaxElements) throw DimensionOverflowError(r.context() + ": parameter '" + name + "' is too large");
      shape.push_back(dim);
    }
    Tensor t(shape);
    r.f32_array(t.data(), "payload");
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParamSet& params, const AdamState* adam) {
  detail::ByteWriter w;
  w.tag(kMagic);
  w.u8(kVersion);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params) write_entry(w, e.name, e.tensor);
  if (adam) {
    if (adam->names.size() != params.size()) throw SchemaError("optimizer state does not match parameters");
    w.tag(kAdamMagic);
    w.u8(kVersion);
    w.u64(adam->step);
    w.f32(adam->options.lr);
    w.f32(adam->options.beta1);
    w.f32(adam->options.beta2);
    w.f32(adam->options.eps);
    w.u32(static_cast<std::uint32_t>(2 * adam->names.size()));
    for (std::size_t i = 0; i < adam->names.size(); ++i) {
      write_entry(w, adam->names[i] + "/m", adam->m[i]);
      write_entry(w, adam->names[i] + "/v", adam->v[i]);
    }
  }
  return std::move(w.buffer());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  r.expect_tag(kMagic);
  const auto version = r.u8("version");
  if (version != kVersion) throw VersionError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  for (auto& [name, t] : read_entries(r)) ckpt.params.add(name, t);

  if (!r.at_end()) {
    if (!r.peek_tag(kAdamMagic)) {
      throw TrailingDataError("checkpoint: " + std::to_string(r.remaining()) + " unexpected trailing bytes");
    }
    r.expect_tag(kAdamMagic);
    const auto adam_version = r.u8("optimizer version");
    if (adam_version != kVersion) {
      throw VersionError("checkpoint: unsupported optimizer block version " + std::to_string(adam_version));
    }
    AdamState state;
    state.step = r.u64("optimizer step");
    state.options.lr = r.f32("lr");
    state.options.beta1 = r.f32("beta1");
    state.options.beta2 = r.f32("beta2");
    state.options.eps = r.f32("eps");
    auto buffers = read_entries(r);
    if (buffers.size() != 2 * ckpt.params.size()) {
      throw SchemaError("checkpoint: optimizer block has " + std::to_string(buffers.size()) +
                        " buffers for " + std::to_string(ckpt.params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
      const auto& p = ckpt.params[i];
      auto& [m_name, m] = buffers[2 * i];
      auto& [v_name, v] = buffers[2 * i + 1];
      if (m_name != p.name + "/m" || v_name != p.name + "/v" || m.shape() != p.tensor.shape() ||
          v.shape() != p.tensor.shape()) {
        throw SchemaError("checkpoint: optimizer buffers for '" + p.name + "' do not match the parameter");
      }
      state.names.push_back(p.name);
      state.m.push_back(m);
      state.v.push_back(v);
    }
    if (!r.at_end()) {
      throw TrailingDataError("checkpoint: " + std::to_string(r.remaining()) + " unexpected trailing bytes");
    }
    ckpt.adam = std::move(state);
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params, const AdamState* adam) {
  detail::write_file(path, encode_checkpoint(params, adam));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(detail::read_file(path)); }

}  // namespace ctmr::nn
