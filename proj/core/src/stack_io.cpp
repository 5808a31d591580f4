#include <cmath>
#include <fstream>
#include <iterator>

#include "binary_io.hpp"
#include "ctmr/data.hpp"
#include "ctmr/errors.hpp"

namespace ctmr {

namespace detail {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  // Written next to the target then renamed, so readers never see a half file.
  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

}  // namespace detail

namespace data {

namespace {

constexpr std::string_view kMagic = "CTMR";
constexpr std::uint8_t kVersion = 1;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

}  // namespace

std::vector<std::uint8_t> encode_stack(const Tensor& tensor, Dtype dtype) {
  if (tensor.ndim() > 255) throw ArgumentError("stack: too many dimensions");
  detail::ByteWriter w;
  w.tag(kMagic);
  w.u8(kVersion);
  w.u8(static_cast<std::uint8_t>(dtype));
  w.u8(static_cast<std::uint8_t>(tensor.ndim()));
  for (auto d : tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
  switch (dtype) {
    case Dtype::float32:
      w.f32_array(tensor.data());
      break;
    case Dtype::uint8:
      for (float v : tensor.data()) {
        if (!(v >= 0.0f && v <= 255.0f) || v != std::floor(v)) {
          throw ArgumentError("stack: value " + std::to_string(v) + " cannot be stored as uint8");
        }
        w.u8(static_cast<std::uint8_t>(v));
      }
      break;
    default:
      throw DtypeError("stack: unknown dtype code " + std::to_string(static_cast<int>(dtype)));
  }
  return std::move(w.buffer());
}

Tensor decode_stack(std::span<const std::uint8_t> bytes, Dtype* dtype_out) {
  detail::ByteReader r(bytes, "stack");
  r.expect_tag(kMagic);
  const auto version = r.u8("version");
  if (version != kVersion) throw VersionError("stack: unsupported version " + std::to_string(version));
  const auto code = r.u8("dtype");
  if (code != static_cast<std::uint8_t>(Dtype::float32) && code != static_cast<std::uint8_t>(Dtype::uint8)) {
    throw DtypeError("stack: unknown dtype code " + std::to_string(code));
  }
  const auto dtype = static_cast<Dtype>(code);
  const auto ndim = r.u8("ndim");
  if (ndim == 0) throw FormatError("stack: zero-dimensional payload");
  Shape shape;
  std::uint64_t n = 1;
  for (int i = 0; i < ndim; ++i) {
    const auto d = r.u32("dims");
    if (d == 0) throw FormatError("stack: zero-sized dimension");
    n *= d;
    if (n > kMaxElements) throw DimensionOverflowError("stack: element count overflows the format limit");
    shape.push_back(d);
  }
  Tensor t(shape);
  if (dtype == Dtype::float32) {
    r.f32_array(t.data(), "payload");
  } else {
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(n));
    r.u8_array(raw, "payload");
    auto out = t.data();
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i];
  }
  if (!r.at_end()) throw TrailingDataError("stack: " + std::to_string(r.remaining()) + " unexpected trailing bytes");
  if (dtype_out) *dtype_out = dtype;
  return t;
}

void write_stack(const Tensor& tensor, const std::filesystem::path& path, Dtype dtype) {
  detail::write_file(path, encode_stack(tensor, dtype));
}

Tensor read_stack(const std::filesystem::path& path, Dtype* dtype_out) {
  const auto bytes = detail::read_file(path);
  try {
    return decode_stack(bytes, dtype_out);
  } catch (const FormatError& e) {
    // Keep the concrete type, add the file name.
    const std::string msg = path.string() + ": " + e.what();
    if (dynamic_cast<const TruncatedError*>(&e)) throw TruncatedError(msg);
    if (dynamic_cast<const BadMagicError*>(&e)) throw BadMagicError(msg);
    if (dynamic_cast<const VersionError*>(&e)) throw VersionError(msg);
    if (dynamic_cast<const DtypeError*>(&e)) throw DtypeError(msg);
    if (dynamic_cast<const DimensionOverflowError*>(&e)) throw DimensionOverflowError(msg);
    if (dynamic_cast<const TrailingDataError*>(&e)) throw TrailingDataError(msg);
    throw FormatError(msg);
  }
}

}  // namespace data
}  // namespace ctmr
