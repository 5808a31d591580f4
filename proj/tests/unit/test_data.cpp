#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <cstring>
#include <set>

#include "ctmr/data.hpp"
#include "ctmr/errors.hpp"
#include "ctmr/gradcheck.hpp"
#include "support/temp_dir.hpp"

using namespace ctmr;
using namespace ctmr::data;

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& b) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::vector<std::string> ids(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back("s" + std::to_string(i));
  return out;
}

// Mass-weighted centroid (x, y) of a plane given per-pixel weights.
std::pair<double, double> centroid(const std::vector<double>& w, int size) {
  double m = 0, cx = 0, cy = 0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double v = w[static_cast<std::size_t>(y) * size + x];
      m += v;
      cx += v * x;
      cy += v * y;
    }
  return {cx / m, cy / m};
}

PhantomOptions small_phantom(int subjects = 4) {
  PhantomOptions o;
  o.n_subjects = subjects;
  o.image_size = 32;
  o.min_slices = 2;
  o.max_slices = 4;
  o.seed = 21;
  return o;
}

}  // namespace

TEST_CASE("stack round-trip is bitwise") {
  testing::TempDir dir;
  const Tensor t = random_uniform({5, 4, 64, 64}, -1, 1, 3);
  write_stack(t, dir / "a.ctmr");
  Dtype dtype{};
  const Tensor back = read_stack(dir / "a.ctmr", &dtype);
  CHECK(dtype == Dtype::float32);
  CHECK(bitwise_equal(t, back));

  Tensor mask = random_uniform({1, 3, 8, 8}, 0, 1, 4);
  for (float& v : mask.data()) v = v > 0.5f ? 1.0f : 0.0f;
  write_stack(mask, dir / "m.ctmr", Dtype::uint8);
  CHECK(bitwise_equal(read_stack(dir / "m.ctmr", &dtype), mask));
  CHECK(dtype == Dtype::uint8);
  CHECK(std::filesystem::file_size(dir / "m.ctmr") == 4 + 1 + 1 + 1 + 4 * 4 + 192);
  CHECK_THROWS_AS(encode_stack(Tensor({2}, {0.5f, 1.0f}), Dtype::uint8), ArgumentError);
}

TEST_CASE("stack header layout") {
  const auto bytes = encode_stack(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}), Dtype::float32);
  REQUIRE(bytes.size() == 15 + 6 * 4);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "CTMR");
  CHECK(bytes[4] == 1);  // version
  CHECK(bytes[5] == 1);  // float32
  CHECK(bytes[6] == 2);  // ndim
  CHECK(bytes[7] == 2);
  CHECK(bytes[11] == 3);
  float first = 0;
  std::memcpy(&first, bytes.data() + 15, 4);
  CHECK(first == 1.0f);
}

TEST_CASE("corrupted stacks raise distinct errors") {
  const auto good = encode_stack(random_uniform({2, 3, 4}, -1, 1, 1), Dtype::float32);
  auto magic = good;
  magic[1] = 'X';
  CHECK_THROWS_AS(decode_stack(magic), BadMagicError);
  auto version = good;
  version[4] = 2;
  CHECK_THROWS_AS(decode_stack(version), VersionError);
  auto dtype = good;
  dtype[5] = 7;
  CHECK_THROWS_AS(decode_stack(dtype), DtypeError);
  auto overflow = good;
  for (int i = 7; i < 19; ++i) overflow[i] = 0xff;
  CHECK_THROWS_AS(decode_stack(overflow), DimensionOverflowError);
  const std::vector<std::uint8_t> truncated(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(good.size() / 2));
  CHECK_THROWS_AS(decode_stack(truncated), TruncatedError);
  auto trailing = good;
  trailing.push_back(1);
  CHECK_THROWS_AS(decode_stack(trailing), TrailingDataError);

  testing::TempDir dir;
  write_bytes(dir / "t.ctmr", truncated);
  CHECK_THROWS_AS(read_stack(dir / "t.ctmr"), TruncatedError);
  CHECK_THROWS_AS(read_stack(dir / "missing.ctmr"), IoError);
}

TEST_CASE("kfold_by_subject partitions subjects") {
  const auto split = kfold_by_subject(ids(10), 5, 3);
  REQUIRE(split.fold_count() == 5);
  std::set<std::string> all;
  for (int k = 0; k < 5; ++k) {
    CHECK(split.test_subjects(k).size() == 2);
    for (const auto& s : split.test_subjects(k)) CHECK(all.insert(s).second);
    const auto train = split.train_subjects(k);
    CHECK(train.size() == 8);
    for (const auto& s : train)
      CHECK(std::find(split.test_subjects(k).begin(), split.test_subjects(k).end(), s) ==
            split.test_subjects(k).end());
  }
  CHECK(all.size() == 10);
  CHECK(split.fold_of("s3").has_value());
  CHECK_FALSE(split.fold_of("nobody").has_value());
  CHECK_NOTHROW(split.validate(ids(10)));
}

TEST_CASE("kfold sizes at 63 subjects") {
  const auto split = kfold_by_subject(ids(63), 5, 7);
  std::vector<std::size_t> sizes;
  std::set<std::string> all;
  for (int k = 0; k < 5; ++k) {
    sizes.push_back(split.test_subjects(k).size());
    all.insert(split.test_subjects(k).begin(), split.test_subjects(k).end());
  }
  CHECK(sizes == std::vector<std::size_t>{13, 13, 13, 12, 12});
  CHECK(all.size() == 63);
}

TEST_CASE("kfold is seeded and independent of input order") {
  auto a = ids(20);
  auto b = a;
  std::reverse(b.begin(), b.end());
  CHECK(kfold_by_subject(a, 4, 9).folds == kfold_by_subject(b, 4, 9).folds);
  CHECK(kfold_by_subject(a, 4, 9).folds != kfold_by_subject(a, 4, 10).folds);
  CHECK_THROWS_AS(kfold_by_subject(ids(3), 5, 1), ArgumentError);
  CHECK_THROWS_AS(kfold_by_subject({"a", "a", "b"}, 2, 1), ArgumentError);
}

TEST_CASE("split validation and file round-trip") {
  testing::TempDir dir;
  const auto split = kfold_by_subject(ids(7), 3, 2);
  split.save(dir / "s.json");
  const auto back = FoldSplit::load(dir / "s.json");
  CHECK(back.folds == split.folds);
  CHECK(back.seed == 2);
  const auto j = nlohmann::json::parse(std::ifstream(dir / "s.json"));
  CHECK(j.at("seed") == 2);
  CHECK(j.at("folds").size() == 3);
  CHECK_THROWS_AS(split.validate(ids(8)), SchemaError);
  FoldSplit overlapping = split;
  overlapping.folds[1].push_back(overlapping.folds[0][0]);
  CHECK_THROWS_AS(overlapping.validate(ids(7)), SchemaError);
}

TEST_CASE("phantom corpus is deterministic and well formed") {
  testing::TempDir dir;
  auto o = small_phantom();
  o.scans_per_subject = 3;
  o.jitter_scans = true;
  const Manifest m1 = make_phantom_corpus(o, dir / "a");
  const Manifest m2 = make_phantom_corpus(o, dir / "b");
  CHECK(read_bytes(dir / "a/manifest.json") == read_bytes(dir / "b/manifest.json"));
  for (const auto& subject : m1.subjects) {
    CHECK(subject.scans.size() >= 1);
    CHECK(subject.scans.size() <= 3);
    for (const auto& scan : subject.scans) {
      for (const auto& f : {scan.ctp, scan.dwi, scan.mask}) CHECK(read_bytes(dir / "a" / f) == read_bytes(dir / "b" / f));
      const ScanRecord rec = load_scan(m1, subject, scan);
      CHECK_NOTHROW(rec.validate());
      CHECK(rec.subject_id == subject.id);
      CHECK(rec.slices() >= 2);
      CHECK(rec.slices() <= 4);
      CHECK(rec.spacing == Spacing{1.0, 1.0, 5.0});
      const auto plane = static_cast<std::size_t>(rec.size()) * rec.size();
      const auto volume = plane * rec.slices();
      int lesion = 0;
      for (std::size_t i = 0; i < volume; ++i) {
        if (rec.mask[static_cast<std::int64_t>(i)] != 1.0f) continue;
        ++lesion;
        // Outside the brain every channel holds the background value.
        bool outside = rec.dwi[static_cast<std::int64_t>(i)] == kBackground;
        for (int c = 0; c < kCtpChannels; ++c) outside = outside && rec.ctp[static_cast<std::int64_t>(c * volume + i)] == kBackground;
        CHECK_FALSE(outside);
      }
      CHECK(lesion > 0);
    }
  }
  // A different seed gives a different corpus.
  o.seed = 22;
  make_phantom_corpus(o, dir / "c");
  CHECK(read_bytes(dir / "a/manifest.json") != read_bytes(dir / "c/manifest.json"));
}

TEST_CASE("phantom DWI contrast") {
  PhantomOptions o = small_phantom(20);
  o.image_size = 64;
  double inside = 0, outside = 0;
  std::int64_t n_in = 0, n_out = 0;
  for (int s = 0; s < 20; ++s) {
    const auto rec = make_phantom_scan(o, s, 0);
    for (std::int64_t i = 0; i < rec.mask.numel(); ++i) {
      const bool brain = rec.ctp[i] != kBackground || rec.dwi[i] != kBackground;
      if (rec.mask[i] == 1.0f) {
        inside += rec.dwi[i];
        ++n_in;
      } else if (!brain) {
        outside += rec.dwi[i];
        ++n_out;
      }
    }
  }
  REQUIRE(n_in > 0);
  REQUIRE(n_out > 0);
  CHECK(inside / n_in - outside / n_out >= 0.5);
  const PhantomContrast c;
  CHECK(c.sigma_ct > c.sigma_mr);
}

TEST_CASE("phantom option validation") {
  PhantomOptions o;
  o.image_size = 30;
  CHECK_THROWS_AS(o.validate(), ArgumentError);
  o = PhantomOptions{};
  o.max_slices = 23;
  CHECK_THROWS_AS(o.validate(), ArgumentError);
  o = PhantomOptions{};
  o.n_subjects = 0;
  CHECK_THROWS_AS(o.validate(), ArgumentError);
}

TEST_CASE("manifest round-trip preserves structure") {
  testing::TempDir dir;
  auto o = small_phantom(3);
  o.scans_per_subject = 2;
  const Manifest m = make_phantom_corpus(o, dir.path());
  const Manifest back = Manifest::load(dir / "manifest.json");
  REQUIRE(back.subjects.size() == m.subjects.size());
  for (std::size_t i = 0; i < m.subjects.size(); ++i) {
    CHECK(back.subjects[i].id == m.subjects[i].id);
    REQUIRE(back.subjects[i].scans.size() == 2);
    for (std::size_t k = 0; k < 2; ++k) {
      CHECK(back.subjects[i].scans[k].id == m.subjects[i].scans[k].id);
      CHECK(back.subjects[i].scans[k].slices == m.subjects[i].scans[k].slices);
      CHECK(back.subjects[i].scans[k].ctp == m.subjects[i].scans[k].ctp);
    }
  }
  CHECK(back.spacing == m.spacing);
  CHECK(back.to_json() == m.to_json());
  CHECK(m.scan_count() == 6);
  CHECK(m.subject_of(m.subjects[1].scans[1].id) == m.subjects[1].id);
  const auto j = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
  CHECK(j.at("spacing_mm") == nlohmann::json::array({1.0, 1.0, 5.0}));
  CHECK(j.at("subjects")[0].at("scans")[0].contains("ctp"));
  CHECK(j.at("subjects")[0].at("scans")[0].contains("slices"));

  // A record that disagrees with the manifest is a load-time error.
  Manifest wrong = back;
  wrong.subjects[0].scans[0].slices += 1;
  CHECK_THROWS_AS(load_scan(wrong, wrong.subjects[0], wrong.subjects[0].scans[0]), ShapeError);
  nlohmann::json broken = m.to_json();
  broken.erase("subjects");
  CHECK_THROWS_AS(Manifest::from_json(broken, dir.path()), SchemaError);
}

TEST_CASE("scan records validate their invariants") {
  auto rec = make_phantom_scan(small_phantom(), 0, 0);
  CHECK_NOTHROW(rec.validate());
  auto nonbinary = rec;
  nonbinary.mask = rec.mask.clone();
  nonbinary.mask.data()[0] = 0.5f;
  CHECK_THROWS_AS(nonbinary.validate(), ArgumentError);
  auto bright = rec;
  bright.dwi = rec.dwi.clone();
  bright.dwi.data()[0] = 1.5f;
  CHECK_THROWS_AS(bright.validate(), ArgumentError);
  auto mismatched = rec;
  mismatched.dwi = Tensor::zeros({1, rec.slices(), 16, 16});
  CHECK_THROWS_AS(mismatched.validate(), ShapeError);
}

TEST_CASE("zero-width augmentation is the identity") {
  const Tensor ch = random_uniform({5, 32, 32}, -1, 1, 1);
  Tensor mask = random_uniform({1, 32, 32}, 0, 1, 2);
  for (float& v : mask.data()) v = v > 0.5f ? 1.0f : 0.0f;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto [c, m] = affine_augment(ch, mask, AugmentRanges::none(), seed);
    CHECK(bitwise_equal(c, ch));
    CHECK(bitwise_equal(m, mask));
  }
  AugmentRanges bad;
  bad.rotation_deg = 50;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = AugmentRanges{};
  bad.translation_frac = 0.6;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = AugmentRanges{};
  bad.scale_lo = 0.4;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
}

TEST_CASE("sampled transforms respect the ranges") {
  const AugmentRanges r;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto p = sample_affine(r, 64, seed);
    CHECK(std::abs(p.rotation_deg) <= 10.0);
    CHECK(std::abs(p.tx) <= 6.4);
    CHECK(std::abs(p.ty) <= 6.4);
    CHECK(p.scale >= 0.9);
    CHECK(p.scale <= 1.1);
  }
}

TEST_CASE("augmentation moves channels and mask together") {
  const int s = 64;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    // A blob away from the border; each channel holds the same picture.
    Tensor mask = Tensor::zeros({1, s, s});
    const double bx = 26 + static_cast<double>(seed % 5) * 2, by = 30 - static_cast<double>(seed % 3) * 2;
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        if ((x - bx) * (x - bx) / 64.0 + (y - by) * (y - by) / 36.0 <= 1.0) mask.data()[y * s + x] = 1.0f;
    Tensor ch({3, s, s});
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < s * s; ++i) ch.data()[c * s * s + i] = 2.0f * mask[i] - 1.0f;
    const auto [c2, m2] = affine_augment(ch, mask, AugmentRanges{}, seed);
    std::vector<double> wm(s * s), wc(s * s), w0(s * s);
    for (int i = 0; i < s * s; ++i) {
      CHECK((m2[i] == 0.0f || m2[i] == 1.0f));
      wm[i] = m2[i];
      wc[i] = c2[i] + 1.0;
      w0[i] = mask[i];
      CHECK(c2[i] == c2[s * s + i]);
      CHECK(c2[i] == c2[2 * s * s + i]);
    }
    const auto before = centroid(w0, s);
    const auto am = centroid(wm, s);
    const auto ac = centroid(wc, s);
    const double dmx = am.first - before.first, dmy = am.second - before.second;
    const double dcx = ac.first - before.first, dcy = ac.second - before.second;
    CHECK(std::hypot(dmx - dcx, dmy - dcy) <= 1.0);
  }
}

TEST_CASE("out-of-field pixels take the background value") {
  const Tensor ch = Tensor::full({1, 16, 16}, 0.5f);
  AffineParams p;
  p.tx = 8.0;
  const auto [c, m] = apply_affine(ch, Tensor::zeros({1, 16, 16}), p);
  int background = 0;
  for (float v : c.data()) background += v == kBackground ? 1 : 0;
  CHECK(background >= 16 * 7);
  CHECK(c[15 * 16 + 15] == 0.5f);
}
