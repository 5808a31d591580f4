#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "ctmr/data.hpp"
#include "ctmr/errors.hpp"

namespace ctmr::data {

namespace {

using nlohmann::json;

template <typename T>
T field(const json& j, const char* key, const std::string& context) {
  if (!j.is_object() || !j.contains(key)) throw SchemaError(context + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(context + ": field '" + key + "' has the wrong type: " + e.what());
  }
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void check_stack_shape(const Tensor& t, std::int64_t channels, const char* what, const std::string& scan) {
  if (!t.defined()) throw ShapeError(scan + ": " + what + " stack is missing");
  if (t.ndim() != 4 || t.dim(0) != channels) {
    throw ShapeError(scan + ": " + what + " stack must be [" + std::to_string(channels) + ", D, S, S], got " +
                     to_string(t.shape()));
  }
}

}  // namespace

void ScanRecord::validate() const {
  const std::string& id = scan_id;
  check_stack_shape(ctp, kCtpChannels, "CTP", id);
  check_stack_shape(dwi, 1, "DWI", id);
  check_stack_shape(mask, 1, "mask", id);
  const auto d = ctp.dim(1), h = ctp.dim(2), w = ctp.dim(3);
  if (h != w) throw ShapeError(id + ": slices must be square, got " + std::to_string(h) + "x" + std::to_string(w));
  for (const Tensor* t : {&dwi, &mask}) {
    if (t->dim(1) != d || t->dim(2) != h || t->dim(3) != w) {
      throw ShapeError(id + ": stacks disagree on (D, S, S): " + to_string(ctp.shape()) + " vs " +
                       to_string(t->shape()));
    }
  }
  if (d < kMinSlices || d > kMaxSlices) {
    throw ShapeError(id + ": slice count " + std::to_string(d) + " outside [2, 22]");
  }
  for (const Tensor* t : {&ctp, &dwi}) {
    for (float v : t->data()) {
      if (!(v >= -1.0f && v <= 1.0f)) throw ArgumentError(id + ": intensity " + std::to_string(v) + " outside [-1, 1]");
    }
  }
  for (float v : mask.data()) {
    if (v != 0.0f && v != 1.0f) throw ArgumentError(id + ": mask is not binary (value " + std::to_string(v) + ")");
  }
}

Tensor slice_of(const Tensor& stack, int z) {
  if (stack.ndim() != 4) throw ShapeError("slice_of: expected [C, D, S, S], got " + to_string(stack.shape()));
  const auto c = stack.dim(0), d = stack.dim(1), h = stack.dim(2), w = stack.dim(3);
  if (z < 0 || z >= d) throw ArgumentError("slice_of: slice " + std::to_string(z) + " outside [0, " +
                                           std::to_string(d) + ")");
  Tensor out({1, c, h, w});
  const auto plane = static_cast<std::size_t>(h * w);
  const auto src = stack.data();
  auto dst = out.data();
  for (std::int64_t ch = 0; ch < c; ++ch) {
    std::memcpy(dst.data() + ch * plane, src.data() + (ch * d + z) * plane, plane * sizeof(float));
  }
  return out;
}

Tensor stack_slices(const std::vector<Tensor>& slices) {
  if (slices.empty()) throw ArgumentError("stack_slices: no slices");
  const Shape& first = slices.front().shape();
  if (first.size() != 4 || first[0] != 1) throw ShapeError("stack_slices: expected [1, C, S, S], got " + to_string(first));
  const auto c = first[1], h = first[2], w = first[3];
  const auto d = static_cast<std::int64_t>(slices.size());
  Tensor out({c, d, h, w});
  const auto plane = static_cast<std::size_t>(h * w);
  auto dst = out.data();
  for (std::int64_t z = 0; z < d; ++z) {
    if (slices[z].shape() != first) {
      throw ShapeError("stack_slices: slice " + std::to_string(z) + " has shape " + to_string(slices[z].shape()) +
                       ", expected " + to_string(first));
    }
    const auto src = slices[z].data();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      std::memcpy(dst.data() + (ch * d + z) * plane, src.data() + ch * plane, plane * sizeof(float));
    }
  }
  return out;
}

std::vector<std::string> Manifest::subject_ids() const {
  std::vector<std::string> ids;
  for (const auto& s : subjects) ids.push_back(s.id);
  return ids;
}

std::size_t Manifest::scan_count() const {
  std::size_t n = 0;
  for (const auto& s : subjects) n += s.scans.size();
  return n;
}

std::string Manifest::subject_of(const std::string& scan_id) const {
  for (const auto& s : subjects) {
    for (const auto& scan : s.scans) {
      if (scan.id == scan_id) return s.id;
    }
  }
  throw ArgumentError("manifest has no scan '" + scan_id + "'");
}

nlohmann::json Manifest::to_json() const {
  json j;
  j["spacing_mm"] = {spacing.x, spacing.y, spacing.z};
  j["image_size"] = image_size;
  json norm = json::array();
  for (const auto& n : normalization) norm.push_back({{"channel", n.name}, {"unit", n.unit}, {"range", {n.lo, n.hi}}});
  j["normalization"] = norm;
  json subj = json::array();
  for (const auto& s : subjects) {
    json scans = json::array();
    for (const auto& scan : s.scans) {
      scans.push_back({{"id", scan.id}, {"ctp", scan.ctp}, {"dwi", scan.dwi}, {"mask", scan.mask},
                       {"slices", scan.slices}});
    }
    subj.push_back({{"id", s.id}, {"scans", scans}});
  }
  j["subjects"] = subj;
  return j;
}

Manifest Manifest::from_json(const nlohmann::json& j, std::filesystem::path root) {
  const std::string ctx = "manifest";
  Manifest m;
  m.root = std::move(root);
  const auto sp = field<std::vector<double>>(j, "spacing_mm", ctx);
  if (sp.size() != 3 || std::any_of(sp.begin(), sp.end(), [](double v) { return !(v > 0.0); })) {
    throw SchemaError("manifest: spacing_mm must hold three positive values");
  }
  m.spacing = {sp[0], sp[1], sp[2]};
  m.image_size = j.contains("image_size") ? field<int>(j, "image_size", ctx) : 0;
  if (j.contains("normalization")) {
    for (const auto& n : j.at("normalization")) {
      const auto range = field<std::vector<double>>(n, "range", ctx);
      if (range.size() != 2) throw SchemaError("manifest: normalization range must have two values");
      m.normalization.push_back(
          {field<std::string>(n, "channel", ctx), field<std::string>(n, "unit", ctx), range[0], range[1]});
    }
  }
  std::set<std::string> subject_seen, scan_seen;
  for (const auto& s : field<json>(j, "subjects", ctx)) {
    SubjectEntry subject;
    subject.id = field<std::string>(s, "id", ctx);
    if (!subject_seen.insert(subject.id).second) throw SchemaError("manifest: duplicate subject '" + subject.id + "'");
    for (const auto& sc : field<json>(s, "scans", ctx)) {
      ScanEntry scan;
      scan.ctp = field<std::string>(sc, "ctp", ctx);
      scan.dwi = field<std::string>(sc, "dwi", ctx);
      scan.mask = field<std::string>(sc, "mask", ctx);
      scan.slices = field<int>(sc, "slices", ctx);
      scan.id = sc.contains("id") ? field<std::string>(sc, "id", ctx)
                                  : subject.id + "_scan-" + std::to_string(subject.scans.size());
      if (!scan_seen.insert(scan.id).second) throw SchemaError("manifest: duplicate scan '" + scan.id + "'");
      subject.scans.push_back(std::move(scan));
    }
    m.subjects.push_back(std::move(subject));
  }
  return m;
}

void Manifest::save(const std::filesystem::path& path) const {
  const std::string text = to_json().dump(2) + "\n";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Manifest Manifest::load(const std::filesystem::path& path) {
  return from_json(read_json(path), path.parent_path());
}

ScanRecord load_scan(const Manifest& manifest, const SubjectEntry& subject, const ScanEntry& scan) {
  ScanRecord rec;
  rec.subject_id = subject.id;
  rec.scan_id = scan.id;
  rec.spacing = manifest.spacing;
  rec.ctp = read_stack(manifest.root / scan.ctp);
  rec.dwi = read_stack(manifest.root / scan.dwi);
  rec.mask = read_stack(manifest.root / scan.mask);
  rec.validate();
  if (rec.slices() != scan.slices) {
    throw ShapeError(scan.id + ": manifest records " + std::to_string(scan.slices) + " slices, stacks hold " +
                     std::to_string(rec.slices()));
  }
  if (manifest.image_size > 0 && rec.size() != manifest.image_size) {
    throw ShapeError(scan.id + ": image size " + std::to_string(rec.size()) + " differs from manifest " +
                     std::to_string(manifest.image_size));
  }
  return rec;
}

}  // namespace ctmr::data
