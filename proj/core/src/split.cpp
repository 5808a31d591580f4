#include <algorithm>
#include <fstream>
#include <set>

#include "ctmr/data.hpp"
#include "ctmr/errors.hpp"
#include "ctmr/rng.hpp"

namespace ctmr::data {

const std::vector<std::string>& FoldSplit::test_subjects(int fold) const {
  if (fold < 0 || fold >= fold_count()) {
    throw ArgumentError("fold " + std::to_string(fold) + " outside [0, " + std::to_string(fold_count()) + ")");
  }
  return folds[fold];
}

std::vector<std::string> FoldSplit::train_subjects(int fold) const {
  test_subjects(fold);
  std::vector<std::string> out;
  for (int k = 0; k < fold_count(); ++k) {
    if (k != fold) out.insert(out.end(), folds[k].begin(), folds[k].end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<int> FoldSplit::fold_of(const std::string& subject_id) const {
  for (int k = 0; k < fold_count(); ++k) {
    if (std::find(folds[k].begin(), folds[k].end(), subject_id) != folds[k].end()) return k;
  }
  return std::nullopt;
}

void FoldSplit::validate(const std::vector<std::string>& subjects) const {
  if (folds.empty()) throw SchemaError("split has no folds");
  std::set<std::string> seen;
  for (int k = 0; k < fold_count(); ++k) {
    if (folds[k].empty()) throw SchemaError("fold " + std::to_string(k) + " has no test subjects");
    for (const auto& id : folds[k]) {
      if (!seen.insert(id).second) throw SchemaError("subject '" + id + "' appears in more than one test fold");
    }
  }
  const std::set<std::string> expected(subjects.begin(), subjects.end());
  for (const auto& id : expected) {
    if (!seen.count(id)) throw SchemaError("subject '" + id + "' has no fold assignment");
  }
  for (const auto& id : seen) {
    if (!expected.count(id)) throw SchemaError("split names unknown subject '" + id + "'");
  }
}

nlohmann::json FoldSplit::to_json() const { return {{"seed", seed}, {"folds", folds}}; }

FoldSplit FoldSplit::from_json(const nlohmann::json& j) {
  FoldSplit s;
  try {
    s.seed = j.at("seed").get<std::uint64_t>();
    s.folds = j.at("folds").get<std::vector<std::vector<std::string>>>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("split file: ") + e.what());
  }
  return s;
}

void FoldSplit::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << to_json().dump(2) << "\n";
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

FoldSplit FoldSplit::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

FoldSplit kfold_by_subject(std::vector<std::string> subject_ids, int folds, std::uint64_t seed) {
  if (folds < 2) throw ArgumentError("need at least 2 folds, got " + std::to_string(folds));
  std::sort(subject_ids.begin(), subject_ids.end());
  if (std::adjacent_find(subject_ids.begin(), subject_ids.end()) != subject_ids.end()) {
    throw ArgumentError("subject ids must be unique");
  }
  const int n = static_cast<int>(subject_ids.size());
  if (n < folds) {
    throw ArgumentError("cannot split " + std::to_string(n) + " subjects into " + std::to_string(folds) + " folds");
  }
  Rng rng(derive_seed(seed, "kfold"));
  std::shuffle(subject_ids.begin(), subject_ids.end(), rng.engine());

  FoldSplit split;
  split.seed = seed;
  split.folds.resize(folds);
  int pos = 0;
  for (int k = 0; k < folds; ++k) {
    const int size = n / folds + (k < n % folds ? 1 : 0);
    split.folds[k].assign(subject_ids.begin() + pos, subject_ids.begin() + pos + size);
    std::sort(split.folds[k].begin(), split.folds[k].end());
    pos += size;
  }
  return split;
}

}  // namespace ctmr::data
