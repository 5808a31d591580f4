#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctmr/geometry.hpp"
#include "ctmr/tensor.hpp"

namespace ctmr::data {

inline constexpr int kCtpChannels = 5;
inline constexpr const char* kCtpChannelNames[kCtpChannels] = {"CT", "CBF", "CBV", "MTT", "Tmax"};

// ---------------------------------------------------------------------------
// Stack files

enum class Dtype : std::uint8_t { float32 = 1, uint8 = 2 };

std::vector<std::uint8_t> encode_stack(const Tensor& tensor, Dtype dtype);
Tensor decode_stack(std::span<const std::uint8_t> bytes, Dtype* dtype_out = nullptr);

// uint8 stacks must hold exact integers in [0, 255] (masks hold {0, 1}).
void write_stack(const Tensor& tensor, const std::filesystem::path& path, Dtype dtype = Dtype::float32);
Tensor read_stack(const std::filesystem::path& path, Dtype* dtype_out = nullptr);

// ---------------------------------------------------------------------------
// Scans and manifest

/// One subject scan. ctp is [5, D, S, S] (CT, CBF, CBV, MTT, Tmax); dwi and
/// mask are [1, D, S, S]. Intensities are normalized to [-1, 1]; the mask is
/// strictly binary.
struct ScanRecord {
  std::string subject_id;
  std::string scan_id;
  Tensor ctp;
  Tensor dwi;
  Tensor mask;
  Spacing spacing;

  int slices() const { return static_cast<int>(ctp.dim(1)); }
  int size() const { return static_cast<int>(ctp.dim(2)); }
  // Throws ShapeError / ArgumentError on any invariant violation.
  void validate() const;
};

inline constexpr int kMinSlices = 2;
inline constexpr int kMaxSlices = 22;

// [C, D, S, S] stack -> [1, C, S, S] slice.
Tensor slice_of(const Tensor& stack, int z);
// Stacks [1, C, S, S] slices back into [C, D, S, S].
Tensor stack_slices(const std::vector<Tensor>& slices);

// Fixed affine map from a nominal physical range onto [-1, 1].
struct ChannelNormalization {
  std::string name;
  std::string unit;
  double lo = 0.0;
  double hi = 1.0;
};

struct ScanEntry {
  std::string id;
  std::string ctp;   // paths relative to the manifest directory
  std::string dwi;
  std::string mask;
  int slices = 0;
};

struct SubjectEntry {
  std::string id;
  std::vector<ScanEntry> scans;
};

struct Manifest {
  Spacing spacing;
  int image_size = 0;
  std::vector<ChannelNormalization> normalization;
  std::vector<SubjectEntry> subjects;
  std::filesystem::path root;  // directory the relative paths resolve against

  std::vector<std::string> subject_ids() const;
  std::size_t scan_count() const;
  // Scan id -> subject id.
  std::string subject_of(const std::string& scan_id) const;

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j, std::filesystem::path root);
  void save(const std::filesystem::path& path) const;
  static Manifest load(const std::filesystem::path& path);
};

ScanRecord load_scan(const Manifest& manifest, const SubjectEntry& subject, const ScanEntry& scan);

// ---------------------------------------------------------------------------
// Synthetic stroke phantoms

struct PhantomContrast {
  double ct_lesion = 0.15;   // hypodense offset on CT
  double dwi_lesion = 0.8;   // hyperintense offset on DWI
  double sigma_ct = 0.10;    // noise on CT-derived channels
  double sigma_mr = 0.03;    // noise on DWI
  double cbf_factor = -0.45;
  double cbv_factor = -0.30;
  double mtt_factor = 0.35;
  double tmax_factor = 0.50;
};

struct PhantomOptions {
  int n_subjects = 10;
  int scans_per_subject = 1;
  // When set, each subject gets a uniform 1..scans_per_subject scans.
  bool jitter_scans = false;
  int image_size = 64;
  int min_slices = kMinSlices;
  int max_slices = kMaxSlices;
  std::uint64_t seed = 1;
  Spacing spacing;
  PhantomContrast contrast;

  void validate() const;
};

// Subject id for index i ("subj-000", ...).
std::string phantom_subject_id(int index);
int phantom_scan_count(const PhantomOptions& options, int subject_index);

/// One phantom scan; a pure function of (options, subject, scan).
ScanRecord make_phantom_scan(const PhantomOptions& options, int subject_index, int scan_index);

/// Writes every scan as stack files plus manifest.json into out_dir.
Manifest make_phantom_corpus(const PhantomOptions& options, const std::filesystem::path& out_dir);

std::vector<ChannelNormalization> default_normalization();

// ---------------------------------------------------------------------------
// By-subject K-fold split

struct FoldSplit {
  std::uint64_t seed = 0;
  std::vector<std::vector<std::string>> folds;  // test subjects per fold

  int fold_count() const { return static_cast<int>(folds.size()); }
  const std::vector<std::string>& test_subjects(int fold) const;
  std::vector<std::string> train_subjects(int fold) const;
  // Fold whose test set holds the subject, or nullopt.
  std::optional<int> fold_of(const std::string& subject_id) const;

  // Folds are pairwise disjoint and cover exactly `subjects`.
  void validate(const std::vector<std::string>& subjects) const;

  nlohmann::json to_json() const;
  static FoldSplit from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static FoldSplit load(const std::filesystem::path& path);
};

/// Shuffles subjects by seed and deals them into K test folds whose sizes
/// differ by at most one (the first n % K folds get the extra subject).
FoldSplit kfold_by_subject(std::vector<std::string> subject_ids, int folds, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Affine augmentation

struct AugmentRanges {
  double rotation_deg = 10.0;      // uniform in [-r, r]
  double translation_frac = 0.10;  // per axis, fraction of image size
  double scale_lo = 0.9;
  double scale_hi = 1.1;

  static AugmentRanges none() { return {0.0, 0.0, 1.0, 1.0}; }
  void validate() const;
};

struct AffineParams {
  double rotation_deg = 0.0;
  double tx = 0.0;  // pixels
  double ty = 0.0;
  double scale = 1.0;

  bool is_identity() const { return rotation_deg == 0.0 && tx == 0.0 && ty == 0.0 && scale == 1.0; }
};

// Background value for out-of-field image pixels.
inline constexpr float kBackground = -1.0f;

AffineParams sample_affine(const AugmentRanges& ranges, int image_size, std::uint64_t seed);

/// Applies one transform to every channel ([C, S, S], bilinear, fill -1)
/// and to the mask ([1, S, S], nearest neighbour, fill 0). The mask may be
/// undefined.
std::pair<Tensor, Tensor> apply_affine(const Tensor& channels, const Tensor& mask, const AffineParams& params);

std::pair<Tensor, Tensor> affine_augment(const Tensor& channels, const Tensor& mask, const AugmentRanges& ranges,
                                         std::uint64_t seed);

}  // namespace ctmr::data
