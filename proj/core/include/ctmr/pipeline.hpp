#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctmr/cgan.hpp"
#include "ctmr/data.hpp"
#include "ctmr/fcn.hpp"
#include "ctmr/metrics.hpp"
#include "ctmr/nn.hpp"

namespace ctmr::pipeline {

struct ExperimentConfig {
  std::filesystem::path manifest;
  std::filesystem::path split;
  std::filesystem::path out_root;
  int image_size = 0;  // 0: take it from the manifest
  int epochs_cgan = 30;
  int epochs_fcn = 30;
  float lambda = 100.0f;
  nn::AdamOptions adam;
  std::uint64_t seed = 1;
  cgan::GeneratorConfig generator = cgan::GeneratorConfig::desk();
  cgan::DiscriminatorConfig discriminator;
  bool genmr_dropout = true;  // dropout stays active when producing derived MR
  fcn::FcnConfig fcn;         // mode and image size are set per run
  data::AugmentRanges augment;
  bool unit_spacing = false;  // distances in voxel units instead of mm
  int jobs = 1;               // folds processed concurrently

  // Referenced files must exist; numeric fields must be in range.
  void validate() const;

  // Flat dotted keys ("cgan.lambda", "fcn.epochs", ...).
  nlohmann::json to_json() const;
  // Applies a flat object of dotted keys; unknown keys are ArgumentError.
  void apply_json(const nlohmann::json& j);
  static std::vector<std::string> keys();
};

// Emits one human-readable progress line.
using ProgressFn = std::function<void(const std::string&)>;

/// Manifest, split and derived facts shared by every stage.
struct Experiment {
  ExperimentConfig config;
  data::Manifest manifest;
  data::FoldSplit split;
  int image_size = 0;

  // Scans whose subject is in fold k's test / train set, in manifest order.
  std::vector<const data::ScanEntry*> test_scans(int fold) const;
  std::vector<const data::ScanEntry*> train_scans(int fold) const;
  const data::SubjectEntry& subject_of_scan(const data::ScanEntry& scan) const;
  data::ScanRecord load(const data::ScanEntry& scan) const;
  // Fold whose test set holds the scan's subject.
  int fold_of_scan(const data::ScanEntry& scan) const;

  std::filesystem::path fold_dir(int fold) const;
  std::filesystem::path genmr_path(int fold, const std::string& scan_id) const;
  std::filesystem::path pred_path(int fold, const std::string& scan_id, fcn::InputMode mode) const;
};

/// Loads and cross-checks manifest and split. Aborts when any subject lacks
/// a fold assignment or the image size disagrees.
Experiment open_experiment(const ExperimentConfig& cfg);

// Per-fold stages. Each writes its artifacts under out_root/fold_k, appends
// its events to log.jsonl and records completion in fold.json; a stage
// whose recorded outputs exist and verify is skipped.
void train_cgan_fold(const Experiment& exp, int fold, const ProgressFn& progress = {});
void generate_mr_fold(const Experiment& exp, int fold, const ProgressFn& progress = {});
void train_fcn_fold(const Experiment& exp, int fold, const ProgressFn& progress = {});
void segment_fold(const Experiment& exp, int fold, const ProgressFn& progress = {});

// Runs `stage` for the given folds (all when empty), up to cfg.jobs at once.
void for_folds(const Experiment& exp, const std::vector<int>& folds,
               const std::function<void(const Experiment&, int)>& stage);

/// CGAN training and derived-MR generation for every fold.
void run_cgan_folds(const Experiment& exp, const ProgressFn& progress = {});

struct CganSummary {
  std::vector<double> heldout_l1;    // per fold, trained generator
  std::vector<double> untrained_l1;  // per fold, generator at initialization
  double mean_heldout_l1 = 0.0;
  double mean_untrained_l1 = 0.0;
};

CganSummary summarize_cgan(const Experiment& exp);

struct Comparison {
  metrics::MetricsReport fcn;
  metrics::MetricsReport fcn_cgan;
};

// Metrics over every scan's stored prediction for one input mode.
metrics::MetricsReport evaluate_predictions(const Experiment& exp, fcn::InputMode mode);

/// Trains and applies both segmentation networks on every fold, then writes
/// report.json and report.txt into out_root.
Comparison run_segmentation_comparison(const Experiment& exp, const ProgressFn& progress = {});

// Writes report.json / report.txt from stored predictions.
Comparison write_reports(const Experiment& exp);

/// Checks that each scan has exactly one derived MR, produced by the fold
/// whose test set holds its subject, and that no fold log lists a test
/// subject among its training subjects. Returns the violations found.
std::vector<std::string> audit_provenance(const Experiment& exp);

/// Comparison grid (FCN-CGAN top, FCN bottom) for the first `count` scans
/// in manifest order, plus a real-vs-generated MR grid.
void export_figures(const Experiment& exp, const std::filesystem::path& comparison_ppm,
                    const std::filesystem::path& mr_pgm, int count = 5);

/// Every stage, reports and figures.
Comparison run_all(const Experiment& exp, const ProgressFn& progress = {});

}  // namespace ctmr::pipeline
