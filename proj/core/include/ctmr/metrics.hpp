#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctmr/geometry.hpp"
#include "ctmr/tensor.hpp"

namespace ctmr::metrics {

/// Binary 3D mask. Built from [D, H, W] or [1, D, H, W] tensors holding only
/// 0 and 1.
struct MaskVolume {
  std::int64_t depth = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> voxels;

  static MaskVolume from_tensor(const Tensor& t, const char* what = "mask");
  std::int64_t count() const;
  bool empty() const { return count() == 0; }
  std::uint8_t at(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return voxels[static_cast<std::size_t>((z * height + y) * width + x)];
  }
};

double dice(const Tensor& pred, const Tensor& gt);
double precision(const Tensor& pred, const Tensor& gt);
double recall(const Tensor& pred, const Tensor& gt);

double dice(const MaskVolume& pred, const MaskVolume& gt);
double precision(const MaskVolume& pred, const MaskVolume& gt);
double recall(const MaskVolume& pred, const MaskVolume& gt);

// Mask voxels with at least one 6-connected neighbour outside the mask
// (positions beyond the volume count as outside).
MaskVolume boundary(const MaskVolume& mask);

struct SurfaceDistances {
  double hausdorff_mm = 0.0;
  double avg_dist_mm = 0.0;  // average symmetric surface distance
};

/// Boundary-to-boundary distances in millimetres. One empty mask yields the
/// physical volume diagonal for both values; two empty masks yield 0.
SurfaceDistances surface_distances(const MaskVolume& pred, const MaskVolume& gt, const Spacing& spacing);

double hausdorff_mm(const Tensor& pred, const Tensor& gt, const Spacing& spacing);
double avg_dist_mm(const Tensor& pred, const Tensor& gt, const Spacing& spacing);

// |count(P) - count(G)| * voxel volume, in millilitres.
double avd_ml(const Tensor& pred, const Tensor& gt, const Spacing& spacing);
double avd_ml(const MaskVolume& pred, const MaskVolume& gt, const Spacing& spacing);

/// Squared Euclidean distance (mm^2) from every voxel to the nearest set
/// voxel of `features`; +inf everywhere when `features` is empty.
std::vector<double> squared_distance_transform(const MaskVolume& features, const Spacing& spacing);

inline constexpr int kMetricCount = 6;
inline constexpr std::array<const char*, kMetricCount> kMetricKeys = {"dice",      "hausdorff_mm", "avg_dist_mm",
                                                                      "precision", "recall",       "avd_ml"};
inline constexpr std::array<const char*, kMetricCount> kMetricTitles = {
    "Dice", "Hausdorff distance (mm)", "Average distance (mm)", "Precision", "Recall", "AVD (ml)"};

struct MetricRow {
  std::string scan_id;
  double dice = 0.0;
  double hausdorff_mm = 0.0;
  double avg_dist_mm = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double avd_ml = 0.0;

  std::array<double, kMetricCount> values() const {
    return {dice, hausdorff_mm, avg_dist_mm, precision, recall, avd_ml};
  }
};

MetricRow evaluate_scan(std::string scan_id, const Tensor& pred, const Tensor& gt, const Spacing& spacing);

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample (n - 1); 0 for a single row
};

Summary summarize(const std::vector<double>& values);

struct MetricsReport {
  std::string label;  // "FCN" or "FCN-CGAN"
  std::vector<MetricRow> rows;
  std::array<Summary, kMetricCount> summary{};

  std::size_t count() const { return rows.size(); }
};

// Throws ArgumentError on an empty row set.
MetricsReport aggregate(std::string label, std::vector<MetricRow> rows);

nlohmann::json to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);

/// Aligned plain-text table: one line per metric, one "mean ± std" column
/// per configuration.
std::string format_table(const std::vector<MetricsReport>& reports);

}  // namespace ctmr::metrics
