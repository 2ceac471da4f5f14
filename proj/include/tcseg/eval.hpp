#pragma once

#include "tcseg/deform.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace tcseg {

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// |pred ∩ truth| / |pred ∪ truth| for one class; 1 when both are empty.
double hard_iou(const LabelMap& pred, const LabelMap& truth, std::int32_t cls);

/// Pixels of the mask with a 4-neighbour outside the mask or the image.
Mask contour(const Mask& mask);

/// Exact Euclidean distance from every pixel to the nearest `true` pixel of
/// `sites` (separable lower-envelope transform). Infinite if no sites exist.
Map2d distance_transform(const Mask& sites);

/// Symmetric mean absolute contour distance, scaled by pixel_size.
/// std::nullopt when either mask is empty.
std::optional<double> macd(const Mask& pred, const Mask& truth, double pixel_size = 1.0);

/// Keeps the largest 4-connected component of every structure class (the
/// keep[c-1] largest for class c when given; ties in raster order) and turns
/// background regions not connected to the border into their enclosing class
/// (most frequent 4-neighbour label, ties to the lower index).
LabelMap postprocess(const LabelMap& labels, const std::vector<std::size_t>& keep = {});

/// Per-pixel argmax over class channels of item b.
LabelMap argmax_labels(const Tensor& probs, std::size_t b);

struct MetricsRow {
  std::string regime;
  std::size_t labeled_size = 0;
  std::uint64_t seed = 0;
  std::vector<double> per_class_iou;                // structure classes 1..K
  std::vector<std::optional<double>> per_class_macd;
  double miou = 0.0;
};

/// Per-class means of hard IOU and MACD over a list of (prediction, truth)
/// pairs; MACD averages only defined values.
struct ImageScores {
  std::vector<double> iou;
  std::vector<std::optional<double>> macd;
};
ImageScores score_image(const LabelMap& pred, const LabelMap& truth, std::size_t n_classes, double pixel_size = 1.0);
MetricsRow summarize(std::string regime, std::size_t labeled_size, std::uint64_t seed,
                     const std::vector<ImageScores>& images, std::size_t* undefined_macd = nullptr);

double mean_iou(const LabelMap& pred, const LabelMap& truth, std::size_t n_classes);

struct TableCell {
  std::string regime;
  std::size_t labeled_size = 0;
  std::size_t n = 0;
  double miou_mean = 0.0;
  double miou_std = 0.0;  // sample standard deviation, 0 for a single seed
  std::vector<double> class_iou_mean;
  std::vector<double> class_macd_mean;
};

/// Regime order used for every table.
const std::vector<std::string>& regime_order();

/// Mean and std over seeds per (regime, labeled_size), in table order.
std::vector<TableCell> results_table(const std::vector<MetricsRow>& rows);

// columns: regime, labeled_size, seed, class, iou, macd
void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(std::istream& is);

// one row per cell: regime, labeled_size, n_seeds, miou_mean, miou_std, iou_c<k>..., macd_c<k>...
void write_aggregate_csv(std::ostream& os, const std::vector<TableCell>& cells);
/// Regimes as rows, labeled sizes as columns, cells "mean ± std"; blank where
/// missing. Returns the number of missing cells.
std::size_t write_wide_table_csv(std::ostream& os, const std::vector<TableCell>& cells);
/// x = labeled_size, y = mIOU per regime.
void write_plot_csv(std::ostream& os, const std::vector<TableCell>& cells);

}  // namespace tcseg
