#pragma once

#include "tcseg/deform.hpp"
#include "tcseg/graph.hpp"
#include "tcseg/model.hpp"
#include "tcseg/warp.hpp"

#include <optional>
#include <vector>

namespace tcseg {

inline constexpr double kIouEpsilon = 1e-8;

/// Soft IOU per class: sum(y * p) / max(sum(y + (1 - y) p), eps), with the
/// pixel sums running over every item and pixel of the tensors.
struct IouResult {
  std::vector<double> per_class;
  double mean = 0.0;
};

/// Throws std::invalid_argument if a value lies outside [0, 1] or shapes differ.
IouResult soft_iou(const Tensor& target, const Tensor& pred);

/// 1 - mean soft IOU.
double supervised_term(const Tensor& target, const Tensor& pred);
/// 1 - mean soft IOU with the warped branch-1 prediction in the target role.
double consistency_term(const Tensor& warped_first, const Tensor& second);

/// Per-item, per-class soft IOU node of shape (b, c, 1, 1).
NodeId soft_iou_node(Graph& g, NodeId target, NodeId pred, double eps = kIouEpsilon);

/// (1, n_classes, h, w) indicator planes.
Tensor one_hot(const LabelMap& labels, std::size_t n_classes);

struct BatchItem {
  Map2d image;
  std::optional<LabelMap> labels;
  TransformPair t1;
  TransformPair t2;
};

struct Batch {
  std::vector<BatchItem> items;
  std::size_t labeled_count() const;
};

struct LossReport {
  double l_sup = 0.0;
  double l_cons = 0.0;
  double total = 0.0;
  std::vector<double> per_class_iou;
};

struct ObjectiveOptions {
  double lambda = 1.0;
  /// false drops the consistency term from the optimised total (baseline);
  /// l_cons is still evaluated for reporting.
  bool use_consistency = true;
  bool require_supervision = true;
  WarpGradient warp_gradient = WarpGradient::ScatterAdd;
};

/// The whole differentiable mini-batch objective for one step.
struct BatchObjective {
  Graph graph;
  std::vector<NodeId> params;
  NodeId l_sup = 0;
  NodeId l_cons = 0;
  NodeId total = 0;
  NodeId branch1 = 0;  // f(t1(x)), labeled items first
  NodeId branch2 = 0;  // f(t2(x))
  std::size_t labeled = 0;
  LossReport report;
};

/// l_sup = 1/(2|B_l|) sum_{B_l} [S(t1(y), f(t1(x))) + S(t2(y), f(t2(x)))]
/// l_cons = 1/|B| sum_B C(warp_{t2 o t1^-1}(f(t1(x))), f(t2(x)))
/// total = l_sup + lambda * l_cons
/// Labeled items are moved to the front of the batch.
BatchObjective batch_loss(const Batch& batch, const Network& net, const ObjectiveOptions& opts);

}  // namespace tcseg
