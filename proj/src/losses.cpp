#include "tcseg/losses.hpp"

#include <algorithm>
#include <stdexcept>

namespace tcseg {

namespace {

void check_unit_interval(const Tensor& t, const char* what) {
  if (t.size() > 0 && (t.data().minCoeff() < 0.0 || t.data().maxCoeff() > 1.0)) {
    throw std::invalid_argument(std::string(what) + ": values must lie in [0, 1]");
  }
}

}  // namespace

IouResult soft_iou(const Tensor& target, const Tensor& pred) {
  if (!(target.shape() == pred.shape())) {
    throw ShapeError("soft_iou: target " + target.shape().str() + " vs prediction " + pred.shape().str());
  }
  check_unit_interval(target, "soft_iou target");
  check_unit_interval(pred, "soft_iou prediction");
  const auto& s = target.shape();
  IouResult r;
  r.per_class.assign(s.channels(), 0.0);
  for (std::size_t c = 0; c < s.channels(); ++c) {
    double num = 0.0, den = 0.0;
    for (std::size_t b = 0; b < s.batch(); ++b) {
      const auto y = target.plane(b, c);
      const auto p = pred.plane(b, c);
      num += (y * p).sum();
      den += (y + (1.0 - y) * p).sum();
    }
    r.per_class[c] = num / std::max(den, kIouEpsilon);
  }
  if (!r.per_class.empty()) {
    double total = 0.0;
    for (double v : r.per_class) total += v;
    r.mean = total / static_cast<double>(r.per_class.size());
  }
  return r;
}

double supervised_term(const Tensor& target, const Tensor& pred) { return 1.0 - soft_iou(target, pred).mean; }

double consistency_term(const Tensor& warped_first, const Tensor& second) {
  return 1.0 - soft_iou(warped_first, second).mean;
}

NodeId soft_iou_node(Graph& g, NodeId target, NodeId pred, double eps) {
  const NodeId inter = mul(g, target, pred);
  const NodeId num = sum_spatial(g, inter);
  const NodeId den = sum_spatial(g, sub(g, add(g, target, pred), inter));
  return div_guarded(g, num, den, eps);
}

Tensor one_hot(const LabelMap& labels, std::size_t n_classes) {
  Tensor t(Shape{1, n_classes, static_cast<std::size_t>(labels.rows()), static_cast<std::size_t>(labels.cols())});
  for (std::size_t c = 0; c < n_classes; ++c) {
    t.plane(0, c) = (labels == static_cast<std::int32_t>(c)).cast<double>();
  }
  return t;
}

std::size_t Batch::labeled_count() const {
  return static_cast<std::size_t>(
      std::count_if(items.begin(), items.end(), [](const BatchItem& it) { return it.labels.has_value(); }));
}

BatchObjective batch_loss(const Batch& batch, const Network& net, const ObjectiveOptions& opts) {
  if (batch.items.empty()) throw std::invalid_argument("batch_loss: empty batch");
  const NetworkConfig& cfg = net.config();
  const std::size_t n = cfg.input_size, classes = cfg.n_classes;

  std::vector<const BatchItem*> order;
  for (const auto& it : batch.items) {
    if (it.labels) order.push_back(&it);
  }
  const std::size_t labeled = order.size();
  for (const auto& it : batch.items) {
    if (!it.labels) order.push_back(&it);
  }
  if (labeled == 0 && opts.require_supervision) {
    throw std::invalid_argument("batch_loss: no labeled items in a batch that requires supervision");
  }
  const std::size_t total_items = order.size();

  Tensor x1(Shape{total_items, 1, n, n}), x2(Shape{total_items, 1, n, n});
  Tensor y1(Shape{labeled, classes, n, n}), y2(Shape{labeled, classes, n, n});
  std::vector<WarpContext> ctxs;
  ctxs.reserve(total_items);
  for (std::size_t b = 0; b < total_items; ++b) {
    const BatchItem& it = *order[b];
    if (static_cast<std::size_t>(it.image.rows()) != n || static_cast<std::size_t>(it.image.cols()) != n) {
      throw ShapeError("batch_loss: item " + std::to_string(b) + " image is " + std::to_string(it.image.rows()) + "x" +
                       std::to_string(it.image.cols()) + ", network expects " + std::to_string(n));
    }
    x1.plane(b, 0) = apply_to_image(it.t1, it.image);
    x2.plane(b, 0) = apply_to_image(it.t2, it.image);
    if (b < labeled) {
      const Tensor h1 = one_hot(apply_to_labels(it.t1, *it.labels), classes);
      const Tensor h2 = one_hot(apply_to_labels(it.t2, *it.labels), classes);
      for (std::size_t c = 0; c < classes; ++c) {
        y1.plane(b, c) = h1.plane(0, c);
        y2.plane(b, c) = h2.plane(0, c);
      }
    }
    ctxs.push_back(make_warp_context(it.t1, it.t2, n, n));
  }

  BatchObjective obj;
  Graph& g = obj.graph;
  obj.labeled = labeled;
  obj.params = net.bind(g);
  obj.branch1 = net.forward(g, obj.params, g.constant(std::move(x1)));
  obj.branch2 = net.forward(g, obj.params, g.constant(std::move(x2)));

  const double per_class = static_cast<double>(classes);
  NodeId sup_iou1 = 0, sup_iou2 = 0;
  if (labeled > 0) {
    sup_iou1 = soft_iou_node(g, g.constant(std::move(y1)), slice_batch(g, obj.branch1, 0, labeled));
    sup_iou2 = soft_iou_node(g, g.constant(std::move(y2)), slice_batch(g, obj.branch2, 0, labeled));
    const NodeId iou_sum = add(g, sum(g, sup_iou1), sum(g, sup_iou2));
    obj.l_sup = add_scalar(g, scale(g, iou_sum, -1.0 / (2.0 * static_cast<double>(labeled) * per_class)), 1.0);
  } else {
    obj.l_sup = g.constant(Tensor::scalar(0.0));
  }

  const NodeId warped = warp(g, obj.branch1, std::move(ctxs), opts.warp_gradient);
  const NodeId cons_iou = soft_iou_node(g, warped, obj.branch2);
  obj.l_cons = add_scalar(g, scale(g, sum(g, cons_iou), -1.0 / (static_cast<double>(total_items) * per_class)), 1.0);

  obj.total = opts.use_consistency ? add(g, obj.l_sup, scale(g, obj.l_cons, opts.lambda)) : obj.l_sup;

  obj.report.l_sup = g.value(obj.l_sup).item();
  obj.report.l_cons = g.value(obj.l_cons).item();
  obj.report.total = g.value(obj.total).item();
  obj.report.per_class_iou.assign(classes, 0.0);
  if (labeled > 0) {
    const Tensor& a = g.value(sup_iou1);
    const Tensor& b = g.value(sup_iou2);
    for (std::size_t c = 0; c < classes; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < labeled; ++i) acc += a.at(i, c, 0, 0) + b.at(i, c, 0, 0);
      obj.report.per_class_iou[c] = acc / (2.0 * static_cast<double>(labeled));
    }
  } else {
    const Tensor& a = g.value(cons_iou);
    for (std::size_t c = 0; c < classes; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < total_items; ++i) acc += a.at(i, c, 0, 0);
      obj.report.per_class_iou[c] = acc / static_cast<double>(total_items);
    }
  }
  return obj;
}

}  // namespace tcseg
