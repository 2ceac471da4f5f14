#include "tcseg/trainer.hpp"

#include "tcseg/errors.hpp"
#include "tcseg/eval.hpp"
#include "tcseg/format.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace tcseg {

std::string regime_name(Regime r) {
  switch (r) {
    case Regime::Baseline: return "baseline";
    case Regime::SupTC: return "suptc";
    case Regime::SemiTC: return "semitc";
    case Regime::SemiTCPlus: return "semitc+";
  }
  return "?";
}

Regime parse_regime(std::string_view name) {
  for (Regime r : {Regime::Baseline, Regime::SupTC, Regime::SemiTC, Regime::SemiTCPlus}) {
    if (regime_name(r) == name) return r;
  }
  throw UsageError("unknown regime '" + std::string(name) + "' (expected baseline, suptc, semitc, semitc+)");
}

bool is_semi_supervised(Regime r) { return r == Regime::SemiTC || r == Regime::SemiTCPlus; }

ImagePool unlabeled_pool(const Dataset& data, Regime r, std::size_t labeled_size) {
  if (!is_semi_supervised(r)) return {};
  std::vector<std::size_t> ids = data.plan.train_unlabeled(labeled_size);
  if (r == Regime::SemiTCPlus) {
    ids.insert(ids.end(), data.plan.val_ids.begin(), data.plan.val_ids.end());
    ids.insert(ids.end(), data.plan.test_ids.begin(), data.plan.test_ids.end());
    std::sort(ids.begin(), ids.end());
  }
  return image_pool(data, ids);
}

AdadeltaState adadelta_init(const std::vector<Tensor>& params, double rho, double epsilon) {
  AdadeltaState s;
  s.rho = rho;
  s.epsilon = epsilon;
  for (const Tensor& p : params) {
    s.sq_grad.push_back(Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(p.size())));
    s.sq_update.push_back(Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(p.size())));
  }
  return s;
}

void adadelta_step(AdadeltaState& state, std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                   double learning_rate) {
  if (params.size() != grads.size() || params.size() != state.sq_grad.size()) {
    throw std::invalid_argument("adadelta_step: " + std::to_string(params.size()) + " params, " +
                                std::to_string(grads.size()) + " gradients, " +
                                std::to_string(state.sq_grad.size()) + " state slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!(params[i].shape() == grads[i].shape())) {
      throw ShapeError("adadelta_step: parameter " + std::to_string(i) + " is " + params[i].shape().str() +
                       " but its gradient is " + grads[i].shape().str());
    }
    if (!grads[i].all_finite()) {
      throw NumericalError("non-finite gradient for parameter " + std::to_string(i));
    }
  }
  const double rho = state.rho, eps = state.epsilon;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = grads[i].data();
    auto& eg = state.sq_grad[i];
    auto& ed = state.sq_update[i];
    eg = rho * eg + (1.0 - rho) * g.square();
    const Eigen::ArrayXd dx = -((ed + eps).sqrt() / (eg + eps).sqrt()) * g;
    ed = rho * ed + (1.0 - rho) * dx.square();
    params[i].data() += learning_rate * dx;
  }
}

std::size_t BatchStream::Cycle::next() {
  if (pos == order.size()) {
    if (order.empty()) {
      order.resize(n);
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
    }
    std::shuffle(order.begin(), order.end(), rng);
    pos = 0;
  }
  return order[pos++];
}

BatchStream::BatchStream(Regime regime, LabeledPool labeled, ImagePool unlabeled, std::size_t batch_size,
                         DeformParams deform, std::uint64_t seed)
    : regime_(regime),
      labeled_(std::move(labeled)),
      unlabeled_(std::move(unlabeled)),
      deform_(deform),
      transform_rng_(derive_seed(seed, "transforms")) {
  if (batch_size == 0) throw UsageError("batch_size must be positive");
  if (labeled_.ids.empty()) throw UsageError("regime " + regime_name(regime) + " needs a non-empty labeled pool");
  if (is_semi_supervised(regime)) {
    if (batch_size % 2 != 0) {
      throw UsageError("batch_size must be even for " + regime_name(regime) + ", got " + std::to_string(batch_size));
    }
    if (unlabeled_.ids.empty()) {
      throw UsageError("regime " + regime_name(regime) + " needs a non-empty unlabeled pool");
    }
    labeled_per_batch_ = unlabeled_per_batch_ = batch_size / 2;
  } else {
    labeled_per_batch_ = batch_size;
    unlabeled_per_batch_ = 0;
  }
  labeled_cycle_.n = labeled_.ids.size();
  labeled_cycle_.rng.seed(derive_seed(seed, "labeled"));
  unlabeled_cycle_.n = unlabeled_.ids.size();
  unlabeled_cycle_.rng.seed(derive_seed(seed, "unlabeled"));
}

Batch BatchStream::next() {
  Batch b;
  last_labeled_.clear();
  last_unlabeled_.clear();
  const auto n = static_cast<std::size_t>(labeled_.scenes.front()->image.cols());
  for (std::size_t k = 0; k < labeled_per_batch_; ++k) {
    const std::size_t i = labeled_cycle_.next();
    last_labeled_.push_back(labeled_.ids[i]);
    const Scene& s = *labeled_.scenes[i];
    TransformPair t1 = sample_transform_pair(n, n, deform_, transform_rng_);
    TransformPair t2 = sample_transform_pair(n, n, deform_, transform_rng_);
    b.items.push_back(BatchItem{s.image, s.labels, std::move(t1), std::move(t2)});
  }
  for (std::size_t k = 0; k < unlabeled_per_batch_; ++k) {
    const std::size_t i = unlabeled_cycle_.next();
    last_unlabeled_.push_back(unlabeled_.ids[i]);
    TransformPair t1 = sample_transform_pair(n, n, deform_, transform_rng_);
    TransformPair t2 = sample_transform_pair(n, n, deform_, transform_rng_);
    b.items.push_back(BatchItem{*unlabeled_.images[i], std::nullopt, std::move(t1), std::move(t2)});
  }
  return b;
}

Tensor stack_images(const std::vector<const Map2d*>& images) {
  if (images.empty()) throw std::invalid_argument("stack_images: no images");
  const auto h = static_cast<std::size_t>(images.front()->rows()), w = static_cast<std::size_t>(images.front()->cols());
  Tensor t(Shape{images.size(), 1, h, w});
  for (std::size_t b = 0; b < images.size(); ++b) t.plane(b, 0) = *images[b];
  return t;
}

double validation_miou(const Network& net, const LabeledPool& pool, std::size_t chunk) {
  if (pool.scenes.empty()) throw UsageError("validation pool is empty");
  const std::size_t n_classes = net.config().n_classes;
  double acc = 0.0;
  for (std::size_t start = 0; start < pool.scenes.size(); start += chunk) {
    const std::size_t end = std::min(pool.scenes.size(), start + chunk);
    std::vector<const Map2d*> imgs;
    for (std::size_t i = start; i < end; ++i) imgs.push_back(&pool.scenes[i]->image);
    const Tensor probs = net.predict(stack_images(imgs));
    for (std::size_t i = start; i < end; ++i) {
      acc += mean_iou(argmax_labels(probs, i - start), pool.scenes[i]->labels, n_classes);
    }
  }
  return acc / static_cast<double>(pool.scenes.size());
}

double validation_consistency(const Network& net, const ImagePool& pool, const DeformParams& deform,
                              std::uint64_t seed, std::size_t chunk) {
  if (pool.images.empty()) throw UsageError("consistency pool is empty");
  Rng rng(derive_seed(seed, "validation-consistency"));
  const auto n = static_cast<std::size_t>(pool.images.front()->cols());
  ObjectiveOptions opts;
  opts.require_supervision = false;
  double acc = 0.0;
  for (std::size_t start = 0; start < pool.images.size(); start += chunk) {
    Batch b;
    const std::size_t end = std::min(pool.images.size(), start + chunk);
    for (std::size_t i = start; i < end; ++i) {
      TransformPair t1 = sample_transform_pair(n, n, deform, rng);
      TransformPair t2 = sample_transform_pair(n, n, deform, rng);
      b.items.push_back(BatchItem{*pool.images[i], std::nullopt, std::move(t1), std::move(t2)});
    }
    acc += batch_loss(b, net, opts).report.l_cons * static_cast<double>(end - start);
  }
  return acc / static_cast<double>(pool.images.size());
}

StageResult train_stage(const Network& init, Regime regime, const LabeledPool& labeled, const ImagePool& unlabeled,
                        const LabeledPool& val, const StageOptions& opts, std::uint64_t seed) {
  BatchStream stream(regime, labeled, unlabeled, opts.batch_size, opts.deform, seed);
  ObjectiveOptions obj;
  obj.lambda = opts.lambda;
  obj.use_consistency = regime != Regime::Baseline;
  obj.warp_gradient = opts.warp_gradient;

  Network net = init;
  AdadeltaState state = adadelta_init(net.params(), opts.rho, opts.epsilon);
  StageResult res{init, validation_miou(init, val), 0, 0, {}};
  std::size_t since_best = 0, step = 0;

  auto diverge = [&](const std::string& what) {
    if (!opts.failure_checkpoint.empty()) net.save(opts.failure_checkpoint);
    throw NumericalError(what + " at step " + std::to_string(step) + " (" + regime_name(regime) + ")" +
                         (opts.failure_checkpoint.empty() ? "" : ", last good parameters in " +
                                                                     opts.failure_checkpoint.string()));
  };

  for (std::size_t epoch = 1; epoch <= opts.max_epochs; ++epoch) {
    for (std::size_t s = 0; s < opts.steps_per_epoch; ++s) {
      ++step;
      BatchObjective o = batch_loss(stream.next(), net, obj);
      if (!std::isfinite(o.report.total)) diverge("non-finite loss");
      const Gradients grads = o.graph.backward(o.total);
      std::vector<Tensor> g;
      g.reserve(o.params.size());
      for (NodeId id : o.params) g.push_back(grads.at(id));
      try {
        adadelta_step(state, net.params(), g, opts.learning_rate);
      } catch (const NumericalError& e) {
        diverge(e.what());
      }
      res.log.push_back(LogRow{step, epoch, o.report.l_sup, o.report.l_cons, o.report.total, std::nullopt,
                               o.report.per_class_iou});
    }
    const double v = validation_miou(net, val);
    if (!res.log.empty()) res.log.back().val_miou = v;
    res.epochs_run = epoch;
    if (v > res.best_val_miou) {
      res.best_val_miou = v;
      res.best = net;
      res.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= opts.patience) {
      break;
    }
  }
  return res;
}

void write_log_csv(std::ostream& os, const std::vector<LogRow>& rows, std::size_t n_classes) {
  os << "step,epoch,l_sup,l_cons,total,val_miou";
  for (std::size_t c = 0; c < n_classes; ++c) os << ",iou_c" << c;
  os << "\n";
  for (const LogRow& r : rows) {
    os << r.step << "," << r.epoch << "," << format_double(r.l_sup) << "," << format_double(r.l_cons) << ","
       << format_double(r.total) << "," << (r.val_miou ? format_double(*r.val_miou) : std::string());
    for (std::size_t c = 0; c < n_classes; ++c) {
      os << "," << (c < r.per_class_iou.size() ? format_double(r.per_class_iou[c]) : std::string());
    }
    os << "\n";
  }
}

}  // namespace tcseg
