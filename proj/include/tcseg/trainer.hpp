#pragma once

#include "tcseg/losses.hpp"
#include "tcseg/model.hpp"
#include "tcseg/synthdata.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tcseg {

enum class Regime { Baseline, SupTC, SemiTC, SemiTCPlus };

/// "baseline", "suptc", "semitc", "semitc+"
std::string regime_name(Regime r);
/// Throws UsageError for unknown names.
Regime parse_regime(std::string_view name);
bool is_semi_supervised(Regime r);

/// Images the regime may use without labels for a given labeled subset:
/// none for the supervised regimes, train minus the subset for SemiTC, and
/// additionally every validation and test image for SemiTC+.
ImagePool unlabeled_pool(const Dataset& data, Regime r, std::size_t labeled_size);

struct AdadeltaState {
  double rho = 0.95;
  double epsilon = 1e-7;
  std::vector<Eigen::ArrayXd> sq_grad;    // E[g^2]
  std::vector<Eigen::ArrayXd> sq_update;  // E[dx^2]
};

AdadeltaState adadelta_init(const std::vector<Tensor>& params, double rho = 0.95, double epsilon = 1e-7);

/// E[g^2] <- rho E[g^2] + (1-rho) g^2
/// dx = -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
/// E[dx^2] <- rho E[dx^2] + (1-rho) dx^2;  p <- p + lr dx
/// Throws NumericalError on a non-finite gradient, leaving params and state untouched.
void adadelta_step(AdadeltaState& state, std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                   double learning_rate = 1.0);

/// Endless stream of mini-batches. Each pool is visited in a reshuffled order
/// per pass; every drawn item gets fresh t1, t2.
class BatchStream {
 public:
  BatchStream(Regime regime, LabeledPool labeled, ImagePool unlabeled, std::size_t batch_size,
              DeformParams deform, std::uint64_t seed);

  Batch next();
  const std::vector<std::size_t>& last_labeled_ids() const { return last_labeled_; }
  const std::vector<std::size_t>& last_unlabeled_ids() const { return last_unlabeled_; }

 private:
  struct Cycle {
    std::size_t n = 0;
    std::vector<std::size_t> order;
    std::size_t pos = 0;
    Rng rng;
    std::size_t next();
  };

  Regime regime_;
  LabeledPool labeled_;
  ImagePool unlabeled_;
  std::size_t labeled_per_batch_;
  std::size_t unlabeled_per_batch_;
  DeformParams deform_;
  Cycle labeled_cycle_;
  Cycle unlabeled_cycle_;
  Rng transform_rng_;
  std::vector<std::size_t> last_labeled_, last_unlabeled_;
};

struct StageOptions {
  std::size_t batch_size = 8;
  std::size_t max_epochs = 20;
  std::size_t steps_per_epoch = 10;
  /// Epochs without a validation improvement before stopping.
  std::size_t patience = 4;
  double lambda = 1.0;
  double rho = 0.95;
  double epsilon = 1e-7;
  double learning_rate = 1.0;
  WarpGradient warp_gradient = WarpGradient::ScatterAdd;
  DeformParams deform;
  /// Where the last finite parameters are written if training diverges.
  std::filesystem::path failure_checkpoint;
};

struct LogRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double l_sup = 0.0;
  double l_cons = 0.0;
  double total = 0.0;
  std::optional<double> val_miou;  // set on the last step of an epoch
  std::vector<double> per_class_iou;
};

struct StageResult {
  Network best;
  double best_val_miou = 0.0;
  std::size_t best_epoch = 0;  // 0 = the initial network was never beaten
  std::size_t epochs_run = 0;
  std::vector<LogRow> log;
};

/// Trains `init` under the regime with early stopping on validation mIOU
/// (argmax predictions) and returns the best network seen, including the
/// initial one.
StageResult train_stage(const Network& init, Regime regime, const LabeledPool& labeled, const ImagePool& unlabeled,
                        const LabeledPool& val, const StageOptions& opts, std::uint64_t seed);

/// Mean over images of the structure-class mean hard IOU of argmax predictions.
double validation_miou(const Network& net, const LabeledPool& pool, std::size_t chunk = 16);

/// Mean consistency loss over the pool with transform draws fixed by `seed`.
double validation_consistency(const Network& net, const ImagePool& pool, const DeformParams& deform,
                              std::uint64_t seed, std::size_t chunk = 8);

Tensor stack_images(const std::vector<const Map2d*>& images);

// step,epoch,l_sup,l_cons,total,val_miou,iou_c0..iou_c<C-1>
void write_log_csv(std::ostream& os, const std::vector<LogRow>& rows, std::size_t n_classes);

}  // namespace tcseg
