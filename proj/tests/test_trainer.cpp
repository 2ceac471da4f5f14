#include "tcseg/errors.hpp"
#include "tcseg/trainer.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

using namespace tcseg;

namespace {

Dataset small_dataset(std::size_t n = 40, std::size_t size = 16) {
  Dataset d;
  SceneParams p;
  p.size = size;
  for (std::uint64_t i = 0; i < n; ++i) d.scenes.push_back(generate_scene(100 + i, p));
  d.plan = make_splits(n, 0, 0.5, {5, 10});
  return d;
}

NetworkConfig small_net() {
  NetworkConfig nc;
  nc.input_size = 16;
  nc.depth = 2;
  nc.base_channels = 4;
  return nc;
}

StageOptions quick_options() {
  StageOptions o;
  o.deform = DeformParams::for_image_size(16);
  o.deform.amplitude *= 0.25;
  o.max_epochs = 3;
  o.steps_per_epoch = 2;
  o.patience = 10;
  return o;
}

}  // namespace

TEST_CASE("adadelta matches a scalar recurrence") {
  std::vector<Tensor> params{Tensor(Shape{1, 1, 1, 1}, 0.3)};
  AdadeltaState st = adadelta_init(params, 0.9, 1e-4);
  double p = 0.3, eg = 0.0, ed = 0.0;
  const double gs[] = {0.5, -1.0, 2.0, 0.0, 0.25};
  for (double g : gs) {
    adadelta_step(st, params, {Tensor(Shape{1, 1, 1, 1}, g)}, 0.5);
    eg = 0.9 * eg + 0.1 * g * g;
    const double dx = -std::sqrt(ed + 1e-4) / std::sqrt(eg + 1e-4) * g;
    ed = 0.9 * ed + 0.1 * dx * dx;
    p += 0.5 * dx;
    CHECK(params[0][0] == doctest::Approx(p).epsilon(1e-14));
  }
}

TEST_CASE("adadelta: zero gradients leave parameters, steps oppose the gradient") {
  std::vector<Tensor> params{Tensor(Shape{1, 1, 2, 2}, 1.0)};
  AdadeltaState st = adadelta_init(params);
  adadelta_step(st, params, {Tensor(Shape{1, 1, 2, 2}, 0.0)});
  CHECK((params[0].data() == 1.0).all());

  Tensor g(Shape{1, 1, 2, 2});
  g[0] = 3.0;
  g[1] = -2.0;
  g[2] = 1e-3;
  g[3] = -1e-9;
  adadelta_step(st, params, {g});
  for (std::size_t i = 0; i < 4; ++i) CHECK((params[0][i] - 1.0) * g[i] < 0.0);
}

TEST_CASE("adadelta rejects non-finite gradients without touching state") {
  std::vector<Tensor> params{Tensor(Shape{1, 1, 1, 2}, 1.0), Tensor(Shape{1, 1, 1, 1}, 2.0)};
  AdadeltaState st = adadelta_init(params);
  adadelta_step(st, params, {Tensor(Shape{1, 1, 1, 2}, 0.5), Tensor(Shape{1, 1, 1, 1}, 0.5)});
  const auto before = params;
  const auto eg = st.sq_grad, ed = st.sq_update;
  Tensor bad(Shape{1, 1, 1, 1}, std::nan(""));
  CHECK_THROWS_AS(adadelta_step(st, params, {Tensor(Shape{1, 1, 1, 2}, 0.5), bad}), NumericalError);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK((params[i].data() == before[i].data()).all());
    CHECK((st.sq_grad[i] == eg[i]).all());
    CHECK((st.sq_update[i] == ed[i]).all());
  }
  CHECK_THROWS_AS(adadelta_step(st, params, {Tensor(Shape{1, 1, 1, 2}, 0.5)}), std::invalid_argument);
}

TEST_CASE("regime names round trip") {
  for (Regime r : {Regime::Baseline, Regime::SupTC, Regime::SemiTC, Regime::SemiTCPlus})
    CHECK(parse_regime(regime_name(r)) == r);
  CHECK_THROWS_AS(parse_regime("semi"), UsageError);
}

TEST_CASE("unlabeled pools respect the split") {
  const Dataset d = small_dataset();
  const auto& plan = d.plan;
  CHECK(unlabeled_pool(d, Regime::Baseline, 5).ids.empty());
  CHECK(unlabeled_pool(d, Regime::SupTC, 5).ids.empty());

  const ImagePool semi = unlabeled_pool(d, Regime::SemiTC, 5);
  const std::set<std::size_t> train(plan.train_ids.begin(), plan.train_ids.end());
  const auto lab = plan.labeled_subset(5);
  CHECK(semi.ids.size() == plan.train_ids.size() - 5);
  for (std::size_t id : semi.ids) {
    CHECK(train.count(id) == 1);
    CHECK(std::find(lab.begin(), lab.end(), id) == lab.end());
  }

  const ImagePool plus = unlabeled_pool(d, Regime::SemiTCPlus, 5);
  CHECK(plus.ids.size() == semi.ids.size() + plan.val_ids.size() + plan.test_ids.size());
  const std::set<std::size_t> plus_ids(plus.ids.begin(), plus.ids.end());
  for (std::size_t id : plan.test_ids) CHECK(plus_ids.count(id) == 1);
  for (std::size_t id : lab) CHECK(plus_ids.count(id) == 0);
}

TEST_CASE("batch composition") {
  const Dataset d = small_dataset();
  const auto lab = labeled_pool(d, d.plan.labeled_subset(5));
  const DeformParams def = quick_options().deform;

  BatchStream semi(Regime::SemiTC, lab, unlabeled_pool(d, Regime::SemiTC, 5), 8, def, 1);
  std::multiset<std::size_t> seen;
  for (int i = 0; i < 5; ++i) {
    const Batch b = semi.next();
    CHECK(b.items.size() == 8);
    CHECK(b.labeled_count() == 4);
    CHECK(semi.last_unlabeled_ids().size() == 4);
    seen.insert(semi.last_labeled_ids().begin(), semi.last_labeled_ids().end());
  }
  // 20 draws over 5 labeled scenes: every scene exactly 4 times
  for (std::size_t id : d.plan.labeled_subset(5)) CHECK(seen.count(id) == 4);

  BatchStream sup(Regime::SupTC, lab, {}, 8, def, 1);
  const Batch b = sup.next();
  CHECK(b.items.size() == 8);
  CHECK(b.labeled_count() == 8);

  CHECK_THROWS_AS(BatchStream(Regime::SemiTC, lab, unlabeled_pool(d, Regime::SemiTC, 5), 7, def, 1), UsageError);
  CHECK_THROWS_AS(BatchStream(Regime::SemiTC, lab, {}, 8, def, 1), UsageError);
  CHECK_THROWS_AS(BatchStream(Regime::Baseline, LabeledPool{}, {}, 8, def, 1), UsageError);
  CHECK_THROWS_AS(BatchStream(Regime::Baseline, lab, {}, 0, def, 1), UsageError);
}

TEST_CASE("batch streams are reproducible from their seed") {
  const Dataset d = small_dataset();
  const auto lab = labeled_pool(d, d.plan.labeled_subset(5));
  const DeformParams def = quick_options().deform;
  BatchStream a(Regime::SemiTC, lab, unlabeled_pool(d, Regime::SemiTC, 5), 4, def, 9);
  BatchStream b(Regime::SemiTC, lab, unlabeled_pool(d, Regime::SemiTC, 5), 4, def, 9);
  for (int i = 0; i < 3; ++i) {
    const Batch x = a.next(), y = b.next();
    CHECK(a.last_labeled_ids() == b.last_labeled_ids());
    CHECK(a.last_unlabeled_ids() == b.last_unlabeled_ids());
    for (std::size_t k = 0; k < x.items.size(); ++k) {
      CHECK((x.items[k].t1.field_or_zero(16, 16).dx == y.items[k].t1.field_or_zero(16, 16).dx).all());
      CHECK((x.items[k].t2.field_or_zero(16, 16).dy == y.items[k].t2.field_or_zero(16, 16).dy).all());
    }
  }
}

TEST_CASE("suptc with zero weight reproduces the baseline exactly") {
  const Dataset d = small_dataset();
  const auto lab = labeled_pool(d, d.plan.labeled_subset(5));
  const auto val = labeled_pool(d, d.plan.val_ids);
  Rng rng(3);
  const Network init = Network::build(small_net(), rng);
  StageOptions o = quick_options();
  o.lambda = 0.0;
  const StageResult base = train_stage(init, Regime::Baseline, lab, {}, val, o, 5);
  const StageResult sup = train_stage(init, Regime::SupTC, lab, {}, val, o, 5);
  REQUIRE(base.log.size() == sup.log.size());
  for (std::size_t i = 0; i < base.log.size(); ++i) CHECK(base.log[i].total == sup.log[i].total);
  CHECK(base.best_val_miou == sup.best_val_miou);
  for (std::size_t i = 0; i < base.best.params().size(); ++i)
    CHECK((base.best.params()[i].data() == sup.best.params()[i].data()).all());
}

TEST_CASE("stage training is deterministic and logs every step") {
  const Dataset d = small_dataset();
  const auto lab = labeled_pool(d, d.plan.labeled_subset(5));
  const auto val = labeled_pool(d, d.plan.val_ids);
  Rng rng(4);
  const Network init = Network::build(small_net(), rng);
  const StageOptions o = quick_options();
  const ImagePool un = unlabeled_pool(d, Regime::SemiTC, 5);
  const StageResult a = train_stage(init, Regime::SemiTC, lab, un, val, o, 8);
  const StageResult b = train_stage(init, Regime::SemiTC, lab, un, val, o, 8);
  CHECK(a.log.size() == 6);
  CHECK(a.epochs_run == 3);
  std::ostringstream sa, sb;
  write_log_csv(sa, a.log, 4);
  write_log_csv(sb, b.log, 4);
  CHECK(sa.str() == sb.str());
  CHECK(sa.str().rfind("step,epoch,l_sup,l_cons,total,val_miou,iou_c0,iou_c1,iou_c2,iou_c3\n", 0) == 0);
  std::size_t with_val = 0;
  for (const LogRow& r : a.log) with_val += r.val_miou.has_value();
  CHECK(with_val == 3);
  CHECK(a.best_val_miou >= validation_miou(init, val));
  CHECK(validation_miou(a.best, val) == a.best_val_miou);
}

TEST_CASE("early stopping honours patience") {
  const Dataset d = small_dataset();
  const auto lab = labeled_pool(d, d.plan.labeled_subset(5));
  const auto val = labeled_pool(d, d.plan.val_ids);
  Rng rng(4);
  const Network init = Network::build(small_net(), rng);
  StageOptions o = quick_options();
  o.learning_rate = 0.0;  // nothing ever improves on the initial network
  o.max_epochs = 10;
  o.patience = 2;
  const StageResult r = train_stage(init, Regime::Baseline, lab, {}, val, o, 1);
  CHECK(r.epochs_run == 2);
  CHECK(r.best_epoch == 0);
}

TEST_CASE("log rows leave missing values blank") {
  std::vector<LogRow> rows(2);
  rows[0] = LogRow{1, 1, 0.5, 0.25, 0.75, std::nullopt, {1.0, 0.5}};
  rows[1] = LogRow{2, 1, 0.5, 0.25, 0.75, 0.125, {}};
  std::ostringstream os;
  write_log_csv(os, rows, 2);
  CHECK(os.str() ==
        "step,epoch,l_sup,l_cons,total,val_miou,iou_c0,iou_c1\n"
        "1,1,0.5,0.25,0.75,,1,0.5\n"
        "2,1,0.5,0.25,0.75,0.125,,\n");
}
