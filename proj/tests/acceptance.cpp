// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,...] [--out DIR] [--set key=value ...]
//
// --set adjusts the benchmark config used by criteria 5, 6 and 8.

#include "oracles.hpp"

#include "tcseg/errors.hpp"
#include "tcseg/experiment.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

using namespace tcseg;
using namespace tcseg::oracle;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Desk-scale synthetic benchmark: 32 px scenes, half-strength deformations.
ExperimentConfig benchmark_config() {
  ExperimentConfig c;
  c.image_size = 32;
  c.deform_amplitude = 500.0;
  c.stage1_epochs = 40;
  c.finetune_epochs = 80;
  c.patience = 80;
  return c;
}

Outcome gradient_check() {
  const auto t0 = Clock::now();
  const GradcheckReport r = gradcheck(0);
  const double t = seconds_since(t0);
  return {r.max_error < 1e-4 && t < 60.0,
          fmt("max rel error %.3g over %zu scalars, %.1f s", r.max_error, r.scalars, t)};
}

Outcome warp_adjoint() {
  std::mt19937_64 gen(11);
  double worst = 0.0;
  for (std::uint64_t k = 0; k < 100; ++k) {
    const std::vector<WarpContext> ctxs{random_context(16, k)};
    const Tensor x = random_tensor({1, 3, 16, 16}, gen), y = random_tensor({1, 3, 16, 16}, gen);
    const double lhs = (warp_forward(x, ctxs).data() * y.data()).sum();
    const double rhs = (x.data() * warp_backward(y, ctxs).data()).sum();
    worst = std::max(worst, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
  }
  const std::vector<WarpContext> small{random_context(8, 5, 40.0, 2.0)};
  Eigen::MatrixXd jac(64, 64), jac_t(64, 64);
  for (Eigen::Index j = 0; j < 64; ++j) {
    Tensor e({1, 1, 8, 8});
    e.data()(j) = 1.0;
    jac.col(j) = warp_forward(e, small).data().matrix();
    jac_t.col(j) = warp_backward(e, small).data().matrix();
  }
  std::mt19937_64 g2(3);
  const Tensor v = random_tensor({1, 1, 8, 8}, g2);
  const double jac_err = (jac.transpose() * v.data().matrix() - warp_backward(v, small).data().matrix()).cwiseAbs().maxCoeff();
  const double transpose_err = (jac.transpose() - jac_t).cwiseAbs().maxCoeff();
  return {worst < 1e-12 && jac_err < 1e-12 && transpose_err == 0.0,
          fmt("adjoint rel error %.3g, |J^T v - backward(v)| %.3g", worst, jac_err)};
}

Outcome deformation_algebra() {
  const DeformParams p = DeformParams::for_image_size(64);
  double worst_fwd = 1.0, worst_bwd = 1.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(derive_seed(seed, "acceptance-field"));
    const DeformationField f = sample_field(64, 64, p.amplitude, p.sigma, rng);
    const DeformationField g = invert_field(f).field;
    worst_fwd = std::min(worst_fwd, interior_fraction_within(compose_fields(g, f), 0.5, 4));
    worst_bwd = std::min(worst_bwd, interior_fraction_within(compose_fields(f, g), 0.5, 4, &f));
  }
  return {worst_fwd >= 0.99 && worst_bwd >= 0.99,
          fmt("worst-seed fraction within 0.5 px: round trip %.4f, compose %.4f", worst_fwd, worst_bwd)};
}

Outcome loss_oracle() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng init(derive_seed(seed, "acceptance-net"));
    const Network net = Network::build(tiny_net(), init);
    const Batch batch = fixture_batch(derive_seed(seed, "acceptance-batch"), 2, 2);
    ObjectiveOptions opts;
    opts.lambda = seed % 2 ? 1.0 : 0.35;
    const LossReport o = batch_loss(batch, net, opts).report;
    const Reference r = reference_objective(batch, net, opts.lambda);
    worst = std::max({worst, std::abs(o.l_sup - r.l_sup), std::abs(o.l_cons - r.l_cons), std::abs(o.total - r.total)});
  }
  double set_err = 0.0;
  for (unsigned a = 0; a < 16; ++a)
    for (unsigned b = 0; b < 16; ++b) {
      Tensor ta(Shape{1, 1, 2, 2}), tb(Shape{1, 1, 2, 2});
      ta.data() = from_bits(a, 4).data();
      tb.data() = from_bits(b, 4).data();
      set_err = std::max(set_err, std::abs(soft_iou(ta, tb).mean - set_iou(a, b)));
    }
  return {worst < 1e-12 && set_err < 1e-15,
          fmt("objective error %.3g on 20 fixtures, 2x2 set-IOU error %.3g", worst, set_err)};
}

Outcome metric_oracles() {
  std::mt19937_64 gen(1);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const long n = 8 + static_cast<long>(gen() % 25);
    const Mask p = random_blob(n, gen), t = random_blob(n, gen);
    worst = std::max(worst, std::abs(macd(p, t).value() - brute_macd(p, t)));
  }
  std::uniform_int_distribution<int> cls(0, 3);
  int idempotent = 0;
  for (int k = 0; k < 100; ++k) {
    LabelMap pred(24, 24);
    for (long i = 0; i < pred.size(); ++i) pred(i) = cls(gen);
    if (k % 2)
      for (long i = 0; i < 24; ++i)
        for (long j = 0; j < 24; ++j) pred(i, j) = pred((i / 6) * 6, (j / 6) * 6);
    const LabelMap once = postprocess(pred);
    idempotent += (postprocess(once) == once).all();
  }
  return {worst < 1e-9 && idempotent == 100,
          fmt("macd error %.3g px, postprocess idempotent on %d/100", worst, idempotent)};
}

// ---- benchmark criteria ----

std::vector<MetricsRow> run_grid(ExperimentConfig cfg, const fs::path& root) {
  cfg.output_dir = root;
  fs::remove_all(root);
  cmd_generate(cfg, std::clog);
  cmd_train(cfg, std::clog);
  cmd_eval(cfg, std::clog);
  std::ifstream in(root / "metrics.csv");
  return read_metrics_csv(in);
}

std::map<std::string, std::map<std::uint64_t, double>> by_regime(const std::vector<MetricsRow>& rows, std::size_t size) {
  std::map<std::string, std::map<std::uint64_t, double>> m;
  for (const auto& r : rows)
    if (r.labeled_size == size) m[r.regime][r.seed] = r.miou;
  return m;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome trend(const ExperimentConfig& base, const fs::path& root) {
  ExperimentConfig cfg = base;
  cfg.labeled_sizes = {5};
  const auto t0 = Clock::now();
  const auto m = by_regime(run_grid(cfg, root), 5);
  const double t = seconds_since(t0);
  const auto& b = m.at("baseline");
  const auto& sup = m.at("suptc");
  const auto& semi = m.at("semitc");
  const auto& plus = m.at("semitc+");
  std::vector<double> gain;
  int sup_wins = 0, plus_wins = 0;
  std::ostringstream seeds;
  for (const auto& [seed, v] : b) {
    gain.push_back(100.0 * (semi.at(seed) - v));
    sup_wins += sup.at(seed) >= v;
    plus_wins += plus.at(seed) >= semi.at(seed);
    seeds << fmt(" [seed %llu: %.1f/%.1f/%.1f/%.1f]", static_cast<unsigned long long>(seed), 100 * v,
                 100 * sup.at(seed), 100 * semi.at(seed), 100 * plus.at(seed));
  }
  const double g = median(gain);
  const bool ok = b.size() == 5 && g >= 3.0 && sup_wins >= 4 && plus_wins >= 3 && t < 1800.0;
  return {ok, fmt("median SemiTC gain %.2f pts, SupTC>=baseline %d/5, SemiTC+>=SemiTC %d/5, %.0f s;", g, sup_wins,
                  plus_wins, t) +
                  seeds.str()};
}

Outcome monotone(const ExperimentConfig& base, const fs::path& root) {
  ExperimentConfig cfg = base;
  cfg.regimes = {"baseline"};
  const auto rows = run_grid(cfg, root);
  bool ok = true;
  double prev = -1.0;
  std::string detail = "baseline mIOU by size:";
  for (std::size_t size : cfg.labeled_sizes) {
    double mean = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows)
      if (r.labeled_size == size) mean += r.miou, ++n;
    mean = 100.0 * mean / static_cast<double>(n);
    detail += fmt(" %zu:%.1f", size, mean);
    if (prev >= 0.0 && mean < prev - 1.0) ok = false;
    prev = mean;
  }
  return {ok, detail};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome reproducible(const ExperimentConfig& base, const fs::path& root) {
  // every cell of the grid, with short training so it can run twice
  ExperimentConfig cfg = base;
  cfg.stage1_epochs = 2;
  cfg.finetune_epochs = 2;
  cfg.steps_per_epoch = 2;
  run_grid(cfg, root / "a");
  run_grid(cfg, root / "b");
  int same = 0, total = 0;
  for (const char* f : {"metrics.csv", "metrics_postprocessed.csv", "aggregate.csv", "aggregate_postprocessed.csv",
                        "table.csv", "plot.csv"}) {
    ++total;
    const std::string a = slurp(root / "a" / f);
    same += !a.empty() && a == slurp(root / "b" / f);
  }
  return {same == total, fmt("%d/%d metrics files byte-identical", same, total)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance run"};
  std::vector<int> only;
  std::vector<std::string> sets;
  std::string out = (fs::temp_directory_path() / "tcseg_acceptance").string();
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_option("--out", out, "scratch output root");
  app.add_option("--set", sets, "benchmark config override key=value")->take_all();
  CLI11_PARSE(app, argc, argv);

  ExperimentConfig bench = benchmark_config();
  try {
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value");
      set_config_value(bench, kv.substr(0, eq), kv.substr(eq + 1));
    }
    bench.validate();
  } catch (const std::exception& e) {
    std::cerr << "acceptance: " << e.what() << "\n";
    return 1;
  }

  const fs::path root = out;
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, gradient_check},
      {2, warp_adjoint},
      {3, deformation_algebra},
      {4, loss_oracle},
      {5, [&] { return trend(bench, root / "trend"); }},
      {6, [&] { return monotone(bench, root / "monotone"); }},
      {7, metric_oracles},
      {8, [&] { return reproducible(bench, root / "repro"); }},
  };
  const std::set<int> want(only.begin(), only.end());
  bool all = true;
  for (const auto& [k, run] : criteria) {
    if (!want.empty() && !want.count(k)) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << "criterion " << k << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
  }
  return all ? 0 : 1;
}
