#include "tcseg/experiment.hpp"

#include "tcseg/errors.hpp"
#include "tcseg/format.hpp"

#include <fstream>
#include <map>
#include <ostream>

namespace tcseg {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (ec) throw DataError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

Dataset load_checked(const ExperimentConfig& cfg) {
  const fs::path dir = data_dir(cfg);
  if (!fs::exists(dir / "manifest.csv")) {
    throw DataError("dataset not found: " + (dir / "manifest.csv").string() + " (run generate first)");
  }
  Dataset d = load_dataset(dir);
  if (d.scenes.empty()) throw DataError("dataset is empty: " + dir.string());
  const auto n = static_cast<std::size_t>(d.scenes.front().image.cols());
  if (n != cfg.image_size) {
    throw DataError("dataset images are " + std::to_string(n) + " px but data.image_size is " +
                    std::to_string(cfg.image_size));
  }
  return d;
}

/// Semi-supervised cells need unlabeled images.
bool cell_trainable(const Dataset& d, Regime r, std::size_t size) {
  return !is_semi_supervised(r) || !unlabeled_pool(d, r, size).ids.empty();
}

void save_run(const fs::path& dir, const StageResult& res, std::size_t n_classes) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
  res.best.save(dir / "model.wct");
  auto log = open_out(dir / "log.csv");
  write_log_csv(log, res.log, n_classes);
}

std::vector<MetricsRow> read_metrics_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("metrics not found: " + path.string() + " (run eval first)");
  return read_metrics_csv(in);
}

void write_tables(const ExperimentConfig& cfg, const std::vector<MetricsRow>& rows, std::ostream* echo,
                  std::ostream& log) {
  const auto cells = results_table(rows);
  std::size_t missing;
  {
    auto out = open_out(cfg.output_dir / "table.csv");
    missing = write_wide_table_csv(out, cells);
  }
  {
    auto out = open_out(cfg.output_dir / "plot.csv");
    write_plot_csv(out, cells);
  }
  if (echo) write_wide_table_csv(*echo, cells);
  if (missing) log << "warning: " << missing << " empty cell(s) in table.csv\n";
}

}  // namespace

fs::path data_dir(const ExperimentConfig& cfg) { return cfg.output_dir / "data"; }

fs::path cell_dir(const ExperimentConfig& cfg, const std::string& stage, std::size_t labeled_size, std::uint64_t seed) {
  return cfg.output_dir / "runs" / stage / ("n" + std::to_string(labeled_size)) / ("seed" + std::to_string(seed));
}

Dataset generate_dataset(const ExperimentConfig& cfg) {
  cfg.validate();
  Dataset d;
  d.plan = make_splits(cfg.n_total, cfg.data_seed, cfg.train_fraction, cfg.subset_sizes);
  const SceneParams sp = cfg.scene_params();
  d.scenes.reserve(cfg.n_total);
  for (std::size_t i = 0; i < cfg.n_total; ++i) {
    d.scenes.push_back(generate_scene(derive_seed(cfg.data_seed, "scene-id", i), sp));
  }
  return d;
}

void cmd_generate(const ExperimentConfig& cfg, std::ostream& log) {
  const Dataset d = generate_dataset(cfg);
  save_dataset(data_dir(cfg), d);
  log << "generated " << d.scenes.size() << " scenes (" << d.plan.train_ids.size() << " train, "
      << d.plan.val_ids.size() << " val, " << d.plan.test_ids.size() << " test) in " << data_dir(cfg).string()
      << "\n";
}

void cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  const Dataset d = load_checked(cfg);
  const NetworkConfig nc = cfg.network_config();
  const LabeledPool val = labeled_pool(d, d.plan.val_ids);
  {
    std::error_code ec;
    fs::create_directories(cfg.output_dir, ec);
    save_config(cfg.output_dir / "config.txt", cfg);
  }
  auto summary = open_out(cfg.output_dir / "runs" / "summary.csv");
  summary << "stage,labeled_size,seed,best_epoch,epochs_run,best_val_miou\n";

  for (std::size_t size : cfg.labeled_sizes) {
    const LabeledPool labeled = labeled_pool(d, d.plan.labeled_subset(size));
    for (std::uint64_t seed : cfg.seeds) {
      StageOptions s1 = cfg.stage_options(false);
      s1.failure_checkpoint = cell_dir(cfg, "stage1", size, seed) / "last_good.wct";
      Rng init_rng(derive_seed(seed, "init"));
      const StageResult stage1 = train_stage(Network::build(nc, init_rng), Regime::Baseline, labeled, {}, val, s1,
                                             derive_seed(seed, "stage1", size));
      save_run(cell_dir(cfg, "stage1", size, seed), stage1, nc.n_classes);
      summary << "stage1," << size << "," << seed << "," << stage1.best_epoch << "," << stage1.epochs_run << ","
              << format_double(stage1.best_val_miou) << "\n";
      log << "stage1 n=" << size << " seed=" << seed << " val_miou=" << stage1.best_val_miou << "\n";

      for (const std::string& name : cfg.regimes) {
        const Regime r = parse_regime(name);
        if (!cell_trainable(d, r, size)) {
          log << "skip " << name << " n=" << size << ": no unlabeled training images\n";
          continue;
        }
        StageOptions ft = cfg.stage_options(true);
        ft.failure_checkpoint = cell_dir(cfg, name, size, seed) / "last_good.wct";
        const StageResult res = train_stage(stage1.best, r, labeled, unlabeled_pool(d, r, size), val, ft,
                                            derive_seed(seed, "finetune", size));
        save_run(cell_dir(cfg, name, size, seed), res, nc.n_classes);
        summary << name << "," << size << "," << seed << "," << res.best_epoch << "," << res.epochs_run << ","
                << format_double(res.best_val_miou) << "\n";
        log << name << " n=" << size << " seed=" << seed << " val_miou=" << res.best_val_miou << "\n";
      }
    }
  }
}

void cmd_eval(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  const Dataset d = load_checked(cfg);
  const NetworkConfig nc = cfg.network_config();
  const LabeledPool test = labeled_pool(d, d.plan.test_ids);
  std::vector<MetricsRow> raw, post;
  std::size_t undefined = 0;
  const std::vector<std::size_t> parts = structure_parts(cfg.n_structures);

  for (const std::string& name : cfg.regimes) {
    const Regime r = parse_regime(name);
    for (std::size_t size : cfg.labeled_sizes) {
      if (!cell_trainable(d, r, size)) continue;
      for (std::uint64_t seed : cfg.seeds) {
        const fs::path model = cell_dir(cfg, name, size, seed) / "model.wct";
        if (!fs::exists(model)) throw DataError("checkpoint not found: " + model.string());
        const Network net = Network::load(nc, model);
        std::vector<ImageScores> s_raw, s_post;
        constexpr std::size_t chunk = 16;
        for (std::size_t start = 0; start < test.scenes.size(); start += chunk) {
          const std::size_t end = std::min(test.scenes.size(), start + chunk);
          std::vector<const Map2d*> imgs;
          for (std::size_t i = start; i < end; ++i) imgs.push_back(&test.scenes[i]->image);
          const Tensor probs = net.predict(stack_images(imgs));
          for (std::size_t i = start; i < end; ++i) {
            const LabelMap pred = argmax_labels(probs, i - start);
            const LabelMap& truth = test.scenes[i]->labels;
            s_raw.push_back(score_image(pred, truth, nc.n_classes, cfg.pixel_size));
            s_post.push_back(score_image(postprocess(pred, parts), truth, nc.n_classes, cfg.pixel_size));
          }
        }
        raw.push_back(summarize(name, size, seed, s_raw, &undefined));
        post.push_back(summarize(name, size, seed, s_post));
        log << name << " n=" << size << " seed=" << seed << " test_miou=" << raw.back().miou
            << " postprocessed=" << post.back().miou << "\n";
      }
    }
  }
  if (undefined) log << "note: " << undefined << " class/image pairs had an empty mask; MACD skipped for them\n";

  for (const auto& [file, rows] : {std::pair{"metrics.csv", &raw}, std::pair{"metrics_postprocessed.csv", &post}}) {
    auto out = open_out(cfg.output_dir / file);
    write_metrics_csv(out, *rows);
  }
  for (const auto& [file, rows] :
       {std::pair{"aggregate.csv", &raw}, std::pair{"aggregate_postprocessed.csv", &post}}) {
    auto out = open_out(cfg.output_dir / file);
    write_aggregate_csv(out, results_table(*rows));
  }
  write_tables(cfg, raw, nullptr, log);
}

void cmd_table(const ExperimentConfig& cfg, std::ostream& out, std::ostream& log) {
  write_tables(cfg, read_metrics_file(cfg.output_dir / "metrics.csv"), &out, log);
}

GradcheckReport gradcheck(std::uint64_t seed, WarpGradient mode) {
  constexpr std::size_t n = 16;
  SceneParams sp;
  sp.size = n;
  sp.pose_deformation = 0.0;
  NetworkConfig nc;
  nc.input_size = n;
  nc.depth = 2;
  nc.base_channels = 4;
  Rng rng(derive_seed(seed, "gradcheck"));
  const Network net = Network::build(nc, rng);
  const DeformParams dp = DeformParams::for_image_size(n);

  Batch batch;
  for (std::size_t i = 0; i < 4; ++i) {
    Scene s = generate_scene(derive_seed(seed, "gradcheck-scene", i), sp);
    // force deformations on both branches so the warp layer is exercised
    auto draw = [&] {
      DeformParams always = dp;
      always.identity_probability = 0.0;
      always.amplitude *= 0.25;  // full-strength fields rarely invert at 16 px
      return sample_transform_pair(n, n, always, rng);
    };
    TransformPair t1 = draw(), t2 = draw();
    std::optional<LabelMap> labels;
    if (i < 2) labels = std::move(s.labels);
    batch.items.push_back(BatchItem{std::move(s.image), std::move(labels), std::move(t1), std::move(t2)});
  }
  ObjectiveOptions opts;
  opts.warp_gradient = mode;
  BatchObjective o = batch_loss(batch, net, opts);

  GradcheckReport rep;
  for (NodeId p : o.params) {
    rep.max_error = std::max(rep.max_error, finite_diff_check(o.graph, o.total, p));
    ++rep.parameters;
    rep.scalars += o.graph.value(p).size();
  }
  return rep;
}

}  // namespace tcseg
