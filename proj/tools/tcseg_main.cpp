#include "tcseg/errors.hpp"
#include "tcseg/experiment.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

using namespace tcseg;

namespace {

int fail(const char* kind, const std::string& msg, int code) {
  std::cerr << "tcseg: " << kind << ": " << msg << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segmentation training with transformation consistency"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file, out_dir;
  std::vector<std::string> overrides;
  bool print_config = false;
  app.add_option("-c,--config", config_file, "key = value config file");
  app.add_option("-s,--set", overrides, "override one key, e.g. --set train.batch_size=4")->take_all();
  app.add_option("-o,--out", out_dir, "output root (overrides " + std::string(kOutputRootEnv) + " and output.dir)");
  app.add_flag("--print-config", print_config, "print the effective config before running");

  auto* generate = app.add_subcommand("generate", "write the synthetic dataset and splits");
  auto* train = app.add_subcommand("train", "stage-1 training and per-regime fine-tuning over the grid");
  auto* eval = app.add_subcommand("eval", "score trained models on the test split");
  auto* table = app.add_subcommand("table", "print and rewrite the results table from metrics.csv");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the full objective");
  std::uint64_t grad_seed = 0;
  grad->add_option("--seed", grad_seed, "fixture seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 1);
  }

  try {
    ExperimentConfig cfg;
    if (!config_file.empty()) load_config(config_file, cfg);
    if (const char* env = std::getenv(kOutputRootEnv); env && *env) cfg.output_dir = env;
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
      set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    cfg.validate();
    if (print_config) write_config(std::cout, cfg);

    if (*generate) {
      cmd_generate(cfg, std::cerr);
    } else if (*train) {
      cmd_train(cfg, std::cerr);
    } else if (*eval) {
      cmd_eval(cfg, std::cerr);
    } else if (*table) {
      cmd_table(cfg, std::cout, std::cerr);
    } else if (*grad) {
      const GradcheckReport r = gradcheck(grad_seed);
      const bool ok = r.max_error < kGradcheckThreshold;
      std::cout << "gradcheck max_rel_error=" << r.max_error << " parameters=" << r.parameters
                << " scalars=" << r.scalars << " threshold=" << kGradcheckThreshold << " " << (ok ? "PASS" : "FAIL")
                << "\n";
      if (!ok) return fail("numerical", "gradient check failed", 3);
    }
  } catch (const UsageError& e) {
    return fail("usage", e.what(), 1);
  } catch (const DataError& e) {
    return fail("data", e.what(), 2);
  } catch (const NumericalError& e) {
    return fail("numerical", e.what(), 3);
  } catch (const std::invalid_argument& e) {
    return fail("usage", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("data", e.what(), 2);
  }
  return 0;
}
