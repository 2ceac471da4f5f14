#pragma once

#include "tcseg/config.hpp"
#include "tcseg/eval.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>

namespace tcseg {

/// Environment variable that replaces output.dir when set.
inline constexpr const char* kOutputRootEnv = "TCSEG_OUTPUT_ROOT";

std::filesystem::path data_dir(const ExperimentConfig& cfg);
/// <output>/runs/<stage>/n<size>/seed<seed>, stage being "stage1" or a regime name.
std::filesystem::path cell_dir(const ExperimentConfig& cfg, const std::string& stage, std::size_t labeled_size,
                               std::uint64_t seed);

/// Builds scenes and splits from the config and writes them under data_dir.
Dataset generate_dataset(const ExperimentConfig& cfg);
void cmd_generate(const ExperimentConfig& cfg, std::ostream& log);

/// Supervised stage 1 per (labeled size, seed), then one fine-tune per regime.
/// Semi-supervised cells without unlabeled images are skipped with a note.
void cmd_train(const ExperimentConfig& cfg, std::ostream& log);

/// Scores every trained cell on the test split, raw and post-processed.
/// Writes metrics.csv, metrics_postprocessed.csv, aggregate.csv,
/// aggregate_postprocessed.csv, table.csv and plot.csv under the output root.
void cmd_eval(const ExperimentConfig& cfg, std::ostream& log);

/// Re-renders table.csv and plot.csv from metrics.csv and prints the table.
void cmd_table(const ExperimentConfig& cfg, std::ostream& out, std::ostream& log);

struct GradcheckReport {
  double max_error = 0.0;
  std::size_t parameters = 0;
  std::size_t scalars = 0;
};

/// Finite differences of the full two-branch objective (supervised and
/// consistency terms, warp layer, softmax) on a 16x16 batch of two labeled
/// and two unlabeled items, against every network parameter.
GradcheckReport gradcheck(std::uint64_t seed, WarpGradient mode = WarpGradient::ScatterAdd);
inline constexpr double kGradcheckThreshold = 1e-4;

}  // namespace tcseg
