#pragma once

#include "tcseg/model.hpp"
#include "tcseg/synthdata.hpp"
#include "tcseg/trainer.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace tcseg {

/// Everything a run depends on. Plain-text form is one `key = value` per
/// line; `#` starts a comment; lists are comma separated.
struct ExperimentConfig {
  // data
  std::size_t n_total = 200;
  std::size_t image_size = 64;
  std::size_t n_structures = 3;
  double noise_sigma = 0.06;
  double bias_amplitude = 0.12;
  double min_contrast = 0.08;
  double pose_deformation = 1.0;
  double train_fraction = 0.5;
  std::uint64_t data_seed = 0;
  std::vector<std::size_t> subset_sizes{5, 10, 25, 50};

  // model
  std::size_t depth = 3;
  std::size_t base_channels = 8;

  // deformation; amplitude and sigma are given for a 512 px image and scale linearly
  double deform_amplitude = 1000.0;
  double deform_sigma = 100.0;
  double identity_probability = 0.5;
  int invert_iterations = 25;
  double invert_tolerance = 1e-3;

  // training
  std::size_t batch_size = 8;
  std::size_t stage1_epochs = 40;
  std::size_t finetune_epochs = 30;
  std::size_t steps_per_epoch = 10;
  std::size_t patience = 8;
  double lambda = 1.0;
  double rho = 0.95;
  double epsilon = 1e-7;
  double learning_rate = 1.0;
  WarpGradient warp_gradient = WarpGradient::ScatterAdd;

  // grid
  std::vector<std::string> regimes{"baseline", "suptc", "semitc", "semitc+"};
  std::vector<std::size_t> labeled_sizes{5, 10, 25, 50};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

  // evaluation
  double pixel_size = 1.0;

  std::filesystem::path output_dir = "runs";

  /// Throws UsageError on inconsistent values.
  void validate() const;

  SceneParams scene_params() const;
  NetworkConfig network_config() const;
  DeformParams deform_params() const;
  StageOptions stage_options(bool finetune) const;
};

/// Names of every key, in file order.
std::vector<std::string> config_keys();

/// Sets one key from its text form. Throws UsageError for unknown keys or
/// unparsable values.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const ExperimentConfig& cfg, const std::string& key);

/// Applies `key = value` lines on top of cfg.
void read_config(std::istream& is, ExperimentConfig& cfg, const std::string& source = "<config>");
void load_config(const std::filesystem::path& path, ExperimentConfig& cfg);
/// Every key with its current value and a short description.
void write_config(std::ostream& os, const ExperimentConfig& cfg);
void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg);

std::string warp_gradient_name(WarpGradient w);

}  // namespace tcseg
