#pragma once

#include "tcseg/deform.hpp"
#include "tcseg/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace tcseg {

/// Synthetic chest-radiograph-like scene: class 1 is a pair of large lateral
/// shapes, class 2 a central medium shape, class 3 a pair of thin elongated
/// shapes near the top; 0 is background.
struct Scene {
  Map2d image;      // intensities in [0, 1]
  LabelMap labels;  // class indices 0..n_structures
};

struct SceneParams {
  std::size_t size = 64;
  std::size_t n_structures = 3;
  double noise_sigma = 0.06;
  double bias_amplitude = 0.12;
  /// Minimum |mean(structure) - mean(background)| accepted for every structure.
  double min_contrast = 0.08;
  std::size_t rib_count = 4;
  /// Strength of the pose-variety deformation as a multiple of the default
  /// transformation amplitude.
  double pose_deformation = 1.0;
  int max_retries = 50;
};

/// Expected per-class pixel-fraction bands (background first) for the default layout.
struct FractionBand {
  double lo;
  double hi;
};
std::vector<FractionBand> class_fraction_bands(std::size_t n_structures);
/// Separate shapes painted per structure class (two lateral pieces for
/// classes 1 and 3, one otherwise).
std::vector<std::size_t> structure_parts(std::size_t n_structures);

/// Throws DataError naming the seed if no valid scene is produced within max_retries.
Scene generate_scene(std::uint64_t seed, const SceneParams& params);

struct SplitPlan {
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> val_ids;
  std::vector<std::size_t> test_ids;
  std::vector<std::size_t> subset_sizes;
  /// Nested labeled subsets, subsets[i].size() == subset_sizes[i].
  std::vector<std::vector<std::size_t>> subsets;

  const std::vector<std::size_t>& labeled_subset(std::size_t size) const;
  /// Training ids outside the labeled subset of the given size.
  std::vector<std::size_t> train_unlabeled(std::size_t labeled_size) const;
};

/// Test = ids of one parity (seeded); the rest split into train/val, with
/// nested labeled subsets drawn from train.
SplitPlan make_splits(std::size_t n_total, std::uint64_t seed, double train_fraction = 0.5,
                      std::vector<std::size_t> subset_sizes = {5, 10, 25, 50});

struct Dataset {
  std::vector<Scene> scenes;
  SplitPlan plan;
};

/// Labeled view used for supervision and validation.
struct LabeledPool {
  std::vector<std::size_t> ids;
  std::vector<const Scene*> scenes;
};

/// Image-only view; carries no labels by construction.
struct ImagePool {
  std::vector<std::size_t> ids;
  std::vector<const Map2d*> images;
};

LabeledPool labeled_pool(const Dataset& data, const std::vector<std::size_t>& ids);
ImagePool image_pool(const Dataset& data, const std::vector<std::size_t>& ids);

// 16-bit binary PGM (P5, maxval 65535, big-endian samples) for images,
// 8-bit P5 for label maps.
void write_pgm16(const std::filesystem::path& path, const Map2d& image);
Map2d read_pgm16(const std::filesystem::path& path);
void write_label_pgm(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_label_pgm(const std::filesystem::path& path);

/// Writes images/, labels/ and manifest.csv
/// (id, image, label, split, labeled_<k>... columns) under `dir`.
void save_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace tcseg
