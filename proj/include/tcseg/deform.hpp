#pragma once

#include "tcseg/rng.hpp"
#include "tcseg/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

namespace tcseg {

using LabelMap = Eigen::Array<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense displacement field. Output pixel (i, j) reads input location
/// (i + dy(i, j), j + dx(i, j)).
struct DeformationField {
  Map2d dx;
  Map2d dy;

  DeformationField() = default;
  DeformationField(Map2d dx_, Map2d dy_);

  static DeformationField zero(std::size_t width, std::size_t height);
  static DeformationField constant(std::size_t width, std::size_t height, double shift_x, double shift_y);

  std::size_t width() const { return static_cast<std::size_t>(dx.cols()); }
  std::size_t height() const { return static_cast<std::size_t>(dx.rows()); }
  double max_magnitude() const;
};

struct DeformParams {
  double amplitude = 1000.0;
  double sigma = 100.0;
  double identity_probability = 0.5;
  /// Fields whose largest displacement exceeds this are redrawn.
  double max_displacement = 100.0;
  int invert_iterations = 25;
  double invert_tolerance = 1e-3;
  int max_redraws = 50;

  /// Reference parameters (512 px images) rescaled to `size` pixels:
  /// sigma = 100 * size / 512 and amplitude = 1000 * size / 512, which keeps
  /// the smoothed RMS displacement in pixels unchanged (about 2 px).
  static DeformParams for_image_size(std::size_t size);
};

// Interpolation helpers on any 2-D Eigen expression; reads outside the map
// clamp to the nearest border pixel.

template <typename Derived>
double sample_bilinear(const Eigen::DenseBase<Derived>& m, double y, double x) {
  const double ymax = static_cast<double>(m.rows() - 1), xmax = static_cast<double>(m.cols() - 1);
  y = std::clamp(y, 0.0, ymax);
  x = std::clamp(x, 0.0, xmax);
  const auto y0 = static_cast<Eigen::Index>(std::floor(y)), x0 = static_cast<Eigen::Index>(std::floor(x));
  const Eigen::Index y1 = std::min<Eigen::Index>(y0 + 1, m.rows() - 1), x1 = std::min<Eigen::Index>(x0 + 1, m.cols() - 1);
  const double ty = y - static_cast<double>(y0), tx = x - static_cast<double>(x0);
  return (1 - ty) * ((1 - tx) * m(y0, x0) + tx * m(y0, x1)) + ty * ((1 - tx) * m(y1, x0) + tx * m(y1, x1));
}

inline void catmull_rom_weights(double t, double (&w)[4]) {
  const double t2 = t * t, t3 = t2 * t;
  w[0] = 0.5 * (-t3 + 2 * t2 - t);
  w[1] = 0.5 * (3 * t3 - 5 * t2 + 2);
  w[2] = 0.5 * (-3 * t3 + 4 * t2 + t);
  w[3] = 0.5 * (t3 - t2);
}

template <typename Derived>
double sample_bicubic(const Eigen::DenseBase<Derived>& m, double y, double x) {
  const double fy = std::floor(y), fx = std::floor(x);
  double wy[4], wx[4];
  catmull_rom_weights(y - fy, wy);
  catmull_rom_weights(x - fx, wx);
  const auto clamp_row = [&](double r) {
    return static_cast<Eigen::Index>(std::clamp(r, 0.0, static_cast<double>(m.rows() - 1)));
  };
  const auto clamp_col = [&](double c) {
    return static_cast<Eigen::Index>(std::clamp(c, 0.0, static_cast<double>(m.cols() - 1)));
  };
  double acc = 0.0;
  for (int a = 0; a < 4; ++a) {
    const Eigen::Index r = clamp_row(fy + a - 1);
    double row = 0.0;
    for (int b = 0; b < 4; ++b) row += wx[b] * m(r, clamp_col(fx + b - 1));
    acc += wy[a] * row;
  }
  return acc;
}

/// Uniform noise in [-amplitude, amplitude] per pixel and axis, smoothed by a
/// Gaussian (truncated at 4 sigma, renormalised, reflective borders).
DeformationField sample_field(std::size_t width, std::size_t height, double amplitude, double sigma, Rng& rng);

/// Separable Gaussian filter with half-sample symmetric borders.
Map2d gaussian_smooth(const Map2d& m, double sigma);

struct InversionResult {
  DeformationField field;
  bool converged = false;
  double residual = 0.0;  // last max update, px
  int iterations = 0;
};

/// Fixed point g <- -f(p + g(p)), bilinear sampling of f.
InversionResult invert_field(const DeformationField& f, int iterations = 25, double tolerance = 1e-3);

/// c(p) = a(p) + b(p + a(p)): the coordinate map of a followed by that of b.
/// As an image warp, applying c equals warping by b and then by a.
DeformationField compose_fields(const DeformationField& a, const DeformationField& b);

/// One draw from the transformation distribution. Image and label share the
/// same field for elastic draws.
class TransformPair {
 public:
  enum class Kind { Identity, Elastic };

  static TransformPair identity() { return TransformPair{}; }
  static TransformPair elastic(DeformationField field, std::optional<DeformationField> inverse = std::nullopt);

  Kind kind() const { return kind_; }
  bool is_identity() const { return kind_ == Kind::Identity; }
  const DeformationField& field() const;
  /// Computes the inverse on first use.
  const DeformationField& inverse(int iterations = 25, double tolerance = 1e-3) const;
  bool has_inverse() const { return inverse_.has_value(); }

  /// Field of the transform, or a zero field of the given size for identity.
  DeformationField field_or_zero(std::size_t width, std::size_t height) const;
  DeformationField inverse_or_zero(std::size_t width, std::size_t height) const;

 private:
  Kind kind_ = Kind::Identity;
  std::optional<DeformationField> field_;
  mutable std::optional<DeformationField> inverse_;
};

struct TransformSampleStats {
  int redraws = 0;
};

/// Bernoulli(identity_probability) between identity and a fresh elastic field.
/// Elastic fields that exceed the displacement cap or fail to invert are redrawn.
TransformPair sample_transform_pair(std::size_t width, std::size_t height, const DeformParams& params, Rng& rng,
                                    TransformSampleStats* stats = nullptr);

/// Flat (row-major) index of the nearest input pixel read by each output pixel.
std::vector<std::size_t> nearest_sources(const DeformationField& f);

Map2d apply_to_image(const DeformationField& f, const Map2d& img);
Map2d apply_to_image(const TransformPair& t, const Map2d& img);
LabelMap apply_to_labels(const DeformationField& f, const LabelMap& labels);
LabelMap apply_to_labels(const TransformPair& t, const LabelMap& labels);

// "WCF1", u32 width, u32 height, then dx and dy as row-major f64, little-endian.
void write_field(std::ostream& os, const DeformationField& f);
DeformationField read_field(std::istream& is);
void save_field(const std::filesystem::path& path, const DeformationField& f);
DeformationField load_field(const std::filesystem::path& path);

}  // namespace tcseg
