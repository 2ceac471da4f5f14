#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace tcseg {

/// (batch, channel, height, width)
struct Shape {
  std::array<std::size_t, 4> dims{0, 0, 0, 0};

  Shape() = default;
  Shape(std::size_t b, std::size_t c, std::size_t h, std::size_t w) : dims{b, c, h, w} {}

  std::size_t batch() const { return dims[0]; }
  std::size_t channels() const { return dims[1]; }
  std::size_t height() const { return dims[2]; }
  std::size_t width() const { return dims[3]; }
  std::size_t plane() const { return dims[2] * dims[3]; }
  std::size_t numel() const { return dims[0] * dims[1] * dims[2] * dims[3]; }

  bool operator==(const Shape&) const = default;

  std::string str() const;
};

/// Shape violations raised by tensor ops; the message names the offending dims.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Row-major 2-D map, the layout of one (b, c) plane of a Tensor.
using Map2d = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense rank-4 tensor of doubles stored row-major as (b, c, h, w).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, Eigen::ArrayXd data);

  static Tensor scalar(double v) { return Tensor(Shape{1, 1, 1, 1}, v); }
  /// Wraps one 2-D map as a (1, 1, h, w) tensor.
  static Tensor from_map(const Map2d& m);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return static_cast<std::size_t>(data_.size()); }

  Eigen::ArrayXd& data() { return data_; }
  const Eigen::ArrayXd& data() const { return data_; }

  double& operator[](std::size_t i) { return data_[static_cast<Eigen::Index>(i)]; }
  double operator[](std::size_t i) const { return data_[static_cast<Eigen::Index>(i)]; }

  std::size_t offset(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const {
    return ((b * shape_.channels() + c) * shape_.height() + h) * shape_.width() + w;
  }
  double& at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) { return (*this)[offset(b, c, h, w)]; }
  double at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const { return (*this)[offset(b, c, h, w)]; }

  /// Mutable/const view of plane (b, c) as a row-major height x width map.
  Eigen::Map<Map2d> plane(std::size_t b, std::size_t c);
  Eigen::Map<const Map2d> plane(std::size_t b, std::size_t c) const;

  double item() const;
  bool all_finite() const { return data_.isFinite().all(); }

 private:
  Shape shape_;
  Eigen::ArrayXd data_;
};

}  // namespace tcseg
