#include "tcseg/tensor.hpp"

#include <sstream>

namespace tcseg {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << dims[0] << ", " << dims[1] << ", " << dims[2] << ", " << dims[3] << ")";
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(shape), data_(Eigen::ArrayXd::Constant(static_cast<Eigen::Index>(shape.numel()), fill)) {}

Tensor::Tensor(Shape shape, Eigen::ArrayXd data) : shape_(shape), data_(std::move(data)) {
  if (static_cast<std::size_t>(data_.size()) != shape_.numel()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " + shape_.str());
  }
}

Tensor Tensor::from_map(const Map2d& m) {
  Tensor t(Shape{1, 1, static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  t.plane(0, 0) = m;
  return t;
}

Eigen::Map<Map2d> Tensor::plane(std::size_t b, std::size_t c) {
  return {data_.data() + offset(b, c, 0, 0), static_cast<Eigen::Index>(shape_.height()),
          static_cast<Eigen::Index>(shape_.width())};
}

Eigen::Map<const Map2d> Tensor::plane(std::size_t b, std::size_t c) const {
  return {data_.data() + offset(b, c, 0, 0), static_cast<Eigen::Index>(shape_.height()),
          static_cast<Eigen::Index>(shape_.width())};
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar tensor of shape " + shape_.str());
  return data_[0];
}

}  // namespace tcseg
