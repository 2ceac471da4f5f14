#include "tcseg/deform.hpp"

#include "tcseg/binary_io.hpp"
#include "tcseg/errors.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace tcseg {

namespace {

Eigen::Index reflect_index(long i, long n) {
  const long period = 2 * n;
  long r = i % period;
  if (r < 0) r += period;
  return static_cast<Eigen::Index>(r < n ? r : period - 1 - r);
}

void check_dims(const DeformationField& a, const DeformationField& b, const char* what) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw std::invalid_argument(std::string(what) + ": field dims " + std::to_string(a.width()) + "x" +
                                std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                                std::to_string(b.height()));
  }
}

template <typename Map>
void check_image_dims(const DeformationField& f, const Map& m, const char* what) {
  if (static_cast<std::size_t>(m.cols()) != f.width() || static_cast<std::size_t>(m.rows()) != f.height()) {
    throw std::invalid_argument(std::string(what) + ": map is " + std::to_string(m.cols()) + "x" +
                                std::to_string(m.rows()) + ", field is " + std::to_string(f.width()) + "x" +
                                std::to_string(f.height()));
  }
}

Eigen::Index round_clamped(double v, Eigen::Index n) {
  return static_cast<Eigen::Index>(std::clamp(std::floor(v + 0.5), 0.0, static_cast<double>(n - 1)));
}

}  // namespace

DeformationField::DeformationField(Map2d dx_, Map2d dy_) : dx(std::move(dx_)), dy(std::move(dy_)) {
  if (dx.rows() != dy.rows() || dx.cols() != dy.cols()) {
    throw std::invalid_argument("DeformationField: dx and dy dimensions differ");
  }
}

DeformationField DeformationField::zero(std::size_t width, std::size_t height) {
  return constant(width, height, 0.0, 0.0);
}

DeformationField DeformationField::constant(std::size_t width, std::size_t height, double shift_x, double shift_y) {
  const auto h = static_cast<Eigen::Index>(height), w = static_cast<Eigen::Index>(width);
  return {Map2d::Constant(h, w, shift_x), Map2d::Constant(h, w, shift_y)};
}

double DeformationField::max_magnitude() const {
  if (dx.size() == 0) return 0.0;
  return (dx.square() + dy.square()).sqrt().maxCoeff();
}

DeformParams DeformParams::for_image_size(std::size_t size) {
  DeformParams p;
  const double scale = static_cast<double>(size) / 512.0;
  p.sigma = 100.0 * scale;
  p.amplitude = 1000.0 * scale;
  p.max_displacement = p.sigma;
  return p;
}

Map2d gaussian_smooth(const Map2d& m, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_smooth: sigma must be positive");
  const long radius = static_cast<long>(4.0 * sigma + 0.5);
  Eigen::ArrayXd kernel(2 * radius + 1);
  for (long k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
  }
  kernel /= kernel.sum();

  const long rows = m.rows(), cols = m.cols();
  Map2d tmp(rows, cols), out(rows, cols);
  std::vector<double> line(static_cast<std::size_t>(std::max(rows, cols) + 2 * radius));
  auto convolve = [&](long n, auto&& get, auto&& put) {
    for (long k = -radius; k < n + radius; ++k) line[static_cast<std::size_t>(k + radius)] = get(reflect_index(k, n));
    for (long i = 0; i < n; ++i) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k) acc += kernel[k + radius] * line[static_cast<std::size_t>(i + k + radius)];
      put(i, acc);
    }
  };
  for (long r = 0; r < rows; ++r) {
    convolve(cols, [&](long c) { return m(r, c); }, [&](long c, double v) { tmp(r, c) = v; });
  }
  for (long c = 0; c < cols; ++c) {
    convolve(rows, [&](long r) { return tmp(r, c); }, [&](long r, double v) { out(r, c) = v; });
  }
  return out;
}

DeformationField sample_field(std::size_t width, std::size_t height, double amplitude, double sigma, Rng& rng) {
  if (width == 0 || height == 0) throw std::invalid_argument("sample_field: non-positive field dimensions");
  if (amplitude < 0.0 || !(sigma > 0.0)) throw std::invalid_argument("sample_field: amplitude must be >= 0, sigma > 0");
  const auto h = static_cast<Eigen::Index>(height), w = static_cast<Eigen::Index>(width);
  std::uniform_real_distribution<double> noise(-amplitude, amplitude);
  Map2d dx(h, w), dy(h, w);
  for (Eigen::Index i = 0; i < dx.size(); ++i) dx(i) = amplitude > 0.0 ? noise(rng) : 0.0;
  for (Eigen::Index i = 0; i < dy.size(); ++i) dy(i) = amplitude > 0.0 ? noise(rng) : 0.0;
  return {gaussian_smooth(dx, sigma), gaussian_smooth(dy, sigma)};
}

InversionResult invert_field(const DeformationField& f, int iterations, double tolerance) {
  const auto h = f.dx.rows(), w = f.dx.cols();
  InversionResult res;
  res.field = DeformationField::zero(static_cast<std::size_t>(w), static_cast<std::size_t>(h));
  DeformationField next = res.field;
  for (int it = 0; it < iterations; ++it) {
    double update = 0.0;
    for (Eigen::Index i = 0; i < h; ++i) {
      for (Eigen::Index j = 0; j < w; ++j) {
        const double y = static_cast<double>(i) + res.field.dy(i, j);
        const double x = static_cast<double>(j) + res.field.dx(i, j);
        next.dx(i, j) = -sample_bilinear(f.dx, y, x);
        next.dy(i, j) = -sample_bilinear(f.dy, y, x);
        update = std::max({update, std::abs(next.dx(i, j) - res.field.dx(i, j)),
                           std::abs(next.dy(i, j) - res.field.dy(i, j))});
      }
    }
    std::swap(res.field, next);
    res.iterations = it + 1;
    res.residual = update;
    if (update < tolerance) {
      res.converged = true;
      break;
    }
  }
  if (iterations <= 0) res.converged = f.max_magnitude() == 0.0;
  return res;
}

DeformationField compose_fields(const DeformationField& a, const DeformationField& b) {
  check_dims(a, b, "compose_fields");
  DeformationField c = a;
  for (Eigen::Index i = 0; i < a.dx.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.dx.cols(); ++j) {
      const double y = static_cast<double>(i) + a.dy(i, j);
      const double x = static_cast<double>(j) + a.dx(i, j);
      c.dx(i, j) += sample_bilinear(b.dx, y, x);
      c.dy(i, j) += sample_bilinear(b.dy, y, x);
    }
  }
  return c;
}

TransformPair TransformPair::elastic(DeformationField field, std::optional<DeformationField> inverse) {
  TransformPair t;
  t.kind_ = Kind::Elastic;
  t.field_ = std::move(field);
  t.inverse_ = std::move(inverse);
  return t;
}

const DeformationField& TransformPair::field() const {
  if (!field_) throw std::logic_error("TransformPair: identity transform has no field");
  return *field_;
}

const DeformationField& TransformPair::inverse(int iterations, double tolerance) const {
  if (!field_) throw std::logic_error("TransformPair: identity transform has no field");
  if (!inverse_) inverse_ = invert_field(*field_, iterations, tolerance).field;
  return *inverse_;
}

DeformationField TransformPair::field_or_zero(std::size_t width, std::size_t height) const {
  return field_ ? *field_ : DeformationField::zero(width, height);
}

DeformationField TransformPair::inverse_or_zero(std::size_t width, std::size_t height) const {
  return field_ ? inverse() : DeformationField::zero(width, height);
}

TransformPair sample_transform_pair(std::size_t width, std::size_t height, const DeformParams& params, Rng& rng,
                                    TransformSampleStats* stats) {
  if (uniform01(rng) < params.identity_probability) return TransformPair::identity();
  for (int attempt = 0; attempt <= params.max_redraws; ++attempt) {
    DeformationField f = sample_field(width, height, params.amplitude, params.sigma, rng);
    if (f.max_magnitude() <= params.max_displacement) {
      InversionResult inv = invert_field(f, params.invert_iterations, params.invert_tolerance);
      if (inv.converged) return TransformPair::elastic(std::move(f), std::move(inv.field));
    }
    if (stats) ++stats->redraws;
  }
  throw NumericalError("sample_transform_pair: no invertible field within " + std::to_string(params.max_redraws) +
                       " redraws");
}

std::vector<std::size_t> nearest_sources(const DeformationField& f) {
  const auto h = f.dx.rows(), w = f.dx.cols();
  std::vector<std::size_t> src(static_cast<std::size_t>(h * w));
  for (Eigen::Index i = 0; i < h; ++i) {
    for (Eigen::Index j = 0; j < w; ++j) {
      const Eigen::Index si = round_clamped(static_cast<double>(i) + f.dy(i, j), h);
      const Eigen::Index sj = round_clamped(static_cast<double>(j) + f.dx(i, j), w);
      src[static_cast<std::size_t>(i * w + j)] = static_cast<std::size_t>(si * w + sj);
    }
  }
  return src;
}

Map2d apply_to_image(const DeformationField& f, const Map2d& img) {
  check_image_dims(f, img, "apply_to_image");
  Map2d out(img.rows(), img.cols());
  for (Eigen::Index i = 0; i < img.rows(); ++i) {
    for (Eigen::Index j = 0; j < img.cols(); ++j) {
      out(i, j) = sample_bicubic(img, static_cast<double>(i) + f.dy(i, j), static_cast<double>(j) + f.dx(i, j));
    }
  }
  return out;
}

Map2d apply_to_image(const TransformPair& t, const Map2d& img) {
  return t.is_identity() ? img : apply_to_image(t.field(), img);
}

LabelMap apply_to_labels(const DeformationField& f, const LabelMap& labels) {
  check_image_dims(f, labels, "apply_to_labels");
  const auto src = nearest_sources(f);
  LabelMap out(labels.rows(), labels.cols());
  for (std::size_t p = 0; p < src.size(); ++p) out(static_cast<Eigen::Index>(p)) = labels(static_cast<Eigen::Index>(src[p]));
  return out;
}

LabelMap apply_to_labels(const TransformPair& t, const LabelMap& labels) {
  return t.is_identity() ? labels : apply_to_labels(t.field(), labels);
}

void write_field(std::ostream& os, const DeformationField& f) {
  os.write("WCF1", 4);
  io::write_u32(os, static_cast<std::uint32_t>(f.width()));
  io::write_u32(os, static_cast<std::uint32_t>(f.height()));
  for (Eigen::Index i = 0; i < f.dx.size(); ++i) io::write_f64(os, f.dx(i));
  for (Eigen::Index i = 0; i < f.dy.size(); ++i) io::write_f64(os, f.dy(i));
}

DeformationField read_field(std::istream& is) {
  io::expect_magic(is, "WCF1");
  const auto w = static_cast<Eigen::Index>(io::read_u32(is));
  const auto h = static_cast<Eigen::Index>(io::read_u32(is));
  Map2d dx(h, w), dy(h, w);
  for (Eigen::Index i = 0; i < dx.size(); ++i) dx(i) = io::read_f64(is);
  for (Eigen::Index i = 0; i < dy.size(); ++i) dy(i) = io::read_f64(is);
  return {std::move(dx), std::move(dy)};
}

void save_field(const std::filesystem::path& path, const DeformationField& f) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write field " + path.string());
  write_field(os, f);
}

DeformationField load_field(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing field " + path.string());
  try {
    return read_field(is);
  } catch (const std::runtime_error& e) {
    throw DataError("corrupt field " + path.string() + ": " + e.what());
  }
}

}  // namespace tcseg
