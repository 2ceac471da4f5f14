#include "tcseg/synthdata.hpp"

#include "tcseg/errors.hpp"

#include <algorithm>
#include <array>
#include <optional>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

namespace tcseg {

namespace {

struct Blob {
  double cx, cy;  // normalised centre
  double rx, ry;  // normalised radii
  double angle;
  std::array<double, 3> amp;  // Fourier harmonics 2..4
  std::array<double, 3> phase;
};

Blob random_blob(Rng& rng, double cx, double cy, double rx, double ry, double angle, double jitter, double wobble) {
  std::uniform_real_distribution<double> j(-jitter, jitter), s(0.9, 1.1), a(-wobble, wobble),
      ph(0.0, 2.0 * std::numbers::pi);
  Blob b{cx + j(rng), cy + j(rng), rx * s(rng), ry * s(rng), angle, {}, {}};
  for (std::size_t k = 0; k < 3; ++k) {
    b.amp[k] = a(rng);
    b.phase[k] = ph(rng);
  }
  return b;
}

bool inside(const Blob& b, double u, double v) {
  const double c = std::cos(b.angle), s = std::sin(b.angle);
  const double du = u - b.cx, dv = v - b.cy;
  const double x = (c * du + s * dv) / b.rx, y = (-s * du + c * dv) / b.ry;
  const double theta = std::atan2(y, x);
  double r = 1.0;
  for (std::size_t k = 0; k < 3; ++k) r += b.amp[k] * std::cos(static_cast<double>(k + 2) * theta + b.phase[k]);
  return x * x + y * y <= r * r;
}

void paint(const Blob& b, std::int32_t cls, double intensity, LabelMap& labels, Map2d& base) {
  const auto n = static_cast<double>(labels.rows());
  for (Eigen::Index i = 0; i < labels.rows(); ++i) {
    for (Eigen::Index j = 0; j < labels.cols(); ++j) {
      if (inside(b, (static_cast<double>(j) + 0.5) / n, (static_cast<double>(i) + 0.5) / n)) {
        labels(i, j) = cls;
        base(i, j) = intensity;
      }
    }
  }
}

std::optional<Scene> try_scene(Rng& rng, const SceneParams& p) {
  const auto n = static_cast<Eigen::Index>(p.size);
  const double nd = static_cast<double>(p.size);
  LabelMap labels = LabelMap::Zero(n, n);
  Map2d base = Map2d::Constant(n, n, 0.12);

  // body outline (background class)
  const Blob body = random_blob(rng, 0.5, 0.55, 0.46, 0.52, 0.0, 0.02, 0.03);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (inside(body, (static_cast<double>(j) + 0.5) / nd, (static_cast<double>(i) + 0.5) / nd)) base(i, j) = 0.5;

  std::uniform_real_distribution<double> tone(-0.04, 0.04);
  if (p.n_structures >= 1) {
    const double t = 0.27 + tone(rng);
    paint(random_blob(rng, 0.30, 0.50, 0.13, 0.27, 0.0, 0.025, 0.07), 1, t, labels, base);
    paint(random_blob(rng, 0.70, 0.50, 0.13, 0.27, 0.0, 0.025, 0.07), 1, t, labels, base);
  }
  if (p.n_structures >= 2) {
    paint(random_blob(rng, 0.56, 0.66, 0.14, 0.12, 0.3, 0.03, 0.06), 2, 0.64 + tone(rng), labels, base);
  }
  if (p.n_structures >= 3) {
    const double t = 0.78 + tone(rng);
    const double thickness = std::max(0.035, 1.6 / nd);  // at least ~3 px across
    paint(random_blob(rng, 0.30, 0.17, 0.17, thickness, 0.25, 0.02, 0.05), 3, t, labels, base);
    paint(random_blob(rng, 0.70, 0.17, 0.17, thickness, -0.25, 0.02, 0.05), 3, t, labels, base);
  }
  std::uniform_real_distribution<double> pos(0.2, 0.8);
  for (std::size_t c = 4; c <= p.n_structures; ++c) {
    paint(random_blob(rng, pos(rng), pos(rng), 0.06, 0.06, 0.0, 0.0, 0.05), static_cast<std::int32_t>(c),
          0.9 + tone(rng), labels, base);
  }

  // unlabeled rib-like arcs
  Map2d image = base;
  std::uniform_real_distribution<double> rib_phase(0.0, 2.0 * std::numbers::pi), rib_jit(-0.02, 0.02);
  const double rib_width = 0.012;
  for (std::size_t r = 0; r < p.rib_count; ++r) {
    const double y0 = 0.3 + 0.45 * (static_cast<double>(r) + 0.5) / static_cast<double>(std::max<std::size_t>(p.rib_count, 1)) + rib_jit(rng);
    const double ph = rib_phase(rng);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        const double u = (static_cast<double>(j) + 0.5) / nd, v = (static_cast<double>(i) + 0.5) / nd;
        const double curve = y0 - 0.06 * std::cos(2.0 * std::numbers::pi * u + ph) * 0.5 + 0.08 * (u - 0.5) * (u - 0.5);
        const double d = (v - curve) / rib_width;
        if (labels(i, j) == 1) image(i, j) += 0.13 * std::exp(-0.5 * d * d);
      }
    }
  }

  // smooth multiplicative-looking bias and noise
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Map2d bias(n, n);
  for (Eigen::Index i = 0; i < bias.size(); ++i) bias(i) = unit(rng);
  bias = gaussian_smooth(bias, nd / 6.0);
  const double peak = bias.abs().maxCoeff();
  if (peak > 0.0) bias *= p.bias_amplitude / peak;
  std::normal_distribution<double> noise(0.0, p.noise_sigma);
  for (Eigen::Index i = 0; i < image.size(); ++i) image(i) += bias(i) + noise(rng);

  // pose variety
  if (p.pose_deformation > 0.0) {
    const DeformParams d = DeformParams::for_image_size(p.size);
    const DeformationField f = sample_field(p.size, p.size, d.amplitude * p.pose_deformation, d.sigma, rng);
    image = apply_to_image(f, image);
    labels = apply_to_labels(f, labels);
  }
  image = image.max(0.0).min(1.0);

  // every class present, every structure distinguishable from background
  const auto bg_mask = (labels == 0).cast<double>();
  if (bg_mask.sum() == 0.0) return std::nullopt;
  const double bg_mean = (image * bg_mask).sum() / bg_mask.sum();
  for (std::size_t c = 1; c <= p.n_structures; ++c) {
    const auto mask = (labels == static_cast<std::int32_t>(c)).cast<double>();
    const double count = mask.sum();
    if (count == 0.0) return std::nullopt;
    if (std::abs((image * mask).sum() / count - bg_mean) < p.min_contrast) return std::nullopt;
  }
  return Scene{std::move(image), std::move(labels)};
}

std::string manifest_split(const SplitPlan& plan, std::size_t id) {
  auto has = [&](const std::vector<std::size_t>& v) { return std::find(v.begin(), v.end(), id) != v.end(); };
  if (has(plan.train_ids)) return "train";
  if (has(plan.val_ids)) return "val";
  if (has(plan.test_ids)) return "test";
  return "unused";
}

std::string read_token(std::istream& is) {
  std::string tok;
  while (is) {
    is >> std::ws;
    if (is.peek() == '#') {
      std::string comment;
      std::getline(is, comment);
      continue;
    }
    is >> tok;
    break;
  }
  return tok;
}

struct PgmHeader {
  std::size_t width, height, maxval;
};

PgmHeader read_pgm_header(std::istream& is, const std::filesystem::path& path) {
  if (read_token(is) != "P5") throw DataError("not a binary PGM: " + path.string());
  try {
    PgmHeader h{std::stoul(read_token(is)), std::stoul(read_token(is)), std::stoul(read_token(is))};
    is.get();  // single whitespace before the raster
    return h;
  } catch (const std::logic_error&) {
    throw DataError("malformed PGM header: " + path.string());
  }
}

}  // namespace

std::vector<std::size_t> structure_parts(std::size_t n_structures) {
  std::vector<std::size_t> parts(n_structures, 1);
  if (n_structures >= 1) parts[0] = 2;
  if (n_structures >= 3) parts[2] = 2;
  return parts;
}

std::vector<FractionBand> class_fraction_bands(std::size_t n_structures) {
  std::vector<FractionBand> bands{{0.55, 0.85}, {0.12, 0.30}, {0.025, 0.09}, {0.012, 0.06}};
  while (bands.size() < n_structures + 1) bands.push_back({0.002, 0.03});
  bands.resize(n_structures + 1);
  return bands;
}

Scene generate_scene(std::uint64_t seed, const SceneParams& params) {
  if (params.n_structures < 1) throw std::invalid_argument("generate_scene: n_structures must be >= 1");
  if (params.size < 8) throw std::invalid_argument("generate_scene: size must be >= 8");
  for (int attempt = 0; attempt < params.max_retries; ++attempt) {
    Rng rng(derive_seed(seed, "scene", static_cast<std::uint64_t>(attempt)));
    if (auto s = try_scene(rng, params)) return std::move(*s);
  }
  throw DataError("generate_scene: no valid scene after " + std::to_string(params.max_retries) +
                  " retries for seed " + std::to_string(seed));
}

const std::vector<std::size_t>& SplitPlan::labeled_subset(std::size_t size) const {
  for (std::size_t i = 0; i < subset_sizes.size(); ++i) {
    if (subset_sizes[i] == size) return subsets[i];
  }
  throw UsageError("no labeled subset of size " + std::to_string(size) + " in the split plan");
}

std::vector<std::size_t> SplitPlan::train_unlabeled(std::size_t labeled_size) const {
  const auto& sub = labeled_subset(labeled_size);
  const std::set<std::size_t> in(sub.begin(), sub.end());
  std::vector<std::size_t> out;
  for (std::size_t id : train_ids) {
    if (!in.count(id)) out.push_back(id);
  }
  return out;
}

SplitPlan make_splits(std::size_t n_total, std::uint64_t seed, double train_fraction,
                      std::vector<std::size_t> subset_sizes) {
  std::sort(subset_sizes.begin(), subset_sizes.end());
  const std::size_t largest = subset_sizes.empty() ? 0 : subset_sizes.back();
  if (n_total < 2 * largest || n_total < 2) {
    throw UsageError("make_splits: n_total = " + std::to_string(n_total) + " is too small for a labeled subset of " +
                     std::to_string(largest));
  }
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw UsageError("make_splits: train_fraction must be in (0, 1]");
  Rng rng(derive_seed(seed, "splits"));
  const std::size_t parity = std::uniform_int_distribution<std::size_t>(0, 1)(rng);

  SplitPlan plan;
  std::vector<std::size_t> rest;
  for (std::size_t id = 0; id < n_total; ++id) (id % 2 == parity ? plan.test_ids : rest).push_back(id);
  std::shuffle(rest.begin(), rest.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(rest.size())));
  if (n_train < largest) {
    throw UsageError("make_splits: training portion of " + std::to_string(n_train) +
                     " cannot hold a labeled subset of " + std::to_string(largest));
  }
  plan.train_ids.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_train));
  plan.val_ids.assign(rest.begin() + static_cast<std::ptrdiff_t>(n_train), rest.end());

  std::vector<std::size_t> order = plan.train_ids;
  std::shuffle(order.begin(), order.end(), rng);
  plan.subset_sizes = subset_sizes;
  for (std::size_t k : subset_sizes) {
    plan.subsets.emplace_back(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(plan.subsets.back().begin(), plan.subsets.back().end());
  }
  std::sort(plan.train_ids.begin(), plan.train_ids.end());
  std::sort(plan.val_ids.begin(), plan.val_ids.end());
  return plan;
}

LabeledPool labeled_pool(const Dataset& data, const std::vector<std::size_t>& ids) {
  LabeledPool pool;
  for (std::size_t id : ids) {
    pool.ids.push_back(id);
    pool.scenes.push_back(&data.scenes.at(id));
  }
  return pool;
}

ImagePool image_pool(const Dataset& data, const std::vector<std::size_t>& ids) {
  ImagePool pool;
  for (std::size_t id : ids) {
    pool.ids.push_back(id);
    pool.images.push_back(&data.scenes.at(id).image);
  }
  return pool;
}

void write_pgm16(const std::filesystem::path& path, const Map2d& image) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << "P5\n" << image.cols() << " " << image.rows() << "\n65535\n";
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    const auto v = static_cast<std::uint16_t>(std::lround(std::clamp(image(i), 0.0, 1.0) * 65535.0));
    const char bytes[2] = {static_cast<char>(v >> 8), static_cast<char>(v & 0xff)};
    os.write(bytes, 2);
  }
  if (!os) throw DataError("write failed: " + path.string());
}

Map2d read_pgm16(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing image " + path.string());
  const PgmHeader h = read_pgm_header(is, path);
  if (h.maxval != 65535) throw DataError("expected 16-bit PGM: " + path.string());
  Map2d m(static_cast<Eigen::Index>(h.height), static_cast<Eigen::Index>(h.width));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    unsigned char b[2];
    if (!is.read(reinterpret_cast<char*>(b), 2)) throw DataError("truncated PGM: " + path.string());
    m(i) = static_cast<double>((b[0] << 8) | b[1]) / 65535.0;
  }
  return m;
}

void write_label_pgm(const std::filesystem::path& path, const LabelMap& labels) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << "P5\n" << labels.cols() << " " << labels.rows() << "\n255\n";
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    if (labels(i) < 0 || labels(i) > 255) throw DataError("label value out of range for 8-bit PGM");
    os.put(static_cast<char>(labels(i)));
  }
  if (!os) throw DataError("write failed: " + path.string());
}

LabelMap read_label_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing label map " + path.string());
  const PgmHeader h = read_pgm_header(is, path);
  if (h.maxval > 255) throw DataError("expected 8-bit label PGM: " + path.string());
  LabelMap m(static_cast<Eigen::Index>(h.height), static_cast<Eigen::Index>(h.width));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const int c = is.get();
    if (c == EOF) throw DataError("truncated PGM: " + path.string());
    m(i) = c;
  }
  return m;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  std::filesystem::create_directories(dir / "labels", ec);
  if (ec) throw DataError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  std::ofstream manifest(dir / "manifest.csv", std::ios::trunc);
  if (!manifest) throw DataError("cannot write " + (dir / "manifest.csv").string());
  manifest << "id,image,label,split";
  for (std::size_t k : data.plan.subset_sizes) manifest << ",labeled_" << k;
  manifest << "\n";
  for (std::size_t id = 0; id < data.scenes.size(); ++id) {
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.pgm", id);
    const std::string img = std::string("images/") + name, lab = std::string("labels/") + name;
    write_pgm16(dir / img, data.scenes[id].image);
    write_label_pgm(dir / lab, data.scenes[id].labels);
    manifest << id << "," << img << "," << lab << "," << manifest_split(data.plan, id);
    for (const auto& sub : data.plan.subsets) manifest << "," << (std::find(sub.begin(), sub.end(), id) != sub.end() ? 1 : 0);
    manifest << "\n";
  }
  if (!manifest) throw DataError("write failed: " + (dir / "manifest.csv").string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.csv");
  if (!manifest) throw DataError("missing dataset manifest " + (dir / "manifest.csv").string());
  std::string line;
  std::getline(manifest, line);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) header.push_back(col);
  }
  if (header.size() < 4 || header[0] != "id" || header[3] != "split") {
    throw DataError("unexpected manifest header in " + (dir / "manifest.csv").string());
  }
  Dataset data;
  for (std::size_t c = 4; c < header.size(); ++c) {
    if (header[c].rfind("labeled_", 0) != 0) throw DataError("unexpected manifest column " + header[c]);
    data.plan.subset_sizes.push_back(std::stoul(header[c].substr(8)));
  }
  data.plan.subsets.resize(data.plan.subset_sizes.size());
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) f.push_back(col);
    if (f.size() != header.size()) throw DataError("malformed manifest row: " + line);
    const std::size_t id = std::stoul(f[0]);
    if (id != data.scenes.size()) throw DataError("manifest ids must be consecutive from 0, got " + f[0]);
    data.scenes.push_back(Scene{read_pgm16(dir / f[1]), read_label_pgm(dir / f[2])});
    if (f[3] == "train") data.plan.train_ids.push_back(id);
    else if (f[3] == "val") data.plan.val_ids.push_back(id);
    else if (f[3] == "test") data.plan.test_ids.push_back(id);
    for (std::size_t c = 4; c < f.size(); ++c) {
      if (f[c] == "1") data.plan.subsets[c - 4].push_back(id);
    }
  }
  for (std::size_t i = 0; i < data.plan.subsets.size(); ++i) {
    if (data.plan.subsets[i].size() != data.plan.subset_sizes[i]) {
      throw DataError("manifest subset labeled_" + std::to_string(data.plan.subset_sizes[i]) + " has " +
                      std::to_string(data.plan.subsets[i].size()) + " members");
    }
  }
  return data;
}

}  // namespace tcseg
