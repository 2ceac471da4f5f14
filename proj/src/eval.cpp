#include "tcseg/eval.hpp"

#include "tcseg/errors.hpp"
#include "tcseg/format.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace tcseg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D squared distance transform of f (lower envelope of parabolas).
void dt1d(const std::vector<double>& f, std::vector<double>& d) {
  const std::size_t n = f.size();
  std::vector<std::size_t> v(n);
  std::vector<double> z(n + 1);
  std::size_t k = 0;
  std::size_t first = n;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] < kInf) {
      first = q;
      break;
    }
  }
  if (first == n) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  v[0] = first;
  z[0] = -kInf;
  z[1] = kInf;
  for (std::size_t q = first + 1; q < n; ++q) {
    if (f[q] == kInf) continue;
    const auto qd = static_cast<double>(q);
    double s;
    while (true) {
      const auto vk = static_cast<double>(v[k]);
      s = ((f[q] + qd * qd) - (f[v[k]] + vk * vk)) / (2.0 * qd - 2.0 * vk);
      if (s <= z[k] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    if (s <= z[k]) {  // k == 0 and the new parabola dominates everywhere
      v[0] = q;
      z[1] = kInf;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const auto qd = static_cast<double>(q);
    while (z[k + 1] < qd) ++k;
    const double diff = qd - static_cast<double>(v[k]);
    d[q] = diff * diff + f[v[k]];
  }
}

template <typename Visit>
std::vector<std::vector<std::size_t>> components(Eigen::Index rows, Eigen::Index cols, Visit&& in_set) {
  std::vector<std::vector<std::size_t>> comps;
  std::vector<bool> seen(static_cast<std::size_t>(rows * cols), false);
  for (Eigen::Index start = 0; start < rows * cols; ++start) {
    if (seen[static_cast<std::size_t>(start)] || !in_set(start)) continue;
    std::vector<std::size_t> comp;
    std::deque<Eigen::Index> queue{start};
    seen[static_cast<std::size_t>(start)] = true;
    while (!queue.empty()) {
      const Eigen::Index p = queue.front();
      queue.pop_front();
      comp.push_back(static_cast<std::size_t>(p));
      const Eigen::Index r = p / cols, c = p % cols;
      const Eigen::Index nb[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (const auto& q : nb) {
        if (q[0] < 0 || q[0] >= rows || q[1] < 0 || q[1] >= cols) continue;
        const Eigen::Index idx = q[0] * cols + q[1];
        if (!seen[static_cast<std::size_t>(idx)] && in_set(idx)) {
          seen[static_cast<std::size_t>(idx)] = true;
          queue.push_back(idx);
        }
      }
    }
    comps.push_back(std::move(comp));
  }
  return comps;
}

}  // namespace

double hard_iou(const LabelMap& pred, const LabelMap& truth, std::int32_t cls) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
    throw std::invalid_argument("hard_iou: label maps are " + std::to_string(pred.rows()) + "x" +
                                std::to_string(pred.cols()) + " and " + std::to_string(truth.rows()) + "x" +
                                std::to_string(truth.cols()));
  }
  const auto p = pred == cls, t = truth == cls;
  const auto inter = (p && t).count(), uni = (p || t).count();
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

Mask contour(const Mask& mask) {
  Mask out = Mask::Constant(mask.rows(), mask.cols(), false);
  for (Eigen::Index i = 0; i < mask.rows(); ++i) {
    for (Eigen::Index j = 0; j < mask.cols(); ++j) {
      if (!mask(i, j)) continue;
      out(i, j) = i == 0 || j == 0 || i == mask.rows() - 1 || j == mask.cols() - 1 || !mask(i - 1, j) ||
                  !mask(i + 1, j) || !mask(i, j - 1) || !mask(i, j + 1);
    }
  }
  return out;
}

Map2d distance_transform(const Mask& sites) {
  const auto rows = static_cast<std::size_t>(sites.rows()), cols = static_cast<std::size_t>(sites.cols());
  Map2d sq(sites.rows(), sites.cols());
  std::vector<double> f(cols), d(cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) f[j] = sites(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) ? 0.0 : kInf;
    dt1d(f, d);
    for (std::size_t j = 0; j < cols; ++j) sq(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = d[j];
  }
  f.resize(rows);
  d.resize(rows);
  for (std::size_t j = 0; j < cols; ++j) {
    for (std::size_t i = 0; i < rows; ++i) f[i] = sq(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    dt1d(f, d);
    for (std::size_t i = 0; i < rows; ++i) sq(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = d[i];
  }
  // scalar sqrt: Eigen's vectorised path does not map inf to inf
  return sq.unaryExpr([](double v) { return std::sqrt(v); });
}

std::optional<double> macd(const Mask& pred, const Mask& truth, double pixel_size) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
    throw std::invalid_argument("macd: masks differ in size");
  }
  if (!pred.any() || !truth.any()) return std::nullopt;
  const Mask cp = contour(pred), ct = contour(truth);
  const Map2d to_truth = distance_transform(ct), to_pred = distance_transform(cp);
  double a = 0.0, b = 0.0;
  for (Eigen::Index i = 0; i < cp.size(); ++i) {
    if (cp(i)) a += to_truth(i);
    if (ct(i)) b += to_pred(i);
  }
  const double mean_a = a / static_cast<double>(cp.count()), mean_b = b / static_cast<double>(ct.count());
  return 0.5 * (mean_a + mean_b) * pixel_size;
}

LabelMap postprocess(const LabelMap& labels, const std::vector<std::size_t>& keep) {
  LabelMap out = labels;
  const Eigen::Index rows = out.rows(), cols = out.cols();
  if (out.size() == 0) return out;
  const std::int32_t max_class = out.maxCoeff();
  for (std::int32_t c = 1; c <= max_class; ++c) {
    const auto ci = static_cast<std::size_t>(c - 1);
    const std::size_t k = ci < keep.size() ? keep[ci] : 1;
    auto comps = components(rows, cols, [&](Eigen::Index p) { return out(p) == c; });
    if (comps.size() <= k) continue;
    std::stable_sort(comps.begin(), comps.end(), [](const auto& a, const auto& b) { return a.size() > b.size(); });
    for (std::size_t i = k; i < comps.size(); ++i)
      for (std::size_t p : comps[i]) out(static_cast<Eigen::Index>(p)) = 0;
  }
  const auto holes = components(rows, cols, [&](Eigen::Index p) { return out(p) == 0; });
  for (const auto& comp : holes) {
    bool touches_border = false;
    std::map<std::int32_t, std::size_t> votes;
    for (std::size_t p : comp) {
      const Eigen::Index r = static_cast<Eigen::Index>(p) / cols, c = static_cast<Eigen::Index>(p) % cols;
      if (r == 0 || c == 0 || r == rows - 1 || c == cols - 1) {
        touches_border = true;
        break;
      }
      for (const auto& [dr, dc] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
        const std::int32_t v = out(r + dr, c + dc);
        if (v != 0) ++votes[v];
      }
    }
    if (touches_border || votes.empty()) continue;
    std::int32_t fill = votes.begin()->first;
    std::size_t best = 0;
    for (const auto& [cls, n] : votes) {
      if (n > best) {
        best = n;
        fill = cls;
      }
    }
    for (std::size_t p : comp) out(static_cast<Eigen::Index>(p)) = fill;
  }
  return out;
}

LabelMap argmax_labels(const Tensor& probs, std::size_t b) {
  const auto& s = probs.shape();
  LabelMap out = LabelMap::Zero(static_cast<Eigen::Index>(s.height()), static_cast<Eigen::Index>(s.width()));
  Map2d best = probs.plane(b, 0);
  for (std::size_t c = 1; c < s.channels(); ++c) {
    const auto p = probs.plane(b, c);
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      if (p(i) > best(i)) {
        best(i) = p(i);
        out(i) = static_cast<std::int32_t>(c);
      }
    }
  }
  return out;
}

ImageScores score_image(const LabelMap& pred, const LabelMap& truth, std::size_t n_classes, double pixel_size) {
  ImageScores s;
  for (std::size_t c = 1; c < n_classes; ++c) {
    const auto cls = static_cast<std::int32_t>(c);
    s.iou.push_back(hard_iou(pred, truth, cls));
    s.macd.push_back(macd(pred == cls, truth == cls, pixel_size));
  }
  return s;
}

double mean_iou(const LabelMap& pred, const LabelMap& truth, std::size_t n_classes) {
  double acc = 0.0;
  for (std::size_t c = 1; c < n_classes; ++c) acc += hard_iou(pred, truth, static_cast<std::int32_t>(c));
  return acc / static_cast<double>(n_classes - 1);
}

MetricsRow summarize(std::string regime, std::size_t labeled_size, std::uint64_t seed,
                     const std::vector<ImageScores>& images, std::size_t* undefined_macd) {
  MetricsRow row{std::move(regime), labeled_size, seed, {}, {}, 0.0};
  if (images.empty()) return row;
  const std::size_t k = images.front().iou.size();
  row.per_class_iou.assign(k, 0.0);
  row.per_class_macd.assign(k, std::nullopt);
  for (std::size_t c = 0; c < k; ++c) {
    double iou = 0.0, dist = 0.0;
    std::size_t defined = 0;
    for (const auto& im : images) {
      iou += im.iou[c];
      if (im.macd[c]) {
        dist += *im.macd[c];
        ++defined;
      } else if (undefined_macd) {
        ++*undefined_macd;
      }
    }
    row.per_class_iou[c] = iou / static_cast<double>(images.size());
    if (defined > 0) row.per_class_macd[c] = dist / static_cast<double>(defined);
  }
  double acc = 0.0;
  for (double v : row.per_class_iou) acc += v;
  row.miou = k ? acc / static_cast<double>(k) : 0.0;
  return row;
}

const std::vector<std::string>& regime_order() {
  static const std::vector<std::string> order{"baseline", "suptc", "semitc", "semitc+"};
  return order;
}

std::vector<TableCell> results_table(const std::vector<MetricsRow>& rows) {
  auto rank = [](const std::string& r) {
    const auto& o = regime_order();
    return static_cast<std::size_t>(std::find(o.begin(), o.end(), r) - o.begin());
  };
  std::map<std::tuple<std::size_t, std::string, std::size_t>, std::vector<const MetricsRow*>> groups;
  for (const auto& r : rows) groups[{rank(r.regime), r.regime, r.labeled_size}].push_back(&r);

  std::vector<TableCell> cells;
  for (const auto& [key, members] : groups) {
    TableCell cell;
    cell.regime = std::get<1>(key);
    cell.labeled_size = std::get<2>(key);
    cell.n = members.size();
    double sum = 0.0;
    for (const auto* m : members) sum += m->miou;
    cell.miou_mean = sum / static_cast<double>(cell.n);
    if (cell.n > 1) {
      double ss = 0.0;
      for (const auto* m : members) ss += (m->miou - cell.miou_mean) * (m->miou - cell.miou_mean);
      cell.miou_std = std::sqrt(ss / static_cast<double>(cell.n - 1));
    }
    const std::size_t k = members.front()->per_class_iou.size();
    cell.class_iou_mean.assign(k, 0.0);
    cell.class_macd_mean.assign(k, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
      double macd_sum = 0.0;
      std::size_t defined = 0;
      for (const auto* m : members) {
        cell.class_iou_mean[c] += m->per_class_iou.at(c) / static_cast<double>(cell.n);
        if (c < m->per_class_macd.size() && m->per_class_macd[c]) {
          macd_sum += *m->per_class_macd[c];
          ++defined;
        }
      }
      cell.class_macd_mean[c] = defined ? macd_sum / static_cast<double>(defined) : std::nan("");
    }
    cells.push_back(std::move(cell));
  }
  return cells;
}

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
  os << "regime,labeled_size,seed,class,iou,macd\n";
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.per_class_iou.size(); ++c) {
      os << r.regime << "," << r.labeled_size << "," << r.seed << "," << (c + 1) << ","
         << format_double(r.per_class_iou[c]) << ",";
      if (c < r.per_class_macd.size() && r.per_class_macd[c]) os << format_double(*r.per_class_macd[c]);
      os << "\n";
    }
  }
}

std::vector<MetricsRow> read_metrics_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "regime,labeled_size,seed,class,iou,macd") {
    throw DataError("unexpected metrics CSV header");
  }
  std::vector<MetricsRow> rows;
  std::map<std::tuple<std::string, std::size_t, std::uint64_t>, std::size_t> index;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) f.push_back(col);
    if (f.size() == 5) f.emplace_back();
    if (f.size() != 6) throw DataError("malformed metrics row: " + line);
    const auto key = std::make_tuple(f[0], std::stoul(f[1]), std::stoull(f[2]));
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, rows.size()).first;
      rows.push_back(MetricsRow{f[0], std::get<1>(key), std::get<2>(key), {}, {}, 0.0});
    }
    MetricsRow& r = rows[it->second];
    const std::size_t cls = std::stoul(f[3]);
    if (cls != r.per_class_iou.size() + 1) throw DataError("metrics classes out of order: " + line);
    r.per_class_iou.push_back(std::stod(f[4]));
    r.per_class_macd.push_back(f[5].empty() ? std::nullopt : std::optional<double>(std::stod(f[5])));
  }
  for (auto& r : rows) {
    double acc = 0.0;
    for (double v : r.per_class_iou) acc += v;
    r.miou = r.per_class_iou.empty() ? 0.0 : acc / static_cast<double>(r.per_class_iou.size());
  }
  return rows;
}

void write_aggregate_csv(std::ostream& os, const std::vector<TableCell>& cells) {
  const std::size_t k = cells.empty() ? 0 : cells.front().class_iou_mean.size();
  os << "regime,labeled_size,n_seeds,miou_mean,miou_std";
  for (std::size_t c = 1; c <= k; ++c) os << ",iou_c" << c;
  for (std::size_t c = 1; c <= k; ++c) os << ",macd_c" << c;
  os << "\n";
  for (const auto& cell : cells) {
    os << cell.regime << "," << cell.labeled_size << "," << cell.n << "," << format_double(cell.miou_mean) << ","
       << format_double(cell.miou_std);
    for (double v : cell.class_iou_mean) os << "," << format_double(v);
    for (double v : cell.class_macd_mean) os << "," << (std::isnan(v) ? std::string() : format_double(v));
    os << "\n";
  }
}

std::size_t write_wide_table_csv(std::ostream& os, const std::vector<TableCell>& cells) {
  std::set<std::size_t> sizes;
  std::vector<std::string> regimes;
  for (const auto& c : cells) {
    sizes.insert(c.labeled_size);
    if (std::find(regimes.begin(), regimes.end(), c.regime) == regimes.end()) regimes.push_back(c.regime);
  }
  os << "regime";
  for (std::size_t s : sizes) os << "," << s;
  os << "\n";
  std::size_t missing = 0;
  for (const auto& r : regimes) {
    os << r;
    for (std::size_t s : sizes) {
      os << ",";
      auto it = std::find_if(cells.begin(), cells.end(),
                             [&](const TableCell& c) { return c.regime == r && c.labeled_size == s; });
      if (it == cells.end()) {
        ++missing;
        continue;
      }
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(1) << 100.0 * it->miou_mean << " ± " << 100.0 * it->miou_std;
      os << cell.str();
    }
    os << "\n";
  }
  return missing;
}

void write_plot_csv(std::ostream& os, const std::vector<TableCell>& cells) {
  os << "regime,labeled_size,miou,miou_std\n";
  for (const auto& c : cells) {
    os << c.regime << "," << c.labeled_size << "," << format_double(c.miou_mean) << "," << format_double(c.miou_std)
       << "\n";
  }
}

}  // namespace tcseg
