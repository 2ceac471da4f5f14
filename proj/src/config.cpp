#include "tcseg/config.hpp"

#include "tcseg/errors.hpp"
#include "tcseg/format.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace tcseg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  T v{};
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw UsageError("config key '" + key + "': cannot parse '" + text + "'");
  }
  return v;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  for (const auto& item : split_list(text)) out.push_back(parse_number<T>(key, item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ",";
    if constexpr (std::is_floating_point_v<T>) {
      os << format_double(v[i]);
    } else {
      os << v[i];
    }
  }
  return os.str();
}

struct Entry {
  std::string key;
  std::string doc;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
};

template <typename T>
Entry number(std::string key, std::string doc, T ExperimentConfig::*field) {
  return {std::move(key), std::move(doc),
          [field](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(c.*field);
            } else {
              return std::to_string(c.*field);
            }
          },
          [field](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*field = parse_number<T>(k, v); }};
}

template <typename T>
Entry list(std::string key, std::string doc, std::vector<T> ExperimentConfig::*field) {
  return {std::move(key), std::move(doc), [field](const ExperimentConfig& c) { return join(c.*field); },
          [field](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*field = parse_list<T>(k, v); }};
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table{
      number("data.n_total", "number of generated scenes", &ExperimentConfig::n_total),
      number("data.image_size", "scene width and height in pixels", &ExperimentConfig::image_size),
      number("data.n_structures", "foreground classes per scene", &ExperimentConfig::n_structures),
      number("data.noise_sigma", "additive Gaussian noise", &ExperimentConfig::noise_sigma),
      number("data.bias_amplitude", "peak of the smooth intensity bias", &ExperimentConfig::bias_amplitude),
      number("data.min_contrast", "minimum structure/background mean difference", &ExperimentConfig::min_contrast),
      number("data.pose_deformation", "pose deformation strength relative to the transform amplitude",
             &ExperimentConfig::pose_deformation),
      number("data.train_fraction", "share of non-test scenes used for training", &ExperimentConfig::train_fraction),
      number("data.seed", "seed for scenes and splits", &ExperimentConfig::data_seed),
      list("data.subset_sizes", "nested labeled subset sizes", &ExperimentConfig::subset_sizes),
      number("model.depth", "resolution levels", &ExperimentConfig::depth),
      number("model.base_channels", "channels at the top level", &ExperimentConfig::base_channels),
      number("deform.amplitude", "uniform noise half-range at 512 px", &ExperimentConfig::deform_amplitude),
      number("deform.sigma", "Gaussian smoothing at 512 px", &ExperimentConfig::deform_sigma),
      number("deform.identity_probability", "chance a transform is the identity",
             &ExperimentConfig::identity_probability),
      number("deform.invert_iterations", "fixed-point iterations for field inversion",
             &ExperimentConfig::invert_iterations),
      number("deform.invert_tolerance", "inversion convergence threshold in px", &ExperimentConfig::invert_tolerance),
      number("train.batch_size", "items per mini-batch", &ExperimentConfig::batch_size),
      number("train.stage1_epochs", "epoch cap for supervised pre-training", &ExperimentConfig::stage1_epochs),
      number("train.finetune_epochs", "epoch cap for each fine-tune", &ExperimentConfig::finetune_epochs),
      number("train.steps_per_epoch", "optimizer steps between validations", &ExperimentConfig::steps_per_epoch),
      number("train.patience", "epochs without validation gain before stopping", &ExperimentConfig::patience),
      number("train.lambda", "weight of the consistency term", &ExperimentConfig::lambda),
      number("train.rho", "Adadelta decay", &ExperimentConfig::rho),
      number("train.epsilon", "Adadelta epsilon", &ExperimentConfig::epsilon),
      number("train.learning_rate", "Adadelta step multiplier", &ExperimentConfig::learning_rate),
      {"train.warp_gradient", "scatter_add | inverse_warp | blocked",
       [](const ExperimentConfig& c) { return warp_gradient_name(c.warp_gradient); },
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         const std::string t = trim(v);
         for (WarpGradient w : {WarpGradient::ScatterAdd, WarpGradient::InverseWarp, WarpGradient::Blocked}) {
           if (warp_gradient_name(w) == t) {
             c.warp_gradient = w;
             return;
           }
         }
         throw UsageError("config key '" + k + "': unknown warp gradient '" + v + "'");
       }},
      {"grid.regimes", "regimes to fine-tune", [](const ExperimentConfig& c) { return join(c.regimes); },
       [](ExperimentConfig& c, const std::string&, const std::string& v) {
         c.regimes = split_list(v);
         for (const auto& r : c.regimes) parse_regime(r);
       }},
      list("grid.labeled_sizes", "labeled subset sizes to train", &ExperimentConfig::labeled_sizes),
      list("grid.seeds", "training seeds", &ExperimentConfig::seeds),
      number("eval.pixel_size", "contour distance unit", &ExperimentConfig::pixel_size),
      {"output.dir", "root of all outputs", [](const ExperimentConfig& c) { return c.output_dir.string(); },
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         if (trim(v).empty()) throw UsageError("config key '" + k + "' must not be empty");
         c.output_dir = trim(v);
       }},
  };
  return table;
}

const Entry& find_entry(const std::string& key) {
  for (const auto& e : entries()) {
    if (e.key == key) return e;
  }
  throw UsageError("unknown config key '" + key + "'");
}

}  // namespace

std::string warp_gradient_name(WarpGradient w) {
  switch (w) {
    case WarpGradient::ScatterAdd: return "scatter_add";
    case WarpGradient::InverseWarp: return "inverse_warp";
    case WarpGradient::Blocked: return "blocked";
  }
  return "?";
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw UsageError("invalid config: " + msg); };
  try {
    network_config().validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  if (n_structures < 1) fail("data.n_structures must be >= 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) fail("data.train_fraction must be in (0, 1)");
  if (batch_size == 0) fail("train.batch_size must be positive");
  if (steps_per_epoch == 0) fail("train.steps_per_epoch must be positive");
  if (!(rho > 0.0 && rho < 1.0)) fail("train.rho must be in (0, 1)");
  if (!(epsilon > 0.0)) fail("train.epsilon must be positive");
  if (!(learning_rate > 0.0)) fail("train.learning_rate must be positive");
  if (lambda < 0.0) fail("train.lambda must be >= 0");
  if (!(identity_probability >= 0.0 && identity_probability <= 1.0)) {
    fail("deform.identity_probability must be in [0, 1]");
  }
  if (!(deform_sigma > 0.0) || deform_amplitude < 0.0) fail("deform.sigma must be positive, deform.amplitude >= 0");
  for (std::size_t s : labeled_sizes) {
    if (std::find(subset_sizes.begin(), subset_sizes.end(), s) == subset_sizes.end()) {
      fail("grid.labeled_sizes contains " + std::to_string(s) + ", which is not in data.subset_sizes");
    }
  }
  for (const auto& r : regimes) {
    if (is_semi_supervised(parse_regime(r)) && batch_size % 2 != 0) {
      fail("train.batch_size must be even for regime " + r);
    }
  }
}

SceneParams ExperimentConfig::scene_params() const {
  SceneParams p;
  p.size = image_size;
  p.n_structures = n_structures;
  p.noise_sigma = noise_sigma;
  p.bias_amplitude = bias_amplitude;
  p.min_contrast = min_contrast;
  p.pose_deformation = pose_deformation;
  return p;
}

NetworkConfig ExperimentConfig::network_config() const {
  NetworkConfig n;
  n.input_size = image_size;
  n.n_classes = n_structures + 1;
  n.depth = depth;
  n.base_channels = base_channels;
  return n;
}

DeformParams ExperimentConfig::deform_params() const {
  DeformParams d;
  const double scale = static_cast<double>(image_size) / 512.0;
  d.amplitude = deform_amplitude * scale;
  d.sigma = deform_sigma * scale;
  d.max_displacement = d.sigma;
  d.identity_probability = identity_probability;
  d.invert_iterations = invert_iterations;
  d.invert_tolerance = invert_tolerance;
  return d;
}

StageOptions ExperimentConfig::stage_options(bool finetune) const {
  StageOptions o;
  o.batch_size = batch_size;
  o.max_epochs = finetune ? finetune_epochs : stage1_epochs;
  o.steps_per_epoch = steps_per_epoch;
  o.patience = patience;
  o.lambda = lambda;
  o.rho = rho;
  o.epsilon = epsilon;
  o.learning_rate = learning_rate;
  o.warp_gradient = warp_gradient;
  o.deform = deform_params();
  return o;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& e : entries()) keys.push_back(e.key);
  return keys;
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  find_entry(trim(key)).set(cfg, trim(key), value);
}

std::string get_config_value(const ExperimentConfig& cfg, const std::string& key) { return find_entry(key).get(cfg); }

void read_config(std::istream& is, ExperimentConfig& cfg, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      set_config_value(cfg, line.substr(0, eq), line.substr(eq + 1));
    } catch (const UsageError& e) {
      throw UsageError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void load_config(const std::filesystem::path& path, ExperimentConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  read_config(in, cfg, path.string());
}

void write_config(std::ostream& os, const ExperimentConfig& cfg) {
  for (const auto& e : entries()) os << "# " << e.doc << "\n" << e.key << " = " << e.get(cfg) << "\n";
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write config file " + path.string());
  write_config(out, cfg);
}

}  // namespace tcseg
