#include "tcseg/model.hpp"

#include "tcseg/checkpoint.hpp"
#include "tcseg/errors.hpp"

#include <cmath>
#include <stdexcept>

namespace tcseg {

namespace {

void push_conv(std::vector<Shape>& shapes, std::size_t cin, std::size_t cout, std::size_t k) {
  shapes.emplace_back(cout, cin, k, k);
  shapes.emplace_back(cout, 1, 1, 1);
}

}  // namespace

void NetworkConfig::validate() const {
  if (depth < 1) throw std::invalid_argument("network depth must be >= 1");
  if (n_classes < 2) throw std::invalid_argument("network needs n_classes >= 2, got " + std::to_string(n_classes));
  if (base_channels < 1 || in_channels < 1) throw std::invalid_argument("network channels must be positive");
  const std::size_t div = std::size_t{1} << depth;
  if (input_size == 0 || input_size % div != 0) {
    throw std::invalid_argument("input size " + std::to_string(input_size) + " is not divisible by 2^depth = " +
                                std::to_string(div));
  }
}

std::vector<Shape> parameter_shapes(const NetworkConfig& cfg) {
  cfg.validate();
  std::vector<Shape> shapes;
  std::size_t cin = cfg.in_channels;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::size_t c = cfg.channels_at(l);
    push_conv(shapes, cin, c, 3);
    push_conv(shapes, c, c, 3);
    cin = c;
  }
  for (std::size_t l = cfg.depth - 1; l-- > 0;) {
    const std::size_t c = cfg.channels_at(l);
    push_conv(shapes, cfg.channels_at(l + 1) + c, c, 3);
    push_conv(shapes, c, c, 3);
  }
  push_conv(shapes, cfg.channels_at(0), cfg.n_classes, 1);
  return shapes;
}

std::size_t parameter_count(const NetworkConfig& cfg) {
  cfg.validate();
  std::size_t total = 0;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::size_t c = cfg.channels_at(l);
    const std::size_t prev = l == 0 ? cfg.in_channels : cfg.channels_at(l - 1);
    total += 9 * c * prev + 9 * c * c + 2 * c;
  }
  for (std::size_t l = 0; l + 1 < cfg.depth; ++l) {
    const std::size_t c = cfg.channels_at(l);
    total += 9 * c * (cfg.channels_at(l + 1) + c) + 9 * c * c + 2 * c;
  }
  return total + cfg.n_classes * cfg.channels_at(0) + cfg.n_classes;
}

Network::Network(NetworkConfig cfg, std::vector<Tensor> params) : cfg_(cfg), params_(std::move(params)) {
  const auto shapes = parameter_shapes(cfg_);
  if (shapes.size() != params_.size()) {
    throw std::invalid_argument("network expects " + std::to_string(shapes.size()) + " parameter tensors, got " +
                                std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (!(shapes[i] == params_[i].shape())) {
      throw ShapeError("parameter " + std::to_string(i) + " has shape " + params_[i].shape().str() + ", expected " +
                       shapes[i].str());
    }
  }
}

Network Network::build(const NetworkConfig& cfg, Rng& rng) {
  const auto shapes = parameter_shapes(cfg);
  std::vector<Tensor> params;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    Tensor t(shapes[i]);
    if (i % 2 == 0) {  // weights and biases alternate
      const double fan_in = static_cast<double>(shapes[i].channels() * shapes[i].plane());
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (std::size_t j = 0; j < t.size(); ++j) t[j] = dist(rng);
    }
    params.push_back(std::move(t));
  }
  return Network(cfg, std::move(params));
}

std::vector<NodeId> Network::bind(Graph& g) const {
  std::vector<NodeId> ids;
  ids.reserve(params_.size());
  for (const Tensor& t : params_) ids.push_back(g.parameter(t));
  return ids;
}

NodeId Network::forward(Graph& g, std::span<const NodeId> p, NodeId images) const {
  const auto& s = g.value(images).shape();
  if (s.channels() != cfg_.in_channels || s.height() != cfg_.input_size || s.width() != cfg_.input_size) {
    throw ShapeError("network expects images (b, " + std::to_string(cfg_.in_channels) + ", " +
                     std::to_string(cfg_.input_size) + ", " + std::to_string(cfg_.input_size) + "), got " + s.str());
  }
  if (p.size() != params_.size()) throw std::invalid_argument("network forward: wrong number of parameter nodes");
  std::size_t k = 0;
  auto conv_relu = [&](NodeId x) {
    const NodeId y = relu(g, conv2d(g, x, p[k], p[k + 1]));
    k += 2;
    return y;
  };

  std::vector<NodeId> skips;
  NodeId x = add_scalar(g, images, -0.5);  // intensities centred on zero
  for (std::size_t l = 0; l < cfg_.depth; ++l) {
    if (l > 0) x = maxpool2(g, x);
    x = conv_relu(conv_relu(x));
    skips.push_back(x);
  }
  for (std::size_t l = cfg_.depth - 1; l-- > 0;) {
    x = concat(g, {upsample2(g, x), skips[l]});
    x = conv_relu(conv_relu(x));
  }
  const NodeId logits = conv2d(g, x, p[k], p[k + 1]);
  return softmax_channels(g, logits);
}

Tensor Network::predict(const Tensor& images) const {
  Graph g;
  std::vector<NodeId> ids;
  for (const Tensor& t : params_) ids.push_back(g.constant(t));
  const NodeId out = forward(g, ids, g.constant(images));
  return g.value(out);
}

void Network::save(const std::filesystem::path& path) const { save_checkpoint(path, params_); }

Network Network::load(const NetworkConfig& cfg, const std::filesystem::path& path) {
  try {
    return Network(cfg, load_checkpoint(path));
  } catch (const std::invalid_argument& e) {
    throw DataError("checkpoint " + path.string() + " does not match network config: " + e.what());
  }
}

}  // namespace tcseg
