#pragma once

#include "tcseg/graph.hpp"
#include "tcseg/rng.hpp"

#include <filesystem>
#include <vector>

namespace tcseg {

struct NetworkConfig {
  std::size_t input_size = 64;
  std::size_t n_classes = 4;
  std::size_t depth = 3;
  std::size_t base_channels = 8;
  std::size_t in_channels = 1;

  /// Throws std::invalid_argument unless input_size % 2^depth == 0, n_classes >= 2, depth >= 1.
  void validate() const;
  std::size_t channels_at(std::size_t level) const { return base_channels << level; }
};

/// Number of scalars in the network, as a closed form of the config.
///
/// With c_l = base * 2^l, k = 3 and L = depth:
///   encoder level 0:    9 c_0 in + 9 c_0^2 + 2 c_0
///   encoder level l>0:  9 c_l c_{l-1} + 9 c_l^2 + 2 c_l
///   decoder level l<L-1: 9 c_l (c_{l+1} + c_l) + 9 c_l^2 + 2 c_l
///   head:               n_classes c_0 + n_classes
std::size_t parameter_count(const NetworkConfig& cfg);

/// U-Net-like fully convolutional network: per level two 3x3 conv + relu,
/// 2x max-pool between encoder levels, nearest-neighbour upsampling with skip
/// concatenation in the decoder, 1x1 conv head and channel softmax.
class Network {
 public:
  Network() = default;
  Network(NetworkConfig cfg, std::vector<Tensor> params);

  /// He-initialised weights, zero biases.
  static Network build(const NetworkConfig& cfg, Rng& rng);

  const NetworkConfig& config() const { return cfg_; }
  const std::vector<Tensor>& params() const { return params_; }
  std::vector<Tensor>& params() { return params_; }

  /// Adds every parameter to the graph as a trainable node; both Siamese
  /// branches consume the returned ids.
  std::vector<NodeId> bind(Graph& g) const;

  /// Class probabilities (b, n_classes, N, N) for images (b, in_channels, N, N).
  NodeId forward(Graph& g, std::span<const NodeId> params, NodeId images) const;

  /// Graph-free inference.
  Tensor predict(const Tensor& images) const;

  void save(const std::filesystem::path& path) const;
  static Network load(const NetworkConfig& cfg, const std::filesystem::path& path);

 private:
  NetworkConfig cfg_;
  std::vector<Tensor> params_;
};

/// Parameter tensor shapes in binding order.
std::vector<Shape> parameter_shapes(const NetworkConfig& cfg);

}  // namespace tcseg
