#pragma once

#include "tcseg/deform.hpp"
#include "tcseg/graph.hpp"

#include <span>
#include <vector>

namespace tcseg {

/// Alignment of branch-1 predictions onto branch 2 for one batch item.
struct WarpContext {
  DeformationField forward_field;   // t2 o t1^-1
  DeformationField backward_field;  // t1 o t2^-1, diagnostics only
  std::vector<std::size_t> source_index;

  static WarpContext from_fields(DeformationField forward, DeformationField backward);
  static WarpContext identity(std::size_t width, std::size_t height);
};

/// Builds the context that maps predictions made under t1 onto the frame of t2.
WarpContext make_warp_context(const TransformPair& t1, const TransformPair& t2, std::size_t width, std::size_t height);

/// How gradients pass through the layer.
enum class WarpGradient {
  ScatterAdd,   // exact transpose of the nearest-neighbour forward map (training default)
  InverseWarp,  // nearest-neighbour warp of the gradient by backward_field (comparison only)
  Blocked,      // stop-gradient through the warped branch (ablation)
};

/// Nearest-neighbour warp of every channel of batch item b by ctxs[b].
Tensor warp_forward(const Tensor& pred, std::span<const WarpContext> ctxs);
/// Scatter-add of grad_out onto the recorded sources; unread pixels get zero.
Tensor warp_backward(const Tensor& grad_out, std::span<const WarpContext> ctxs);
/// Gradient warped back through backward_field.
Tensor warp_backward_inverse(const Tensor& grad_out, std::span<const WarpContext> ctxs);

class WarpOp final : public CustomOp {
 public:
  WarpOp(std::vector<WarpContext> ctxs, WarpGradient mode) : ctxs_(std::move(ctxs)), mode_(mode) {}

  std::string_view name() const override { return "warp"; }
  Tensor forward(std::span<const Tensor* const> inputs) const override;
  std::vector<std::optional<Tensor>> backward(const Tensor& grad_out, std::span<const Tensor* const> inputs,
                                              const Tensor& output) const override;

  const std::vector<WarpContext>& contexts() const { return ctxs_; }

 private:
  std::vector<WarpContext> ctxs_;
  WarpGradient mode_;
};

NodeId warp(Graph& g, NodeId pred, std::vector<WarpContext> ctxs, WarpGradient mode = WarpGradient::ScatterAdd);

}  // namespace tcseg
