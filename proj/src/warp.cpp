#include "tcseg/warp.hpp"

#include <memory>
#include <stdexcept>

namespace tcseg {

namespace {

void check_batch(const Tensor& t, std::span<const WarpContext> ctxs, const char* what) {
  const auto& s = t.shape();
  if (s.batch() != ctxs.size()) {
    throw ShapeError(std::string(what) + ": tensor " + s.str() + " has " + std::to_string(s.batch()) +
                     " items but " + std::to_string(ctxs.size()) + " warp contexts were given");
  }
  for (const auto& c : ctxs) {
    if (c.forward_field.width() != s.width() || c.forward_field.height() != s.height()) {
      throw ShapeError(std::string(what) + ": tensor " + s.str() + " does not match field " +
                       std::to_string(c.forward_field.width()) + "x" + std::to_string(c.forward_field.height()));
    }
  }
}

}  // namespace

WarpContext WarpContext::from_fields(DeformationField forward, DeformationField backward) {
  WarpContext ctx;
  ctx.source_index = nearest_sources(forward);
  ctx.forward_field = std::move(forward);
  ctx.backward_field = std::move(backward);
  return ctx;
}

WarpContext WarpContext::identity(std::size_t width, std::size_t height) {
  return from_fields(DeformationField::zero(width, height), DeformationField::zero(width, height));
}

WarpContext make_warp_context(const TransformPair& t1, const TransformPair& t2, std::size_t width, std::size_t height) {
  if (t1.is_identity() && t2.is_identity()) return WarpContext::identity(width, height);
  const DeformationField f1 = t1.field_or_zero(width, height), f2 = t2.field_or_zero(width, height);
  const DeformationField g1 = t1.inverse_or_zero(width, height), g2 = t2.inverse_or_zero(width, height);
  return WarpContext::from_fields(compose_fields(f2, g1), compose_fields(f1, g2));
}

Tensor warp_forward(const Tensor& pred, std::span<const WarpContext> ctxs) {
  check_batch(pred, ctxs, "warp_forward");
  const auto& s = pred.shape();
  Tensor out(s);
  for (std::size_t b = 0; b < s.batch(); ++b) {
    const auto& src = ctxs[b].source_index;
    for (std::size_t c = 0; c < s.channels(); ++c) {
      const double* in = pred.data().data() + pred.offset(b, c, 0, 0);
      double* o = out.data().data() + out.offset(b, c, 0, 0);
      for (std::size_t p = 0; p < src.size(); ++p) o[p] = in[src[p]];
    }
  }
  return out;
}

Tensor warp_backward(const Tensor& grad_out, std::span<const WarpContext> ctxs) {
  check_batch(grad_out, ctxs, "warp_backward");
  const auto& s = grad_out.shape();
  Tensor grad_in(s);
  for (std::size_t b = 0; b < s.batch(); ++b) {
    const auto& src = ctxs[b].source_index;
    for (std::size_t c = 0; c < s.channels(); ++c) {
      const double* go = grad_out.data().data() + grad_out.offset(b, c, 0, 0);
      double* gi = grad_in.data().data() + grad_in.offset(b, c, 0, 0);
      for (std::size_t p = 0; p < src.size(); ++p) gi[src[p]] += go[p];
    }
  }
  return grad_in;
}

Tensor warp_backward_inverse(const Tensor& grad_out, std::span<const WarpContext> ctxs) {
  check_batch(grad_out, ctxs, "warp_backward_inverse");
  std::vector<WarpContext> reversed;
  reversed.reserve(ctxs.size());
  for (const auto& c : ctxs) reversed.push_back(WarpContext::from_fields(c.backward_field, c.forward_field));
  return warp_forward(grad_out, reversed);
}

Tensor WarpOp::forward(std::span<const Tensor* const> inputs) const {
  if (inputs.size() != 1) throw ShapeError("warp: expected 1 input");
  return warp_forward(*inputs[0], ctxs_);
}

std::vector<std::optional<Tensor>> WarpOp::backward(const Tensor& grad_out, std::span<const Tensor* const>,
                                                    const Tensor&) const {
  switch (mode_) {
    case WarpGradient::ScatterAdd:
      return {warp_backward(grad_out, ctxs_)};
    case WarpGradient::InverseWarp:
      return {warp_backward_inverse(grad_out, ctxs_)};
    case WarpGradient::Blocked:
      break;
  }
  return {std::nullopt};
}

NodeId warp(Graph& g, NodeId pred, std::vector<WarpContext> ctxs, WarpGradient mode) {
  return custom(g, std::make_shared<WarpOp>(std::move(ctxs), mode), {pred});
}

}  // namespace tcseg
