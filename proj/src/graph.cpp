#include "tcseg/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tcseg {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

[[noreturn]] void shape_fail(Op op, const std::string& what) {
  throw ShapeError(std::string(op_name(op)) + ": " + what);
}

void require_same(Op op, const Shape& a, const Shape& b) {
  if (!(a == b)) shape_fail(op, "operand shapes differ: " + a.str() + " vs " + b.str());
}

// Patch matrix for one image: rows (ci, ky, kx), columns (y, x).
void im2col(const double* img, std::size_t ci, std::size_t h, std::size_t w, std::size_t k, RowMat& cols) {
  const long pad = static_cast<long>(k / 2), lh = static_cast<long>(h), lw = static_cast<long>(w);
  cols.resize(static_cast<Eigen::Index>(ci * k * k), static_cast<Eigen::Index>(h * w));
  for (std::size_t c = 0; c < ci; ++c) {
    const double* src = img + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = cols.data() + ((c * k + ky) * k + kx) * h * w;
        const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
        // valid output columns x satisfy 0 <= x + dx < w
        const long x0 = std::max(0L, -dx), x1 = std::min(lw, lw - dx);
        for (long y = 0; y < lh; ++y) {
          const long sy = y + dy;
          double* out = row + y * lw;
          if (sy < 0 || sy >= lh) {
            std::fill(out, out + lw, 0.0);
            continue;
          }
          std::fill(out, out + x0, 0.0);
          std::copy(src + sy * lw + x0 + dx, src + sy * lw + x1 + dx, out + x0);
          std::fill(out + x1, out + lw, 0.0);
        }
      }
    }
  }
}

void col2im_add(const RowMat& cols, std::size_t ci, std::size_t h, std::size_t w, std::size_t k, double* img) {
  const long pad = static_cast<long>(k / 2), lh = static_cast<long>(h), lw = static_cast<long>(w);
  for (std::size_t c = 0; c < ci; ++c) {
    double* dst = img + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = cols.data() + ((c * k + ky) * k + kx) * h * w;
        const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
        const long x0 = std::max(0L, -dx), x1 = std::min(lw, lw - dx);
        for (long y = 0; y < lh; ++y) {
          const long sy = y + dy;
          if (sy < 0 || sy >= lh) continue;
          double* drow = dst + sy * lw + dx;
          const double* in = row + y * lw;
          for (long x = x0; x < x1; ++x) drow[x] += in[x];
        }
      }
    }
  }
}

void check_conv(const Shape& x, const Shape& wt, const Shape& b) {
  if (wt.channels() != x.channels()) {
    shape_fail(Op::Conv2d, "weight " + wt.str() + " expects " + std::to_string(wt.channels()) +
                               " input channels, input " + x.str() + " has " + std::to_string(x.channels()));
  }
  if (wt.height() != wt.width() || wt.height() % 2 == 0) {
    shape_fail(Op::Conv2d, "kernel must be square and odd, got " + wt.str());
  }
  if (!(b == Shape{wt.batch(), 1, 1, 1})) {
    shape_fail(Op::Conv2d, "bias " + b.str() + " does not match " + std::to_string(wt.batch()) + " output channels");
  }
}

Tensor conv_forward(const Tensor& x, const Tensor& wt, const Tensor& bias) {
  check_conv(x.shape(), wt.shape(), bias.shape());
  const auto& s = x.shape();
  const std::size_t co = wt.shape().batch(), k = wt.shape().height();
  Tensor out(Shape{s.batch(), co, s.height(), s.width()});
  Eigen::Map<const RowMat> wmat(wt.data().data(), static_cast<Eigen::Index>(co),
                                static_cast<Eigen::Index>(s.channels() * k * k));
  Eigen::Map<const Eigen::VectorXd> bvec(bias.data().data(), static_cast<Eigen::Index>(co));
  RowMat cols;
  const auto hw = static_cast<Eigen::Index>(s.plane());
  for (std::size_t b = 0; b < s.batch(); ++b) {
    im2col(x.data().data() + x.offset(b, 0, 0, 0), s.channels(), s.height(), s.width(), k, cols);
    Eigen::Map<RowMat> omat(out.data().data() + out.offset(b, 0, 0, 0), static_cast<Eigen::Index>(co), hw);
    omat.noalias() = wmat * cols;
    omat.colwise() += bvec;
  }
  return out;
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Conv2d: return "conv2d";
    case Op::Relu: return "relu";
    case Op::Sigmoid: return "sigmoid";
    case Op::SoftmaxChannel: return "softmax_channel";
    case Op::Upsample2: return "upsample2";
    case Op::MaxPool2: return "maxpool2";
    case Op::Concat: return "concat";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::DivGuarded: return "div_guarded";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::SumSpatial: return "sum_spatial";
    case Op::SliceBatch: return "slice_batch";
    case Op::StopGradient: return "stop_gradient";
    case Op::Custom: return "custom";
  }
  return "unknown";
}

const Tensor& Gradients::at(NodeId id) const {
  if (!has(id)) throw std::out_of_range("no gradient recorded for node " + std::to_string(id));
  return *grads_[id];
}

const Graph::Node& Graph::node(NodeId id) const {
  if (id >= nodes_.size()) throw std::out_of_range("node id " + std::to_string(id) + " out of range");
  return nodes_[id];
}

NodeId Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

NodeId Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Graph::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

NodeId Graph::parameter(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.trainable = true;
  const NodeId id = push(std::move(n));
  params_.push_back(id);
  return id;
}

NodeId Graph::apply(Op op, std::vector<NodeId> inputs, OpAttrs attrs) {
  if (op == Op::Leaf) throw std::invalid_argument("apply: use constant/variable/parameter for leaves");
  Node n;
  n.op = op;
  n.attrs = std::move(attrs);
  for (NodeId id : inputs) {
    if (id >= nodes_.size()) throw std::out_of_range("apply: input node " + std::to_string(id) + " does not exist");
    n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
  }
  if (op == Op::StopGradient) n.requires_grad = false;
  n.inputs = std::move(inputs);
  n.value = evaluate(n);
  return push(std::move(n));
}

void Graph::set_leaf(NodeId id, Tensor value) {
  Node& n = nodes_.at(id);
  if (n.op != Op::Leaf) throw std::invalid_argument("set_leaf: node " + std::to_string(id) + " is not a leaf");
  if (!(n.value.shape() == value.shape())) {
    throw ShapeError("set_leaf: shape " + value.shape().str() + " does not match " + n.value.shape().str());
  }
  n.value = std::move(value);
}

void Graph::replay() {
  for (auto& n : nodes_) {
    if (n.op != Op::Leaf) n.value = evaluate(n);
  }
}

Tensor Graph::evaluate(Node& n) const {
  auto in = [&](std::size_t i) -> const Tensor& { return nodes_[n.inputs.at(i)].value; };
  auto arity = [&](std::size_t k) {
    if (n.inputs.size() != k) {
      shape_fail(n.op, "expected " + std::to_string(k) + " inputs, got " + std::to_string(n.inputs.size()));
    }
  };
  switch (n.op) {
    case Op::Leaf:
      return n.value;
    case Op::Conv2d:
      arity(3);
      return conv_forward(in(0), in(1), in(2));
    case Op::Relu: {
      arity(1);
      return Tensor(in(0).shape(), in(0).data().max(0.0));
    }
    case Op::Sigmoid: {
      arity(1);
      return Tensor(in(0).shape(), 1.0 / (1.0 + (-in(0).data()).exp()));
    }
    case Op::SoftmaxChannel: {
      arity(1);
      const Tensor& x = in(0);
      const auto& s = x.shape();
      Tensor out(s);
      for (std::size_t b = 0; b < s.batch(); ++b) {
        Map2d mx = x.plane(b, 0);
        for (std::size_t c = 1; c < s.channels(); ++c) mx = mx.max(x.plane(b, c));
        Map2d total = Map2d::Zero(mx.rows(), mx.cols());
        for (std::size_t c = 0; c < s.channels(); ++c) {
          out.plane(b, c) = (x.plane(b, c) - mx).exp();
          total += out.plane(b, c);
        }
        for (std::size_t c = 0; c < s.channels(); ++c) out.plane(b, c) /= total;
      }
      return out;
    }
    case Op::Upsample2: {
      arity(1);
      const Tensor& x = in(0);
      const auto& s = x.shape();
      Tensor out(Shape{s.batch(), s.channels(), 2 * s.height(), 2 * s.width()});
      for (std::size_t b = 0; b < s.batch(); ++b)
        for (std::size_t c = 0; c < s.channels(); ++c)
          for (std::size_t y = 0; y < 2 * s.height(); ++y)
            for (std::size_t xx = 0; xx < 2 * s.width(); ++xx) out.at(b, c, y, xx) = x.at(b, c, y / 2, xx / 2);
      return out;
    }
    case Op::MaxPool2: {
      arity(1);
      const Tensor& x = in(0);
      const auto& s = x.shape();
      if (s.height() % 2 != 0 || s.width() % 2 != 0) shape_fail(n.op, "spatial dims of " + s.str() + " must be even");
      Tensor out(Shape{s.batch(), s.channels(), s.height() / 2, s.width() / 2});
      n.saved.assign(out.size(), 0);
      std::size_t o = 0;
      for (std::size_t b = 0; b < s.batch(); ++b)
        for (std::size_t c = 0; c < s.channels(); ++c)
          for (std::size_t y = 0; y < s.height() / 2; ++y)
            for (std::size_t xx = 0; xx < s.width() / 2; ++xx, ++o) {
              std::size_t best = x.offset(b, c, 2 * y, 2 * xx);
              for (std::size_t dy = 0; dy < 2; ++dy)
                for (std::size_t dx = 0; dx < 2; ++dx) {
                  const std::size_t idx = x.offset(b, c, 2 * y + dy, 2 * xx + dx);
                  if (x[idx] > x[best]) best = idx;
                }
              n.saved[o] = best;
              out[o] = x[best];
            }
      return out;
    }
    case Op::Concat: {
      if (n.inputs.empty()) shape_fail(n.op, "needs at least one input");
      const auto& s0 = in(0).shape();
      std::size_t channels = 0;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        const auto& s = in(i).shape();
        if (s.batch() != s0.batch() || s.height() != s0.height() || s.width() != s0.width()) {
          shape_fail(n.op, "input " + std::to_string(i) + " shape " + s.str() + " incompatible with " + s0.str());
        }
        channels += s.channels();
      }
      Tensor out(Shape{s0.batch(), channels, s0.height(), s0.width()});
      for (std::size_t b = 0; b < s0.batch(); ++b) {
        std::size_t c0 = 0;
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
          const Tensor& x = in(i);
          const std::size_t len = x.shape().channels() * x.shape().plane();
          std::copy_n(x.data().data() + x.offset(b, 0, 0, 0), len, out.data().data() + out.offset(b, c0, 0, 0));
          c0 += x.shape().channels();
        }
      }
      return out;
    }
    case Op::Add:
      arity(2);
      require_same(n.op, in(0).shape(), in(1).shape());
      return Tensor(in(0).shape(), in(0).data() + in(1).data());
    case Op::Sub:
      arity(2);
      require_same(n.op, in(0).shape(), in(1).shape());
      return Tensor(in(0).shape(), in(0).data() - in(1).data());
    case Op::Mul:
      arity(2);
      require_same(n.op, in(0).shape(), in(1).shape());
      return Tensor(in(0).shape(), in(0).data() * in(1).data());
    case Op::DivGuarded:
      arity(2);
      require_same(n.op, in(0).shape(), in(1).shape());
      return Tensor(in(0).shape(), in(0).data() / in(1).data().max(n.attrs.scalar));
    case Op::Scale:
      arity(1);
      return Tensor(in(0).shape(), in(0).data() * n.attrs.scalar);
    case Op::AddScalar:
      arity(1);
      return Tensor(in(0).shape(), in(0).data() + n.attrs.scalar);
    case Op::Sum:
      arity(1);
      return Tensor::scalar(in(0).data().sum());
    case Op::Mean:
      arity(1);
      if (in(0).size() == 0) shape_fail(n.op, "mean of empty tensor " + in(0).shape().str());
      return Tensor::scalar(in(0).data().mean());
    case Op::SumSpatial: {
      arity(1);
      const auto& s = in(0).shape();
      Tensor out(Shape{s.batch(), s.channels(), 1, 1});
      for (std::size_t b = 0; b < s.batch(); ++b)
        for (std::size_t c = 0; c < s.channels(); ++c) out.at(b, c, 0, 0) = in(0).plane(b, c).sum();
      return out;
    }
    case Op::SliceBatch: {
      arity(1);
      const auto& s = in(0).shape();
      if (n.attrs.begin > n.attrs.end || n.attrs.end > s.batch()) {
        shape_fail(n.op, "range [" + std::to_string(n.attrs.begin) + ", " + std::to_string(n.attrs.end) +
                             ") invalid for batch of " + s.str());
      }
      const std::size_t per = s.channels() * s.plane();
      Tensor out(Shape{n.attrs.end - n.attrs.begin, s.channels(), s.height(), s.width()});
      out.data() = in(0).data().segment(static_cast<Eigen::Index>(n.attrs.begin * per),
                                        static_cast<Eigen::Index>(out.size()));
      return out;
    }
    case Op::StopGradient:
      arity(1);
      return in(0);
    case Op::Custom: {
      if (!n.attrs.custom) shape_fail(n.op, "missing custom op implementation");
      std::vector<const Tensor*> ptrs;
      for (NodeId id : n.inputs) ptrs.push_back(&nodes_[id].value);
      return n.attrs.custom->forward(ptrs);
    }
  }
  shape_fail(n.op, "unhandled op");
}

Gradients Graph::backward(NodeId loss) const {
  const Node& ln = node(loss);
  if (ln.value.size() != 1) {
    throw ShapeError("backward: loss node " + std::to_string(loss) + " has non-scalar shape " + ln.value.shape().str());
  }
  Gradients grads(nodes_.size());
  grads.slot(loss) = Tensor(ln.value.shape(), 1.0);

  auto accumulate = [&](NodeId id, Tensor g) {
    if (!nodes_[id].requires_grad) return;
    auto& slot = grads.slot(id);
    if (slot) {
      slot->data() += g.data();
    } else {
      slot = std::move(g);
    }
  };

  for (std::size_t i = loss + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (n.op == Op::Leaf || !n.requires_grad || !grads.has(i)) continue;
    const Tensor& go = grads.at(i);
    auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };
    switch (n.op) {
      case Op::Leaf:
      case Op::StopGradient:
        break;
      case Op::Conv2d: {
        const Tensor& x = in(0);
        const Tensor& wt = in(1);
        const auto& s = x.shape();
        const std::size_t co = wt.shape().batch(), k = wt.shape().height();
        const auto rows = static_cast<Eigen::Index>(s.channels() * k * k);
        const auto hw = static_cast<Eigen::Index>(s.plane());
        Eigen::Map<const RowMat> wmat(wt.data().data(), static_cast<Eigen::Index>(co), rows);
        Tensor gx(s), gw(wt.shape()), gb(in(2).shape());
        Eigen::Map<RowMat> gwmat(gw.data().data(), static_cast<Eigen::Index>(co), rows);
        RowMat cols, gcols;
        const bool need_x = nodes_[n.inputs[0]].requires_grad;
        for (std::size_t b = 0; b < s.batch(); ++b) {
          Eigen::Map<const RowMat> gomat(go.data().data() + go.offset(b, 0, 0, 0), static_cast<Eigen::Index>(co), hw);
          im2col(x.data().data() + x.offset(b, 0, 0, 0), s.channels(), s.height(), s.width(), k, cols);
          gwmat.noalias() += gomat * cols.transpose();
          gb.data() += gomat.rowwise().sum().array();
          if (need_x) {
            gcols.noalias() = wmat.transpose() * gomat;
            col2im_add(gcols, s.channels(), s.height(), s.width(), k, gx.data().data() + gx.offset(b, 0, 0, 0));
          }
        }
        if (need_x) accumulate(n.inputs[0], std::move(gx));
        accumulate(n.inputs[1], std::move(gw));
        accumulate(n.inputs[2], std::move(gb));
        break;
      }
      case Op::Relu:
        accumulate(n.inputs[0], Tensor(go.shape(), (in(0).data() > 0.0).select(go.data(), 0.0)));
        break;
      case Op::Sigmoid:
        accumulate(n.inputs[0], Tensor(go.shape(), go.data() * n.value.data() * (1.0 - n.value.data())));
        break;
      case Op::SoftmaxChannel: {
        const auto& s = go.shape();
        Tensor gx(s);
        for (std::size_t b = 0; b < s.batch(); ++b) {
          Map2d dot = Map2d::Zero(static_cast<Eigen::Index>(s.height()), static_cast<Eigen::Index>(s.width()));
          for (std::size_t c = 0; c < s.channels(); ++c) dot += n.value.plane(b, c) * go.plane(b, c);
          for (std::size_t c = 0; c < s.channels(); ++c) gx.plane(b, c) = n.value.plane(b, c) * (go.plane(b, c) - dot);
        }
        accumulate(n.inputs[0], std::move(gx));
        break;
      }
      case Op::Upsample2: {
        const auto& s = in(0).shape();
        Tensor gx(s);
        for (std::size_t b = 0; b < s.batch(); ++b)
          for (std::size_t c = 0; c < s.channels(); ++c)
            for (std::size_t y = 0; y < 2 * s.height(); ++y)
              for (std::size_t x = 0; x < 2 * s.width(); ++x) gx.at(b, c, y / 2, x / 2) += go.at(b, c, y, x);
        accumulate(n.inputs[0], std::move(gx));
        break;
      }
      case Op::MaxPool2: {
        Tensor gx(in(0).shape());
        for (std::size_t o = 0; o < go.size(); ++o) gx[n.saved[o]] += go[o];
        accumulate(n.inputs[0], std::move(gx));
        break;
      }
      case Op::Concat: {
        const auto& so = go.shape();
        std::size_t c0 = 0;
        for (NodeId id : n.inputs) {
          const auto& s = nodes_[id].value.shape();
          if (nodes_[id].requires_grad) {
            Tensor gx(s);
            const std::size_t len = s.channels() * s.plane();
            for (std::size_t b = 0; b < so.batch(); ++b) {
              std::copy_n(go.data().data() + go.offset(b, c0, 0, 0), len, gx.data().data() + gx.offset(b, 0, 0, 0));
            }
            accumulate(id, std::move(gx));
          }
          c0 += s.channels();
        }
        break;
      }
      case Op::Add:
        accumulate(n.inputs[0], go);
        accumulate(n.inputs[1], go);
        break;
      case Op::Sub:
        accumulate(n.inputs[0], go);
        accumulate(n.inputs[1], Tensor(go.shape(), -go.data()));
        break;
      case Op::Mul:
        accumulate(n.inputs[0], Tensor(go.shape(), go.data() * in(1).data()));
        accumulate(n.inputs[1], Tensor(go.shape(), go.data() * in(0).data()));
        break;
      case Op::DivGuarded: {
        const double eps = n.attrs.scalar;
        const Eigen::ArrayXd den = in(1).data().max(eps);
        accumulate(n.inputs[0], Tensor(go.shape(), go.data() / den));
        accumulate(n.inputs[1], Tensor(go.shape(), (in(1).data() > eps).select(-go.data() * in(0).data() / (den * den), 0.0)));
        break;
      }
      case Op::Scale:
        accumulate(n.inputs[0], Tensor(go.shape(), go.data() * n.attrs.scalar));
        break;
      case Op::AddScalar:
        accumulate(n.inputs[0], go);
        break;
      case Op::Sum:
        accumulate(n.inputs[0], Tensor(in(0).shape(), go.item()));
        break;
      case Op::Mean:
        accumulate(n.inputs[0], Tensor(in(0).shape(), go.item() / static_cast<double>(in(0).size())));
        break;
      case Op::SumSpatial: {
        const auto& s = in(0).shape();
        Tensor gx(s);
        for (std::size_t b = 0; b < s.batch(); ++b)
          for (std::size_t c = 0; c < s.channels(); ++c) gx.plane(b, c).setConstant(go.at(b, c, 0, 0));
        accumulate(n.inputs[0], std::move(gx));
        break;
      }
      case Op::SliceBatch: {
        const auto& s = in(0).shape();
        Tensor gx(s);
        const std::size_t per = s.channels() * s.plane();
        gx.data().segment(static_cast<Eigen::Index>(n.attrs.begin * per), static_cast<Eigen::Index>(go.size())) =
            go.data();
        accumulate(n.inputs[0], std::move(gx));
        break;
      }
      case Op::Custom: {
        std::vector<const Tensor*> ptrs;
        for (NodeId id : n.inputs) ptrs.push_back(&nodes_[id].value);
        auto gs = n.attrs.custom->backward(go, ptrs, n.value);
        for (std::size_t k = 0; k < n.inputs.size() && k < gs.size(); ++k) {
          if (gs[k]) accumulate(n.inputs[k], std::move(*gs[k]));
        }
        break;
      }
    }
  }
  return grads;
}

NodeId conv2d(Graph& g, NodeId x, NodeId weight, NodeId bias) { return g.apply(Op::Conv2d, {x, weight, bias}); }
NodeId relu(Graph& g, NodeId x) { return g.apply(Op::Relu, {x}); }
NodeId sigmoid(Graph& g, NodeId x) { return g.apply(Op::Sigmoid, {x}); }
NodeId softmax_channels(Graph& g, NodeId x) { return g.apply(Op::SoftmaxChannel, {x}); }
NodeId upsample2(Graph& g, NodeId x) { return g.apply(Op::Upsample2, {x}); }
NodeId maxpool2(Graph& g, NodeId x) { return g.apply(Op::MaxPool2, {x}); }
NodeId concat(Graph& g, std::vector<NodeId> xs) { return g.apply(Op::Concat, std::move(xs)); }
NodeId add(Graph& g, NodeId a, NodeId b) { return g.apply(Op::Add, {a, b}); }
NodeId sub(Graph& g, NodeId a, NodeId b) { return g.apply(Op::Sub, {a, b}); }
NodeId mul(Graph& g, NodeId a, NodeId b) { return g.apply(Op::Mul, {a, b}); }
NodeId div_guarded(Graph& g, NodeId a, NodeId b, double eps) {
  return g.apply(Op::DivGuarded, {a, b}, OpAttrs{.scalar = eps, .begin = 0, .end = 0, .custom = nullptr});
}
NodeId scale(Graph& g, NodeId x, double s) { return g.apply(Op::Scale, {x}, OpAttrs{.scalar = s, .begin = 0, .end = 0, .custom = nullptr}); }
NodeId add_scalar(Graph& g, NodeId x, double s) { return g.apply(Op::AddScalar, {x}, OpAttrs{.scalar = s, .begin = 0, .end = 0, .custom = nullptr}); }
NodeId sum(Graph& g, NodeId x) { return g.apply(Op::Sum, {x}); }
NodeId mean(Graph& g, NodeId x) { return g.apply(Op::Mean, {x}); }
NodeId sum_spatial(Graph& g, NodeId x) { return g.apply(Op::SumSpatial, {x}); }
NodeId slice_batch(Graph& g, NodeId x, std::size_t begin, std::size_t end) {
  return g.apply(Op::SliceBatch, {x}, OpAttrs{.scalar = 0.0, .begin = begin, .end = end, .custom = nullptr});
}
NodeId stop_gradient(Graph& g, NodeId x) { return g.apply(Op::StopGradient, {x}); }
NodeId custom(Graph& g, std::shared_ptr<const CustomOp> op, std::vector<NodeId> inputs) {
  return g.apply(Op::Custom, std::move(inputs), OpAttrs{.scalar = 0.0, .begin = 0, .end = 0, .custom = std::move(op)});
}

double finite_diff_check(Graph& g, NodeId loss, NodeId param, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
  const Gradients grads = g.backward(loss);
  const Tensor original = g.value(param);
  const Tensor analytic = grads.has(param) ? grads.at(param) : Tensor(original.shape());
  double worst = 0.0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    Tensor probe = original;
    probe[i] = original[i] + eps;
    g.set_leaf(param, probe);
    g.replay();
    const double up = g.value(loss).item();
    probe[i] = original[i] - eps;
    g.set_leaf(param, probe);
    g.replay();
    const double down = g.value(loss).item();
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  g.set_leaf(param, original);
  g.replay();
  return worst;
}

}  // namespace tcseg
