#include "tcseg/checkpoint.hpp"
#include "tcseg/errors.hpp"
#include "tcseg/graph.hpp"
#include "tcseg/rng.hpp"

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

using namespace tcseg;

namespace {

Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = d(rng);
  return t;
}

// keeps entries at least 1e-3 away from zero so relu kinks are not crossed
Tensor nudged(Tensor t) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (std::abs(t[i]) < 1e-3) t[i] = t[i] < 0 ? -1e-3 : 1e-3;
  }
  return t;
}

// loss = sum(op(inputs) * R) for a fixed random R; returns the worst error over inputs
double check_op(const std::vector<Tensor>& inputs, const std::function<NodeId(Graph&, std::vector<NodeId>&)>& op,
                std::uint64_t seed = 1) {
  Rng rng(seed);
  Graph g;
  std::vector<NodeId> ids;
  for (const Tensor& t : inputs) ids.push_back(g.variable(t));
  const NodeId out = op(g, ids);
  const NodeId r = g.constant(random_tensor(g.value(out).shape(), rng));
  const NodeId loss = sum(g, mul(g, out, r));
  double worst = 0.0;
  for (NodeId id : ids) worst = std::max(worst, finite_diff_check(g, loss, id));
  return worst;
}

}  // namespace

TEST_CASE("shape and tensor basics") {
  const Shape s{2, 3, 4, 5};
  CHECK(s.numel() == 120);
  CHECK(s.plane() == 20);
  Tensor t(s, 1.5);
  CHECK(t.size() == 120);
  CHECK(t.at(1, 2, 3, 4) == 1.5);
  t.at(1, 2, 3, 4) = 7.0;
  CHECK(t[t.offset(1, 2, 3, 4)] == 7.0);
  CHECK(t.offset(1, 2, 3, 4) == 119);
  CHECK(t.plane(1, 2)(3, 4) == 7.0);
  CHECK(Tensor::scalar(3.0).item() == 3.0);
  CHECK_THROWS_AS(Tensor(Shape{1, 1, 2, 2}, Eigen::ArrayXd::Zero(3)), ShapeError);
}

TEST_CASE("relu, upsample and identity convolution values") {
  Graph g;
  Tensor x(Shape{1, 1, 1, 3});
  x[0] = -1;
  x[1] = 0;
  x[2] = 2;
  const Tensor r = g.value(relu(g, g.constant(x)));
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 2.0);

  Tensor small(Shape{1, 1, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) small[i] = static_cast<double>(i + 1);
  const Tensor up = g.value(upsample2(g, g.constant(small)));
  const double expected[4][4] = {{1, 1, 2, 2}, {1, 1, 2, 2}, {3, 3, 4, 4}, {3, 3, 4, 4}};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(up.at(0, 0, i, j) == expected[i][j]);

  Rng rng(3);
  const Tensor img = random_tensor(Shape{2, 1, 6, 7}, rng);
  Tensor w(Shape{1, 1, 3, 3});
  w.at(0, 0, 1, 1) = 1.0;
  const Tensor same = g.value(conv2d(g, g.constant(img), g.constant(w), g.constant(Tensor(Shape{1, 1, 1, 1}))));
  CHECK((same.data() == img.data()).all());
}

TEST_CASE("conv2d matches a direct loop") {
  Rng rng(11);
  const Tensor x = random_tensor(Shape{2, 3, 5, 6}, rng);
  const Tensor w = random_tensor(Shape{4, 3, 3, 3}, rng);
  const Tensor b = random_tensor(Shape{4, 1, 1, 1}, rng);
  Graph g;
  const Tensor y = g.value(conv2d(g, g.constant(x), g.constant(w), g.constant(b)));
  REQUIRE(y.shape() == Shape{2, 4, 5, 6});
  double worst = 0.0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 4; ++o)
      for (long i = 0; i < 5; ++i)
        for (long j = 0; j < 6; ++j) {
          double acc = b[o];
          for (std::size_t c = 0; c < 3; ++c)
            for (long di = -1; di <= 1; ++di)
              for (long dj = -1; dj <= 1; ++dj) {
                const long yi = i + di, xj = j + dj;
                if (yi < 0 || yi >= 5 || xj < 0 || xj >= 6) continue;
                acc += w.at(o, c, static_cast<std::size_t>(di + 1), static_cast<std::size_t>(dj + 1)) *
                       x.at(n, c, static_cast<std::size_t>(yi), static_cast<std::size_t>(xj));
              }
          worst = std::max(worst, std::abs(acc - y.at(n, o, static_cast<std::size_t>(i), static_cast<std::size_t>(j))));
        }
  CHECK(worst < 1e-12);
}

TEST_CASE("shape errors name the op and the dims") {
  Graph g;
  const NodeId a = g.constant(Tensor(Shape{1, 2, 3, 3}));
  const NodeId b = g.constant(Tensor(Shape{1, 2, 4, 4}));
  try {
    add(g, a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("3") != std::string::npos);
    CHECK(msg.find("4") != std::string::npos);
  }
  CHECK_THROWS_AS(maxpool2(g, g.constant(Tensor(Shape{1, 1, 3, 3}))), ShapeError);
  CHECK_THROWS_AS(conv2d(g, a, g.constant(Tensor(Shape{1, 3, 3, 3})), g.constant(Tensor(Shape{1, 1, 1, 1}))),
                  ShapeError);
}

TEST_CASE("backward: simple closed forms") {
  Graph g;
  const NodeId x = g.variable(Tensor(Shape{1, 1, 2, 3}, 0.7));
  const auto grads = g.backward(sum(g, x));
  CHECK((grads.at(x).data() == 1.0).all());

  Graph h;
  Tensor v(Shape{1, 1, 1, 2});
  v[0] = 2;
  v[1] = 3;
  const NodeId y = h.variable(v);
  const NodeId loss = sum(h, mul(h, y, y));
  const auto gy = h.backward(loss);
  CHECK(gy.at(y)[0] == 4.0);
  CHECK(gy.at(y)[1] == 6.0);
  CHECK(gy.at(loss).item() == 1.0);

  CHECK_THROWS_AS(h.backward(y), std::invalid_argument);
}

TEST_CASE("per-op vector-Jacobian products match central differences") {
  Rng rng(5);
  const Shape s{2, 3, 4, 4};
  auto in = [&](Shape sh = Shape{2, 3, 4, 4}) { return random_tensor(sh, rng); };

  CHECK(check_op({nudged(in())}, [](Graph& g, auto& v) { return relu(g, v[0]); }) < 1e-6);
  CHECK(check_op({in()}, [](Graph& g, auto& v) { return sigmoid(g, v[0]); }) < 1e-6);
  CHECK(check_op({in()}, [](Graph& g, auto& v) { return softmax_channels(g, v[0]); }) < 1e-6);
  CHECK(check_op({in()}, [](Graph& g, auto& v) { return upsample2(g, v[0]); }) < 1e-6);
  CHECK(check_op({in()}, [](Graph& g, auto& v) { return maxpool2(g, v[0]); }) < 1e-6);
  CHECK(check_op({in(), in(Shape{2, 1, 4, 4})}, [](Graph& g, auto& v) { return concat(g, {v[0], v[1]}); }) < 1e-6);
  CHECK(check_op({in(), in()}, [](Graph& g, auto& v) { return add(g, v[0], v[1]); }) < 1e-6);
  CHECK(check_op({in(), in()}, [](Graph& g, auto& v) { return sub(g, v[0], v[1]); }) < 1e-6);
  CHECK(check_op({in(), in()}, [](Graph& g, auto& v) { return mul(g, v[0], v[1]); }) < 1e-6);
  CHECK(check_op({in(), random_tensor(s, rng, 0.5, 2.0)},
                 [](Graph& g, auto& v) { return div_guarded(g, v[0], v[1], 1e-8); }) < 1e-6);
  CHECK(check_op({in()}, [](Graph& g, auto& v) { return scale(g, v[0], -2.5); }) < 1e-6);
  CHECK(check_op({in()}, [](Graph& g, auto& v) { return add_scalar(g, v[0], 0.3); }) < 1e-6);
  CHECK(check_op({in()}, [](Graph& g, auto& v) { return mean(g, v[0]); }) < 1e-6);
  CHECK(check_op({in()}, [](Graph& g, auto& v) { return sum_spatial(g, v[0]); }) < 1e-6);
  CHECK(check_op({in()}, [](Graph& g, auto& v) { return slice_batch(g, v[0], 1, 2); }) < 1e-6);
  CHECK(check_op({in(), in(Shape{5, 3, 3, 3}), in(Shape{5, 1, 1, 1})},
                 [](Graph& g, auto& v) { return conv2d(g, v[0], v[1], v[2]); }) < 1e-6);
  CHECK(check_op({in(), in(Shape{2, 3, 1, 1}), in(Shape{2, 1, 1, 1})},
                 [](Graph& g, auto& v) { return conv2d(g, v[0], v[1], v[2]); }) < 1e-6);
}

TEST_CASE("quadratic loss finite differences are essentially exact") {
  Rng rng(2);
  Graph g;
  const NodeId p = g.parameter(random_tensor(Shape{1, 2, 3, 3}, rng));
  const NodeId loss = sum(g, mul(g, p, p));
  CHECK(finite_diff_check(g, loss, p) < 1e-8);
}

TEST_CASE("small conv net gradients match finite differences") {
  Rng rng(8);
  Graph g;
  const NodeId x = g.constant(random_tensor(Shape{2, 1, 8, 8}, rng));
  std::vector<NodeId> w, b;
  const std::size_t ch[4] = {1, 4, 4, 2};
  for (std::size_t l = 0; l < 3; ++l) {
    w.push_back(g.parameter(random_tensor(Shape{ch[l + 1], ch[l], 3, 3}, rng, -0.5, 0.5)));
    b.push_back(g.parameter(random_tensor(Shape{ch[l + 1], 1, 1, 1}, rng, -0.1, 0.1)));
  }
  NodeId h = x;
  for (std::size_t l = 0; l < 3; ++l) {
    h = conv2d(g, h, w[l], b[l]);
    if (l < 2) h = relu(g, h);
  }
  const NodeId loss = mean(g, softmax_channels(g, h));
  const NodeId loss2 = sum(g, mul(g, softmax_channels(g, h), g.constant(random_tensor(Shape{2, 2, 8, 8}, rng))));
  for (NodeId p : g.parameters()) {
    CHECK(finite_diff_check(g, loss, p) < 1e-6);
    CHECK(finite_diff_check(g, loss2, p) < 1e-6);
  }
}

TEST_CASE("multiply-used nodes accumulate gradients by sum") {
  Rng rng(4);
  const Tensor xv = random_tensor(Shape{1, 2, 3, 3}, rng);
  const Tensor wv = random_tensor(Shape{2, 2, 3, 3}, rng);
  const Tensor bv = random_tensor(Shape{2, 1, 1, 1}, rng);
  const Tensor x2 = random_tensor(Shape{1, 2, 3, 3}, rng);

  // shared weights feeding two branches
  Graph shared;
  const NodeId w = shared.parameter(wv), b = shared.parameter(bv);
  const NodeId y1 = conv2d(shared, shared.constant(xv), w, b);
  const NodeId y2 = conv2d(shared, shared.constant(x2), w, b);
  const NodeId loss = add(shared, sum(shared, mul(shared, y1, y1)), sum(shared, y2));
  const auto gs = shared.backward(loss);

  // explicit duplication: two copies of the same values
  Graph dup;
  const NodeId wa = dup.parameter(wv), ba = dup.parameter(bv), wb = dup.parameter(wv), bb = dup.parameter(bv);
  const NodeId z1 = conv2d(dup, dup.constant(xv), wa, ba);
  const NodeId z2 = conv2d(dup, dup.constant(x2), wb, bb);
  const auto gd = dup.backward(add(dup, sum(dup, mul(dup, z1, z1)), sum(dup, z2)));

  CHECK(((gs.at(w).data() - (gd.at(wa).data() + gd.at(wb).data())).abs() < 1e-12).all());
  CHECK(((gs.at(b).data() - (gd.at(ba).data() + gd.at(bb).data())).abs() < 1e-12).all());
}

TEST_CASE("stop_gradient blocks the path") {
  Graph g;
  const NodeId x = g.variable(Tensor(Shape{1, 1, 2, 2}, 1.0));
  const NodeId loss = add(g, sum(g, stop_gradient(g, mul(g, x, x))), sum(g, x));
  const auto grads = g.backward(loss);
  CHECK((grads.at(x).data() == 1.0).all());
}

TEST_CASE("forward and backward are deterministic") {
  auto run = [] {
    Rng rng(21);
    Graph g;
    const NodeId x = g.constant(random_tensor(Shape{2, 2, 4, 4}, rng));
    const NodeId w = g.parameter(random_tensor(Shape{3, 2, 3, 3}, rng));
    const NodeId b = g.parameter(random_tensor(Shape{3, 1, 1, 1}, rng));
    const NodeId loss = mean(g, softmax_channels(g, conv2d(g, x, w, b)));
    const auto grads = g.backward(loss);
    return std::pair{g.value(loss).item(), grads.at(w).data().eval()};
  };
  const auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK((a.second == b.second).all());
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(9);
  std::vector<Tensor> ts{random_tensor(Shape{3, 2, 3, 3}, rng), random_tensor(Shape{3, 1, 1, 1}, rng),
                         Tensor(Shape{1, 1, 1, 1}, std::numeric_limits<double>::denorm_min())};
  std::stringstream ss;
  write_checkpoint(ss, ts);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "WCT1");
  CHECK(static_cast<unsigned char>(bytes[4]) == 3);
  CHECK(bytes.size() == 8 + 3 * 16 + 8 * (54 + 3 + 1));
  const auto back = read_checkpoint(ss);
  REQUIRE(back.size() == ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    CHECK(back[i].shape() == ts[i].shape());
    CHECK(std::memcmp(back[i].data().data(), ts[i].data().data(), ts[i].size() * sizeof(double)) == 0);
  }

  const auto dir = std::filesystem::temp_directory_path() / "tcseg_test_ckpt";
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "a.wct", ts);
  CHECK(load_checkpoint(dir / "a.wct").size() == 3);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.wct"), DataError);
  {
    std::ofstream trunc(dir / "t.wct", std::ios::binary);
    trunc.write(bytes.data(), 30);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "t.wct"), DataError);
  {
    std::ofstream bad(dir / "m.wct", std::ios::binary);
    bad << "XXXX" << bytes.substr(4);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "m.wct"), DataError);
  std::filesystem::remove_all(dir);
}
