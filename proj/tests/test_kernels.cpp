#include <doctest.h>

#include "fnl/kernels.hpp"
#include "oracles.hpp"

using namespace fnl;

namespace {

Tensor<double> randn(std::vector<int> dims, Rng& rng) {
  Tensor<double> t(std::move(dims));
  rng.fill_normal(t);
  return t;
}

// Distinct values in every pool window: a shuffled ramp.
Tensor<double> distinct_ramp(std::vector<int> dims, Rng& rng) {
  Tensor<double> t(std::move(dims));
  std::vector<int> order(t.numel());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = 0.5 * order[i];
  return t;
}

}  // namespace

TEST_CASE("conv2d matches hand example") {
  Tensor<double> x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor<double> w({1, 1, 2, 2}, {1, 0, 0, 1});
  Tensor<double> b({1}, {0});
  Tensor<double> y = conv2d(x, w, b, 1, 0);
  CHECK(y.dims == std::vector<int>{1, 2, 2});
  CHECK(y[0] == 6.0);
  CHECK(y[1] == 8.0);
  CHECK(y[2] == 12.0);
  CHECK(y[3] == 14.0);
  CHECK(bit_equal(y, oracle::naive_conv2d(x, w, b, 1, 0)));
}

TEST_CASE("conv2d 1x1 identity kernel is the identity map per channel") {
  Rng rng(1);
  Tensor<double> x = randn({3, 4, 5}, rng);
  Tensor<double> w = Tensor<double>::zeros({3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) w.at(c, c, 0, 0) = 1.0;
  Tensor<double> b = Tensor<double>::zeros({3});
  CHECK(bit_equal(conv2d(x, w, b, 1, 0), x));
}

TEST_CASE("conv2d shape formula") {
  Tensor<float> x({3, 224, 224});
  Tensor<float> w({96, 3, 11, 11});
  Tensor<float> b({96});
  Tensor<float> y = conv2d(x, w, b, 4, 2);
  CHECK(y.dims == std::vector<int>{96, 55, 55});
}

TEST_CASE("conv2d equals the nested-loop oracle on random cases") {
  Rng rng(2);
  for (int trial = 0; trial < 12; ++trial) {
    const int cin = 1 + static_cast<int>(rng.below(3));
    const int cout = 1 + static_cast<int>(rng.below(3));
    const int k = 1 + 2 * static_cast<int>(rng.below(2));  // 1 or 3
    const int h = k + static_cast<int>(rng.below(4));
    const int wd = k + static_cast<int>(rng.below(4));
    const int stride = 1 + static_cast<int>(rng.below(2));
    const int pad = static_cast<int>(rng.below(2));
    Tensor<double> x = randn({cin, h, wd}, rng);
    Tensor<double> w = randn({cout, cin, k, k}, rng);
    Tensor<double> b = randn({cout}, rng);
    Tensor<double> y = conv2d(x, w, b, stride, pad);
    CHECK(bit_equal(y, oracle::naive_conv2d(x, w, b, stride, pad)));
    CHECK(y.all_finite());
  }
}

TEST_CASE("conv2d is linear in its input") {
  Rng rng(3);
  Tensor<double> x1 = randn({2, 5, 5}, rng);
  Tensor<double> x2 = randn({2, 5, 5}, rng);
  Tensor<double> w = randn({3, 2, 3, 3}, rng);
  Tensor<double> b = Tensor<double>::zeros({3});
  const double alpha = 0.7, beta = -1.3;

  Tensor<double> mix(x1.dims);
  for (int64_t i = 0; i < mix.numel(); ++i) mix[i] = alpha * x1[i] + beta * x2[i];
  Tensor<double> lhs = conv2d(mix, w, b, 1, 1);
  Tensor<double> y1 = conv2d(x1, w, b, 1, 1);
  Tensor<double> y2 = conv2d(x2, w, b, 1, 1);
  for (int64_t i = 0; i < lhs.numel(); ++i)
    CHECK(oracle::rel_err(lhs[i], alpha * y1[i] + beta * y2[i], 1e-9) <= 1e-12);
}

TEST_CASE("conv2d rejects channel mismatch") {
  Tensor<float> x({2, 4, 4});
  Tensor<float> w({1, 3, 2, 2});
  Tensor<float> b({1});
  CHECK_THROWS_AS(conv2d(x, w, b, 1, 0), ShapeError);
  Tensor<float> wbig({1, 2, 7, 7});
  CHECK_THROWS_AS(conv2d(x, wbig, b, 1, 0), ShapeError);
}

TEST_CASE("conv2d_grad trivial cases") {
  Rng rng(4);
  Tensor<double> x = randn({2, 4, 4}, rng);
  Tensor<double> w = randn({3, 2, 3, 3}, rng);

  Tensor<double> gy_zero = Tensor<double>::zeros({3, 4, 4});
  auto g = conv2d_grad(x, w, gy_zero, 1, 1);
  for (int64_t i = 0; i < g.x.numel(); ++i) CHECK(g.x[i] == 0.0);
  for (int64_t i = 0; i < g.w.numel(); ++i) CHECK(g.w[i] == 0.0);
  for (int64_t i = 0; i < g.b.numel(); ++i) CHECK(g.b[i] == 0.0);

  // 1x1 identity kernel: grad_x == grad_y.
  Tensor<double> wid = Tensor<double>::zeros({2, 2, 1, 1});
  wid.at(0, 0, 0, 0) = 1.0;
  wid.at(1, 1, 0, 0) = 1.0;
  Tensor<double> gy = randn({2, 4, 4}, rng);
  auto gid = conv2d_grad(x, wid, gy, 1, 0);
  CHECK(bit_equal(gid.x, gy));
}

TEST_CASE("conv2d_grad grad_b is the spatial sum of grad_y") {
  Rng rng(5);
  Tensor<double> x = randn({2, 4, 4}, rng);
  Tensor<double> w = randn({3, 2, 3, 3}, rng);
  Tensor<double> gy = randn({3, 4, 4}, rng);
  auto g = conv2d_grad(x, w, gy, 1, 1);
  for (int o = 0; o < 3; ++o) {
    double s = 0.0;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) s += gy.at(o, i, j);
    CHECK(oracle::rel_err(g.b[o], s) < 1e-12);
  }
}

TEST_CASE("conv2d_grad matches finite differences over random trials") {
  for (uint64_t seed = 10; seed < 20; ++seed) {
    Rng rng(seed);
    Tensor<double> x = randn({2, 4, 4}, rng);
    Tensor<double> w = randn({2, 2, 3, 3}, rng);
    Tensor<double> b = randn({2}, rng);
    Tensor<double> proj = randn({2, 4, 4}, rng);

    auto loss = [&]() {
      Tensor<double> y = conv2d(x, w, b, 1, 1);
      double l = 0.0;
      for (int64_t i = 0; i < y.numel(); ++i) l += y[i] * proj[i];
      return l;
    };
    auto g = conv2d_grad(x, w, proj, 1, 1);
    CHECK(oracle::max_rel_err(oracle::fd_grad(x, loss), g.x) <= 1e-4);
    CHECK(oracle::max_rel_err(oracle::fd_grad(w, loss), g.w) <= 1e-4);
    CHECK(oracle::max_rel_err(oracle::fd_grad(b, loss), g.b) <= 1e-4);
  }
}

TEST_CASE("maxpool2d hand examples") {
  Tensor<double> x({1, 2, 2}, {1, 2, 3, 4});
  auto r = maxpool2d(x, 2, 2);
  CHECK(r.y.dims == std::vector<int>{1, 1, 1});
  CHECK(r.y[0] == 4.0);
  CHECK(r.argmax[0] == 3);

  // Ties resolve to the lowest flat index.
  Tensor<double> c = Tensor<double>::full({1, 4, 4}, 2.5);
  auto rc = maxpool2d(c, 2, 2);
  CHECK(rc.y[0] == 2.5);
  CHECK(rc.argmax[0] == 0);
  CHECK(rc.argmax[1] == 2);
  CHECK(rc.argmax[2] == 8);
  CHECK(rc.argmax[3] == 10);

  Tensor<float> big({256, 13, 13});
  CHECK(maxpool2d(big, 3, 2).y.dims == std::vector<int>{256, 6, 6});

  Tensor<float> small({1, 2, 2});
  CHECK_THROWS_AS(maxpool2d(small, 3, 1), ShapeError);
}

TEST_CASE("maxpool2d_grad routes and accumulates") {
  Tensor<double> x({1, 2, 2}, {1, 2, 3, 4});
  auto r = maxpool2d(x, 2, 2);

  Tensor<double> gy_zero = Tensor<double>::zeros({1, 1, 1});
  auto gz = maxpool2d_grad(r.argmax, gy_zero, x.dims);
  for (int64_t i = 0; i < gz.numel(); ++i) CHECK(gz[i] == 0.0);

  Tensor<double> gy({1, 1, 1}, {5.0});
  auto g = maxpool2d_grad(r.argmax, gy, x.dims);
  CHECK(g[3] == 5.0);
  CHECK(g[0] == 0.0);

  std::vector<int64_t> stale = {99};
  CHECK_THROWS_AS(maxpool2d_grad(stale, gy, x.dims), ShapeError);
}

TEST_CASE("maxpool2d_grad matches finite differences of the pooled sum") {
  for (uint64_t seed = 30; seed < 40; ++seed) {
    Rng rng(seed);
    Tensor<double> x = distinct_ramp({2, 6, 6}, rng);
    auto loss = [&]() {
      auto r = maxpool2d(x, 2, 2);
      double l = 0.0;
      for (int64_t i = 0; i < r.y.numel(); ++i) l += r.y[i];
      return l;
    };
    auto r = maxpool2d(x, 2, 2);
    Tensor<double> ones = Tensor<double>::full(r.y.dims, 1.0);
    Tensor<double> analytic = maxpool2d_grad(r.argmax, ones, x.dims);
    CHECK(oracle::max_rel_err(oracle::fd_grad(x, loss), analytic) <= 1e-4);
  }
}

TEST_CASE("pointwise forward examples") {
  Tensor<double> z({1}, {0.0});
  CHECK(pointwise(Pointwise::Sigmoid, z)[0] == 0.5);
  CHECK(pointwise(Pointwise::Tanh, z)[0] == 0.0);
  Tensor<double> neg({1}, {-3.0});
  CHECK(pointwise(Pointwise::Relu, neg)[0] == 0.0);

  Tensor<double> a({2}, {1, 2}), b({2}, {3, 4});
  Tensor<double> h = pointwise(Pointwise::Hadamard, a, &b);
  CHECK(h[0] == 3.0);
  CHECK(h[1] == 8.0);

  Tensor<double> bad({3});
  CHECK_THROWS_AS(pointwise(Pointwise::Add, a, &bad), ShapeError);
}

TEST_CASE("sigmoid and tanh ranges are strict on random input") {
  Rng rng(6);
  Tensor<double> x = randn({4, 8, 8}, rng);
  Tensor<double> s = sigmoid(x);
  Tensor<double> t = tanh_map(x);
  for (int64_t i = 0; i < x.numel(); ++i) {
    CHECK(s[i] > 0.0);
    CHECK(s[i] < 1.0);
    CHECK(t[i] > -1.0);
    CHECK(t[i] < 1.0);
  }
  Tensor<double> r = relu(x);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(r[i] >= 0.0);
}

TEST_CASE("pointwise backward matches finite differences") {
  const std::pair<Pointwise, double> kinds[] = {
      {Pointwise::Sigmoid, 0.0}, {Pointwise::Tanh, 0.0}, {Pointwise::Relu, 0.05}};
  for (const auto& [kind, margin] : kinds) {
    for (uint64_t seed = 50; seed < 60; ++seed) {
      Rng rng(seed);
      Tensor<double> x({3, 3});
      for (auto& v : x.data) {
        do {
          v = rng.normal();
        } while (std::abs(v) < margin);
      }
      Tensor<double> proj = randn({3, 3}, rng);
      auto loss = [&]() {
        Tensor<double> y = pointwise(kind, x);
        double l = 0.0;
        for (int64_t i = 0; i < y.numel(); ++i) l += y[i] * proj[i];
        return l;
      };
      Tensor<double> y = pointwise(kind, x);
      Tensor<double> gx;
      pointwise_backward<double>(kind, x, nullptr, y, proj, gx, nullptr);
      CHECK(oracle::max_rel_err(oracle::fd_grad(x, loss), gx) <= 1e-4);
    }
  }
}

TEST_CASE("binary pointwise backward rules") {
  Rng rng(61);
  Tensor<double> a = randn({4}, rng), b = randn({4}, rng), proj = randn({4}, rng);
  for (Pointwise kind : {Pointwise::Add, Pointwise::Sub, Pointwise::Hadamard}) {
    auto loss = [&]() {
      Tensor<double> y = pointwise(kind, a, &b);
      double l = 0.0;
      for (int64_t i = 0; i < y.numel(); ++i) l += y[i] * proj[i];
      return l;
    };
    Tensor<double> y = pointwise(kind, a, &b);
    Tensor<double> ga, gb;
    pointwise_backward(kind, a, &b, y, proj, ga, &gb);
    CHECK(oracle::max_rel_err(oracle::fd_grad(a, loss), ga) <= 1e-4);
    CHECK(oracle::max_rel_err(oracle::fd_grad(b, loss), gb) <= 1e-4);
  }
}

TEST_CASE("matmul_affine examples and gradient") {
  Tensor<double> wid({2, 2}, {1, 0, 0, 1});
  Tensor<double> x({2}, {3.5, -1.25});
  Tensor<double> zero({2});
  CHECK(bit_equal(matmul_affine(x, wid, zero), x));

  Tensor<double> w({2, 2}, {1, 2, 3, 4});
  Tensor<double> ones({2}, {1, 1});
  Tensor<double> y = matmul_affine(ones, w, zero);
  CHECK(y[0] == 3.0);
  CHECK(y[1] == 7.0);

  Tensor<double> xbad({3});
  CHECK_THROWS_AS(matmul_affine(xbad, w, zero), ShapeError);

  for (uint64_t seed = 70; seed < 80; ++seed) {
    Rng rng(seed);
    Tensor<double> xx = randn({5}, rng);
    Tensor<double> ww = randn({3, 5}, rng);
    Tensor<double> bb = randn({3}, rng);
    Tensor<double> proj = randn({3}, rng);
    auto loss = [&]() {
      Tensor<double> yy = matmul_affine(xx, ww, bb);
      double l = 0.0;
      for (int64_t i = 0; i < yy.numel(); ++i) l += yy[i] * proj[i];
      return l;
    };
    auto g = matmul_affine_grad(xx, ww, proj);
    CHECK(oracle::max_rel_err(oracle::fd_grad(xx, loss), g.x) <= 1e-4);
    CHECK(oracle::max_rel_err(oracle::fd_grad(ww, loss), g.w) <= 1e-4);
    CHECK(oracle::max_rel_err(oracle::fd_grad(bb, loss), g.b) <= 1e-4);
  }
}

TEST_CASE("resize_bilinear examples") {
  Tensor<float> c = Tensor<float>::full({3, 5, 4}, 7.0f);
  Tensor<float> r = resize_bilinear(c, 9, 11);
  for (int64_t i = 0; i < r.numel(); ++i) CHECK(r[i] == 7.0f);

  Rng rng(8);
  Tensor<float> img({3, 6, 6});
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  CHECK(bit_equal(resize_bilinear(img, 6, 6), img));

  Tensor<double> two({1, 2, 2}, {0, 1, 0, 1});
  Tensor<double> out = resize_bilinear(two, 2, 3);
  CHECK(out.dims == std::vector<int>{1, 2, 3});
  CHECK(out.at(0, 0, 0) == 0.0);
  CHECK(out.at(0, 0, 1) == 0.5);
  CHECK(out.at(0, 0, 2) == 1.0);
  CHECK(out.at(0, 1, 1) == 0.5);

  CHECK_THROWS_AS(resize_bilinear(two, 0, 3), ArgumentError);
}

TEST_CASE("kernels are deterministic") {
  Rng rng(9);
  Tensor<double> x = randn({2, 5, 5}, rng);
  Tensor<double> w = randn({3, 2, 3, 3}, rng);
  Tensor<double> b = randn({3}, rng);
  CHECK(bit_equal(conv2d(x, w, b, 1, 1), conv2d(x, w, b, 1, 1)));
  CHECK(bit_equal(resize_bilinear(x, 7, 9), resize_bilinear(x, 7, 9)));
}
