#include <doctest.h>

#include "fnl/recurrent.hpp"
#include "oracles.hpp"

using namespace fnl;

namespace {

Tensor<double> randn(std::vector<int> dims, Rng& rng) {
  Tensor<double> t(std::move(dims));
  rng.fill_normal(t);
  return t;
}

// Straight-line evaluation of the recurrence from raw kernels, one gate at a
// time, as an independent composition oracle.
ConvLstmState<double> straightline_step(const Tensor<double>& x, const ConvLstmState<double>& prev,
                                        const ConvLstmParams<double>& p) {
  const Tensor<double> zero_bias = Tensor<double>::zeros({p.channels});
  auto pre_gate = [&](int gate) {
    Tensor<double> wxg = gate_slice(p.wx, gate, p.channels);
    Tensor<double> whg = gate_slice(p.wh, gate, p.channels);
    Tensor<double> bg({p.channels});
    for (int j = 0; j < p.channels; ++j) bg[j] = p.b[gate * p.channels + j];
    return add(conv2d(x, wxg, bg, 1, p.pad()), conv2d(prev.h, whg, zero_bias, 1, p.pad()));
  };
  Tensor<double> i = sigmoid(pre_gate(0));
  Tensor<double> f = sigmoid(pre_gate(1));
  Tensor<double> g = tanh_map(pre_gate(2));
  Tensor<double> o = sigmoid(pre_gate(3));
  Tensor<double> c = add(hadamard(g, i), hadamard(prev.c, f));
  Tensor<double> h = hadamard(o, tanh_map(c));
  return {h, c};
}

ConvLstmParams<double> random_params(int cin, int ch, int k, Rng& rng) {
  ConvLstmParams<double> p(cin, ch, k, rng);
  rng.fill_normal(p.b);
  return p;
}

}  // namespace

TEST_CASE("convlstm_step with all-zero weights") {
  Rng rng(1);
  ConvLstmParams<double> p(2, 3, 3, rng);
  p.wx.fill(0.0);
  p.wh.fill(0.0);
  p.b.fill(0.0);
  Tensor<double> x = randn({2, 4, 4}, rng);
  ConvLstmStepCache<double> cache;
  auto out = convlstm_step(x, convlstm_zero_state(p, 4, 4), p, &cache);
  for (int64_t i = 0; i < cache.i.numel(); ++i) {
    CHECK(cache.i[i] == 0.5);
    CHECK(cache.f[i] == 0.5);
    CHECK(cache.o[i] == 0.5);
    CHECK(cache.g[i] == 0.0);
  }
  for (int64_t i = 0; i < out.h.numel(); ++i) {
    CHECK(out.c[i] == 0.0);
    CHECK(out.h[i] == 0.0);
  }
}

TEST_CASE("convlstm_step saturated gates preserve the memory cell") {
  Rng rng(2);
  ConvLstmParams<double> p(1, 2, 3, rng);
  p.wx.fill(0.0);
  p.wh.fill(0.0);
  // Gate order i, f, g, o: force i ~ 0 and f ~ 1 via large biases.
  for (int j = 0; j < 2; ++j) {
    p.b[0 * 2 + j] = -20.0;  // i
    p.b[1 * 2 + j] = 20.0;   // f
    p.b[2 * 2 + j] = 0.0;    // g
    p.b[3 * 2 + j] = 0.0;    // o
  }
  ConvLstmState<double> prev = convlstm_zero_state(p, 3, 3);
  rng.fill_normal(prev.c);
  Tensor<double> x = randn({1, 3, 3}, rng);
  auto out = convlstm_step(x, prev, p);
  for (int64_t i = 0; i < out.c.numel(); ++i)
    CHECK(std::abs(out.c[i] - prev.c[i]) <= 1e-6);
}

TEST_CASE("convlstm_step is bit-identical to the straight-line composition") {
  Rng rng(3);
  for (int trial = 0; trial < 25; ++trial) {
    const int cin = 1 + static_cast<int>(rng.below(3));
    const int ch = 1 + static_cast<int>(rng.below(3));
    const int k = rng.coin() ? 1 : 3;
    const int h = 1 + static_cast<int>(rng.below(5));
    const int w = 1 + static_cast<int>(rng.below(5));
    ConvLstmParams<double> p = random_params(cin, ch, k, rng);
    ConvLstmState<double> prev = {randn({ch, h, w}, rng), randn({ch, h, w}, rng)};
    // Hidden state is a tanh-bounded quantity; keep the random one in range.
    for (auto& v : prev.h.data) v = std::tanh(v);
    Tensor<double> x = randn({cin, h, w}, rng);
    auto got = convlstm_step(x, prev, p);
    auto want = straightline_step(x, prev, p);
    CHECK(bit_equal(got.h, want.h));
    CHECK(bit_equal(got.c, want.c));
  }
}

TEST_CASE("convlstm_step rejects mismatched dims") {
  Rng rng(4);
  ConvLstmParams<double> p(2, 2, 3, rng);
  Tensor<double> x({2, 4, 4});
  auto bad_state = convlstm_zero_state(p, 5, 5);
  CHECK_THROWS_AS(convlstm_step(x, bad_state, p), ShapeError);
  Tensor<double> xbad({3, 4, 4});
  CHECK_THROWS_AS(convlstm_step(xbad, convlstm_zero_state(p, 4, 4), p), ShapeError);
}

TEST_CASE("convlstm gate ranges and shape preservation") {
  Rng rng(5);
  for (int k : {1, 3, 5}) {
    ConvLstmParams<double> p = random_params(2, 3, k, rng);
    Tensor<double> x = randn({2, 6, 7}, rng);
    ConvLstmStepCache<double> cache;
    auto out = convlstm_step(x, convlstm_zero_state(p, 6, 7), p, &cache);
    CHECK(out.h.dims == std::vector<int>{3, 6, 7});
    CHECK(out.c.dims == std::vector<int>{3, 6, 7});
    for (int64_t i = 0; i < cache.i.numel(); ++i) {
      CHECK(cache.i[i] > 0.0);
      CHECK(cache.i[i] < 1.0);
      CHECK(cache.f[i] > 0.0);
      CHECK(cache.f[i] < 1.0);
      CHECK(cache.o[i] > 0.0);
      CHECK(cache.o[i] < 1.0);
      CHECK(cache.g[i] > -1.0);
      CHECK(cache.g[i] < 1.0);
      CHECK(std::abs(out.h[i]) < 1.0);
    }
  }
}

TEST_CASE("convlstm parameter count formula") {
  Rng rng(6);
  for (auto [cin, ch, k] : {std::tuple{2, 3, 3}, {1, 4, 1}, {3, 2, 5}}) {
    ConvLstmParams<double> p(cin, ch, k, rng);
    const int64_t expect = 4LL * (static_cast<int64_t>(k) * k * cin * ch +
                                  static_cast<int64_t>(k) * k * ch * ch + ch);
    CHECK(p.param_count() == expect);
  }
  Rng r2(7);
  ConvLstmParams<float> full(256, 256, 3, r2);
  CHECK(full.param_count() == 4719616);
}

TEST_CASE("convlstm_sequence basics") {
  Rng rng(8);
  ConvLstmParams<double> p = random_params(2, 2, 3, rng);
  Tensor<double> x = randn({2, 4, 4}, rng);
  const auto init = convlstm_zero_state(p, 4, 4);

  auto single = convlstm_step(x, init, p);
  auto seq = convlstm_sequence({x}, p, init);
  CHECK(bit_equal(single.h, seq.h));
  CHECK(bit_equal(single.c, seq.c));

  ConvLstmParams<double> zero(2, 2, 3, rng);
  zero.wx.fill(0.0);
  zero.wh.fill(0.0);
  zero.b.fill(0.0);
  auto hz = convlstm_sequence({x, x, x}, zero, init);
  for (int64_t i = 0; i < hz.h.numel(); ++i) CHECK(hz.h[i] == 0.0);

  CHECK_THROWS_AS(convlstm_sequence({}, p, init), ArgumentError);
}

TEST_CASE("convlstm BPTT matches finite differences") {
  for (int steps : {1, 3}) {
    Rng rng(20 + static_cast<uint64_t>(steps));
    ConvLstmParams<double> p = random_params(2, 2, 3, rng);
    ConvLstmGrads<double> grads(p);
    std::vector<Tensor<double>> inputs;
    for (int t = 0; t < steps; ++t) inputs.push_back(randn({2, 3, 3}, rng));
    Tensor<double> proj = randn({2, 3, 3}, rng);
    const auto init = convlstm_zero_state(p, 3, 3);

    auto loss = [&]() {
      auto state = convlstm_sequence(inputs, p, init);
      double l = 0.0;
      for (int64_t i = 0; i < state.h.numel(); ++i) l += state.h[i] * proj[i];
      return l;
    };

    ConvLstmSeqCache<double> cache;
    convlstm_sequence(inputs, p, init, &cache);
    auto input_grads = convlstm_sequence_backward(proj, cache, p, grads);

    CHECK(oracle::max_rel_err(oracle::fd_grad(p.wx, loss), grads.wx) <= 1e-4);
    CHECK(oracle::max_rel_err(oracle::fd_grad(p.wh, loss), grads.wh) <= 1e-4);
    CHECK(oracle::max_rel_err(oracle::fd_grad(p.b, loss), grads.b) <= 1e-4);
    for (int t = 0; t < steps; ++t)
      CHECK(oracle::max_rel_err(oracle::fd_grad(inputs[t], loss), input_grads[t]) <= 1e-4);
  }
}

TEST_CASE("lstm_step trivial cases") {
  Rng rng(9);
  LstmParams<double> p(3, 4, rng);
  p.wx.fill(0.0);
  p.wh.fill(0.0);
  p.b.fill(0.0);
  Tensor<double> x = randn({3}, rng);
  auto out = lstm_step(x, lstm_zero_state(p), p);
  for (int64_t i = 0; i < out.h.numel(); ++i) {
    CHECK(out.h[i] == 0.0);
    CHECK(out.c[i] == 0.0);
  }

  // 1-unit hand case: everything zero input, weights 1: h = sigma(0)*tanh(0) = 0.
  LstmParams<double> one(1, 1, rng);
  one.wx.fill(1.0);
  one.wh.fill(1.0);
  one.b.fill(0.0);
  Tensor<double> x0({1}, {0.0});
  auto h1 = lstm_step(x0, lstm_zero_state(one), one);
  CHECK(h1.h[0] == 0.0);
  CHECK(h1.c[0] == 0.0);

  Tensor<double> xbad({2});
  CHECK_THROWS_AS(lstm_step(xbad, lstm_zero_state(p), p), ShapeError);
}

TEST_CASE("lstm parameter count matches the closed form") {
  Rng rng(10);
  LstmParams<float> p(4096, 1000, rng);
  CHECK(p.param_count() == 4LL * ((4096 + 1000) * 1000 + 1000));
  CHECK(p.param_count() == 20388000);
}

TEST_CASE("convlstm with 1x1 kernels on 1x1 input reduces to the lstm step") {
  Rng rng(11);
  for (int trial = 0; trial < 8; ++trial) {
    const int cin = 1 + static_cast<int>(rng.below(4));
    const int ch = 1 + static_cast<int>(rng.below(4));
    ConvLstmParams<double> cp = random_params(cin, ch, 1, rng);

    LstmParams<double> lp;
    lp.in_dim = cin;
    lp.units = ch;
    lp.wx = cp.wx;
    lp.wx.reshape({4 * ch, cin});
    lp.wh = cp.wh;
    lp.wh.reshape({4 * ch, ch});
    lp.b = cp.b;

    Tensor<double> x = randn({cin, 1, 1}, rng);
    Tensor<double> xv = x;
    xv.reshape({cin});
    ConvLstmState<double> cprev = {randn({ch, 1, 1}, rng), randn({ch, 1, 1}, rng)};
    for (auto& v : cprev.h.data) v = std::tanh(v);
    LstmState<double> lprev;
    lprev.h = cprev.h;
    lprev.h.reshape({ch});
    lprev.c = cprev.c;
    lprev.c.reshape({ch});

    auto cout_state = convlstm_step(x, cprev, cp);
    auto lout = lstm_step(xv, lprev, lp);
    for (int j = 0; j < ch; ++j) {
      CHECK(oracle::rel_err(cout_state.h[j], lout.h[j], 1e-300) <= 1e-12);
      CHECK(oracle::rel_err(cout_state.c[j], lout.c[j], 1e-300) <= 1e-12);
    }
  }
}

TEST_CASE("lstm BPTT matches finite differences") {
  for (int steps : {1, 4}) {
    Rng rng(40 + static_cast<uint64_t>(steps));
    LstmParams<double> p(3, 4, rng);
    rng.fill_normal(p.b);
    LstmGrads<double> grads(p);
    std::vector<Tensor<double>> inputs;
    for (int t = 0; t < steps; ++t) inputs.push_back(randn({3}, rng));
    Tensor<double> proj = randn({4}, rng);

    auto loss = [&]() {
      auto state = lstm_sequence(inputs, p, lstm_zero_state(p));
      double l = 0.0;
      for (int64_t i = 0; i < state.h.numel(); ++i) l += state.h[i] * proj[i];
      return l;
    };

    LstmSeqCache<double> cache;
    lstm_sequence(inputs, p, lstm_zero_state(p), &cache);
    auto input_grads = lstm_sequence_backward(proj, cache, p, grads);

    CHECK(oracle::max_rel_err(oracle::fd_grad(p.wx, loss), grads.wx) <= 1e-4);
    CHECK(oracle::max_rel_err(oracle::fd_grad(p.wh, loss), grads.wh) <= 1e-4);
    CHECK(oracle::max_rel_err(oracle::fd_grad(p.b, loss), grads.b) <= 1e-4);
    for (int t = 0; t < steps; ++t)
      CHECK(oracle::max_rel_err(oracle::fd_grad(inputs[t], loss), input_grads[t]) <= 1e-4);
  }
}
