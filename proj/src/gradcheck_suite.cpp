#include "fnl/gradcheck.hpp"

#include <cstring>

#include "fnl/kernels.hpp"
#include "fnl/layers.hpp"
#include "fnl/model.hpp"
#include "fnl/recurrent.hpp"

// Shipped gradient-check subjects. Seeds are fixed; inputs for kinked or
// tie-breaking ops (relu, maxpool) are drawn away from the non-differentiable
// set so central differences stay valid at eps = 1e-3.

namespace fnl {

namespace {

void fill_normal_margin(Tensor<double>& t, Rng& rng, double margin) {
  for (auto& v : t.data) {
    do {
      v = rng.normal();
    } while (std::abs(v) < margin);
  }
}

// Redraw until every pool window has a clear gap between its top two values.
void fill_pool_safe(Tensor<double>& t, Rng& rng, int k, int stride, double gap) {
  const int c = t.dims[0], h = t.dims[1], w = t.dims[2];
  const int oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    rng.fill_normal(t);
    bool ok = true;
    for (int ch = 0; ch < c && ok; ++ch)
      for (int oy = 0; oy < oh && ok; ++oy)
        for (int ox = 0; ox < ow && ok; ++ox) {
          double best = -1e300, second = -1e300;
          for (int u = 0; u < k; ++u)
            for (int v = 0; v < k; ++v) {
              const double val = t.at(ch, oy * stride + u, ox * stride + v);
              if (val > best) {
                second = best;
                best = val;
              } else if (val > second) {
                second = val;
              }
            }
          if (best - second < gap) ok = false;
        }
    if (ok) return;
  }
  throw StateError("fill_pool_safe: could not draw tie-free pooling input");
}

struct TensorBag {
  std::vector<std::unique_ptr<Tensor<double>>> owned;

  Tensor<double>* make(std::vector<int> dims) {
    owned.push_back(std::make_unique<Tensor<double>>(std::move(dims)));
    return owned.back().get();
  }
};

// Scalar objective: fixed random projection of the output tensor, so every
// output element carries gradient signal.
Tensor<double> projection_like(const std::vector<int>& dims, Rng& rng) {
  Tensor<double> r(dims);
  rng.fill_normal(r);
  return r;
}

GradCheckSubject conv2d_subject() {
  auto bag = std::make_shared<TensorBag>();
  Rng rng(101);
  auto* x = bag->make({2, 5, 5});
  auto* w = bag->make({3, 2, 3, 3});
  auto* b = bag->make({3});
  rng.fill_normal(*x);
  rng.fill_normal(*w);
  rng.fill_normal(*b);
  auto* gx = bag->make(x->dims);
  auto* gw = bag->make(w->dims);
  auto* gb = bag->make(b->dims);
  auto proj = std::make_shared<Tensor<double>>(
      projection_like({3, 5, 5}, rng));  // stride 1, pad 1 keeps 5x5

  GradCheckSubject s;
  s.name = "conv2d";
  s.state = bag;
  s.tensors = {{"x", x, gx}, {"w", w, gw}, {"b", b, gb}};
  s.loss = [x, w, b, proj]() {
    Tensor<double> y = conv2d(*x, *w, *b, 1, 1);
    double l = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) l += y[i] * (*proj)[i];
    return l;
  };
  s.compute_grads = [x, w, gx, gw, gb, proj]() {
    auto g = conv2d_grad(*x, *w, *proj, 1, 1);
    *gx = g.x;
    *gw = g.w;
    *gb = g.b;
  };
  return s;
}

GradCheckSubject maxpool_subject() {
  auto bag = std::make_shared<TensorBag>();
  Rng rng(102);
  auto* x = bag->make({2, 6, 6});
  fill_pool_safe(*x, rng, 2, 2, 0.05);
  auto* gx = bag->make(x->dims);
  auto proj = std::make_shared<Tensor<double>>(projection_like({2, 3, 3}, rng));

  GradCheckSubject s;
  s.name = "maxpool2d";
  s.state = bag;
  s.tensors = {{"x", x, gx}};
  s.loss = [x, proj]() {
    auto r = maxpool2d(*x, 2, 2);
    double l = 0.0;
    for (int64_t i = 0; i < r.y.numel(); ++i) l += r.y[i] * (*proj)[i];
    return l;
  };
  s.compute_grads = [x, gx, proj]() {
    auto r = maxpool2d(*x, 2, 2);
    *gx = maxpool2d_grad(r.argmax, *proj, x->dims);
  };
  return s;
}

GradCheckSubject pointwise_subject(const std::string& name, Pointwise kind, uint64_t seed,
                                   double margin) {
  auto bag = std::make_shared<TensorBag>();
  Rng rng(seed);
  auto* x = bag->make({3, 4, 4});
  if (margin > 0.0)
    fill_normal_margin(*x, rng, margin);
  else
    rng.fill_normal(*x);
  auto* gx = bag->make(x->dims);
  auto proj = std::make_shared<Tensor<double>>(projection_like(x->dims, rng));

  GradCheckSubject s;
  s.name = name;
  s.state = bag;
  s.tensors = {{"x", x, gx}};
  s.loss = [x, kind, proj]() {
    Tensor<double> y = pointwise(kind, *x);
    double l = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) l += y[i] * (*proj)[i];
    return l;
  };
  s.compute_grads = [x, gx, kind, proj]() {
    Tensor<double> y = pointwise(kind, *x);
    pointwise_backward<double>(kind, *x, nullptr, y, *proj, *gx, nullptr);
  };
  return s;
}

GradCheckSubject affine_subject() {
  auto bag = std::make_shared<TensorBag>();
  Rng rng(104);
  auto* x = bag->make({6});
  auto* w = bag->make({4, 6});
  auto* b = bag->make({4});
  rng.fill_normal(*x);
  rng.fill_normal(*w);
  rng.fill_normal(*b);
  auto* gx = bag->make(x->dims);
  auto* gw = bag->make(w->dims);
  auto* gb = bag->make(b->dims);
  auto proj = std::make_shared<Tensor<double>>(projection_like({4}, rng));

  GradCheckSubject s;
  s.name = "affine";
  s.state = bag;
  s.tensors = {{"x", x, gx}, {"W", w, gw}, {"b", b, gb}};
  s.loss = [x, w, b, proj]() {
    Tensor<double> y = matmul_affine(*x, *w, *b);
    double l = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) l += y[i] * (*proj)[i];
    return l;
  };
  s.compute_grads = [x, w, gx, gw, gb, proj]() {
    auto g = matmul_affine_grad(*x, *w, *proj);
    *gx = g.x;
    *gw = g.w;
    *gb = g.b;
  };
  return s;
}

struct BatchNormState {
  BatchNormState() : layer("bn", 3) {}
  BatchNormLayer<double> layer;
  Tensor<double> x, gx, proj;
};

GradCheckSubject batchnorm_subject() {
  auto st = std::make_shared<BatchNormState>();
  Rng rng(105);
  st->x = Tensor<double>({4, 3, 2, 2});
  rng.fill_normal(st->x);
  rng.fill_normal(st->layer.gamma());
  rng.fill_normal(st->layer.beta());
  st->gx = Tensor<double>(st->x.dims);
  st->proj = projection_like(st->x.dims, rng);
  st->layer.set_mode(Mode::Train);

  GradCheckSubject s;
  s.name = "batchnorm";
  s.state = st;
  {
    ParamMap<double> params, buffers;
    st->layer.collect(params, buffers);
    s.tensors = {{"x", &st->x, &st->gx},
                 {"gamma", params.at("bn.gamma").value, params.at("bn.gamma").grad},
                 {"beta", params.at("bn.beta").value, params.at("bn.beta").grad}};
  }
  s.loss = [st]() {
    Tensor<double> y = st->layer.forward(st->x);
    double l = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) l += y[i] * st->proj[i];
    return l;
  };
  s.compute_grads = [st]() {
    st->layer.zero_grads();
    st->layer.forward(st->x);
    st->gx = st->layer.backward(st->proj);
  };
  return s;
}

struct ConvLstmSubjectState {
  ConvLstmParams<double> params;
  std::unique_ptr<ConvLstmGrads<double>> grads;
  std::vector<Tensor<double>> inputs;
  std::vector<Tensor<double>> input_grads;
  Tensor<double> proj;
};

GradCheckSubject convlstm_subject(int steps) {
  auto st = std::make_shared<ConvLstmSubjectState>();
  Rng rng(200 + static_cast<uint64_t>(steps));
  st->params = ConvLstmParams<double>(2, 2, 3, rng);
  rng.fill_normal(st->params.b);
  st->grads = std::make_unique<ConvLstmGrads<double>>(st->params);
  st->inputs.resize(steps);
  st->input_grads.resize(steps);
  for (int t = 0; t < steps; ++t) {
    st->inputs[t] = Tensor<double>({2, 4, 4});
    rng.fill_normal(st->inputs[t]);
    st->input_grads[t] = Tensor<double>(st->inputs[t].dims);
  }
  st->proj = projection_like({2, 4, 4}, rng);

  GradCheckSubject s;
  s.name = "convlstm_len" + std::to_string(steps);
  s.state = st;
  s.tensors = {{"wx", &st->params.wx, &st->grads->wx},
               {"wh", &st->params.wh, &st->grads->wh},
               {"b", &st->params.b, &st->grads->b}};
  for (int t = 0; t < steps; ++t)
    s.tensors.push_back({"x" + std::to_string(t), &st->inputs[t], &st->input_grads[t]});

  s.loss = [st]() {
    const auto init = convlstm_zero_state(st->params, 4, 4);
    auto state = convlstm_sequence(st->inputs, st->params, init);
    double l = 0.0;
    for (int64_t i = 0; i < state.h.numel(); ++i) l += state.h[i] * st->proj[i];
    return l;
  };
  s.compute_grads = [st]() {
    st->grads->zero();
    const auto init = convlstm_zero_state(st->params, 4, 4);
    ConvLstmSeqCache<double> cache;
    convlstm_sequence(st->inputs, st->params, init, &cache);
    st->input_grads = convlstm_sequence_backward(st->proj, cache, st->params, *st->grads);
  };
  return s;
}

struct LstmSubjectState {
  LstmParams<double> params;
  std::unique_ptr<LstmGrads<double>> grads;
  std::vector<Tensor<double>> inputs;
  std::vector<Tensor<double>> input_grads;
  Tensor<double> proj;
};

GradCheckSubject lstm_subject(int steps) {
  auto st = std::make_shared<LstmSubjectState>();
  Rng rng(300 + static_cast<uint64_t>(steps));
  st->params = LstmParams<double>(3, 4, rng);
  rng.fill_normal(st->params.b);
  st->grads = std::make_unique<LstmGrads<double>>(st->params);
  st->inputs.resize(steps);
  st->input_grads.resize(steps);
  for (int t = 0; t < steps; ++t) {
    st->inputs[t] = Tensor<double>({3});
    rng.fill_normal(st->inputs[t]);
    st->input_grads[t] = Tensor<double>(st->inputs[t].dims);
  }
  st->proj = projection_like({4}, rng);

  GradCheckSubject s;
  s.name = "lstm_len" + std::to_string(steps);
  s.state = st;
  s.tensors = {{"wx", &st->params.wx, &st->grads->wx},
               {"wh", &st->params.wh, &st->grads->wh},
               {"b", &st->params.b, &st->grads->b}};
  for (int t = 0; t < steps; ++t)
    s.tensors.push_back({"x" + std::to_string(t), &st->inputs[t], &st->input_grads[t]});

  s.loss = [st]() {
    auto state = lstm_sequence(st->inputs, st->params, lstm_zero_state(st->params));
    double l = 0.0;
    for (int64_t i = 0; i < state.h.numel(); ++i) l += state.h[i] * st->proj[i];
    return l;
  };
  s.compute_grads = [st]() {
    st->grads->zero();
    LstmSeqCache<double> cache;
    lstm_sequence(st->inputs, st->params, lstm_zero_state(st->params), &cache);
    st->input_grads = lstm_sequence_backward(st->proj, cache, st->params, *st->grads);
  };
  return s;
}

struct ModelSubjectState {
  ModelSubjectState(const ModelConfig& cfg, Rng& rng) : model(cfg, rng) {}
  Model<double> model;
  std::vector<std::vector<Tensor<double>>> clips;
  std::vector<std::vector<Tensor<double>>> clip_grads;
  std::vector<double> proj;
};

GradCheckSubject model_subject() {
  ModelConfig cfg;
  cfg.backbone = Backbone::TinyCnn;
  cfg.aggregator = AggregatorKind::ConvLstm;
  cfg.aggregator_width = 4;
  cfg.head = {8, 1};
  cfg.input_size = 16;
  Rng rng(400);
  auto st = std::make_shared<ModelSubjectState>(cfg, rng);

  const int batch = 2, steps = 3;
  st->clips.resize(batch);
  st->clip_grads.resize(batch);
  for (int b = 0; b < batch; ++b) {
    st->clips[b].resize(steps);
    st->clip_grads[b].resize(steps);
    for (int t = 0; t < steps; ++t) {
      st->clips[b][t] = Tensor<double>({3, 16, 16});
      rng.fill_normal(st->clips[b][t]);
      st->clip_grads[b][t] = Tensor<double>(st->clips[b][t].dims);
    }
  }
  st->proj.resize(batch);
  for (int b = 0; b < batch; ++b) st->proj[b] = rng.normal();
  st->model.set_mode(Mode::Train);

  GradCheckSubject s;
  s.name = "model_e2e";
  s.state = st;
  for (auto& [name, ref] : st->model.params()) s.tensors.push_back({name, ref.value, ref.grad});
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < steps; ++t)
      s.tensors.push_back({"clip" + std::to_string(b) + ".x" + std::to_string(t),
                           &st->clips[b][t], &st->clip_grads[b][t]});

  s.loss = [st]() {
    const auto p = st->model.forward(st->clips);
    double l = 0.0;
    for (size_t b = 0; b < p.size(); ++b) l += p[b] * st->proj[b];
    return l;
  };
  s.compute_grads = [st]() {
    st->model.zero_grads();
    st->model.forward(st->clips);
    st->clip_grads = st->model.backward(st->proj);
  };
  return s;
}

}  // namespace

std::vector<std::string> gradcheck_subject_names() {
  std::vector<std::string> names = {"conv2d", "maxpool2d", "relu", "sigmoid",
                                    "tanh",   "affine",    "batchnorm"};
  for (int l = 1; l <= 4; ++l) names.push_back("convlstm_len" + std::to_string(l));
  for (int l = 1; l <= 4; ++l) names.push_back("lstm_len" + std::to_string(l));
  names.push_back("model_e2e");
  return names;
}

GradCheckSubject make_gradcheck_subject(const std::string& name) {
  if (name == "conv2d") return conv2d_subject();
  if (name == "maxpool2d") return maxpool_subject();
  if (name == "relu") return pointwise_subject("relu", Pointwise::Relu, 103, 0.05);
  if (name == "sigmoid") return pointwise_subject("sigmoid", Pointwise::Sigmoid, 106, 0.0);
  if (name == "tanh") return pointwise_subject("tanh", Pointwise::Tanh, 107, 0.0);
  if (name == "affine") return affine_subject();
  if (name == "batchnorm") return batchnorm_subject();
  for (int l = 1; l <= 4; ++l)
    if (name == "convlstm_len" + std::to_string(l)) return convlstm_subject(l);
  for (int l = 1; l <= 4; ++l)
    if (name == "lstm_len" + std::to_string(l)) return lstm_subject(l);
  if (name == "model_e2e") return model_subject();
  throw ArgumentError("unknown gradcheck subject '" + name + "'");
}

std::vector<std::pair<std::string, GradCheckReport>> run_gradcheck_suite(
    const std::vector<std::string>& names, double eps) {
  const std::vector<std::string> selected = names.empty() ? gradcheck_subject_names() : names;
  std::vector<std::pair<std::string, GradCheckReport>> out;
  for (const auto& name : selected) {
    GradCheckSubject subject = make_gradcheck_subject(name);
    out.emplace_back(name, grad_check(subject, eps));
  }
  return out;
}

}  // namespace fnl
