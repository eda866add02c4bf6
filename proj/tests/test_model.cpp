#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "fnl/fileio.hpp"
#include "fnl/model.hpp"
#include "oracles.hpp"

using namespace fnl;

namespace {

ModelConfig tiny_cfg(int input_size = 16, int width = 4) {
  ModelConfig cfg;
  cfg.backbone = Backbone::TinyCnn;
  cfg.aggregator = AggregatorKind::ConvLstm;
  cfg.aggregator_width = width;
  cfg.head = {8, 1};
  cfg.input_size = input_size;
  return cfg;
}

std::vector<std::vector<Tensor<float>>> random_clips(int batch, int steps, int size, Rng& rng) {
  std::vector<std::vector<Tensor<float>>> clips(batch);
  for (auto& clip : clips) {
    clip.resize(steps);
    for (auto& f : clip) {
      f = Tensor<float>({3, size, size});
      rng.fill_normal(f);
    }
  }
  return clips;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::path("t_model") / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& f) const { return (path / f).string(); }
};

}  // namespace

TEST_CASE("backbone feature shape chains the conv/pool formulas") {
  ModelConfig cfg;  // alexnet-conv, 224
  const FeatureShape f = conv_stack_shape(cfg);
  CHECK(f.channels == 256);
  CHECK(f.height == 6);
  CHECK(f.width == 6);

  ModelConfig tiny = tiny_cfg(64);
  const FeatureShape t = conv_stack_shape(tiny);
  CHECK(t.channels == 16);
  CHECK(t.height == 16);
  CHECK(t.width == 16);

  ModelConfig too_small = tiny_cfg(224);
  too_small.input_size = 2;
  CHECK_THROWS_AS(conv_stack_shape(too_small), ConfigError);
}

TEST_CASE("tiny model builds and runs forward on a 64x64 frame") {
  ModelConfig cfg = tiny_cfg(64, 4);
  Rng rng(1);
  Model<float> m(cfg, rng);
  m.set_mode(Mode::Eval);
  Rng data_rng(2);
  auto clips = random_clips(1, 2, 64, data_rng);
  const auto p = m.forward(clips);
  CHECK(p.size() == 1);
  CHECK(p[0] > 0.0f);
  CHECK(p[0] < 1.0f);
}

TEST_CASE("same seed and config give identical initial parameters") {
  ModelConfig cfg = tiny_cfg();
  Rng r1(9), r2(9), r3(10);
  Model<float> a(cfg, r1), b(cfg, r2), c(cfg, r3);
  bool all_equal = true, any_diff = false;
  for (auto& [name, ref] : a.params()) {
    all_equal = all_equal && bit_equal(*ref.value, *b.params().at(name).value);
    any_diff = any_diff || !bit_equal(*ref.value, *c.params().at(name).value);
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("parameter counts: closed form and audit values") {
  // ConvLSTM aggregator at Cin=Ch=256, k=3.
  ModelConfig cfg;  // defaults: alexnet-conv + convlstm(256), head 125,1
  const ParamCounts c = plan_param_counts(cfg);
  CHECK(c.aggregator == 4719616);
  CHECK(c.backbone == 3747200);
  CHECK(c.batchnorm == 512);
  CHECK(c.head == 1152251);
  CHECK(c.total() == 9619579);
  // Audit against the published 9.6M total (9619544): residual is +35.
  CHECK(std::abs(c.total() - 9619544) <= 0.01 * 9619544);

  ModelConfig lstm_cfg;
  lstm_cfg.aggregator = AggregatorKind::Lstm;
  const ParamCounts l = plan_param_counts(lstm_cfg);
  CHECK(l.aggregator == 20388000);
  CHECK(l.backbone == 3747200 + (4096LL * 9216 + 4096) + (4096LL * 4096 + 4096));
  CHECK(l.batchnorm == 2000);
  CHECK(l.head == 1000 * 125 + 125 + 125 + 1);
  CHECK(std::abs(l.total() - 77520072) <= 0.02 * 77520072);
}

TEST_CASE("live store counts equal the plan for a config matrix") {
  std::vector<ModelConfig> matrix;
  matrix.push_back(tiny_cfg(16, 4));
  matrix.push_back(tiny_cfg(32, 8));
  {
    ModelConfig m = tiny_cfg(16, 4);
    m.head = {16, 4, 1};
    matrix.push_back(m);
  }
  {
    ModelConfig m = tiny_cfg(16, 4);
    m.conv_norms = {NormSlot::BatchNorm, NormSlot::None};
    matrix.push_back(m);
  }
  matrix.push_back(ModelConfig{});  // full convlstm model

  for (const auto& cfg : matrix) {
    Rng rng(3);
    Model<float> m(cfg, rng);
    const ParamCounts live = m.count_params();
    const ParamCounts plan = plan_param_counts(cfg);
    CHECK(live.backbone == plan.backbone);
    CHECK(live.aggregator == plan.aggregator);
    CHECK(live.batchnorm == plan.batchnorm);
    CHECK(live.head == plan.head);

    // The plan describes exactly the live store (names, dims, trainability).
    std::map<std::string, std::vector<int>> plan_train, plan_buf;
    for (const auto& s : model_plan(cfg)) (s.trainable ? plan_train : plan_buf)[s.name] = s.dims;
    CHECK(plan_train.size() == m.params().size());
    CHECK(plan_buf.size() == m.buffers().size());
    for (auto& [name, ref] : m.params()) CHECK(plan_train.at(name) == ref.value->dims);
    for (auto& [name, ref] : m.buffers()) CHECK(plan_buf.at(name) == ref.value->dims);
  }
}

TEST_CASE("live store matches the plan for the lstm variant") {
  ModelConfig cfg;
  cfg.aggregator = AggregatorKind::Lstm;
  Rng rng(4);
  Model<float> m(cfg, rng);
  const ParamCounts live = m.count_params();
  const ParamCounts plan = plan_param_counts(cfg);
  CHECK(live.total() == plan.total());
  CHECK(live.aggregator == 20388000);
}

TEST_CASE("forward output is a probability and frames matter") {
  ModelConfig cfg = tiny_cfg();
  Rng rng(5);
  Model<float> m(cfg, rng);
  m.set_mode(Mode::Eval);
  Rng data_rng(6);
  auto clips = random_clips(1, 3, 16, data_rng);

  const float p = m.forward(clips)[0];
  CHECK(p > 0.0f);
  CHECK(p < 1.0f);

  // Permuting the frames changes the output in general.
  auto permuted = clips;
  std::swap(permuted[0][0], permuted[0][2]);
  const float p2 = m.forward(permuted)[0];
  CHECK(p != p2);

  // Wrong frame dims are a shape error.
  auto bad = random_clips(1, 2, 8, data_rng);
  CHECK_THROWS_AS(m.forward(bad), ShapeError);
}

TEST_CASE("zero aggregator weights make the output clip-independent") {
  ModelConfig cfg = tiny_cfg();
  Rng rng(7);
  Model<float> m(cfg, rng);
  m.params().at("agg.wx").value->fill(0.0f);
  m.params().at("agg.wh").value->fill(0.0f);
  m.params().at("agg.b").value->fill(0.0f);
  m.set_mode(Mode::Eval);

  Rng data_rng(8);
  const float p1 = m.forward(random_clips(1, 3, 16, data_rng))[0];
  const float p2 = m.forward(random_clips(1, 5, 16, data_rng))[0];
  CHECK(p1 == p2);
}

TEST_CASE("eval forward is deterministic and side-effect free") {
  ModelConfig cfg = tiny_cfg();
  Rng rng(11);
  Model<float> m(cfg, rng);
  m.set_mode(Mode::Eval);
  Rng data_rng(12);
  auto clips = random_clips(2, 3, 16, data_rng);

  std::map<std::string, Tensor<float>> before;
  for (auto& [name, ref] : m.params()) before[name] = *ref.value;
  for (auto& [name, ref] : m.buffers()) before["buf:" + name] = *ref.value;

  const auto p1 = m.forward(clips);
  const auto p2 = m.forward(clips);
  CHECK(p1 == p2);
  for (auto& [name, ref] : m.params()) CHECK(bit_equal(before.at(name), *ref.value));
  for (auto& [name, ref] : m.buffers()) CHECK(bit_equal(before.at("buf:" + name), *ref.value));
}

TEST_CASE("end-to-end gradient on a small train-mode model") {
  ModelConfig cfg;
  cfg.backbone = Backbone::TinyCnn;
  cfg.aggregator = AggregatorKind::ConvLstm;
  cfg.aggregator_width = 2;
  cfg.head = {4, 1};
  cfg.input_size = 8;
  Rng rng(13);
  Model<double> m(cfg, rng);
  m.set_mode(Mode::Train);

  Rng data_rng(14);
  std::vector<std::vector<Tensor<double>>> clips(2);
  for (auto& clip : clips) {
    clip.resize(2);
    for (auto& f : clip) {
      f = Tensor<double>({3, 8, 8});
      data_rng.fill_normal(f);
    }
  }
  std::vector<double> proj = {data_rng.normal(), data_rng.normal()};

  auto loss = [&]() {
    const auto p = m.forward(clips);
    return p[0] * proj[0] + p[1] * proj[1];
  };
  m.zero_grads();
  m.forward(clips);
  auto clip_grads = m.backward(proj);

  for (auto& [name, ref] : m.params()) {
    auto fd = oracle::fd_grad(*ref.value, loss);
    CHECK_MESSAGE(oracle::max_rel_err(fd, *ref.grad) <= 1e-4, name);
  }
  for (int b = 0; b < 2; ++b)
    for (int t = 0; t < 2; ++t) {
      auto fd = oracle::fd_grad(clips[b][t], loss);
      CHECK(oracle::max_rel_err(fd, clip_grads[b][t]) <= 1e-4);
    }
}

TEST_CASE("weight archive round trip is bit exact") {
  TempDir dir("archive");
  ModelConfig cfg = tiny_cfg();
  Rng r1(21), r2(22);
  Model<float> a(cfg, r1);
  a.set_norm_stats(0.25, 1.5);
  a.save_weights(dir.file("w.fnl"));

  Model<float> b(cfg, r2);
  b.load_weights(dir.file("w.fnl"));
  for (auto& [name, ref] : a.params()) CHECK(bit_equal(*ref.value, *b.params().at(name).value));
  for (auto& [name, ref] : a.buffers()) CHECK(bit_equal(*ref.value, *b.buffers().at(name).value));
  CHECK(b.norm_mean() == doctest::Approx(0.25));
}

TEST_CASE("backbone-only archive leaves the rest at initialization") {
  TempDir dir("partial");
  ModelConfig cfg = tiny_cfg();
  Rng r1(31), r2(32), r3(32);
  Model<float> a(cfg, r1);

  // Filter a full archive down to backbone tensors.
  a.save_weights(dir.file("full.fnl"));
  auto entries = read_weight_archive(dir.file("full.fnl"));
  std::vector<ArchiveEntry> backbone_only;
  for (auto& e : entries)
    if (e.name.rfind("backbone.", 0) == 0) backbone_only.push_back(e);
  write_weight_archive(dir.file("backbone.fnl"), backbone_only);

  Model<float> fresh(cfg, r2);  // reference: untouched init with seed 32
  Model<float> c(cfg, r3);
  c.load_weights(dir.file("backbone.fnl"));
  for (auto& [name, ref] : c.params()) {
    if (name.rfind("backbone.", 0) == 0)
      CHECK(bit_equal(*ref.value, *a.params().at(name).value));
    else
      CHECK(bit_equal(*ref.value, *fresh.params().at(name).value));
  }
}

TEST_CASE("backbone_init archive path initializes through the config") {
  TempDir dir("initarch");
  ModelConfig cfg = tiny_cfg();
  Rng r1(41);
  Model<float> a(cfg, r1);
  a.save_weights(dir.file("w.fnl"));

  ModelConfig cfg2 = tiny_cfg();
  cfg2.backbone_init = "archive:" + dir.file("w.fnl");
  Rng r2(42);
  Model<float> b(cfg2, r2);
  for (auto& [name, ref] : b.params()) CHECK(bit_equal(*ref.value, *a.params().at(name).value));

  ModelConfig cfg3 = tiny_cfg();
  cfg3.backbone_init = "archive:" + dir.file("missing.fnl");
  Rng r3(43);
  CHECK_THROWS_AS(Model<float>(cfg3, r3), IoError);
}

TEST_CASE("tampered or mismatched archives are rejected and leave the model untouched") {
  TempDir dir("tamper");
  ModelConfig cfg = tiny_cfg();
  Rng r1(51), r2(52);
  Model<float> a(cfg, r1);
  a.save_weights(dir.file("w.fnl"));

  // Corrupt the magic.
  {
    std::fstream f(dir.file("w.fnl"), std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  Model<float> b(cfg, r2);
  std::map<std::string, Tensor<float>> before;
  for (auto& [name, ref] : b.params()) before[name] = *ref.value;
  CHECK_THROWS_AS(b.load_weights(dir.file("w.fnl")), FormatError);
  for (auto& [name, ref] : b.params()) CHECK(bit_equal(before.at(name), *ref.value));

  // Truncation.
  a.save_weights(dir.file("t.fnl"));
  {
    const auto full = read_file(dir.file("t.fnl"));
    atomic_write_file(dir.file("t.fnl"), full.substr(0, full.size() / 2));
  }
  CHECK_THROWS_AS(b.load_weights(dir.file("t.fnl")), FormatError);

  // Name/dims mismatch lists offenders and modifies nothing.
  std::vector<ArchiveEntry> bogus;
  bogus.push_back({"no.such.tensor", {2}, {1.0f, 2.0f}});
  bogus.push_back({"agg.b", {3}, {1.0f, 2.0f, 3.0f}});  // wrong dims
  write_weight_archive(dir.file("bogus.fnl"), bogus);
  try {
    b.load_weights(dir.file("bogus.fnl"));
    CHECK(false);
  } catch (const LoadError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("no.such.tensor") != std::string::npos);
    CHECK(msg.find("agg.b") != std::string::npos);
  }
  for (auto& [name, ref] : b.params()) CHECK(bit_equal(before.at(name), *ref.value));
}
