#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "marsnet/synth/patches.hpp"
#include "marsnet/train/checkpoint.hpp"
#include "marsnet/train/predict.hpp"
#include "marsnet/train/trainer.hpp"

using namespace marsnet;
using namespace marsnet::train;
using model::EncoderMode;
using model::MarsNet;
using model::ModelConfig;
using raster::Modality;

namespace {

Tensor<double> random_tensor(Shape s, std::uint64_t seed, double sd = 1.0) {
  Tensor<double> t(s);
  Rng rng(seed);
  for (auto& v : t.vec()) v = rng.normal(0.0, sd);
  return t;
}

ModelConfig small_config(int spatial = 16) {
  ModelConfig c;
  c.stage_widths = {8, 16};
  c.input_spatial = spatial;
  c.modalities = {{Modality::sentinel2, 17}, {Modality::palsar2, 4}};
  c.seed = 3;
  return c;
}

synth::PatchRecipe small_recipe(int size = 16) {
  synth::PatchRecipe r;
  r.size = size;
  r.footprint_spacing = 4;
  return r;
}

raster::StackSet random_stacks(int width, int height, std::uint64_t seed) {
  raster::GridGeometry g;
  g.origin_x = 500000;
  g.origin_y = 4800000;
  g.width = width;
  g.height = height;
  std::array<raster::Raster, 4> parts;
  Rng rng(seed);
  for (Modality m : raster::kModalities) {
    raster::Raster r(g, raster::band_count(m));
    for (double& v : r.data()) v = rng.normal();
    parts[static_cast<int>(m)] = std::move(r);
  }
  return raster::assemble_stacks(parts[0], parts[1], parts[2], parts[3]);
}

raster::Raster forest(const raster::StackSet& s, double value) {
  return raster::Raster(s[0].raster.geometry(), 1, value);
}

}  // namespace

TEST(MaskedLossTest, TrivialCases) {
  ModelConfig cfg = small_config();
  MarsNet<double> net(cfg);
  ag::Tape<double> t;
  Tensor<double> label(Shape{1, 1, 2, 2}, 0.0), mask(Shape{1, 1, 2, 2}, 0.0);
  label[1] = 3.0;
  mask[1] = 1.0;
  const auto exact = t.constant(label);
  EXPECT_EQ(masked_loss(t, exact, label, mask, net.params(), 0.0).value(), 0.0);
  Tensor<double> off = label;
  off[1] = 5.0;
  off[0] = 100.0;  // unlabeled pixels do not count
  EXPECT_EQ(masked_loss(t, t.constant(off), label, mask, net.params(), 0.0).value(), 4.0);
  const auto empty = masked_loss(t, t.constant(off), label, Tensor<double>(label.shape()), net.params(), 0.0);
  EXPECT_TRUE(empty.empty());
  EXPECT_EQ(empty.value(), 0.0);
  EXPECT_THROW(masked_loss(t, t.constant(Tensor<double>(Shape{1, 1, 3, 2})), label, mask, net.params(), 0.0), Error);
}

TEST(MaskedLossTest, RegularizedValueMatchesDirectSummation) {
  ModelConfig cfg = small_config();
  MarsNet<double> net(cfg);
  const auto pred = random_tensor(Shape{2, 1, 4, 4}, 1), label = random_tensor(Shape{2, 1, 4, 4}, 2, 10.0);
  Tensor<double> mask(pred.shape());
  Rng rng(3);
  for (auto& m : mask.vec()) m = rng.bernoulli(0.4);
  double sse = 0, n = 0, theta = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (mask[i] != 0) {
      sse += (pred[i] - label[i]) * (pred[i] - label[i]);
      n += 1;
    }
  for (const auto& p : net.params())
    if (p.kind == ag::ParamKind::kernel)
      for (double v : p.value.vec()) theta += v * v;
  ag::Tape<double> t;
  const double lambda = 1e-5;
  const auto loss = masked_loss(t, t.constant(pred), label, mask, net.params(), lambda);
  EXPECT_NEAR(loss.value(), sse / n + lambda * theta, 1e-12);
  // Doubling lambda adds exactly lambda * sum(theta^2).
  const auto loss2 = masked_loss(t, t.constant(pred), label, mask, net.params(), 2 * lambda);
  EXPECT_NEAR(loss2.value() - loss.value(), lambda * theta, 1e-12);
}

TEST(MaskedLossTest, PenaltyGradientIsTwoLambdaTheta) {
  ModelConfig cfg = small_config();
  MarsNet<double> net(cfg);
  ag::Tape<double> t;
  const auto pred = t.constant(Tensor<double>(Shape{1, 1, 2, 2}));
  const Tensor<double> zeros(Shape{1, 1, 2, 2});
  const auto loss = masked_loss(t, pred, zeros, zeros, net.params(), 0.5);
  net.params().zero_grad();
  loss.backward(t, net.params());
  for (const auto& p : net.params())
    for (std::size_t i = 0; i < p.value.size(); ++i)
      EXPECT_EQ(p.grad[i], p.decays() ? p.value[i] : 0.0) << p.name;
}

TEST(AdamTest, FirstStepMovesByLearningRate) {
  model::ParamStore<double> store;
  auto& p = store.add("w", ag::ParamKind::kernel, Shape{1, 3, 1, 1});
  p.value[0] = 1.0;
  p.grad[0] = 0.5;
  p.grad[1] = -2.0;
  p.grad[2] = 0.0;
  Adam<double> opt(store, 0.01);
  opt.step();
  // Bias-corrected first step is lr * g / (|g| + eps').
  EXPECT_NEAR(p.value[0], 1.0 - 0.01 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(p.value[1], 0.01 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_EQ(p.value[2], 0.0);
}

TEST(TrainingTest, SmallStepDecreasesSampleLoss) {
  ModelConfig cfg = small_config();
  MarsNet<double> net(cfg);
  const auto samples = synth::synthetic_patches(1, 5, small_recipe());
  const std::vector<std::size_t> idx{0};
  auto batch = make_batch<double>(samples, idx, cfg);
  model::ForwardContext<double> ctx;
  ctx.training = true;
  ctx.dropout_seed = 9;
  auto loss_now = [&] {
    ag::Tape<double> t(false);
    return masked_loss(t, net.forward(t, batch.inputs, ctx).prediction, batch.label, batch.mask, net.params(), 0.0).value();
  };
  const double before = loss_now();
  ag::Tape<double> t;
  const auto loss = masked_loss(t, net.forward(t, batch.inputs, ctx).prediction, batch.label, batch.mask, net.params(), 0.0);
  net.params().zero_grad();
  loss.backward(t, net.params());
  Adam<double> opt(net.params(), 1e-5);
  opt.step();
  EXPECT_LT(loss_now(), before);
}

TEST(TrainingTest, EarlyStopAfterWorseningValidation) {
  ModelConfig cfg = small_config();
  MarsNet<float> net(cfg);
  const auto samples = synth::synthetic_patches(3, 6, small_recipe());
  const std::vector<std::size_t> tr{0, 1}, va{2};
  TrainConfig tc;
  tc.early_stop_patience = 1;
  tc.max_epochs = 20;
  tc.batch_size = 2;
  std::vector<Tensor<float>> after_first;
  TrainOptions<float> opts;
  opts.validator = [&](const MarsNet<float>& n, int epoch) {
    if (epoch == 1) after_first = n.snapshot();
    return 1.0 + epoch;  // worsens every epoch
  };
  const auto h = train_model(net, samples, tr, va, tc, opts);
  EXPECT_EQ(h.epochs.size(), 2u);
  EXPECT_EQ(h.best_epoch, 1);
  EXPECT_TRUE(h.early_stopped);
  const auto now = net.snapshot();
  ASSERT_EQ(now.size(), after_first.size());
  for (std::size_t i = 0; i < now.size(); ++i) EXPECT_EQ(now[i].vec(), after_first[i].vec());
}

TEST(TrainingTest, ReturnsParametersOfMinimumValidationEpoch) {
  ModelConfig cfg = small_config();
  MarsNet<float> net(cfg);
  const auto samples = synth::synthetic_patches(3, 6, small_recipe());
  const std::vector<std::size_t> tr{0, 1}, va{2};
  TrainConfig tc;
  tc.early_stop_patience = 2;
  tc.max_epochs = 10;
  const std::vector<double> val{5, 3, 4, 2, 2.5, 6, 7, 1};
  std::vector<std::vector<Tensor<float>>> snaps;
  TrainOptions<float> opts;
  opts.validator = [&](const MarsNet<float>& n, int epoch) {
    snaps.push_back(n.snapshot());
    return val[epoch - 1];
  };
  const auto h = train_model(net, samples, tr, va, tc, opts);
  EXPECT_EQ(h.epochs.size(), 6u);
  EXPECT_EQ(h.best_epoch, 4);
  EXPECT_EQ(h.best_val_loss, 2.0);
  const auto now = net.snapshot();
  for (std::size_t i = 0; i < now.size(); ++i) EXPECT_EQ(now[i].vec(), snaps[3][i].vec());
}

TEST(TrainingTest, IdenticalSeedsGiveIdenticalHistory) {
  const auto samples = synth::synthetic_patches(6, 8, small_recipe());
  const std::vector<std::size_t> tr{0, 1, 2, 3}, va{4, 5};
  TrainConfig tc;
  tc.max_epochs = 3;
  tc.batch_size = 2;
  tc.seed = 17;
  auto run = [&] {
    MarsNet<float> net(small_config());
    auto h = train_model(net, samples, tr, va, tc);
    return std::make_pair(h.to_json().dump(), model::serialize_params(net));
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(TrainingTest, NonFiniteLossAborts) {
  auto samples = synth::synthetic_patches(3, 6, small_recipe());
  for (auto& s : samples)
    for (std::size_t i = 0; i < s.mask.size(); ++i)
      if (s.mask[i]) s.label[i] = std::numeric_limits<float>::quiet_NaN();
  MarsNet<float> net(small_config());
  TrainConfig tc;
  tc.max_epochs = 1;
  const std::vector<std::size_t> tr{0, 1}, va{2};
  try {
    train_model(net, samples, tr, va, tc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::runtime);
    EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
  }
}

TEST(TrainingTest, HeadBiasStartsAtMeanTrainingLabel) {
  const auto samples = synth::synthetic_patches(3, 6, small_recipe());
  const std::vector<std::size_t> tr{0, 2}, va{1};
  double sum = 0;
  std::size_t n = 0;
  for (auto k : tr)
    for (std::size_t i = 0; i < samples[k].mask.size(); ++i)
      if (samples[k].mask[i]) {
        sum += samples[k].label[i];
        ++n;
      }
  ASSERT_GT(n, 0u);
  EXPECT_NEAR(mean_label(samples, tr), sum / n, 1e-9);

  TrainConfig tc;
  tc.max_epochs = 1;
  tc.batch_size = 2;
  tc.learning_rate = 1e-12;  // the init is the only visible change
  MarsNet<float> net(small_config());
  EXPECT_EQ(net.params().at("head.b").value[0], 0.0f);
  train_model(net, samples, tr, va, tc);
  EXPECT_NEAR(net.params().at("head.b").value[0], sum / n, 1e-4);
  tc.init_head_bias = false;
  MarsNet<float> plain(small_config());
  train_model(plain, samples, tr, va, tc);
  EXPECT_NEAR(plain.params().at("head.b").value[0], 0.0f, 1e-6);
}

TEST(TrainingTest, ConfigKeyValues) {
  TrainConfig c;
  c.learning_rate = 0.002;
  c.seed = 5;
  const auto kv = io::KeyValues::parse(c.to_kv().str(), "t");
  EXPECT_EQ(TrainConfig::from_kv(kv).to_kv().str(), c.to_kv().str());
  io::KeyValues bad = kv;
  bad.set("momentum", "0.9");
  EXPECT_THROW(TrainConfig::from_kv(bad), Error);
  io::KeyValues neg = kv;
  neg.set("batch_size", "0");
  EXPECT_THROW(TrainConfig::from_kv(neg), Error);
}

TEST(PredictTest, ReflectIndex) {
  EXPECT_EQ(reflect_index(-1, 5), 1);
  EXPECT_EQ(reflect_index(5, 5), 3);
  EXPECT_EQ(reflect_index(7, 5), 1);
  EXPECT_EQ(reflect_index(9, 5), 1);
  EXPECT_EQ(reflect_index(3, 1), 0);
}

TEST(PredictTest, TilesCoverGridAndMatchDirectForward) {
  ModelConfig cfg = small_config();
  MarsNet<float> net(cfg);
  const auto stacks = random_stacks(32, 32, 1);
  const auto map = predict_map(net, stacks, forest(stacks, 1.0));
  EXPECT_EQ(map.width(), 32);
  EXPECT_EQ(map.valid_count(), 32u * 32u);
  // Direct forward on the tile at (16, 0), built independently of the tiler.
  std::vector<Tensor<float>> in;
  for (const auto& mi : cfg.modalities) {
    const auto& r = raster::stack_of(stacks, mi.modality).raster;
    Tensor<float> x(Shape{1, mi.bands, 16, 16});
    for (int b = 0; b < mi.bands; ++b)
      for (int y = 0; y < 16; ++y)
        for (int c = 0; c < 16; ++c) x(0, b, y, c) = static_cast<float>(r.at(b, 16 + y, c));
    in.push_back(std::move(x));
  }
  const auto direct = net.predict(in);
  for (int y = 0; y < 16; ++y)
    for (int c = 0; c < 16; ++c)
      EXPECT_NEAR(map.at(0, 16 + y, c), std::max(0.0, static_cast<double>(direct(0, 0, y, c))), 1e-6);
}

TEST(PredictTest, IndependentOfTileOrderAndBatching) {
  ModelConfig cfg = small_config();
  MarsNet<float> net(cfg);
  const auto stacks = random_stacks(40, 36, 2);  // edge tiles need padding
  const auto mask = forest(stacks, 1.0);
  const auto a = predict_map(net, stacks, mask);
  PredictOptions o;
  o.order_seed = 99;
  o.tiles_per_batch = 3;
  const auto b = predict_map(net, stacks, mask, o);
  for (std::size_t i = 0; i < a.data().size(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
  for (double v : a.data()) EXPECT_GE(v, 0.0);
}

TEST(PredictTest, MaskAndGeometryHandling) {
  ModelConfig cfg = small_config();
  MarsNet<float> net(cfg);
  const auto stacks = random_stacks(20, 20, 3);
  const auto none = predict_map(net, stacks, forest(stacks, 0.0));
  EXPECT_EQ(none.valid_count(), 0u);
  auto half = forest(stacks, 1.0);
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 20; ++c) half.at(0, r, c) = 0.0;
  half.set_nodata(15, 3);
  const auto m = predict_map(net, stacks, half);
  EXPECT_EQ(m.valid_count(), 20u * 10u - 1u);
  EXPECT_TRUE(m.is_nodata(15, 3));
  EXPECT_TRUE(m.is_nodata(0, 0));
  const auto other = random_stacks(24, 20, 4);
  EXPECT_THROW(predict_map(net, stacks, forest(other, 1.0)), Error);
}

TEST(CheckpointDirTest, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "marsnet_ckpt_test";
  std::filesystem::remove_all(dir);
  ModelConfig cfg = small_config();
  cfg.encoder_mode = EncoderMode::shared;
  MarsNet<float> net(cfg);
  TrainConfig tc;
  tc.seed = 12;
  raster::NormStats st;
  for (int m = 0; m < 4; ++m) {
    st.mean[m].assign(raster::band_count(static_cast<Modality>(m)), 0.25 * m);
    st.std[m].assign(raster::band_count(static_cast<Modality>(m)), 1.5);
  }
  TrainHistory h;
  h.epochs.push_back({1, 2.0, 3.0, 0.1, 0});
  h.best_epoch = 1;
  h.best_val_loss = 3.0;
  save_checkpoint(dir, net, tc, st, h);
  const auto c = load_checkpoint(dir);
  EXPECT_EQ(model::serialize_params(*c.net), model::serialize_params(net));
  EXPECT_EQ(c.train.to_kv().str(), tc.to_kv().str());
  EXPECT_EQ(c.stats.mean[2], st.mean[2]);
  EXPECT_EQ(c.history["best_epoch"], 1);
  EXPECT_THROW(load_checkpoint(dir / "missing"), Error);
  std::filesystem::remove_all(dir);
}
