#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "marsnet/model/checkpoint.hpp"
#include "marsnet/model/marsnet.hpp"

using namespace marsnet;
using namespace marsnet::model;

namespace {

using Vec = std::vector<double>;

Tensor<double> random_tensor(Shape s, std::uint64_t seed, double sd = 1.0) {
  Tensor<double> t(s);
  Rng rng(seed);
  for (auto& v : t.vec()) v = rng.normal(0.0, sd);
  return t;
}

// Plain nested-loop "same" convolution on one sample, [c][y][x] layout.
Vec conv_ref(const Vec& x, int cin, int h, int w, const Vec& k, int cout, int ks, int groups, const Vec* bias) {
  Vec y(static_cast<std::size_t>(cout) * h * w, 0.0);
  const int cg = cin / groups, og = cout / groups, pad = ks / 2;
  for (int o = 0; o < cout; ++o) {
    const int g = o / og;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        double s = bias ? (*bias)[o] : 0.0;
        for (int i = 0; i < cg; ++i)
          for (int dy = 0; dy < ks; ++dy)
            for (int dx = 0; dx < ks; ++dx) {
              const int yy = r + dy - pad, xx = c + dx - pad;
              if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
              s += k[((static_cast<std::size_t>(o) * cg + i) * ks + dy) * ks + dx] * x[(static_cast<std::size_t>(g * cg + i) * h + yy) * w + xx];
            }
        y[(static_cast<std::size_t>(o) * h + r) * w + c] = s;
      }
  }
  return y;
}

double sigm(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Vec sample0(const Tensor<double>& t) { return Vec(t.data(), t.data() + static_cast<std::size_t>(t.c()) * t.h() * t.w()); }

ModelConfig tiny_config() {
  ModelConfig c;
  c.stage_widths = {8, 16};
  c.input_spatial = 8;
  c.modalities = {{Modality::sentinel1, 9}, {Modality::palsar2, 4}};
  c.seed = 11;
  return c;
}

std::vector<Tensor<double>> random_inputs(const ModelConfig& c, int n, std::uint64_t seed) {
  std::vector<Tensor<double>> v;
  for (std::size_t i = 0; i < c.modalities.size(); ++i)
    v.push_back(random_tensor(Shape{n, c.modalities[i].bands, c.input_spatial, c.input_spatial}, seed + i));
  return v;
}

}  // namespace

TEST(ModelConfigTest, ValidatesWidthsAndSplits) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  c.stage_widths = {64, 64, 128};
  EXPECT_THROW(c.validate(), Error);
  c.stage_widths = {6, 12};  // upper split 3 is not divisible by r = 2
  EXPECT_THROW(c.validate(), Error);
  c.esbc_enabled = false;
  EXPECT_NO_THROW(c.validate());
  ModelConfig d;
  d.encoder_mode = EncoderMode::sar_shared;
  d.modalities = {{Modality::sentinel2, 17}, {Modality::sentinel1, 9}};
  EXPECT_THROW(d.validate(), Error);
  ModelConfig e;
  e.input_spatial = 60;
  EXPECT_THROW(e.validate(), Error);
}

TEST(ModelConfigTest, KeyValueRoundTrip) {
  ModelConfig c = tiny_config();
  c.encoder_mode = EncoderMode::sar_shared;
  c.bru_alpha = 0.5;
  c.gate_threshold = 0.4;
  c.seed = 18446744073709551615ULL;
  const auto kv = io::KeyValues::parse(c.to_kv().str(), "test");
  const ModelConfig d = ModelConfig::from_kv(kv);
  EXPECT_EQ(d.to_kv().str(), c.to_kv().str());
  EXPECT_EQ(d.seed, c.seed);
  EXPECT_EQ(d.modalities, c.modalities);
  io::KeyValues bad = kv;
  bad.set("stage_width", "8,16");
  EXPECT_THROW(ModelConfig::from_kv(bad), Error);
}

TEST(ModelConfigTest, GroupNormClamp) {
  EXPECT_EQ(clamp_gn_groups(16, 64), 16);
  EXPECT_EQ(clamp_gn_groups(16, 8), 8);
  EXPECT_EQ(clamp_gn_groups(16, 24), 12);
  EXPECT_EQ(clamp_gn_groups(16, 18), 9);
}

TEST(SruTest, MatchesScalarOracle) {
  const int b = 4, h = 2, w = 2;
  ModelConfig cfg;
  cfg.gn_groups = 2;
  ParamStore<double> store;
  auto sru = Sru<double>::make(store, "sru", b, cfg);
  const Vec gamma{0.7, -1.3, 0.4, 2.1}, beta{0.1, -0.2, 0.05, 0.3};
  for (int c = 0; c < b; ++c) {
    sru.gamma->value[c] = gamma[c];
    sru.beta->value[c] = beta[c];
  }
  const auto x = random_tensor(Shape{1, b, h, w}, 3);
  ag::Tape<double> t(false);
  const auto y = t.value(sru(t, t.constant(x), nullptr));

  // Oracle: normalize per group of 2 bands, weight, gate, cross-add halves.
  const Vec xv = sample0(x);
  const int hw = h * w, cg = b / 2;
  Vec gn(xv.size());
  for (int g = 0; g < 2; ++g) {
    double m = 0, v = 0;
    for (int i = 0; i < cg * hw; ++i) m += xv[g * cg * hw + i];
    m /= cg * hw;
    for (int i = 0; i < cg * hw; ++i) v += std::pow(xv[g * cg * hw + i] - m, 2);
    v /= cg * hw;
    for (int c = g * cg; c < (g + 1) * cg; ++c)
      for (int i = 0; i < hw; ++i) gn[c * hw + i] = (xv[c * hw + i] - m) / std::sqrt(v + 1e-5) * gamma[c] + beta[c];
  }
  double gsum = 0;
  for (double g : gamma) gsum += std::abs(g);
  Vec x1(xv.size()), x2(xv.size());
  for (int c = 0; c < b; ++c)
    for (int i = 0; i < hw; ++i) {
      const double wgt = sigm(std::abs(gamma[c]) / gsum * gn[c * hw + i]);
      const double w1 = wgt > 0.5 ? 1.0 : 0.0;
      x1[c * hw + i] = w1 * xv[c * hw + i];
      x2[c * hw + i] = (1.0 - w1) * xv[c * hw + i];
    }
  for (int c = 0; c < b; ++c)
    for (int i = 0; i < hw; ++i) {
      const int half = b / 2;
      const double expect = c < half ? x1[c * hw + i] + x2[(c + half) * hw + i] : x2[(c - half) * hw + i] + x1[c * hw + i];
      EXPECT_NEAR(y[c * hw + i], expect, 1e-9) << "band " << c << " px " << i;
    }
}

TEST(SruTest, AllInformativeIsIdentityAndZeroMapsToZero) {
  ModelConfig cfg;
  ParamStore<double> store;
  auto sru = Sru<double>::make(store, "sru", 6, cfg);
  sru.threshold = 1e-12;  // every sigmoid output passes, so W1 = 1 and W2 = 0
  const auto x = random_tensor(Shape{2, 6, 3, 3}, 5);
  ag::Tape<double> t(false);
  const auto y = t.value(sru(t, t.constant(x), nullptr));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
  sru.threshold = 0.5;
  const auto z = t.value(sru(t, t.constant(Tensor<double>(Shape{1, 6, 3, 3})), nullptr));
  for (double v : z.vec()) EXPECT_EQ(v, 0.0);
}

TEST(SruTest, ConservesTotalOverRandomInputs) {
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const int b = 2 * (1 + static_cast<int>(rng.below(8)));
    ModelConfig cfg;
    cfg.seed = trial;
    ParamStore<double> store;
    auto sru = Sru<double>::make(store, "sru", b, cfg);
    for (auto& v : sru.gamma->value.vec()) v = rng.normal();
    for (auto& v : sru.beta->value.vec()) v = rng.normal();
    const auto x = random_tensor(Shape{1 + static_cast<int>(rng.below(2)), b, 4, 5}, 1000 + trial, 3.0);
    ag::Tape<double> t(false);
    const auto y = t.value(sru(t, t.constant(x), nullptr));
    double sx = 0, sy = 0, sabs = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      sx += x[i];
      sy += y[i];
      sabs += std::abs(x[i]);
    }
    EXPECT_LE(std::abs(sy - sx), 1e-6 * sabs) << "trial " << trial;
  }
}

TEST(BruTest, MatchesScalarOracle) {
  // b = 8 is the smallest width where the squeezed upper split (2) is divisible
  // by g = 2 at alpha = 1/2, r = 2.
  const int b = 8, h = 3, w = 3, hw = h * w;
  ModelConfig cfg;
  cfg.seed = 21;
  ParamStore<double> store;
  auto bru = Bru<double>::make(store, "bru", b, cfg);
  for (auto& p : store)
    if (p.kind == ParamKind::bias) p.value = random_tensor(p.value.shape(), 77, 0.3);
  const auto x = random_tensor(Shape{1, b, h, w}, 4);
  ag::Tape<double> t(false);
  Bru<double>::Trace trace;
  const auto y = t.value(bru(t, t.constant(x), &trace));

  const Vec xv = sample0(x);
  const auto& s = bru.shape;
  ASSERT_EQ(s.up, 4);
  ASSERT_EQ(s.up_c, 2);
  ASSERT_EQ(s.low_c, 2);
  const Vec xup(xv.begin(), xv.begin() + s.up * hw), xlow(xv.begin() + s.up * hw, xv.end());
  const Vec up = conv_ref(xup, s.up, h, w, bru.squeeze_up.weight->value.vec(), s.up_c, 1, 1, nullptr);
  const Vec low = conv_ref(xlow, s.low, h, w, bru.squeeze_low.weight->value.vec(), s.low_c, 1, 1, nullptr);
  const Vec gw = conv_ref(up, s.up_c, h, w, bru.gwc.weight->value.vec(), b, 3, 2, &bru.gwc.bias->value.vec());
  const Vec pw = conv_ref(up, s.up_c, h, w, bru.pwc1.weight->value.vec(), b, 1, 1, nullptr);
  const Vec p2 = conv_ref(low, s.low_c, h, w, bru.pwc2.weight->value.vec(), b - s.low_c, 1, 1, nullptr);
  Vec y1(b * hw), y2(b * hw);
  for (int i = 0; i < b * hw; ++i) y1[i] = gw[i] + pw[i];
  for (int i = 0; i < b * hw; ++i) y2[i] = i < (b - s.low_c) * hw ? p2[i] : low[i - (b - s.low_c) * hw];
  for (int c = 0; c < b; ++c) {
    double s1 = 0, s2 = 0;
    for (int i = 0; i < hw; ++i) {
      s1 += y1[c * hw + i];
      s2 += y2[c * hw + i];
    }
    s1 /= hw;
    s2 /= hw;
    const double b1 = std::exp(s1) / (std::exp(s1) + std::exp(s2)), b2 = std::exp(s2) / (std::exp(s1) + std::exp(s2));
    for (int i = 0; i < hw; ++i) EXPECT_NEAR(y[c * hw + i], b1 * y1[c * hw + i] + b2 * y2[c * hw + i], 1e-9);
  }
  const auto& beta = t.value(trace.beta);
  for (int c = 0; c < b; ++c) EXPECT_EQ(beta[c] + beta[b + c], 1.0);
}

TEST(BruTest, BetaSumsToOneAndZeroInputGivesZero) {
  ModelConfig cfg;
  ParamStore<double> store;
  auto bru = Bru<double>::make(store, "bru", 16, cfg);
  for (int trial = 0; trial < 20; ++trial) {
    ag::Tape<double> t(false);
    Bru<double>::Trace trace;
    bru(t, t.constant(random_tensor(Shape{2, 16, 4, 4}, 300 + trial, 5.0)), &trace);
    const auto& beta = t.value(trace.beta);
    for (int n = 0; n < 2; ++n)
      for (int c = 0; c < 16; ++c) EXPECT_EQ(beta(n, c, 0, 0) + beta(n, 16 + c, 0, 0), 1.0);
  }
  ag::Tape<double> t(false);
  const auto y = t.value(bru(t, t.constant(Tensor<double>(Shape{1, 16, 4, 4}))));
  for (double v : y.vec()) EXPECT_EQ(v, 0.0);
}

TEST(EsbcTest, DisabledVariantIsPlainConvolution) {
  ModelConfig cfg;
  cfg.esbc_enabled = false;
  cfg.seed = 4;
  ParamStore<double> store;
  auto e = Esbc<double>::make(store, "esbc", 5, 6, cfg);
  e.plain.bias->value = random_tensor(Shape{1, 6, 1, 1}, 8);
  const auto x = random_tensor(Shape{1, 5, 7, 6}, 9);
  ag::Tape<double> t(false);
  const auto y = t.value(e(t, t.constant(x), nullptr));
  const Vec ref = conv_ref(sample0(x), 5, 7, 6, e.plain.weight->value.vec(), 6, 3, 1, &e.plain.bias->value.vec());
  ASSERT_EQ(y.size(), ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(EsbcTest, ZeroInputZeroBiasGivesZero) {
  ModelConfig cfg;
  ParamStore<double> store;
  auto e = Esbc<double>::make(store, "esbc", 17, 64, cfg);
  ag::Tape<double> t(false);
  const auto y = t.value(e(t, t.constant(Tensor<double>(Shape{1, 17, 8, 8})), nullptr));
  EXPECT_EQ(y.shape(), (Shape{1, 64, 8, 8}));
  for (double v : y.vec()) EXPECT_EQ(v, 0.0);
}

TEST(FusionTest, TwoModalityMatchesScalarOracle) {
  ModelConfig cfg;
  cfg.stage_widths = {8, 16};
  cfg.input_spatial = 16;
  cfg.modalities = {{Modality::sentinel2, 3}, {Modality::sentinel1, 2}};
  cfg.seed = 5;
  MarsNet<double> net(cfg);
  for (auto& p : net.params())
    if (p.kind == ParamKind::bias && p.name.rfind("fuse.", 0) == 0) p.value = random_tensor(p.value.shape(), 13, 0.2);
  // Scale 2 of this config is a 16-band 8x8 map per modality.
  const int c = 16, h = 8, w = 8, hw = h * w;
  ag::Tape<double> t(false);
  const auto inputs = random_inputs(cfg, 1, 40);
  auto out = net.forward(t, inputs, ForwardContext<double>{});
  const auto f0 = t.value(out.pyramids[0][1]), f1 = t.value(out.pyramids[1][1]);
  const auto fused = t.value(out.fused[1]);
  Vec cat = sample0(f0);
  const Vec second = sample0(f1);
  cat.insert(cat.end(), second.begin(), second.end());
  const auto& P = net.params();
  const Vec r = conv_ref(cat, 2 * c, h, w, P.at("fuse.scale2.features.w").value.vec(), c, 3, 1,
                         &P.at("fuse.scale2.features.b").value.vec());
  Vec rr(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) rr[i] = std::max(0.0, r[i]);
  const Vec att = conv_ref(rr, c, h, w, P.at("fuse.scale2.attention.w").value.vec(), 1, 3, 1,
                           &P.at("fuse.scale2.attention.b").value.vec());
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < hw; ++i) EXPECT_NEAR(fused[ch * hw + i], rr[ch * hw + i] * sigm(att[i]), 1e-9);
  for (std::size_t i = 0; i < fused.size(); ++i) EXPECT_LE(std::abs(fused[i]), rr[i] + 1e-15);
}

TEST(MarsNetTest, FullWidthShapes) {
  ModelConfig cfg;
  MarsNet<float> net(cfg);
  std::vector<Tensor<float>> inputs;
  for (std::size_t i = 0; i < cfg.modalities.size(); ++i)
    inputs.push_back(random_tensor(Shape{1, cfg.modalities[i].bands, 64, 64}, 50 + i).cast<float>());
  ag::Tape<float> t(false);
  auto out = net.forward(t, inputs, ForwardContext<float>{});
  const std::vector<Shape> expect{{1, 64, 64, 64}, {1, 128, 32, 32}, {1, 256, 16, 16}, {1, 512, 8, 8}};
  ASSERT_EQ(out.pyramids.size(), 4u);
  for (const auto& p : out.pyramids)
    for (int s = 0; s < 4; ++s) EXPECT_EQ(t.shape(p[s]), expect[s]);
  for (int s = 0; s < 4; ++s) EXPECT_EQ(t.shape(out.fused[s]), expect[s]);
  EXPECT_EQ(t.shape(out.prediction), (Shape{1, 1, 64, 64}));
  for (float v : t.value(out.prediction).vec()) EXPECT_TRUE(std::isfinite(v));
}

TEST(MarsNetTest, SharedEncoderHasQuarterOfSeparateParameters) {
  ModelConfig sep;
  ModelConfig sh = sep;
  sh.encoder_mode = EncoderMode::shared;
  MarsNet<float> a(sep), b(sh);
  const double ratio = static_cast<double>(a.encoder_parameter_count()) / (4.0 * b.encoder_parameter_count());
  EXPECT_NEAR(ratio, 1.0, 0.01);
  EXPECT_LT(ratio, 1.0);  // the shared encoder's stage-1 input is the widest modality
  EXPECT_EQ(a.groups().size(), 4u);
  EXPECT_EQ(b.groups().size(), 1u);
  // Adapters exist only in the shared model and are not counted as encoder parameters.
  EXPECT_GT(b.params().count("adapt."), 0u);
  EXPECT_EQ(a.params().count("adapt."), 0u);
  ModelConfig sar = sep;
  sar.encoder_mode = EncoderMode::sar_shared;
  MarsNet<float> c(sar);
  ASSERT_EQ(c.groups().size(), 3u);
  EXPECT_EQ(c.groups()[1].name, "enc.sentinel1+palsar2");
  EXPECT_EQ(c.groups()[1].input_bands, 9);
}

TEST(MarsNetTest, SharedEncodersAliasParameters) {
  ModelConfig cfg = tiny_config();
  cfg.encoder_mode = EncoderMode::shared;
  MarsNet<double> net(cfg);
  ag::Tape<double> t;
  auto out = net.forward(t, random_inputs(cfg, 2, 60), ForwardContext<double>{});
  net.params().zero_grad();
  t.backward(ag::weighted_sum(t, out.prediction, random_tensor(Shape{2, 1, 8, 8}, 61)));
  // One stage-1 kernel receives gradient from both modalities; a second tape
  // restricted to one modality's pathway would see only part of it.
  auto& k = net.params().at("enc.sentinel1+palsar2.stage1.esbc.adjust.w");
  double norm = 0;
  for (double g : k.grad.vec()) norm += g * g;
  EXPECT_GT(norm, 0.0);
  std::set<std::string> encoders;
  for (const auto& p : net.params())
    if (p.name.rfind("enc.", 0) == 0) encoders.insert(p.name.substr(0, p.name.find(".stage")));
  EXPECT_EQ(encoders.size(), 1u);
}

TEST(MarsNetTest, SharedWithOneModalityEqualsSeparate) {
  ModelConfig a = tiny_config();
  a.modalities = {{Modality::sentinel2, 17}};
  ModelConfig b = a;
  b.encoder_mode = EncoderMode::shared;
  MarsNet<double> na(a), nb(b);
  ASSERT_EQ(na.params().size(), nb.params().size());
  nb.load_values(na);
  const auto x = random_inputs(a, 2, 70);
  const auto ya = na.predict(x), yb = nb.predict(x);
  for (std::size_t i = 0; i < ya.size(); ++i) EXPECT_NEAR(ya[i], yb[i], 1e-9);
}

TEST(MarsNetTest, DeterministicInitAndEvalForward) {
  const ModelConfig cfg = tiny_config();
  MarsNet<double> a(cfg), b(cfg);
  auto pa = a.params().begin();
  for (auto& p : b.params()) {
    EXPECT_EQ(p.value.vec(), pa->value.vec()) << p.name;
    for (double v : p.value.vec()) EXPECT_TRUE(std::isfinite(v));
    ++pa;
  }
  const auto x = random_inputs(cfg, 1, 80);
  EXPECT_EQ(a.predict(x).vec(), a.predict(x).vec());
  EXPECT_EQ(a.predict(x).vec(), b.predict(x).vec());
  ModelConfig other = cfg;
  other.seed = 12;
  MarsNet<double> c(other);
  EXPECT_NE(c.params().at("head.w").value.vec(), a.params().at("head.w").value.vec());
}

TEST(MarsNetTest, InitialisationFollowsHeScaling) {
  ModelConfig cfg;
  MarsNet<float> net(cfg);
  const auto& k = net.params().at("fuse.scale4.features.w");
  const double fan_in = 4.0 * 512 * 9;
  double ss = 0;
  for (float v : k.value.vec()) ss += static_cast<double>(v) * v;
  EXPECT_NEAR(ss / k.value.size(), 2.0 / fan_in, 0.02 * 2.0 / fan_in);
  for (const auto& p : net.params()) {
    if (p.kind == ParamKind::bias || p.kind == ParamKind::norm_shift) {
      for (float v : p.value.vec()) EXPECT_EQ(v, 0.0f) << p.name;
    }
    if (p.kind == ParamKind::norm_scale) {
      for (float v : p.value.vec()) EXPECT_EQ(v, 1.0f) << p.name;
    }
  }
}

TEST(MarsNetTest, DropoutOnlyInTraining) {
  const ModelConfig cfg = tiny_config();
  MarsNet<double> net(cfg);
  const auto x = random_inputs(cfg, 2, 90);
  auto run = [&](bool training, std::uint64_t seed) {
    ag::Tape<double> t(false);
    ForwardContext<double> ctx;
    ctx.training = training;
    ctx.dropout_seed = seed;
    auto out = net.forward(t, x, ctx);
    return t.value(out.pyramids[0].back());
  };
  const auto e = run(false, 1), d1 = run(true, 1), d2 = run(true, 2);
  EXPECT_EQ(run(true, 1).vec(), d1.vec());
  EXPECT_NE(d1.vec(), d2.vec());
  std::size_t zeros = 0;
  for (double v : d1.vec()) zeros += v == 0.0;
  std::size_t eval_zeros = 0;
  for (double v : e.vec()) eval_zeros += v == 0.0;
  EXPECT_GT(zeros, eval_zeros);
}

TEST(MarsNetTest, ReportsMissingModality) {
  const ModelConfig cfg = tiny_config();
  MarsNet<double> net(cfg);
  auto x = random_inputs(cfg, 1, 1);
  x.pop_back();
  try {
    net.predict(x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("palsar2"), std::string::npos);
  }
  auto y = random_inputs(cfg, 1, 1);
  y[0] = random_tensor(Shape{1, 9, 16, 16}, 2);
  EXPECT_THROW(net.predict(y), Error);
}

TEST(MarsNetTest, SkipConnectionsInfluenceOutput) {
  const ModelConfig cfg = tiny_config();
  MarsNet<double> net(cfg);
  const auto x = random_inputs(cfg, 1, 3);
  const auto base = net.predict(x);
  for (auto& p : net.params())
    if (p.name == "dec.stage1.esbc.adjust.w") {
      // Zero the kernel columns that read the scale-1 skip (the trailing 8 bands).
      for (int o = 0; o < p.value.n(); ++o)
        for (int i = 16; i < 24; ++i) p.value(o, i, 0, 0) = 0.0;
    }
  const auto cut = net.predict(x);
  double diff = 0;
  for (std::size_t i = 0; i < base.size(); ++i) diff += std::abs(base[i] - cut[i]);
  EXPECT_GT(diff, 1e-6);
}

TEST(MarsNetTest, FrozenGateGradientsMatchFiniteDifferences) {
  ModelConfig cfg = tiny_config();
  MarsNet<double> net(cfg);
  const auto x = random_inputs(cfg, 2, 100);
  Tensor<double> label = random_tensor(Shape{2, 1, 8, 8}, 101);
  Tensor<double> mask(label.shape());
  Rng rng(102);
  for (auto& m : mask.vec()) m = rng.bernoulli(0.5) ? 1.0 : 0.0;
  GateCache<double> gates;
  ForwardContext<double> ctx;
  ctx.training = true;
  ctx.dropout_seed = 7;
  ctx.gates = &gates;
  auto loss_at = [&](GateMode mode) {
    gates.start(mode);
    ag::Tape<double> t(false);
    return t.value(ag::masked_mse(t, net.forward(t, x, ctx).prediction, label, mask))[0];
  };
  gates.start(GateMode::record);
  ag::Tape<double> t;
  const auto root = ag::masked_mse(t, net.forward(t, x, ctx).prediction, label, mask);
  net.params().zero_grad();
  t.backward(root);
  ASSERT_FALSE(gates.masks.empty());
  int checked = 0;
  double worst = 0;
  for (auto& p : net.params()) {
    if (!p.trainable()) continue;
    for (int k = 0; k < 2; ++k) {
      const std::size_t i = rng.below(p.value.size());
      const double keep = p.value[i], h = 1e-5;
      p.value[i] = keep + h;
      const double up = loss_at(GateMode::replay);
      p.value[i] = keep - h;
      const double dn = loss_at(GateMode::replay);
      p.value[i] = keep;
      const double num = (up - dn) / (2 * h), ana = p.grad[i];
      const double rel = std::abs(num - ana) / std::max(std::abs(num) + std::abs(ana), 1e-6);
      worst = std::max(worst, rel);
      EXPECT_LT(rel, 1e-4) << p.name << "[" << i << "] analytic " << ana << " numeric " << num;
      ++checked;
    }
  }
  EXPECT_GE(checked, 100);
}

TEST(CheckpointTest, RoundTripsValuesAndConfig) {
  ModelConfig cfg = tiny_config();
  cfg.encoder_mode = EncoderMode::sar_shared;
  MarsNet<float> net(cfg);
  for (auto& p : net.params()) p.value = random_tensor(p.value.shape(), std::hash<std::string>{}(p.name) & 0xffff).cast<float>();
  const std::string blob = serialize_params(net);
  auto back = deserialize_params<float>(blob, "mem");
  EXPECT_EQ(back->config().to_kv().str(), cfg.to_kv().str());
  auto it = back->params().begin();
  for (const auto& p : net.params()) {
    EXPECT_EQ(p.name, it->name);
    EXPECT_EQ(p.value.vec(), it->value.vec());
    ++it;
  }
  EXPECT_EQ(serialize_params(*back), blob);
  EXPECT_THROW(deserialize_params<float>(blob.substr(0, blob.size() - 3), "mem"), Error);
  EXPECT_THROW(deserialize_params<float>("garbage", "mem"), Error);
}
