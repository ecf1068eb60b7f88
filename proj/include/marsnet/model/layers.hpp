#pragma once

// Building blocks of the network: convolutions, the spatial and band
// reconstruction units, the ESBC convolution, squeeze-excitation and the
// block that chains them with batch norm and ReLU.

#include <algorithm>
#include <string>
#include <vector>

#include "marsnet/core/autograd.hpp"
#include "marsnet/model/config.hpp"
#include "marsnet/model/params.hpp"

namespace marsnet::model {

using ag::Tape;
using ag::Var;

/// How the SRU gate mask is produced. `record` stores every mask of a forward
/// pass; `replay` feeds them back in the same order so finite-difference
/// probes see a frozen, piecewise-constant gate.
enum class GateMode { live, record, replay };

template <class T>
struct GateCache {
  GateMode mode = GateMode::live;
  std::vector<Tensor<T>> masks;
  std::size_t cursor = 0;

  void start(GateMode m) {
    mode = m;
    cursor = 0;
    if (m == GateMode::record) masks.clear();
  }
};

template <class T>
struct ForwardContext {
  bool training = false;
  bool update_running = false;  // blend batch statistics into BN buffers
  std::uint64_t dropout_seed = 0;
  GateCache<T>* gates = nullptr;
};

template <class T>
struct Conv {
  Param<T>* weight = nullptr;
  Param<T>* bias = nullptr;
  int groups = 1;

  static Conv make(ParamStore<T>& store, const std::string& name, int cin, int cout, int k, int groups, bool with_bias,
                   std::uint64_t seed) {
    require(cin % groups == 0 && cout % groups == 0, name + ": groups must divide both band counts");
    Conv c;
    c.groups = groups;
    c.weight = &store.add(name + ".w", ParamKind::kernel, Shape{cout, cin / groups, k, k});
    init_kernel(*c.weight, seed);
    if (with_bias) c.bias = &store.add(name + ".b", ParamKind::bias, Shape{1, cout, 1, 1});
    return c;
  }

  int out_bands() const { return weight->value.n(); }

  Var operator()(Tape<T>& t, Var x) const {
    return ag::conv2d(t, x, t.parameter(*weight), bias ? t.parameter(*bias) : Var{}, groups);
  }
};

/// Spatial reconstruction unit: group-norm driven gate that splits each band
/// into informative and non-informative parts, then cross-adds the halves.
template <class T>
struct Sru {
  Param<T>* gamma = nullptr;
  Param<T>* beta = nullptr;
  int groups = 1;
  T threshold = T(0.5);
  bool straight_through = false;

  static Sru make(ParamStore<T>& store, const std::string& name, int b, const ModelConfig& cfg) {
    Sru s;
    s.groups = clamp_gn_groups(cfg.gn_groups, b);
    s.threshold = static_cast<T>(cfg.gate_threshold);
    s.straight_through = cfg.straight_through_gate;
    s.gamma = &store.add(name + ".gn.scale", ParamKind::norm_scale, Shape{1, b, 1, 1});
    s.gamma->value.fill(T{1});
    s.beta = &store.add(name + ".gn.shift", ParamKind::norm_shift, Shape{1, b, 1, 1});
    return s;
  }

  Var operator()(Tape<T>& t, Var x, GateCache<T>* cache) const {
    const int b = t.shape(x).c;
    require(b % 2 == 0, "sru: band count must be even");
    const Var g = t.parameter(*gamma);
    const Var gn = ag::group_norm(t, x, g, t.parameter(*beta), groups);
    const Var s = ag::sigmoid(t, ag::scale_channels(t, gn, ag::abs_normalize(t, g)));
    Var w1;
    if (cache && cache->mode == GateMode::replay) {
      if (cache->cursor >= cache->masks.size()) fail_runtime("sru: gate cache exhausted");
      const Tensor<T>& m = cache->masks[cache->cursor++];
      require(m.shape() == t.shape(s), "sru: cached gate mask has the wrong shape");
      w1 = t.constant(m);
    } else {
      w1 = ag::gate(t, s, threshold, straight_through);
      if (cache && cache->mode == GateMode::record) cache->masks.push_back(t.value(w1));
    }
    const Var w2 = ag::one_minus(t, w1);
    const Var x1 = ag::mul(t, w1, x);
    const Var x2 = ag::mul(t, w2, x);
    const int h = b / 2;
    const Var xw1 = ag::add(t, ag::slice_channels(t, x1, 0, h), ag::slice_channels(t, x2, h, h));
    const Var xw2 = ag::add(t, ag::slice_channels(t, x2, 0, h), ag::slice_channels(t, x1, h, h));
    return ag::concat_channels(t, {xw1, xw2});
  }
};

/// Band reconstruction unit: split, squeeze, rich (group-wise + point-wise)
/// and cheap (point-wise + reuse) branches, fused by a per-band softmax.
template <class T>
struct Bru {
  BruShape shape;
  Conv<T> squeeze_up, squeeze_low, gwc, pwc1, pwc2;

  static Bru make(ParamStore<T>& store, const std::string& name, int b, const ModelConfig& cfg) {
    cfg.validate_width(b, name);
    Bru u;
    u.shape = cfg.bru_shape(b);
    const auto& s = u.shape;
    u.squeeze_up = Conv<T>::make(store, name + ".squeeze_up", s.up, s.up_c, 1, 1, false, cfg.seed);
    u.squeeze_low = Conv<T>::make(store, name + ".squeeze_low", s.low, s.low_c, 1, 1, false, cfg.seed);
    u.gwc = Conv<T>::make(store, name + ".gwc", s.up_c, b, 3, cfg.gwc_groups_g, true, cfg.seed);
    u.pwc1 = Conv<T>::make(store, name + ".pwc1", s.up_c, b, 1, 1, false, cfg.seed);
    u.pwc2 = Conv<T>::make(store, name + ".pwc2", s.low_c, b - s.low_c, 1, 1, false, cfg.seed);
    return u;
  }

  struct Trace {
    Var y1, y2, beta;
  };

  Var operator()(Tape<T>& t, Var x, Trace* trace = nullptr) const {
    const auto& s = shape;
    require(t.shape(x).c == s.b, "bru: expected " + std::to_string(s.b) + " bands");
    const Var up = squeeze_up(t, ag::slice_channels(t, x, 0, s.up));
    const Var low = squeeze_low(t, ag::slice_channels(t, x, s.up, s.low));
    const Var y1 = ag::add(t, gwc(t, up), pwc1(t, up));
    const Var y2 = ag::concat_channels(t, {pwc2(t, low), low});
    const Var beta = ag::pair_softmax(t, ag::global_avg_pool(t, y1), ag::global_avg_pool(t, y2));
    if (trace) *trace = {y1, y2, beta};
    return ag::add(t, ag::scale_channels(t, y1, ag::slice_channels(t, beta, 0, s.b)),
                   ag::scale_channels(t, y2, ag::slice_channels(t, beta, s.b, s.b)));
  }
};

/// 1x1 band adjustment, SRU, BRU. With ESBC disabled a plain 3x3 convolution
/// takes its place.
template <class T>
struct Esbc {
  bool enabled = true;
  Conv<T> adjust;
  Sru<T> sru;
  Bru<T> bru;
  Conv<T> plain;

  static Esbc make(ParamStore<T>& store, const std::string& name, int cin, int cout, const ModelConfig& cfg) {
    Esbc e;
    e.enabled = cfg.esbc_enabled;
    if (!e.enabled) {
      e.plain = Conv<T>::make(store, name + ".conv", cin, cout, 3, 1, true, cfg.seed);
      return e;
    }
    e.adjust = Conv<T>::make(store, name + ".adjust", cin, cout, 1, 1, true, cfg.seed);
    e.sru = Sru<T>::make(store, name + ".sru", cout, cfg);
    e.bru = Bru<T>::make(store, name + ".bru", cout, cfg);
    return e;
  }

  Var operator()(Tape<T>& t, Var x, GateCache<T>* cache) const {
    if (!enabled) return plain(t, x);
    return bru(t, sru(t, adjust(t, x), cache));
  }
};

/// Band-wise squeeze-excitation.
template <class T>
struct SqueezeExcite {
  Conv<T> fc1, fc2;

  static SqueezeExcite make(ParamStore<T>& store, const std::string& name, int b, const ModelConfig& cfg) {
    const int hidden = std::max(1, b / cfg.attention_reduction);
    return {Conv<T>::make(store, name + ".fc1", b, hidden, 1, 1, true, cfg.seed),
            Conv<T>::make(store, name + ".fc2", hidden, b, 1, 1, true, cfg.seed)};
  }

  Var operator()(Tape<T>& t, Var x) const {
    const Var s = ag::sigmoid(t, fc2(t, ag::relu(t, fc1(t, ag::global_avg_pool(t, x)))));
    return ag::scale_channels(t, x, s);
  }
};

/// ESBC -> BN -> ReLU -> squeeze-excitation.
template <class T>
struct Block {
  Esbc<T> esbc;
  Param<T>* bn_scale = nullptr;
  Param<T>* bn_shift = nullptr;
  Param<T>* bn_mean = nullptr;
  Param<T>* bn_var = nullptr;
  SqueezeExcite<T> se;

  static Block make(ParamStore<T>& store, const std::string& name, int cin, int cout, const ModelConfig& cfg) {
    Block b;
    b.esbc = Esbc<T>::make(store, name + ".esbc", cin, cout, cfg);
    b.bn_scale = &store.add(name + ".bn.scale", ParamKind::norm_scale, Shape{1, cout, 1, 1});
    b.bn_scale->value.fill(T{1});
    b.bn_shift = &store.add(name + ".bn.shift", ParamKind::norm_shift, Shape{1, cout, 1, 1});
    b.bn_mean = &store.add(name + ".bn.running_mean", ParamKind::buffer, Shape{1, cout, 1, 1});
    b.bn_var = &store.add(name + ".bn.running_var", ParamKind::buffer, Shape{1, cout, 1, 1});
    b.bn_var->value.fill(T{1});
    b.se = SqueezeExcite<T>::make(store, name + ".se", cout, cfg);
    return b;
  }

  Var operator()(Tape<T>& t, Var x, const ForwardContext<T>& ctx) const {
    Var y = esbc(t, x, ctx.gates);
    y = ag::batch_norm(t, y, t.parameter(*bn_scale), t.parameter(*bn_shift), *bn_mean, *bn_var, ctx.training,
                       ctx.update_running);
    return se(t, ag::relu(t, y));
  }
};

/// Inverted dropout with a mask drawn from `seed`; identity when p == 0.
template <class T>
Var dropout(Tape<T>& t, Var x, double p, std::uint64_t seed) {
  if (p <= 0.0) return x;
  Tensor<T> mask(t.shape(x));
  Rng rng(seed);
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (auto& v : mask.vec()) v = rng.uniform() < p ? T{0} : keep;
  return ag::mul(t, x, t.constant(std::move(mask)));
}

}  // namespace marsnet::model
