#pragma once

// The full network: one encoder per modality group, per-scale fusion with a
// spatial attention map, and a decoder that mirrors the encoder widths.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "marsnet/model/layers.hpp"

namespace marsnet::model {

/// Modalities that feed one encoder. A group with several members shares the
/// encoder's parameters and reaches its input width through per-modality
/// 1x1 adapters.
struct EncoderGroup {
  std::string name;  // "enc.sentinel2", "enc.sentinel1+palsar2", ...
  std::vector<std::size_t> members;  // indices into ModelConfig::modalities
  int input_bands = 0;
};

inline std::vector<EncoderGroup> encoder_groups(const ModelConfig& cfg) {
  std::vector<std::vector<std::size_t>> sets;
  const auto n = cfg.modalities.size();
  if (cfg.encoder_mode == EncoderMode::shared) {
    sets.emplace_back();
    for (std::size_t i = 0; i < n; ++i) sets.back().push_back(i);
  } else {
    std::ptrdiff_t sar = -1;
    for (std::size_t i = 0; i < n; ++i) {
      const Modality m = cfg.modalities[i].modality;
      const bool is_sar = m == Modality::sentinel1 || m == Modality::palsar2;
      if (cfg.encoder_mode == EncoderMode::sar_shared && is_sar) {
        if (sar < 0) {
          sar = static_cast<std::ptrdiff_t>(sets.size());
          sets.emplace_back();
        }
        sets[sar].push_back(i);
      } else {
        sets.push_back({i});
      }
    }
  }
  std::vector<EncoderGroup> groups;
  for (const auto& s : sets) {
    EncoderGroup g;
    g.name = "enc.";
    for (std::size_t k = 0; k < s.size(); ++k) {
      g.name += std::string(k ? "+" : "") + raster::to_string(cfg.modalities[s[k]].modality);
      g.input_bands = std::max(g.input_bands, cfg.modalities[s[k]].bands);
    }
    g.members = s;
    groups.push_back(std::move(g));
  }
  return groups;
}

template <class T>
class MarsNet {
 public:
  explicit MarsNet(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto& w = cfg_.stage_widths;
    const int S = cfg_.stages();
    groups_ = encoder_groups(cfg_);
    member_group_.assign(cfg_.modalities.size(), 0);
    adapters_.resize(cfg_.modalities.size());
    for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
      const auto& g = groups_[gi];
      Encoder e;
      int cin = g.input_bands;
      for (int s = 0; s < S; ++s) {
        e.blocks.push_back(Block<T>::make(store_, g.name + ".stage" + std::to_string(s + 1), cin, w[s], cfg_));
        cin = w[s];
      }
      encoders_.push_back(std::move(e));
      for (std::size_t m : g.members) {
        member_group_[m] = gi;
        if (g.members.size() > 1) {
          const auto& mi = cfg_.modalities[m];
          adapters_[m] = Conv<T>::make(store_, std::string("adapt.") + raster::to_string(mi.modality), mi.bands,
                                       g.input_bands, 1, 1, true, cfg_.seed);
        }
      }
    }
    const int N = static_cast<int>(cfg_.modalities.size());
    for (int s = 0; s < S; ++s) {
      const std::string name = "fuse.scale" + std::to_string(s + 1);
      fusion_.push_back({Conv<T>::make(store_, name + ".features", N * w[s], w[s], 3, 1, true, cfg_.seed),
                         Conv<T>::make(store_, name + ".attention", w[s], 1, 3, 1, true, cfg_.seed)});
    }
    for (int s = S - 2; s >= 0; --s)
      decoder_.push_back(Block<T>::make(store_, "dec.stage" + std::to_string(s + 1), w[s + 1] + w[s], w[s], cfg_));
    head_ = Conv<T>::make(store_, "head", w[0], 1, 1, 1, true, cfg_.seed);
  }

  MarsNet(const MarsNet&) = delete;
  MarsNet& operator=(const MarsNet&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  const std::vector<EncoderGroup>& groups() const { return groups_; }

  struct Output {
    Var prediction;                       // [N, 1, H, W]
    std::vector<std::vector<Var>> pyramids;  // per modality, per scale
    std::vector<Var> fused;               // per scale
    std::vector<Var> attention;           // per scale, [N, 1, h, w]
  };

  /// `inputs` follows the order of ModelConfig::modalities, each [N, bands, H, W].
  Output forward(Tape<T>& t, const std::vector<Tensor<T>>& inputs, const ForwardContext<T>& ctx) const {
    std::vector<Var> vars;
    for (const auto& x : inputs) vars.push_back(t.constant(x));
    return forward(t, vars, ctx);
  }

  Output forward(Tape<T>& t, const std::vector<Var>& inputs, const ForwardContext<T>& ctx) const {
    const auto& mods = cfg_.modalities;
    if (inputs.size() != mods.size()) {
      std::string missing;
      for (std::size_t i = inputs.size(); i < mods.size(); ++i) missing += std::string(missing.empty() ? "" : ", ") + raster::to_string(mods[i].modality);
      fail_input("model expects " + std::to_string(mods.size()) + " modality inputs, got " + std::to_string(inputs.size()) +
                 (missing.empty() ? "" : " (missing " + missing + ")"));
    }
    const int S = cfg_.stages();
    const Shape first = t.shape(inputs[0]);
    Output out;
    for (std::size_t i = 0; i < mods.size(); ++i) {
      const Shape s = t.shape(inputs[i]);
      const std::string mname = raster::to_string(mods[i].modality);
      require(s.c == mods[i].bands, mname + " input has " + std::to_string(s.c) + " bands, expected " + std::to_string(mods[i].bands));
      require(s.h == cfg_.input_spatial && s.w == cfg_.input_spatial,
              mname + " input is " + std::to_string(s.h) + "x" + std::to_string(s.w) + ", expected " +
                  std::to_string(cfg_.input_spatial) + "x" + std::to_string(cfg_.input_spatial));
      require(s.n == first.n, "modality inputs disagree on batch size");
      out.pyramids.push_back(encode(t, inputs[i], i, ctx));
    }
    for (int s = 0; s < S; ++s) {
      std::vector<Var> parts;
      for (const auto& p : out.pyramids) parts.push_back(p[s]);
      Var att;
      out.fused.push_back(fusion_[s](t, parts, &att));
      out.attention.push_back(att);
    }
    Var y = out.fused[S - 1];
    for (int k = 0; k < S - 1; ++k) {
      const int s = S - 2 - k;
      y = ag::concat_channels(t, {ag::upsample_bilinear2(t, y), out.fused[s]});
      y = decoder_[k](t, y, ctx);
    }
    out.prediction = head_(t, y);
    return out;
  }

  /// Eval-mode forward without recording.
  Tensor<T> predict(const std::vector<Tensor<T>>& inputs) const {
    Tape<T> t(false);
    ForwardContext<T> ctx;
    return t.value(forward(t, inputs, ctx).prediction);
  }

  /// Trainable scalars of the encoders, adapters excluded.
  std::size_t encoder_parameter_count() const { return store_.count("enc."); }

  /// Copies every value by name from a model of another scalar type.
  template <class U>
  void load_values(const MarsNet<U>& other) {
    for (auto& p : store_) {
      const auto& q = other.params().at(p.name);
      require(q.value.shape() == p.value.shape(), "parameter '" + p.name + "' shape mismatch");
      p.value = q.value.template cast<T>();
    }
  }

  std::vector<Tensor<T>> snapshot() const {
    std::vector<Tensor<T>> v;
    for (const auto& p : store_) v.push_back(p.value);
    return v;
  }
  void restore(const std::vector<Tensor<T>>& v) {
    require(v.size() == store_.size(), "snapshot does not match the model");
    std::size_t i = 0;
    for (auto& p : store_) p.value = v[i++];
  }

 private:
  struct Encoder {
    std::vector<Block<T>> blocks;
  };

  struct Fusion {
    Conv<T> features, attention;

    Var operator()(Tape<T>& t, const std::vector<Var>& parts, Var* att) const {
      const Shape s0 = t.shape(parts[0]);
      for (Var p : parts) {
        const Shape s = t.shape(p);
        require(s.n == s0.n && s.h == s0.h && s.w == s0.w && s.c == s0.c, "fusion: scale mismatch across modalities");
      }
      const Var x = parts.size() == 1 ? parts[0] : ag::concat_channels(t, parts);
      const Var r = ag::relu(t, features(t, x));
      const Var a = ag::sigmoid(t, attention(t, r));
      *att = a;
      return ag::scale_spatial(t, r, a);
    }
  };

  std::vector<Var> encode(Tape<T>& t, Var x, std::size_t modality, const ForwardContext<T>& ctx) const {
    const std::size_t gi = member_group_[modality];
    const auto& g = groups_[gi];
    if (g.members.size() > 1) x = adapters_[modality](t, x);
    std::vector<Var> pyramid;
    const auto& blocks = encoders_[gi].blocks;
    for (std::size_t s = 0; s < blocks.size(); ++s) {
      if (s > 0) x = ag::max_pool2(t, x);
      x = blocks[s](t, x, ctx);
      if (s + 1 == blocks.size() && ctx.training) {
        const std::string tag = "dropout." + g.name + "." + raster::to_string(cfg_.modalities[modality].modality);
        x = dropout(t, x, cfg_.dropout_rate, derive_seed(ctx.dropout_seed, tag));
      }
      pyramid.push_back(x);
    }
    return pyramid;
  }

  ModelConfig cfg_;
  ParamStore<T> store_;
  std::vector<EncoderGroup> groups_;
  std::vector<std::size_t> member_group_;
  std::vector<Conv<T>> adapters_;
  std::vector<Encoder> encoders_;
  std::vector<Fusion> fusion_;
  std::vector<Block<T>> decoder_;
  Conv<T> head_;
};

}  // namespace marsnet::model
