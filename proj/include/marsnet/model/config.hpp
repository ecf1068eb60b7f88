#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "marsnet/io/text.hpp"
#include "marsnet/raster/stack.hpp"

namespace marsnet::model {

using raster::Modality;

enum class EncoderMode { separate, shared, sar_shared };

inline const char* to_string(EncoderMode m) {
  switch (m) {
    case EncoderMode::separate: return "separate";
    case EncoderMode::shared: return "shared";
    case EncoderMode::sar_shared: return "sar_shared";
  }
  return "?";
}

inline EncoderMode parse_encoder_mode(const std::string& s) {
  if (s == "separate") return EncoderMode::separate;
  if (s == "shared") return EncoderMode::shared;
  if (s == "sar_shared") return EncoderMode::sar_shared;
  fail_input("unknown encoder_mode '" + s + "' (expected separate, shared or sar_shared)");
}

struct ModalityInput {
  Modality modality = Modality::sentinel2;
  int bands = 0;
  friend bool operator==(const ModalityInput&, const ModalityInput&) = default;
};

inline std::vector<ModalityInput> all_modalities() {
  std::vector<ModalityInput> v;
  for (Modality m : raster::kModalities) v.push_back({m, raster::band_count(m)});
  return v;
}

/// Group-norm group count for a block of width b: the largest divisor of b
/// not exceeding the requested count.
inline int clamp_gn_groups(int requested, int b) {
  for (int g = std::min(requested, b); g >= 1; --g)
    if (b % g == 0) return g;
  return 1;
}

/// Unsigned 64-bit seed; parse_integer would reject the upper half.
inline std::uint64_t parse_seed(const std::string& text) {
  const std::string s = trim(text);
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) fail_input("seed: not an unsigned integer: '" + s + "'");
  return v;
}

/// Band split used by the band reconstruction unit for a block of width b.
struct BruShape {
  int b = 0, up = 0, low = 0, up_c = 0, low_c = 0;
};

struct ModelConfig {
  std::vector<int> stage_widths{64, 128, 256, 512};
  int input_spatial = 64;
  std::vector<ModalityInput> modalities = all_modalities();
  EncoderMode encoder_mode = EncoderMode::separate;
  bool esbc_enabled = true;
  double bru_alpha = 0.5;
  int squeeze_ratio_r = 2;
  int gwc_groups_g = 2;
  int gn_groups = 16;
  double gate_threshold = 0.5;
  bool straight_through_gate = false;
  double dropout_rate = 0.25;
  int attention_reduction = 4;
  std::uint64_t seed = 0;

  int stages() const { return static_cast<int>(stage_widths.size()); }
  int spatial_at(int stage) const { return input_spatial >> stage; }

  BruShape bru_shape(int b) const {
    BruShape s;
    s.b = b;
    s.up = static_cast<int>(std::ceil(bru_alpha * b - 1e-12));
    s.low = b - s.up;
    s.up_c = s.up / squeeze_ratio_r;
    s.low_c = s.low / squeeze_ratio_r;
    return s;
  }

  bool has(Modality m) const {
    return std::any_of(modalities.begin(), modalities.end(), [&](const ModalityInput& mi) { return mi.modality == m; });
  }

  void validate_width(int b, const std::string& where) const {
    require(b > 0 && b % 2 == 0, where + ": block width " + std::to_string(b) + " must be even for the spatial reconstruction split");
    const BruShape s = bru_shape(b);
    require(s.up >= 1 && s.low >= 1, where + ": bru_alpha leaves an empty split at width " + std::to_string(b));
    require(s.up % squeeze_ratio_r == 0 && s.low % squeeze_ratio_r == 0,
            where + ": squeeze ratio must divide both split widths at width " + std::to_string(b));
    require(s.up_c >= 1 && s.low_c >= 1, where + ": squeezed split widths must be >= 1");
    require(s.up_c % gwc_groups_g == 0 && b % gwc_groups_g == 0,
            where + ": gwc groups must divide the squeezed upper width and the block width");
    require(s.low_c < b, where + ": lower split too wide");
  }

  void validate() const {
    require(stages() >= 2 && stages() <= 4, "stage_widths must have 2 to 4 entries");
    for (int i = 1; i < stages(); ++i) require(stage_widths[i] > stage_widths[i - 1], "stage_widths must be strictly increasing");
    require(input_spatial > 0 && input_spatial % (1 << (stages() - 1)) == 0,
            "input_spatial must be divisible by 2^(stages-1)");
    require(!modalities.empty(), "at least one modality is required");
    for (std::size_t i = 0; i < modalities.size(); ++i) {
      require(modalities[i].bands > 0, "modality band counts must be positive");
      for (std::size_t j = 0; j < i; ++j)
        require(modalities[i].modality != modalities[j].modality, "modality listed twice");
    }
    require(bru_alpha > 0 && bru_alpha < 1, "bru_alpha must lie in (0, 1)");
    require(squeeze_ratio_r >= 1, "squeeze_ratio_r must be >= 1");
    require(gwc_groups_g >= 1, "gwc_groups_g must be >= 1");
    require(gn_groups >= 1, "gn_groups must be >= 1");
    require(gate_threshold > 0 && gate_threshold < 1, "gate_threshold must lie in (0, 1)");
    require(dropout_rate >= 0 && dropout_rate < 1, "dropout_rate must lie in [0, 1)");
    require(attention_reduction >= 1, "attention_reduction must be >= 1");
    if (encoder_mode == EncoderMode::sar_shared)
      require(has(Modality::sentinel1) && has(Modality::palsar2), "sar_shared mode needs both sentinel1 and palsar2");
    if (esbc_enabled)
      for (int b : stage_widths) validate_width(b, "esbc");
  }

  /// Flat key/value form, also embedded in checkpoints.
  io::KeyValues to_kv() const {
    io::KeyValues kv;
    std::string w, mods;
    for (int i = 0; i < stages(); ++i) w += (i ? "," : "") + std::to_string(stage_widths[i]);
    for (std::size_t i = 0; i < modalities.size(); ++i)
      mods += std::string(i ? "," : "") + raster::to_string(modalities[i].modality) + ":" + std::to_string(modalities[i].bands);
    kv.set("stage_widths", w);
    kv.set("input_spatial", std::to_string(input_spatial));
    kv.set("modalities", mods);
    kv.set("encoder_mode", to_string(encoder_mode));
    kv.set("esbc_enabled", esbc_enabled ? "true" : "false");
    kv.set("bru_alpha", bru_alpha);
    kv.set("squeeze_ratio_r", std::to_string(squeeze_ratio_r));
    kv.set("gwc_groups_g", std::to_string(gwc_groups_g));
    kv.set("gn_groups", std::to_string(gn_groups));
    kv.set("gate_threshold", gate_threshold);
    kv.set("straight_through_gate", straight_through_gate ? "true" : "false");
    kv.set("dropout_rate", dropout_rate);
    kv.set("attention_reduction", std::to_string(attention_reduction));
    kv.set("seed", std::to_string(seed));
    return kv;
  }

  static std::vector<std::string> keys() {
    return {"stage_widths", "input_spatial", "modalities",     "encoder_mode",          "esbc_enabled",
            "bru_alpha",    "squeeze_ratio_r", "gwc_groups_g", "gn_groups",             "gate_threshold",
            "straight_through_gate", "dropout_rate", "attention_reduction", "seed"};
  }

  /// Reads keys under `prefix` (e.g. "model."); absent keys keep defaults,
  /// unknown keys under the prefix are rejected.
  static ModelConfig from_kv(const io::KeyValues& kv, const std::string& prefix = "") {
    ModelConfig c;
    const auto known = keys();
    for (const auto& k : kv.keys()) {
      if (k.rfind(prefix, 0) != 0) continue;
      const std::string local = k.substr(prefix.size());
      if (std::find(known.begin(), known.end(), local) == known.end()) fail_input("unknown model config key '" + k + "'");
    }
    auto has = [&](const char* k) { return kv.has(prefix + k); };
    auto get = [&](const char* k) { return kv.get(prefix + k); };
    if (has("stage_widths")) {
      c.stage_widths.clear();
      for (const auto& s : split(get("stage_widths"), ',')) c.stage_widths.push_back(static_cast<int>(parse_integer(s, "stage_widths")));
    }
    if (has("input_spatial")) c.input_spatial = static_cast<int>(parse_integer(get("input_spatial"), "input_spatial"));
    if (has("modalities")) {
      c.modalities.clear();
      for (const auto& item : split(get("modalities"), ',')) {
        const auto parts = split(trim(item), ':');
        const Modality m = raster::parse_modality(trim(parts[0]));
        const int bands = parts.size() > 1 ? static_cast<int>(parse_integer(parts[1], "modality bands")) : raster::band_count(m);
        c.modalities.push_back({m, bands});
      }
    }
    if (has("encoder_mode")) c.encoder_mode = parse_encoder_mode(get("encoder_mode"));
    if (has("esbc_enabled")) c.esbc_enabled = io::parse_bool(get("esbc_enabled"), "esbc_enabled");
    if (has("bru_alpha")) c.bru_alpha = parse_number(get("bru_alpha"), "bru_alpha");
    if (has("squeeze_ratio_r")) c.squeeze_ratio_r = static_cast<int>(parse_integer(get("squeeze_ratio_r"), "squeeze_ratio_r"));
    if (has("gwc_groups_g")) c.gwc_groups_g = static_cast<int>(parse_integer(get("gwc_groups_g"), "gwc_groups_g"));
    if (has("gn_groups")) c.gn_groups = static_cast<int>(parse_integer(get("gn_groups"), "gn_groups"));
    if (has("gate_threshold")) c.gate_threshold = parse_number(get("gate_threshold"), "gate_threshold");
    if (has("straight_through_gate")) c.straight_through_gate = io::parse_bool(get("straight_through_gate"), "straight_through_gate");
    if (has("dropout_rate")) c.dropout_rate = parse_number(get("dropout_rate"), "dropout_rate");
    if (has("attention_reduction"))
      c.attention_reduction = static_cast<int>(parse_integer(get("attention_reduction"), "attention_reduction"));
    if (has("seed")) c.seed = parse_seed(get("seed"));
    c.validate();
    return c;
  }
};

}  // namespace marsnet::model
