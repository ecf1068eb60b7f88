#pragma once

// Run configuration shared by every subcommand: one INI document with a
// section per subcommand plus [model] and [train], overlaid by command-line
// flags. Keys outside the registry are rejected wherever they come from.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "marsnet/io/text.hpp"
#include "marsnet/model/config.hpp"
#include "marsnet/train/trainer.hpp"

namespace marsnet::cli {

/// Every accepted key with its documented default ("" when the key has no
/// default, e.g. required paths).
inline const std::map<std::string, std::string>& key_registry() {
  static const std::map<std::string, std::string> reg = [] {
    std::map<std::string, std::string> r{
        {"seed", "0"},
        // synth
        {"synth.out", ""},
        {"synth.size", "256"},
        {"synth.footprint_spacing", "6"},
        {"synth.rh98_noise_sd", "0.5"},
        {"synth.plot_count", "60"},
        {"synth.trees_per_plot", "20"},
        {"synth.optical_scenes", "4"},
        {"synth.sar_scenes", "5"},
        {"synth.forest_fraction", "0.85"},
        {"synth.quality_fail_rate", "0.08"},
        {"synth.sensitivity_fail_rate", "0.06"},
        {"synth.ndvi_fail_rate", "0.05"},
        // filter-gedi
        {"filter-gedi.footprints", ""},
        {"filter-gedi.ndvi", ""},
        {"filter-gedi.forest_mask", ""},
        {"filter-gedi.out", ""},
        {"filter-gedi.report", ""},
        // calibrate
        {"calibrate.plots", ""},
        {"calibrate.footprints", ""},
        {"calibrate.out", ""},
        {"calibrate.table", ""},
        {"calibrate.labels", ""},
        // build-stack
        {"build-stack.sources", ""},
        {"build-stack.out", ""},
        {"build-stack.speckle_radius_m", "50"},
        // patchify
        {"patchify.stacks", ""},
        {"patchify.labels", ""},
        {"patchify.out", ""},
        {"patchify.patch_size", "64"},
        {"patchify.footprint_diameter_m", "25"},
        // train (hyperparameters come from TrainConfig below)
        {"train.dataset", ""},
        {"train.out", ""},
        {"train.log", ""},
        // predict
        {"predict.checkpoint", ""},
        {"predict.stacks", ""},
        {"predict.forest_mask", ""},
        {"predict.out", ""},
        {"predict.tiles_per_batch", "8"},
        // evaluate
        {"evaluate.map", ""},
        {"evaluate.footprints", ""},
        {"evaluate.checkpoint", ""},
        {"evaluate.dataset", ""},
        {"evaluate.split", "test"},
        {"evaluate.out", ""},
        {"evaluate.footprint_diameter_m", "25"},
        // ablate
        {"ablate.dataset", ""},
        {"ablate.out", ""},
        {"ablate.rows", ""},
        {"ablate.log", ""},
        // histogram
        {"histogram.map_a", ""},
        {"histogram.map_b", ""},
        {"histogram.bin_width", "1"},
        {"histogram.out", ""},
        {"histogram.plot", ""},
    };
    const auto m = model::ModelConfig{}.to_kv();
    for (const auto& k : m.keys()) r["model." + k] = m.get(k);
    const auto t = train::TrainConfig{}.to_kv();
    for (const auto& k : t.keys()) r["train." + k] = t.get(k);
    return r;
  }();
  return reg;
}

class Settings {
 public:
  /// Loads the INI file (if any) and applies overrides on top.
  static Settings load(const std::optional<std::filesystem::path>& file, const std::vector<std::pair<std::string, std::string>>& overrides) {
    Settings s;
    if (file) {
      if (!std::filesystem::exists(*file)) fail_input("config file not found: " + file->string());
      s.kv_ = io::KeyValues::parse(io::read_file(*file), file->string());
    }
    for (const auto& [k, v] : overrides) s.kv_.set(k, v);
    for (const auto& k : s.kv_.keys())
      if (!key_registry().count(k)) fail_input("unknown config key '" + k + "'");
    return s;
  }

  bool has(const std::string& key) const { return kv_.has(key) && !kv_.get(key).empty(); }

  std::string get(const std::string& key) const {
    if (kv_.has(key)) return kv_.get(key);
    return key_registry().at(key);
  }

  double number(const std::string& key) const { return parse_number(get(key), key); }
  long long integer(const std::string& key) const { return parse_integer(get(key), key); }

  std::uint64_t root_seed() const { return model::parse_seed(get("seed")); }

  /// A required path option; bad input when absent.
  std::filesystem::path path(const std::string& key) const {
    const std::string v = get(key);
    if (v.empty()) fail_input("missing required option '" + key + "'");
    return v;
  }
  std::optional<std::filesystem::path> optional_path(const std::string& key) const {
    const std::string v = get(key);
    if (v.empty()) return std::nullopt;
    return std::filesystem::path(v);
  }

  /// Model configuration from [model]; the seed defaults to one derived from
  /// the root seed.
  model::ModelConfig model_config() const {
    io::KeyValues sub;
    for (const auto& k : kv_.keys())
      if (k.rfind("model.", 0) == 0) sub.set(k, kv_.get(k));
    auto c = model::ModelConfig::from_kv(sub, "model.");
    if (!sub.has("model.seed")) c.seed = derive_seed(root_seed(), "model");
    return c;
  }

  train::TrainConfig train_config() const {
    io::KeyValues sub;
    const auto known = train::TrainConfig::keys();
    for (const auto& k : kv_.keys())
      if (k.rfind("train.", 0) == 0 && std::find(known.begin(), known.end(), k.substr(6)) != known.end()) sub.set(k, kv_.get(k));
    auto c = train::TrainConfig::from_kv(sub, "train.");
    if (!sub.has("train.seed")) c.seed = derive_seed(root_seed(), "train");
    return c;
  }

  const io::KeyValues& raw() const { return kv_; }

 private:
  io::KeyValues kv_;
};

inline void require_file(const std::filesystem::path& p, const std::string& what) {
  if (!std::filesystem::is_regular_file(p)) fail_input(what + " not found: " + p.string());
}

inline void require_dir(const std::filesystem::path& p, const std::string& what) {
  if (!std::filesystem::is_directory(p)) fail_input(what + " not found: " + p.string());
}

/// The parent directory of an output path must exist or be creatable.
inline void prepare_output(const std::filesystem::path& p) {
  const auto parent = p.parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(parent, ec);
  if (ec) fail_input("cannot create output directory " + parent.string() + ": " + ec.message());
}

}  // namespace marsnet::cli
