#pragma once

// Checkpoint directory layout:
//   params.bin        parameter blob with the embedded model config
//   config.ini        [model] and [train] sections
//   norm_stats.json   input standardization fitted on the training split
//   history.json      per-epoch losses and the selected epoch

#include <filesystem>
#include <memory>

#include <nlohmann/json.hpp>

#include "marsnet/io/dataset.hpp"
#include "marsnet/model/checkpoint.hpp"
#include "marsnet/train/trainer.hpp"

namespace marsnet::train {

struct Checkpoint {
  std::unique_ptr<model::MarsNet<float>> net;
  TrainConfig train;
  raster::NormStats stats;
  nlohmann::json history;
};

inline std::string sectioned(const std::string& section, const io::KeyValues& kv) {
  std::string out = "[" + section + "]\n";
  for (const auto& k : kv.keys()) out += k + " = " + kv.get(k) + "\n";
  return out;
}

inline void save_checkpoint(const std::filesystem::path& dir, const model::MarsNet<float>& net, const TrainConfig& train,
                            const raster::NormStats& stats, const TrainHistory& history) {
  std::filesystem::create_directories(dir);
  model::save_params(dir / "params.bin", net);
  io::write_file(dir / "config.ini", sectioned("model", net.config().to_kv()) + "\n" + sectioned("train", train.to_kv()));
  io::write_file(dir / "norm_stats.json", io::stats_json(stats).dump(2) + "\n");
  io::write_file(dir / "history.json", history.to_json().dump(2) + "\n");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail_input("checkpoint directory not found: " + dir.string());
  for (const char* f : {"params.bin", "config.ini", "norm_stats.json"})
    if (!std::filesystem::exists(dir / f)) fail_input("checkpoint is missing " + (dir / f).string());
  Checkpoint c;
  c.net = model::load_params<float>(dir / "params.bin");
  const auto kv = io::KeyValues::parse(io::read_file(dir / "config.ini"), (dir / "config.ini").string());
  c.train = TrainConfig::from_kv(kv, "train.");
  try {
    c.stats = io::stats_from_json(nlohmann::json::parse(io::read_file(dir / "norm_stats.json")));
    if (std::filesystem::exists(dir / "history.json")) c.history = nlohmann::json::parse(io::read_file(dir / "history.json"));
  } catch (const nlohmann::json::exception& e) {
    fail_input((dir / "norm_stats.json").string() + ": " + e.what());
  }
  return c;
}

}  // namespace marsnet::train
