#pragma once

// Patch dataset on disk: <dir>/manifest.json plus <dir>/samples.bin, a
// sequence of fixed-size little-endian records:
//   int32 origin_row, int32 origin_col,
//   float32 inputs[34][size][size]  (modalities in canonical order),
//   float32 label[size][size], uint8 mask[size][size], uint8 filled[size][size]
// Inputs are stored raw; the manifest carries the normalization statistics
// fitted on the training split and the split membership.

#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "marsnet/io/text.hpp"
#include "marsnet/raster/patches.hpp"

namespace marsnet::io {

struct PatchDataset {
  int patch_size = 64;
  std::vector<raster::PatchSample> samples;
  raster::SplitIndices split;
  std::uint64_t split_seed = 0;
  raster::NormStats stats;
  raster::GridGeometry grid;
};

inline std::size_t record_bytes(int size) {
  const std::size_t pl = static_cast<std::size_t>(size) * size;
  return 8 + pl * raster::kTotalBands * 4 + pl * 4 + pl * 2;
}

inline nlohmann::json grid_json(const raster::GridGeometry& g) {
  return {{"origin_x", g.origin_x}, {"origin_y", g.origin_y}, {"pixel_size", g.pixel_size},
          {"width", g.width},       {"height", g.height},     {"epsg", g.crs.epsg()}};
}

inline raster::GridGeometry grid_from_json(const nlohmann::json& j) {
  raster::GridGeometry g;
  g.origin_x = j.at("origin_x").get<double>();
  g.origin_y = j.at("origin_y").get<double>();
  g.pixel_size = j.at("pixel_size").get<double>();
  g.width = j.at("width").get<int>();
  g.height = j.at("height").get<int>();
  const int epsg = j.at("epsg").get<int>();
  g.crs = {epsg % 100, epsg < 32700};
  return g;
}

inline nlohmann::json stats_json(const raster::NormStats& st) {
  nlohmann::json j;
  j["epsilon"] = st.epsilon;
  for (raster::Modality m : raster::kModalities) {
    const int mi = static_cast<int>(m);
    j[raster::to_string(m)] = {{"mean", st.mean[mi]}, {"std", st.std[mi]}};
  }
  return j;
}

inline raster::NormStats stats_from_json(const nlohmann::json& j) {
  raster::NormStats st;
  st.epsilon = j.at("epsilon").get<double>();
  for (raster::Modality m : raster::kModalities) {
    const int mi = static_cast<int>(m);
    st.mean[mi] = j.at(raster::to_string(m)).at("mean").get<std::vector<double>>();
    st.std[mi] = j.at(raster::to_string(m)).at("std").get<std::vector<double>>();
    require(st.mean[mi].size() == static_cast<std::size_t>(raster::band_count(m)) && st.std[mi].size() == st.mean[mi].size(),
            std::string("norm stats for ") + raster::to_string(m) + " have the wrong band count");
  }
  return st;
}

inline void write_dataset(const std::filesystem::path& dir, const PatchDataset& ds) {
  std::filesystem::create_directories(dir);
  nlohmann::json man;
  man["format"] = "marsnet-patches";
  man["version"] = 1;
  man["dtype"] = "float32";
  man["patch_size"] = ds.patch_size;
  man["count"] = ds.samples.size();
  man["record_bytes"] = record_bytes(ds.patch_size);
  nlohmann::json mods = nlohmann::json::array();
  for (raster::Modality m : raster::kModalities)
    mods.push_back({{"name", raster::to_string(m)}, {"bands", raster::band_count(m)}, {"band_names", raster::default_band_names(m)}});
  man["modalities"] = mods;
  man["norm_stats"] = stats_json(ds.stats);
  man["split"] = {{"seed", ds.split_seed}, {"train", ds.split.train}, {"val", ds.split.val}, {"test", ds.split.test}};
  man["grid"] = grid_json(ds.grid);
  write_file(dir / "manifest.json", man.dump(1) + "\n");

  const std::size_t rb = record_bytes(ds.patch_size);
  const std::size_t pl = static_cast<std::size_t>(ds.patch_size) * ds.patch_size;
  std::vector<char> rec(rb);
  std::ofstream out(dir / "samples.bin", std::ios::binary);
  if (!out) fail_runtime("cannot write " + (dir / "samples.bin").string());
  for (const auto& s : ds.samples) {
    require(s.size == ds.patch_size, "write_dataset: sample size differs from dataset patch size");
    char* p = rec.data();
    const std::int32_t orow = s.origin_row, ocol = s.origin_col;
    std::memcpy(p, &orow, 4);
    std::memcpy(p + 4, &ocol, 4);
    p += 8;
    for (raster::Modality m : raster::kModalities) {
      const auto& v = s.inputs[static_cast<int>(m)];
      require(v.size() == pl * raster::band_count(m), "write_dataset: input block has the wrong size");
      std::memcpy(p, v.data(), v.size() * 4);
      p += v.size() * 4;
    }
    std::memcpy(p, s.label.data(), pl * 4);
    p += pl * 4;
    std::memcpy(p, s.mask.data(), pl);
    p += pl;
    std::memcpy(p, s.filled.data(), pl);
    out.write(rec.data(), static_cast<std::streamsize>(rb));
  }
  if (!out) fail_runtime("write failed for " + (dir / "samples.bin").string());
}

inline PatchDataset read_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail_input("dataset directory not found: " + dir.string());
  nlohmann::json man;
  try {
    man = nlohmann::json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    fail_input((dir / "manifest.json").string() + ": " + e.what());
  }
  PatchDataset ds;
  try {
    if (man.at("format") != "marsnet-patches" || man.at("version") != 1 || man.at("dtype") != "float32")
      fail_input((dir / "manifest.json").string() + ": unsupported dataset format");
    ds.patch_size = man.at("patch_size").get<int>();
    ds.stats = stats_from_json(man.at("norm_stats"));
    ds.split_seed = man.at("split").at("seed").get<std::uint64_t>();
    ds.split.train = man.at("split").at("train").get<std::vector<std::size_t>>();
    ds.split.val = man.at("split").at("val").get<std::vector<std::size_t>>();
    ds.split.test = man.at("split").at("test").get<std::vector<std::size_t>>();
    ds.grid = grid_from_json(man.at("grid"));
    const std::size_t count = man.at("count").get<std::size_t>();
    const std::size_t rb = record_bytes(ds.patch_size);
    const std::size_t pl = static_cast<std::size_t>(ds.patch_size) * ds.patch_size;
    const std::string raw = read_file(dir / "samples.bin");
    if (raw.size() != count * rb) fail_input((dir / "samples.bin").string() + ": size does not match manifest");
    for (std::size_t k = 0; k < count; ++k) {
      const char* p = raw.data() + k * rb;
      raster::PatchSample s;
      s.size = ds.patch_size;
      std::int32_t orow, ocol;
      std::memcpy(&orow, p, 4);
      std::memcpy(&ocol, p + 4, 4);
      s.origin_row = orow;
      s.origin_col = ocol;
      p += 8;
      for (raster::Modality m : raster::kModalities) {
        auto& v = s.inputs[static_cast<int>(m)];
        v.resize(pl * raster::band_count(m));
        std::memcpy(v.data(), p, v.size() * 4);
        p += v.size() * 4;
      }
      s.label.resize(pl);
      std::memcpy(s.label.data(), p, pl * 4);
      p += pl * 4;
      s.mask.assign(p, p + pl);
      p += pl;
      s.filled.assign(p, p + pl);
      ds.samples.push_back(std::move(s));
    }
    for (const auto* part : {&ds.split.train, &ds.split.val, &ds.split.test})
      for (auto i : *part) require(i < count, (dir / "manifest.json").string() + ": split index out of range");
  } catch (const nlohmann::json::exception& e) {
    fail_input((dir / "manifest.json").string() + ": " + e.what());
  }
  return ds;
}

}  // namespace marsnet::io
