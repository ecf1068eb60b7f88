#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "marsnet/model/marsnet.hpp"
#include "marsnet/raster/stack.hpp"

namespace marsnet::train {

/// Mirror index into [0, n) without repeating the edge sample.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

struct PredictOptions {
  int tiles_per_batch = 8;
  /// 0 visits tiles row-major; any other value visits them in a seeded
  /// random order (the result must not depend on it).
  std::uint64_t order_seed = 0;
};

/// Model inputs for one window whose top-left pixel is (row0, col0). Pixels
/// past the grid edge are reflected back inside; nodata reads as 0, the
/// training mean after standardization.
template <class T>
std::vector<Tensor<T>> window_inputs(const raster::StackSet& stacks, const model::ModelConfig& cfg, int row0, int col0,
                                     int batch = 1, int slot = 0, std::vector<Tensor<T>>* into = nullptr) {
  const int P = cfg.input_spatial;
  std::vector<Tensor<T>> local;
  auto& out = into ? *into : local;
  if (out.empty())
    for (const auto& mi : cfg.modalities) out.emplace_back(Shape{batch, mi.bands, P, P});
  for (std::size_t k = 0; k < cfg.modalities.size(); ++k) {
    const auto& r = raster::stack_of(stacks, cfg.modalities[k].modality).raster;
    require(r.bands() == cfg.modalities[k].bands, std::string(raster::to_string(cfg.modalities[k].modality)) +
                                                      " stack band count does not match the model");
    const int H = r.height(), W = r.width();
    for (int b = 0; b < r.bands(); ++b) {
      T* dst = out[k].plane(slot, b);
      for (int y = 0; y < P; ++y) {
        const int sy = reflect_index(row0 + y, H);
        for (int x = 0; x < P; ++x) {
          const double v = r.at(b, sy, reflect_index(col0 + x, W));
          dst[y * P + x] = std::isfinite(v) ? static_cast<T>(v) : T{0};
        }
      }
    }
  }
  return local;
}

/// Wall-to-wall height map from standardized stacks. Non-overlapping tiles of
/// the model's input size cover the grid; edge tiles are reflect-padded and
/// cropped. Negative heights are clamped to 0 and non-forest pixels (mask 0 or
/// nodata) become nodata.
template <class T>
raster::Raster predict_map(const model::MarsNet<T>& net, const raster::StackSet& stacks, const raster::Raster& forest_mask,
                           const PredictOptions& opt = {}) {
  const auto& cfg = net.config();
  const auto& grid = raster::stack_of(stacks, cfg.modalities[0].modality).raster.geometry();
  for (const auto& mi : cfg.modalities)
    require(raster::stack_of(stacks, mi.modality).raster.geometry() == grid, "prediction stacks are on different grids");
  require(forest_mask.geometry() == grid, "forest mask grid does not match the input stacks");
  const int P = cfg.input_spatial;
  std::vector<std::pair<int, int>> tiles;
  for (int r = 0; r < grid.height; r += P)
    for (int c = 0; c < grid.width; c += P) tiles.emplace_back(r, c);
  if (opt.order_seed != 0) {
    Rng rng(opt.order_seed);
    rng.shuffle(tiles.begin(), tiles.end());
  }
  raster::Raster out(grid, 1);
  const int per = std::max(1, opt.tiles_per_batch);
  for (std::size_t start = 0; start < tiles.size(); start += per) {
    const int n = static_cast<int>(std::min<std::size_t>(per, tiles.size() - start));
    std::vector<Tensor<T>> inputs;
    for (int k = 0; k < n; ++k) window_inputs<T>(stacks, cfg, tiles[start + k].first, tiles[start + k].second, n, k, &inputs);
    const auto pred = net.predict(inputs);
    for (int k = 0; k < n; ++k) {
      const auto [r0, c0] = tiles[start + k];
      const T* p = pred.plane(k, 0);
      for (int y = 0; y < P && r0 + y < grid.height; ++y)
        for (int x = 0; x < P && c0 + x < grid.width; ++x) out.at(0, r0 + y, c0 + x) = static_cast<double>(p[y * P + x]);
    }
  }
  for (int r = 0; r < grid.height; ++r)
    for (int c = 0; c < grid.width; ++c) {
      const double m = forest_mask.at(0, r, c);
      if (forest_mask.is_nodata(r, c) || !(m != 0.0)) {
        out.set_nodata(r, c);
        continue;
      }
      double& v = out.at(0, r, c);
      if (!std::isfinite(v)) fail_runtime("prediction produced a non-finite height");
      v = std::max(v, 0.0);
    }
  return out;
}

}  // namespace marsnet::train
