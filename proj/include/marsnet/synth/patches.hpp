#pragma once

// Stand-alone synthetic patches: a smooth latent height field per patch,
// every input band a fixed linear response to that field plus seeded noise,
// and labels on footprint-like disks. Used where a full synthetic world and
// the raster pipeline would only add runtime.

#include <cmath>
#include <vector>

#include "marsnet/raster/patches.hpp"

namespace marsnet::synth {

struct PatchRecipe {
  int size = 64;
  double min_height = 5.0;
  double max_height = 35.0;
  double noise_sd = 0.1;      // per input band, in standardized units
  double label_noise_sd = 0.0;
  int footprint_spacing = 6;  // pixels between footprint centres
  double footprint_radius = 1.25;
};

/// Latent height in metres at every pixel: a few Gaussian bumps over a base.
inline std::vector<double> latent_heights(int size, Rng& rng, double lo, double hi) {
  std::vector<double> h(static_cast<std::size_t>(size) * size, 0.0);
  const int bumps = 3 + static_cast<int>(rng.below(3));
  for (int k = 0; k < bumps; ++k) {
    const double cy = rng.uniform(0, size), cx = rng.uniform(0, size);
    const double sig = rng.uniform(0.15, 0.4) * size, amp = rng.uniform(-1.0, 1.0);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        h[static_cast<std::size_t>(y) * size + x] += amp * std::exp(-((y - cy) * (y - cy) + (x - cx) * (x - cx)) / (2 * sig * sig));
  }
  double mn = h[0], mx = h[0];
  for (double v : h) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  const double span = mx > mn ? mx - mn : 1.0;
  const double base = rng.uniform(0.0, 0.3), width = rng.uniform(0.5, 0.7);
  for (double& v : h) v = lo + (hi - lo) * (base + width * (v - mn) / span);
  return h;
}

/// Fixed per-band response (gain, offset) shared by every patch of a seed.
inline std::vector<std::pair<double, double>> band_responses(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "band-response"));
  std::vector<std::pair<double, double>> r;
  for (int b = 0; b < raster::kTotalBands; ++b) r.emplace_back(rng.uniform(-1.5, 1.5), rng.uniform(-0.5, 0.5));
  return r;
}

inline std::vector<raster::PatchSample> synthetic_patches(int count, std::uint64_t seed, const PatchRecipe& recipe = {}) {
  const auto resp = band_responses(seed);
  const int P = recipe.size;
  const std::size_t pl = static_cast<std::size_t>(P) * P;
  std::vector<raster::PatchSample> out;
  for (int n = 0; n < count; ++n) {
    Rng rng(derive_seed(seed, "patch/" + std::to_string(n)));
    const auto h = latent_heights(P, rng, recipe.min_height, recipe.max_height);
    const double mid = 0.5 * (recipe.min_height + recipe.max_height), half = 0.5 * (recipe.max_height - recipe.min_height);
    raster::PatchSample s;
    s.size = P;
    s.origin_row = n * P;
    int b0 = 0;
    for (raster::Modality m : raster::kModalities) {
      const int mi = static_cast<int>(m), nb = raster::band_count(m);
      s.inputs[mi].resize(pl * nb);
      for (int b = 0; b < nb; ++b) {
        const auto [gain, offset] = resp[b0 + b];
        for (std::size_t i = 0; i < pl; ++i)
          s.inputs[mi][b * pl + i] = static_cast<float>(gain * (h[i] - mid) / half + offset + rng.normal(0.0, recipe.noise_sd));
      }
      b0 += nb;
    }
    s.label.assign(pl, 0.0f);
    s.mask.assign(pl, 0);
    s.filled.assign(pl, 0);
    const int sp = recipe.footprint_spacing;
    for (int gy = sp / 2; gy < P; gy += sp)
      for (int gx = sp / 2; gx < P; gx += sp) {
        const double cy = gy + rng.uniform(-1.0, 1.0), cx = gx + rng.uniform(-1.0, 1.0);
        double sum = 0;
        int cnt = 0;
        std::vector<std::size_t> px;
        for (int y = 0; y < P; ++y)
          for (int x = 0; x < P; ++x)
            if (std::hypot(y + 0.5 - cy, x + 0.5 - cx) <= recipe.footprint_radius) {
              px.push_back(static_cast<std::size_t>(y) * P + x);
              sum += h[px.back()];
              ++cnt;
            }
        if (!cnt) continue;
        const double value = sum / cnt + rng.normal(0.0, recipe.label_noise_sd);
        for (auto i : px) {
          s.label[i] = static_cast<float>(value);
          s.mask[i] = 1;
        }
      }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace marsnet::synth
