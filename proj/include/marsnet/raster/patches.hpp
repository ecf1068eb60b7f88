#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "marsnet/raster/stack.hpp"

namespace marsnet::raster {

/// One square training window. Inputs are raw (unstandardized) values,
/// band-major, for all four modalities.
struct PatchSample {
  int size = 64;
  int origin_row = 0;
  int origin_col = 0;
  std::array<std::vector<float>, 4> inputs;
  std::vector<float> label;          // metres
  std::vector<std::uint8_t> mask;    // 1 where labeled
  std::vector<std::uint8_t> filled;  // 1 where some input was nodata and got infilled

  std::size_t plane() const { return static_cast<std::size_t>(size) * size; }
  std::size_t labeled_pixels() const {
    std::size_t n = 0;
    for (auto m : mask) n += m;
    return n;
  }
};

/// Mean of each band over the raster's valid pixels (0 when none are valid).
inline std::vector<double> band_means(const Raster& r) {
  std::vector<double> out(r.bands(), 0.0);
  const std::size_t np = r.geometry().pixels();
  for (int b = 0; b < r.bands(); ++b) {
    double s = 0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < np; ++p)
      if (!r.is_nodata(p)) {
        s += r.band(b)[p];
        ++n;
      }
    out[b] = n ? s / static_cast<double>(n) : 0.0;
  }
  return out;
}

/// Non-overlapping tiling from the grid origin; partial tiles at the right
/// and bottom edges are discarded. Only tiles with at least one labeled pixel
/// are emitted. Input nodata is filled with that band's raster-wide mean and
/// flagged in PatchSample::filled.
inline std::vector<PatchSample> extract_patches(const StackSet& stacks, const Raster& label, const Raster& mask,
                                                int patch = 64) {
  const auto& g = stacks[0].raster.geometry();
  require(patch > 0, "extract_patches: patch size must be positive");
  require(g.width >= patch && g.height >= patch, "extract_patches: grid smaller than one patch");
  require(label.geometry() == g && mask.geometry() == g, "extract_patches: label/mask grid differs from stacks");
  std::array<std::vector<double>, 4> means;
  for (Modality m : kModalities) {
    const auto& r = stack_of(stacks, m).raster;
    require(r.geometry() == g, "extract_patches: stacks are not co-registered");
    means[static_cast<int>(m)] = band_means(r);
  }
  std::vector<PatchSample> out;
  for (int tr = 0; tr + patch <= g.height; tr += patch) {
    for (int tc = 0; tc + patch <= g.width; tc += patch) {
      bool any = false;
      for (int r = tr; r < tr + patch && !any; ++r)
        for (int c = tc; c < tc + patch && !any; ++c) any = mask.at(0, r, c) != 0.0;
      if (!any) continue;
      PatchSample s;
      s.size = patch;
      s.origin_row = tr;
      s.origin_col = tc;
      const std::size_t pl = s.plane();
      s.label.assign(pl, 0.0f);
      s.mask.assign(pl, 0);
      s.filled.assign(pl, 0);
      for (int r = 0; r < patch; ++r)
        for (int c = 0; c < patch; ++c) {
          const std::size_t i = static_cast<std::size_t>(r) * patch + c;
          if (mask.at(0, tr + r, tc + c) != 0.0) {
            s.mask[i] = 1;
            s.label[i] = static_cast<float>(label.at(0, tr + r, tc + c));
          }
        }
      for (Modality m : kModalities) {
        const auto& ras = stack_of(stacks, m).raster;
        auto& dst = s.inputs[static_cast<int>(m)];
        dst.assign(pl * ras.bands(), 0.0f);
        for (int b = 0; b < ras.bands(); ++b)
          for (int r = 0; r < patch; ++r)
            for (int c = 0; c < patch; ++c) {
              const std::size_t i = static_cast<std::size_t>(r) * patch + c;
              double v = ras.at(b, tr + r, tc + c);
              if (ras.is_nodata(tr + r, tc + c)) {
                v = means[static_cast<int>(m)][b];
                s.filled[i] = 1;
              }
              dst[b * pl + i] = static_cast<float>(v);
            }
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Seeded uniform shuffle, then train = floor(0.8 n), test = floor(0.1 n)
/// and validation takes the remainder.
inline SplitIndices split_samples(std::size_t n, std::uint64_t seed) {
  require(n >= 3, "split_samples: need at least 3 samples, got " + std::to_string(n));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx.begin(), idx.end());
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_test = n / 10;
  const std::size_t n_val = n - n_train - n_test;
  SplitIndices s;
  s.train.assign(idx.begin(), idx.begin() + n_train);
  s.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  s.test.assign(idx.begin() + n_train + n_val, idx.end());
  return s;
}

/// Per-band z-score parameters for each modality.
struct NormStats {
  std::array<std::vector<double>, 4> mean;
  std::array<std::vector<double>, 4> std;
  double epsilon = 1e-6;

  double scale(int m, int b) const { return std::max(std[m][b], epsilon); }
};

/// Population mean and standard deviation of every input band over the
/// given samples (all pixels, including infilled ones).
inline NormStats fit_norm_stats(const std::vector<PatchSample>& samples, const std::vector<std::size_t>& which) {
  require(!which.empty(), "fit_norm_stats: no samples");
  NormStats st;
  for (Modality m : kModalities) {
    const int mi = static_cast<int>(m);
    const int nb = band_count(m);
    st.mean[mi].assign(nb, 0.0);
    st.std[mi].assign(nb, 0.0);
    for (int b = 0; b < nb; ++b) {
      double s = 0;
      std::size_t n = 0;
      for (auto k : which) {
        const auto& smp = samples.at(k);
        const std::size_t pl = smp.plane();
        for (std::size_t i = 0; i < pl; ++i) s += smp.inputs[mi][b * pl + i];
        n += pl;
      }
      const double mean = s / static_cast<double>(n);
      double v = 0;
      for (auto k : which) {
        const auto& smp = samples.at(k);
        const std::size_t pl = smp.plane();
        for (std::size_t i = 0; i < pl; ++i) {
          const double d = smp.inputs[mi][b * pl + i] - mean;
          v += d * d;
        }
      }
      st.mean[mi][b] = mean;
      st.std[mi][b] = std::sqrt(v / static_cast<double>(n));
    }
  }
  return st;
}

/// (x - mean) / max(std, epsilon) on every input band; labels untouched.
inline PatchSample standardize(PatchSample s, const NormStats& st) {
  for (Modality m : kModalities) {
    const int mi = static_cast<int>(m);
    const std::size_t pl = s.plane();
    for (int b = 0; b < band_count(m); ++b) {
      const double mu = st.mean[mi][b], sd = st.scale(mi, b);
      for (std::size_t i = 0; i < pl; ++i) {
        float& x = s.inputs[mi][b * pl + i];
        x = static_cast<float>((x - mu) / sd);
      }
    }
  }
  return s;
}

/// Standardizes full stacks in place of a copy; nodata stays NaN.
inline StackSet standardize(StackSet stacks, const NormStats& st) {
  for (Modality m : kModalities) {
    const int mi = static_cast<int>(m);
    auto& r = stacks[mi].raster;
    for (int b = 0; b < r.bands(); ++b) {
      const double mu = st.mean[mi][b], sd = st.scale(mi, b);
      for (double& x : r.band(b)) x = (x - mu) / sd;
    }
  }
  return stacks;
}

}  // namespace marsnet::raster
