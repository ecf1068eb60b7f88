#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "marsnet/eval/metrics.hpp"
#include "marsnet/io/text.hpp"
#include "marsnet/train/trainer.hpp"

namespace marsnet::eval {

using model::EncoderMode;
using model::ModelConfig;
using raster::Modality;

struct AblationEntry {
  std::string name;
  std::function<void(ModelConfig&)> apply;
};

using AblationGrid = std::vector<AblationEntry>;

inline std::vector<model::ModalityInput> modality_subset(std::initializer_list<Modality> ms) {
  std::vector<model::ModalityInput> v;
  for (Modality m : ms) v.push_back({m, raster::band_count(m)});
  return v;
}

/// Encoder variants first, then input-modality subsets, then the full model.
inline AblationGrid default_ablation_grid() {
  auto plain = [](EncoderMode mode) {
    return [mode](ModelConfig& c) {
      c.encoder_mode = mode;
      c.esbc_enabled = false;
    };
  };
  auto with_esbc = [](EncoderMode mode) { return [mode](ModelConfig& c) { c.encoder_mode = mode; }; };
  auto inputs = [](std::vector<model::ModalityInput> ms) { return [ms](ModelConfig& c) { c.modalities = ms; }; };
  return {
      {"shared_encoder_plain", plain(EncoderMode::shared)},
      {"four_encoders_plain", plain(EncoderMode::separate)},
      {"shared_encoder_esbc", with_esbc(EncoderMode::shared)},
      {"sar_shared_esbc", with_esbc(EncoderMode::sar_shared)},
      {"inputs_s2", inputs(modality_subset({Modality::sentinel2}))},
      {"inputs_s1_s2", inputs(modality_subset({Modality::sentinel1, Modality::sentinel2}))},
      {"inputs_s1_s2_palsar", inputs(modality_subset({Modality::sentinel1, Modality::sentinel2, Modality::palsar2}))},
      {"marsnet_full", [](ModelConfig&) {}},
  };
}

/// Selects grid rows by name, keeping grid order; unknown names are an error.
inline AblationGrid select_rows(const AblationGrid& grid, const std::vector<std::string>& names) {
  AblationGrid out;
  for (const auto& n : names) {
    auto it = std::find_if(grid.begin(), grid.end(), [&](const AblationEntry& e) { return e.name == n; });
    if (it == grid.end()) fail_input("unknown ablation row '" + n + "'");
    out.push_back(*it);
  }
  return out;
}

/// FNV-1a over the three index lists, separators included, as 16 hex digits.
inline std::string split_hash(const raster::SplitIndices& s) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
  };
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    mix(part->size());
    for (auto i : *part) mix(i);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Labeled-pixel accuracy on the chosen samples. Predictions are clamped at
/// 0 as in the wall-to-wall map.
template <class T>
MetricsReport evaluate_pixels(const model::MarsNet<T>& net, const std::vector<raster::PatchSample>& samples,
                              std::span<const std::size_t> which, int batch_size = 16) {
  std::vector<double> obs, pred;
  for (std::size_t start = 0; start < which.size(); start += batch_size) {
    const auto part = which.subspan(start, std::min<std::size_t>(batch_size, which.size() - start));
    const auto b = train::make_batch<T>(samples, part, net.config());
    const auto y = net.predict(b.inputs);
    for (std::size_t i = 0; i < y.size(); ++i)
      if (b.mask[i] != T{0}) {
        obs.push_back(static_cast<double>(b.label[i]));
        pred.push_back(std::max(0.0, static_cast<double>(y[i])));
      }
  }
  if (obs.empty()) fail_input("evaluation samples have no labeled pixels");
  return metrics(obs, pred);
}

struct AblationRow {
  std::string name;
  bool ok = false;
  std::string error;
  MetricsReport report;
  int best_epoch = 0;
  std::string split_hash;
};

struct AblationOptions {
  std::function<void(const AblationRow&)> on_row;
  std::function<void(const std::string& row, const train::EpochRecord&)> on_epoch;
};

/// Trains every grid row from a fresh initialisation on the same standardized
/// samples and split, and scores each on the common test set. A row that
/// throws is recorded as failed and the rest still run. Rows come back in
/// grid order; see sort_rows for the reported order.
inline std::vector<AblationRow> run_ablation(const AblationGrid& grid, const std::vector<raster::PatchSample>& samples,
                                             const raster::SplitIndices& split, const ModelConfig& base,
                                             const train::TrainConfig& tcfg, const AblationOptions& opts = {}) {
  require(!grid.empty(), "ablation grid is empty");
  require(!split.train.empty() && !split.val.empty() && !split.test.empty(), "ablation split has an empty partition");
  std::vector<AblationRow> rows;
  for (const auto& entry : grid) {
    AblationRow row;
    row.name = entry.name;
    row.split_hash = split_hash(split);
    try {
      ModelConfig cfg = base;
      entry.apply(cfg);
      cfg.validate();
      model::MarsNet<float> net(cfg);
      train::TrainOptions<float> to;
      if (opts.on_epoch) to.on_epoch = [&](const train::EpochRecord& r) { opts.on_epoch(entry.name, r); };
      const auto hist = train::train_model(net, samples, split.train, split.val, tcfg, to);
      row.best_epoch = hist.best_epoch;
      row.report = evaluate_pixels(net, samples, split.test);
      row.ok = true;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    if (opts.on_row) opts.on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Successful rows by descending R2 (missing R2 after present), then failed
/// rows; ties keep grid order.
inline std::vector<AblationRow> sort_rows(std::vector<AblationRow> rows) {
  auto key = [](const AblationRow& r) { return r.ok ? (r.report.r2 ? 0 : 1) : 2; };
  std::stable_sort(rows.begin(), rows.end(), [&](const AblationRow& a, const AblationRow& b) {
    if (key(a) != key(b)) return key(a) < key(b);
    return key(a) == 0 && *a.report.r2 > *b.report.r2;
  });
  return rows;
}

inline std::string optional_cell(const std::optional<double>& v) { return v ? format_number(*v) : "NA"; }

inline io::Table ablation_table(const std::vector<AblationRow>& rows) {
  io::Table t;
  t.header = {"name", "status", "r2", "rmse", "rrmse_pct", "n", "slope", "intercept", "best_epoch", "split_hash", "error"};
  for (const auto& r : rows) {
    if (!r.ok) {
      std::string err = r.error;
      std::replace(err.begin(), err.end(), '\t', ' ');
      std::replace(err.begin(), err.end(), '\n', ' ');
      t.rows.push_back({r.name, "failed", "NA", "NA", "NA", "0", "NA", "NA", "0", r.split_hash, err});
      continue;
    }
    const auto& m = r.report;
    t.rows.push_back({r.name, "ok", optional_cell(m.r2), format_number(m.rmse), optional_cell(m.rrmse_pct), std::to_string(m.n),
                      optional_cell(m.slope), optional_cell(m.intercept), std::to_string(r.best_epoch), r.split_hash, ""});
  }
  return t;
}

}  // namespace marsnet::eval
