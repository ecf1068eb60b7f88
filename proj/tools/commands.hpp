#pragma once

// Subcommand bodies. Each validates its paths first, then does the work and
// writes its primary outputs; logs never go into primary outputs.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <regex>

#include <nlohmann/json.hpp>

#include "log.hpp"
#include "marsnet/eval/ablation.hpp"
#include "marsnet/eval/footprint.hpp"
#include "marsnet/eval/histogram.hpp"
#include "marsnet/gedi/calibration.hpp"
#include "marsnet/gedi/io.hpp"
#include "marsnet/gedi/lookup.hpp"
#include "marsnet/io/dataset.hpp"
#include "marsnet/io/geotiff.hpp"
#include "marsnet/io/png.hpp"
#include "marsnet/raster/build.hpp"
#include "marsnet/synth/world.hpp"
#include "marsnet/train/checkpoint.hpp"
#include "marsnet/train/predict.hpp"
#include "settings.hpp"

namespace marsnet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json report_json(const eval::MetricsReport& m) {
  return {{"n", m.n},
          {"r2", optional_json(m.r2)},
          {"rmse", m.rmse},
          {"rrmse_pct", optional_json(m.rrmse_pct)},
          {"conventional_r2", optional_json(m.conventional_r2)},
          {"slope", optional_json(m.slope)},
          {"intercept", optional_json(m.intercept)}};
}

inline raster::Raster read_single_band(const fs::path& p, const std::string& what) {
  require_file(p, what);
  auto r = io::read_geotiff(p).raster;
  if (r.bands() != 1) fail_input(p.string() + ": " + what + " must have one band");
  return r;
}

// ---- synth -------------------------------------------------------------

inline synth::WorldConfig world_config(const Settings& s) {
  synth::WorldConfig c;
  c.seed = derive_seed(s.root_seed(), "synth");
  c.size = static_cast<int>(s.integer("synth.size"));
  c.footprint_spacing = static_cast<int>(s.integer("synth.footprint_spacing"));
  c.rh98_noise_sd = s.number("synth.rh98_noise_sd");
  c.plot_count = static_cast<int>(s.integer("synth.plot_count"));
  c.trees_per_plot = static_cast<int>(s.integer("synth.trees_per_plot"));
  c.optical_scenes = static_cast<int>(s.integer("synth.optical_scenes"));
  c.sar_scenes = static_cast<int>(s.integer("synth.sar_scenes"));
  c.forest_fraction = s.number("synth.forest_fraction");
  c.quality_fail_rate = s.number("synth.quality_fail_rate");
  c.sensitivity_fail_rate = s.number("synth.sensitivity_fail_rate");
  c.ndvi_fail_rate = s.number("synth.ndvi_fail_rate");
  c.validate();
  return c;
}

inline std::string scene_name(const char* stem, std::size_t k) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%02zu.tif", stem, k);
  return buf;
}

/// Layout: <out>/sources/{optical_NN,sar_c_NN,palsar_dn,incidence,dem}.tif,
/// <out>/{true_height,forest_mask,ndvi}.tif, footprints.csv, plots.csv,
/// planted.csv (the filter rule each footprint was built to fail).
inline void run_synth(const Settings& s, Logger& log) {
  const fs::path out = s.path("synth.out");
  const auto cfg = world_config(s);
  fs::create_directories(out / "sources");
  const auto w = synth::generate_world(cfg);
  for (std::size_t k = 0; k < w.optical.size(); ++k) io::write_geotiff(out / "sources" / scene_name("optical", k), w.optical[k]);
  for (std::size_t k = 0; k < w.sar_c.size(); ++k) io::write_geotiff(out / "sources" / scene_name("sar_c", k), w.sar_c[k], {"VV", "VH"});
  io::write_geotiff(out / "sources" / "palsar_dn.tif", w.palsar_dn, {"HH", "HV"});
  io::write_geotiff(out / "sources" / "incidence.tif", w.incidence, {"local_incidence_angle"});
  io::write_geotiff(out / "sources" / "dem.tif", w.dem, {"elevation"});
  io::write_geotiff(out / "true_height.tif", w.true_height, {"height"});
  io::write_geotiff(out / "forest_mask.tif", w.forest_mask, {"forest"});
  io::write_geotiff(out / "ndvi.tif", w.ndvi, {"ndvi"});
  io::write_file(out / "footprints.csv", gedi::format_footprints(w.footprints));
  io::write_file(out / "plots.csv", gedi::format_plots(w.plots));
  io::Table planted;
  planted.header = {"id", "planted"};
  for (std::size_t i = 0; i < w.footprints.size(); ++i) planted.rows.push_back({w.footprints[i].id, gedi::to_string(w.planted[i])});
  io::write_file(out / "planted.csv", io::format_table(planted, ','));
  log.info("synth_written", {{"out", out.string()}, {"size", cfg.size}, {"footprints", w.footprints.size()}, {"plots", w.plots.size()}});
}

// ---- filter-gedi -------------------------------------------------------

inline void run_filter(const Settings& s, Logger& log) {
  const fs::path in = s.path("filter-gedi.footprints");
  const fs::path out = s.path("filter-gedi.out");
  require_file(in, "footprint file");
  const auto ndvi_path = s.optional_path("filter-gedi.ndvi");
  const auto mask_path = s.optional_path("filter-gedi.forest_mask");
  std::optional<raster::Raster> ndvi, mask;
  if (ndvi_path) ndvi = read_single_band(*ndvi_path, "NDVI raster");
  if (mask_path) mask = read_single_band(*mask_path, "forest mask");
  const fs::path report = s.optional_path("filter-gedi.report").value_or(fs::path(out.string() + ".report.csv"));
  prepare_output(out);
  prepare_output(report);

  const auto records = gedi::parse_footprints(io::read_file(in), in.string());
  const auto res = gedi::run_filter_chain(records, ndvi ? gedi::raster_ndvi_lookup(*ndvi) : gedi::NdviLookup{},
                                          mask ? gedi::raster_mask_lookup(*mask) : gedi::MaskLookup{});
  io::write_file(out, gedi::format_footprints(res.kept));
  io::Table t;
  t.header = {"id", "reason"};
  std::map<std::string, int> counts;
  for (std::size_t i = 0; i < records.size(); ++i) {
    t.rows.push_back({records[i].id, gedi::to_string(res.reasons[i])});
    ++counts[gedi::to_string(res.reasons[i])];
  }
  io::write_file(report, io::format_table(t, ','));
  for (const auto& w : res.warnings) log.warn("filter_warning", {{"message", w}});
  log.info("filtered", {{"input", records.size()}, {"kept", res.kept.size()}, {"reasons", counts}});
}

// ---- calibrate ---------------------------------------------------------

inline void run_calibrate(const Settings& s, Logger& log) {
  const fs::path plots_path = s.path("calibrate.plots"), fp_path = s.path("calibrate.footprints");
  const fs::path out = s.path("calibrate.out");
  require_file(plots_path, "plot file");
  require_file(fp_path, "footprint file");
  const auto table_path = s.optional_path("calibrate.table");
  const auto labels_path = s.optional_path("calibrate.labels");
  prepare_output(out);
  if (table_path) prepare_output(*table_path);
  if (labels_path) prepare_output(*labels_path);

  const auto plots = gedi::parse_plots(io::read_file(plots_path), plots_path.string());
  const auto records = gedi::parse_footprints(io::read_file(fp_path), fp_path.string());
  std::vector<std::pair<double, double>> pairs;
  for (const auto& mp : gedi::match_plots(plots, records)) pairs.push_back({mp.footprint->rh98(), gedi::dominant_height(*mp.plot)});
  const auto model = gedi::fit_calibration(pairs);
  io::write_file(out, gedi::format_calibration(model));
  if (table_path) io::write_file(*table_path, gedi::format_rh_table(gedi::rh_field_correlation(plots, records)));
  if (labels_path) io::write_file(*labels_path, gedi::format_labels(gedi::calibrate_footprints(records, model)));
  log.info("calibrated", {{"pairs", pairs.size()}, {"slope", model.slope}, {"intercept", model.intercept}, {"r2", model.r2}});
}

// ---- build-stack -------------------------------------------------------

inline std::vector<fs::path> scenes(const fs::path& dir, const std::string& stem) {
  std::vector<fs::path> out;
  const std::regex re(stem + "_[0-9]+\\.tif");
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && std::regex_match(e.path().filename().string(), re)) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

/// Sources directory layout as written by `synth`; the analysis grid is the
/// grid of the first optical scene.
inline void run_build_stack(const Settings& s, Logger& log) {
  const fs::path src = s.path("build-stack.sources"), out = s.path("build-stack.out");
  require_dir(src, "sources directory");
  const auto optical = scenes(src, "optical"), sar = scenes(src, "sar_c");
  if (optical.empty()) fail_input(src.string() + ": no optical_NN.tif scenes");
  if (sar.empty()) fail_input(src.string() + ": no sar_c_NN.tif scenes");
  for (const char* f : {"palsar_dn.tif", "incidence.tif", "dem.tif"}) require_file(src / f, "source raster");
  fs::create_directories(out);

  raster::StackSources in;
  for (const auto& p : optical) in.optical.push_back(io::read_geotiff(p).raster);
  for (const auto& p : sar) in.sar_c.push_back(io::read_geotiff(p).raster);
  in.palsar_dn = io::read_geotiff(src / "palsar_dn.tif").raster;
  in.incidence = io::read_geotiff(src / "incidence.tif").raster;
  in.dem = io::read_geotiff(src / "dem.tif").raster;
  raster::BuildOptions opt;
  opt.speckle_radius_m = s.number("build-stack.speckle_radius_m");
  const auto stacks = raster::build_stacks(in, in.optical.front().geometry(), opt);
  json man;
  man["grid"] = io::grid_json(stacks[0].raster.geometry());
  man["modalities"] = json::array();
  for (const auto& st : stacks) {
    const std::string name = raster::to_string(st.modality);
    io::write_geotiff(out / (name + ".tif"), st.raster, st.band_names);
    man["modalities"].push_back({{"name", name}, {"file", name + ".tif"}, {"band_names", st.band_names}});
  }
  io::write_file(out / "manifest.json", man.dump(1) + "\n");
  std::size_t nodata = 0;
  for (const auto& st : stacks) nodata += st.raster.geometry().pixels() - st.raster.valid_count();
  log.info("stacks_built", {{"out", out.string()}, {"width", stacks[0].raster.width()}, {"height", stacks[0].raster.height()},
                            {"nodata_pixels", nodata}});
}

inline raster::StackSet read_stacks(const fs::path& dir) {
  require_dir(dir, "stack directory");
  std::array<raster::Raster, 4> r;
  for (raster::Modality m : raster::kModalities) {
    const fs::path p = dir / (std::string(raster::to_string(m)) + ".tif");
    require_file(p, "stack raster");
    r[static_cast<int>(m)] = io::read_geotiff(p).raster;
  }
  return raster::assemble_stacks(std::move(r[0]), std::move(r[1]), std::move(r[2]), std::move(r[3]));
}

// ---- patchify ----------------------------------------------------------

inline void run_patchify(const Settings& s, Logger& log) {
  const fs::path stacks_dir = s.path("patchify.stacks"), labels_path = s.path("patchify.labels"), out = s.path("patchify.out");
  require_dir(stacks_dir, "stack directory");
  require_file(labels_path, "label file");
  const int patch = static_cast<int>(s.integer("patchify.patch_size"));
  const double diameter = s.number("patchify.footprint_diameter_m");
  const auto stacks = read_stacks(stacks_dir);
  const auto& grid = stacks[0].raster.geometry();
  const auto points = gedi::parse_labels(io::read_file(labels_path), labels_path.string());
  const auto labels = gedi::rasterize_labels(points, grid, diameter);
  io::PatchDataset ds;
  ds.patch_size = patch;
  ds.grid = grid;
  ds.samples = raster::extract_patches(stacks, labels.label, labels.mask, patch);
  if (ds.samples.size() < 3) fail_input("only " + std::to_string(ds.samples.size()) + " labeled patches; need at least 3 to split");
  ds.split_seed = derive_seed(s.root_seed(), "split");
  ds.split = raster::split_samples(ds.samples.size(), ds.split_seed);
  ds.stats = raster::fit_norm_stats(ds.samples, ds.split.train);
  io::write_dataset(out, ds);
  std::size_t labeled = 0;
  for (const auto& p : ds.samples) labeled += p.labeled_pixels();
  log.info("patchified", {{"patches", ds.samples.size()}, {"train", ds.split.train.size()}, {"val", ds.split.val.size()},
                          {"test", ds.split.test.size()}, {"labeled_pixels", labeled}});
}

inline std::vector<raster::PatchSample> standardized(const io::PatchDataset& ds) {
  std::vector<raster::PatchSample> out;
  out.reserve(ds.samples.size());
  for (const auto& p : ds.samples) out.push_back(raster::standardize(p, ds.stats));
  return out;
}

// ---- train -------------------------------------------------------------

/// Epoch log lines go to `<out>.log.jsonl` unless train.log names a file;
/// the checkpoint directory holds only reproducible content.
inline void run_train(const Settings& s, Logger& log) {
  const fs::path data = s.path("train.dataset"), out = s.path("train.out");
  require_dir(data, "dataset directory");
  auto mcfg = s.model_config();
  const auto tcfg = s.train_config();
  const fs::path log_path = s.optional_path("train.log").value_or(fs::path(out.string() + ".log.jsonl"));
  prepare_output(log_path);
  const auto ds = io::read_dataset(data);
  if (s.raw().has("model.input_spatial") && mcfg.input_spatial != ds.patch_size)
    fail_input("model.input_spatial " + std::to_string(mcfg.input_spatial) + " does not match the dataset patch size " +
               std::to_string(ds.patch_size));
  mcfg.input_spatial = ds.patch_size;
  mcfg.validate();
  const auto samples = standardized(ds);
  model::MarsNet<float> net(mcfg);
  std::ofstream jl(log_path);
  if (!jl) fail_input("cannot write training log " + log_path.string());
  train::TrainOptions<float> opts;
  opts.on_epoch = [&](const train::EpochRecord& r) {
    const json j{{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}, {"seconds", r.seconds},
                 {"empty_batches", r.empty_batches}};
    jl << j.dump() << "\n" << std::flush;
    log.info("epoch", j);
  };
  const auto hist = train::train_model(net, samples, ds.split.train, ds.split.val, tcfg, opts);
  train::save_checkpoint(out, net, tcfg, ds.stats, hist);
  log.info("trained", {{"checkpoint", out.string()}, {"epochs", hist.epochs.size()}, {"best_epoch", hist.best_epoch},
                       {"best_val_loss", hist.best_val_loss}, {"early_stopped", hist.early_stopped}, {"seconds", hist.seconds}});
}

// ---- predict -----------------------------------------------------------

inline void run_predict(const Settings& s, Logger& log) {
  const fs::path ckpt_dir = s.path("predict.checkpoint"), stacks_dir = s.path("predict.stacks"), out = s.path("predict.out");
  const fs::path mask_path = s.path("predict.forest_mask");
  require_dir(ckpt_dir, "checkpoint directory");
  require_dir(stacks_dir, "stack directory");
  require_file(mask_path, "forest mask");
  prepare_output(out);
  const auto ck = train::load_checkpoint(ckpt_dir);
  const auto stacks = raster::standardize(read_stacks(stacks_dir), ck.stats);
  const auto mask = read_single_band(mask_path, "forest mask");
  train::PredictOptions opt;
  opt.tiles_per_batch = static_cast<int>(s.integer("predict.tiles_per_batch"));
  const auto map = train::predict_map(*ck.net, stacks, mask, opt);
  io::write_geotiff(out, map, {"canopy_height"});
  log.info("predicted", {{"out", out.string()}, {"valid_pixels", map.valid_count()}});
}

// ---- evaluate ----------------------------------------------------------

/// Footprint level (map + calibrated footprints), pixel level on a dataset
/// split (checkpoint + dataset), or both.
inline void run_evaluate(const Settings& s, Logger& log) {
  const fs::path out = s.path("evaluate.out");
  const auto map_path = s.optional_path("evaluate.map"), fp_path = s.optional_path("evaluate.footprints");
  const auto ck_path = s.optional_path("evaluate.checkpoint"), ds_path = s.optional_path("evaluate.dataset");
  if (map_path.has_value() != fp_path.has_value()) fail_input("footprint evaluation needs both evaluate.map and evaluate.footprints");
  if (ck_path.has_value() != ds_path.has_value()) fail_input("pixel evaluation needs both evaluate.checkpoint and evaluate.dataset");
  if (!map_path && !ck_path) fail_input("nothing to evaluate: give a map with footprints and/or a checkpoint with a dataset");
  if (map_path) {
    require_file(*map_path, "prediction map");
    require_file(*fp_path, "footprint label file");
  }
  if (ck_path) {
    require_dir(*ck_path, "checkpoint directory");
    require_dir(*ds_path, "dataset directory");
  }
  const std::string split = s.get("evaluate.split");
  if (split != "train" && split != "val" && split != "test") fail_input("evaluate.split must be train, val or test");
  prepare_output(out);

  json doc = json::object();
  if (map_path) {
    const auto map = read_single_band(*map_path, "prediction map");
    const auto pts = gedi::parse_labels(io::read_file(*fp_path), fp_path->string());
    const auto ev = eval::footprint_eval(map, pts, s.number("evaluate.footprint_diameter_m"));
    doc["footprint"] = report_json(ev.report);
    doc["footprint"]["excluded_nodata"] = ev.excluded_nodata;
    log.info("footprint_metrics", doc["footprint"]);
  }
  if (ck_path) {
    const auto ck = train::load_checkpoint(*ck_path);
    const auto ds = io::read_dataset(*ds_path);
    if (ds.patch_size != ck.net->config().input_spatial) fail_input("dataset patch size does not match the checkpoint model");
    const auto samples = [&] {
      std::vector<raster::PatchSample> v;
      for (const auto& p : ds.samples) v.push_back(raster::standardize(p, ck.stats));
      return v;
    }();
    const auto& which = split == "train" ? ds.split.train : split == "val" ? ds.split.val : ds.split.test;
    const auto rep = eval::evaluate_pixels(*ck.net, samples, which);
    doc["pixel"] = report_json(rep);
    doc["pixel"]["split"] = split;
    log.info("pixel_metrics", doc["pixel"]);
  }
  io::write_file(out, doc.dump(2) + "\n");
}

// ---- ablate ------------------------------------------------------------

/// Writes the sorted table as TSV to ablate.out and a JSON summary beside it.
inline void run_ablate(const Settings& s, Logger& log) {
  const fs::path data = s.path("ablate.dataset"), out = s.path("ablate.out");
  require_dir(data, "dataset directory");
  prepare_output(out);
  auto base = s.model_config();
  const auto tcfg = s.train_config();
  auto grid = eval::default_ablation_grid();
  const std::string rows = s.get("ablate.rows");
  if (!rows.empty()) {
    std::vector<std::string> names;
    for (auto& n : split(rows, ',')) names.push_back(trim(n));
    grid = eval::select_rows(grid, names);
  }
  const auto ds = io::read_dataset(data);
  base.input_spatial = ds.patch_size;
  const auto samples = standardized(ds);
  const fs::path log_path = s.optional_path("ablate.log").value_or(fs::path(out.string() + ".log.jsonl"));
  prepare_output(log_path);
  std::ofstream jl(log_path);
  eval::AblationOptions opts;
  opts.on_epoch = [&](const std::string& row, const train::EpochRecord& r) {
    const json j{{"row", row}, {"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}, {"seconds", r.seconds}};
    jl << j.dump() << "\n" << std::flush;
  };
  opts.on_row = [&](const eval::AblationRow& r) {
    if (r.ok) log.info("ablation_row", {{"row", r.name}, {"metrics", report_json(r.report)}});
    else log.warn("ablation_row_failed", {{"row", r.name}, {"error", r.error}});
  };
  const auto sorted = eval::sort_rows(eval::run_ablation(grid, samples, ds.split, base, tcfg, opts));
  io::write_file(out, io::format_table(eval::ablation_table(sorted), '\t'));
  json summary = json::array();
  for (const auto& r : sorted)
    summary.push_back({{"name", r.name}, {"ok", r.ok}, {"error", r.error}, {"best_epoch", r.best_epoch}, {"split_hash", r.split_hash},
                       {"metrics", r.ok ? report_json(r.report) : json(nullptr)}});
  io::write_file(out.string() + ".json", summary.dump(2) + "\n");
  log.info("ablation_done", {{"rows", sorted.size()}, {"out", out.string()}});
}

// ---- histogram ---------------------------------------------------------

inline void run_histogram(const Settings& s, Logger& log) {
  const fs::path a_path = s.path("histogram.map_a"), b_path = s.path("histogram.map_b"), out = s.path("histogram.out");
  const auto plot = s.optional_path("histogram.plot");
  const auto a = read_single_band(a_path, "map a");
  const auto b = read_single_band(b_path, "map b");
  prepare_output(out);
  if (plot) prepare_output(*plot);
  const auto h = eval::height_histogram(a, b, s.number("histogram.bin_width"));
  io::write_file(out, io::format_table(eval::histogram_table(h), ','));
  if (plot) io::write_png(*plot, io::render_histogram(h));
  log.info("histogram", {{"bins", h.bins()}, {"out", out.string()}});
}

}  // namespace marsnet::cli
