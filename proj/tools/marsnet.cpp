// marsnet: command-line pipeline from GEDI footprints and satellite sources
// to a wall-to-wall canopy height map.
//
// Exit codes: 0 success, 2 bad input, 3 runtime failure. Failures print one
// JSON line {"level":"error",...} on standard error.

#include <CLI11.hpp>

#include <functional>
#include <map>
#include <new>

#include "commands.hpp"

using namespace marsnet;

namespace {

struct Flag {
  const char* name;
  const char* key;
  const char* help;
};

struct Command {
  const char* name;
  const char* help;
  std::vector<Flag> flags;
  std::function<void(const cli::Settings&, cli::Logger&)> run;
};

const std::vector<Flag> kModelTrainFlags{
    {"--stage-widths", "model.stage_widths", "comma-separated encoder widths"},
    {"--encoder-mode", "model.encoder_mode", "separate | shared | sar_shared"},
    {"--esbc", "model.esbc_enabled", "true | false"},
    {"--modalities", "model.modalities", "e.g. sentinel2:17,sentinel1:9"},
    {"--epochs", "train.max_epochs", "maximum epochs"},
    {"--batch-size", "train.batch_size", "mini-batch size"},
    {"--lr", "train.learning_rate", "Adam learning rate"},
    {"--l2", "train.l2_lambda", "L2 weight on conv kernels"},
    {"--patience", "train.early_stop_patience", "early-stopping patience in epochs"},
};

std::vector<Flag> with_model_flags(std::vector<Flag> v) {
  v.insert(v.end(), kModelTrainFlags.begin(), kModelTrainFlags.end());
  return v;
}

std::vector<Command> commands() {
  return {
      {"synth", "generate a synthetic study area", {{"--out", "synth.out", "output directory"}, {"--size", "synth.size", "grid side in pixels (>= 128)"}},
       cli::run_synth},
      {"filter-gedi",
       "apply the footprint quality, sensitivity, forest and NDVI filters",
       {{"--footprints", "filter-gedi.footprints", "footprint CSV"},
        {"--ndvi", "filter-gedi.ndvi", "NDVI raster (optional)"},
        {"--forest-mask", "filter-gedi.forest_mask", "forest mask raster (optional)"},
        {"--out", "filter-gedi.out", "filtered footprint CSV"},
        {"--report", "filter-gedi.report", "per-record drop reasons (default <out>.report.csv)"}},
       cli::run_filter},
      {"calibrate",
       "fit dominant height against RH98 from matched plots",
       {{"--plots", "calibrate.plots", "field plot CSV"},
        {"--footprints", "calibrate.footprints", "footprint CSV"},
        {"--out", "calibrate.out", "calibration model file"},
        {"--table", "calibrate.table", "RH metric vs field statistic table (optional)"},
        {"--labels", "calibrate.labels", "calibrated footprint heights CSV (optional)"}},
       cli::run_calibrate},
      {"build-stack",
       "build the 34-band modality stacks on the analysis grid",
       {{"--sources", "build-stack.sources", "source raster directory"}, {"--out", "build-stack.out", "stack directory"}},
       cli::run_build_stack},
      {"patchify",
       "cut labeled patches, split them and fit input statistics",
       {{"--stacks", "patchify.stacks", "stack directory"},
        {"--labels", "patchify.labels", "calibrated footprint heights CSV"},
        {"--out", "patchify.out", "dataset directory"},
        {"--patch-size", "patchify.patch_size", "patch side in pixels"}},
       cli::run_patchify},
      {"train", "train a model on a patch dataset",
       with_model_flags({{"--dataset", "train.dataset", "dataset directory"},
                         {"--out", "train.out", "checkpoint directory"},
                         {"--log", "train.log", "epoch log (default <out>.log.jsonl)"}}),
       cli::run_train},
      {"predict",
       "predict a wall-to-wall height map",
       {{"--checkpoint", "predict.checkpoint", "checkpoint directory"},
        {"--stacks", "predict.stacks", "stack directory"},
        {"--forest-mask", "predict.forest_mask", "forest mask raster"},
        {"--out", "predict.out", "output height map"}},
       cli::run_predict},
      {"evaluate",
       "accuracy at footprint level (map) and/or labeled-pixel level (dataset)",
       {{"--map", "evaluate.map", "height map"},
        {"--footprints", "evaluate.footprints", "calibrated footprint heights CSV"},
        {"--checkpoint", "evaluate.checkpoint", "checkpoint directory"},
        {"--dataset", "evaluate.dataset", "dataset directory"},
        {"--split", "evaluate.split", "train | val | test"},
        {"--out", "evaluate.out", "metrics JSON"}},
       cli::run_evaluate},
      {"ablate", "train and score the ablation grid",
       with_model_flags({{"--dataset", "ablate.dataset", "dataset directory"},
                         {"--out", "ablate.out", "ablation table (TSV)"},
                         {"--rows", "ablate.rows", "comma-separated subset of row names"},
                         {"--log", "ablate.log", "epoch log (default <out>.log.jsonl)"}}),
       cli::run_ablate},
      {"histogram",
       "compare the height distributions of two maps",
       {{"--map-a", "histogram.map_a", "first map"},
        {"--map-b", "histogram.map_b", "second map"},
        {"--bin-width", "histogram.bin_width", "bin width in metres"},
        {"--out", "histogram.out", "binned table CSV"},
        {"--plot", "histogram.plot", "PNG plot (optional)"}},
       cli::run_histogram},
  };
}

int fail(cli::Logger& log, const char* kind, const std::string& message, int code) {
  log.error(kind, message);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MARSNet canopy height pipeline"};
  app.require_subcommand(1);
  std::string config_path, seed;
  std::vector<std::string> sets;
  bool quiet = false;
  app.add_option("--config", config_path, "INI run configuration");
  app.add_option("--seed", seed, "root seed (overrides the config file)");
  app.add_option("--set", sets, "override any config key: section.key=value")->take_all();
  app.add_flag("--quiet", quiet, "suppress info and warning log lines");

  const auto cmds = commands();
  std::map<std::string, std::string> flag_values;
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& c : cmds) {
    auto* sub = app.add_subcommand(c.name, c.help);
    sub->fallthrough();
    for (const auto& f : c.flags) sub->add_option(f.name, flag_values[f.key], f.help);
    subs.push_back({sub, &c});
  }

  std::string active = "marsnet";
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    cli::Logger log(active);
    return fail(log, "bad_input", e.what(), 2);
  }

  const Command* cmd = nullptr;
  CLI::App* sub_app = nullptr;
  for (auto& [sub, c] : subs)
    if (sub->parsed()) {
      cmd = c;
      sub_app = sub;
    }
  active = cmd->name;
  cli::Logger log(active, quiet);
  try {
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) fail_input("--set expects key=value, got '" + kv + "'");
      overrides.emplace_back(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    if (!seed.empty()) overrides.emplace_back("seed", seed);
    for (const auto& f : cmd->flags)
      if (sub_app->count(f.name)) overrides.emplace_back(f.key, flag_values[f.key]);
    const auto settings = cli::Settings::load(config_path.empty() ? std::nullopt : std::optional<std::filesystem::path>(config_path), overrides);
    cmd->run(settings, log);
    return 0;
  } catch (const Error& e) {
    return e.kind() == ErrorKind::bad_input ? fail(log, "bad_input", e.what(), 2) : fail(log, "runtime", e.what(), 3);
  } catch (const nlohmann::json::exception& e) {
    return fail(log, "bad_input", e.what(), 2);
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(log, "runtime", e.what(), 3);
  } catch (const std::bad_alloc&) {
    return fail(log, "runtime", "out of memory", 3);
  } catch (const std::exception& e) {
    return fail(log, "runtime", e.what(), 3);
  }
}
