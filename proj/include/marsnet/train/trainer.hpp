#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "marsnet/model/marsnet.hpp"
#include "marsnet/raster/patches.hpp"
#include "marsnet/train/loss.hpp"

namespace marsnet::train {

using model::MarsNet;
using model::ModelConfig;
using raster::PatchSample;

struct TrainConfig {
  double learning_rate = 1e-3;
  int max_epochs = 50;
  int batch_size = 64;
  double l2_lambda = 1e-5;
  int early_stop_patience = 10;
  /// Start the output bias at the mean training label. Labels stay in metres,
  /// so from a zero bias Adam would need thousands of steps to reach the
  /// typical height.
  bool init_head_bias = true;
  std::uint64_t seed = 0;

  void validate() const {
    require(learning_rate > 0, "learning_rate must be positive");
    require(max_epochs > 0, "max_epochs must be positive");
    require(batch_size > 0, "batch_size must be positive");
    require(l2_lambda >= 0, "l2_lambda must be non-negative");
    require(early_stop_patience > 0, "early_stop_patience must be positive");
  }

  static std::vector<std::string> keys() {
    return {"learning_rate", "max_epochs", "batch_size", "l2_lambda", "early_stop_patience", "init_head_bias", "seed"};
  }

  io::KeyValues to_kv() const {
    io::KeyValues kv;
    kv.set("learning_rate", learning_rate);
    kv.set("max_epochs", std::to_string(max_epochs));
    kv.set("batch_size", std::to_string(batch_size));
    kv.set("l2_lambda", l2_lambda);
    kv.set("early_stop_patience", std::to_string(early_stop_patience));
    kv.set("init_head_bias", init_head_bias ? "true" : "false");
    kv.set("seed", std::to_string(seed));
    return kv;
  }

  static TrainConfig from_kv(const io::KeyValues& kv, const std::string& prefix = "") {
    TrainConfig c;
    const auto known = keys();
    for (const auto& k : kv.keys()) {
      if (k.rfind(prefix, 0) != 0) continue;
      if (std::find(known.begin(), known.end(), k.substr(prefix.size())) == known.end())
        fail_input("unknown train config key '" + k + "'");
    }
    auto has = [&](const char* k) { return kv.has(prefix + k); };
    if (has("learning_rate")) c.learning_rate = kv.number(prefix + "learning_rate");
    if (has("max_epochs")) c.max_epochs = static_cast<int>(kv.integer(prefix + "max_epochs"));
    if (has("batch_size")) c.batch_size = static_cast<int>(kv.integer(prefix + "batch_size"));
    if (has("l2_lambda")) c.l2_lambda = kv.number(prefix + "l2_lambda");
    if (has("early_stop_patience")) c.early_stop_patience = static_cast<int>(kv.integer(prefix + "early_stop_patience"));
    if (has("init_head_bias")) c.init_head_bias = io::parse_bool(kv.get(prefix + "init_head_bias"), prefix + "init_head_bias");
    if (has("seed")) c.seed = model::parse_seed(kv.get(prefix + "seed"));
    c.validate();
    return c;
  }
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
  std::size_t empty_batches = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 1-based, 0 before any epoch
  double best_val_loss = 0.0;
  bool early_stopped = false;
  double seconds = 0.0;

  /// Losses and the selected epoch; wall-clock fields are left out so the
  /// document is reproducible byte for byte.
  nlohmann::json to_json() const {
    nlohmann::json j;
    j["best_epoch"] = best_epoch;
    j["best_val_loss"] = best_val_loss;
    j["early_stopped"] = early_stopped;
    j["train_loss"] = nlohmann::json::array();
    j["val_loss"] = nlohmann::json::array();
    for (const auto& e : epochs) {
      j["train_loss"].push_back(e.train_loss);
      j["val_loss"].push_back(e.val_loss);
    }
    return j;
  }
};

template <class T>
struct Batch {
  std::vector<Tensor<T>> inputs;  // per configured modality
  Tensor<T> label;
  Tensor<T> mask;
};

/// Stacks the chosen samples into NCHW tensors for the model's modalities.
template <class T>
Batch<T> make_batch(const std::vector<PatchSample>& samples, std::span<const std::size_t> which, const ModelConfig& cfg) {
  require(!which.empty(), "make_batch: empty batch");
  const int n = static_cast<int>(which.size());
  const int P = samples[which[0]].size;
  require(P == cfg.input_spatial, "patch size " + std::to_string(P) + " does not match the model input " +
                                      std::to_string(cfg.input_spatial));
  const std::size_t pl = static_cast<std::size_t>(P) * P;
  Batch<T> b;
  for (const auto& mi : cfg.modalities) {
    Tensor<T> x(Shape{n, mi.bands, P, P});
    const int m = static_cast<int>(mi.modality);
    for (int k = 0; k < n; ++k) {
      const auto& src = samples[which[k]].inputs[m];
      require(src.size() == pl * mi.bands, "sample lacks bands for " + std::string(raster::to_string(mi.modality)));
      std::transform(src.begin(), src.end(), x.plane(k, 0), [](float v) { return static_cast<T>(v); });
    }
    b.inputs.push_back(std::move(x));
  }
  b.label = Tensor<T>(Shape{n, 1, P, P});
  b.mask = Tensor<T>(Shape{n, 1, P, P});
  for (int k = 0; k < n; ++k) {
    const auto& s = samples[which[k]];
    for (std::size_t i = 0; i < pl; ++i) {
      b.mask.plane(k, 0)[i] = s.mask[i] ? T{1} : T{0};
      b.label.plane(k, 0)[i] = s.mask[i] ? static_cast<T>(s.label[i]) : T{0};
    }
  }
  return b;
}

/// One optimization step over one batch; returns the batch loss before the update.
template <class T>
MaskedLoss<T> train_step(MarsNet<T>& net, Adam<T>& opt, const Batch<T>& batch, double lambda, std::uint64_t dropout_seed) {
  model::ForwardContext<T> ctx;
  ctx.training = true;
  ctx.update_running = true;
  ctx.dropout_seed = dropout_seed;
  Tape<T> t;
  const Var pred = net.forward(t, batch.inputs, ctx).prediction;
  auto loss = masked_loss(t, pred, batch.label, batch.mask, net.params(), lambda);
  if (!std::isfinite(loss.value())) fail_runtime("non-finite training loss");
  net.params().zero_grad();
  loss.backward(t, net.params());
  opt.step();
  return loss;
}

/// Eval-mode masked MSE over all labeled pixels of the chosen samples.
template <class T>
double evaluate_loss(const MarsNet<T>& net, const std::vector<PatchSample>& samples, std::span<const std::size_t> which,
                     int batch_size) {
  double sse = 0.0;
  std::size_t count = 0;
  for (std::size_t start = 0; start < which.size(); start += batch_size) {
    const auto part = which.subspan(start, std::min<std::size_t>(batch_size, which.size() - start));
    const auto b = make_batch<T>(samples, part, net.config());
    const auto pred = net.predict(b.inputs);
    for (std::size_t i = 0; i < pred.size(); ++i)
      if (b.mask[i] != T{0}) {
        const double r = static_cast<double>(pred[i]) - static_cast<double>(b.label[i]);
        sse += r * r;
        ++count;
      }
  }
  return count ? sse / static_cast<double>(count) : 0.0;
}

/// Mean label over the labeled pixels of the chosen samples (0 when none).
inline double mean_label(const std::vector<PatchSample>& samples, std::span<const std::size_t> which) {
  double sum = 0;
  std::size_t n = 0;
  for (auto k : which) {
    const auto& s = samples.at(k);
    for (std::size_t i = 0; i < s.mask.size(); ++i)
      if (s.mask[i]) {
        sum += s.label[i];
        ++n;
      }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

template <class T>
struct TrainOptions {
  /// Replaces the validation loss computation (epoch is 1-based).
  std::function<double(const MarsNet<T>&, int epoch)> validator;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Adam over shuffled mini-batches with early stopping on validation loss.
/// On return the network holds the parameters of the best validation epoch.
template <class T>
TrainHistory train_model(MarsNet<T>& net, const std::vector<PatchSample>& samples, std::span<const std::size_t> train_idx,
                         std::span<const std::size_t> val_idx, const TrainConfig& cfg, const TrainOptions<T>& opts = {}) {
  cfg.validate();
  require(!train_idx.empty(), "training set is empty");
  require(!val_idx.empty() || opts.validator, "validation set is empty");
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  if (cfg.init_head_bias) net.params().at("head.b").value[0] = static_cast<T>(mean_label(samples, train_idx));
  Adam<T> opt(net.params(), cfg.learning_rate);
  TrainHistory hist;
  std::vector<Tensor<T>> best;
  int bad_epochs = 0;
  std::vector<std::size_t> order(train_idx.begin(), train_idx.end());
  std::uint64_t step = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto e0 = clock::now();
    Rng rng(derive_seed(cfg.seed, "shuffle/" + std::to_string(epoch)));
    rng.shuffle(order.begin(), order.end());
    EpochRecord rec;
    rec.epoch = epoch;
    double sse = 0.0;
    std::size_t count = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> part(order.data() + start, std::min<std::size_t>(cfg.batch_size, order.size() - start));
      const auto batch = make_batch<T>(samples, part, net.config());
      MaskedLoss<T> loss;
      try {
        loss = train_step(net, opt, batch, cfg.l2_lambda, derive_seed(cfg.seed, "dropout/" + std::to_string(step++)));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::runtime) throw;
        fail_runtime(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch starting at " + std::to_string(start));
      }
      if (loss.empty()) ++rec.empty_batches;
      sse += loss.mse_value * static_cast<double>(loss.labeled);
      count += loss.labeled;
    }
    rec.train_loss = (count ? sse / static_cast<double>(count) : 0.0) + cfg.l2_lambda * l2_sum(net.params());
    rec.val_loss = opts.validator ? opts.validator(net, epoch) : evaluate_loss(net, samples, val_idx, cfg.batch_size);
    if (!std::isfinite(rec.val_loss)) fail_runtime("non-finite validation loss at epoch " + std::to_string(epoch));
    rec.seconds = std::chrono::duration<double>(clock::now() - e0).count();
    hist.epochs.push_back(rec);
    if (opts.on_epoch) opts.on_epoch(rec);
    if (hist.best_epoch == 0 || rec.val_loss < hist.best_val_loss) {
      hist.best_epoch = epoch;
      hist.best_val_loss = rec.val_loss;
      best = net.snapshot();
      bad_epochs = 0;
    } else if (++bad_epochs >= cfg.early_stop_patience) {
      hist.early_stopped = epoch < cfg.max_epochs;
      break;
    }
  }
  net.restore(best);
  hist.seconds = std::chrono::duration<double>(clock::now() - t0).count();
  return hist;
}

}  // namespace marsnet::train
