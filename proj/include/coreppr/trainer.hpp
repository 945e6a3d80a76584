#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "coreppr/dataset.hpp"
#include "coreppr/diffusion.hpp"
#include "coreppr/error.hpp"
#include "coreppr/graph.hpp"
#include "coreppr/neural.hpp"
#include "coreppr/parallel.hpp"

namespace coreppr {

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 512;
  double lr = 5e-3;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden{32};
  double dropout = 0.0;
  double weight_decay = 0.0;
  std::size_t patience = 20;
  bool train_gate = true;  // false pins gamma to 0, which is plain PPRGo propagation
  DiffusionConfig diffusion;
  std::size_t threads = 1;

  void validate() const {
    if (epochs == 0) throw Error("epochs must be >= 1");
    if (batch_size == 0) throw Error("batch_size must be >= 1");
    if (!(lr >= 0.0)) throw Error("learning rate must be nonnegative");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("dropout must lie in [0, 1)");
    if (patience == 0) throw Error("patience must be >= 1");
    diffusion.validate();
  }
};

inline std::map<std::string, std::string> describe(const TrainConfig& cfg) {
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  std::string hidden;
  for (std::size_t i = 0; i < cfg.hidden.size(); ++i) hidden += (i ? "," : "") + std::to_string(cfg.hidden[i]);
  const auto* fixed = std::get_if<FixedL>(&cfg.diffusion.neighbors);
  return {
      {"alpha", num(cfg.diffusion.ppr.alpha)},
      {"epsilon", num(cfg.diffusion.ppr.epsilon)},
      {"neighbors", fixed ? "top-" + std::to_string(fixed->l) : "dynamic"},
      {"mode", to_string(cfg.diffusion.inference)},
      {"power_iters", std::to_string(cfg.diffusion.power_iters)},
      {"epochs", std::to_string(cfg.epochs)},
      {"batch_size", std::to_string(cfg.batch_size)},
      {"lr", num(cfg.lr)},
      {"seed", std::to_string(cfg.seed)},
      {"hidden", hidden},
      {"dropout", num(cfg.dropout)},
      {"weight_decay", num(cfg.weight_decay)},
      {"patience", std::to_string(cfg.patience)},
      {"train_gate", cfg.train_gate ? "true" : "false"},
  };
}

struct RunReport {
  double accuracy_test = 0.0;  // percent
  double accuracy_val = 0.0;   // percent, of the selected (best validation) model
  double gamma_final = 0.0;
  double mean_l = 0.0;
  double time_precompute_s = 0.0;
  double time_train_s = 0.0;
  double time_infer_s = 0.0;
  std::vector<double> loss_curve;   // mean training loss per epoch
  std::vector<double> gamma_curve;  // gamma in effect at the start of each epoch
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  std::map<std::string, std::string> config;

  nlohmann::json to_json() const {
    return {
        {"accuracy_test", accuracy_test},
        {"accuracy_val", accuracy_val},
        {"gamma_final", gamma_final},
        {"mean_l", mean_l},
        {"time_precompute_s", time_precompute_s},
        {"time_train_s", time_train_s},
        {"time_infer_s", time_infer_s},
        {"loss_curve", loss_curve},
        {"gamma_curve", gamma_curve},
        {"epochs_run", epochs_run},
        {"best_epoch", best_epoch},
        {"config", config},
    };
  }
};

namespace detail {

class Stopwatch {
 public:
  // Seconds since construction, rounded to milliseconds.
  double seconds() const {
    const auto elapsed = std::chrono::steady_clock::now() - start_;
    return std::round(std::chrono::duration<double>(elapsed).count() * 1000.0) / 1000.0;
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline std::vector<std::uint32_t> argmax_rows(const Eigen::MatrixXd& logits) {
  std::vector<std::uint32_t> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    logits.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(best);
  }
  return out;
}

}  // namespace detail

inline std::vector<PropagationRow> precompute_rows(const Graph& g, const CoreScores& cores,
                                                   const DiffusionConfig& cfg, std::span<const NodeId> sources,
                                                   std::size_t threads = 1) {
  cfg.validate();
  std::vector<PropagationRow> rows(sources.size());
  parallel_for(sources.size(), threads, [&](std::size_t i) { rows[i] = build_row(g, cores, sources[i], cfg); });
  return rows;
}

inline double mean_neighbors(std::span<const PropagationRow> rows, bool dynamic) {
  if (rows.empty()) return 0.0;
  double total = 0.0;
  for (const auto& row : rows) total += static_cast<double>(counted_neighbors(row, dynamic));
  return total / static_cast<double>(rows.size());
}

struct EvalResult {
  double accuracy = 0.0;  // percent
  std::vector<std::uint32_t> predictions;
  double seconds = 0.0;
};

/**
 * Predicts `targets` and scores them against the dataset labels.
 *
 * OT: H for every node, power iteration with the row-stochastic walk, no
 * CoreRank involved. T&T: explicit rows with gamma from the model; rows are
 * taken from `cached_rows` (aligned with targets) when given, else built.
 */
inline EvalResult evaluate(const Model& model, const Graph& g, const CoreScores& cores, const Dataset& ds,
                           InferenceMode mode, const DiffusionConfig& cfg, std::span<const NodeId> targets,
                           std::size_t threads = 1, const std::vector<PropagationRow>* cached_rows = nullptr) {
  if (targets.empty()) throw Error("evaluation needs a nonempty target set");
  detail::Stopwatch clock;
  const Eigen::MatrixXd h = mlp_forward(model, ds.features.cast<double>());

  Eigen::MatrixXd logits;
  if (mode == InferenceMode::OnlyTraining) {
    const Eigen::MatrixXd q = ot_inference(g, h, cfg.ppr.alpha, cfg.power_iters, threads);
    logits.resize(static_cast<Eigen::Index>(targets.size()), q.cols());
    for (std::size_t t = 0; t < targets.size(); ++t) logits.row(static_cast<Eigen::Index>(t)) = q.row(targets[t]);
  } else if (cached_rows) {
    if (cached_rows->size() != targets.size()) throw Error("cached rows do not match the targets");
    logits = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(targets.size()), h.cols());
    const double gamma = model.gamma();
    for (std::size_t t = 0; t < targets.size(); ++t) {
      const auto& row = (*cached_rows)[t];
      if (row.source != targets[t]) throw Error("cached rows do not match the targets");
      const std::vector<double> w = combine_gamma(row, gamma);
      for (std::size_t j = 0; j < row.size(); ++j) logits.row(static_cast<Eigen::Index>(t)) += w[j] * h.row(row.indices[j]);
    }
  } else {
    logits = tt_inference(
        g, cores, [&](NodeId u) { return h.row(u); }, static_cast<std::size_t>(h.cols()), model.gamma(), cfg, targets,
        threads);
  }

  EvalResult result;
  result.predictions = detail::argmax_rows(logits);
  std::size_t correct = 0;
  for (std::size_t t = 0; t < targets.size(); ++t) correct += result.predictions[t] == ds.labels[targets[t]];
  result.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(targets.size());
  result.seconds = clock.seconds();
  return result;
}

struct TrainResult {
  Model model;
  RunReport report;
};

/**
 * Training loop over precomputed rows. Each epoch shuffles the training rows
 * with the seeded generator, runs Adam over mini-batches (the last partial
 * batch is kept) and scores the validation split; the model with the best
 * validation accuracy is returned. `val_rows` feeds T&T validation and may
 * be empty, in which case rows are built on the fly.
 */
inline TrainResult fit(const Graph& g, const CoreScores& cores, const Dataset& ds, const TrainConfig& cfg,
                       std::span<const PropagationRow> train_rows, const std::vector<PropagationRow>& val_rows = {}) {
  cfg.validate();
  if (train_rows.empty()) throw Error("training split is empty");

  std::vector<std::size_t> dims{ds.num_features()};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(ds.num_classes);

  TrainResult result{Model::init(dims, cfg.seed), {}};
  Model& model = result.model;
  RunReport& report = result.report;
  if (!cfg.train_gate) model.gate = Model::kGateOff;

  AdamConfig adam;
  adam.lr = cfg.lr;
  adam.weight_decay = cfg.weight_decay;
  adam.update_gate = cfg.train_gate;
  AdamState state = AdamState::for_model(model);

  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  DropoutOptions dropout{cfg.dropout, &rng};

  const std::span<const NodeId> val_targets = ds.splits.val;
  const std::vector<PropagationRow>* val_cache = val_rows.empty() ? nullptr : &val_rows;
  std::optional<Model> best_model;
  double best_val = -1.0;
  std::size_t stale = 0;

  std::vector<std::size_t> order(train_rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<PropagationRow> batch_rows;

  detail::Stopwatch clock;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    report.gamma_curve.push_back(model.gamma());
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch_rows.clear();
      for (std::size_t k = start; k < end; ++k) batch_rows.push_back(train_rows[order[k]]);
      const BatchContext ctx = make_batch(std::span<const PropagationRow>(batch_rows), ds.features, ds.labels);
      const LossAndGrads lg = loss_and_grads(model, ctx, dropout);
      adam_step(model, lg.grads, state, adam);
      loss_sum += lg.loss * static_cast<double>(end - start);
    }
    report.loss_curve.push_back(loss_sum / static_cast<double>(order.size()));
    ++report.epochs_run;

    if (val_targets.empty()) continue;
    const double val =
        evaluate(model, g, cores, ds, cfg.diffusion.inference, cfg.diffusion, val_targets, cfg.threads, val_cache)
            .accuracy;
    if (val > best_val) {
      best_val = val;
      best_model = model;
      report.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  report.time_train_s = clock.seconds();

  if (best_model) {
    model = *best_model;
    report.accuracy_val = best_val;
  } else {
    report.best_epoch = report.epochs_run - 1;
  }
  report.gamma_final = model.gamma();
  report.mean_l = mean_neighbors(train_rows, cfg.diffusion.dynamic());
  report.config = describe(cfg);

  if (!ds.splits.test.empty()) {
    const EvalResult test =
        evaluate(model, g, cores, ds, cfg.diffusion.inference, cfg.diffusion, ds.splits.test, cfg.threads);
    report.accuracy_test = test.accuracy;
    report.time_infer_s = test.seconds;
  }
  return result;
}

/// Precomputes rows for the training (and, for T&T, validation) nodes, then fits.
inline TrainResult train(const Graph& g, const CoreScores& cores, const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  ds.validate();
  if (ds.num_nodes() != g.num_nodes()) {
    throw Error("dataset has " + std::to_string(ds.num_nodes()) + " nodes, graph has " +
                std::to_string(g.num_nodes()));
  }
  if (ds.splits.train.empty()) throw Error("training split is empty");

  detail::Stopwatch clock;
  const std::vector<PropagationRow> train_rows =
      precompute_rows(g, cores, cfg.diffusion, ds.splits.train, cfg.threads);
  std::vector<PropagationRow> val_rows;
  if (cfg.diffusion.inference == InferenceMode::TrainingAndTesting) {
    val_rows = precompute_rows(g, cores, cfg.diffusion, ds.splits.val, cfg.threads);
  }
  const double precompute = clock.seconds();

  TrainResult result = fit(g, cores, ds, cfg, train_rows, val_rows);
  result.report.time_precompute_s = precompute;
  return result;
}

}  // namespace coreppr
