#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "coreppr/binary_io.hpp"
#include "coreppr/diffusion.hpp"
#include "coreppr/error.hpp"
#include "coreppr/graph.hpp"

namespace coreppr {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

/**
 * Feature transformer (affine layers with rectifiers in between, linear
 * output) plus the raw gate g. The propagation mix is gamma = sigmoid(g); a
 * gate of -infinity pins gamma to exactly 0.
 */
struct Model {
  static constexpr double kGateOff = -std::numeric_limits<double>::infinity();

  std::vector<DenseLayer> layers;
  double gate = 0.0;

  double gamma() const { return sigmoid(gate); }

  std::size_t input_dim() const { return static_cast<std::size_t>(layers.front().weight.cols()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(layers.back().weight.rows()); }

  std::vector<std::size_t> dims() const {
    std::vector<std::size_t> d{input_dim()};
    for (const auto& layer : layers) d.push_back(static_cast<std::size_t>(layer.weight.rows()));
    return d;
  }

  std::size_t parameter_count() const {
    std::size_t count = 0;
    for (const auto& layer : layers) count += layer.weight.size() + layer.bias.size();
    return count;
  }

  // dims = {f, hidden..., c}. Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static Model init(std::span<const std::size_t> dims, std::uint64_t seed) {
    if (dims.size() < 2) throw Error("a model needs at least input and output dimensions");
    for (std::size_t d : dims) {
      if (d == 0) throw Error("model dimensions must be positive");
    }
    std::mt19937_64 rng(seed);
    Model model;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const auto in = static_cast<Eigen::Index>(dims[l]);
      const auto out = static_cast<Eigen::Index>(dims[l + 1]);
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd(out)};
      for (Eigen::Index r = 0; r < out; ++r) {
        for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = dist(rng);
      }
      for (Eigen::Index r = 0; r < out; ++r) layer.bias(r) = dist(rng);
      model.layers.push_back(std::move(layer));
    }
    return model;
  }
};

// Gradient with the same layout as Model.
struct Gradients {
  std::vector<DenseLayer> layers;
  double gate = 0.0;

  static Gradients zeros_like(const Model& model) {
    Gradients g;
    for (const auto& layer : model.layers) {
      g.layers.push_back({Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()),
                          Eigen::VectorXd::Zero(layer.bias.size())});
    }
    return g;
  }
};

struct DropoutOptions {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;  // required when rate > 0
};

struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;       // input to each layer
  std::vector<Eigen::MatrixXd> pre_activations;
  std::vector<Eigen::MatrixXd> masks;        // rectifier * dropout scaling for hidden layers
};

inline Eigen::MatrixXd mlp_forward(const Model& model, const Eigen::MatrixXd& features, ForwardCache* cache,
                                   const DropoutOptions& dropout = {}) {
  if (model.layers.empty()) throw Error("model has no layers");
  if (static_cast<std::size_t>(features.cols()) != model.input_dim()) {
    throw Error("feature width " + std::to_string(features.cols()) + " does not match model input " +
                std::to_string(model.input_dim()));
  }
  if (dropout.rate > 0.0 && dropout.rng == nullptr) throw Error("dropout requires a random generator");

  Eigen::MatrixXd activation = features;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    Eigen::MatrixXd z = activation * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    if (cache) cache->inputs.push_back(activation);
    if (l + 1 == model.layers.size()) {
      if (cache) cache->pre_activations.push_back(z);
      return z;
    }
    Eigen::MatrixXd mask = (z.array() > 0.0).cast<double>();
    if (dropout.rate > 0.0) {
      std::bernoulli_distribution keep(1.0 - dropout.rate);
      const double scale = 1.0 / (1.0 - dropout.rate);
      for (Eigen::Index i = 0; i < mask.size(); ++i) mask(i) *= keep(*dropout.rng) ? scale : 0.0;
    }
    activation = z.cwiseProduct(mask);
    if (cache) {
      cache->pre_activations.push_back(std::move(z));
      cache->masks.push_back(std::move(mask));
    }
  }
  return activation;
}

inline Eigen::MatrixXd mlp_forward(const Model& model, const Eigen::MatrixXd& features) {
  return mlp_forward(model, features, nullptr);
}

/**
 * A training batch: its rows, the deduplicated support (every node any row
 * touches) with gathered features, and for each row entry the position of
 * that node in the support.
 */
struct BatchContext {
  std::vector<NodeId> sources;
  std::vector<PropagationRow> rows;
  std::vector<NodeId> support;
  std::vector<std::vector<std::size_t>> local;
  Eigen::MatrixXd features;
  std::vector<std::uint32_t> labels;
};

template <typename FeatureMatrix>
BatchContext make_batch(std::span<const PropagationRow> rows, const FeatureMatrix& features,
                        std::span<const std::uint32_t> labels) {
  BatchContext ctx;
  std::unordered_map<NodeId, std::size_t> position;
  for (const auto& row : rows) {
    if (row.source >= labels.size()) throw Error("batch source outside label range");
    ctx.sources.push_back(row.source);
    ctx.labels.push_back(labels[row.source]);
    std::vector<std::size_t> local;
    local.reserve(row.size());
    for (NodeId idx : row.indices) {
      auto [it, inserted] = position.try_emplace(idx, ctx.support.size());
      if (inserted) ctx.support.push_back(idx);
      local.push_back(it->second);
    }
    ctx.local.push_back(std::move(local));
    ctx.rows.push_back(row);
  }
  ctx.features.resize(static_cast<Eigen::Index>(ctx.support.size()), features.cols());
  for (std::size_t s = 0; s < ctx.support.size(); ++s) {
    const auto node = static_cast<Eigen::Index>(ctx.support[s]);
    if (node >= features.rows()) throw Error("support node outside feature matrix");
    ctx.features.row(static_cast<Eigen::Index>(s)) = features.row(node).template cast<double>();
  }
  return ctx;
}

namespace detail {

inline Eigen::MatrixXd propagate(const BatchContext& ctx, const Eigen::MatrixXd& h, double gamma) {
  Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ctx.rows.size()), h.cols());
  for (std::size_t i = 0; i < ctx.rows.size(); ++i) {
    const std::vector<double> w = combine_gamma(ctx.rows[i], gamma);
    for (std::size_t j = 0; j < w.size(); ++j) {
      logits.row(static_cast<Eigen::Index>(i)) += w[j] * h.row(static_cast<Eigen::Index>(ctx.local[i][j]));
    }
  }
  return logits;
}

}  // namespace detail

/// Propagated (pre-softmax) logits, one row per batch source.
inline Eigen::MatrixXd batch_logits(const Model& model, const BatchContext& ctx) {
  return detail::propagate(ctx, mlp_forward(model, ctx.features), model.gamma());
}

// Mean softmax cross-entropy of logit rows against class ids (log-sum-exp form).
inline double cross_entropy(const Eigen::MatrixXd& logits, std::span<const std::uint32_t> labels,
                            Eigen::MatrixXd* probabilities = nullptr) {
  if (probabilities) probabilities->resize(logits.rows(), logits.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double shift = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd exps = (logits.row(i).array() - shift).exp();
    const double sum = exps.sum();
    total += std::log(sum) + shift - logits(i, labels[static_cast<std::size_t>(i)]);
    if (probabilities) probabilities->row(i) = exps / sum;
  }
  return total / static_cast<double>(logits.rows());
}

struct LossAndGrads {
  double loss = 0.0;
  Gradients grads;
};

/**
 * Loss and exact gradients of the batch objective. The gate gradient follows
 * d w_ij / d g = sigmoid'(g) * (core_weight_ij - ppr_weight_ij).
 */
inline LossAndGrads loss_and_grads(const Model& model, const BatchContext& ctx, const DropoutOptions& dropout = {}) {
  if (ctx.rows.empty()) throw Error("empty batch");
  const std::size_t classes = model.output_dim();
  for (auto label : ctx.labels) {
    if (label >= classes) throw Error("label " + std::to_string(label) + " out of range");
  }

  ForwardCache cache;
  const Eigen::MatrixXd h = mlp_forward(model, ctx.features, &cache, dropout);
  const double gamma = model.gamma();
  const Eigen::MatrixXd logits = detail::propagate(ctx, h, gamma);

  LossAndGrads out;
  Eigen::MatrixXd prob;
  out.loss = cross_entropy(logits, ctx.labels, &prob);
  if (!std::isfinite(out.loss)) throw Error("non-finite loss");

  const double batch = static_cast<double>(ctx.rows.size());
  Eigen::MatrixXd d_logits = prob;
  for (std::size_t i = 0; i < ctx.rows.size(); ++i) d_logits(static_cast<Eigen::Index>(i), ctx.labels[i]) -= 1.0;
  d_logits /= batch;

  const double dgamma_dg = gamma * (1.0 - gamma);
  Eigen::MatrixXd d_h = Eigen::MatrixXd::Zero(h.rows(), h.cols());
  double d_gamma = 0.0;
  for (std::size_t i = 0; i < ctx.rows.size(); ++i) {
    const auto& row = ctx.rows[i];
    const auto r = static_cast<Eigen::Index>(i);
    const std::vector<double> w = combine_gamma(row, gamma);
    for (std::size_t j = 0; j < row.size(); ++j) {
      const auto s = static_cast<Eigen::Index>(ctx.local[i][j]);
      d_h.row(s) += w[j] * d_logits.row(r);
      d_gamma += d_logits.row(r).dot(h.row(s)) * (row.core_weights[j] - row.ppr_weights[j]);
    }
  }

  out.grads = Gradients::zeros_like(model);
  out.grads.gate = dgamma_dg == 0.0 ? 0.0 : dgamma_dg * d_gamma;

  Eigen::MatrixXd delta = std::move(d_h);
  for (std::size_t l = model.layers.size(); l-- > 0;) {
    auto& grad = out.grads.layers[l];
    grad.weight = delta.transpose() * cache.inputs[l];
    grad.bias = delta.colwise().sum().transpose();
    if (l == 0) break;
    delta = (delta * model.layers[l].weight).cwiseProduct(cache.masks[l - 1]);
  }
  return out;
}

struct AdamConfig {
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  bool update_gate = true;
};

struct AdamState {
  Gradients m;
  Gradients v;
  std::uint64_t step = 0;

  static AdamState for_model(const Model& model) {
    return {Gradients::zeros_like(model), Gradients::zeros_like(model), 0};
  }
};

// Adam with bias correction. Weight decay is added to the gradient (L2) and
// never applied to the gate.
inline void adam_step(Model& model, const Gradients& grads, AdamState& state, const AdamConfig& cfg) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);

  auto update = [&](auto& param, const auto& grad, auto& m, auto& v, double decay) {
    const auto g = (grad + decay * param).eval();
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    param -= (cfg.lr * (m / correction1).array() / ((v / correction2).array().sqrt() + cfg.eps)).matrix();
  };

  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    update(model.layers[l].weight, grads.layers[l].weight, state.m.layers[l].weight, state.v.layers[l].weight,
           cfg.weight_decay);
    update(model.layers[l].bias, grads.layers[l].bias, state.m.layers[l].bias, state.v.layers[l].bias,
           cfg.weight_decay);
  }

  if (cfg.update_gate) {
    state.m.gate = cfg.beta1 * state.m.gate + (1.0 - cfg.beta1) * grads.gate;
    state.v.gate = cfg.beta2 * state.v.gate + (1.0 - cfg.beta2) * grads.gate * grads.gate;
    model.gate -= cfg.lr * (state.m.gate / correction1) / (std::sqrt(state.v.gate / correction2) + cfg.eps);
  }
}

inline constexpr std::string_view kCheckpointMagic = "CPPRM1";

// magic, u64 dimension count, u64 dims, per layer weight (row-major) then
// bias as f64, then the raw gate as f64.
inline void save_checkpoint(std::ostream& out, const Model& model) {
  io::write_magic(out, kCheckpointMagic);
  const auto dims = model.dims();
  io::write_u64(out, dims.size());
  for (std::size_t d : dims) io::write_u64(out, d);
  for (const auto& layer : model.layers) {
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) io::write_f64(out, layer.weight(r, c));
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) io::write_f64(out, layer.bias(r));
  }
  io::write_f64(out, model.gate);
  if (!out) throw Error("failed to write checkpoint");
}

inline Model load_checkpoint(std::istream& in) {
  if (!io::check_magic(in, kCheckpointMagic)) throw Error("not a model checkpoint (bad magic)");
  const std::uint64_t count = io::read_u64(in);
  if (count < 2 || count > 64) throw Error("implausible checkpoint layer count");
  std::vector<std::size_t> dims(count);
  for (auto& d : dims) {
    d = io::read_u64(in);
    if (d == 0 || d > (1u << 26)) throw Error("implausible checkpoint dimension");
  }
  Model model;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    DenseLayer layer{Eigen::MatrixXd(dims[l + 1], dims[l]), Eigen::VectorXd(dims[l + 1])};
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = io::read_f64(in);
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = io::read_f64(in);
    model.layers.push_back(std::move(layer));
  }
  model.gate = io::read_f64(in);
  return model;
}

}  // namespace coreppr
