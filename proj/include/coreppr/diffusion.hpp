#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "coreppr/binary_io.hpp"
#include "coreppr/error.hpp"
#include "coreppr/graph.hpp"
#include "coreppr/parallel.hpp"
#include "coreppr/ppr.hpp"

namespace coreppr {

struct FixedL {
  std::size_t l = 32;
};
struct DynamicL {};
using NeighborCount = std::variant<FixedL, DynamicL>;

enum class InferenceMode { OnlyTraining, TrainingAndTesting };

inline std::string to_string(InferenceMode mode) {
  return mode == InferenceMode::OnlyTraining ? "ot" : "tt";
}

inline InferenceMode parse_inference_mode(const std::string& text) {
  if (text == "ot" || text == "OT") return InferenceMode::OnlyTraining;
  if (text == "tt" || text == "TT" || text == "T&T") return InferenceMode::TrainingAndTesting;
  throw Error("unknown inference mode '" + text + "' (expected ot or tt)");
}

struct DiffusionConfig {
  PprParams ppr;
  NeighborCount neighbors = FixedL{};
  InferenceMode inference = InferenceMode::OnlyTraining;
  std::size_t power_iters = 50;

  bool dynamic() const { return std::holds_alternative<DynamicL>(neighbors); }

  void validate() const {
    ppr.validate();
    if (const auto* fixed = std::get_if<FixedL>(&neighbors); fixed && fixed->l == 0) {
      throw Error("fixed neighbor count must be >= 1");
    }
    if (power_iters == 0) throw Error("power_iters must be >= 1");
  }
};

/**
 * One row of the propagation operator. `ppr_weights` are the truncated push
 * scores and `core_weights` the CoreRank values of the same nodes normalized
 * to sum to one, so both rows share one sparsity pattern.
 */
struct PropagationRow {
  NodeId source = 0;
  std::vector<NodeId> indices;
  std::vector<double> ppr_weights;
  std::vector<double> core_weights;

  std::size_t size() const noexcept { return indices.size(); }

  friend bool operator==(const PropagationRow&, const PropagationRow&) = default;
};

namespace detail {
inline std::atomic<std::uint64_t> row_checks{0};
}

/// Number of rows that went through check_row since process start.
inline std::uint64_t row_checks_performed() { return detail::row_checks.load(); }

// Structural invariants of a built row; always on, not just in debug builds.
inline void check_row(const PropagationRow& row, bool require_source) {
  detail::row_checks.fetch_add(1, std::memory_order_relaxed);
  const auto src = std::to_string(row.source);
  if (row.indices.empty()) throw Error("propagation row " + src + " is empty");
  if (row.ppr_weights.size() != row.indices.size() || row.core_weights.size() != row.indices.size()) {
    throw Error("propagation row " + src + " has mismatched weight lengths");
  }
  double core_sum = 0.0;
  bool has_source = false;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (!(row.core_weights[j] >= 0.0) || !(row.ppr_weights[j] > 0.0)) {
      throw Error("propagation row " + src + " has an invalid weight");
    }
    core_sum += row.core_weights[j];
    has_source = has_source || row.indices[j] == row.source;
  }
  if (std::abs(core_sum - 1.0) > 1e-9) {
    throw Error("core weights of row " + src + " sum to " + std::to_string(core_sum));
  }
  if (require_source && !has_source) throw Error("propagation row " + src + " lost its source");
}

// Attaches row-normalized CoreRank weights to a truncated score row.
inline PropagationRow make_row(const SparseScoreRow& scores, std::span<const std::uint64_t> corerank) {
  PropagationRow row;
  row.source = scores.source;
  const std::size_t size = scores.entries.size();
  row.indices.reserve(size);
  row.ppr_weights.reserve(size);
  row.core_weights.reserve(size);
  std::uint64_t total = 0;
  for (const auto& e : scores.entries) {
    row.indices.push_back(e.node);
    row.ppr_weights.push_back(e.score);
    total += corerank[e.node];
  }
  for (const auto& e : scores.entries) {
    row.core_weights.push_back(total == 0 ? 1.0 / static_cast<double>(size)
                                          : static_cast<double>(corerank[e.node]) / static_cast<double>(total));
  }
  return row;
}

inline SparseScoreRow truncate(const SparseScoreRow& scores, const NeighborCount& neighbors) {
  if (const auto* fixed = std::get_if<FixedL>(&neighbors)) return top_l(scores, fixed->l);
  return elbow_truncate(scores);
}

inline PropagationRow build_row(const Graph& g, const CoreScores& cores, NodeId source, const DiffusionConfig& cfg) {
  const SparseScoreRow scores = push_appr(g, source, cfg.ppr);
  PropagationRow row = make_row(truncate(scores, cfg.neighbors), cores.corerank);
  check_row(row, cfg.dynamic());
  return row;
}

/// (1 - gamma) * ppr_weights + gamma * core_weights.
inline std::vector<double> combine_gamma(const PropagationRow& row, double gamma) {
  std::vector<double> w(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) {
    w[j] = (1.0 - gamma) * row.ppr_weights[j] + gamma * row.core_weights[j];
  }
  return w;
}

// Number of neighbours a row contributes to the mean-l statistic: non-source
// entries for dynamic rows, all entries for fixed rows.
inline std::size_t counted_neighbors(const PropagationRow& row, bool dynamic) {
  if (!dynamic) return row.size();
  std::size_t count = 0;
  for (NodeId idx : row.indices) count += idx != row.source;
  return count;
}

/**
 * Power iteration on class logits, Q <- (1 - alpha) D^-1 A Q + alpha H,
 * starting from Q = H. Converges to Pi_ppr H without materializing any
 * PageRank vectors.
 */
inline Eigen::MatrixXd ot_inference(const Graph& g, const Eigen::MatrixXd& h, double alpha, std::size_t iters,
                                    std::size_t threads = 1) {
  const std::size_t n = g.num_nodes();
  if (static_cast<std::size_t>(h.rows()) != n) throw Error("H must have one row per node");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error("alpha must lie in (0, 1]");
  if (iters == 0) throw Error("power iteration needs at least one step");
  for (NodeId u = 0; u < n; ++u) {
    if (g.degree(u) == 0) throw Error("dangling node " + std::to_string(u) + " in power iteration");
  }

  Eigen::MatrixXd q = h;
  Eigen::MatrixXd next(h.rows(), h.cols());
  for (std::size_t it = 0; it < iters; ++it) {
    parallel_for(n, threads, [&](std::size_t i) {
      const auto u = static_cast<NodeId>(i);
      Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(h.cols());
      for (NodeId v : g.neighbors(u)) acc += q.row(v);
      next.row(u) = (1.0 - alpha) / static_cast<double>(g.degree(u)) * acc + alpha * h.row(u);
    });
    q.swap(next);
  }
  return q;
}

/**
 * Explicit propagation for selected targets: builds each target's row and
 * sums the combined weights against H. `h_row(node)` returns the length
 * `num_classes` representation of a node.
 */
template <typename HRow>
Eigen::MatrixXd tt_inference(const Graph& g, const CoreScores& cores, HRow&& h_row, std::size_t num_classes,
                             double gamma, const DiffusionConfig& cfg, std::span<const NodeId> targets,
                             std::size_t threads = 1) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw Error("gamma must lie in [0, 1)");
  Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(targets.size()),
                                                 static_cast<Eigen::Index>(num_classes));
  parallel_for(targets.size(), threads, [&](std::size_t t) {
    const PropagationRow row = build_row(g, cores, targets[t], cfg);
    const std::vector<double> w = combine_gamma(row, gamma);
    for (std::size_t j = 0; j < row.size(); ++j) logits.row(t) += w[j] * h_row(row.indices[j]);
  });
  return logits;
}

inline constexpr std::string_view kRowCacheMagic = "CPRROW1";

inline void write_row_cache(std::ostream& out, std::span<const PropagationRow> rows) {
  io::write_magic(out, kRowCacheMagic);
  for (const auto& row : rows) {
    io::write_u64(out, row.source);
    io::write_u64(out, row.size());
    for (std::size_t j = 0; j < row.size(); ++j) {
      io::write_u64(out, row.indices[j]);
      io::write_f64(out, row.ppr_weights[j]);
      io::write_f64(out, row.core_weights[j]);
    }
  }
  if (!out) throw Error("failed to write row cache");
}

inline std::vector<PropagationRow> read_row_cache(std::istream& in) {
  if (!io::check_magic(in, kRowCacheMagic)) throw Error("not a row cache (bad magic)");
  std::vector<PropagationRow> rows;
  std::uint64_t source = 0;
  while (io::try_read_u64(in, source)) {
    PropagationRow row;
    row.source = static_cast<NodeId>(source);
    const std::uint64_t length = io::read_u64(in);
    row.indices.reserve(length);
    row.ppr_weights.reserve(length);
    row.core_weights.reserve(length);
    for (std::uint64_t j = 0; j < length; ++j) {
      row.indices.push_back(static_cast<NodeId>(io::read_u64(in)));
      row.ppr_weights.push_back(io::read_f64(in));
      row.core_weights.push_back(io::read_f64(in));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace coreppr
