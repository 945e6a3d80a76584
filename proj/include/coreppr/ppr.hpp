#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <ostream>
#include <vector>

#include "coreppr/error.hpp"
#include "coreppr/graph.hpp"

namespace coreppr {

struct PprParams {
  double alpha = 0.25;    // restart probability
  double epsilon = 1e-4;  // push precision

  void validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw Error("alpha must lie in (0, 1]");
    if (!(epsilon > 0.0)) throw Error("epsilon must be positive");
  }
};

struct ScoreEntry {
  NodeId node;
  double score;

  friend bool operator==(const ScoreEntry&, const ScoreEntry&) = default;
};

// Descending score, ties broken by ascending node id.
inline bool score_order(const ScoreEntry& a, const ScoreEntry& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.node < b.node;
}

struct SparseScoreRow {
  NodeId source = 0;
  std::vector<ScoreEntry> entries;

  void sort() { std::sort(entries.begin(), entries.end(), score_order); }

  bool contains(NodeId node) const {
    return std::any_of(entries.begin(), entries.end(), [&](const ScoreEntry& e) { return e.node == node; });
  }

  double total() const {
    double sum = 0.0;
    for (const auto& e : entries) sum += e.score;
    return sum;
  }

  friend bool operator==(const SparseScoreRow&, const SparseScoreRow&) = default;
};

/**
 * Reusable dense scratch space for forward push. Arrays are sized to the
 * graph once and reset only at the touched positions, so a push costs time
 * proportional to the explored neighbourhood rather than to n.
 */
class PushWorkspace {
 public:
  void ensure(std::size_t n) {
    if (estimate_.size() < n) {
      estimate_.resize(n, 0.0);
      residual_.resize(n, 0.0);
      queued_.resize(n, 0);
      touched_flag_.resize(n, 0);
    }
  }

 private:
  friend SparseScoreRow push_appr(const Graph&, NodeId, const PprParams&, PushWorkspace&);

  void touch(NodeId u) {
    if (!touched_flag_[u]) {
      touched_flag_[u] = 1;
      touched_.push_back(u);
    }
  }

  void reset() {
    for (NodeId u : touched_) {
      estimate_[u] = 0.0;
      residual_[u] = 0.0;
      queued_[u] = 0;
      touched_flag_[u] = 0;
    }
    touched_.clear();
    queue_.clear();
  }

  std::vector<double> estimate_;
  std::vector<double> residual_;
  std::vector<char> queued_;
  std::vector<char> touched_flag_;
  std::vector<NodeId> touched_;
  std::deque<NodeId> queue_;
};

/**
 * Forward push approximation of row `source` of
 * alpha * (I - (1 - alpha) D^-1 A)^-1 (non-lazy walk).
 *
 * The source is always pushed first; afterwards a node is queued (FIFO) when
 * its residual reaches epsilon * degree. On return every residual satisfies
 * r(u) < epsilon * deg(u), which bounds the error of each entry by
 * epsilon * deg(u). Entries are the nodes that were pushed at least once.
 */
inline SparseScoreRow push_appr(const Graph& g, NodeId source, const PprParams& params, PushWorkspace& ws) {
  params.validate();
  if (source >= g.num_nodes()) throw Error("source " + std::to_string(source) + " is not a node");
  if (g.degree(source) == 0) throw Error("dangling source " + std::to_string(source));

  ws.ensure(g.num_nodes());
  const double alpha = params.alpha;
  const double epsilon = params.epsilon;

  ws.residual_[source] = 1.0;
  ws.touch(source);
  ws.queue_.push_back(source);
  ws.queued_[source] = 1;

  while (!ws.queue_.empty()) {
    const NodeId u = ws.queue_.front();
    ws.queue_.pop_front();
    ws.queued_[u] = 0;

    const std::size_t deg = g.degree(u);
    if (deg == 0) {
      ws.reset();
      throw Error("dangling node on walk: " + std::to_string(u));
    }
    const double mass = ws.residual_[u];
    ws.residual_[u] = 0.0;
    ws.estimate_[u] += alpha * mass;
    const double share = (1.0 - alpha) * mass / static_cast<double>(deg);
    for (NodeId v : g.neighbors(u)) {
      ws.touch(v);
      ws.residual_[v] += share;
      if (!ws.queued_[v] && ws.residual_[v] >= epsilon * static_cast<double>(g.degree(v))) {
        ws.queued_[v] = 1;
        ws.queue_.push_back(v);
      }
    }
  }

  SparseScoreRow row;
  row.source = source;
  for (NodeId u : ws.touched_) {
    if (ws.estimate_[u] > 0.0) row.entries.push_back({u, ws.estimate_[u]});
  }
  ws.reset();
  row.sort();
  return row;
}

inline SparseScoreRow push_appr(const Graph& g, NodeId source, const PprParams& params) {
  thread_local PushWorkspace workspace;
  return push_appr(g, source, params, workspace);
}

/**
 * Dense personalized PageRank by power iteration,
 * p <- alpha * e_source + (1 - alpha) * p^T D^-1 A, stopped once the largest
 * entry change drops below tol. Intended as a reference, O(iters * m).
 */
inline std::vector<double> exact_ppr(const Graph& g, NodeId source, double alpha, double tol,
                                     std::size_t max_iterations = 10000) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error("alpha must lie in (0, 1]");
  if (!(tol > 0.0)) throw Error("tol must be positive");
  const std::size_t n = g.num_nodes();
  if (source >= n) throw Error("source " + std::to_string(source) + " is not a node");

  std::vector<double> p(n, 0.0);
  std::vector<double> next(n, 0.0);
  p[source] = 1.0;
  for (std::size_t iter = 0; iter < max_iterations; ++iter) {
    std::fill(next.begin(), next.end(), 0.0);
    next[source] = alpha;
    for (NodeId u = 0; u < n; ++u) {
      if (p[u] == 0.0) continue;
      const std::size_t deg = g.degree(u);
      if (deg == 0) throw Error("dangling node on walk: " + std::to_string(u));
      const double share = (1.0 - alpha) * p[u] / static_cast<double>(deg);
      for (NodeId v : g.neighbors(u)) next[v] += share;
    }
    double change = 0.0;
    for (std::size_t i = 0; i < n; ++i) change = std::max(change, std::abs(next[i] - p[i]));
    p.swap(next);
    if (change < tol) return p;
  }
  throw Error("exact_ppr did not converge within " + std::to_string(max_iterations) + " iterations");
}

/// Keeps the l highest-scoring entries.
inline SparseScoreRow top_l(const SparseScoreRow& row, std::size_t l) {
  if (l == 0) throw Error("top_l requires l >= 1");
  SparseScoreRow out = row;
  out.sort();
  if (out.entries.size() > l) out.entries.resize(l);
  return out;
}

/**
 * Elbow rank of the descending score curve of the source's neighbours (the
 * source's own entry is skipped). Points are (rank, score) with ranks 1..|S|.
 *
 *  |S| = 0  -> 0 (only the source survives), error if the source is absent too
 *  |S| = 1  -> 1
 *  |S| = 2  -> rank of the larger score
 *  |S| > 2  -> rank of the point farthest from the line through the first and
 *             last points; 1 if that maximum is shared
 */
inline std::size_t elbow_select(const SparseScoreRow& row) {
  std::vector<double> curve;
  curve.reserve(row.entries.size());
  bool has_source = false;
  {
    SparseScoreRow sorted = row;
    sorted.sort();
    for (const auto& e : sorted.entries) {
      if (e.node == row.source) {
        has_source = true;
      } else {
        curve.push_back(e.score);
      }
    }
  }

  const std::size_t size = curve.size();
  if (size == 0) {
    if (!has_source) throw Error("elbow_select on an empty row");
    return 0;
  }
  if (size == 1) return 1;
  if (size == 2) return curve[1] > curve[0] ? 2 : 1;

  const double x0 = 1.0;
  const double y0 = curve.front();
  const double x1 = static_cast<double>(size);
  const double y1 = curve.back();
  const double dx = x1 - x0;
  const double dy = y1 - y0;
  const double norm = std::hypot(dx, dy);

  std::vector<double> distance(size);
  double best = 0.0;
  for (std::size_t k = 0; k < size; ++k) {
    const double x = static_cast<double>(k + 1);
    distance[k] = std::abs(dy * (x - x0) - dx * (curve[k] - y0)) / norm;
    best = std::max(best, distance[k]);
  }

  // Ties within 1e-12 of the curve scale; a collinear curve is an all-way tie.
  const double tolerance = 1e-12 * std::max(best, std::abs(dy));
  std::size_t best_rank = 0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < size; ++k) {
    if (best - distance[k] <= tolerance) {
      if (count == 0) best_rank = k + 1;
      ++count;
    }
  }
  return count == 1 ? best_rank : 1;
}

/// Source entry plus the top elbow_select(row) non-source entries.
inline SparseScoreRow elbow_truncate(const SparseScoreRow& row) {
  const std::size_t keep = elbow_select(row);
  SparseScoreRow sorted = row;
  sorted.sort();
  SparseScoreRow out;
  out.source = row.source;
  std::size_t kept = 0;
  for (const auto& e : sorted.entries) {
    if (e.node == row.source) {
      out.entries.push_back(e);
    } else if (kept < keep) {
      out.entries.push_back(e);
      ++kept;
    }
  }
  return out;
}

/// "source<TAB>node<TAB>score" lines, scores at 17 significant digits.
inline void write_row_dump(std::ostream& out, const SparseScoreRow& row) {
  char buffer[64];
  for (const auto& e : row.entries) {
    std::snprintf(buffer, sizeof(buffer), "%.17g", e.score);
    out << row.source << '\t' << e.node << '\t' << buffer << '\n';
  }
}

}  // namespace coreppr
