#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <istream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "coreppr/error.hpp"

namespace coreppr {

using NodeId = std::uint32_t;
using Edge = std::pair<NodeId, NodeId>;

/**
 * Immutable undirected graph in compressed sparse row form.
 *
 * Neighbor lists are sorted and duplicate free. Every undirected edge {u, v}
 * with u != v is stored twice (once per endpoint); a self-loop is stored once
 * and counts one towards the node's degree.
 */
class Graph {
 public:
  Graph() : offsets_(1, 0) {}

  // Builds the symmetrized graph on nodes 0..num_nodes-1. Edge direction and
  // duplicates are ignored.
  static Graph from_edges(std::size_t num_nodes, std::span<const Edge> edges) {
    std::vector<Edge> directed;
    directed.reserve(edges.size() * 2);
    for (const auto& [u, v] : edges) {
      if (u >= num_nodes || v >= num_nodes) {
        throw Error("edge (" + std::to_string(u) + ", " + std::to_string(v) +
                    ") references a node outside 0.." + std::to_string(num_nodes) + "-1");
      }
      directed.emplace_back(u, v);
      if (u != v) directed.emplace_back(v, u);
    }
    std::sort(directed.begin(), directed.end());
    directed.erase(std::unique(directed.begin(), directed.end()), directed.end());

    Graph g;
    g.offsets_.assign(num_nodes + 1, 0);
    g.neighbors_.reserve(directed.size());
    for (const auto& [u, v] : directed) {
      ++g.offsets_[u + 1];
      g.neighbors_.push_back(v);
      if (u == v) {
        g.has_self_loops_ = true;
        ++g.num_self_loops_;
      }
    }
    for (std::size_t i = 0; i < num_nodes; ++i) g.offsets_[i + 1] += g.offsets_[i];
    g.num_edges_ = (directed.size() - g.num_self_loops_) / 2 + g.num_self_loops_;
    return g;
  }

  std::size_t num_nodes() const noexcept { return offsets_.size() - 1; }

  // Distinct undirected edges, self-loops included.
  std::size_t num_edges() const noexcept { return num_edges_; }

  std::size_t degree(NodeId u) const noexcept { return offsets_[u + 1] - offsets_[u]; }

  std::span<const NodeId> neighbors(NodeId u) const noexcept {
    return {neighbors_.data() + offsets_[u], degree(u)};
  }

  std::size_t max_degree() const noexcept {
    std::size_t best = 0;
    for (NodeId u = 0; u < num_nodes(); ++u) best = std::max(best, degree(u));
    return best;
  }

  // Total number of stored adjacency entries; 2m when there are no self-loops.
  std::size_t volume() const noexcept { return neighbors_.size(); }

  bool has_self_loops() const noexcept { return has_self_loops_; }

  std::span<const std::size_t> offsets() const noexcept { return offsets_; }
  std::span<const NodeId> adjacency() const noexcept { return neighbors_; }

 private:
  std::vector<std::size_t> offsets_;
  std::vector<NodeId> neighbors_;
  std::size_t num_edges_ = 0;
  std::size_t num_self_loops_ = 0;
  bool has_self_loops_ = false;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\v' || c == '\f'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

// Pops the next whitespace-delimited token from s.
inline std::string_view next_token(std::string_view& s) {
  s = trim(s);
  std::size_t end = 0;
  while (end < s.size() && s[end] != ' ' && s[end] != '\t') ++end;
  auto token = s.substr(0, end);
  s.remove_prefix(end);
  return token;
}

template <typename Int>
bool parse_int(std::string_view token, Int& value) {
  if (token.empty()) return false;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  return ec == std::errc{} && ptr == token.data() + token.size();
}

}  // namespace detail

/// Reads "u v" lines (zero-based ids). '#' lines and blank lines are skipped.
inline Graph load_edge_list(std::istream& in) {
  std::vector<Edge> edges;
  std::size_t max_id = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view rest = detail::trim(line);
    if (rest.empty() || rest.front() == '#') continue;
    NodeId u = 0;
    NodeId v = 0;
    if (!detail::parse_int(detail::next_token(rest), u) ||
        !detail::parse_int(detail::next_token(rest), v) || !detail::trim(rest).empty()) {
      throw ParseError("expected two nonnegative node ids, got '" + line + "'", line_no);
    }
    max_id = std::max<std::size_t>({max_id, u, v});
    edges.emplace_back(u, v);
  }
  if (edges.empty()) throw Error("edge list is empty");
  return Graph::from_edges(max_id + 1, edges);
}

struct CoreScores {
  std::vector<std::uint32_t> core_number;
  std::vector<std::uint64_t> corerank;
};

/**
 * Core number of every node via bucket-sorted peeling (Batagelj & Zaversnik),
 * O(n + m). Nodes are processed in nondecreasing order of their current
 * degree; the degree at removal time is the core number.
 */
inline std::vector<std::uint32_t> core_numbers(const Graph& g) {
  const std::size_t n = g.num_nodes();
  std::vector<std::uint32_t> deg(n);
  std::size_t max_deg = 0;
  for (NodeId u = 0; u < n; ++u) {
    deg[u] = static_cast<std::uint32_t>(g.degree(u));
    max_deg = std::max<std::size_t>(max_deg, deg[u]);
  }

  std::vector<std::size_t> bin(max_deg + 1, 0);
  for (NodeId u = 0; u < n; ++u) ++bin[deg[u]];
  std::size_t start = 0;
  for (auto& b : bin) {
    const std::size_t count = b;
    b = start;
    start += count;
  }

  std::vector<NodeId> order(n);
  std::vector<std::size_t> pos(n);
  for (NodeId u = 0; u < n; ++u) {
    pos[u] = bin[deg[u]];
    order[pos[u]] = u;
    ++bin[deg[u]];
  }
  for (std::size_t d = max_deg; d > 0; --d) bin[d] = bin[d - 1];
  if (!bin.empty()) bin[0] = 0;

  for (std::size_t i = 0; i < n; ++i) {
    const NodeId v = order[i];
    for (NodeId u : g.neighbors(v)) {
      if (deg[u] > deg[v]) {
        // Swap u to the front of its bucket, then shrink the bucket by one.
        const std::uint32_t du = deg[u];
        const std::size_t pu = pos[u];
        const std::size_t pw = bin[du];
        const NodeId w = order[pw];
        if (u != w) {
          std::swap(order[pu], order[pw]);
          pos[u] = pw;
          pos[w] = pu;
        }
        ++bin[du];
        --deg[u];
      }
    }
  }
  return deg;
}

/// CoreRank: sum of the core numbers over each node's neighbor list.
inline std::vector<std::uint64_t> corerank(const Graph& g, std::span<const std::uint32_t> cores) {
  if (cores.size() != g.num_nodes()) {
    throw Error("core number array has length " + std::to_string(cores.size()) + ", graph has " +
                std::to_string(g.num_nodes()) + " nodes");
  }
  std::vector<std::uint64_t> result(g.num_nodes(), 0);
  for (NodeId i = 0; i < g.num_nodes(); ++i) {
    std::uint64_t sum = 0;
    for (NodeId u : g.neighbors(i)) sum += cores[u];
    result[i] = sum;
  }
  return result;
}

inline CoreScores core_scores(const Graph& g) {
  CoreScores scores;
  scores.core_number = core_numbers(g);
  scores.corerank = corerank(g, scores.core_number);
  return scores;
}

}  // namespace coreppr
