#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "coreppr/binary_io.hpp"
#include "coreppr/error.hpp"
#include "coreppr/graph.hpp"

namespace coreppr {

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Splits {
  std::vector<NodeId> train;
  std::vector<NodeId> val;
  std::vector<NodeId> test;
};

struct Dataset {
  FeatureMatrix features;  // n x f
  std::vector<std::uint32_t> labels;
  std::size_t num_classes = 0;
  Splits splits;

  std::size_t num_nodes() const { return labels.size(); }
  std::size_t num_features() const { return static_cast<std::size_t>(features.cols()); }

  void validate() const {
    const std::size_t n = labels.size();
    if (static_cast<std::size_t>(features.rows()) != n) {
      throw Error("feature matrix has " + std::to_string(features.rows()) + " rows but there are " +
                  std::to_string(n) + " labels");
    }
    for (auto y : labels) {
      if (y >= num_classes) throw Error("label " + std::to_string(y) + " >= class count");
    }
    std::vector<char> seen(n, 0);
    for (const auto* split : {&splits.train, &splits.val, &splits.test}) {
      for (NodeId u : *split) {
        if (u >= n) throw Error("split index " + std::to_string(u) + " out of range");
        if (seen[u]) throw Error("node " + std::to_string(u) + " appears in more than one split");
        seen[u] = 1;
      }
    }
  }
};

inline constexpr std::string_view kFeatureMagic = "CPPRF1";

inline void write_features_binary(std::ostream& out, const FeatureMatrix& x) {
  io::write_magic(out, kFeatureMagic);
  io::write_u64(out, static_cast<std::uint64_t>(x.rows()));
  io::write_u64(out, static_cast<std::uint64_t>(x.cols()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) io::write_f32(out, x(i, j));
  }
  if (!out) throw Error("failed to write features");
}

inline FeatureMatrix read_features_binary(std::istream& in) {
  if (!io::check_magic(in, kFeatureMagic)) throw Error("not a binary feature file (bad magic)");
  const std::uint64_t n = io::read_u64(in);
  const std::uint64_t f = io::read_u64(in);
  if (n == 0 || f == 0 || n * f > (std::uint64_t{1} << 34)) throw Error("implausible feature shape header");
  FeatureMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(f));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = io::read_f32(in);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw Error("feature file longer than its shape header");
  return x;
}

inline void write_features_csv(std::ostream& out, const FeatureMatrix& x) {
  out.precision(9);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (j) out << ',';
      out << x(i, j);
    }
    out << '\n';
  }
}

// Comma-separated floats, one node per line, no header. Blank lines are skipped.
inline FeatureMatrix read_features_csv(std::istream& in) {
  std::vector<float> values;
  std::size_t width = 0;
  std::size_t rows = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view rest = detail::trim(line);
    if (rest.empty()) continue;
    std::size_t count = 0;
    while (true) {
      const auto comma = rest.find(',');
      const std::string_view cell = detail::trim(rest.substr(0, comma));
      float value = 0.0f;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
      if (cell.empty() || ec != std::errc{} || ptr != cell.data() + cell.size()) {
        throw ParseError("bad feature value '" + std::string(cell) + "'", line_no);
      }
      values.push_back(value);
      ++count;
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (rows == 0) {
      width = count;
    } else if (count != width) {
      throw ParseError("row has " + std::to_string(count) + " values, expected " + std::to_string(width), line_no);
    }
    ++rows;
  }
  if (rows == 0) throw Error("feature file is empty");
  FeatureMatrix x(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(width));
  std::copy(values.begin(), values.end(), x.data());
  return x;
}

/// Binary when the file starts with the feature magic, CSV otherwise.
inline FeatureMatrix load_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open feature file " + path.string());
  if (io::check_magic(in, kFeatureMagic)) {
    in.seekg(0);
    return read_features_binary(in);
  }
  in.clear();
  in.seekg(0);
  return read_features_csv(in);
}

// "node<TAB>class" lines; every node 0..n-1 must be labelled exactly once.
inline std::vector<std::uint32_t> read_labels(std::istream& in) {
  std::vector<std::pair<NodeId, std::uint32_t>> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view rest = detail::trim(line);
    if (rest.empty() || rest.front() == '#') continue;
    NodeId node = 0;
    std::uint32_t label = 0;
    if (!detail::parse_int(detail::next_token(rest), node) || !detail::parse_int(detail::next_token(rest), label) ||
        !detail::trim(rest).empty()) {
      throw ParseError("expected 'node<TAB>class', got '" + line + "'", line_no);
    }
    pairs.emplace_back(node, label);
  }
  if (pairs.empty()) throw Error("label file is empty");
  std::size_t n = 0;
  for (const auto& [node, _] : pairs) n = std::max<std::size_t>(n, node + 1);
  std::vector<std::uint32_t> labels(n, 0);
  std::vector<char> seen(n, 0);
  for (const auto& [node, label] : pairs) {
    if (seen[node]) throw Error("node " + std::to_string(node) + " labelled twice");
    seen[node] = 1;
    labels[node] = label;
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) throw Error("labels do not cover every node");
  return labels;
}

inline void write_labels(std::ostream& out, std::span<const std::uint32_t> labels) {
  for (std::size_t i = 0; i < labels.size(); ++i) out << i << '\t' << labels[i] << '\n';
}

namespace detail {

inline std::vector<NodeId> read_id_list(std::istream& in) {
  std::vector<NodeId> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    NodeId id = 0;
    if (!parse_int(text, id)) throw ParseError("expected a node id, got '" + line + "'", line_no);
    ids.push_back(id);
  }
  return ids;
}

inline std::ifstream open_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return in;
}

}  // namespace detail

// A file with [train]/[val]/[test] sections, one node id per line.
inline Splits read_splits(std::istream& in) {
  Splits splits;
  std::vector<NodeId>* current = nullptr;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = detail::trim(line);
    if (text.empty() || text.front() == '#') continue;
    if (text == "[train]") {
      current = &splits.train;
    } else if (text == "[val]") {
      current = &splits.val;
    } else if (text == "[test]") {
      current = &splits.test;
    } else {
      NodeId id = 0;
      if (!current) throw ParseError("node id before any [train]/[val]/[test] header", line_no);
      if (!detail::parse_int(text, id)) throw ParseError("expected a node id, got '" + line + "'", line_no);
      current->push_back(id);
    }
  }
  return splits;
}

/// Either a directory holding train.txt, val.txt and test.txt or a sectioned file.
inline Splits load_splits(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) {
    Splits splits;
    auto train = detail::open_text(path / "train.txt");
    auto val = detail::open_text(path / "val.txt");
    auto test = detail::open_text(path / "test.txt");
    splits.train = detail::read_id_list(train);
    splits.val = detail::read_id_list(val);
    splits.test = detail::read_id_list(test);
    return splits;
  }
  auto in = detail::open_text(path);
  return read_splits(in);
}

inline void write_splits(std::ostream& out, const Splits& splits) {
  const std::pair<const char*, const std::vector<NodeId>*> sections[] = {
      {"[train]", &splits.train}, {"[val]", &splits.val}, {"[test]", &splits.test}};
  for (const auto& [name, ids] : sections) {
    out << name << '\n';
    for (NodeId id : *ids) out << id << '\n';
  }
}

inline Dataset load_dataset(const std::filesystem::path& features, const std::filesystem::path& labels,
                            const std::filesystem::path& splits) {
  Dataset ds;
  ds.features = load_features(features);
  auto label_in = detail::open_text(labels);
  ds.labels = read_labels(label_in);
  ds.num_classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1u;
  ds.splits = load_splits(splits);
  ds.validate();
  return ds;
}

/// Per class: shuffle, then 10% train, 10% val (rounded), the rest test.
inline Splits stratified_split(std::span<const std::uint32_t> labels, std::size_t num_classes, std::mt19937_64& rng,
                               double train_fraction = 0.1, double val_fraction = 0.1) {
  std::vector<std::vector<NodeId>> members(num_classes);
  for (NodeId u = 0; u < labels.size(); ++u) members[labels[u]].push_back(u);
  Splits splits;
  for (auto& group : members) {
    std::shuffle(group.begin(), group.end(), rng);
    const auto size = static_cast<double>(group.size());
    const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * size));
    const auto n_val = std::min(group.size() - n_train, static_cast<std::size_t>(std::lround(val_fraction * size)));
    splits.train.insert(splits.train.end(), group.begin(), group.begin() + n_train);
    splits.val.insert(splits.val.end(), group.begin() + n_train, group.begin() + n_train + n_val);
    splits.test.insert(splits.test.end(), group.begin() + n_train + n_val, group.end());
  }
  std::sort(splits.train.begin(), splits.train.end());
  std::sort(splits.val.begin(), splits.val.end());
  std::sort(splits.test.begin(), splits.test.end());
  return splits;
}

struct SbmParams {
  std::size_t n = 1000;
  std::size_t blocks = 5;
  double p_in = 0.05;
  double p_out = 0.002;
  double feature_noise = 0.5;
  std::uint64_t seed = 0;
};

// Block of node i under contiguous, near-equal block assignment.
inline std::uint32_t sbm_block(std::size_t i, std::size_t n, std::size_t blocks) {
  return static_cast<std::uint32_t>(i * blocks / n);
}

/**
 * Stochastic block model with contiguous blocks. Edges are drawn by
 * geometric skipping over each block pair, so generation is O(n + m).
 * Features are the one-hot block indicator plus N(0, noise^2) per entry;
 * labels are block ids; splits are stratified 10/10/80. Any isolated node is
 * wired to a random node of its own block.
 */
inline std::pair<Graph, Dataset> generate_sbm(const SbmParams& p) {
  if (p.blocks < 2) throw Error("an SBM needs at least two blocks");
  if (!(p.p_out >= 0.0 && p.p_out < p.p_in && p.p_in <= 1.0)) throw Error("SBM requires 0 <= p_out < p_in <= 1");
  if (p.n < p.blocks) throw Error("n < blocks would leave a class empty");
  if (!(p.feature_noise >= 0.0)) throw Error("feature noise must be nonnegative");

  std::mt19937_64 rng(p.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<std::size_t> begin(p.blocks + 1, p.n);
  for (std::size_t i = p.n; i-- > 0;) begin[sbm_block(i, p.n, p.blocks)] = i;

  std::vector<Edge> edges;
  auto sample_rectangle = [&](std::size_t row0, std::size_t rows, std::size_t col0, std::size_t cols, double prob,
                              bool upper_only) {
    if (prob <= 0.0) return;
    const std::size_t total = rows * cols;
    const double log_q = prob < 1.0 ? std::log1p(-prob) : 0.0;
    std::size_t idx = 0;
    while (true) {
      if (prob < 1.0) {
        const double skip = std::floor(std::log(1.0 - unit(rng)) / log_q);
        if (skip >= static_cast<double>(total - idx)) break;
        idx += static_cast<std::size_t>(skip);
      }
      if (idx >= total) break;
      const auto u = static_cast<NodeId>(row0 + idx / cols);
      const auto v = static_cast<NodeId>(col0 + idx % cols);
      if (!upper_only || u < v) edges.emplace_back(u, v);
      ++idx;
    }
  };
  for (std::size_t a = 0; a < p.blocks; ++a) {
    const std::size_t size_a = begin[a + 1] - begin[a];
    sample_rectangle(begin[a], size_a, begin[a], size_a, p.p_in, true);
    for (std::size_t b = a + 1; b < p.blocks; ++b) {
      sample_rectangle(begin[a], size_a, begin[b], begin[b + 1] - begin[b], p.p_out, false);
    }
  }

  std::vector<std::size_t> degree(p.n, 0);
  for (const auto& [u, v] : edges) {
    ++degree[u];
    ++degree[v];
  }
  for (std::size_t u = 0; u < p.n; ++u) {
    if (degree[u] != 0) continue;
    const std::uint32_t blk = sbm_block(u, p.n, p.blocks);
    std::size_t lo = begin[blk];
    std::size_t hi = begin[blk + 1];
    if (hi - lo < 2) {
      lo = 0;
      hi = p.n;
    }
    std::uniform_int_distribution<std::size_t> pick(lo, hi - 2);
    std::size_t v = pick(rng);
    if (v >= u) ++v;
    edges.emplace_back(static_cast<NodeId>(u), static_cast<NodeId>(v));
    ++degree[u];
    ++degree[v];
  }

  Dataset ds;
  ds.num_classes = p.blocks;
  ds.labels.resize(p.n);
  ds.features = FeatureMatrix::Zero(static_cast<Eigen::Index>(p.n), static_cast<Eigen::Index>(p.blocks));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t u = 0; u < p.n; ++u) {
    const std::uint32_t blk = sbm_block(u, p.n, p.blocks);
    ds.labels[u] = blk;
    for (std::size_t j = 0; j < p.blocks; ++j) {
      const double base = j == blk ? 1.0 : 0.0;
      const double jitter = p.feature_noise > 0.0 ? p.feature_noise * noise(rng) : 0.0;
      ds.features(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(j)) = static_cast<float>(base + jitter);
    }
  }
  ds.splits = stratified_split(ds.labels, ds.num_classes, rng);
  ds.validate();
  return {Graph::from_edges(p.n, edges), std::move(ds)};
}

}  // namespace coreppr
