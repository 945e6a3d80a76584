#pragma once

// Command-line front end. `run` takes the arguments after the program name
// and returns the process exit code: 0 success, 1 runtime error, 2 usage error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "coreppr/coreppr.hpp"

namespace coreppr::cli {

struct UsageError : Error {
  using Error::Error;
};

// Flat "key=value" file; '#' starts a comment line.
inline std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  std::map<std::string, std::string> values;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = coreppr::detail::trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) {
      throw UsageError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    std::string key(coreppr::detail::trim(text.substr(0, eq)));
    std::string value(coreppr::detail::trim(text.substr(eq + 1)));
    if (key.empty()) throw UsageError("config line " + std::to_string(line_no) + ": empty key");
    values[key] = value;
  }
  return values;
}

namespace detail {

struct DiffusionFlags {
  double alpha = 0.25;
  double epsilon = 1e-4;
  std::size_t topl = 32;
  bool dynamic_l = false;
  std::size_t power_iters = 50;
  CLI::Option* topl_option = nullptr;

  void attach(CLI::App* app) {
    app->add_option("--alpha", alpha, "Restart probability in (0, 1]");
    app->add_option("--epsilon", epsilon, "Push precision");
    topl_option = app->add_option("--topl", topl, "Fixed neighbour count per row");
    auto* dyn = app->add_flag("--dynamic-l", dynamic_l, "Per-node neighbour count from the elbow of the PPR curve");
    dyn->excludes(topl_option);
    app->add_option("--power-iters", power_iters, "Power-iteration steps for OT inference");
  }

  DiffusionConfig config(InferenceMode mode = InferenceMode::OnlyTraining) const {
    DiffusionConfig cfg;
    cfg.ppr = {alpha, epsilon};
    cfg.neighbors = dynamic_l ? NeighborCount{DynamicL{}} : NeighborCount{FixedL{topl}};
    cfg.inference = mode;
    cfg.power_iters = power_iters;
    cfg.validate();
    return cfg;
  }
};

struct DatasetFlags {
  std::string features;
  std::string labels;
  std::string splits;

  void attach(CLI::App* app) {
    app->add_option("--features", features, "Feature matrix (binary CPPRF1 or CSV)")->required();
    app->add_option("--labels", labels, "Label file, node<TAB>class per line")->required();
    app->add_option("--splits", splits, "Splits directory (train/val/test.txt) or sectioned file")->required();
  }

  Dataset load() const { return load_dataset(features, labels, splits); }
};

inline Graph load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open graph file " + path);
  return load_edge_list(in);
}

inline std::vector<NodeId> read_sources_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open sources file " + path);
  return coreppr::detail::read_id_list(in);
}

inline std::ofstream open_output(const std::filesystem::path& path, bool binary = false) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

inline bool is_flag(const CLI::Option* opt) { return opt->get_expected_max() == 0; }

// Prepends config-file values for options not given explicitly. Mutually
// exclusive partners of an explicit option are dropped from the file values.
inline std::vector<std::string> merge_config(CLI::App& root, std::vector<std::string> args) {
  if (args.empty()) return args;
  CLI::App* sub = nullptr;
  try {
    sub = root.get_subcommand(args.front());
  } catch (const CLI::OptionNotFound&) {
    return args;
  }

  std::optional<std::string> config_path;
  std::set<std::string> explicit_names;
  for (std::size_t i = 1; i < args.size(); ++i) {
    std::string name = args[i];
    if (name.rfind("--", 0) != 0) continue;
    if (const auto eq = name.find('='); eq != std::string::npos) {
      if (name.substr(0, eq) == "--config") config_path = name.substr(eq + 1);
      name = name.substr(0, eq);
    } else if (name == "--config" && i + 1 < args.size()) {
      config_path = args[i + 1];
    }
    explicit_names.insert(name.substr(2));
  }
  if (!config_path) return args;

  std::set<std::string> blocked = explicit_names;
  for (const auto& name : explicit_names) {
    const CLI::Option* opt = sub->get_option_no_throw("--" + name);
    if (!opt) continue;
    for (const CLI::Option* other : opt->get_excludes()) blocked.insert(other->get_lnames().front());
  }

  std::vector<std::string> merged{args.front()};
  for (const auto& [key, value] : read_config_file(*config_path)) {
    if (key == "config") throw UsageError("config files cannot nest");
    const CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (!opt) throw UsageError("unknown config key '" + key + "' for " + args.front());
    if (blocked.count(key)) continue;
    if (is_flag(opt)) {
      if (value == "true" || value == "1") merged.push_back("--" + key);
      else if (value != "false" && value != "0") throw UsageError("flag '" + key + "' expects true or false");
    } else {
      merged.push_back("--" + key);
      merged.push_back(value);
    }
  }
  merged.insert(merged.end(), args.begin() + 1, args.end());
  return merged;
}

}  // namespace detail

inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"CorePPR: PageRank/CoreRank propagation for scalable node classification", "coreppr"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  std::size_t threads = default_thread_count();
  std::string config_file;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "Flat key=value file; explicit flags take precedence");
    sub->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  };

  // ppr
  auto* ppr_cmd = app.add_subcommand("ppr", "Dump push-approximated PPR rows");
  std::string ppr_graph;
  std::vector<NodeId> ppr_sources;
  std::string ppr_sources_file;
  std::string ppr_out;
  detail::DiffusionFlags ppr_flags;
  ppr_cmd->add_option("--graph", ppr_graph, "Edge list")->required();
  ppr_cmd->add_option("--source", ppr_sources, "Source node (repeatable)");
  ppr_cmd->add_option("--sources-file", ppr_sources_file, "File with one source id per line");
  ppr_cmd->add_option("--out", ppr_out, "Output file (default: stdout)");
  ppr_flags.attach(ppr_cmd);
  add_common(ppr_cmd);

  // corerank
  auto* core_cmd = app.add_subcommand("corerank", "Print 'id core corerank' per node");
  std::string core_graph;
  core_cmd->add_option("--graph", core_graph, "Edge list")->required();
  add_common(core_cmd);

  // precompute
  auto* pre_cmd = app.add_subcommand("precompute", "Write the propagation-row cache");
  std::string pre_graph;
  std::string pre_sources_file;
  std::string pre_out;
  detail::DiffusionFlags pre_flags;
  pre_cmd->add_option("--graph", pre_graph, "Edge list")->required();
  pre_cmd->add_option("--sources-file", pre_sources_file, "Source ids (default: every node)");
  pre_cmd->add_option("--out", pre_out, "Row cache file")->required();
  pre_flags.attach(pre_cmd);
  add_common(pre_cmd);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model; writes model.bin and report.json");
  std::string train_graph;
  std::string train_out;
  std::string train_mode = "ot";
  detail::DiffusionFlags train_flags;
  detail::DatasetFlags train_data;
  TrainConfig train_cfg;
  bool freeze_gamma = false;
  train_cmd->add_option("--graph", train_graph, "Edge list")->required();
  train_data.attach(train_cmd);
  train_cmd->add_option("--mode", train_mode, "Inference mode: ot or tt")->check(CLI::IsMember({"ot", "tt"}));
  train_flags.attach(train_cmd);
  train_cmd->add_option("--seed", train_cfg.seed, "Seed for every random choice");
  train_cmd->add_option("--epochs", train_cfg.epochs, "Maximum epochs");
  train_cmd->add_option("--batch-size", train_cfg.batch_size, "Mini-batch size");
  train_cmd->add_option("--lr", train_cfg.lr, "Adam learning rate");
  train_cmd->add_option("--hidden", train_cfg.hidden, "Hidden layer widths")->delimiter(',');
  train_cmd->add_option("--patience", train_cfg.patience, "Early-stopping patience (epochs)");
  train_cmd->add_option("--dropout", train_cfg.dropout, "Dropout rate on hidden activations");
  train_cmd->add_option("--weight-decay", train_cfg.weight_decay, "L2 penalty on network weights");
  train_cmd->add_flag("--freeze-gamma", freeze_gamma, "Pin gamma to 0 (PPRGo propagation)");
  train_cmd->add_option("--out", train_out, "Output directory")->required();
  add_common(train_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint with OT or T&T inference");
  std::string eval_graph;
  std::string eval_checkpoint;
  std::string eval_mode = "ot";
  std::string eval_split = "test";
  detail::DiffusionFlags eval_flags;
  detail::DatasetFlags eval_data;
  eval_cmd->add_option("--graph", eval_graph, "Edge list")->required();
  eval_data.attach(eval_cmd);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "model.bin written by train")->required();
  eval_cmd->add_option("--mode", eval_mode, "Inference mode: ot or tt")->check(CLI::IsMember({"ot", "tt"}));
  eval_cmd->add_option("--split", eval_split, "Split to score")->check(CLI::IsMember({"train", "val", "test"}));
  eval_flags.attach(eval_cmd);
  add_common(eval_cmd);

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Write a stochastic-block-model dataset bundle");
  SbmParams sbm;
  std::string synth_out;
  synth_cmd->add_option("--n", sbm.n, "Node count");
  synth_cmd->add_option("--blocks", sbm.blocks, "Number of blocks (classes)");
  synth_cmd->add_option("--p-in", sbm.p_in, "Within-block edge probability");
  synth_cmd->add_option("--p-out", sbm.p_out, "Cross-block edge probability");
  synth_cmd->add_option("--noise", sbm.feature_noise, "Feature noise standard deviation");
  synth_cmd->add_option("--seed", sbm.seed, "Generator seed");
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  add_common(synth_cmd);

  try {
    std::vector<std::string> merged = detail::merge_config(app, std::move(args));
    std::reverse(merged.begin(), merged.end());
    app.parse(merged);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (*ppr_cmd) {
      const Graph g = detail::load_graph(ppr_graph);
      std::vector<NodeId> sources = ppr_sources;
      if (!ppr_sources_file.empty()) {
        const auto more = detail::read_sources_file(ppr_sources_file);
        sources.insert(sources.end(), more.begin(), more.end());
      }
      if (sources.empty()) throw UsageError("ppr needs --source or --sources-file");
      const PprParams params{ppr_flags.alpha, ppr_flags.epsilon};
      params.validate();
      const bool truncate_rows = ppr_flags.dynamic_l || ppr_flags.topl_option->count() > 0;
      const DiffusionConfig cfg = ppr_flags.config();

      std::vector<SparseScoreRow> rows(sources.size());
      parallel_for(sources.size(), threads, [&](std::size_t i) {
        SparseScoreRow row = push_appr(g, sources[i], params);
        rows[i] = truncate_rows ? truncate(row, cfg.neighbors) : std::move(row);
      });
      std::ofstream file;
      if (!ppr_out.empty()) file = detail::open_output(ppr_out);
      std::ostream& sink = ppr_out.empty() ? out : file;
      for (const auto& row : rows) write_row_dump(sink, row);
    } else if (*core_cmd) {
      const Graph g = detail::load_graph(core_graph);
      const CoreScores scores = core_scores(g);
      for (NodeId u = 0; u < g.num_nodes(); ++u) {
        out << u << ' ' << scores.core_number[u] << ' ' << scores.corerank[u] << '\n';
      }
    } else if (*pre_cmd) {
      const Graph g = detail::load_graph(pre_graph);
      const CoreScores scores = core_scores(g);
      std::vector<NodeId> sources;
      if (pre_sources_file.empty()) {
        sources.resize(g.num_nodes());
        std::iota(sources.begin(), sources.end(), NodeId{0});
      } else {
        sources = detail::read_sources_file(pre_sources_file);
      }
      const auto rows = precompute_rows(g, scores, pre_flags.config(), sources, threads);
      auto file = detail::open_output(pre_out, true);
      write_row_cache(file, rows);
      out << "wrote " << rows.size() << " rows, mean length "
          << mean_neighbors(rows, false) << " to " << pre_out << '\n';
    } else if (*train_cmd) {
      const Graph g = detail::load_graph(train_graph);
      const Dataset ds = train_data.load();
      const CoreScores scores = core_scores(g);
      train_cfg.diffusion = train_flags.config(parse_inference_mode(train_mode));
      train_cfg.train_gate = !freeze_gamma;
      train_cfg.threads = threads;

      TrainResult result = train(g, scores, ds, train_cfg);
      result.report.config["graph"] = train_graph;
      result.report.config["features"] = train_data.features;
      result.report.config["labels"] = train_data.labels;
      result.report.config["splits"] = train_data.splits;
      if (!config_file.empty()) result.report.config["config_file"] = config_file;

      const std::filesystem::path dir(train_out);
      std::filesystem::create_directories(dir);
      {
        auto model_file = detail::open_output(dir / "model.bin", true);
        save_checkpoint(model_file, result.model);
      }
      {
        auto report_file = detail::open_output(dir / "report.json");
        report_file << result.report.to_json().dump(2) << '\n';
      }
      out << "epochs " << result.report.epochs_run << ", val " << result.report.accuracy_val << "%, test "
          << result.report.accuracy_test << "%, gamma " << result.report.gamma_final << ", mean l "
          << result.report.mean_l << '\n';
    } else if (*eval_cmd) {
      const Graph g = detail::load_graph(eval_graph);
      const Dataset ds = eval_data.load();
      const CoreScores scores = core_scores(g);
      std::ifstream model_file(eval_checkpoint, std::ios::binary);
      if (!model_file) throw Error("cannot open checkpoint " + eval_checkpoint);
      const Model model = load_checkpoint(model_file);
      const InferenceMode mode = parse_inference_mode(eval_mode);
      const auto& targets = eval_split == "train" ? ds.splits.train
                            : eval_split == "val" ? ds.splits.val
                                                  : ds.splits.test;
      const EvalResult result = evaluate(model, g, scores, ds, mode, eval_flags.config(mode), targets, threads);
      const nlohmann::json report = {{"mode", eval_mode},
                                     {"split", eval_split},
                                     {"accuracy", result.accuracy},
                                     {"gamma", model.gamma()},
                                     {"time_infer_s", result.seconds}};
      out << report.dump(2) << '\n';
    } else if (*synth_cmd) {
      auto [g, ds] = generate_sbm(sbm);
      const std::filesystem::path dir(synth_out);
      std::filesystem::create_directories(dir);
      {
        auto file = detail::open_output(dir / "graph.txt");
        file << "# SBM n=" << sbm.n << " blocks=" << sbm.blocks << " seed=" << sbm.seed << '\n';
        for (NodeId u = 0; u < g.num_nodes(); ++u) {
          for (NodeId v : g.neighbors(u)) {
            if (u <= v) file << u << ' ' << v << '\n';
          }
        }
      }
      {
        auto file = detail::open_output(dir / "features.bin", true);
        write_features_binary(file, ds.features);
      }
      {
        auto file = detail::open_output(dir / "labels.txt");
        write_labels(file, ds.labels);
      }
      {
        auto file = detail::open_output(dir / "splits.txt");
        write_splits(file, ds.splits);
      }
      out << "wrote " << g.num_nodes() << " nodes, " << g.num_edges() << " edges to " << synth_out << '\n';
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace coreppr::cli
