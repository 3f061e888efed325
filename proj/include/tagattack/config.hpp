#pragma once

// Run configuration: a flat `key = value` file, optionally overridden by
// `key=value` strings from the command line.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "tagattack/errors.hpp"
#include "tagattack/influence.hpp"
#include "tagattack/perturb.hpp"

namespace tagattack {

struct SyntheticConfig {
  std::size_t nodes = 300;
  double p_in = 0.02;
  double p_out = 0.006;
  std::size_t text_min = 14;
  std::size_t text_max = 22;
  double class_word_rate = 0.45;  // share of tokens drawn from a class vocabulary
  double off_class_rate = 0.3;    // of those, share drawn from the other class
  std::size_t vocab_per_class = 40;
  std::size_t neutral_vocab = 60;
  std::uint64_t seed = 0;  // 0 derives from the master seed
};

struct RunConfig {
  // data
  std::string dataset = "synthetic";
  std::string nodes_path;
  std::string edges_path;
  std::string splits_path;
  std::string lexicon_path;
  std::string model_path;
  int num_classes = 0;
  std::string bridge_command;
  std::string ppl_command;
  SyntheticConfig synthetic;

  // victim
  std::size_t encoder_dim = 128;
  std::uint64_t encoder_seed = 0x7a61;
  std::size_t ngram_min = 3;
  std::size_t ngram_max = 5;
  std::size_t gcn_hidden = 64;
  std::size_t gcn_layers = 2;
  double gcn_lr = 0.01;
  std::size_t gcn_epochs = 200;
  double gcn_weight_decay = 5e-4;

  // attack
  double beta = 0.3;
  double alpha = 1.0;
  std::size_t top_k1 = 10;
  std::size_t top_k2 = 4;
  double gamma = 0.5;
  double score_a1 = 1.0;
  double score_a2 = 1.0;
  double score_a3 = 1.0;
  double tau = 0.0;
  std::size_t pivot_cap = 0;  // 0 means ceil(beta * |T|)
  std::size_t shap_budget = 256;
  std::size_t edge_samples = 0;  // 0 means max(2n + 16, 64)
  std::size_t nexus_size = 8;
  double ridge = 1e-8;
  GapMode gap_mode = GapMode::kLiteral;
  InfluenceMode influence_mode = InfluenceMode::kJacobian;
  std::size_t targets = 100;
  std::uint64_t seed = 1;
  bool random_pivots = false;
  bool single_node_score = false;
  bool no_edge_pruning = false;
  bool unsafe = false;

  // audit
  double similarity_slack = 0.05;
  double homophily_slack = 0.05;

  std::uint64_t synthetic_seed() const {
    return synthetic.seed ? synthetic.seed : derive_seed(seed, {0x5e7});
  }
};

namespace detail {

inline bool on_grid(double x, double step, double lo, double hi) {
  if (x < lo - 1e-12 || x > hi + 1e-12) return false;
  const double k = (x - lo) / step;
  return std::abs(k - std::round(k)) < 1e-9;
}

template <class T>
T parse_value(const std::string& key, const std::string& raw) {
  std::istringstream in(raw);
  T value{};
  in >> value;
  if (in.fail() || !(in >> std::ws).eof()) throw ConfigError("bad value for " + key + ": '" + raw + "'");
  return value;
}

template <>
inline bool parse_value<bool>(const std::string& key, const std::string& raw) {
  if (raw == "1" || raw == "true" || raw == "yes" || raw == "on") return true;
  if (raw == "0" || raw == "false" || raw == "no" || raw == "off") return false;
  throw ConfigError("bad boolean for " + key + ": '" + raw + "'");
}

template <>
inline std::string parse_value<std::string>(const std::string&, const std::string& raw) {
  return raw;
}

}  // namespace detail

// Rejects values outside the tuned search space unless `unsafe` is set.
inline void validate(const RunConfig& c) {
  if (c.dataset != "synthetic" && c.dataset != "files")
    throw ConfigError("dataset must be 'synthetic' or 'files'");
  if (c.dataset == "files" && (c.nodes_path.empty() || c.edges_path.empty()))
    throw ConfigError("dataset=files needs nodes and edges paths");
  if (c.encoder_dim == 0) throw ConfigError("encoder_dim must be positive");
  if (c.ngram_max != 0 && (c.ngram_min == 0 || c.ngram_min > c.ngram_max))
    throw ConfigError("ngram range is invalid (ngram_max = 0 hashes whole words only)");
  if (c.gcn_layers < 1) throw ConfigError("gcn_layers must be at least 1");
  if (!(c.gamma >= 0.0 && c.gamma <= 1.0)) throw ConfigError("gamma must lie in [0,1]");
  if (!(c.beta >= 0.0 && c.beta <= 1.0)) throw ConfigError("beta must lie in [0,1]");
  if (c.shap_budget < 1) throw ConfigError("shap_budget must be at least 1");
  if (c.nexus_size < 1) throw ConfigError("nexus_size must be at least 1");
  if (!(c.ridge >= 0.0)) throw ConfigError("ridge must be non-negative");
  if (c.synthetic.text_min < 1 || c.synthetic.text_min > c.synthetic.text_max)
    throw ConfigError("synthetic text lengths are inconsistent");
  if (c.unsafe) return;
  if (!detail::on_grid(c.beta, 0.05, 0.0, 0.4)) throw ConfigError("beta must be in {0, 0.05, ..., 0.4}");
  if (!detail::on_grid(c.alpha, 1.0, 0.0, 5.0)) throw ConfigError("alpha must be in {0, 1, ..., 5}");
  if (c.top_k1 % 5 != 0 || c.top_k1 > 40) throw ConfigError("top_k1 must be in {0, 5, ..., 40}");
  if (c.top_k2 % 2 != 0 || c.top_k2 > 6) throw ConfigError("top_k2 must be in {0, 2, 4, 6}");
  for (double a : {c.score_a1, c.score_a2, c.score_a3})
    if (!(a >= 0.0)) throw ConfigError("score weights must be non-negative");
}

// Applies one `key=value` assignment.
inline void set_option(RunConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_value;
  auto& s = c.synthetic;
  if (key == "dataset") c.dataset = value;
  else if (key == "nodes") c.nodes_path = value;
  else if (key == "edges") c.edges_path = value;
  else if (key == "splits") c.splits_path = value;
  else if (key == "lexicon") c.lexicon_path = value;
  else if (key == "model") c.model_path = value;
  else if (key == "num_classes") c.num_classes = parse_value<int>(key, value);
  else if (key == "bridge_command") c.bridge_command = value;
  else if (key == "ppl_command") c.ppl_command = value;
  else if (key == "synthetic_nodes") s.nodes = parse_value<std::size_t>(key, value);
  else if (key == "synthetic_p_in") s.p_in = parse_value<double>(key, value);
  else if (key == "synthetic_p_out") s.p_out = parse_value<double>(key, value);
  else if (key == "synthetic_text_min") s.text_min = parse_value<std::size_t>(key, value);
  else if (key == "synthetic_text_max") s.text_max = parse_value<std::size_t>(key, value);
  else if (key == "synthetic_class_word_rate") s.class_word_rate = parse_value<double>(key, value);
  else if (key == "synthetic_off_class_rate") s.off_class_rate = parse_value<double>(key, value);
  else if (key == "synthetic_vocab_per_class") s.vocab_per_class = parse_value<std::size_t>(key, value);
  else if (key == "synthetic_neutral_vocab") s.neutral_vocab = parse_value<std::size_t>(key, value);
  else if (key == "synthetic_seed") s.seed = parse_value<std::uint64_t>(key, value);
  else if (key == "encoder_dim") c.encoder_dim = parse_value<std::size_t>(key, value);
  else if (key == "encoder_seed") c.encoder_seed = parse_value<std::uint64_t>(key, value);
  else if (key == "ngram_min") c.ngram_min = parse_value<std::size_t>(key, value);
  else if (key == "ngram_max") c.ngram_max = parse_value<std::size_t>(key, value);
  else if (key == "gcn_hidden") c.gcn_hidden = parse_value<std::size_t>(key, value);
  else if (key == "gcn_layers") c.gcn_layers = parse_value<std::size_t>(key, value);
  else if (key == "gcn_lr") c.gcn_lr = parse_value<double>(key, value);
  else if (key == "gcn_epochs") c.gcn_epochs = parse_value<std::size_t>(key, value);
  else if (key == "gcn_weight_decay") c.gcn_weight_decay = parse_value<double>(key, value);
  else if (key == "beta") c.beta = parse_value<double>(key, value);
  else if (key == "alpha") c.alpha = parse_value<double>(key, value);
  else if (key == "top_k1") c.top_k1 = parse_value<std::size_t>(key, value);
  else if (key == "top_k2") c.top_k2 = parse_value<std::size_t>(key, value);
  else if (key == "gamma") c.gamma = parse_value<double>(key, value);
  else if (key == "score_a1") c.score_a1 = parse_value<double>(key, value);
  else if (key == "score_a2") c.score_a2 = parse_value<double>(key, value);
  else if (key == "score_a3") c.score_a3 = parse_value<double>(key, value);
  else if (key == "tau") c.tau = parse_value<double>(key, value);
  else if (key == "pivot_cap") c.pivot_cap = parse_value<std::size_t>(key, value);
  else if (key == "shap_budget") c.shap_budget = parse_value<std::size_t>(key, value);
  else if (key == "edge_samples") c.edge_samples = parse_value<std::size_t>(key, value);
  else if (key == "nexus_size") c.nexus_size = parse_value<std::size_t>(key, value);
  else if (key == "ridge") c.ridge = parse_value<double>(key, value);
  else if (key == "gap_mode") c.gap_mode = parse_gap_mode(value);
  else if (key == "influence_mode") {
    if (value == "jacobian") c.influence_mode = InfluenceMode::kJacobian;
    else if (value == "adj_power") c.influence_mode = InfluenceMode::kAdjPower;
    else throw ConfigError("influence_mode must be 'jacobian' or 'adj_power'");
  } else if (key == "targets") c.targets = parse_value<std::size_t>(key, value);
  else if (key == "seed") c.seed = parse_value<std::uint64_t>(key, value);
  else if (key == "random_pivots") c.random_pivots = parse_value<bool>(key, value);
  else if (key == "single_node_score") c.single_node_score = parse_value<bool>(key, value);
  else if (key == "no_edge_pruning") c.no_edge_pruning = parse_value<bool>(key, value);
  else if (key == "unsafe") c.unsafe = parse_value<bool>(key, value);
  else if (key == "similarity_slack") c.similarity_slack = parse_value<double>(key, value);
  else if (key == "homophily_slack") c.homophily_slack = parse_value<double>(key, value);
  else throw ConfigError("unknown config key: " + key);
}

// Parses `key=value`.
inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must be key=value: " + assignment);
  set_option(c, assignment.substr(0, eq), assignment.substr(eq + 1));
}

// Reads a flat INI file. Relative dataset paths resolve against the file's
// directory.
inline RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  RunConfig c;
  if (!path.empty()) {
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::ini_parser::read_ini(path.string(), tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError(std::string("cannot parse config: ") + e.what());
    }
    for (const auto& [key, node] : tree) {
      if (!node.empty()) throw ConfigError("config sections are not supported: [" + key + "]");
      set_option(c, key, node.data());
    }
    const auto base = path.parent_path();
    for (std::string* p : {&c.nodes_path, &c.edges_path, &c.splits_path, &c.lexicon_path, &c.model_path})
      if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).string();
  }
  for (const auto& o : overrides) apply_override(c, o);
  validate(c);
  return c;
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  const auto& s = c.synthetic;
  return {
      {"dataset", c.dataset},
      {"nodes", c.nodes_path},
      {"edges", c.edges_path},
      {"splits", c.splits_path},
      {"lexicon", c.lexicon_path},
      {"model", c.model_path},
      {"num_classes", c.num_classes},
      {"bridge_command", c.bridge_command},
      {"ppl_command", c.ppl_command},
      {"synthetic",
       {{"nodes", s.nodes},
        {"p_in", s.p_in},
        {"p_out", s.p_out},
        {"text_min", s.text_min},
        {"text_max", s.text_max},
        {"class_word_rate", s.class_word_rate},
        {"off_class_rate", s.off_class_rate},
        {"vocab_per_class", s.vocab_per_class},
        {"neutral_vocab", s.neutral_vocab},
        {"seed", c.synthetic_seed()}}},
      {"encoder_dim", c.encoder_dim},
      {"encoder_seed", c.encoder_seed},
      {"ngram_min", c.ngram_min},
      {"ngram_max", c.ngram_max},
      {"gcn_hidden", c.gcn_hidden},
      {"gcn_layers", c.gcn_layers},
      {"gcn_lr", c.gcn_lr},
      {"gcn_epochs", c.gcn_epochs},
      {"gcn_weight_decay", c.gcn_weight_decay},
      {"beta", c.beta},
      {"alpha", c.alpha},
      {"top_k1", c.top_k1},
      {"top_k2", c.top_k2},
      {"gamma", c.gamma},
      {"score_weights", {c.score_a1, c.score_a2, c.score_a3}},
      {"tau", c.tau},
      {"pivot_cap", c.pivot_cap},
      {"shap_budget", c.shap_budget},
      {"edge_samples", c.edge_samples},
      {"nexus_size", c.nexus_size},
      {"ridge", c.ridge},
      {"gap_mode", gap_mode_name(c.gap_mode)},
      {"influence_mode", c.influence_mode == InfluenceMode::kJacobian ? "jacobian" : "adj_power"},
      {"targets", c.targets},
      {"seed", c.seed},
      {"random_pivots", c.random_pivots},
      {"single_node_score", c.single_node_score},
      {"no_edge_pruning", c.no_edge_pruning},
      {"unsafe", c.unsafe},
      {"similarity_slack", c.similarity_slack},
      {"homophily_slack", c.homophily_slack},
  };
}

}  // namespace tagattack
