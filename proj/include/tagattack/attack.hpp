#pragma once

// End-to-end attack runs: dataset and victim preparation, target selection,
// the per-target pipeline (token attribution -> substitution -> edge
// pruning), metrics, stealth audit, report files and seed sweeps.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "tagattack/candidates.hpp"
#include "tagattack/config.hpp"
#include "tagattack/encoder.hpp"
#include "tagattack/gcn.hpp"
#include "tagattack/graph.hpp"
#include "tagattack/perturb.hpp"
#include "tagattack/prune.hpp"
#include "tagattack/shapley.hpp"
#include "tagattack/stealth.hpp"
#include "tagattack/synthetic.hpp"
#include "tagattack/victim.hpp"

namespace tagattack {

// Stage seeds fan out from the master seed by fixed salts.
namespace salt {
inline constexpr std::uint64_t kSplit = 0x5b1;
inline constexpr std::uint64_t kTrain = 0x7a1;
inline constexpr std::uint64_t kTargets = 0x7a6;
inline constexpr std::uint64_t kShap = 0x5a9;
inline constexpr std::uint64_t kPivots = 0x917;
inline constexpr std::uint64_t kEdges = 0xed9;
}  // namespace salt

struct Dataset {
  TextAttributedGraph graph;
  SplitAssignment split;
  std::shared_ptr<const Lexicon> lexicon;
  std::vector<std::string> warnings;
};

inline Dataset load_dataset(const RunConfig& cfg) {
  Dataset d;
  if (cfg.dataset == "synthetic") {
    SyntheticBenchmark b = generate_synthetic(cfg.synthetic, cfg.synthetic_seed());
    d.graph = std::move(b.graph);
    d.lexicon = std::make_shared<const Lexicon>(std::move(b.lexicon));
  } else {
    d.graph = load_graph(cfg.nodes_path, cfg.edges_path, cfg.num_classes);
  }
  if (!cfg.lexicon_path.empty()) d.lexicon = std::make_shared<const Lexicon>(Lexicon::load(cfg.lexicon_path));
  if (!d.lexicon) d.lexicon = std::make_shared<const Lexicon>();
  if (!cfg.splits_path.empty()) {
    d.split = load_splits(cfg.splits_path, d.graph.num_nodes());
  } else {
    d.split = split_nodes(d.graph, {}, derive_seed(cfg.seed, {salt::kSplit}));
    d.warnings = d.split.warnings;
  }
  return d;
}

inline HashingEncoder make_encoder(const RunConfig& cfg) {
  EncoderConfig e;
  e.dim = cfg.encoder_dim;
  e.seed = cfg.encoder_seed;
  e.ngram_min = cfg.ngram_min;
  e.ngram_max = cfg.ngram_max;
  return HashingEncoder(e);
}

inline TrainConfig make_train_config(const RunConfig& cfg) {
  TrainConfig t;
  t.hidden = cfg.gcn_hidden;
  t.layers = cfg.gcn_layers;
  t.lr = cfg.gcn_lr;
  t.epochs = cfg.gcn_epochs;
  t.weight_decay = cfg.gcn_weight_decay;
  t.seed = derive_seed(cfg.seed, {salt::kTrain});
  return t;
}

// Loads the checkpoint named in the config or trains a fresh model.
inline std::unique_ptr<Victim> prepare_victim(const RunConfig& cfg, const Dataset& d,
                                              TrainingLog* log = nullptr) {
  HashingEncoder enc = make_encoder(cfg);
  GcnModel model;
  if (!cfg.model_path.empty()) {
    model = load_model(cfg.model_path);
  } else {
    const Matrix x = enc.encode_all(d.graph);
    model = train_gcn(d.graph, x, d.split, make_train_config(cfg), log);
  }
  return std::make_unique<Victim>(d.graph, std::move(enc), std::move(model));
}

using GeneratorFactory = std::function<std::unique_ptr<CandidateGenerator>()>;

inline GeneratorFactory make_generator_factory(const RunConfig& cfg, const Dataset& d) {
  if (!cfg.bridge_command.empty()) {
    const std::string cmd = cfg.bridge_command;
    return [cmd] { return std::make_unique<BridgeGenerator>(cmd); };
  }
  auto lex = d.lexicon;
  return [lex] { return std::make_unique<Lexicon>(*lex); };
}

// ---------------------------------------------------------------------------

// Uniform sample of `n` initially correct test nodes, ascending. Takes all
// eligible nodes (in id order) when there are not enough.
inline std::vector<NodeId> select_targets(const Victim& victim, const SplitAssignment& split, std::size_t n,
                                          std::uint64_t seed, std::vector<std::string>* warnings = nullptr) {
  std::vector<NodeId> eligible;
  for (NodeId u : split.nodes(Role::kTest))
    if (victim.clean_prediction(u) == victim.graph().label(u)) eligible.push_back(u);
  if (n >= eligible.size()) {
    if (n > eligible.size() && warnings)
      warnings->push_back("requested " + std::to_string(n) + " targets but only " +
                          std::to_string(eligible.size()) + " test nodes are correctly classified");
    return eligible;
  }
  Rng rng(seed);
  auto out = sample_without_replacement(std::move(eligible), n, rng);
  std::sort(out.begin(), out.end());
  return out;
}

struct TargetRecord {
  NodeId node = 0;
  ClassId label = 0;
  ClassId clean_prediction = 0;
  TokenSequence original_text;
  std::optional<ShapleyTable> shap;
  PivotalSet pivotal;
  PerturbationResult perturbation;
  bool pruning_ran = false;
  std::optional<EdgeAttribution> attribution;
  std::vector<Edge> removed;
  ClassId final_prediction = 0;
  bool flipped = false;
  std::optional<std::string> error;
};

struct Metrics {
  double accuracy = 0.0;
  std::optional<double> asr;
};

// ACC over the test split under `probs`; ASR over the target flags.
inline Metrics evaluate_metrics(const Matrix& probs, const std::vector<ClassId>& labels,
                                const std::vector<NodeId>& test_nodes, const std::vector<bool>& target_flipped) {
  Metrics m;
  m.accuracy = accuracy(probs, labels, test_nodes);
  if (!target_flipped.empty()) {
    const auto flips = std::count(target_flipped.begin(), target_flipped.end(), true);
    m.asr = static_cast<double>(flips) / static_cast<double>(target_flipped.size());
  }
  return m;
}

struct AttackReport {
  RunConfig config;
  std::vector<TargetRecord> records;
  double clean_accuracy = 0.0;
  double attacked_accuracy = 0.0;
  std::optional<double> asr;
  std::size_t test_nodes = 0;
  StealthReport stealth;
  std::vector<std::string> warnings;
  TextAttributedGraph attacked_graph;
};

// One target through the three stages, on the clean graph with only this
// target's text varying.
inline TargetRecord attack_target(const RunConfig& cfg, const Victim& victim, NodeId v,
                                  CandidateGenerator& generator) {
  TargetRecord rec;
  rec.node = v;
  rec.label = victim.graph().label(v);
  rec.clean_prediction = victim.clean_prediction(v);
  rec.original_text = victim.graph().text(v);
  rec.final_prediction = rec.clean_prediction;
  rec.perturbation.text = rec.original_text;
  rec.perturbation.final_prediction = rec.clean_prediction;

  const std::size_t m = rec.original_text.size();
  const std::size_t cap = cfg.pivot_cap ? cfg.pivot_cap : modification_budget(cfg.beta, m);
  if (cfg.random_pivots) {
    rec.pivotal = random_pivotal_set(m, cap, derive_seed(cfg.seed, {salt::kPivots, v}));
  } else if (m > 0) {
    rec.shap = topological_shap(victim, v, {cfg.shap_budget, derive_seed(cfg.seed, {salt::kShap, v}), true});
    rec.pivotal = pivotal_set(*rec.shap, cap, cfg.tau);
  }

  PerturbConfig pc;
  pc.beta = cfg.beta;
  pc.alpha = cfg.alpha;
  pc.top_k1 = cfg.top_k1;
  pc.gamma = cfg.gamma;
  pc.gap_mode = cfg.gap_mode;
  pc.single_node_score = cfg.single_node_score;
  rec.perturbation = perturb_node_text(victim, v, rec.pivotal, generator, pc);

  // Pruning refines only unflipped targets; the two text ablations run
  // without it.
  const bool prune = !rec.perturbation.flipped && cfg.top_k2 > 0 && !cfg.no_edge_pruning &&
                     !cfg.random_pivots && !cfg.single_node_score;
  if (prune) {
    PruneConfig pr;
    pr.k2 = cfg.top_k2;
    pr.nexus_size = cfg.nexus_size;
    pr.weights = {cfg.score_a1, cfg.score_a2, cfg.score_a3};
    pr.influence_mode = cfg.influence_mode;
    pr.shapley.samples = cfg.edge_samples;
    pr.shapley.seed = derive_seed(cfg.seed, {salt::kEdges, v});
    pr.shapley.ridge = cfg.ridge;
    PruneOutcome po = run_edge_pruning(victim, v, rec.perturbation.text, pr);
    rec.pruning_ran = true;
    rec.attribution = std::move(po.attribution);
    rec.removed = std::move(po.removed);
  }
  return rec;
}

namespace detail {

template <class F>
void parallel_for(std::size_t count, std::size_t workers, F&& body) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  std::atomic<std::size_t> next{0};
  auto run = [&](std::size_t worker) {
    for (std::size_t i; (i = next.fetch_add(1)) < count;) body(worker, i);
  };
  if (workers == 1) {
    run(0);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
  for (auto& t : pool) t.join();
}

}  // namespace detail

inline AttackReport run_attack(const RunConfig& cfg, const Victim& victim, const SplitAssignment& split,
                               const GeneratorFactory& factory, std::size_t workers = 1,
                               PerplexityScorer* scorer = nullptr) {
  AttackReport rep;
  rep.config = cfg;
  const TextAttributedGraph& g = victim.graph();
  const auto targets = select_targets(victim, split, cfg.targets, derive_seed(cfg.seed, {salt::kTargets}),
                                      &rep.warnings);

  rep.records.resize(targets.size());
  std::vector<std::unique_ptr<CandidateGenerator>> generators(std::max<std::size_t>(1, workers));
  detail::parallel_for(targets.size(), workers, [&](std::size_t w, std::size_t i) {
    if (!generators[w]) generators[w] = factory();
    const NodeId v = targets[i];
    try {
      rep.records[i] = attack_target(cfg, victim, v, *generators[w]);
    } catch (const std::exception& e) {
      TargetRecord r;
      r.node = v;
      r.label = g.label(v);
      r.clean_prediction = victim.clean_prediction(v);
      r.original_text = g.text(v);
      r.perturbation.text = r.original_text;
      r.final_prediction = r.clean_prediction;
      r.error = e.what();
      rep.records[i] = std::move(r);
    }
  });

  // All text edits coexist; each target is then judged with only its own
  // prunings, while the global graph carries the union.
  std::map<NodeId, std::vector<std::string>> texts;
  std::vector<Edge> all_removed;
  for (const auto& r : rep.records) {
    if (r.perturbation.trace.tokens_modified > 0) texts[r.node] = r.perturbation.text.tokens();
    all_removed.insert(all_removed.end(), r.removed.begin(), r.removed.end());
  }
  std::sort(all_removed.begin(), all_removed.end());
  all_removed.erase(std::unique(all_removed.begin(), all_removed.end()), all_removed.end());

  const TextAttributedGraph text_graph = g.with_texts(texts);
  const Matrix text_features = victim.encoder().encode_all(text_graph);
  const LocalForward local(victim.model(), text_features);
  std::vector<bool> flips;
  for (auto& r : rep.records) {
    const NodeId t[1] = {r.node};
    const Matrix p = local.probs(PrunedAdjacency(text_graph, r.removed), t);
    r.final_prediction = argmax(p.row(0));
    r.flipped = r.final_prediction != r.clean_prediction;
    flips.push_back(r.flipped);
  }

  rep.attacked_graph = remove_edges(text_graph, all_removed);
  const Matrix attacked_probs = forward(victim.model(), NormalizedAdjacency(rep.attacked_graph), text_features);
  const auto test = split.nodes(Role::kTest);
  rep.test_nodes = test.size();
  rep.clean_accuracy = accuracy(victim.clean_probs(), g.labels(), test);
  const Metrics m = evaluate_metrics(attacked_probs, g.labels(), test, flips);
  rep.attacked_accuracy = m.accuracy;
  rep.asr = m.asr;

  StealthConfig sc{cfg.gamma, cfg.similarity_slack, cfg.homophily_slack};
  rep.stealth = stealth_report({&g, &victim.features()}, {&rep.attacked_graph, &text_features}, victim.encoder(),
                               sc, scorer);
  return rep;
}

// ---------------------------------------------------------------------------
// Output

inline nlohmann::json report_to_json(const AttackReport& rep) {
  nlohmann::json targets = nlohmann::json::array();
  std::size_t flipped = 0;
  std::size_t errors = 0;
  for (const auto& r : rep.records) {
    flipped += r.flipped;
    errors += r.error.has_value();
    nlohmann::json removed = nlohmann::json::array();
    for (const Edge& e : r.removed) removed.push_back({e.u, e.v});
    const auto& tr = r.perturbation.trace;
    targets.push_back({
        {"node", r.node},
        {"label", r.label},
        {"clean_prediction", r.clean_prediction},
        {"final_prediction", r.final_prediction},
        {"flipped", r.flipped},
        {"pivotal_positions", r.pivotal.positions},
        {"shap_estimator", r.shap ? nlohmann::json(estimator_name(r.shap->estimator)) : nlohmann::json(nullptr)},
        {"text_flipped", r.perturbation.flipped},
        {"tokens_modified", tr.tokens_modified},
        {"budget", tr.budget},
        {"terminated_reason", stop_reason_name(tr.terminated_reason)},
        {"pruning_ran", r.pruning_ran},
        {"edges_pruned", std::move(removed)},
        {"error", r.error ? nlohmann::json(*r.error) : nlohmann::json(nullptr)},
    });
  }
  return {
      {"config", config_to_json(rep.config)},
      {"seeds",
       {{"master", rep.config.seed},
        {"synthetic", rep.config.synthetic_seed()},
        {"split", derive_seed(rep.config.seed, {salt::kSplit})},
        {"train", derive_seed(rep.config.seed, {salt::kTrain})},
        {"targets", derive_seed(rep.config.seed, {salt::kTargets})}}},
      {"metrics",
       {{"clean_accuracy", rep.clean_accuracy},
        {"attacked_accuracy", rep.attacked_accuracy},
        {"asr", rep.asr ? nlohmann::json(*rep.asr) : nlohmann::json(nullptr)},
        {"targets", rep.records.size()},
        {"flipped", flipped},
        {"target_errors", errors},
        {"test_nodes", rep.test_nodes}}},
      {"targets", std::move(targets)},
      {"stealth", stealth_to_json(rep.stealth)},
      {"warnings", rep.warnings},
  };
}

inline void write_report(const AttackReport& rep, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "shapley");
  fs::create_directories(dir / "attribution");
  fs::create_directories(dir / "attacked");
  auto open = [](const fs::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw DatasetError("cannot write " + p.string());
    out.precision(17);
    return out;
  };
  open(dir / "report.json") << report_to_json(rep).dump(2) << '\n';

  auto targets = open(dir / "targets.csv");
  targets << "node,label,clean_prediction,final_prediction,flipped,tokens_modified,budget,terminated_reason,"
             "pruning_ran,edges_pruned,error\n";
  nlohmann::json traces = nlohmann::json::array();
  for (const auto& r : rep.records) {
    targets << r.node << ',' << r.label << ',' << r.clean_prediction << ',' << r.final_prediction << ','
            << r.flipped << ',' << r.perturbation.trace.tokens_modified << ',' << r.perturbation.trace.budget
            << ',' << stop_reason_name(r.perturbation.trace.terminated_reason) << ',' << r.pruning_ran << ','
            << r.removed.size() << ',' << (r.error ? "error" : "") << '\n';
    traces.push_back(trace_to_json(r.node, r.original_text, r.perturbation));
    const std::string stem = "node_" + std::to_string(r.node);
    if (r.shap) write_shapley_csv(*r.shap, dir / "shapley" / (stem + "_phi.csv"), dir / "shapley" / (stem + "_xi.csv"));
    if (r.attribution) {
      auto a = open(dir / "attribution" / (stem + ".csv"));
      a << "u,v,phi_e,pruned\n";
      write_attribution_csv(*r.attribution, r.removed, a);
    }
  }
  open(dir / "traces.json") << traces.dump(2) << '\n';
  auto hist = open(dir / "homophily_hist.csv");
  write_homophily_csv(rep.stealth, hist);
  auto deg = open(dir / "degree_hist.csv");
  write_degree_csv(rep.stealth, deg);
  save_graph(rep.attacked_graph, dir / "attacked" / "nodes.tsv", dir / "attacked" / "edges.tsv");
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepCell {
  std::vector<std::string> assignments;  // key=value
  std::vector<double> asr;
  std::vector<double> attacked_accuracy;
  std::vector<double> clean_accuracy;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

// Sample standard deviation (n - 1); zero for a single value.
inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return r;
}

namespace detail {

// Keys that change only the attack, so a victim can be reused across them.
inline bool attack_only_key(const std::string& key) {
  static const std::set<std::string> keys{
      "beta",     "alpha",         "top_k1",      "top_k2",         "gamma",          "score_a1",
      "score_a2", "score_a3",      "tau",         "pivot_cap",      "shap_budget",    "edge_samples",
      "nexus_size", "ridge",       "gap_mode",    "influence_mode", "targets",        "random_pivots",
      "single_node_score", "no_edge_pruning", "unsafe", "similarity_slack", "homophily_slack", "lexicon",
      "bridge_command", "ppl_command"};
  return keys.count(key) > 0;
}

inline std::string key_of(const std::string& assignment) { return assignment.substr(0, assignment.find('=')); }

}  // namespace detail

// Runs every cell of the grid under each seed. A victim is trained once per
// seed and reused for cells that only touch attack settings.
inline std::vector<SweepCell> run_sweep(const RunConfig& base, const std::vector<std::vector<std::string>>& grid,
                                        const std::vector<std::uint64_t>& seeds, std::size_t workers = 1) {
  std::vector<SweepCell> cells;
  for (const auto& g : grid) cells.push_back({g, {}, {}, {}});
  for (std::uint64_t seed : seeds) {
    RunConfig seeded = base;
    seeded.seed = seed;
    std::optional<Dataset> shared_data;
    std::unique_ptr<Victim> shared_victim;
    for (auto& cell : cells) {
      RunConfig c = seeded;
      bool reuse = true;
      for (const auto& a : cell.assignments) {
        apply_override(c, a);
        reuse = reuse && detail::attack_only_key(detail::key_of(a));
      }
      validate(c);
      std::optional<Dataset> own_data;
      std::unique_ptr<Victim> own_victim;
      const Dataset* data = nullptr;
      const Victim* victim = nullptr;
      if (reuse) {
        if (!shared_victim) {
          shared_data = load_dataset(seeded);
          shared_victim = prepare_victim(seeded, *shared_data);
        }
        data = &*shared_data;
        victim = shared_victim.get();
      } else {
        own_data = load_dataset(c);
        own_victim = prepare_victim(c, *own_data);
        data = &*own_data;
        victim = own_victim.get();
      }
      const Dataset cell_data{data->graph, data->split,
                              c.lexicon_path.empty() ? data->lexicon
                                                     : std::make_shared<const Lexicon>(Lexicon::load(c.lexicon_path)),
                              {}};
      const AttackReport rep = run_attack(c, *victim, data->split, make_generator_factory(c, cell_data), workers);
      cell.asr.push_back(rep.asr.value_or(0.0));
      cell.attacked_accuracy.push_back(rep.attacked_accuracy);
      cell.clean_accuracy.push_back(rep.clean_accuracy);
    }
  }
  return cells;
}

inline nlohmann::json sweep_to_json(const std::vector<SweepCell>& cells, const std::vector<std::uint64_t>& seeds) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& c : cells) {
    const auto asr = mean_std(c.asr);
    const auto acc = mean_std(c.attacked_accuracy);
    const auto clean = mean_std(c.clean_accuracy);
    out.push_back({{"assignments", c.assignments},
                   {"seeds", seeds},
                   {"asr", c.asr},
                   {"asr_mean", asr.mean},
                   {"asr_std", asr.std},
                   {"attacked_accuracy_mean", acc.mean},
                   {"attacked_accuracy_std", acc.std},
                   {"clean_accuracy_mean", clean.mean},
                   {"clean_accuracy_std", clean.std}});
  }
  return out;
}

}  // namespace tagattack
