// Command-line front end.
//
//   tagattack train     --config run.ini [--set key=value]... [--model out.json]
//   tagattack attack    --config run.ini --out DIR [--workers N]
//   tagattack audit     --config run.ini --before DIR --after DIR --out DIR
//   tagattack sweep     --config run.ini --param beta=0,0.1,0.2 --seeds 5 --out DIR
//   tagattack synth-gen --config run.ini --out DIR
//
// Exit status: 0 ok, 2 configuration error, 3 dataset error, 1 otherwise.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tagattack.hpp"

namespace fs = std::filesystem;
using namespace tagattack;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDataset = 3;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "flat key = value configuration file");
  app->add_option("-s,--set", c.overrides, "override one setting, key=value")->take_all();
}

RunConfig resolve(const Common& c) { return load_config(c.config, c.overrides); }

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + p.string());
  out.precision(17);
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(item);
  return out;
}

int cmd_train(const Common& common, const std::string& model_out, const std::string& splits_out) {
  const RunConfig cfg = resolve(common);
  const Dataset data = load_dataset(cfg);
  for (const auto& w : data.warnings) std::cerr << "warning: " << w << '\n';
  TrainingLog log;
  RunConfig fresh = cfg;
  fresh.model_path.clear();
  const auto victim = prepare_victim(fresh, data, &log);
  if (!model_out.empty()) save_model(victim->model(), model_out);
  if (!splits_out.empty()) save_splits(data.split, splits_out);
  const Matrix& p = victim->clean_probs();
  nlohmann::json j = {{"train_accuracy", accuracy(p, data.graph.labels(), data.split.nodes(Role::kTrain))},
                      {"val_accuracy", accuracy(p, data.graph.labels(), data.split.nodes(Role::kVal))},
                      {"test_accuracy", accuracy(p, data.graph.labels(), data.split.nodes(Role::kTest))},
                      {"best_epoch", log.best_epoch},
                      {"nodes", data.graph.num_nodes()},
                      {"edges", data.graph.num_edges()}};
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_attack(const Common& common, const std::string& out, std::size_t workers) {
  const RunConfig cfg = resolve(common);
  const Dataset data = load_dataset(cfg);
  const auto victim = prepare_victim(cfg, data);
  std::unique_ptr<PerplexityScorer> scorer;
  if (!cfg.ppl_command.empty()) scorer = std::make_unique<PerplexityScorer>(cfg.ppl_command);
  AttackReport rep = run_attack(cfg, *victim, data.split, make_generator_factory(cfg, data), workers, scorer.get());
  rep.warnings.insert(rep.warnings.begin(), data.warnings.begin(), data.warnings.end());
  write_report(rep, out);
  std::cout << "targets " << rep.records.size() << "  clean_acc " << rep.clean_accuracy << "  attacked_acc "
            << rep.attacked_accuracy << "  asr " << (rep.asr ? std::to_string(*rep.asr) : "null") << '\n';
  return 0;
}

int cmd_audit(const Common& common, const std::string& before, const std::string& after, const std::string& out) {
  const RunConfig cfg = resolve(common);
  const auto g0 = load_graph(fs::path(before) / "nodes.tsv", fs::path(before) / "edges.tsv", cfg.num_classes);
  const auto g1 = load_graph(fs::path(after) / "nodes.tsv", fs::path(after) / "edges.tsv", g0.num_classes());
  if (g0.num_nodes() != g1.num_nodes()) throw DatasetError("before and after graphs have different node counts");
  const HashingEncoder enc = make_encoder(cfg);
  const Matrix x0 = enc.encode_all(g0);
  const Matrix x1 = enc.encode_all(g1);
  std::unique_ptr<PerplexityScorer> scorer;
  if (!cfg.ppl_command.empty()) scorer = std::make_unique<PerplexityScorer>(cfg.ppl_command);
  const StealthReport rep = stealth_report({&g0, &x0}, {&g1, &x1}, enc,
                                           {cfg.gamma, cfg.similarity_slack, cfg.homophily_slack}, scorer.get());
  fs::create_directories(out);
  open_out(fs::path(out) / "stealth.json") << stealth_to_json(rep).dump(2) << '\n';
  auto hist = open_out(fs::path(out) / "homophily_hist.csv");
  write_homophily_csv(rep, hist);
  auto deg = open_out(fs::path(out) / "degree_hist.csv");
  write_degree_csv(rep, deg);
  std::cout << "perturbed_texts " << rep.texts.size() << "  removed_edges " << rep.removed_edges
            << "  degree_identity " << (rep.degree_identity_holds ? "ok" : "VIOLATED") << "  sim_violations "
            << rep.similarity_violations << "  homophily_violations " << rep.homophily_violations << '\n';
  return 0;
}

int cmd_sweep(const Common& common, const std::vector<std::string>& params, std::size_t seeds,
              const std::string& out, std::size_t workers) {
  const RunConfig cfg = resolve(common);
  std::vector<std::vector<std::string>> grid{{}};
  for (const auto& p : params) {
    const auto eq = p.find('=');
    if (eq == std::string::npos) throw ConfigError("--param must be key=v1,v2,...: " + p);
    const std::string key = p.substr(0, eq);
    std::vector<std::vector<std::string>> next;
    for (const auto& g : grid)
      for (const auto& v : split_list(p.substr(eq + 1))) {
        auto row = g;
        row.push_back(key + "=" + v);
        next.push_back(std::move(row));
      }
    grid = std::move(next);
  }
  if (seeds == 0) throw ConfigError("--seeds must be positive");
  std::vector<std::uint64_t> seed_list;
  for (std::size_t i = 0; i < seeds; ++i) seed_list.push_back(cfg.seed + i);
  const auto cells = run_sweep(cfg, grid, seed_list, workers);

  fs::create_directories(out);
  open_out(fs::path(out) / "sweep.json") << sweep_to_json(cells, seed_list).dump(2) << '\n';
  auto csv = open_out(fs::path(out) / "sweep.csv");
  csv << "setting,asr_mean,asr_std,attacked_acc_mean,attacked_acc_std,clean_acc_mean,seeds\n";
  for (const auto& c : cells) {
    std::string name;
    for (const auto& a : c.assignments) name += (name.empty() ? "" : ";") + a;
    const auto asr = mean_std(c.asr);
    const auto acc = mean_std(c.attacked_accuracy);
    const auto clean = mean_std(c.clean_accuracy);
    csv << '"' << name << '"' << ',' << asr.mean << ',' << asr.std << ',' << acc.mean << ',' << acc.std << ','
        << clean.mean << ',' << c.asr.size() << '\n';
    std::cout << (name.empty() ? "(base)" : name) << "  asr " << asr.mean << " +- " << asr.std << "  acc "
              << acc.mean << " +- " << acc.std << '\n';
  }
  return 0;
}

int cmd_synth(const Common& common, const std::string& out) {
  RunConfig cfg = resolve(common);
  const SyntheticBenchmark b = generate_synthetic(cfg.synthetic, cfg.synthetic_seed());
  save_synthetic(b, out);
  save_splits(split_nodes(b.graph, {}, derive_seed(cfg.seed, {salt::kSplit})), fs::path(out) / "splits.tsv");
  std::cout << "nodes " << b.graph.num_nodes() << "  edges " << b.graph.num_edges() << "  lexicon "
            << b.lexicon.size() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial attacks on text-attributed graphs"};
  app.require_subcommand(1);

  Common train_c, attack_c, audit_c, sweep_c, synth_c;
  std::string model_out, splits_out, attack_out, before, after, audit_out, sweep_out, synth_out;
  std::size_t attack_workers = 1, sweep_workers = 1, seeds = 5;
  std::vector<std::string> params;

  auto* train = app.add_subcommand("train", "train the victim GCN and report accuracy");
  add_common(train, train_c);
  train->add_option("--model", model_out, "write the checkpoint here");
  train->add_option("--splits", splits_out, "write the split assignment here");

  auto* attack = app.add_subcommand("attack", "run the attack and write a report directory");
  add_common(attack, attack_c);
  attack->add_option("-o,--out", attack_out, "output directory")->required();
  attack->add_option("-j,--workers", attack_workers, "worker threads")->check(CLI::PositiveNumber);

  auto* audit = app.add_subcommand("audit", "stealth audit between two graph snapshots");
  add_common(audit, audit_c);
  audit->add_option("--before", before, "directory with nodes.tsv and edges.tsv")->required();
  audit->add_option("--after", after, "directory with nodes.tsv and edges.tsv")->required();
  audit->add_option("-o,--out", audit_out, "output directory")->required();

  auto* sweep = app.add_subcommand("sweep", "grid over settings and seeds, mean and std of ASR/ACC");
  add_common(sweep, sweep_c);
  sweep->add_option("-p,--param", params, "key=v1,v2,... (repeatable; grid is the product)")->take_all();
  sweep->add_option("--seeds", seeds, "number of consecutive seeds starting at the config seed");
  sweep->add_option("-o,--out", sweep_out, "output directory")->required();
  sweep->add_option("-j,--workers", sweep_workers, "worker threads")->check(CLI::PositiveNumber);

  auto* synth = app.add_subcommand("synth-gen", "write the synthetic benchmark as dataset files");
  add_common(synth, synth_c);
  synth->add_option("-o,--out", synth_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) return cmd_train(train_c, model_out, splits_out);
    if (*attack) return cmd_attack(attack_c, attack_out, attack_workers);
    if (*audit) return cmd_audit(audit_c, before, after, audit_out);
    if (*sweep) return cmd_sweep(sweep_c, params, seeds, sweep_out, sweep_workers);
    if (*synth) return cmd_synth(synth_c, synth_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DatasetError& e) {
    std::cerr << "dataset error: " << e.what() << '\n';
    return kExitDataset;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
