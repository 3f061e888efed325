#pragma once

// Stealth audit of an attacked graph against its clean snapshot.
//
//   r_u = sum_{j in N(u)} x_j / sqrt(d_u d_j),   h_u = cos(r_u, x_u)
//
// Bound checks, each with an additive slack:
//   text:      cos(x, x') >= 1 - rho^2 (1 - gamma)
//   homophily: |dh_u| <= (1 / sqrt(d_u d_w)) * |x_w| / |r_u|  per removed edge
//   degree:    mean_u |d'_u - d_u| = 2 |dE| / |V|            (exact)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tagattack/candidates.hpp"
#include "tagattack/encoder.hpp"
#include "tagattack/errors.hpp"
#include "tagattack/graph.hpp"
#include "tagattack/linalg.hpp"

namespace tagattack {

inline constexpr std::size_t kHomophilyBins = 40;

inline std::size_t homophily_bin(double h) {
  const auto b = static_cast<std::ptrdiff_t>(std::floor((h + 1.0) / 0.05));
  return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(b, 0, kHomophilyBins - 1));
}

struct HomophilyProfile {
  std::vector<std::optional<double>> h;  // empty for isolated nodes
  std::vector<std::size_t> histogram = std::vector<std::size_t>(kHomophilyBins, 0);
};

inline Vector neighbor_aggregate(const TextAttributedGraph& g, const Matrix& x, NodeId u) {
  Vector r = Vector::Zero(x.cols());
  const double du = static_cast<double>(g.degree(u));
  for (NodeId j : g.neighbors(u))
    r += x.row(j).transpose() / std::sqrt(du * static_cast<double>(g.degree(j)));
  return r;
}

inline std::optional<double> node_homophily(const TextAttributedGraph& g, const Matrix& x, NodeId u) {
  if (g.degree(u) == 0) return std::nullopt;
  return cosine_similarity(neighbor_aggregate(g, x, u), x.row(u).transpose());
}

inline HomophilyProfile homophily_profile(const TextAttributedGraph& g, const Matrix& x) {
  if (static_cast<std::size_t>(x.rows()) != g.num_nodes())
    throw PreconditionError("homophily: feature rows must match node count");
  HomophilyProfile p;
  p.h.resize(g.num_nodes());
  for (NodeId u = 0; u < g.num_nodes(); ++u) {
    p.h[u] = node_homophily(g, x, u);
    if (p.h[u]) ++p.histogram[homophily_bin(*p.h[u])];
  }
  return p;
}

// ---------------------------------------------------------------------------

struct StealthSnapshot {
  const TextAttributedGraph* graph;
  const Matrix* features;
};

// Optional fluency hook: request {"text": s}, response {"ppl": x}.
class PerplexityScorer {
 public:
  explicit PerplexityScorer(const std::string& command) : bridge_(command) {}
  double score(const std::string& text) {
    const auto reply = bridge_.request({{"text", text}});
    if (!reply.contains("ppl") || !reply["ppl"].is_number())
      throw std::runtime_error("perplexity bridge: reply lacks a numeric ppl");
    return reply["ppl"].get<double>();
  }

 private:
  ProcessBridge bridge_;
};

struct StealthConfig {
  double gamma = 0.5;
  double similarity_slack = 0.05;
  double homophily_slack = 0.05;
};

struct TextSimilarity {
  NodeId node = 0;
  double similarity = 0.0;
  double rho = 0.0;
  double bound = 0.0;
  bool violated = false;
};

struct HomophilyBoundCheck {
  NodeId node = 0;
  Edge edge;
  double change = 0.0;
  double bound = 0.0;
  bool violated = false;
};

struct StealthReport {
  std::size_t num_nodes = 0;
  std::size_t removed_edges = 0;
  std::size_t added_edges = 0;

  double mean_abs_homophily_change = 0.0;
  double max_abs_homophily_change = 0.0;
  std::vector<std::size_t> homophily_before;
  std::vector<std::size_t> homophily_after;

  std::uint64_t degree_l1_total = 0;  // sum_u |d'_u - d_u|
  double mean_degree_shift = 0.0;
  double degree_identity_value = 0.0;  // 2 |dE| / |V|
  bool degree_identity_holds = true;
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> degree_histogram;

  std::vector<TextSimilarity> texts;
  double mean_similarity = 1.0;
  double min_similarity = 1.0;

  std::vector<HomophilyBoundCheck> homophily_checks;
  std::size_t similarity_violations = 0;
  std::size_t homophily_violations = 0;
  std::size_t degree_violations = 0;

  std::optional<double> ppl;
};

// Fraction of positions whose words differ; 1 when the lengths disagree.
inline double replacement_fraction(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.size() != b.size()) return 1.0;
  if (a.empty()) return 0.0;
  std::size_t diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += a[i] != b[i];
  return static_cast<double>(diff) / static_cast<double>(a.size());
}

inline StealthReport stealth_report(const StealthSnapshot& before, const StealthSnapshot& after,
                                    const HashingEncoder& encoder, const StealthConfig& cfg,
                                    PerplexityScorer* scorer = nullptr) {
  const TextAttributedGraph& g0 = *before.graph;
  const TextAttributedGraph& g1 = *after.graph;
  const std::size_t n = g0.num_nodes();
  if (g1.num_nodes() != n) throw PreconditionError("stealth report: node counts differ");
  StealthReport rep;
  rep.num_nodes = n;

  // Degrees, in integers.
  std::vector<Edge> removed;
  std::vector<Edge> added;
  std::set_difference(g0.edges().begin(), g0.edges().end(), g1.edges().begin(), g1.edges().end(),
                      std::back_inserter(removed));
  std::set_difference(g1.edges().begin(), g1.edges().end(), g0.edges().begin(), g0.edges().end(),
                      std::back_inserter(added));
  rep.removed_edges = removed.size();
  rep.added_edges = added.size();
  for (NodeId u = 0; u < n; ++u) {
    const std::size_t d0 = g0.degree(u);
    const std::size_t d1 = g1.degree(u);
    rep.degree_l1_total += d0 > d1 ? d0 - d1 : d1 - d0;
    ++rep.degree_histogram[d0].first;
    ++rep.degree_histogram[d1].second;
  }
  const std::uint64_t delta_e = removed.size() + added.size();
  if (n > 0) {
    rep.mean_degree_shift = static_cast<double>(rep.degree_l1_total) / static_cast<double>(n);
    rep.degree_identity_value = static_cast<double>(2 * delta_e) / static_cast<double>(n);
  }
  // Exact for deletion-only or insertion-only attacks; mixed edits may cancel.
  rep.degree_identity_holds = rep.degree_l1_total == 2 * delta_e;
  rep.degree_violations = rep.degree_identity_holds ? 0 : 1;

  // Homophily profiles of both snapshots.
  const HomophilyProfile h0 = homophily_profile(g0, *before.features);
  const HomophilyProfile h1 = homophily_profile(g1, *after.features);
  rep.homophily_before = h0.histogram;
  rep.homophily_after = h1.histogram;
  std::size_t both = 0;
  double sum = 0.0;
  for (NodeId u = 0; u < n; ++u) {
    if (!h0.h[u] || !h1.h[u]) continue;
    const double d = std::abs(*h1.h[u] - *h0.h[u]);
    sum += d;
    rep.max_abs_homophily_change = std::max(rep.max_abs_homophily_change, d);
    ++both;
  }
  rep.mean_abs_homophily_change = both ? sum / static_cast<double>(both) : 0.0;

  // First-order homophily bound, one removed edge at a time on the clean
  // snapshot.
  const Matrix& x0 = *before.features;
  for (const Edge& e : removed) {
    const std::vector<Edge> single{e};
    const TextAttributedGraph g_minus = remove_edges(g0, single);
    for (const auto& [u, w] : {std::pair{e.u, e.v}, std::pair{e.v, e.u}}) {
      const auto before_h = node_homophily(g0, x0, u);
      const auto after_h = node_homophily(g_minus, x0, u);
      if (!before_h || !after_h) continue;
      const double r_norm = neighbor_aggregate(g0, x0, u).norm();
      HomophilyBoundCheck c;
      c.node = u;
      c.edge = e;
      c.change = std::abs(*after_h - *before_h);
      c.bound = r_norm > 0.0 ? x0.row(w).norm() /
                                   (std::sqrt(static_cast<double>(g0.degree(u) * g0.degree(w))) * r_norm)
                             : std::numeric_limits<double>::infinity();
      c.violated = c.change > c.bound + cfg.homophily_slack;
      rep.homophily_violations += c.violated;
      rep.homophily_checks.push_back(c);
    }
  }

  // Text similarity of every node whose tokens changed.
  double sim_sum = 0.0;
  std::vector<double> ppls;
  for (NodeId u = 0; u < n; ++u) {
    if (g0.tokens(u) == g1.tokens(u)) continue;
    TextSimilarity t;
    t.node = u;
    t.rho = replacement_fraction(g0.tokens(u), g1.tokens(u));
    t.similarity = cosine_similarity(encoder.encode(g0.text(u)), encoder.encode(g1.text(u)));
    t.bound = similarity_lower_bound(t.rho, cfg.gamma);
    t.violated = t.similarity < t.bound - cfg.similarity_slack;
    rep.similarity_violations += t.violated;
    sim_sum += t.similarity;
    rep.min_similarity = std::min(rep.min_similarity, t.similarity);
    rep.texts.push_back(t);
    if (scorer) ppls.push_back(scorer->score(g1.raw_text(u)));
  }
  if (!rep.texts.empty()) rep.mean_similarity = sim_sum / static_cast<double>(rep.texts.size());
  if (scorer && !ppls.empty()) {
    double s = 0.0;
    for (double p : ppls) s += p;
    rep.ppl = s / static_cast<double>(ppls.size());
  }
  return rep;
}

// Share of perturbed texts within their similarity bound.
inline double similarity_bound_pass_rate(const StealthReport& r) {
  if (r.texts.empty()) return 1.0;
  return 1.0 - static_cast<double>(r.similarity_violations) / static_cast<double>(r.texts.size());
}

inline nlohmann::json stealth_to_json(const StealthReport& r) {
  nlohmann::json j;
  j["num_nodes"] = r.num_nodes;
  j["removed_edges"] = r.removed_edges;
  j["added_edges"] = r.added_edges;
  j["homophily"] = {{"mean_abs_change", r.mean_abs_homophily_change},
                    {"max_abs_change", r.max_abs_homophily_change},
                    {"bound_checks", r.homophily_checks.size()},
                    {"bound_violations", r.homophily_violations}};
  j["degree"] = {{"l1_total", r.degree_l1_total},
                 {"mean_l1_shift", r.mean_degree_shift},
                 {"identity_value", r.degree_identity_value},
                 {"identity_holds", r.degree_identity_holds}};
  j["text"] = {{"perturbed_nodes", r.texts.size()},
               {"mean_similarity", r.mean_similarity},
               {"min_similarity", r.min_similarity},
               {"bound_violations", r.similarity_violations},
               {"bound_pass_rate", similarity_bound_pass_rate(r)}};
  j["violations"] = {{"similarity", r.similarity_violations},
                     {"homophily", r.homophily_violations},
                     {"degree", r.degree_violations}};
  j["ppl"] = r.ppl ? nlohmann::json(*r.ppl) : nlohmann::json(nullptr);
  return j;
}

inline void write_homophily_csv(const StealthReport& r, std::ostream& out) {
  out << "bin_low,bin_high,count_before,count_after\n";
  for (std::size_t b = 0; b < kHomophilyBins; ++b) {
    const double lo = -1.0 + 0.05 * static_cast<double>(b);
    out << lo << ',' << lo + 0.05 << ',' << r.homophily_before[b] << ',' << r.homophily_after[b] << '\n';
  }
}

inline void write_degree_csv(const StealthReport& r, std::ostream& out) {
  out << "degree,count_before,count_after\n";
  for (const auto& [d, c] : r.degree_histogram) out << d << ',' << c.first << ',' << c.second << '\n';
}

}  // namespace tagattack
