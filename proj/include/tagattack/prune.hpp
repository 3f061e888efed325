#pragma once

// Edge pruning around a target node v.
//
//   Score(u) = a1 (1 - delta(u)) + a2 I_u(v, k) + a3 / deg(u)
//
// The nexus is v plus its highest-scoring k-hop neighbors. Edges inside the
// nexus that lie on a path of length <= k from v form the players of an edge
// game whose payoff is v's probability for its clean class; their Shapley
// values are fitted by kernel-weighted least squares
//   phi = (M^T U M)^-1 M^T U y
// and the top-k2 edges are removed.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/QR>

#include "tagattack/errors.hpp"
#include "tagattack/gcn.hpp"
#include "tagattack/graph.hpp"
#include "tagattack/influence.hpp"
#include "tagattack/rng.hpp"
#include "tagattack/victim.hpp"

namespace tagattack {

struct ScoreWeights {
  double disparity = 1.0;  // a1
  double influence = 1.0;  // a2
  double degree = 1.0;     // a3
};

struct VulnerabilityScore {
  NodeId node = 0;
  double disparity_term = 0.0;
  double influence_term = 0.0;
  double degree_term = 0.0;
  double total = 0.0;
};

inline double combine_score(const ScoreWeights& w, double disparity, double influence, double degree) {
  return w.disparity * disparity + w.influence * influence + w.degree * degree;
}

// Model state on the clean graph with v's text replaced: full forward
// trace for the influence terms and the resulting predictions.
class PruneContext {
 public:
  PruneContext(const Victim& victim, NodeId v, const TokenSequence& text)
      : victim_(&victim), v_(v), override_(victim.override_for(v, text)) {
    features_ = victim.features();
    features_.row(v) = override_.row;
    trace_ = forward_trace(victim.model(), victim.adjacency(), features_);
  }

  PruneContext(const Victim& victim, NodeId v) : PruneContext(victim, v, victim.graph().text(v)) {}

  const Victim& victim() const noexcept { return *victim_; }
  const TextAttributedGraph& graph() const noexcept { return victim_->graph(); }
  NodeId target() const noexcept { return v_; }
  const FeatureOverride& feature_override() const noexcept { return override_; }
  const Matrix& features() const noexcept { return features_; }
  const ForwardTrace& trace() const noexcept { return trace_; }
  const Matrix& probs() const noexcept { return trace_.probs; }
  int hops() const noexcept { return victim_->num_layers(); }

  // v's probability for `cls` with `removed` edges deleted.
  double target_probability(const std::vector<Edge>& removed, ClassId cls) const {
    const NodeId t[1] = {v_};
    return victim_->probs_without(t, removed, &override_)(0, cls);
  }

 private:
  const Victim* victim_;
  NodeId v_;
  FeatureOverride override_;
  Matrix features_;
  ForwardTrace trace_;
};

inline VulnerabilityScore vulnerability_score(const PruneContext& ctx, NodeId u, const ScoreWeights& w,
                                              InfluenceMode mode = InfluenceMode::kJacobian) {
  const NodeId v = ctx.target();
  if (u == v) throw PreconditionError("vulnerability score is defined for neighbors, not the target");
  VulnerabilityScore s;
  s.node = u;
  s.disparity_term = 1.0 - confidence_gap(ctx.probs().row(u));
  s.influence_term = jacobian_influence(ctx.victim().model(), ctx.victim().adjacency(), ctx.trace(), u, v,
                                        ctx.hops(), mode)
                         .normalized;
  const std::size_t d = ctx.graph().degree(u);
  s.degree_term = d == 0 ? 1.0 : 1.0 / static_cast<double>(d);
  s.total = combine_score(w, s.disparity_term, s.influence_term, s.degree_term);
  return s;
}

struct Nexus {
  std::vector<NodeId> nodes;  // ascending, includes v
  std::vector<VulnerabilityScore> ranked;
};

// v plus the `size` best k-hop neighbors by score. Scores are compared after
// rounding to 1e-10 so that symmetric neighbors tie exactly and fall back to
// node order.
inline Nexus build_nexus(const PruneContext& ctx, std::size_t size, const ScoreWeights& w,
                         InfluenceMode mode = InfluenceMode::kJacobian) {
  if (size < 1) throw PreconditionError("nexus size must be at least 1");
  const NodeId v = ctx.target();
  Nexus out;
  for (const auto& [u, hops] : hop_ball(ctx.graph(), v, ctx.hops()))
    if (u != v) out.ranked.push_back(vulnerability_score(ctx, u, w, mode));
  auto key = [](double x) { return std::round(x * 1e10); };
  std::sort(out.ranked.begin(), out.ranked.end(), [&](const VulnerabilityScore& a, const VulnerabilityScore& b) {
    const double ka = key(a.total);
    const double kb = key(b.total);
    return ka != kb ? ka > kb : a.node < b.node;
  });
  out.nodes.push_back(v);
  for (std::size_t i = 0; i < std::min(size, out.ranked.size()); ++i) out.nodes.push_back(out.ranked[i].node);
  std::sort(out.nodes.begin(), out.nodes.end());
  return out;
}

// Edges with both endpoints in the nexus that extend a path of length <= k
// from v inside the nexus subgraph.
inline std::vector<Edge> candidate_edges(const TextAttributedGraph& g, std::span<const NodeId> nexus, NodeId v,
                                         int k) {
  auto in_nexus = [&](NodeId x) { return std::binary_search(nexus.begin(), nexus.end(), x); };
  std::map<NodeId, int> dist{{v, 0}};
  std::vector<NodeId> frontier{v};
  for (int h = 1; h <= k && !frontier.empty(); ++h) {
    std::vector<NodeId> next;
    for (NodeId x : frontier)
      for (NodeId y : g.neighbors(x))
        if (in_nexus(y) && dist.emplace(y, h).second) next.push_back(y);
    frontier = std::move(next);
  }
  std::vector<Edge> out;
  for (const Edge& e : g.edges()) {
    if (!in_nexus(e.u) || !in_nexus(e.v)) continue;
    const auto du = dist.find(e.u);
    const auto dv = dist.find(e.v);
    int near = k + 1;
    if (du != dist.end()) near = std::min(near, du->second);
    if (dv != dist.end()) near = std::min(near, dv->second);
    if (near + 1 <= k) out.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------

// pi(z) = (n-1) / (C(n,z) z (n-z)) for 0 < z < n.
inline double shapley_kernel_weight(std::size_t n, std::size_t z) {
  if (z == 0 || z >= n) throw PreconditionError("kernel weight needs 0 < z < n");
  double binom = 1.0;
  const std::size_t k = std::min(z, n - z);
  for (std::size_t i = 1; i <= k; ++i) binom = binom * static_cast<double>(n - k + i) / static_cast<double>(i);
  return static_cast<double>(n - 1) / (binom * static_cast<double>(z) * static_cast<double>(n - z));
}

struct EdgeMaskDesign {
  std::vector<Edge> edges;
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> mask;  // k_s x n, 1 = retained
  Vector weights;                                                     // U diagonal
  Vector y_hat;
  bool full_design = false;
};

// Full design when all 2^n - 2 proper patterns fit in `samples`; otherwise
// sizes drawn proportionally to the total kernel mass of each size and a
// uniform subset of that size, every row then carrying the same weight.
inline EdgeMaskDesign sample_edge_design(std::vector<Edge> edges, std::size_t samples, std::uint64_t seed) {
  const std::size_t n = edges.size();
  EdgeMaskDesign d;
  d.edges = std::move(edges);
  if (n < 2) {
    d.mask.resize(0, static_cast<Eigen::Index>(n));
    d.full_design = true;
    return d;
  }
  const bool full = n < 63 && (std::uint64_t{1} << n) - 2 <= samples;
  if (full) {
    const std::uint64_t rows = (std::uint64_t{1} << n) - 2;
    d.full_design = true;
    d.mask.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n));
    d.weights.resize(static_cast<Eigen::Index>(rows));
    for (std::uint64_t bits = 1; bits <= rows; ++bits) {
      const auto r = static_cast<Eigen::Index>(bits - 1);
      for (std::size_t j = 0; j < n; ++j) d.mask(r, static_cast<Eigen::Index>(j)) = bits >> j & 1U;
      d.weights[r] = shapley_kernel_weight(n, static_cast<std::size_t>(std::popcount(bits)));
    }
    return d;
  }
  std::vector<double> size_mass(n + 1, 0.0);
  double total = 0.0;
  for (std::size_t z = 1; z < n; ++z) {
    size_mass[z] = static_cast<double>(n - 1) / (static_cast<double>(z) * static_cast<double>(n - z));
    total += size_mass[z];
  }
  Rng rng(seed);
  d.mask.setZero(static_cast<Eigen::Index>(samples), static_cast<Eigen::Index>(n));
  d.weights = Vector::Constant(static_cast<Eigen::Index>(samples), total / static_cast<double>(samples));
  std::vector<std::size_t> pool(n);
  for (std::size_t r = 0; r < samples; ++r) {
    const std::size_t z = weighted_index(size_mass, rng);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t j : sample_without_replacement(pool, z, rng))
      d.mask(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = 1;
  }
  return d;
}

struct EdgeAttribution {
  std::vector<Edge> edges;
  Vector phi;
  double intercept = 0.0;
  double y_full = 0.0;
  double y_empty = 0.0;
  bool full_design = false;
  std::size_t samples = 0;

  // Edge indices by descending phi, ties by canonical edge order.
  std::vector<std::size_t> ranking() const {
    std::vector<std::size_t> idx(edges.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const double pa = phi[static_cast<Eigen::Index>(a)];
      const double pb = phi[static_cast<Eigen::Index>(b)];
      return pa != pb ? pa > pb : edges[a] < edges[b];
    });
    return idx;
  }
};

struct EdgeShapleyConfig {
  std::size_t samples = 0;  // 0 picks max(2n + 16, 64)
  std::uint64_t seed = 0;
  double ridge = 1e-8;
  double constraint_weight = 1e6;
};

inline std::size_t default_edge_samples(std::size_t n) { return std::max<std::size_t>(2 * n + 16, 64); }

// Weighted least squares with intercept on the design; the full and empty
// patterns enter as heavily weighted rows. Solved through QR of the
// row-scaled system stacked over sqrt(ridge) * I.
inline EdgeAttribution solve_edge_shapley(const EdgeMaskDesign& d, double y_full, double y_empty,
                                          double ridge, double constraint_weight) {
  const auto n = static_cast<Eigen::Index>(d.edges.size());
  const Eigen::Index rows = d.mask.rows();
  const Eigen::Index total = rows + 2 + n + 1;
  Matrix a = Matrix::Zero(total, n + 1);
  Vector b = Vector::Zero(total);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double s = std::sqrt(d.weights[r]);
    a(r, 0) = s;
    for (Eigen::Index j = 0; j < n; ++j) a(r, j + 1) = s * d.mask(r, j);
    b[r] = s * d.y_hat[r];
  }
  const double sc = std::sqrt(constraint_weight);
  a.row(rows).setConstant(sc);
  b[rows] = sc * y_full;
  a(rows + 1, 0) = sc;
  b[rows + 1] = sc * y_empty;
  const double sr = std::sqrt(ridge);
  for (Eigen::Index j = 0; j <= n; ++j) a(rows + 2 + j, j) = sr;

  Eigen::ColPivHouseholderQR<Matrix> qr(a);
  if (qr.rank() < n + 1) {
    const auto diag = qr.matrixR().diagonal().cwiseAbs();
    const double cond = diag.minCoeff() > 0.0 ? diag.maxCoeff() / diag.minCoeff()
                                              : std::numeric_limits<double>::infinity();
    throw NumericalError("edge attribution system is singular", cond);
  }
  const Vector x = qr.solve(b);
  EdgeAttribution out;
  out.edges = d.edges;
  out.intercept = x[0];
  out.phi = x.tail(n);
  out.y_full = y_full;
  out.y_empty = y_empty;
  out.full_design = d.full_design;
  out.samples = static_cast<std::size_t>(rows);
  if (!out.phi.allFinite()) throw NumericalError("edge attribution is not finite", 0.0);
  return out;
}

// y for a retained-edge pattern: v's probability for its clean class with
// every non-retained candidate edge removed.
inline double edge_game_value(const PruneContext& ctx, const std::vector<Edge>& edges,
                              const std::vector<std::uint8_t>& retained) {
  std::vector<Edge> removed;
  for (std::size_t j = 0; j < edges.size(); ++j)
    if (!retained[j]) removed.push_back(edges[j]);
  return ctx.target_probability(removed, ctx.victim().clean_prediction(ctx.target()));
}

inline EdgeAttribution edge_shapley_attribution(const PruneContext& ctx, std::vector<Edge> edges,
                                                const EdgeShapleyConfig& cfg) {
  const std::size_t n = edges.size();
  if (n == 0) throw PreconditionError("edge attribution needs at least one candidate edge");
  const std::size_t samples = cfg.samples ? cfg.samples : default_edge_samples(n);
  if (samples < n + 2) throw PreconditionError("edge samples must be at least n + 2");
  EdgeMaskDesign d = sample_edge_design(std::move(edges), samples, cfg.seed);
  d.y_hat.resize(d.mask.rows());
  std::vector<std::uint8_t> retained(n);
  for (Eigen::Index r = 0; r < d.mask.rows(); ++r) {
    for (std::size_t j = 0; j < n; ++j) retained[j] = d.mask(r, static_cast<Eigen::Index>(j));
    d.y_hat[r] = edge_game_value(ctx, d.edges, retained);
  }
  std::fill(retained.begin(), retained.end(), 1);
  const double y_full = edge_game_value(ctx, d.edges, retained);
  std::fill(retained.begin(), retained.end(), 0);
  const double y_empty = edge_game_value(ctx, d.edges, retained);
  return solve_edge_shapley(d, y_full, y_empty, cfg.ridge, cfg.constraint_weight);
}

// ---------------------------------------------------------------------------

struct PruneResult {
  TextAttributedGraph graph;
  std::vector<Edge> removed;  // ranking order
};

inline std::vector<Edge> top_edges(const EdgeAttribution& attr, std::size_t k2) {
  std::vector<Edge> out;
  for (std::size_t i : attr.ranking()) {
    if (out.size() >= k2) break;
    out.push_back(attr.edges[i]);
  }
  return out;
}

inline PruneResult prune_edges_topk(const TextAttributedGraph& g, const EdgeAttribution& attr, std::size_t k2) {
  PruneResult out{g, top_edges(attr, k2)};
  if (!out.removed.empty()) out.graph = remove_edges(g, out.removed);
  return out;
}

inline void write_attribution_csv(const EdgeAttribution& attr, const std::vector<Edge>& pruned,
                                  std::ostream& out) {
  for (std::size_t i = 0; i < attr.edges.size(); ++i) {
    const Edge& e = attr.edges[i];
    const bool p = std::find(pruned.begin(), pruned.end(), e) != pruned.end();
    out << e.u << ',' << e.v << ',' << attr.phi[static_cast<Eigen::Index>(i)] << ',' << (p ? 1 : 0) << '\n';
  }
}

// ---------------------------------------------------------------------------

struct PruneConfig {
  std::size_t k2 = 4;
  std::size_t nexus_size = 8;
  ScoreWeights weights;
  InfluenceMode influence_mode = InfluenceMode::kJacobian;
  EdgeShapleyConfig shapley;
};

struct PruneOutcome {
  Nexus nexus;
  std::optional<EdgeAttribution> attribution;
  std::vector<Edge> removed;
};

// Full refinement stage for one target whose text is `text`. Returns no
// removals when the candidate set is empty or k2 is zero.
inline PruneOutcome run_edge_pruning(const Victim& victim, NodeId v, const TokenSequence& text,
                                     const PruneConfig& cfg) {
  PruneOutcome out;
  if (cfg.k2 == 0) return out;
  const PruneContext ctx(victim, v, text);
  out.nexus = build_nexus(ctx, cfg.nexus_size, cfg.weights, cfg.influence_mode);
  auto edges = candidate_edges(victim.graph(), out.nexus.nodes, v, ctx.hops());
  if (edges.empty()) return out;
  out.attribution = edge_shapley_attribution(ctx, std::move(edges), cfg.shapley);
  out.removed = top_edges(*out.attribution, cfg.k2);
  return out;
}

}  // namespace tagattack
