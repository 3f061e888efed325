#pragma once

// Topological SHAP: token attribution for a target node's text where the
// payoff of a coalition is the summed class-probability vector of the target
// and its neighbors when that coalition of tokens is masked.
//
//   f(S)    = sum_{u in {v} ∪ N(v)} p_u(G, encode(T_S))
//   phi(i)  = sum_{S ⊆ W\{i}} |S|!(m-|S|-1)!/m! [f(S) - f(S ∪ {i})]
//   xi(i)   = sum_{u in {v} ∪ N(v)} phi^{y_u}(i)
//
// The marginal is mirrored: masking one more token subtracts its
// contribution, so phi sums to f(∅) - f(W) per class.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tagattack/encoder.hpp"
#include "tagattack/errors.hpp"
#include "tagattack/gcn.hpp"
#include "tagattack/graph.hpp"
#include "tagattack/rng.hpp"
#include "tagattack/victim.hpp"

namespace tagattack {

enum class Estimator { kExact, kSampled };

inline std::string_view estimator_name(Estimator e) {
  return e == Estimator::kExact ? "exact" : "sampled";
}

inline constexpr std::size_t kMaxExactTokens = 15;

// Sorted, unique masked token positions.
struct Coalition {
  std::vector<std::size_t> masked;

  static Coalition from_bits(std::uint64_t bits, std::size_t m) {
    Coalition c;
    for (std::size_t i = 0; i < m; ++i)
      if (bits >> i & 1U) c.masked.push_back(i);
    return c;
  }
  bool operator==(const Coalition&) const = default;
};

struct CoalitionSample {
  Estimator estimator = Estimator::kSampled;
  std::size_t num_tokens = 0;
  // Token orders for the permutation estimator (empty in exact mode).
  std::vector<std::vector<std::size_t>> permutations;

  // Exact mode: every subset of the tokens. Sampled mode: for each
  // permutation and each token, the tokens preceding it.
  std::vector<Coalition> coalitions() const {
    std::vector<Coalition> out;
    if (estimator == Estimator::kExact) {
      for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << num_tokens); ++bits)
        out.push_back(Coalition::from_bits(bits, num_tokens));
      return out;
    }
    for (const auto& perm : permutations) {
      Coalition prefix;
      for (std::size_t t = 0; t < perm.size(); ++t) {
        Coalition c = prefix;
        std::sort(c.masked.begin(), c.masked.end());
        out.push_back(std::move(c));
        prefix.masked.push_back(perm[t]);
      }
    }
    return out;
  }
};

// Draws ceil(s/m) uniform token permutations. Switches to exact enumeration
// when 2^m <= 4s and m <= 15 (unless `allow_exact` is false).
inline CoalitionSample sample_coalitions(std::size_t m, std::size_t s, std::uint64_t seed,
                                         bool allow_exact = true) {
  if (s < 1) throw PreconditionError("coalition budget must be at least 1");
  CoalitionSample out;
  out.num_tokens = m;
  if (m == 0) {
    out.estimator = Estimator::kExact;
    return out;
  }
  if (allow_exact && m <= kMaxExactTokens && (std::uint64_t{1} << m) <= 4 * static_cast<std::uint64_t>(s)) {
    out.estimator = Estimator::kExact;
    return out;
  }
  out.estimator = Estimator::kSampled;
  Rng rng(derive_seed(seed, {m, 0x5a3b}));
  const std::size_t perms = (s + m - 1) / m;
  out.permutations.reserve(perms);
  for (std::size_t p = 0; p < perms; ++p) out.permutations.push_back(random_permutation(m, rng));
  return out;
}

// ---------------------------------------------------------------------------

// Payoff function of the token game for one target node. Only the target's
// feature row changes between evaluations; the cached first-layer products
// of every other node are reused.
class CoalitionGame {
 public:
  CoalitionGame(const Victim& victim, NodeId v, TokenSequence text)
      : victim_(&victim),
        v_(v),
        text_(std::move(text)),
        contributions_(victim.encoder().contributions(text_)),
        members_(closed_neighborhood(victim.graph(), v)) {}

  CoalitionGame(const Victim& victim, NodeId v) : CoalitionGame(victim, v, victim.graph().text(v)) {}

  std::size_t num_tokens() const noexcept { return text_.size(); }
  const TokenSequence& text() const noexcept { return text_; }
  const std::vector<NodeId>& members() const noexcept { return members_; }
  std::size_t evaluations() const noexcept { return evaluations_; }

  // f(T_S) where masked[i] != 0 marks token i as [MASK].
  RowVector value(std::span<const std::uint8_t> masked) const {
    ++evaluations_;
    Vector acc = Vector::Zero(static_cast<Eigen::Index>(victim_->encoder().dim()));
    for (std::size_t i = 0; i < contributions_.size(); ++i)
      if (!masked[i]) HashingEncoder::add_into(acc, contributions_[i]);
    const FeatureOverride ovr{v_, HashingEncoder::normalized(std::move(acc)).transpose()};
    const Matrix p = victim_->probs(members_, &ovr);
    return p.colwise().sum();
  }

  RowVector value(const Coalition& s) const {
    std::vector<std::uint8_t> mask(num_tokens(), 0);
    for (std::size_t i : s.masked) mask.at(i) = 1;
    return value(mask);
  }

  RowVector value_bits(std::uint64_t bits) const {
    std::vector<std::uint8_t> mask(num_tokens(), 0);
    for (std::size_t i = 0; i < num_tokens(); ++i) mask[i] = static_cast<std::uint8_t>(bits >> i & 1U);
    return value(mask);
  }

 private:
  const Victim* victim_;
  NodeId v_;
  TokenSequence text_;
  std::vector<TokenContribution> contributions_;
  std::vector<NodeId> members_;
  mutable std::size_t evaluations_ = 0;
};

inline RowVector coalition_value(const Victim& victim, NodeId v, const Coalition& s) {
  return CoalitionGame(victim, v).value(s);
}

// ---------------------------------------------------------------------------

struct ShapleyTable {
  Matrix phi;  // m x C
  Vector xi;   // m
  std::size_t sample_count = 0;
  Estimator estimator = Estimator::kExact;
  std::vector<std::string> tokens;

  std::size_t num_tokens() const noexcept { return static_cast<std::size_t>(xi.size()); }
};

struct ShapleyConfig {
  std::size_t budget = 256;  // s
  std::uint64_t seed = 0;
  bool allow_exact = true;
};

namespace detail {

inline double shapley_weight(std::size_t coalition_size, std::size_t m) {
  // |S|!(m-|S|-1)!/m! = 1 / (m * C(m-1, |S|))
  double binom = 1.0;
  const std::size_t n = m - 1;
  const std::size_t k = std::min(coalition_size, n - coalition_size);
  for (std::size_t i = 1; i <= k; ++i)
    binom = binom * static_cast<double>(n - k + i) / static_cast<double>(i);
  return 1.0 / (static_cast<double>(m) * binom);
}

// xi(i) = sum over {v} ∪ N(v) of phi(i, y_u).
inline Vector aggregate_true_labels(const Matrix& phi, const TextAttributedGraph& g, NodeId v) {
  Vector xi = Vector::Zero(phi.rows());
  for (NodeId u : closed_neighborhood(g, v)) xi += phi.col(g.label(u));
  return xi;
}

}  // namespace detail

// Shapley table of the target's tokens, exact or permutation-sampled per
// `sample_coalitions`.
inline ShapleyTable topological_shap(const Victim& victim, NodeId v, const ShapleyConfig& cfg,
                                     const TokenSequence* text_override = nullptr) {
  const CoalitionGame game(victim, v, text_override ? *text_override : victim.graph().text(v));
  const std::size_t m = game.num_tokens();
  const auto C = static_cast<Eigen::Index>(victim.graph().num_classes());
  ShapleyTable table;
  table.tokens = game.text().tokens();
  table.phi = Matrix::Zero(static_cast<Eigen::Index>(m), C);
  table.xi = Vector::Zero(static_cast<Eigen::Index>(m));
  if (m == 0) return table;

  const CoalitionSample plan = sample_coalitions(m, cfg.budget, cfg.seed, cfg.allow_exact);
  table.estimator = plan.estimator;
  if (plan.estimator == Estimator::kExact) {
    const std::uint64_t full = std::uint64_t{1} << m;
    std::vector<RowVector> values(full);
    for (std::uint64_t bits = 0; bits < full; ++bits) values[bits] = game.value_bits(bits);
    for (std::size_t i = 0; i < m; ++i) {
      const std::uint64_t bit = std::uint64_t{1} << i;
      for (std::uint64_t bits = 0; bits < full; ++bits) {
        if (bits & bit) continue;
        const double w = detail::shapley_weight(static_cast<std::size_t>(std::popcount(bits)), m);
        table.phi.row(static_cast<Eigen::Index>(i)) += w * (values[bits] - values[bits | bit]);
      }
    }
    table.sample_count = static_cast<std::size_t>(full);
  } else {
    std::vector<std::uint8_t> mask(m, 0);
    const RowVector empty = game.value(mask);
    std::fill(mask.begin(), mask.end(), 1);
    const RowVector all = game.value(mask);
    for (const auto& perm : plan.permutations) {
      std::fill(mask.begin(), mask.end(), 0);
      RowVector prev = empty;
      for (std::size_t t = 0; t < m; ++t) {
        const std::size_t i = perm[t];
        mask[i] = 1;
        RowVector cur = (t + 1 == m) ? all : game.value(mask);
        table.phi.row(static_cast<Eigen::Index>(i)) += prev - cur;
        prev = std::move(cur);
      }
    }
    table.phi /= static_cast<double>(plan.permutations.size());
    table.sample_count = plan.permutations.size() * m;
  }
  table.xi = detail::aggregate_true_labels(table.phi, victim.graph(), v);
  return table;
}

// Brute-force Shapley table over all 2^m coalitions using full forward
// passes on an explicitly rebuilt feature matrix. Test oracle; m <= 15.
inline ShapleyTable exact_shapley_oracle(const Victim& victim, NodeId v) {
  const TokenSequence text = victim.graph().text(v);
  const std::size_t m = text.size();
  if (m > kMaxExactTokens)
    throw PreconditionError("exact Shapley oracle refuses texts longer than 15 tokens");
  const auto C = static_cast<Eigen::Index>(victim.graph().num_classes());
  ShapleyTable table;
  table.tokens = text.tokens();
  table.phi = Matrix::Zero(static_cast<Eigen::Index>(m), C);
  table.xi = Vector::Zero(static_cast<Eigen::Index>(m));
  table.estimator = Estimator::kExact;
  if (m == 0) return table;

  const auto members = closed_neighborhood(victim.graph(), v);
  auto payoff = [&](const std::vector<std::size_t>& masked) {
    Matrix x = victim.features();
    x.row(v) = victim.encoder().encode(text.masked(masked)).transpose();
    const Matrix p = forward(victim.model(), victim.adjacency(), x);
    RowVector f = RowVector::Zero(C);
    for (NodeId u : members) f += p.row(u);
    return f;
  };
  std::vector<double> fact(m + 1, 1.0);
  for (std::size_t i = 1; i <= m; ++i) fact[i] = fact[i - 1] * static_cast<double>(i);

  for (std::size_t i = 0; i < m; ++i) {
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < m; ++j)
      if (j != i) others.push_back(j);
    for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << others.size()); ++bits) {
      std::vector<std::size_t> s;
      for (std::size_t b = 0; b < others.size(); ++b)
        if (bits >> b & 1U) s.push_back(others[b]);
      std::vector<std::size_t> s_i = s;
      s_i.insert(std::lower_bound(s_i.begin(), s_i.end(), i), i);
      const double w = fact[s.size()] * fact[m - s.size() - 1] / fact[m];
      table.phi.row(static_cast<Eigen::Index>(i)) += w * (payoff(s) - payoff(s_i));
    }
  }
  table.sample_count = std::size_t{1} << m;
  table.xi = detail::aggregate_true_labels(table.phi, victim.graph(), v);
  return table;
}

// ---------------------------------------------------------------------------

struct PivotalSet {
  std::vector<std::size_t> positions;  // descending xi
  double tau = 0.0;
  std::size_t cap = 0;
};

// Top-k positions by xi (ties by lower index), keeping those with xi > tau.
inline PivotalSet pivotal_set(const ShapleyTable& table, std::size_t k, double tau) {
  PivotalSet out;
  out.tau = tau;
  out.cap = k;
  std::vector<std::size_t> order(table.num_tokens());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return table.xi[static_cast<Eigen::Index>(a)] > table.xi[static_cast<Eigen::Index>(b)];
  });
  for (std::size_t r = 0; r < std::min(k, order.size()); ++r)
    if (table.xi[static_cast<Eigen::Index>(order[r])] > tau) out.positions.push_back(order[r]);
  return out;
}

inline void write_shapley_csv(const ShapleyTable& table, const std::filesystem::path& phi_csv,
                              const std::filesystem::path& xi_csv) {
  std::ofstream phi(phi_csv, std::ios::binary);
  std::ofstream xi(xi_csv, std::ios::binary);
  if (!phi || !xi) throw DatasetError("cannot write Shapley CSV files");
  phi.precision(17);
  xi.precision(17);
  phi << "token_index,token,class,phi\n";
  xi << "token_index,xi\n";
  for (std::size_t i = 0; i < table.num_tokens(); ++i) {
    for (Eigen::Index c = 0; c < table.phi.cols(); ++c)
      phi << i << ',' << table.tokens[i] << ',' << c << ','
          << table.phi(static_cast<Eigen::Index>(i), c) << '\n';
    xi << i << ',' << table.xi[static_cast<Eigen::Index>(i)] << '\n';
  }
}

}  // namespace tagattack
