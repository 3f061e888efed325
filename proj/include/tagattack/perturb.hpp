#pragma once

// Greedy word substitution on a target node's text.
//
// A candidate r at position p is scored on the target's closed neighborhood:
//   delta_u(r) = top1(p_u) - top2(p_u)      (after the substitution)
//   Delta(r)   = sum_u delta_u(r)
//   sigma(r)   = Delta(r) * (1 + alpha * flip(r))
// where flip(r) says whether the argmax of v or of any neighbor changed
// relative to the text before the substitution.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tagattack/candidates.hpp"
#include "tagattack/errors.hpp"
#include "tagattack/gcn.hpp"
#include "tagattack/graph.hpp"
#include "tagattack/rng.hpp"
#include "tagattack/shapley.hpp"
#include "tagattack/victim.hpp"

namespace tagattack {

enum class GapMode { kLiteral, kInvertedNonflip };

inline std::string_view gap_mode_name(GapMode m) {
  return m == GapMode::kLiteral ? "literal" : "inverted_nonflip";
}

inline GapMode parse_gap_mode(std::string_view s) {
  if (s == "literal") return GapMode::kLiteral;
  if (s == "inverted_nonflip") return GapMode::kInvertedNonflip;
  throw ConfigError("unknown gap_mode: " + std::string(s));
}

struct ReplacementScore {
  std::string word;
  double delta = 0.0;
  bool flip = false;
  double sigma = 0.0;
  std::vector<std::pair<NodeId, double>> gaps;  // per neighborhood member
  ClassId target_prediction = 0;                // argmax for v after substitution
};

inline double flip_boosted_score(double delta, bool flip, double alpha) {
  return delta * (1.0 + alpha * (flip ? 1.0 : 0.0));
}

// Reference state of one perturbation step: v's current text and the
// argmax of every neighborhood member under it.
struct PerturbationBase {
  TokenSequence text;
  std::vector<NodeId> members;  // closed neighborhood, ascending
  std::vector<ClassId> predictions;
  Matrix probs;

  static PerturbationBase make(const Victim& victim, NodeId v, TokenSequence text) {
    PerturbationBase b{std::move(text), closed_neighborhood(victim.graph(), v), {}, {}};
    const FeatureOverride ovr = victim.override_for(v, b.text);
    b.probs = victim.probs(b.members, &ovr);
    for (Eigen::Index r = 0; r < b.probs.rows(); ++r) b.predictions.push_back(argmax(b.probs.row(r)));
    return b;
  }

  Eigen::Index row_of(NodeId u) const {
    return static_cast<Eigen::Index>(std::lower_bound(members.begin(), members.end(), u) - members.begin());
  }
};

// Scores substituting `word` at `position` of the base text. With
// `single_node` set, Delta is replaced by the drop of v's probability for
// `reference_class` and flip only looks at v.
inline ReplacementScore score_replacement(const Victim& victim, NodeId v, const PerturbationBase& base,
                                          std::size_t position, const std::string& word,
                                          double alpha, bool single_node = false,
                                          ClassId reference_class = 0) {
  if (position >= base.text.size()) throw PreconditionError("replacement position out of range");
  if (to_lower(word) == to_lower(base.text.token(position)))
    throw PreconditionError("replacement equals the current word: " + word);
  const TokenSequence next = base.text.replaced(position, word);
  const FeatureOverride ovr = victim.override_for(v, next);
  const Matrix p = victim.probs(base.members, &ovr);

  ReplacementScore s;
  s.word = word;
  const Eigen::Index vr = base.row_of(v);
  s.target_prediction = argmax(p.row(vr));
  if (single_node) {
    s.delta = base.probs(vr, reference_class) - p(vr, reference_class);
    s.flip = s.target_prediction != base.predictions[static_cast<std::size_t>(vr)];
    s.gaps.emplace_back(v, s.delta);
  } else {
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      const double gap = confidence_gap(p.row(r));
      s.gaps.emplace_back(base.members[static_cast<std::size_t>(r)], gap);
      s.delta += gap;
      if (argmax(p.row(r)) != base.predictions[static_cast<std::size_t>(r)]) s.flip = true;
    }
  }
  s.sigma = flip_boosted_score(s.delta, s.flip, alpha);
  return s;
}

// ---------------------------------------------------------------------------

enum class StopReason { kBudget, kFlip, kExhausted };

inline std::string_view stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::kBudget: return "budget";
    case StopReason::kFlip: return "flip";
    case StopReason::kExhausted: return "exhausted";
  }
  return "?";
}

struct ReplacementRecord {
  std::size_t position = 0;
  std::string old_word;
  std::string new_word;
  double delta = 0.0;
  double sigma = 0.0;
  bool flip = false;
  ClassId prediction_after = 0;
};

struct PerturbationTrace {
  std::vector<ReplacementRecord> records;
  double beta = 0.0;
  std::size_t budget = 0;
  std::size_t tokens_modified = 0;
  StopReason terminated_reason = StopReason::kExhausted;

  TokenSequence replay(TokenSequence original) const {
    for (const auto& r : records) {
      if (original.token(r.position) != r.old_word)
        throw PreconditionError("trace does not apply: position " + std::to_string(r.position));
      original = original.replaced(r.position, r.new_word);
    }
    return original;
  }
};

// ceil(beta * m) with a small tolerance against 0.3 * 10 = 3.0000000000000004.
inline std::size_t modification_budget(double beta, std::size_t m) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw PreconditionError("beta must lie in [0,1]");
  return static_cast<std::size_t>(std::ceil(beta * static_cast<double>(m) - 1e-9));
}

struct PerturbConfig {
  double beta = 0.3;
  double alpha = 1.0;
  std::size_t top_k1 = 10;
  double gamma = 0.5;
  GapMode gap_mode = GapMode::kLiteral;
  bool single_node_score = false;
};

struct PerturbationResult {
  TokenSequence text;
  PerturbationTrace trace;
  ClassId final_prediction = 0;
  bool flipped = false;
};

namespace detail {

inline bool better(const ReplacementScore& a, const ReplacementScore& b, GapMode mode, double alpha) {
  if (mode == GapMode::kLiteral) return a.sigma > b.sigma;
  auto key = [&](const ReplacementScore& s) { return s.flip ? (1.0 + alpha) * s.delta : -s.delta; };
  return key(a) > key(b);
}

}  // namespace detail

// Walks the pivotal positions in order, committing the best-scoring
// candidate at each, until the budget is used, v's prediction leaves its
// clean class, or the positions run out.
inline PerturbationResult perturb_node_text(const Victim& victim, NodeId v, const PivotalSet& pivotal,
                                            CandidateGenerator& generator, const PerturbConfig& cfg) {
  const TokenSequence original = victim.graph().text(v);
  for (std::size_t p : pivotal.positions)
    if (p >= original.size()) throw PreconditionError("pivotal position out of range");

  const ClassId clean = victim.clean_prediction(v);
  PerturbationResult out;
  out.trace.beta = cfg.beta;
  out.trace.budget = modification_budget(cfg.beta, original.size());
  out.text = original;
  out.final_prediction = clean;

  PerturbationBase base = PerturbationBase::make(victim, v, original);
  std::vector<std::uint8_t> touched(original.size(), 0);
  out.trace.terminated_reason = StopReason::kExhausted;
  for (std::size_t p : pivotal.positions) {
    if (out.trace.tokens_modified >= out.trace.budget) {
      out.trace.terminated_reason = StopReason::kBudget;
      break;
    }
    if (touched[p]) continue;
    const auto cands = generate_candidates(generator, victim.encoder(), base.text, p, cfg.top_k1, cfg.gamma);
    if (cands.empty()) continue;

    std::optional<ReplacementScore> best;
    for (const auto& c : cands) {
      ReplacementScore s = score_replacement(victim, v, base, p, c.word, cfg.alpha, cfg.single_node_score, clean);
      if (!best || detail::better(s, *best, cfg.gap_mode, cfg.alpha)) best = std::move(s);
    }
    touched[p] = 1;
    ReplacementRecord rec{p, base.text.token(p), best->word, best->delta, best->sigma, best->flip,
                          best->target_prediction};
    base = PerturbationBase::make(victim, v, base.text.replaced(p, best->word));
    out.trace.records.push_back(std::move(rec));
    ++out.trace.tokens_modified;
    out.final_prediction = base.predictions[static_cast<std::size_t>(base.row_of(v))];
    if (out.final_prediction != clean) {
      out.trace.terminated_reason = StopReason::kFlip;
      break;
    }
  }
  if (out.trace.terminated_reason != StopReason::kFlip && !pivotal.positions.empty() &&
      out.trace.tokens_modified >= out.trace.budget)
    out.trace.terminated_reason = StopReason::kBudget;
  out.text = base.text;
  out.flipped = out.final_prediction != clean;
  return out;
}

// Ablation: `count` distinct positions drawn uniformly instead of the
// Shapley ranking.
inline PivotalSet random_pivotal_set(std::size_t m, std::size_t count, std::uint64_t seed) {
  PivotalSet out;
  out.cap = count;
  out.tau = -std::numeric_limits<double>::infinity();
  Rng rng(seed);
  std::vector<std::size_t> pool(m);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  out.positions = sample_without_replacement(std::move(pool), std::min(count, m), rng);
  return out;
}

// Original and adversarial text with substituted words marked as [[word]].
inline nlohmann::json trace_to_json(NodeId v, const TokenSequence& original, const PerturbationResult& r) {
  std::vector<std::string> orig_marked = original.tokens();
  std::vector<std::string> adv_marked = r.text.tokens();
  for (const auto& rec : r.trace.records) {
    orig_marked[rec.position] = "[[" + rec.old_word + "]]";
    adv_marked[rec.position] = "[[" + rec.new_word + "]]";
  }
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& rec : r.trace.records)
    recs.push_back({{"position", rec.position},
                    {"old", rec.old_word},
                    {"new", rec.new_word},
                    {"delta", rec.delta},
                    {"sigma", rec.sigma},
                    {"flip", rec.flip},
                    {"prediction_after", rec.prediction_after}});
  return {{"node", v},
          {"original", TokenSequence(orig_marked).joined()},
          {"adversarial", TokenSequence(adv_marked).joined()},
          {"beta", r.trace.beta},
          {"budget", r.trace.budget},
          {"tokens_modified", r.trace.tokens_modified},
          {"terminated_reason", stop_reason_name(r.trace.terminated_reason)},
          {"replacements", std::move(recs)}};
}

}  // namespace tagattack
