#pragma once

// Deterministic hashed bag-of-words text encoder.
//
// Each unmasked token contributes a sparse signed vector: one feature for the
// whole word plus one per character n-gram of "<word>" (fastText-style
// subwords). Features are mapped to `dim` buckets by one hash and to a ±1 sign
// by a second, independent hash. The text embedding is the L2-normalized sum
// of token contributions; masked tokens and stopwords contribute nothing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tagattack/errors.hpp"
#include "tagattack/graph.hpp"
#include "tagattack/linalg.hpp"
#include "tagattack/rng.hpp"
#include "tagattack/text.hpp"

namespace tagattack {

struct EncoderConfig {
  std::size_t dim = 128;
  std::uint64_t seed = 0x7a61u;
  // Character n-gram range; ngram_max == 0 hashes whole words only.
  std::size_t ngram_min = 3;
  std::size_t ngram_max = 5;
  std::set<std::string> stopwords;
};

// One hashed feature: bucket index and signed weight.
struct HashedFeature {
  std::uint32_t bucket;
  double value;
};

using TokenContribution = std::vector<HashedFeature>;

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class HashingEncoder {
 public:
  explicit HashingEncoder(EncoderConfig config = {}) : config_(std::move(config)) {
    if (config_.dim == 0) throw PreconditionError("encoder dimension must be positive");
    if (config_.ngram_max != 0 && (config_.ngram_min == 0 || config_.ngram_min > config_.ngram_max))
      throw PreconditionError("encoder n-gram range is invalid");
    sign_seed_ = splitmix64(config_.seed ^ 0x5bd1e9955bd1e995ULL);
  }

  const EncoderConfig& config() const noexcept { return config_; }
  std::size_t dim() const noexcept { return config_.dim; }

  // Sparse contribution of a single (unmasked) token.
  TokenContribution contribution(std::string_view word) const {
    TokenContribution out;
    if (word.empty() || config_.stopwords.count(std::string(word))) return out;
    std::string whole = "\x01";
    whole += word;
    add_feature(out, whole);
    if (config_.ngram_max > 0) {
      std::string padded = "<";
      padded += word;
      padded += '>';
      for (std::size_t n = config_.ngram_min; n <= config_.ngram_max; ++n) {
        if (n > padded.size()) break;
        for (std::size_t i = 0; i + n <= padded.size(); ++i)
          add_feature(out, std::string_view(padded).substr(i, n));
      }
    }
    return out;
  }

  std::vector<TokenContribution> contributions(const TokenSequence& seq) const {
    std::vector<TokenContribution> out;
    out.reserve(seq.size());
    for (const auto& t : seq.tokens()) out.push_back(contribution(t));
    return out;
  }

  // Pre-normalization accumulator over unmasked tokens.
  Vector accumulate(const TokenSequence& seq) const {
    Vector acc = Vector::Zero(static_cast<Eigen::Index>(config_.dim));
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (seq.is_masked(i)) continue;
      add_into(acc, contribution(seq.token(i)));
    }
    return acc;
  }

  Vector encode(const TokenSequence& seq) const { return normalized(accumulate(seq)); }

  Vector encode_word(std::string_view word) const {
    Vector acc = Vector::Zero(static_cast<Eigen::Index>(config_.dim));
    add_into(acc, contribution(word));
    return normalized(std::move(acc));
  }

  // Feature matrix for every node of the graph.
  Matrix encode_all(const TextAttributedGraph& g) const {
    Matrix x(static_cast<Eigen::Index>(g.num_nodes()), static_cast<Eigen::Index>(config_.dim));
    for (NodeId u = 0; u < g.num_nodes(); ++u) x.row(u) = encode(g.text(u)).transpose();
    return x;
  }

  static void add_into(Vector& acc, const TokenContribution& c) {
    for (const auto& f : c) acc[f.bucket] += f.value;
  }

  static Vector normalized(Vector acc) {
    const double norm = acc.norm();
    if (norm > 0.0) acc /= norm;
    return acc;
  }

 private:
  void add_feature(TokenContribution& out, std::string_view feature) const {
    const std::uint64_t h = fnv1a64(feature);
    const auto bucket = static_cast<std::uint32_t>(splitmix64(h ^ config_.seed) % config_.dim);
    const double sign = (splitmix64(h ^ sign_seed_) >> 63) ? -1.0 : 1.0;
    out.push_back({bucket, sign});
  }

  EncoderConfig config_;
  std::uint64_t sign_seed_;
};

// dot(a,b)/(|a||b|), 0 when either vector is zero; clamped to [-1, 1].
inline double cosine_similarity(const Vector& a, const Vector& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

// Lower bound on embedding cosine when a fraction `rho` of tokens is replaced
// by words of single-word similarity at least `gamma`: 1 - rho^2 (1 - gamma).
inline double similarity_lower_bound(double rho, double gamma) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw PreconditionError("rho must lie in [0,1]");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw PreconditionError("gamma must lie in [0,1]");
  return 1.0 - rho * rho * (1.0 - gamma);
}

}  // namespace tagattack
