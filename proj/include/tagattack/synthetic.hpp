#pragma once

// Two-class planted-partition benchmark with class vocabularies.
//
// Class words come in counterpart pairs sharing a long root and differing in
// a class marker ("...ka" for class 0, "...zu" for class 1), so a
// counterpart is a close subword neighbor of the original yet pulls the text
// towards the other class. Neutral words come in pairs ("...ei"/"...oy")
// used equally by both classes. The lexicon maps every word to its
// counterpart.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tagattack/candidates.hpp"
#include "tagattack/config.hpp"
#include "tagattack/graph.hpp"
#include "tagattack/rng.hpp"

namespace tagattack {

struct SyntheticBenchmark {
  TextAttributedGraph graph;
  Lexicon lexicon;
  std::vector<std::vector<std::string>> class_words;  // [class][i]
  std::vector<std::vector<std::string>> neutral_words;  // [variant][i]
};

namespace detail {

inline std::string synthetic_root(Rng& rng) {
  static constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
  static constexpr const char* kVowels[] = {"a", "e", "i", "o", "u"};
  std::string root;
  const std::size_t syllables = 9 + uniform_index(rng, 3);
  for (std::size_t i = 0; i < syllables; ++i) {
    root += kOnsets[uniform_index(rng, std::size(kOnsets))];
    root += kVowels[uniform_index(rng, std::size(kVowels))];
  }
  return root;
}

}  // namespace detail

inline SyntheticBenchmark generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
  if (cfg.nodes < 4) throw ConfigError("synthetic benchmark needs at least 4 nodes");
  if (!(cfg.p_in >= 0 && cfg.p_in <= 1 && cfg.p_out >= 0 && cfg.p_out <= 1))
    throw ConfigError("synthetic edge probabilities must lie in [0,1]");
  if (cfg.vocab_per_class == 0 || cfg.neutral_vocab == 0)
    throw ConfigError("synthetic vocabularies must be nonempty");

  SyntheticBenchmark b;
  Rng vocab_rng(derive_seed(seed, {1}));
  b.class_words.assign(2, {});
  b.neutral_words.assign(2, {});
  for (std::size_t i = 0; i < cfg.vocab_per_class; ++i) {
    const std::string root = detail::synthetic_root(vocab_rng);
    b.class_words[0].push_back(root + "ka");
    b.class_words[1].push_back(root + "zu");
    b.lexicon.add(b.class_words[0].back(), b.class_words[1].back(), 0.9);
    b.lexicon.add(b.class_words[1].back(), b.class_words[0].back(), 0.9);
  }
  for (std::size_t i = 0; i < cfg.neutral_vocab; ++i) {
    const std::string root = detail::synthetic_root(vocab_rng);
    b.neutral_words[0].push_back(root + "ei");
    b.neutral_words[1].push_back(root + "oy");
    b.lexicon.add(b.neutral_words[0].back(), b.neutral_words[1].back(), 0.8);
    b.lexicon.add(b.neutral_words[1].back(), b.neutral_words[0].back(), 0.8);
  }

  const std::size_t n = cfg.nodes;
  std::vector<ClassId> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i < n / 2 ? 0 : 1;
  Rng label_rng(derive_seed(seed, {2}));
  shuffle(labels, label_rng);

  Rng edge_rng(derive_seed(seed, {3}));
  std::vector<Edge> edges;
  for (NodeId i = 0; i < n; ++i)
    for (NodeId j = i + 1; j < n; ++j)
      if (uniform01(edge_rng) < (labels[i] == labels[j] ? cfg.p_in : cfg.p_out)) edges.push_back({i, j});

  Rng text_rng(derive_seed(seed, {4}));
  std::vector<std::string> raw(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t len = cfg.text_min + uniform_index(text_rng, cfg.text_max - cfg.text_min + 1);
    std::vector<std::string> toks;
    for (std::size_t t = 0; t < len; ++t) {
      if (uniform01(text_rng) < cfg.class_word_rate) {
        const int c = uniform01(text_rng) < cfg.off_class_rate ? 1 - labels[i] : labels[i];
        const auto& vocab = b.class_words[static_cast<std::size_t>(c)];
        toks.push_back(vocab[uniform_index(text_rng, vocab.size())]);
      } else {
        const auto& vocab = b.neutral_words[uniform_index(text_rng, 2)];
        toks.push_back(vocab[uniform_index(text_rng, vocab.size())]);
      }
    }
    raw[i] = TokenSequence(toks).joined();
  }
  b.graph = TextAttributedGraph::from_texts(std::move(raw), std::move(labels), 2, edges);
  return b;
}

// nodes.tsv, edges.tsv and lexicon.tsv under `dir`.
inline void save_synthetic(const SyntheticBenchmark& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_graph(b.graph, dir / "nodes.tsv", dir / "edges.tsv");
  b.lexicon.save(dir / "lexicon.tsv");
}

}  // namespace tagattack
