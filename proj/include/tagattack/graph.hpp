#pragma once

// Text-attributed graph model, dataset ingestion, adjacency normalization,
// stratified splits and edge-set editing.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tagattack/errors.hpp"
#include "tagattack/rng.hpp"
#include "tagattack/text.hpp"

namespace tagattack {

using NodeId = std::uint32_t;
using ClassId = int;

// Undirected edge in canonical (min, max) order.
struct Edge {
  NodeId u = 0;
  NodeId v = 0;

  static Edge canonical(NodeId a, NodeId b) { return a < b ? Edge{a, b} : Edge{b, a}; }
  bool touches(NodeId x) const noexcept { return u == x || v == x; }
  NodeId other(NodeId x) const noexcept { return x == u ? v : u; }
  auto operator<=>(const Edge&) const = default;
};

inline std::string to_string(const Edge& e) {
  return "{" + std::to_string(e.u) + "," + std::to_string(e.v) + "}";
}

class TextAttributedGraph {
 public:
  TextAttributedGraph() = default;

  // Validates labels and endpoints, canonicalizes and deduplicates edges and
  // drops self-loops. `tokens[i]` and `raw_texts[i]` describe node i.
  TextAttributedGraph(std::vector<std::vector<std::string>> tokens,
                      std::vector<std::string> raw_texts, std::vector<ClassId> labels,
                      int num_classes, std::span<const Edge> edges)
      : tokens_(std::make_shared<const std::vector<std::vector<std::string>>>(std::move(tokens))),
        raw_(std::make_shared<const std::vector<std::string>>(std::move(raw_texts))),
        labels_(std::make_shared<const std::vector<ClassId>>(std::move(labels))),
        num_classes_(num_classes) {
    const std::size_t n = labels_->size();
    if (tokens_->size() != n || raw_->size() != n)
      throw PreconditionError("graph: tokens, raw texts and labels must have equal length");
    if (num_classes_ < 1) throw PreconditionError("graph: num_classes must be positive");
    for (std::size_t i = 0; i < n; ++i) {
      const ClassId y = (*labels_)[i];
      if (y < 0 || y >= num_classes_)
        throw DatasetError("label out of range for node " + std::to_string(i) + ": " +
                           std::to_string(y));
    }
    std::vector<Edge> canon;
    canon.reserve(edges.size());
    for (const Edge& e : edges) {
      if (e.u >= n || e.v >= n)
        throw DatasetError("edge endpoint out of range: " + to_string(e));
      if (e.u == e.v) continue;
      canon.push_back(Edge::canonical(e.u, e.v));
    }
    std::sort(canon.begin(), canon.end());
    canon.erase(std::unique(canon.begin(), canon.end()), canon.end());
    set_edges(std::move(canon));
  }

  // Builds a graph from raw strings, tokenizing each.
  static TextAttributedGraph from_texts(std::vector<std::string> raw_texts,
                                        std::vector<ClassId> labels, int num_classes,
                                        std::span<const Edge> edges) {
    std::vector<std::vector<std::string>> tokens;
    tokens.reserve(raw_texts.size());
    for (const auto& t : raw_texts) tokens.push_back(tokenize(t).tokens());
    return TextAttributedGraph(std::move(tokens), std::move(raw_texts), std::move(labels),
                               num_classes, edges);
  }

  std::size_t num_nodes() const noexcept { return labels_ ? labels_->size() : 0; }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  int num_classes() const noexcept { return num_classes_; }

  ClassId label(NodeId u) const { return labels_->at(u); }
  const std::vector<ClassId>& labels() const noexcept { return *labels_; }
  const std::vector<std::string>& tokens(NodeId u) const { return tokens_->at(u); }
  TokenSequence text(NodeId u) const { return TokenSequence(tokens(u)); }
  const std::string& raw_text(NodeId u) const { return raw_->at(u); }
  const std::vector<Edge>& edges() const noexcept { return edges_; }

  std::span<const NodeId> neighbors(NodeId u) const {
    return {adj_.data() + offsets_.at(u), adj_.data() + offsets_.at(u + 1)};
  }
  std::size_t degree(NodeId u) const { return offsets_.at(u + 1) - offsets_.at(u); }

  bool has_edge(NodeId a, NodeId b) const {
    if (a >= num_nodes() || b >= num_nodes() || a == b) return false;
    auto nb = neighbors(a);
    return std::binary_search(nb.begin(), nb.end(), b);
  }

  // New graph with the given node texts replaced; raw text becomes the
  // space-joined tokens. Edges and labels are shared.
  TextAttributedGraph with_texts(
      const std::map<NodeId, std::vector<std::string>>& replacements) const {
    if (replacements.empty()) return *this;
    auto tokens = *tokens_;
    auto raw = *raw_;
    for (const auto& [u, toks] : replacements) {
      if (u >= num_nodes()) throw PreconditionError("with_texts: node out of range");
      tokens[u] = toks;
      raw[u] = TokenSequence(toks).joined();
    }
    TextAttributedGraph out = *this;
    out.tokens_ = std::make_shared<const std::vector<std::vector<std::string>>>(std::move(tokens));
    out.raw_ = std::make_shared<const std::vector<std::string>>(std::move(raw));
    return out;
  }

  // New graph with exactly the given canonical edge list (all endpoints must
  // be valid). Texts and labels are shared.
  TextAttributedGraph with_edges(std::vector<Edge> canonical_sorted) const {
    TextAttributedGraph out = *this;
    out.set_edges(std::move(canonical_sorted));
    return out;
  }

 private:
  void set_edges(std::vector<Edge> canon) {
    edges_ = std::move(canon);
    const std::size_t n = num_nodes();
    offsets_.assign(n + 1, 0);
    for (const Edge& e : edges_) {
      ++offsets_[e.u + 1];
      ++offsets_[e.v + 1];
    }
    for (std::size_t i = 0; i < n; ++i) offsets_[i + 1] += offsets_[i];
    adj_.assign(offsets_[n], 0);
    std::vector<std::size_t> fill(offsets_.begin(), offsets_.end() - 1);
    for (const Edge& e : edges_) {
      adj_[fill[e.u]++] = e.v;
      adj_[fill[e.v]++] = e.u;
    }
    for (std::size_t i = 0; i < n; ++i)
      std::sort(adj_.begin() + static_cast<std::ptrdiff_t>(offsets_[i]),
                adj_.begin() + static_cast<std::ptrdiff_t>(offsets_[i + 1]));
  }

  std::shared_ptr<const std::vector<std::vector<std::string>>> tokens_;
  std::shared_ptr<const std::vector<std::string>> raw_;
  std::shared_ptr<const std::vector<ClassId>> labels_;
  int num_classes_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::size_t> offsets_{0};
  std::vector<NodeId> adj_;
};

// ---------------------------------------------------------------------------
// Ingestion

namespace detail {

inline std::string_view trim_cr(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
  return s;
}

template <class Int>
std::optional<Int> parse_int(std::string_view s) {
  while (!s.empty() && (s.front() == ' ')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ')) s.remove_suffix(1);
  Int value{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return value;
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot read file: " + path.string());
  return in;
}

// Splits on the first run of tabs or spaces.
inline std::pair<std::string_view, std::string_view> split_pair(std::string_view line) {
  const auto a = line.find_first_of("\t ");
  if (a == std::string_view::npos) return {line, {}};
  const auto b = line.find_first_not_of("\t ", a);
  return {line.substr(0, a), b == std::string_view::npos ? std::string_view{} : line.substr(b)};
}

}  // namespace detail

// Node file rows: `id<TAB>label<TAB>text`; edge file rows: `src<TAB>dst`.
// Edges are symmetrized, deduplicated and stripped of self-loops. When
// `num_classes` is 0 it is inferred as max label + 1.
inline TextAttributedGraph load_graph(const std::filesystem::path& node_file,
                                      const std::filesystem::path& edge_file,
                                      int num_classes = 0) {
  std::vector<std::optional<std::pair<ClassId, std::string>>> rows;
  {
    auto in = detail::open_input(node_file);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string_view sv = detail::trim_cr(line);
      if (sv.empty()) continue;
      const auto t1 = sv.find('\t');
      const auto t2 = t1 == std::string_view::npos ? t1 : sv.find('\t', t1 + 1);
      if (t1 == std::string_view::npos)
        throw DatasetError(node_file.string() + ":" + std::to_string(lineno) +
                           ": expected id<TAB>label<TAB>text");
      auto id = detail::parse_int<std::int64_t>(sv.substr(0, t1));
      auto label = detail::parse_int<std::int64_t>(
          t2 == std::string_view::npos ? sv.substr(t1 + 1) : sv.substr(t1 + 1, t2 - t1 - 1));
      if (!id || *id < 0)
        throw DatasetError(node_file.string() + ":" + std::to_string(lineno) + ": bad node id");
      if (!label || *label < 0 || (num_classes > 0 && *label >= num_classes))
        throw DatasetError(node_file.string() + ":" + std::to_string(lineno) +
                           ": label out of range");
      std::string text = t2 == std::string_view::npos ? std::string() : std::string(sv.substr(t2 + 1));
      const auto idx = static_cast<std::size_t>(*id);
      if (idx >= rows.size()) rows.resize(idx + 1);
      if (rows[idx]) throw DatasetError("duplicate node id " + std::to_string(idx));
      rows[idx] = std::make_pair(static_cast<ClassId>(*label), std::move(text));
    }
  }
  const std::size_t n = rows.size();
  std::vector<ClassId> labels(n);
  std::vector<std::string> raw(n);
  int max_label = -1;
  for (std::size_t i = 0; i < n; ++i) {
    if (!rows[i]) throw DatasetError("node ids are not dense: missing id " + std::to_string(i));
    labels[i] = rows[i]->first;
    raw[i] = std::move(rows[i]->second);
    max_label = std::max(max_label, labels[i]);
  }
  if (num_classes == 0) num_classes = max_label + 1;

  std::vector<Edge> edges;
  {
    auto in = detail::open_input(edge_file);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string_view sv = detail::trim_cr(line);
      if (sv.empty() || sv.front() == '#') continue;
      auto [a, b] = detail::split_pair(sv);
      auto src = detail::parse_int<std::int64_t>(a);
      auto dst = detail::parse_int<std::int64_t>(b);
      if (!src || !dst)
        throw DatasetError(edge_file.string() + ":" + std::to_string(lineno) +
                           ": expected src<TAB>dst");
      if (*src < 0 || *dst < 0 || static_cast<std::size_t>(*src) >= n ||
          static_cast<std::size_t>(*dst) >= n)
        throw DatasetError(edge_file.string() + ":" + std::to_string(lineno) +
                           ": edge endpoint out of range");
      edges.push_back(Edge{static_cast<NodeId>(*src), static_cast<NodeId>(*dst)});
    }
  }
  return TextAttributedGraph::from_texts(std::move(raw), std::move(labels), num_classes, edges);
}

inline void save_graph(const TextAttributedGraph& g, const std::filesystem::path& node_file,
                       const std::filesystem::path& edge_file) {
  std::ofstream nodes(node_file, std::ios::binary);
  std::ofstream edges(edge_file, std::ios::binary);
  if (!nodes || !edges) throw DatasetError("cannot write graph files");
  for (NodeId u = 0; u < g.num_nodes(); ++u)
    nodes << u << '\t' << g.label(u) << '\t' << g.raw_text(u) << '\n';
  for (const Edge& e : g.edges()) edges << e.u << '\t' << e.v << '\n';
}

// ---------------------------------------------------------------------------
// Adjacency normalization

// Coefficient of D^-1/2 (A+I) D^-1/2 for self-loop-augmented degrees.
inline double normalized_coefficient(std::size_t aug_deg_i, std::size_t aug_deg_j) {
  return 1.0 / std::sqrt(static_cast<double>(aug_deg_i) * static_cast<double>(aug_deg_j));
}

// Sparse symmetric D^-1/2 (A+I) D^-1/2 in CSR form, columns ascending.
class NormalizedAdjacency {
 public:
  NormalizedAdjacency() = default;

  explicit NormalizedAdjacency(const TextAttributedGraph& g) : n_(g.num_nodes()) {
    row_ptr_.assign(n_ + 1, 0);
    cols_.reserve(2 * g.num_edges() + n_);
    vals_.reserve(2 * g.num_edges() + n_);
    for (NodeId i = 0; i < n_; ++i) {
      const std::size_t di = g.degree(i) + 1;
      bool self_done = false;
      for (NodeId j : g.neighbors(i)) {
        if (!self_done && j > i) {
          push(i, normalized_coefficient(di, di));
          self_done = true;
        }
        push(j, normalized_coefficient(di, g.degree(j) + 1));
      }
      if (!self_done) push(i, normalized_coefficient(di, di));
      row_ptr_[i + 1] = cols_.size();
    }
  }

  std::size_t num_nodes() const noexcept { return n_; }
  std::size_t nonzeros() const noexcept { return cols_.size(); }

  template <class F>
  void for_each(NodeId i, F&& f) const {
    for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) f(cols_[k], vals_[k]);
  }

  double at(NodeId i, NodeId j) const {
    auto first = cols_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[i]);
    auto last = cols_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[i + 1]);
    auto it = std::lower_bound(first, last, j);
    return (it != last && *it == j) ? vals_[static_cast<std::size_t>(it - cols_.begin())] : 0.0;
  }

 private:
  void push(NodeId j, double v) {
    cols_.push_back(j);
    vals_.push_back(v);
  }

  std::size_t n_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<NodeId> cols_;
  std::vector<double> vals_;
};

inline NormalizedAdjacency normalize_adjacency(const TextAttributedGraph& g) {
  return NormalizedAdjacency(g);
}

// Normalized adjacency of `g` with a small set of edges removed, evaluated
// lazily. Produces the same coefficients, in the same order, as
// NormalizedAdjacency of the edited graph.
class PrunedAdjacency {
 public:
  PrunedAdjacency(const TextAttributedGraph& g, std::vector<Edge> removed)
      : g_(&g), removed_(std::move(removed)) {
    for (Edge& e : removed_) e = Edge::canonical(e.u, e.v);
    std::sort(removed_.begin(), removed_.end());
    removed_.erase(std::unique(removed_.begin(), removed_.end()), removed_.end());
    for (const Edge& e : removed_) {
      if (!g.has_edge(e.u, e.v)) continue;
      ++lost_[e.u];
      ++lost_[e.v];
    }
  }

  std::size_t num_nodes() const noexcept { return g_->num_nodes(); }

  std::size_t degree(NodeId i) const {
    auto it = lost_.find(i);
    return g_->degree(i) - (it == lost_.end() ? 0 : it->second);
  }

  bool removed(NodeId a, NodeId b) const {
    return std::binary_search(removed_.begin(), removed_.end(), Edge::canonical(a, b));
  }

  template <class F>
  void for_each(NodeId i, F&& f) const {
    const std::size_t di = degree(i) + 1;
    const bool touched = lost_.count(i) > 0;
    bool self_done = false;
    for (NodeId j : g_->neighbors(i)) {
      if (!self_done && j > i) {
        f(i, normalized_coefficient(di, di));
        self_done = true;
      }
      if (touched && removed(i, j)) continue;
      f(j, normalized_coefficient(di, degree(j) + 1));
    }
    if (!self_done) f(i, normalized_coefficient(di, di));
  }

 private:
  const TextAttributedGraph* g_;
  std::vector<Edge> removed_;
  std::unordered_map<NodeId, std::size_t> lost_;
};

// ---------------------------------------------------------------------------
// Neighborhoods

// Nodes within `max_hops` of `source` with their hop distance, in BFS order
// (source first).
inline std::vector<std::pair<NodeId, int>> hop_ball(const TextAttributedGraph& g, NodeId source,
                                                    int max_hops) {
  std::vector<std::pair<NodeId, int>> out;
  std::unordered_map<NodeId, int> dist;
  std::queue<NodeId> frontier;
  dist[source] = 0;
  frontier.push(source);
  while (!frontier.empty()) {
    NodeId x = frontier.front();
    frontier.pop();
    const int d = dist[x];
    out.emplace_back(x, d);
    if (d == max_hops) continue;
    for (NodeId y : g.neighbors(x)) {
      if (dist.emplace(y, d + 1).second) frontier.push(y);
    }
  }
  return out;
}

// {v} ∪ N(v) in ascending id order.
inline std::vector<NodeId> closed_neighborhood(const TextAttributedGraph& g, NodeId v) {
  std::vector<NodeId> out(g.neighbors(v).begin(), g.neighbors(v).end());
  out.insert(std::lower_bound(out.begin(), out.end(), v), v);
  return out;
}

// ---------------------------------------------------------------------------
// Editing

// Returns `g` without the listed edges. Every edge must currently exist.
inline TextAttributedGraph remove_edges(const TextAttributedGraph& g,
                                        std::span<const Edge> to_remove) {
  std::vector<Edge> drop;
  drop.reserve(to_remove.size());
  for (const Edge& e : to_remove) {
    if (!g.has_edge(e.u, e.v))
      throw PreconditionError("remove_edges: edge " + to_string(Edge::canonical(e.u, e.v)) +
                              " is not present");
    drop.push_back(Edge::canonical(e.u, e.v));
  }
  std::sort(drop.begin(), drop.end());
  std::vector<Edge> kept;
  kept.reserve(g.num_edges());
  std::set_difference(g.edges().begin(), g.edges().end(), drop.begin(), drop.end(),
                      std::back_inserter(kept));
  return g.with_edges(std::move(kept));
}

// ---------------------------------------------------------------------------
// Splits

enum class Role : std::uint8_t { kTrain, kVal, kTest };

inline std::string_view role_name(Role r) {
  switch (r) {
    case Role::kTrain: return "train";
    case Role::kVal: return "val";
    case Role::kTest: return "test";
  }
  return "?";
}

struct SplitRatios {
  double train = 0.1;
  double val = 0.1;
  double test = 0.8;
};

struct SplitAssignment {
  std::vector<Role> roles;
  std::vector<std::string> warnings;

  std::vector<NodeId> nodes(Role r) const {
    std::vector<NodeId> out;
    for (NodeId i = 0; i < roles.size(); ++i)
      if (roles[i] == r) out.push_back(i);
    return out;
  }
};

// Stratified split: per class, nodes are shuffled and cut at rounded ratio
// counts. Classes with fewer nodes than roles go entirely to train.
inline SplitAssignment split_nodes(const TextAttributedGraph& g, SplitRatios ratios,
                                   std::uint64_t seed) {
  if (ratios.train <= 0 || ratios.val <= 0 || ratios.test <= 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
    throw PreconditionError("split ratios must be positive and sum to 1");
  SplitAssignment out;
  out.roles.assign(g.num_nodes(), Role::kTest);
  std::vector<std::vector<NodeId>> by_class(static_cast<std::size_t>(g.num_classes()));
  for (NodeId i = 0; i < g.num_nodes(); ++i)
    by_class[static_cast<std::size_t>(g.label(i))].push_back(i);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    if (members.size() < 3) {
      for (NodeId i : members) out.roles[i] = Role::kTrain;
      out.warnings.push_back("class " + std::to_string(c) + " has " +
                             std::to_string(members.size()) +
                             " nodes; all assigned to train");
      continue;
    }
    Rng rng(derive_seed(seed, {c}));
    shuffle(members, rng);
    const double n = static_cast<double>(members.size());
    std::size_t n_train = static_cast<std::size_t>(std::floor(ratios.train * n + 0.5));
    std::size_t n_val = static_cast<std::size_t>(std::floor(ratios.val * n + 0.5));
    n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 2);
    n_val = std::clamp<std::size_t>(n_val, 1, members.size() - n_train - 1);
    for (std::size_t k = 0; k < members.size(); ++k) {
      out.roles[members[k]] = k < n_train ? Role::kTrain
                              : k < n_train + n_val ? Role::kVal
                                                    : Role::kTest;
    }
  }
  return out;
}

inline void save_splits(const SplitAssignment& split, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + path.string());
  for (NodeId i = 0; i < split.roles.size(); ++i)
    out << i << '\t' << role_name(split.roles[i]) << '\n';
}

inline SplitAssignment load_splits(const std::filesystem::path& path, std::size_t num_nodes) {
  auto in = detail::open_input(path);
  SplitAssignment split;
  split.roles.assign(num_nodes, Role::kTest);
  std::vector<bool> seen(num_nodes, false);
  std::string line;
  while (std::getline(in, line)) {
    std::string_view sv = detail::trim_cr(line);
    if (sv.empty()) continue;
    auto [a, b] = detail::split_pair(sv);
    auto id = detail::parse_int<std::int64_t>(a);
    if (!id || *id < 0 || static_cast<std::size_t>(*id) >= num_nodes)
      throw DatasetError("split file: bad node id");
    Role r;
    if (b == "train") r = Role::kTrain;
    else if (b == "val") r = Role::kVal;
    else if (b == "test") r = Role::kTest;
    else throw DatasetError("split file: unknown role '" + std::string(b) + "'");
    split.roles[static_cast<std::size_t>(*id)] = r;
    seen[static_cast<std::size_t>(*id)] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end())
    throw DatasetError("split file does not cover every node");
  return split;
}

}  // namespace tagattack
