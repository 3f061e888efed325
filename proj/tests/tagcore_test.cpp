#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace tagattack;
using tagattack::testing::make_graph;
using tagattack::testing::random_graph;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tagattack_tagcore_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary);
  out << body;
}

TextAttributedGraph star(std::size_t leaves) {
  std::vector<std::string> texts(leaves + 1, "w");
  std::vector<ClassId> labels(leaves + 1, 0);
  std::vector<Edge> edges;
  for (NodeId i = 1; i <= leaves; ++i) edges.push_back({0, i});
  return make_graph(texts, labels, 1, edges);
}

}  // namespace

TEST(LoadGraph, SymmetricDuplicatesCollapse) {
  const auto dir = scratch_dir("dup");
  write_file(dir / "nodes.tsv", "0\t0\thello world\n1\t1\tgraph text\n");
  write_file(dir / "edges.tsv", "0\t1\n1\t0\n");
  const auto g = load_graph(dir / "nodes.tsv", dir / "edges.tsv");
  ASSERT_EQ(g.num_edges(), 1u);
  EXPECT_EQ(g.edges()[0], (Edge{0, 1}));
  EXPECT_EQ(g.num_classes(), 2);
  EXPECT_EQ(g.tokens(1), (std::vector<std::string>{"graph", "text"}));
}

TEST(LoadGraph, SelfLoopDropped) {
  const auto dir = scratch_dir("loop");
  std::string nodes;
  for (int i = 0; i < 6; ++i) nodes += std::to_string(i) + "\t0\tw\n";
  write_file(dir / "nodes.tsv", nodes);
  write_file(dir / "edges.tsv", "0\t1\n2\t3\n");
  const auto g0 = load_graph(dir / "nodes.tsv", dir / "edges.tsv");
  write_file(dir / "edges.tsv", "0\t1\n2\t3\n5\t5\n");
  const auto g1 = load_graph(dir / "nodes.tsv", dir / "edges.tsv");
  EXPECT_EQ(g0.num_edges(), g1.num_edges());
  EXPECT_EQ(g1.degree(5), 0u);
}

TEST(LoadGraph, MalformedInputsAreDatasetErrors) {
  const auto dir = scratch_dir("bad");
  write_file(dir / "nodes.tsv", "0\t0\ta\n1\t0\tb\n");
  write_file(dir / "edges.tsv", "0\t7\n");
  EXPECT_THROW(load_graph(dir / "nodes.tsv", dir / "edges.tsv"), DatasetError);
  write_file(dir / "edges.tsv", "0\tx\n");
  EXPECT_THROW(load_graph(dir / "nodes.tsv", dir / "edges.tsv"), DatasetError);
  write_file(dir / "nodes.tsv", "0\t0\ta\n2\t0\tb\n");
  write_file(dir / "edges.tsv", "");
  EXPECT_THROW(load_graph(dir / "nodes.tsv", dir / "edges.tsv"), DatasetError);
  EXPECT_THROW(load_graph(dir / "missing.tsv", dir / "edges.tsv"), DatasetError);
  write_file(dir / "nodes.tsv", "0\t3\ta\n");
  EXPECT_THROW(load_graph(dir / "nodes.tsv", dir / "edges.tsv", 2), DatasetError);
}

TEST(LoadGraph, SaveLoadRoundTrip) {
  const auto g = random_graph({.nodes = 25, .edge_prob = 0.2}, 3);
  const auto dir = scratch_dir("rt");
  save_graph(g, dir / "n.tsv", dir / "e.tsv");
  const auto h = load_graph(dir / "n.tsv", dir / "e.tsv", g.num_classes());
  save_graph(h, dir / "n2.tsv", dir / "e2.tsv");
  EXPECT_EQ(g.edges(), h.edges());
  EXPECT_EQ(g.labels(), h.labels());
  for (NodeId u = 0; u < g.num_nodes(); ++u) EXPECT_EQ(g.tokens(u), h.tokens(u));
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(dir / "n.tsv"), slurp(dir / "n2.tsv"));
  EXPECT_EQ(slurp(dir / "e.tsv"), slurp(dir / "e2.tsv"));
}

// Set TAGATTACK_CORA_DIR to a directory holding nodes.tsv and edges.tsv.
TEST(LoadGraph, CoraStatistics) {
  const char* dir = std::getenv("TAGATTACK_CORA_DIR");
  if (!dir) GTEST_SKIP() << "TAGATTACK_CORA_DIR not set";
  const auto g = load_graph(fs::path(dir) / "nodes.tsv", fs::path(dir) / "edges.tsv");
  EXPECT_EQ(g.num_nodes(), 2708u);
  EXPECT_EQ(g.num_edges(), 5278u);
  EXPECT_EQ(g.num_classes(), 7);
  const auto split = split_nodes(g, {0.1, 0.1, 0.8}, 1);
  EXPECT_EQ(split.nodes(Role::kTrain).size() + split.nodes(Role::kVal).size() + split.nodes(Role::kTest).size(),
            2708u);
}

TEST(NormalizeAdjacency, IsolatedNode) {
  const auto g = make_graph({"a"}, {0}, 1, {});
  const NormalizedAdjacency a(g);
  EXPECT_EQ(a.nonzeros(), 1u);
  EXPECT_DOUBLE_EQ(a.at(0, 0), 1.0);
}

TEST(NormalizeAdjacency, PathOfTwo) {
  const auto g = make_graph({"a", "b"}, {0, 0}, 1, {{0, 1}});
  const NormalizedAdjacency a(g);
  EXPECT_DOUBLE_EQ(a.at(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(a.at(1, 0), 0.5);
  EXPECT_DOUBLE_EQ(a.at(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(a.at(1, 1), 0.5);
}

TEST(NormalizeAdjacency, StarHubLeaf) {
  const NormalizedAdjacency a(star(3));
  // hub: d~ = 4, leaf: d~ = 2
  for (NodeId leaf = 1; leaf <= 3; ++leaf) {
    EXPECT_NEAR(a.at(0, leaf), 1.0 / std::sqrt(8.0), 1e-15);
    EXPECT_NEAR(a.at(0, leaf), 0.35355, 5e-6);
  }
  EXPECT_DOUBLE_EQ(a.at(0, 0), 0.25);
  EXPECT_DOUBLE_EQ(a.at(1, 1), 0.5);
  EXPECT_EQ(a.at(1, 2), 0.0);
}

TEST(NormalizeAdjacency, SymmetricWithSpectralRadiusAtMostOne) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto g = random_graph({.nodes = 15, .edge_prob = 0.3}, seed);
    const NormalizedAdjacency a(g);
    const std::size_t n = g.num_nodes();
    Matrix dense = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (NodeId i = 0; i < n; ++i) a.for_each(i, [&](NodeId j, double c) { dense(i, j) = c; });
    EXPECT_LE((dense - dense.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    Vector x = Vector::Ones(static_cast<Eigen::Index>(n));
    double lambda = 0.0;
    for (int it = 0; it < 500; ++it) {
      Vector y = dense * x;
      lambda = y.norm() / x.norm();
      x = y / y.norm();
    }
    EXPECT_LE(lambda, 1.0 + 1e-9);
  }
}

TEST(PrunedAdjacency, MatchesRebuiltNormalization) {
  const auto g = random_graph({.nodes = 20, .edge_prob = 0.25}, 9);
  ASSERT_GE(g.num_edges(), 4u);
  const std::vector<Edge> drop{g.edges()[0], g.edges()[3]};
  const PrunedAdjacency lazy(g, drop);
  const NormalizedAdjacency rebuilt(remove_edges(g, drop));
  for (NodeId i = 0; i < g.num_nodes(); ++i) {
    std::vector<std::pair<NodeId, double>> a, b;
    lazy.for_each(i, [&](NodeId j, double c) { a.emplace_back(j, c); });
    rebuilt.for_each(i, [&](NodeId j, double c) { b.emplace_back(j, c); });
    EXPECT_EQ(a, b);
  }
}

TEST(SplitNodes, BalancedHundred) {
  std::vector<std::string> texts(100, "w");
  std::vector<ClassId> labels(100);
  for (int i = 0; i < 100; ++i) labels[static_cast<std::size_t>(i)] = i % 2;
  const auto g = make_graph(texts, labels, 2, {});
  const auto s = split_nodes(g, {0.1, 0.1, 0.8}, 7);
  EXPECT_EQ(s.nodes(Role::kTrain).size(), 10u);
  EXPECT_EQ(s.nodes(Role::kVal).size(), 10u);
  EXPECT_EQ(s.nodes(Role::kTest).size(), 80u);
  for (ClassId c = 0; c < 2; ++c) {
    std::size_t tr = 0, va = 0, te = 0;
    for (NodeId u = 0; u < 100; ++u) {
      if (labels[u] != c) continue;
      tr += s.roles[u] == Role::kTrain;
      va += s.roles[u] == Role::kVal;
      te += s.roles[u] == Role::kTest;
    }
    EXPECT_EQ(tr, 5u);
    EXPECT_EQ(va, 5u);
    EXPECT_EQ(te, 40u);
  }
  const auto t = split_nodes(g, {0.1, 0.1, 0.8}, 8);
  EXPECT_NE(s.roles, t.roles);
  EXPECT_EQ(t.nodes(Role::kTrain).size(), 10u);
  EXPECT_EQ(t.nodes(Role::kVal).size(), 10u);
  EXPECT_EQ(split_nodes(g, {0.1, 0.1, 0.8}, 7).roles, s.roles);
}

TEST(SplitNodes, TinyClassGoesToTrain) {
  const auto g = make_graph({"a", "b", "c", "d", "e", "f"}, {0, 0, 0, 0, 1, 1}, 2, {});
  const auto s = split_nodes(g, {}, 1);
  EXPECT_EQ(s.roles[4], Role::kTrain);
  EXPECT_EQ(s.roles[5], Role::kTrain);
  EXPECT_EQ(s.warnings.size(), 1u);
  EXPECT_EQ(s.roles.size(), 6u);
}

TEST(SplitNodes, SplitFileRoundTrip) {
  const auto g = random_graph({.nodes = 30}, 2);
  const auto s = split_nodes(g, {}, 5);
  const auto dir = scratch_dir("split");
  save_splits(s, dir / "s.tsv");
  EXPECT_EQ(load_splits(dir / "s.tsv", 30).roles, s.roles);
  write_file(dir / "bad.tsv", "0\ttrain\n1\tholdout\n");
  EXPECT_THROW(load_splits(dir / "bad.tsv", 2), DatasetError);
  write_file(dir / "short.tsv", "0\ttrain\n");
  EXPECT_THROW(load_splits(dir / "short.tsv", 2), DatasetError);
}

TEST(RemoveEdges, CardinalityAndIncidence) {
  std::vector<std::string> texts(6, "w");
  std::vector<ClassId> labels(6, 0);
  std::vector<Edge> edges;
  for (NodeId a = 0; a < 5 && edges.size() < 10; ++a)
    for (NodeId b = a + 1; b < 6 && edges.size() < 10; ++b) edges.push_back({a, b});
  const auto g = make_graph(texts, labels, 1, edges);
  ASSERT_EQ(g.num_edges(), 10u);
  const Edge e{1, 3};
  const auto h = remove_edges(g, std::vector<Edge>{e});
  EXPECT_EQ(h.num_edges(), 9u);
  EXPECT_EQ(h.degree(1), g.degree(1) - 1);
  EXPECT_EQ(h.degree(3), g.degree(3) - 1);
  EXPECT_EQ(h.num_nodes(), g.num_nodes());
  EXPECT_EQ(h.labels(), g.labels());
  for (NodeId u = 0; u < 6; ++u) EXPECT_EQ(h.tokens(u), g.tokens(u));
}

TEST(RemoveEdges, AbsentPairNamed) {
  const auto g = make_graph({"a", "b", "c"}, {0, 0, 0}, 1, {{0, 1}});
  try {
    remove_edges(g, std::vector<Edge>{{2, 1}});
    FAIL() << "expected an error";
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("{1,2}"), std::string::npos);
  }
}

TEST(RemoveEdges, MeanDegreeShiftOnHundredNodes) {
  const auto g = random_graph({.nodes = 100, .edge_prob = 0.05}, 4);
  ASSERT_GE(g.num_edges(), 3u);
  const std::vector<Edge> drop{g.edges()[0], g.edges()[1], g.edges()[2]};
  const auto h = remove_edges(g, drop);
  std::size_t l1 = 0;
  for (NodeId u = 0; u < 100; ++u) l1 += g.degree(u) - h.degree(u);
  EXPECT_EQ(l1, 6u);
  EXPECT_DOUBLE_EQ(static_cast<double>(l1) / 100.0, 0.06);
}

TEST(Graph, HopBallAndClosedNeighborhood) {
  // 0-1-2-3 path plus 1-4
  const auto g = make_graph({"a", "b", "c", "d", "e"}, {0, 0, 0, 0, 0}, 1, {{0, 1}, {1, 2}, {2, 3}, {1, 4}});
  const auto ball = hop_ball(g, 0, 2);
  std::map<NodeId, int> d(ball.begin(), ball.end());
  EXPECT_EQ(d.size(), 4u);
  EXPECT_EQ(d[2], 2);
  EXPECT_EQ(d.count(3), 0u);
  EXPECT_EQ(closed_neighborhood(g, 1), (std::vector<NodeId>{0, 1, 2, 4}));
}

TEST(Graph, InvalidConstruction) {
  EXPECT_THROW(make_graph({"a"}, {2}, 2, {}), DatasetError);
  EXPECT_THROW(make_graph({"a", "b"}, {0, 0}, 1, {{0, 5}}), DatasetError);
}
