#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"

using namespace tagattack;
using tagattack::testing::make_graph;
using tagattack::testing::random_graph;
namespace tt = tagattack::testing;

namespace {

StealthReport audit(const TextAttributedGraph& g0, const TextAttributedGraph& g1, const HashingEncoder& enc,
                    PerplexityScorer* scorer = nullptr) {
  const Matrix x0 = enc.encode_all(g0);
  const Matrix x1 = enc.encode_all(g1);
  return stealth_report({&g0, &x0}, {&g1, &x1}, enc, {}, scorer);
}

HashingEncoder small_encoder() {
  EncoderConfig c;
  c.dim = 64;
  return HashingEncoder(c);
}

}  // namespace

TEST(Homophily, IdenticalFeaturesGiveOne) {
  const auto g = make_graph({"a", "b"}, {0, 0}, 1, {{0, 1}});
  Matrix x(2, 3);
  x << 0.6, 0.8, 0.0, 0.6, 0.8, 0.0;
  EXPECT_NEAR(*node_homophily(g, x, 0), 1.0, 1e-15);
  EXPECT_NEAR(*node_homophily(g, x, 1), 1.0, 1e-15);
}

TEST(Homophily, OrthogonalNeighborsGiveZero) {
  const auto g = make_graph({"a", "b", "c"}, {0, 0, 0}, 1, {{0, 1}, {0, 2}});
  Matrix x(3, 3);
  x << 1, 0, 0, 0, 1, 0, 0, 0, 1;
  EXPECT_EQ(*node_homophily(g, x, 0), 0.0);
}

TEST(Homophily, IsolatedNodesAreExcluded) {
  const auto g = make_graph({"a", "b", "c"}, {0, 0, 0}, 1, {{0, 1}});
  Matrix x = Matrix::Identity(3, 3);
  const auto p = homophily_profile(g, x);
  EXPECT_FALSE(p.h[2].has_value());
  std::size_t mass = 0;
  for (auto c : p.histogram) mass += c;
  EXPECT_EQ(mass, 2u);
  EXPECT_THROW(homophily_profile(g, Matrix::Identity(2, 2)), PreconditionError);
}

TEST(Homophily, Bins) {
  EXPECT_EQ(homophily_bin(-1.0), 0u);
  EXPECT_EQ(homophily_bin(-0.951), 0u);
  EXPECT_EQ(homophily_bin(0.0), 20u);
  EXPECT_EQ(homophily_bin(1.0), kHomophilyBins - 1);
}

TEST(Report, IdentityAttack) {
  const auto g = random_graph({.nodes = 30, .edge_prob = 0.15}, 1);
  const auto r = audit(g, g, small_encoder());
  EXPECT_EQ(r.removed_edges, 0u);
  EXPECT_EQ(r.degree_l1_total, 0u);
  EXPECT_EQ(r.mean_abs_homophily_change, 0.0);
  EXPECT_EQ(r.max_abs_homophily_change, 0.0);
  EXPECT_TRUE(r.texts.empty());
  EXPECT_EQ(r.similarity_violations + r.homophily_violations + r.degree_violations, 0u);
  EXPECT_EQ(r.homophily_before, r.homophily_after);
}

TEST(Report, DegreeIdentityOnHundredNodes) {
  const auto g = random_graph({.nodes = 100, .edge_prob = 0.05}, 2);
  ASSERT_GE(g.num_edges(), 3u);
  const std::vector<Edge> drop{g.edges()[0], g.edges()[5], g.edges()[17]};
  const auto g1 = remove_edges(g, drop);
  const auto r = audit(g, g1, small_encoder());
  EXPECT_EQ(r.removed_edges, 3u);
  EXPECT_EQ(r.degree_l1_total, 6u);
  EXPECT_DOUBLE_EQ(r.mean_degree_shift, 0.06);
  EXPECT_DOUBLE_EQ(r.degree_identity_value, 0.06);
  EXPECT_TRUE(r.degree_identity_holds);
  EXPECT_EQ(r.homophily_checks.size() <= 6u, true);
}

TEST(Report, MixedEditsCanCancelDegreeShift) {
  const auto g = make_graph({"a", "b", "c"}, {0, 0, 0}, 1, {{0, 1}});
  const auto g1 = make_graph({"a", "b", "c"}, {0, 0, 0}, 1, {{0, 2}});
  const auto r = audit(g, g1, small_encoder());
  EXPECT_EQ(r.degree_l1_total, 2u);
  EXPECT_FALSE(r.degree_identity_holds);
  EXPECT_EQ(r.degree_violations, 1u);
}

TEST(Report, HomophilyFirstOrderBoundOnSingleDeletions) {
  std::size_t checks = 0, violations = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto g = random_graph({.nodes = 40, .edge_prob = 0.12}, seed);
    std::vector<Edge> drop;
    for (std::size_t i = 0; i < g.num_edges(); i += 7) drop.push_back(g.edges()[i]);
    const auto r = audit(g, remove_edges(g, drop), small_encoder());
    checks += r.homophily_checks.size();
    violations += r.homophily_violations;
    for (const auto& c : r.homophily_checks) EXPECT_GE(c.bound, 0.0);
  }
  ASSERT_GT(checks, 50u);
  EXPECT_EQ(violations, 0u);
}

TEST(Report, UntouchedRegionsKeepHomophily) {
  const auto g = random_graph({.nodes = 40, .edge_prob = 0.08}, 3);
  const std::vector<Edge> drop{g.edges()[2]};
  const auto g1 = remove_edges(g, drop);
  const auto enc = small_encoder();
  const Matrix x = enc.encode_all(g);
  const auto p0 = homophily_profile(g, x);
  const auto p1 = homophily_profile(g1, x);
  std::set<NodeId> touched{drop[0].u, drop[0].v};
  for (NodeId u = 0; u < 40; ++u) {
    bool near = touched.count(u) > 0;
    for (NodeId w : g.neighbors(u)) near = near || touched.count(w) > 0;
    if (!near) EXPECT_EQ(p0.h[u], p1.h[u]) << u;
  }
}

TEST(Report, TextSimilarityAndPerplexityHook) {
  const auto g = make_graph({"graph node edge text", "label model"}, {0, 0}, 1, {{0, 1}});
  const auto g1 = g.with_texts({{0, tokenize("graph node edge word").tokens()}});
  PerplexityScorer ppl(FAKE_BRIDGE);
  const auto enc = small_encoder();
  const auto r = audit(g, g1, enc, &ppl);
  ASSERT_EQ(r.texts.size(), 1u);
  EXPECT_EQ(r.texts[0].node, 0u);
  EXPECT_DOUBLE_EQ(r.texts[0].rho, 0.25);
  EXPECT_DOUBLE_EQ(r.texts[0].bound, similarity_lower_bound(0.25, 0.5));
  EXPECT_EQ(r.texts[0].similarity,
            cosine_similarity(enc.encode(tokenize("graph node edge text")), enc.encode(tokenize("graph node edge word"))));
  ASSERT_TRUE(r.ppl.has_value());
  EXPECT_DOUBLE_EQ(*r.ppl, 13.0);
  EXPECT_FALSE(audit(g, g1, enc).ppl.has_value());
}

TEST(Report, NodeCountMismatch) {
  const auto a = make_graph({"a"}, {0}, 1, {});
  const auto b = make_graph({"a", "b"}, {0, 0}, 1, {});
  EXPECT_THROW(audit(a, b, small_encoder()), PreconditionError);
}

TEST(Report, JsonAndCsv) {
  const auto g = random_graph({.nodes = 20, .edge_prob = 0.2}, 4);
  const std::vector<Edge> drop{g.edges()[0]};
  const auto r = audit(g, remove_edges(g, drop), small_encoder());
  const auto j = stealth_to_json(r);
  EXPECT_EQ(j["removed_edges"], 1);
  EXPECT_TRUE(j["ppl"].is_null());
  EXPECT_EQ(j["degree"]["identity_value"], 0.1);
  std::ostringstream h, d;
  write_homophily_csv(r, h);
  write_degree_csv(r, d);
  const std::string hs = h.str();
  EXPECT_EQ(std::count(hs.begin(), hs.end(), '\n'), static_cast<long>(kHomophilyBins + 1));
  EXPECT_EQ(hs.rfind("bin_low,bin_high,count_before,count_after\n", 0), 0u);
  EXPECT_EQ(d.str().rfind("degree,count_before,count_after\n", 0), 0u);
}

TEST(Report, SyntheticAttackTextSimilarity) {
  RunConfig cfg = tt::small_run_config(2);
  cfg.synthetic.nodes = 300;
  cfg.targets = 40;
  const Dataset d = load_dataset(cfg);
  auto victim = prepare_victim(cfg, d);
  const auto rep = run_attack(cfg, *victim, d.split, make_generator_factory(cfg, d), 1);
  ASSERT_FALSE(rep.stealth.texts.empty());
  EXPECT_GE(rep.stealth.mean_similarity, 1.0 - 0.09 * 0.5 - 0.05);
  EXPECT_TRUE(rep.stealth.degree_identity_holds);
  EXPECT_EQ(rep.stealth.degree_l1_total, 2 * rep.stealth.removed_edges);
}
