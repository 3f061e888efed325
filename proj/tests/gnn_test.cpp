#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "test_support.hpp"

using namespace tagattack;
using tagattack::testing::make_graph;
using tagattack::testing::random_graph;

namespace {

GcnModel linear_identity_model(std::size_t d) {
  GcnModel m;
  m.weights.push_back(Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)));
  return m;
}

Matrix random_features(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = uniform_real(rng, -1.0, 1.0);
  return x;
}

GcnModel random_model(std::size_t d_in, std::size_t hidden, std::size_t classes, std::uint64_t seed) {
  const std::size_t dims[] = {d_in, hidden, classes};
  return GcnModel::initialize(dims, seed);
}

}  // namespace

TEST(Forward, RowsSumToOne) {
  const auto g = random_graph({.nodes = 12, .edge_prob = 0.3}, 1);
  const NormalizedAdjacency adj(g);
  const Matrix x = random_features(12, 6, 2);
  const Matrix p = forward(random_model(6, 5, 3, 3), adj, x);
  for (Eigen::Index i = 0; i < p.rows(); ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-9);
}

TEST(Forward, IdenticalFeaturesOnEdgelessGraph) {
  const auto g = make_graph({"a", "b", "c"}, {0, 0, 0}, 2, {});
  const NormalizedAdjacency adj(g);
  Matrix x(3, 4);
  x.rowwise() = RowVector::LinSpaced(4, -1.0, 1.0);
  const Matrix p = forward(random_model(4, 3, 2, 5), adj, x);
  EXPECT_EQ(p.row(0), p.row(1));
  EXPECT_EQ(p.row(1), p.row(2));
}

TEST(Forward, SoftmaxArithmetic) {
  const auto g = make_graph({"a"}, {0}, 2, {});
  GcnModel m;
  Matrix w(1, 2);
  w << 1.0, 0.0;
  m.weights.push_back(w);
  Matrix x(1, 1);
  x << 1.0;
  const Matrix p = forward(m, NormalizedAdjacency(g), x);
  const double e = std::exp(1.0);
  EXPECT_NEAR(p(0, 0), e / (e + 1.0), 1e-15);
  EXPECT_NEAR(p(0, 1), 1.0 / (e + 1.0), 1e-15);
  EXPECT_NEAR(p(0, 0), 0.7311, 5e-5);
  EXPECT_NEAR(p(0, 1), 0.2689, 5e-5);
}

TEST(ConfidenceGap, Examples) {
  RowVector a(3);
  a << 0.7, 0.2, 0.1;
  EXPECT_NEAR(confidence_gap(a), 0.5, 1e-15);
  RowVector u = RowVector::Constant(3, 1.0 / 3.0);
  EXPECT_EQ(confidence_gap(u), 0.0);
  RowVector one(2);
  one << 1.0, 0.0;
  EXPECT_EQ(confidence_gap(one), 1.0);
  RowVector single(1);
  single << 1.0;
  EXPECT_THROW(confidence_gap(single), PreconditionError);
}

TEST(LocalForward, MatchesFullForwardWithOverride) {
  const auto g = random_graph({.nodes = 20, .edge_prob = 0.15}, 4);
  const NormalizedAdjacency adj(g);
  const Matrix x = random_features(20, 8, 5);
  const GcnModel m = random_model(8, 6, 3, 6);
  const LocalForward local(m, x);
  const FeatureOverride ovr{7, RowVector::LinSpaced(8, 0.5, -0.5)};
  Matrix x2 = x;
  x2.row(7) = ovr.row;
  const Matrix full = forward(m, adj, x2);
  const std::vector<NodeId> targets{7, 2, 13};
  const Matrix p = local.probs(adj, targets, &ovr);
  for (std::size_t t = 0; t < targets.size(); ++t)
    EXPECT_LE((p.row(static_cast<Eigen::Index>(t)) - full.row(targets[t])).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(TrainGcn, SeparatesTwoClusters) {
  SyntheticConfig sc;
  sc.nodes = 60;
  sc.p_in = 0.3;
  sc.p_out = 0.01;
  sc.off_class_rate = 0.0;
  sc.class_word_rate = 0.6;
  const auto b = generate_synthetic(sc, 11);
  const auto split = split_nodes(b.graph, {}, 12);
  const HashingEncoder enc;
  const Matrix x = enc.encode_all(b.graph);
  TrainConfig tc;
  tc.seed = 13;
  const GcnModel m = train_gcn(b.graph, x, split, tc);
  const Matrix p = forward(m, NormalizedAdjacency(b.graph), x);
  EXPECT_GE(accuracy(p, b.graph.labels(), split.nodes(Role::kTest)), 0.9);
}

TEST(TrainGcn, ZeroEpochsReturnsInitialization) {
  const auto b = generate_synthetic(SyntheticConfig{}, 3);
  const auto split = split_nodes(b.graph, {}, 1);
  const HashingEncoder enc;
  const Matrix x = enc.encode_all(b.graph);
  TrainConfig tc;
  tc.epochs = 0;
  tc.seed = 21;
  const GcnModel m = train_gcn(b.graph, x, split, tc);
  const std::size_t dims[] = {enc.dim(), tc.hidden, 2};
  EXPECT_EQ(m, GcnModel::initialize(dims, 21));
  const Matrix p = forward(m, NormalizedAdjacency(b.graph), x);
  EXPECT_LE((p.array() - 0.5).abs().maxCoeff(), 0.1);
}

TEST(TrainGcn, DeterministicPerSeed) {
  const auto b = generate_synthetic(SyntheticConfig{}, 4);
  const auto split = split_nodes(b.graph, {}, 1);
  const Matrix x = HashingEncoder().encode_all(b.graph);
  TrainConfig tc;
  tc.epochs = 30;
  tc.seed = 5;
  EXPECT_EQ(train_gcn(b.graph, x, split, tc), train_gcn(b.graph, x, split, tc));
  tc.seed = 6;
  const auto other = train_gcn(b.graph, x, split, tc);
  tc.seed = 5;
  EXPECT_FALSE(other == train_gcn(b.graph, x, split, tc));
}

TEST(TrainGcn, NonFiniteLossAborts) {
  const auto b = generate_synthetic(SyntheticConfig{}, 4);
  const auto split = split_nodes(b.graph, {}, 1);
  const Matrix x = HashingEncoder().encode_all(b.graph);
  TrainConfig tc;
  tc.lr = 1e300;
  tc.epochs = 20;
  try {
    train_gcn(b.graph, x, split, tc);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(Checkpoint, RoundTripAndMalformed) {
  const GcnModel m = random_model(5, 4, 3, 8);
  const auto dir = std::filesystem::temp_directory_path() / "tagattack_ckpt";
  std::filesystem::create_directories(dir);
  save_model(m, dir / "m.json");
  EXPECT_EQ(load_model(dir / "m.json"), m);
  {
    std::ofstream out(dir / "bad.json");
    out << "{\"format\": \"tagattack-gcn\", \"version\": 1, \"seed\": 0, \"dims\": [2, 2], \"weights\": [[1]]}";
  }
  EXPECT_THROW(load_model(dir / "bad.json"), DatasetError);
  {
    std::ofstream out(dir / "junk.json");
    out << "not json";
  }
  EXPECT_THROW(load_model(dir / "junk.json"), DatasetError);
}

TEST(Influence, SelfOnEdgelessIdentityModel) {
  const auto g = make_graph({"a", "b"}, {0, 0}, 4, {});
  const NormalizedAdjacency adj(g);
  const Matrix x = random_features(2, 4, 1);
  const auto s = jacobian_influence(linear_identity_model(4), adj, x, 0, 0, 1);
  EXPECT_DOUBLE_EQ(s.raw, 4.0);
  EXPECT_DOUBLE_EQ(s.normalized, 1.0);
}

TEST(Influence, OutsideReceptiveFieldIsZero) {
  // path 0-1-2-3
  const auto g = make_graph({"a", "b", "c", "d"}, {0, 0, 0, 0}, 2, {{0, 1}, {1, 2}, {2, 3}});
  const NormalizedAdjacency adj(g);
  const Matrix x = random_features(4, 5, 2);
  const GcnModel m = random_model(5, 4, 2, 3);
  EXPECT_EQ(jacobian_influence(m, adj, x, 0, 3, 2).raw, 0.0);
  EXPECT_EQ(jacobian_influence(m, adj, x, 0, 3, 2, InfluenceMode::kAdjPower).raw, 0.0);
  const ForwardTrace t = forward_trace(m, adj, x);
  EXPECT_EQ(influence_jacobian(m, adj, t, 0, 3, 2).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Influence, PathOfTwoNormalizedHalf) {
  const auto g = make_graph({"a", "b"}, {0, 0}, 1, {{0, 1}});
  const NormalizedAdjacency adj(g);
  Matrix x(2, 1);
  x << 0.3, -0.7;
  const GcnModel m = linear_identity_model(1);
  const auto s = jacobian_influence(m, adj, x, 0, 1, 1);
  EXPECT_DOUBLE_EQ(s.raw, 0.5);
  EXPECT_DOUBLE_EQ(s.normalized, 0.5);
  const Matrix fd = finite_difference_jacobian(m, adj, x, 0, 1, 1, 1e-5);
  EXPECT_NEAR(fd(0, 0), 0.5, 1e-10);
}

TEST(Influence, NormalizedSumsToOneAndReverseMatchesForward) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto g = random_graph({.nodes = 10, .edge_prob = 0.3}, seed);
    const NormalizedAdjacency adj(g);
    const Matrix x = random_features(10, 6, seed + 100);
    const GcnModel m = random_model(6, 5, 3, seed + 200);
    const ForwardTrace t = forward_trace(m, adj, x);
    for (NodeId u = 0; u < 10; u += 3) {
      const auto row = influence_row(m, adj, t, u, 2);
      double total = 0.0;
      for (NodeId w = 0; w < 10; ++w) {
        const auto s = jacobian_influence(m, adj, t, u, w, 2);
        total += s.normalized;
        const double forward_l1 = influence_jacobian(m, adj, t, u, w, 2).cwiseAbs().sum();
        EXPECT_NEAR(s.raw, forward_l1, 1e-12 * std::max(1.0, forward_l1));
        EXPECT_EQ(row.count(w) ? row.at(w) : 0.0, s.raw);
      }
      if (!row.empty()) EXPECT_NEAR(total, 1.0, 1e-9);
    }
  }
}

TEST(Influence, AdjacencyPowerMode) {
  const auto g = random_graph({.nodes = 8, .edge_prob = 0.35}, 6);
  const NormalizedAdjacency adj(g);
  Matrix dense = Matrix::Zero(8, 8);
  for (NodeId i = 0; i < 8; ++i) adj.for_each(i, [&](NodeId j, double c) { dense(i, j) = c; });
  const Matrix a2 = dense * dense;
  const Matrix x = random_features(8, 3, 1);
  const GcnModel m = random_model(3, 3, 2, 2);
  for (NodeId v = 0; v < 8; ++v)
    EXPECT_NEAR(jacobian_influence(m, adj, x, 2, v, 2, InfluenceMode::kAdjPower).raw, a2(2, v), 1e-15);
}

TEST(FiniteDifference, AgreesWithAnalyticOnRandomGraph) {
  const auto g = random_graph({.nodes = 10, .edge_prob = 0.3}, 17);
  const NormalizedAdjacency adj(g);
  Matrix x = random_features(10, 6, 18);
  const GcnModel m = random_model(6, 7, 3, 19);
  const ForwardTrace t = forward_trace(m, adj, x);
  ASSERT_GT(min_abs_hidden_preactivation(t), 1e-3);
  for (NodeId u = 0; u < 10; ++u)
    for (NodeId v = 0; v < 10; ++v) {
      const Matrix j = influence_jacobian(m, adj, t, u, v, 2);
      const Matrix fd = finite_difference_jacobian(m, adj, x, u, v, 2, 1e-5);
      const double scale = std::max(j.cwiseAbs().maxCoeff(), 1e-300);
      if (j.cwiseAbs().maxCoeff() == 0.0) {
        EXPECT_LE(fd.cwiseAbs().maxCoeff(), 1e-9);
        continue;
      }
      EXPECT_LE((j - fd).cwiseAbs().maxCoeff() / scale, 1e-4) << u << "," << v;
    }
}

TEST(FiniteDifference, SingleLinearLayerRecoversAdjacencyTimesWeights) {
  const auto g = random_graph({.nodes = 6, .edge_prob = 0.5}, 3);
  const NormalizedAdjacency adj(g);
  GcnModel m;
  m.weights.push_back(random_features(4, 3, 7));
  const Matrix x = random_features(6, 4, 8);
  const Matrix fd = finite_difference_jacobian(m, adj, x, 2, 2, 1, 1e-4);
  const Matrix expected = adj.at(2, 2) * m.weights[0].transpose();
  EXPECT_LE((fd - expected).cwiseAbs().maxCoeff(), 1e-9);
}

// The network is piecewise linear in its inputs, so central differences of
// the logits carry no truncation error. The second-order behaviour shows on
// the probabilities, whose analytic Jacobian is softmax' * logit Jacobian.
TEST(FiniteDifference, CentralDifferenceErrorIsSecondOrder) {
  const auto g = random_graph({.nodes = 8, .edge_prob = 0.35}, 23);
  const NormalizedAdjacency adj(g);
  const Matrix x = random_features(8, 5, 24);
  // first weight draw whose hidden units all stay clear of the kink
  GcnModel m;
  ForwardTrace t;
  for (std::uint64_t seed = 25;; ++seed) {
    m = random_model(5, 6, 3, seed);
    t = forward_trace(m, adj, x);
    if (min_abs_hidden_preactivation(t) > 5e-2) break;
  }
  const NodeId u = 1, v = 1;
  const RowVector p = t.probs.row(u);
  const Matrix soft = Matrix(p.transpose().asDiagonal()) - p.transpose() * p;
  const Matrix analytic = soft * influence_jacobian(m, adj, t, u, v, 2);

  auto fd_error = [&](double eps) {
    Matrix xx = x;
    Matrix fd(analytic.rows(), analytic.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      xx(v, c) = x(v, c) + eps;
      const RowVector plus = forward(m, adj, xx).row(u);
      xx(v, c) = x(v, c) - eps;
      const RowVector minus = forward(m, adj, xx).row(u);
      xx(v, c) = x(v, c);
      fd.col(c) = ((plus - minus) / (2 * eps)).transpose();
    }
    return (fd - analytic).cwiseAbs().maxCoeff();
  };
  const double e1 = fd_error(4e-3);
  const double e2 = fd_error(2e-3);
  ASSERT_GT(e2, 0.0);
  const double ratio = e1 / e2;
  EXPECT_GT(ratio, 3.0);
  EXPECT_LT(ratio, 5.0);
}
