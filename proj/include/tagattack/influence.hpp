#pragma once

// Feature influence of node v on node u after k GCN layers:
//   I(u, v, k) = || d X_u^(k) / d X_v^(0) ||_1   (entrywise L1)
//   I_u(v, k)  = I(u, v, k) / sum_w I(u, w, k)
// The Jacobian is taken at the current input with the ReLU gates frozen, on
// pre-softmax outputs. `kAdjPower` replaces the raw value by (Â^k)_uv.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <utility>
#include <vector>

#include "tagattack/gcn.hpp"
#include "tagattack/graph.hpp"
#include "tagattack/linalg.hpp"

namespace tagattack {

enum class InfluenceMode { kJacobian, kAdjPower };

struct InfluenceScore {
  double raw = 0.0;
  double normalized = 0.0;
};

namespace detail {

// Hop distance from `source` for every node within `max_hops`, following
// the adjacency's nonzero pattern.
template <class Adjacency>
std::map<NodeId, int> adjacency_hops(const Adjacency& adj, NodeId source, int max_hops) {
  std::map<NodeId, int> dist{{source, 0}};
  std::vector<NodeId> frontier{source};
  for (int h = 1; h <= max_hops && !frontier.empty(); ++h) {
    std::vector<NodeId> next;
    for (NodeId x : frontier)
      adj.for_each(x, [&](NodeId y, double) {
        if (dist.emplace(y, h).second) next.push_back(y);
      });
    frontier = std::move(next);
  }
  return dist;
}

inline void check_layers(const GcnModel& model, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > model.num_layers())
    throw PreconditionError("influence depth k must lie in [1, num_layers]");
}

// Gate of layer l's output at row i (hidden layers only).
inline Eigen::Array<double, 1, Eigen::Dynamic> gate(const ForwardTrace& t, std::size_t l, NodeId i) {
  return (t.pre[l].row(i).array() > 0.0).cast<double>();
}

}  // namespace detail

// d X_u^(k) / d X_v^(0) by forward-mode accumulation (d_k x d_in).
template <class Adjacency>
Matrix influence_jacobian(const GcnModel& model, const Adjacency& adj, const ForwardTrace& trace,
                          NodeId u, NodeId v, int k) {
  detail::check_layers(model, k);
  const std::size_t L = model.num_layers();
  const auto dist_u = detail::adjacency_hops(adj, u, k);
  const auto d_in = static_cast<Eigen::Index>(model.input_dim());

  std::map<NodeId, Matrix> tangent;
  if (dist_u.count(v) && dist_u.at(v) <= k) tangent.emplace(v, Matrix::Identity(d_in, d_in));

  for (int l = 0; l < k && !tangent.empty(); ++l) {
    const Matrix& w = model.weights[static_cast<std::size_t>(l)];
    std::map<NodeId, Matrix> q;
    for (auto& [j, tj] : tangent) q.emplace(j, w.transpose() * tj);
    std::map<NodeId, Matrix> next;
    const int remaining = k - (l + 1);
    for (const auto& [j, qj] : q) {
      adj.for_each(j, [&](NodeId i, double c) {
        auto it = dist_u.find(i);
        if (it == dist_u.end() || it->second > remaining) return;
        auto [slot, fresh] = next.try_emplace(i, Matrix::Zero(qj.rows(), qj.cols()));
        slot->second.noalias() += c * qj;
      });
    }
    if (static_cast<std::size_t>(l) + 1 < L) {
      for (auto& [i, ti] : next)
        ti = detail::gate(trace, static_cast<std::size_t>(l), i).matrix().asDiagonal() * ti;
    }
    tangent = std::move(next);
  }
  auto it = tangent.find(u);
  const auto d_out = static_cast<Eigen::Index>(model.weights[static_cast<std::size_t>(k - 1)].cols());
  return it == tangent.end() ? Matrix::Zero(d_out, d_in) : it->second;
}

// Raw influence I(u, w, k) for every w with a nonzero Jacobian, by
// reverse-mode accumulation from u.
template <class Adjacency>
std::map<NodeId, double> influence_row(const GcnModel& model, const Adjacency& adj,
                                       const ForwardTrace& trace, NodeId u, int k) {
  detail::check_layers(model, k);
  const std::size_t L = model.num_layers();
  const auto d_out = static_cast<Eigen::Index>(model.weights[static_cast<std::size_t>(k - 1)].cols());
  std::map<NodeId, Matrix> adjoint;
  adjoint.emplace(u, Matrix::Identity(d_out, d_out));
  for (int l = k - 1; l >= 0; --l) {
    if (static_cast<std::size_t>(l) + 1 < L) {
      for (auto& [i, ai] : adjoint)
        ai = ai * detail::gate(trace, static_cast<std::size_t>(l), i).matrix().asDiagonal();
    }
    const Matrix& w = model.weights[static_cast<std::size_t>(l)];
    std::map<NodeId, Matrix> next;
    for (const auto& [i, ai] : adjoint) {
      const Matrix aw = ai * w.transpose();
      adj.for_each(i, [&](NodeId j, double c) {
        auto [slot, fresh] = next.try_emplace(j, Matrix::Zero(aw.rows(), aw.cols()));
        slot->second.noalias() += c * aw;
      });
    }
    adjoint = std::move(next);
  }
  std::map<NodeId, double> out;
  for (const auto& [wnode, jac] : adjoint) out[wnode] = jac.cwiseAbs().sum();
  return out;
}

// (Â^k)_{u,w} for all reachable w.
template <class Adjacency>
std::map<NodeId, double> adjacency_power_row(const Adjacency& adj, NodeId u, int k) {
  std::map<NodeId, double> row{{u, 1.0}};
  for (int step = 0; step < k; ++step) {
    std::map<NodeId, double> next;
    for (const auto& [i, val] : row) adj.for_each(i, [&](NodeId j, double c) { next[j] += val * c; });
    row = std::move(next);
  }
  return row;
}

template <class Adjacency>
InfluenceScore jacobian_influence(const GcnModel& model, const Adjacency& adj,
                                  const ForwardTrace& trace, NodeId u, NodeId v, int k,
                                  InfluenceMode mode = InfluenceMode::kJacobian) {
  InfluenceScore s;
  // One reverse sweep from u yields every I(u, w, k), including w = v.
  const std::map<NodeId, double> row = mode == InfluenceMode::kAdjPower
                                           ? adjacency_power_row(adj, u, k)
                                           : influence_row(model, adj, trace, u, k);
  auto it = row.find(v);
  s.raw = it == row.end() ? 0.0 : it->second;
  double total = 0.0;
  for (const auto& [w, val] : row) total += val;
  s.normalized = total > 0.0 ? s.raw / total : 0.0;
  return s;
}

template <class Adjacency>
InfluenceScore jacobian_influence(const GcnModel& model, const Adjacency& adj,
                                  const Matrix& features, NodeId u, NodeId v, int k,
                                  InfluenceMode mode = InfluenceMode::kJacobian) {
  return jacobian_influence(model, adj, forward_trace(model, adj, features), u, v, k, mode);
}

// Output of node u after layer k: post-ReLU for hidden layers, logits for
// the last one.
inline RowVector layer_output(const ForwardTrace& t, std::size_t num_layers, NodeId u, int k) {
  const RowVector z = t.pre[static_cast<std::size_t>(k - 1)].row(u);
  return static_cast<std::size_t>(k) < num_layers ? RowVector(z.cwiseMax(0.0)) : z;
}

// Central differences of node u's layer-k output w.r.t. each coordinate of
// node v's input features (d_k x d_in).
template <class Adjacency>
Matrix finite_difference_jacobian(const GcnModel& model, const Adjacency& adj,
                                  const Matrix& features, NodeId u, NodeId v, int k, double eps) {
  detail::check_layers(model, k);
  if (!(eps > 0.0)) throw PreconditionError("finite-difference step must be positive");
  const auto d_in = features.cols();
  const auto d_out = model.weights[static_cast<std::size_t>(k - 1)].cols();
  Matrix jac(d_out, d_in);
  Matrix x = features;
  for (Eigen::Index c = 0; c < d_in; ++c) {
    const double orig = x(v, c);
    x(v, c) = orig + eps;
    const RowVector plus = layer_output(forward_trace(model, adj, x), model.num_layers(), u, k);
    x(v, c) = orig - eps;
    const RowVector minus = layer_output(forward_trace(model, adj, x), model.num_layers(), u, k);
    x(v, c) = orig;
    jac.col(c) = ((plus - minus) / (2.0 * eps)).transpose();
  }
  return jac;
}

// Smallest |pre-activation| over hidden layers that feed a ReLU; values near
// zero mean a finite-difference step may cross a kink.
inline double min_abs_hidden_preactivation(const ForwardTrace& t) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l + 1 < t.pre.size(); ++l) m = std::min(m, t.pre[l].cwiseAbs().minCoeff());
  return m;
}

}  // namespace tagattack
