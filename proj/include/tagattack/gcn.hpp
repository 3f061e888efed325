#pragma once

// k-layer graph convolutional network used as the victim classifier:
//   H(l+1) = ReLU(Â H(l) W(l)),  output = softmax(Â H(L-1) W(L-1)).
// No biases; ReLU derivative at 0 is 0.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tagattack/errors.hpp"
#include "tagattack/graph.hpp"
#include "tagattack/linalg.hpp"
#include "tagattack/rng.hpp"

namespace tagattack {

struct GcnModel {
  // weights[l] is d_l x d_{l+1}; the last output dimension is the class count.
  std::vector<Matrix> weights;
  std::uint64_t seed = 0;

  std::size_t num_layers() const noexcept { return weights.size(); }
  std::size_t input_dim() const { return static_cast<std::size_t>(weights.front().rows()); }
  std::size_t num_classes() const { return static_cast<std::size_t>(weights.back().cols()); }

  // Glorot-uniform initialization for layer sizes dims[0] -> ... -> dims.back().
  static GcnModel initialize(std::span<const std::size_t> dims, std::uint64_t seed) {
    if (dims.size() < 2) throw PreconditionError("GCN needs at least one layer");
    GcnModel m;
    m.seed = seed;
    Rng rng(derive_seed(seed, {0x1a7e4}));
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const double a = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
      Matrix w(static_cast<Eigen::Index>(dims[l]), static_cast<Eigen::Index>(dims[l + 1]));
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = uniform_real(rng, -a, a);
      m.weights.push_back(std::move(w));
    }
    return m;
  }

  bool operator==(const GcnModel& o) const {
    if (seed != o.seed || weights.size() != o.weights.size()) return false;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (weights[l].rows() != o.weights[l].rows() || weights[l].cols() != o.weights[l].cols())
        return false;
      if (weights[l] != o.weights[l]) return false;
    }
    return true;
  }
};

// ---------------------------------------------------------------------------
// Small row utilities

inline void softmax_inplace(Eigen::Ref<RowVector> z) {
  const double m = z.maxCoeff();
  z = (z.array() - m).exp();
  z /= z.sum();
}

inline Matrix softmax_rows(Matrix z) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) softmax_inplace(z.row(i));
  return z;
}

// Lowest index among maxima.
inline ClassId argmax(const Eigen::Ref<const RowVector>& row) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < row.size(); ++c)
    if (row[c] > row[best]) best = c;
  return static_cast<ClassId>(best);
}

// Largest minus second-largest probability.
inline double confidence_gap(const Eigen::Ref<const RowVector>& probs) {
  if (probs.size() < 2) throw PreconditionError("confidence gap needs at least two classes");
  double first = -std::numeric_limits<double>::infinity();
  double second = first;
  for (Eigen::Index c = 0; c < probs.size(); ++c) {
    const double p = probs[c];
    if (p > first) {
      second = first;
      first = p;
    } else if (p > second) {
      second = p;
    }
  }
  return first - second;
}

inline double accuracy(const Matrix& probs, const std::vector<ClassId>& labels,
                       std::span<const NodeId> nodes) {
  if (nodes.empty()) return 0.0;
  std::size_t hit = 0;
  for (NodeId u : nodes) hit += argmax(probs.row(u)) == labels[u];
  return static_cast<double>(hit) / static_cast<double>(nodes.size());
}

// ---------------------------------------------------------------------------
// Full forward pass

// out.row(i) = sum_j Â_ij in.row(j), accumulated in adjacency order.
template <class Adjacency>
Matrix propagate(const Adjacency& adj, const Matrix& in) {
  Matrix out = Matrix::Zero(in.rows(), in.cols());
  for (NodeId i = 0; i < static_cast<NodeId>(in.rows()); ++i)
    adj.for_each(i, [&](NodeId j, double c) { out.row(i).noalias() += c * in.row(j); });
  return out;
}

struct ForwardTrace {
  std::vector<Matrix> inputs;  // H(l) for l = 0..L-1; inputs[0] is the feature matrix
  std::vector<Matrix> pre;     // Â H(l) W(l) for l = 0..L-1; pre.back() are the logits
  Matrix probs;

  const Matrix& logits() const { return pre.back(); }
};

template <class Adjacency>
ForwardTrace forward_trace(const GcnModel& model, const Adjacency& adj, const Matrix& features) {
  if (static_cast<std::size_t>(features.cols()) != model.input_dim())
    throw PreconditionError("feature dimension does not match the model input");
  ForwardTrace t;
  Matrix h = features;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    Matrix hw = h * model.weights[l];
    Matrix z = propagate(adj, hw);
    t.inputs.push_back(std::move(h));
    if (l + 1 < model.num_layers()) h = z.cwiseMax(0.0);
    t.pre.push_back(std::move(z));
  }
  t.probs = softmax_rows(t.pre.back());
  return t;
}

template <class Adjacency>
Matrix forward(const GcnModel& model, const Adjacency& adj, const Matrix& features) {
  return forward_trace(model, adj, features).probs;
}

// ---------------------------------------------------------------------------
// Local forward pass

// Replacement feature row for one node.
struct FeatureOverride {
  NodeId node;
  RowVector row;
};

namespace detail {

template <class Adjacency>
std::vector<NodeId> expand_closed(const Adjacency& adj, const std::vector<NodeId>& nodes) {
  std::vector<NodeId> out;
  for (NodeId i : nodes) adj.for_each(i, [&](NodeId j, double) { out.push_back(j); });
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline Eigen::Index slot(const std::vector<NodeId>& sorted, NodeId id) {
  auto it = std::lower_bound(sorted.begin(), sorted.end(), id);
  return static_cast<Eigen::Index>(it - sorted.begin());
}

}  // namespace detail

// Evaluates the network only on the receptive field of `targets`. The
// first-layer products X W(0) of the base features are cached; an optional
// override replaces one node's feature row. Returns logits (rows follow
// `targets`).
class LocalForward {
 public:
  LocalForward(const GcnModel& model, const Matrix& base_features)
      : model_(&model), base_(&base_features), xw0_(base_features * model.weights.front()) {}

  const GcnModel& model() const noexcept { return *model_; }
  const Matrix& base_features() const noexcept { return *base_; }

  template <class Adjacency>
  Matrix logits(const Adjacency& adj, std::span<const NodeId> targets,
                const FeatureOverride* override_row = nullptr) const {
    const std::size_t L = model_->num_layers();
    // needed[l]: rows of Â H(l) W(l) required at layer l (needed[L-1] = targets).
    std::vector<std::vector<NodeId>> needed(L);
    needed[L - 1].assign(targets.begin(), targets.end());
    std::sort(needed[L - 1].begin(), needed[L - 1].end());
    needed[L - 1].erase(std::unique(needed[L - 1].begin(), needed[L - 1].end()),
                        needed[L - 1].end());
    for (std::size_t l = L - 1; l > 0; --l) needed[l - 1] = detail::expand_closed(adj, needed[l]);
    std::vector<NodeId> inputs0 = detail::expand_closed(adj, needed[0]);

    // P = H(0) W(0) rows for inputs0.
    std::vector<NodeId> p_ids = std::move(inputs0);
    Matrix p(static_cast<Eigen::Index>(p_ids.size()), xw0_.cols());
    for (std::size_t r = 0; r < p_ids.size(); ++r) {
      if (override_row && p_ids[r] == override_row->node)
        p.row(static_cast<Eigen::Index>(r)) = override_row->row * model_->weights.front();
      else
        p.row(static_cast<Eigen::Index>(r)) = xw0_.row(p_ids[r]);
    }

    for (std::size_t l = 0; l < L; ++l) {
      const auto& rows = needed[l];
      Matrix z = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), p.cols());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        adj.for_each(rows[r], [&](NodeId j, double c) {
          z.row(static_cast<Eigen::Index>(r)).noalias() += c * p.row(detail::slot(p_ids, j));
        });
      }
      if (l + 1 == L) {
        Matrix out(static_cast<Eigen::Index>(targets.size()), z.cols());
        for (std::size_t t = 0; t < targets.size(); ++t)
          out.row(static_cast<Eigen::Index>(t)) = z.row(detail::slot(rows, targets[t]));
        return out;
      }
      Matrix h = z.cwiseMax(0.0);
      p = h * model_->weights[l + 1];
      p_ids = rows;
    }
    return {};
  }

  template <class Adjacency>
  Matrix probs(const Adjacency& adj, std::span<const NodeId> targets,
               const FeatureOverride* override_row = nullptr) const {
    return softmax_rows(logits(adj, targets, override_row));
  }

 private:
  const GcnModel* model_;
  const Matrix* base_;
  Matrix xw0_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t hidden = 64;
  std::size_t layers = 2;
  double lr = 0.01;
  std::size_t epochs = 200;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
};

struct TrainingLog {
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::vector<double> losses;
};

// Full-batch Adam on train-split cross-entropy with L2 weight decay. Returns
// the snapshot with the best validation accuracy (earliest on ties).
inline GcnModel train_gcn(const TextAttributedGraph& g, const Matrix& features,
                          const SplitAssignment& split, const TrainConfig& cfg,
                          TrainingLog* log = nullptr) {
  if (static_cast<std::size_t>(features.rows()) != g.num_nodes())
    throw PreconditionError("feature rows do not match node count");
  if (cfg.layers < 1) throw PreconditionError("GCN needs at least one layer");
  std::vector<std::size_t> dims{static_cast<std::size_t>(features.cols())};
  for (std::size_t l = 1; l < cfg.layers; ++l) dims.push_back(cfg.hidden);
  dims.push_back(static_cast<std::size_t>(g.num_classes()));
  GcnModel model = GcnModel::initialize(dims, cfg.seed);

  const NormalizedAdjacency adj(g);
  const auto train = split.nodes(Role::kTrain);
  const auto val = split.nodes(Role::kVal);
  if (train.empty()) throw PreconditionError("training split is empty");
  const std::size_t L = model.num_layers();

  std::vector<Matrix> m1, m2;
  for (const auto& w : model.weights) {
    m1.push_back(Matrix::Zero(w.rows(), w.cols()));
    m2.push_back(Matrix::Zero(w.rows(), w.cols()));
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  GcnModel best = model;
  double best_val = -1.0;
  std::size_t best_epoch = 0;
  TrainingLog local_log;

  for (std::size_t epoch = 0; epoch <= cfg.epochs; ++epoch) {
    ForwardTrace t = forward_trace(model, adj, features);
    const double val_acc = val.empty() ? accuracy(t.probs, g.labels(), train)
                                       : accuracy(t.probs, g.labels(), val);
    if (val_acc > best_val) {
      best_val = val_acc;
      best = model;
      best_epoch = epoch;
    }
    if (epoch == cfg.epochs) break;

    double loss = 0.0;
    Matrix dz = Matrix::Zero(t.probs.rows(), t.probs.cols());
    const double inv = 1.0 / static_cast<double>(train.size());
    for (NodeId u : train) {
      const ClassId y = g.label(u);
      loss -= std::log(std::max(t.probs(u, y), 1e-300)) * inv;
      dz.row(u) = t.probs.row(u) * inv;
      dz(u, y) -= inv;
    }
    for (const auto& w : model.weights) loss += 0.5 * cfg.weight_decay * w.squaredNorm();
    local_log.losses.push_back(loss);
    if (!std::isfinite(loss)) {
      double wmax = 0.0;
      for (const auto& w : model.weights) wmax = std::max(wmax, w.cwiseAbs().maxCoeff());
      std::ostringstream msg;
      msg << "non-finite training loss at epoch " << epoch << " (loss=" << loss
          << ", max |w|=" << wmax << ", lr=" << cfg.lr << ")";
      throw TrainingError(msg.str());
    }

    for (std::size_t l = L; l-- > 0;) {
      // d(H W) = Â^T dZ, with Â symmetric.
      Matrix dp = propagate(adj, dz);
      Matrix grad = t.inputs[l].transpose() * dp + cfg.weight_decay * model.weights[l];
      if (l > 0) {
        dz = (dp * model.weights[l].transpose())
                 .cwiseProduct((t.pre[l - 1].array() > 0.0).cast<double>().matrix());
      }
      const double step = static_cast<double>(epoch + 1);
      m1[l] = kBeta1 * m1[l] + (1 - kBeta1) * grad;
      m2[l] = kBeta2 * m2[l] + (1 - kBeta2) * grad.cwiseProduct(grad);
      const double c1 = 1.0 - std::pow(kBeta1, step);
      const double c2 = 1.0 - std::pow(kBeta2, step);
      model.weights[l].array() -=
          cfg.lr * (m1[l].array() / c1) / ((m2[l].array() / c2).sqrt() + kEps);
    }
  }
  local_log.best_epoch = best_epoch;
  local_log.best_val_accuracy = best_val;
  if (log) *log = std::move(local_log);
  return best;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline nlohmann::json model_to_json(const GcnModel& m) {
  nlohmann::json j;
  j["format"] = "tagattack-gcn";
  j["version"] = 1;
  j["seed"] = m.seed;
  std::vector<std::size_t> dims{m.input_dim()};
  for (const auto& w : m.weights) dims.push_back(static_cast<std::size_t>(w.cols()));
  j["dims"] = dims;
  j["weights"] = nlohmann::json::array();
  for (const auto& w : m.weights)
    j["weights"].push_back(std::vector<double>(w.data(), w.data() + w.size()));
  return j;
}

inline GcnModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "tagattack-gcn" || j.at("version") != 1)
      throw DatasetError("unsupported checkpoint format");
    GcnModel m;
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto dims = j.at("dims").get<std::vector<std::size_t>>();
    const auto& ws = j.at("weights");
    if (dims.size() < 2 || ws.size() != dims.size() - 1)
      throw DatasetError("checkpoint dims and weights disagree");
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const auto flat = ws[l].get<std::vector<double>>();
      if (flat.size() != dims[l] * dims[l + 1])
        throw DatasetError("checkpoint layer " + std::to_string(l) + " has wrong size");
      Matrix w(static_cast<Eigen::Index>(dims[l]), static_cast<Eigen::Index>(dims[l + 1]));
      std::copy(flat.begin(), flat.end(), w.data());
      m.weights.push_back(std::move(w));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_model(const GcnModel& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write checkpoint " + path.string());
  out << model_to_json(m).dump() << '\n';
}

inline GcnModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot read checkpoint " + path.string());
  try {
    return model_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw DatasetError(std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace tagattack
