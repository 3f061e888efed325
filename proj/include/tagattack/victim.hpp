#pragma once

// Immutable bundle of everything an attack stage queries: the clean graph,
// the text encoder, the trained model, the normalized adjacency, the clean
// node features and cached clean predictions.

#include <span>
#include <vector>

#include "tagattack/encoder.hpp"
#include "tagattack/gcn.hpp"
#include "tagattack/graph.hpp"
#include "tagattack/linalg.hpp"

namespace tagattack {

class Victim {
 public:
  Victim(TextAttributedGraph graph, HashingEncoder encoder, GcnModel model)
      : graph_(std::move(graph)),
        encoder_(std::move(encoder)),
        model_(std::move(model)),
        adjacency_(graph_),
        features_(encoder_.encode_all(graph_)),
        local_(model_, features_) {
    if (model_.input_dim() != encoder_.dim())
      throw PreconditionError("model input dimension does not match encoder dimension");
    if (model_.num_classes() != static_cast<std::size_t>(graph_.num_classes()))
      throw PreconditionError("model output dimension does not match class count");
    clean_probs_ = forward(model_, adjacency_, features_);
  }

  Victim(const Victim&) = delete;
  Victim& operator=(const Victim&) = delete;

  const TextAttributedGraph& graph() const noexcept { return graph_; }
  const HashingEncoder& encoder() const noexcept { return encoder_; }
  const GcnModel& model() const noexcept { return model_; }
  const NormalizedAdjacency& adjacency() const noexcept { return adjacency_; }
  const Matrix& features() const noexcept { return features_; }
  const Matrix& clean_probs() const noexcept { return clean_probs_; }
  const LocalForward& local() const noexcept { return local_; }
  int num_layers() const noexcept { return static_cast<int>(model_.num_layers()); }

  ClassId clean_prediction(NodeId u) const { return argmax(clean_probs_.row(u)); }

  // Class probabilities of `targets` on the clean graph, with an optional
  // replacement feature row for one node.
  Matrix probs(std::span<const NodeId> targets, const FeatureOverride* ovr = nullptr) const {
    return local_.probs(adjacency_, targets, ovr);
  }

  // Same, on the clean graph minus `removed` edges.
  Matrix probs_without(std::span<const NodeId> targets, const std::vector<Edge>& removed,
                       const FeatureOverride* ovr = nullptr) const {
    return local_.probs(PrunedAdjacency(graph_, removed), targets, ovr);
  }

  FeatureOverride override_for(NodeId v, const TokenSequence& text) const {
    return {v, encoder_.encode(text).transpose()};
  }

 private:
  TextAttributedGraph graph_;
  HashingEncoder encoder_;
  GcnModel model_;
  NormalizedAdjacency adjacency_;
  Matrix features_;
  LocalForward local_;
  Matrix clean_probs_;
};

}  // namespace tagattack
