#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cirlab/graph.hpp"
#include "cirlab/tensor.hpp"

namespace cirlab {

// Shared feature encoder over flattened images plus two linear heads:
// a C-way classifier and a 4-way rotation head on the same features.
struct ModelConfig {
  std::size_t image_side = 16;
  std::size_t num_classes = 20;
  std::vector<std::size_t> hidden = {64, 64};  // feature_dim = hidden.back()
  bool use_conv = false;                       // one 3x3 valid conv in front of the MLP
  std::size_t conv_filters = 4;

  std::size_t input_dim() const { return image_side * image_side; }
  std::size_t feature_dim() const { return hidden.back(); }
  std::size_t conv_positions() const { return (image_side - 2) * (image_side - 2); }
};

struct DenseLayer {
  Tensor W;  // in x out
  Tensor b;  // out
};

struct ModelParams {
  ModelConfig config;
  Tensor conv_W;  // 9 x conv_filters, present when use_conv
  Tensor conv_b;  // conv_filters
  std::vector<DenseLayer> encoder;
  DenseLayer classifier;  // feature_dim x C
  DenseLayer rotation;    // feature_dim x 4

  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

  std::vector<Tensor*> parameter_list();
  std::vector<const Tensor*> parameter_list() const;
  std::vector<std::string> parameter_names() const;
  std::size_t parameter_count() const;
};

struct ForwardOutput {
  Tensor features;         // batch x feature_dim
  Tensor logits;           // batch x C
  Tensor rotation_logits;  // batch x 4
};

// Parameter leaves bound into a Graph, reusable across several forward passes
// within the same step so gradients accumulate in one place.
struct BoundModel {
  const ModelParams* params = nullptr;
  Graph::NodeId conv_W = -1, conv_b = -1;
  std::vector<std::pair<Graph::NodeId, Graph::NodeId>> encoder;
  Graph::NodeId cls_W = -1, cls_b = -1;
  Graph::NodeId rot_W = -1, rot_b = -1;
  std::vector<Graph::NodeId> all() const;  // parameter_list order
};

struct ModelNodes {
  Graph::NodeId features = -1;
  Graph::NodeId logits = -1;
  Graph::NodeId rotation_logits = -1;
};

BoundModel bind_model(Graph& g, const ModelParams& params, bool trainable);

// batch: B x input_dim of flattened images.
ModelNodes forward_nodes(Graph& g, const BoundModel& m, const Tensor& batch);

// Classifier head applied to an arbitrary feature node (used for replayed
// exemplar features, which enter as constants).
Graph::NodeId classifier_head_node(Graph& g, const BoundModel& m, Graph::NodeId features);

// Plain inference; same arithmetic as the graph path.
ForwardOutput model_forward(const ModelParams& params, const Tensor& batch);

ModelParams snapshot(const ModelParams& params);
void restore(ModelParams& params, const ModelParams& snap);

// target <- m*target + (1-m)*source, elementwise over every parameter.
void ema_blend(ModelParams& target, const ModelParams& source, double momentum);

void save_model(const std::string& path, const ModelParams& params);
void load_model(const std::string& path, ModelParams& params);

}  // namespace cirlab
