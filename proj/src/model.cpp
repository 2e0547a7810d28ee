#include "cirlab/model.hpp"

#include <cmath>
#include <stdexcept>

#include "cirlab/rng.hpp"
#include "cirlab/serialize.hpp"

namespace cirlab {

namespace {

constexpr char kModelMagic[4] = {'C', 'L', 'P', 'M'};

Tensor glorot(std::size_t in, std::size_t out, Rng& rng) {
  Tensor t(Shape{in, out});
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

// Patches of a 3x3 valid convolution, one row per (image, position).
Tensor im2col3x3(const Tensor& batch, std::size_t side) {
  const std::size_t b = batch.rows();
  const std::size_t out_side = side - 2;
  const std::size_t positions = out_side * out_side;
  Tensor cols(Shape{b * positions, 9});
  for (std::size_t n = 0; n < b; ++n) {
    const double* img = &batch.data[n * side * side];
    for (std::size_t r = 0; r < out_side; ++r)
      for (std::size_t c = 0; c < out_side; ++c) {
        double* row = &cols.data[(n * positions + r * out_side + c) * 9];
        for (std::size_t dr = 0; dr < 3; ++dr)
          for (std::size_t dc = 0; dc < 3; ++dc) row[dr * 3 + dc] = img[(r + dr) * side + (c + dc)];
      }
  }
  return cols;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.hidden.empty()) throw std::invalid_argument("model: at least one hidden layer required");
  if (cfg.use_conv && cfg.image_side < 3) throw std::invalid_argument("model: conv needs image_side >= 3");
  Rng rng(mix_seed(seed, 0x6d6f64656cull));
  ModelParams p;
  p.config = cfg;
  std::size_t in = cfg.input_dim();
  if (cfg.use_conv) {
    p.conv_W = glorot(9, cfg.conv_filters, rng);
    p.conv_b = Tensor(Shape{cfg.conv_filters});
    in = cfg.conv_positions() * cfg.conv_filters;
  }
  for (std::size_t width : cfg.hidden) {
    DenseLayer layer;
    layer.W = glorot(in, width, rng);
    layer.b = Tensor(Shape{width});
    p.encoder.push_back(std::move(layer));
    in = width;
  }
  p.classifier.W = glorot(cfg.feature_dim(), cfg.num_classes, rng);
  p.classifier.b = Tensor(Shape{cfg.num_classes});
  p.rotation.W = glorot(cfg.feature_dim(), 4, rng);
  p.rotation.b = Tensor(Shape{4});
  return p;
}

std::vector<Tensor*> ModelParams::parameter_list() {
  std::vector<Tensor*> out;
  if (config.use_conv) {
    out.push_back(&conv_W);
    out.push_back(&conv_b);
  }
  for (auto& l : encoder) {
    out.push_back(&l.W);
    out.push_back(&l.b);
  }
  out.push_back(&classifier.W);
  out.push_back(&classifier.b);
  out.push_back(&rotation.W);
  out.push_back(&rotation.b);
  return out;
}

std::vector<const Tensor*> ModelParams::parameter_list() const {
  auto mut = const_cast<ModelParams*>(this)->parameter_list();
  return std::vector<const Tensor*>(mut.begin(), mut.end());
}

std::vector<std::string> ModelParams::parameter_names() const {
  std::vector<std::string> out;
  if (config.use_conv) {
    out.push_back("conv.W");
    out.push_back("conv.b");
  }
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    out.push_back("encoder" + std::to_string(i) + ".W");
    out.push_back("encoder" + std::to_string(i) + ".b");
  }
  out.push_back("classifier.W");
  out.push_back("classifier.b");
  out.push_back("rotation.W");
  out.push_back("rotation.b");
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : parameter_list()) n += t->numel();
  return n;
}

std::vector<Graph::NodeId> BoundModel::all() const {
  std::vector<Graph::NodeId> out;
  if (conv_W >= 0) {
    out.push_back(conv_W);
    out.push_back(conv_b);
  }
  for (auto& [w, b] : encoder) {
    out.push_back(w);
    out.push_back(b);
  }
  out.push_back(cls_W);
  out.push_back(cls_b);
  out.push_back(rot_W);
  out.push_back(rot_b);
  return out;
}

BoundModel bind_model(Graph& g, const ModelParams& params, bool trainable) {
  BoundModel m;
  m.params = &params;
  if (params.config.use_conv) {
    m.conv_W = g.input(params.conv_W, trainable);
    m.conv_b = g.input(params.conv_b, trainable);
  }
  for (const auto& l : params.encoder)
    m.encoder.emplace_back(g.input(l.W, trainable), g.input(l.b, trainable));
  m.cls_W = g.input(params.classifier.W, trainable);
  m.cls_b = g.input(params.classifier.b, trainable);
  m.rot_W = g.input(params.rotation.W, trainable);
  m.rot_b = g.input(params.rotation.b, trainable);
  return m;
}

ModelNodes forward_nodes(Graph& g, const BoundModel& m, const Tensor& batch) {
  const ModelConfig& cfg = m.params->config;
  if (!batch.is_matrix() || batch.rows() == 0 || batch.cols() != cfg.input_dim())
    throw std::invalid_argument("model forward: expected non-empty batch of shape Bx" +
                                std::to_string(cfg.input_dim()) + ", got " + shape_str(batch.shape));
  const std::size_t b = batch.rows();
  Graph::NodeId x;
  if (cfg.use_conv) {
    Graph::NodeId cols = g.constant(im2col3x3(batch, cfg.image_side));
    Graph::NodeId conv = g.relu(g.add_row(g.matmul(cols, m.conv_W), m.conv_b));
    x = g.reshape(conv, Shape{b, cfg.conv_positions() * cfg.conv_filters});
  } else {
    x = g.constant(batch);
  }
  for (const auto& [w, bias] : m.encoder) x = g.relu(g.add_row(g.matmul(x, w), bias));
  ModelNodes out;
  out.features = x;
  out.logits = g.add_row(g.matmul(x, m.cls_W), m.cls_b);
  out.rotation_logits = g.add_row(g.matmul(x, m.rot_W), m.rot_b);
  return out;
}

Graph::NodeId classifier_head_node(Graph& g, const BoundModel& m, Graph::NodeId features) {
  return g.add_row(g.matmul(features, m.cls_W), m.cls_b);
}

ForwardOutput model_forward(const ModelParams& params, const Tensor& batch) {
  Graph g;
  BoundModel m = bind_model(g, params, false);
  ModelNodes nodes = forward_nodes(g, m, batch);
  ForwardOutput out;
  out.features = g.value(nodes.features);
  out.logits = g.value(nodes.logits);
  out.rotation_logits = g.value(nodes.rotation_logits);
  return out;
}

ModelParams snapshot(const ModelParams& params) { return params; }

void restore(ModelParams& params, const ModelParams& snap) { params = snap; }

void ema_blend(ModelParams& target, const ModelParams& source, double momentum) {
  if (momentum < 0.0 || momentum > 1.0)
    throw std::invalid_argument("ema_blend: momentum must lie in [0,1], got " + std::to_string(momentum));
  auto dst = target.parameter_list();
  auto src = source.parameter_list();
  if (dst.size() != src.size()) throw std::invalid_argument("ema_blend: parameter block count differs");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (!dst[i]->same_shape(*src[i]))
      throw std::invalid_argument("ema_blend: shape mismatch " + shape_str(dst[i]->shape) + " vs " +
                                  shape_str(src[i]->shape));
    if (momentum == 1.0) continue;
    // c + m*(p-c) is the same affine map as m*p + (1-m)*c but keeps p == c an
    // exact fixed point and m == 0 an exact copy.
    for (std::size_t j = 0; j < dst[i]->data.size(); ++j)
      dst[i]->data[j] = src[i]->data[j] + momentum * (dst[i]->data[j] - src[i]->data[j]);
  }
}

void save_model(const std::string& path, const ModelParams& params) {
  write_tensor_container_file(path, kModelMagic, params.parameter_list());
}

void load_model(const std::string& path, ModelParams& params) {
  std::vector<Tensor> arrays = read_tensor_container_file(path, kModelMagic);
  auto dst = params.parameter_list();
  if (arrays.size() != dst.size())
    throw std::runtime_error("checkpoint has " + std::to_string(arrays.size()) + " arrays, model expects " +
                             std::to_string(dst.size()));
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (arrays[i].shape != dst[i]->shape)
      throw std::runtime_error("checkpoint array " + std::to_string(i) + " has shape " +
                               shape_str(arrays[i].shape) + ", model expects " + shape_str(dst[i]->shape));
    *dst[i] = std::move(arrays[i]);
  }
}

}  // namespace cirlab
