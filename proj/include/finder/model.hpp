#pragma once

// The formula-graph self-attention network.
//
// Each message-passing layer predicts (formula domain) or reads (crystal
// domain) per-edge attributes, weights messages by element-wise attention
// normalised over every node of the graph, averages incoming messages and adds
// them to the linearly transformed node state. Every layer is probed by its own
// attention pooling layer; the pooled vectors are summed and passed through a
// convolutional + dense residual network to a (mean, log-scale) head.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "finder/batch.hpp"
#include "finder/graph.hpp"
#include "finder/tensor.hpp"

namespace finder {

// Architecture variants of the ablation study.
struct Ablation {
  bool no_self_attention = false;  // messages are the raw phi_m output
  bool soft_attention = false;     // scalar softmax gating over neighbours
  bool no_residuals = false;       // single final pool, no dense skips
  bool no_pool_residuals = false;  // single final pool, dense skips kept
  bool sum_pool = false;           // unweighted sum in place of attention pooling
  bool no_post_net = false;        // pooled vector feeds the output head directly

  bool single_pool() const { return no_residuals || no_pool_residuals; }
};

inline const std::vector<std::string>& ablation_flag_names() {
  static const std::vector<std::string> names = {"no_self_attention", "soft_attention", "no_residuals",
                                                 "no_pool_residuals", "sum_pool",       "no_post_net"};
  return names;
}

inline void set_ablation_flag(Ablation& a, const std::string& name) {
  if (name == "no_self_attention") a.no_self_attention = true;
  else if (name == "soft_attention") a.soft_attention = true;
  else if (name == "no_residuals") a.no_residuals = true;
  else if (name == "no_pool_residuals") a.no_pool_residuals = true;
  else if (name == "sum_pool") a.sum_pool = true;
  else if (name == "no_post_net") a.no_post_net = true;
  else throw std::invalid_argument("unknown ablation flag '" + name + "'");
}

inline std::vector<std::string> ablation_flags(const Ablation& a) {
  std::vector<std::string> out;
  if (a.no_self_attention) out.push_back("no_self_attention");
  if (a.soft_attention) out.push_back("soft_attention");
  if (a.no_residuals) out.push_back("no_residuals");
  if (a.no_pool_residuals) out.push_back("no_pool_residuals");
  if (a.sum_pool) out.push_back("sum_pool");
  if (a.no_post_net) out.push_back("no_post_net");
  return out;
}

inline constexpr std::size_t kSpectrumPoints = 3000;

struct ModelConfig {
  std::size_t input_dim = 200;  // element embedding width
  std::size_t node_dim = 200;   // node state width D (output of W_int)
  std::size_t key_dim = 200;    // query/key/value width, must equal node_dim
  std::size_t edge_dim = kGaussianCount;
  std::vector<std::size_t> edge_hidden = {128, 64};
  std::vector<std::size_t> message_hidden = {128, 64};
  std::size_t pool_hidden = 256;
  std::size_t num_layers = 2;
  std::size_t conv_filters = 64;
  std::size_t conv_kernel = 3;
  std::vector<std::size_t> dense_widths = {512, 1024, 1024, 256};
  std::size_t output_points = 1;  // 1 for scalar targets, 3000 for spectra
  Domain domain = Domain::kFormula;
  double weight_decay = 1e-6;
  Ablation ablation;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_layers < 1 || num_layers > 3) throw std::invalid_argument("model: layer count must be in 1..3");
    if (key_dim != node_dim) throw std::invalid_argument("model: key_dim must equal node_dim");
    if (edge_dim != kGaussianCount) throw std::invalid_argument("model: edge_dim must be 20");
    if (input_dim == 0 || node_dim == 0 || pool_hidden == 0 || output_points == 0)
      throw std::invalid_argument("model: zero width");
    if (edge_hidden.empty() || message_hidden.empty()) throw std::invalid_argument("model: phi networks need hidden layers");
    if (!ablation.no_post_net && (dense_widths.empty() || conv_filters == 0 || conv_kernel % 2 == 0))
      throw std::invalid_argument("model: post-processing network needs dense widths, filters and an odd kernel");
    if (ablation.no_self_attention && ablation.soft_attention)
      throw std::invalid_argument("model: no_self_attention and soft_attention are exclusive");
  }
};

// Deterministic, platform-independent uniform draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform(double lo, double hi) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

template <typename T>
class ParameterStore {
 public:
  Tensor<T> add(const std::string& name, Shape shape, bool is_weight, Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    std::vector<T> data(numel(shape), T(0));
    if (is_weight) {
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      for (auto& x : data) x = static_cast<T>(rng.uniform(-limit, limit));
    }
    auto t = Tensor<T>::from_data(std::move(shape), std::move(data), true);
    names_.push_back(name);
    tensors_.push_back(t);
    weight_.push_back(is_weight);
    return t;
  }

  std::vector<Tensor<T>>& tensors() { return tensors_; }
  const std::vector<Tensor<T>>& tensors() const { return tensors_; }
  const std::vector<std::string>& names() const { return names_; }
  bool is_weight(std::size_t i) const { return weight_[i]; }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::vector<bool> weight_;
};

template <typename T>
struct Dense {
  Tensor<T> weight;  // in x out
  Tensor<T> bias;    // 1 x out, undefined when bias-free

  Dense() = default;
  Dense(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, bool with_bias, Rng& rng) {
    weight = store.add(name + ".W", {in, out}, true, rng, in, out);
    if (with_bias) bias = store.add(name + ".b", {1, out}, false, rng, in, out);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    auto y = matmul(x, weight);
    return bias.defined() ? y + bias : y;
  }
};

// ReLU hidden layers, linear output layer.
template <typename T>
struct Mlp {
  std::vector<Dense<T>> layers;

  Mlp() = default;
  Mlp(ParameterStore<T>& store, const std::string& name, std::size_t in, const std::vector<std::size_t>& hidden,
      std::size_t out, Rng& rng) {
    std::size_t w = in;
    for (std::size_t k = 0; k < hidden.size(); ++k) {
      layers.emplace_back(store, name + ".l" + std::to_string(k), w, hidden[k], true, rng);
      w = hidden[k];
    }
    layers.emplace_back(store, name + ".l" + std::to_string(hidden.size()), w, out, true, rng);
  }

  Tensor<T> operator()(Tensor<T> x) const {
    for (std::size_t k = 0; k < layers.size(); ++k) {
      x = layers[k](x);
      if (k + 1 < layers.size()) x = relu(x);
    }
    return x;
  }
};

template <typename T>
struct LayerTrace {
  Tensor<T> edge_attributes;    // edges x 20
  Tensor<T> attention_weights;  // pairs x d_K (self-attention) or edges x 1 (soft attention)
  Tensor<T> alignment;          // edges x d_K, a_ij
  Tensor<T> messages;           // edges x D
  Tensor<T> node_states;        // nodes x D after the update
  Tensor<T> pooled;             // graphs x D, undefined when this layer is not pooled
};

template <typename T>
struct ForwardTrace {
  std::vector<LayerTrace<T>> layers;
  Tensor<T> combined;  // graphs x D, summed pooled vectors
};

template <typename T>
struct RobustOutput {
  Tensor<T> mean;       // graphs x output_points, normalised units
  Tensor<T> log_scale;  // graphs x output_points

  std::size_t num_graphs() const { return mean.dim(0); }
};

namespace detail {

template <typename T>
Tensor<T> constant(Shape shape, const std::vector<double>& values) {
  return Tensor<T>::from_data(std::move(shape), std::vector<T>(values.begin(), values.end()));
}

// Per-segment, per-column maximum of `x` rows grouped by `ids`, broadcast back to rows.
template <typename T>
Tensor<T> segment_max_rows(const Tensor<T>& x, const Index& ids, std::size_t segments) {
  const auto cols = x.dim(1);
  std::vector<T> mx(segments * cols, -std::numeric_limits<T>::infinity());
  for (std::size_t r = 0; r < ids.size(); ++r)
    for (std::size_t c = 0; c < cols; ++c) mx[ids[r] * cols + c] = std::max(mx[ids[r] * cols + c], x.data()[r * cols + c]);
  std::vector<T> out(ids.size() * cols);
  for (std::size_t r = 0; r < ids.size(); ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = mx[ids[r] * cols + c];
  return Tensor<T>::from_data({ids.size(), cols}, std::move(out));
}

// Softmax of rows of `logits` within segments, stabilised by the per-segment maximum.
template <typename T>
Tensor<T> segment_softmax(const Tensor<T>& logits, const Index& ids, std::size_t segments,
                          const std::vector<double>& segment_sizes) {
  auto shifted = exp(logits - segment_max_rows(logits, ids, segments));
  auto denom = segment_mean(shifted, ids, segments) * constant<T>({segments, 1}, segment_sizes);
  return shifted / gather_rows(denom, ids);
}

}  // namespace detail

template <typename T>
class MessagePassingLayer {
 public:
  MessagePassingLayer(ParameterStore<T>& store, const std::string& name, std::size_t in_dim, const ModelConfig& cfg,
                      Rng& rng)
      : in_dim_(in_dim), node_dim_(cfg.node_dim), key_dim_(cfg.key_dim), ablation_(cfg.ablation) {
    w_int_ = Dense<T>(store, name + ".W_int", in_dim, cfg.node_dim, false, rng);
    if (cfg.domain == Domain::kFormula) phi_e_ = Mlp<T>(store, name + ".phi_e", 2 * in_dim, cfg.edge_hidden, cfg.edge_dim, rng);
    phi_m_ = Mlp<T>(store, name + ".phi_m", in_dim + cfg.edge_dim, cfg.message_hidden, cfg.node_dim, rng);
    if (ablation_.soft_attention) {
      gate_ = Dense<T>(store, name + ".soft_gate", 2 * in_dim, 1, false, rng);
    } else if (!ablation_.no_self_attention) {
      query_ = Dense<T>(store, name + ".F_Q", in_dim, cfg.key_dim, false, rng);
      key_ = Dense<T>(store, name + ".F_K", in_dim, cfg.key_dim, false, rng);
      value_ = Dense<T>(store, name + ".F_V", in_dim, cfg.key_dim, false, rng);
    }
  }

  // (v_i + v_j) / 2 for every edge.
  Tensor<T> pair_means(const Tensor<T>& v, const GraphBatch& b) const {
    return (gather_rows(v, b.src) + gather_rows(v, b.dst)) * T(0.5);
  }

  // phi_e([pair mean || mean of pair means over the source's neighbourhood]).
  Tensor<T> predict_edges(const Tensor<T>& v, const GraphBatch& b) const {
    if (b.domain != Domain::kFormula)
      throw std::logic_error("predict_edges: crystal-domain edges come from the distance expansion");
    auto pair = pair_means(v, b);
    auto context = gather_rows(segment_mean(pair, b.src, b.num_nodes), b.src);
    return phi_e_(concat<T>({pair, context}));
  }

  Tensor<T> edge_attributes(const Tensor<T>& v, const GraphBatch& b) const {
    if (b.domain == Domain::kFormula) return predict_edges(v, b);
    return detail::constant<T>({b.num_edges(), kGaussianCount}, b.edge_features);
  }

  // Normalised weights over all (i, l) node pairs of each graph and the
  // resulting per-edge alignment vectors.
  std::pair<Tensor<T>, Tensor<T>> self_attention(const Tensor<T>& v, const GraphBatch& b) const {
    if (!query_.weight.defined()) throw std::logic_error("self_attention: layer built without self-attention");
    auto q = query_(v), k = key_(v), val = value_(v);
    const T scale = T(1) / std::sqrt(static_cast<T>(key_dim_));
    auto logits = gather_rows(q, b.pair_row) * gather_rows(k, b.pair_col) * scale;
    auto weights = detail::segment_softmax(logits, b.pair_row, b.num_nodes, b.node_graph_size);
    if (b.num_edges() == 0) return {weights, Tensor<T>()};
    auto alignment = gather_rows(weights, b.edge_pair) * gather_rows(val, b.dst);
    return {weights, alignment};
  }

  // Scalar softmax over each node's neighbours of [v_i || v_j].w.
  Tensor<T> soft_attention(const Tensor<T>& v, const GraphBatch& b) const {
    auto logits = gate_(concat<T>({gather_rows(v, b.src), gather_rows(v, b.dst)}));
    return detail::segment_softmax(logits, b.src, b.num_nodes, b.out_degree);
  }

  Tensor<T> messages(const Tensor<T>& v, const Tensor<T>& e, const Tensor<T>& alignment, const GraphBatch& b) const {
    auto m = phi_m_(concat<T>({pair_means(v, b), e}));
    return alignment.defined() ? m * alignment : m;
  }

  // v.W_int + mean of incoming messages (zero for isolated nodes).
  Tensor<T> aggregate_update(const Tensor<T>& v, const Tensor<T>& messages, const GraphBatch& b) const {
    auto updated = w_int_(v);
    if (!messages.defined()) return updated;
    return updated + segment_mean(messages, b.src, b.num_nodes);
  }

  Tensor<T> operator()(const Tensor<T>& v, const GraphBatch& b, LayerTrace<T>* trace) const {
    if (v.dim(1) != in_dim_) throw ShapeError("message passing: node width " + std::to_string(v.dim(1)) +
                                              " but layer expects " + std::to_string(in_dim_));
    Tensor<T> weights, alignment, msgs, e;
    if (query_.weight.defined()) std::tie(weights, alignment) = self_attention(v, b);
    if (b.num_edges() > 0) {
      e = edge_attributes(v, b);
      if (gate_.weight.defined()) {
        weights = soft_attention(v, b);
        alignment = weights;
      }
      msgs = messages(v, e, alignment, b);
    }
    auto out = aggregate_update(v, msgs, b);
    if (trace) {
      trace->edge_attributes = e;
      trace->attention_weights = weights;
      trace->alignment = alignment;
      trace->messages = msgs;
      trace->node_states = out;
    }
    return out;
  }

 private:
  std::size_t in_dim_, node_dim_, key_dim_;
  Ablation ablation_;
  Dense<T> w_int_;
  Mlp<T> phi_e_, phi_m_;
  Dense<T> query_, key_, value_;
  Dense<T> gate_;
};

template <typename T>
class AttnPoolLayer {
 public:
  AttnPoolLayer(ParameterStore<T>& store, const std::string& name, const ModelConfig& cfg, Rng& rng)
      : sum_only_(cfg.ablation.sum_pool) {
    if (!sum_only_) {
      gate_ = Mlp<T>(store, name + ".gate", cfg.node_dim, {cfg.pool_hidden}, 1, rng);
      transform_ = Mlp<T>(store, name + ".transform", cfg.node_dim, {cfg.pool_hidden}, cfg.node_dim, rng);
    }
  }

  // sum_i softmax_i(gate(v_i)) * transform(v_i), softmax within each graph.
  Tensor<T> operator()(const Tensor<T>& v, const GraphBatch& b) const {
    auto sizes = detail::constant<T>({b.num_graphs, 1}, b.graph_size);
    if (sum_only_) return segment_mean(v, b.node_graph, b.num_graphs) * sizes;
    auto weights = detail::segment_softmax(gate_(v), b.node_graph, b.num_graphs, b.graph_size);
    return segment_mean(weights * transform_(v), b.node_graph, b.num_graphs) * sizes;
  }

 private:
  bool sum_only_;
  Mlp<T> gate_, transform_;
};

template <typename T>
class FinderModel {
 public:
  explicit FinderModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    std::size_t width = cfg_.input_dim;
    for (std::size_t r = 0; r < cfg_.num_layers; ++r) {
      layers_.emplace_back(store_, "mp" + std::to_string(r), width, cfg_, rng);
      width = cfg_.node_dim;
    }
    const std::size_t pools = cfg_.ablation.single_pool() ? 1 : cfg_.num_layers;
    for (std::size_t p = 0; p < pools; ++p) pools_.emplace_back(store_, "pool" + std::to_string(p), cfg_, rng);

    std::size_t head_in = cfg_.node_dim;
    if (!cfg_.ablation.no_post_net) {
      const auto k = cfg_.conv_kernel, f = cfg_.conv_filters;
      conv_w_ = store_.add("post.conv.W", {k, 1, f}, true, rng, k, k * f);
      conv_b_ = store_.add("post.conv.b", {f}, false, rng, k, k * f);
      std::size_t w = cfg_.node_dim * f;
      for (std::size_t l = 0; l < cfg_.dense_widths.size(); ++l) {
        const auto out = cfg_.dense_widths[l];
        dense_.emplace_back(store_, "post.dense" + std::to_string(l), w, out, true, rng);
        if (l > 0 && !cfg_.ablation.no_residuals && out != w)
          skips_.emplace_back(store_, "post.skip" + std::to_string(l), w, out, false, rng);
        else
          skips_.emplace_back();
        w = out;
      }
      head_in = w;
    }
    mean_head_ = Dense<T>(store_, "head.mean", head_in, cfg_.output_points, true, rng);
    scale_head_ = Dense<T>(store_, "head.log_scale", head_in, cfg_.output_points, true, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<Tensor<T>>& parameters() { return store_.tensors(); }
  const std::vector<Tensor<T>>& parameters() const { return store_.tensors(); }
  const std::vector<std::string>& parameter_names() const { return store_.names(); }
  std::size_t parameter_count() const { return store_.count(); }
  const MessagePassingLayer<T>& layer(std::size_t r) const { return layers_.at(r); }
  const AttnPoolLayer<T>& pool(std::size_t p) const { return pools_.at(p); }

  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (std::size_t i = 0; i < store_.names().size(); ++i) out.emplace_back(store_.names()[i], store_.tensors()[i]);
    return out;
  }

  RobustOutput<T> forward(const GraphBatch& b, ForwardTrace<T>* trace = nullptr) const {
    if (b.domain != cfg_.domain)
      throw std::invalid_argument(std::string("forward: model expects ") + domain_name(cfg_.domain) + " graphs, got " +
                                  domain_name(b.domain));
    if (b.feature_dim != cfg_.input_dim)
      throw ShapeError("forward: node features are " + std::to_string(b.feature_dim) + " wide, model expects " +
                       std::to_string(cfg_.input_dim));
    if (trace) trace->layers.assign(layers_.size(), {});
    auto v = detail::constant<T>({b.num_nodes, b.feature_dim}, b.node_features);
    Tensor<T> combined;
    for (std::size_t r = 0; r < layers_.size(); ++r) {
      v = layers_[r](v, b, trace ? &trace->layers[r] : nullptr);
      const bool pooled_here = !cfg_.ablation.single_pool() || r + 1 == layers_.size();
      if (!pooled_here) continue;
      auto pooled = pools_[cfg_.ablation.single_pool() ? 0 : r](v, b);
      if (trace) trace->layers[r].pooled = pooled;
      combined = combined.defined() ? combined + pooled : pooled;
    }
    if (trace) trace->combined = combined;
    auto h = cfg_.ablation.no_post_net ? combined : post_net(combined);
    return {mean_head_(h), scale_head_(h)};
  }

  // Sum of squared weight-matrix entries (biases excluded).
  Tensor<T> weight_penalty() const {
    Tensor<T> total;
    for (std::size_t i = 0; i < store_.tensors().size(); ++i) {
      if (!store_.is_weight(i)) continue;
      const auto& w = store_.tensors()[i];
      auto s = sum_squares(w);
      total = total.defined() ? total + s : s;
    }
    return total;
  }

 private:
  Tensor<T> post_net(const Tensor<T>& pooled) const {
    const auto g = pooled.dim(0), d = pooled.dim(1);
    auto c = relu(conv1d(reshape(pooled, {g, d, 1}), conv_w_, conv_b_));
    auto h = relu(dense_[0](reshape(c, {g, d * cfg_.conv_filters})));
    for (std::size_t l = 1; l < dense_.size(); ++l) {
      auto y = relu(dense_[l](h));
      if (!cfg_.ablation.no_residuals) y = y + (skips_[l].weight.defined() ? skips_[l](h) : h);
      h = y;
    }
    return h;
  }

  ModelConfig cfg_;
  ParameterStore<T> store_;
  std::vector<MessagePassingLayer<T>> layers_;
  std::vector<AttnPoolLayer<T>> pools_;
  Tensor<T> conv_w_, conv_b_;
  std::vector<Dense<T>> dense_;
  std::vector<Dense<T>> skips_;
  Dense<T> mean_head_, scale_head_;
};

// mean of sqrt(2) |y - mu| exp(-s) + s over every graph and output point.
template <typename T>
Tensor<T> robust_loss(const RobustOutput<T>& out, const Tensor<T>& targets) {
  if (targets.shape() != out.mean.shape())
    throw ShapeError("robust_loss: targets " + shape_str(targets.shape()) + " vs predictions " + shape_str(out.mean.shape()));
  auto residual = abs(targets - out.mean);
  auto per_point = residual * exp(-out.log_scale) * static_cast<T>(std::sqrt(2.0)) + out.log_scale;
  auto loss = mean_all(per_point);
  if (!std::isfinite(loss.item())) {
    T worst_scale = 0, worst_residual = 0;
    for (auto s : out.log_scale.data()) worst_scale = std::max(worst_scale, std::abs(s));
    for (auto r : residual.data()) worst_residual = std::max(worst_residual, r);
    std::ostringstream os;
    os << "robust_loss: non-finite loss (max |log_scale| = " << worst_scale << ", max |residual| = " << worst_residual << ")";
    throw NumericError(os.str());
  }
  return loss;
}

// Robust loss plus the L2 weight penalty.
template <typename T>
Tensor<T> training_loss(const FinderModel<T>& model, const RobustOutput<T>& out, const Tensor<T>& targets) {
  auto loss = robust_loss(out, targets);
  if (model.config().weight_decay == 0.0) return loss;
  return loss + model.weight_penalty() * static_cast<T>(model.config().weight_decay);
}

// Per-pair mean of the 20 edge-attribute components at `layer`; zero diagonal.
template <typename T>
std::vector<std::vector<double>> export_eam(const FinderModel<T>& model, const FormulaGraph& g,
                                            std::optional<std::size_t> layer = std::nullopt) {
  if (g.domain != Domain::kFormula) throw std::invalid_argument("export_eam: only formula-domain graphs have predicted edges");
  const std::size_t r = layer.value_or(model.config().num_layers - 1);
  if (r >= model.config().num_layers) throw std::invalid_argument("export_eam: layer index out of range");
  std::vector<std::vector<double>> eam(g.num_nodes, std::vector<double>(g.num_nodes, 0.0));
  if (g.edges.empty()) return eam;
  ForwardTrace<T> trace;
  model.forward(make_batch(g), &trace);
  const auto& e = trace.layers[r].edge_attributes;
  const auto width = e.dim(1);
  for (std::size_t k = 0; k < g.edges.size(); ++k) {
    double acc = 0.0;
    for (std::size_t c = 0; c < width; ++c) acc += e.data()[k * width + c];
    eam[g.edges[k].src][g.edges[k].dst] = acc / static_cast<double>(width);
  }
  return eam;
}

}  // namespace finder
