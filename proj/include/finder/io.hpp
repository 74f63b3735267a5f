#pragma once

// Model checkpoints: the tensor container from checkpoint.hpp plus a JSON
// manifest describing the architecture, normaliser and graph settings. The
// element embedding table travels with the weights as tensor "embedding.table".

#include <cstddef>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "finder/checkpoint.hpp"
#include "finder/dataset.hpp"
#include "finder/embedding.hpp"
#include "finder/model.hpp"
#include "finder/train.hpp"
#include <nlohmann/json.hpp>

namespace finder {

using Json = nlohmann::ordered_json;

inline Json to_json(const ModelConfig& c) {
  return Json{{"input_dim", c.input_dim},
              {"node_dim", c.node_dim},
              {"key_dim", c.key_dim},
              {"edge_dim", c.edge_dim},
              {"edge_hidden", c.edge_hidden},
              {"message_hidden", c.message_hidden},
              {"pool_hidden", c.pool_hidden},
              {"num_layers", c.num_layers},
              {"conv_filters", c.conv_filters},
              {"conv_kernel", c.conv_kernel},
              {"dense_widths", c.dense_widths},
              {"output_points", c.output_points},
              {"domain", domain_name(c.domain)},
              {"weight_decay", c.weight_decay},
              {"ablation", ablation_flags(c.ablation)},
              {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const Json& j) {
  ModelConfig c;
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.node_dim = j.at("node_dim").get<std::size_t>();
  c.key_dim = j.at("key_dim").get<std::size_t>();
  c.edge_dim = j.at("edge_dim").get<std::size_t>();
  c.edge_hidden = j.at("edge_hidden").get<std::vector<std::size_t>>();
  c.message_hidden = j.at("message_hidden").get<std::vector<std::size_t>>();
  c.pool_hidden = j.at("pool_hidden").get<std::size_t>();
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.conv_filters = j.at("conv_filters").get<std::size_t>();
  c.conv_kernel = j.at("conv_kernel").get<std::size_t>();
  c.dense_widths = j.at("dense_widths").get<std::vector<std::size_t>>();
  c.output_points = j.at("output_points").get<std::size_t>();
  c.domain = parse_domain(j.at("domain").get<std::string>());
  c.weight_decay = j.at("weight_decay").get<double>();
  for (const auto& flag : j.at("ablation")) set_ablation_flag(c.ablation, flag.get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

struct ModelBundle {
  ModelConfig config;
  Normalizer normalizer;
  GraphOptions graph;
  ElementEmbeddingTable embeddings;
  Json extra = Json::object();
};

inline Json manifest_json(const ModelBundle& b) {
  std::vector<std::string> symbols;
  for (const auto& [s, v] : b.embeddings.vectors) symbols.push_back(s);
  return Json{{"format", "finder-model"},
              {"model", to_json(b.config)},
              {"target_kind", b.config.output_points == 1 ? "scalar" : "spectrum-3000"},
              {"normalizer", {{"mean", b.normalizer.mean}, {"stddev", b.normalizer.stddev}}},
              {"graph",
               {{"domain", domain_name(b.graph.domain)},
                {"max_denominator", b.graph.max_denominator},
                {"node_cap", b.graph.node_cap},
                {"cutoff", b.graph.cutoff}}},
              {"embedding", {{"source", b.embeddings.source}, {"dim", b.embeddings.dim}, {"symbols", symbols}}},
              {"extra", b.extra}};
}

template <typename T>
void save_model(const std::string& path, const FinderModel<T>& model, const ModelBundle& bundle) {
  auto named = model.named_parameters();
  std::vector<T> table;
  for (const auto& [s, v] : bundle.embeddings.vectors) table.insert(table.end(), v.begin(), v.end());
  named.emplace_back("embedding.table",
                     Tensor<T>::from_data({bundle.embeddings.vectors.size(), bundle.embeddings.dim}, std::move(table)));
  save_checkpoint<T>(path, manifest_json(bundle).dump(2), named);
}

template <typename T>
struct LoadedModel {
  ModelBundle bundle;
  FinderModel<T> model;
};

template <typename T>
LoadedModel<T> load_model(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  Json m;
  try {
    m = Json::parse(ck.manifest);
  } catch (const Json::exception& e) {
    throw CheckpointError("checkpoint " + path + ": bad manifest: " + e.what());
  }
  if (m.value("format", "") != "finder-model") throw CheckpointError("checkpoint " + path + " is not a finder model");
  ModelBundle b;
  b.config = model_config_from_json(m.at("model"));
  b.normalizer.mean = m.at("normalizer").at("mean").get<double>();
  b.normalizer.stddev = m.at("normalizer").at("stddev").get<double>();
  const auto& g = m.at("graph");
  b.graph.domain = parse_domain(g.at("domain").get<std::string>());
  b.graph.max_denominator = g.at("max_denominator").get<int>();
  b.graph.node_cap = g.at("node_cap").get<int>();
  b.graph.cutoff = g.at("cutoff").get<double>();
  const auto& e = m.at("embedding");
  b.embeddings.source = e.at("source").get<std::string>();
  b.embeddings.dim = e.at("dim").get<std::size_t>();
  const auto symbols = e.at("symbols").get<std::vector<std::string>>();
  const auto table_it = ck.tensors.find("embedding.table");
  if (table_it == ck.tensors.end()) throw CheckpointError("checkpoint " + path + ": missing embedding table");
  const auto& tv = table_it->second.values;
  if (tv.size() != symbols.size() * b.embeddings.dim) throw CheckpointError("checkpoint " + path + ": embedding table shape");
  for (std::size_t i = 0; i < symbols.size(); ++i)
    b.embeddings.vectors[symbols[i]] =
        std::vector<double>(tv.begin() + static_cast<std::ptrdiff_t>(i * b.embeddings.dim),
                            tv.begin() + static_cast<std::ptrdiff_t>((i + 1) * b.embeddings.dim));
  b.extra = m.value("extra", Json::object());

  LoadedModel<T> out{b, FinderModel<T>(b.config)};
  const auto& names = out.model.parameter_names();
  auto& params = out.model.parameters();
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto it = ck.tensors.find(names[i]);
    if (it == ck.tensors.end()) throw CheckpointError("checkpoint " + path + ": missing parameter " + names[i]);
    if (it->second.shape != params[i].shape())
      throw CheckpointError("checkpoint " + path + ": parameter " + names[i] + " has shape " + shape_str(it->second.shape) +
                            ", model expects " + shape_str(params[i].shape()));
    auto data = params[i].data();
    for (std::size_t k = 0; k < data.size(); ++k) data[k] = static_cast<T>(it->second.values[k]);
  }
  return out;
}

}  // namespace finder
