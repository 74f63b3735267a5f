// Trains a small formula-domain model on a synthetic electronegativity task,
// then predicts a few compositions and prints their edge attribute matrix.

#include <cstdio>

#include "finder/finder.hpp"

using namespace finder;

namespace {

double mean_electronegativity(const Composition& c) {
  double num = 0.0, den = 0.0;
  for (const auto& [sym, amt] : c) {
    num += amt * *pauling_electronegativity(sym);
    den += amt;
  }
  return num / den;
}

}  // namespace

int main() {
  const auto table = one_hot_embeddings();
  const char* pool[] = {"Li", "Na", "K", "Mg", "Ca", "Al", "Si", "O", "S", "F", "Cl", "Br", "Cu", "Ag", "Zn", "Fe"};
  Rng rng(1);
  std::vector<Sample> samples;
  for (int i = 0; i < 300; ++i) {
    Composition c;
    while (c.size() < 2 + rng.next() % 2) c[pool[rng.next() % 16]] = static_cast<double>(1 + rng.next() % 3);
    Sample s;
    s.composition = format_formula(c);
    s.graph = build_formula_graph(to_integer_formula(c), table);
    s.target = {mean_electronegativity(c)};
    samples.push_back(std::move(s));
  }
  const auto parts = split(samples.size(), split_preset("default"), 0);
  auto pick = [&](const std::vector<std::size_t>& idx) {
    std::vector<const Sample*> out;
    for (auto i : idx) out.push_back(&samples[i]);
    return out;
  };
  const auto tr = pick(parts.train), va = pick(parts.val), te = pick(parts.test);

  ModelConfig cfg;
  cfg.input_dim = table.dim;
  cfg.node_dim = cfg.key_dim = 32;
  cfg.dense_widths = {128, 64};
  FinderModel<float> model(cfg);
  std::printf("parameters: %zu\n", model.parameter_count());

  TrainConfig tc;
  tc.batch_size = 32;
  tc.max_epochs = 40;
  tc.adam.base_lr = 1e-3;
  const auto z = Normalizer::fit(tr);
  train(model, tr, va, tc, z, [](const EpochRecord& e) {
    if (e.epoch % 10 == 0) std::printf("epoch %3zu  loss %.4f  val MAE %.4f\n", e.epoch, e.train_loss, e.val_mae);
  });
  const auto m = evaluate(model, te, z);
  std::printf("test MAE %.4f  R2 %.4f\n", m.mae, m.r2);

  for (const char* text : {"NaCl", "Cu2Ag2O3", "LiF"}) {
    const auto comp = parse_formula(text);
    const auto g = build_formula_graph(to_integer_formula(comp), table);
    const auto p = predict(model, {&g}, z);
    std::printf("%-10s predicted %.3f  (true %.3f, uncertainty %.3f)\n", text, p.mean[0][0], mean_electronegativity(comp),
                p.uncertainty[0][0]);
  }

  const auto g = build_formula_graph(to_integer_formula(parse_formula("Cu2Ag2O3")), table);
  const auto eam = export_eam(model, g);
  std::printf("edge attribute matrix for Cu2Ag2O3:\n");
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    for (std::size_t j = 0; j < g.num_nodes; ++j) std::printf(" %7.3f", eam[i][j]);
    std::printf("\n");
  }
}
