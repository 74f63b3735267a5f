// finder: train, predict, screen-enz, export-eam and compare.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "finder/finder.hpp"

namespace fs = std::filesystem;
using finder::Json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shortest text that parses back to the same double.
std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::shared_ptr<spdlog::logger> make_logger(const std::optional<fs::path>& file) {
  std::vector<spdlog::sink_ptr> sinks{std::make_shared<spdlog::sinks::stderr_color_sink_mt>()};
  if (file) sinks.push_back(std::make_shared<spdlog::sinks::basic_file_sink_mt>(file->string(), true));
  auto log = std::make_shared<spdlog::logger>("finder", sinks.begin(), sinks.end());
  log->set_pattern("[%H:%M:%S] %v");
  return log;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw finder::DataError("cannot write " + path.string());
  os << text;
}

// Output file, or stdout when the path is empty or "-".
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty() && path != "-") {
      file_.open(path);
      if (!file_) throw finder::DataError("cannot write " + path);
    }
  }
  std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

finder::ElementEmbeddingTable embedding_table(const std::string& spec) {
  if (spec == "one-hot") return finder::one_hot_embeddings();
  return finder::load_embedding_table(spec);
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  std::string dataset;
  std::string domain = "formula";
  std::string embedding = "one-hot";
  std::string out = "run";
  std::string precision = "float";
  std::string format = "json";
  std::string split = "default";
  std::vector<std::string> ablation;
  std::vector<std::size_t> train_sizes;
  std::size_t layers = 2;
  std::size_t node_dim = 200;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 0;  // 0: 500 formula, 1000 crystal
  std::size_t patience = 50;
  double base_lr = 3e-4;
  double lr_decay = 0.999;
  double clip = 1.0;
  double weight_decay = 1e-6;
  double time_budget = 0.0;
  double target_val_mae = 0.0;
  std::uint64_t seed = 0;
  int max_denominator = finder::kDefaultMaxDenominator;
  int node_cap = finder::kDefaultNodeCap;
  double cutoff = finder::kDefaultCutoff;

  std::size_t epochs() const {
    if (max_epochs > 0) return max_epochs;
    return domain == "crystal" ? 1000 : 500;
  }
};

Json to_json(const TrainOptions& o) {
  return Json{{"command", "train"},
              {"dataset", o.dataset},
              {"domain", o.domain},
              {"embedding", o.embedding},
              {"out", o.out},
              {"precision", o.precision},
              {"format", o.format},
              {"split", o.split},
              {"ablation", o.ablation},
              {"train_sizes", o.train_sizes},
              {"layers", o.layers},
              {"node_dim", o.node_dim},
              {"batch_size", o.batch_size},
              {"max_epochs", o.epochs()},
              {"patience", o.patience},
              {"base_lr", o.base_lr},
              {"lr_decay", o.lr_decay},
              {"clip", o.clip},
              {"weight_decay", o.weight_decay},
              {"time_budget", o.time_budget},
              {"target_val_mae", o.target_val_mae},
              {"seed", o.seed},
              {"max_denominator", o.max_denominator},
              {"node_cap", o.node_cap},
              {"cutoff", o.cutoff}};
}

template <typename V>
void read_key(const Json& j, const char* key, V& v) {
  if (j.contains(key)) v = j.at(key).get<V>();
}

TrainOptions train_options_from_json(const Json& j) {
  if (j.value("command", "train") != "train") throw UsageError("config is not a train config");
  TrainOptions o;
  read_key(j, "dataset", o.dataset);
  read_key(j, "domain", o.domain);
  read_key(j, "embedding", o.embedding);
  read_key(j, "out", o.out);
  read_key(j, "precision", o.precision);
  read_key(j, "format", o.format);
  read_key(j, "split", o.split);
  read_key(j, "ablation", o.ablation);
  read_key(j, "train_sizes", o.train_sizes);
  read_key(j, "layers", o.layers);
  read_key(j, "node_dim", o.node_dim);
  read_key(j, "batch_size", o.batch_size);
  read_key(j, "max_epochs", o.max_epochs);
  read_key(j, "patience", o.patience);
  read_key(j, "base_lr", o.base_lr);
  read_key(j, "lr_decay", o.lr_decay);
  read_key(j, "clip", o.clip);
  read_key(j, "weight_decay", o.weight_decay);
  read_key(j, "time_budget", o.time_budget);
  read_key(j, "target_val_mae", o.target_val_mae);
  read_key(j, "seed", o.seed);
  read_key(j, "max_denominator", o.max_denominator);
  read_key(j, "node_cap", o.node_cap);
  read_key(j, "cutoff", o.cutoff);
  return o;
}

finder::GraphOptions graph_options(const TrainOptions& o) {
  finder::GraphOptions g;
  g.domain = finder::parse_domain(o.domain);
  g.max_denominator = o.max_denominator;
  g.node_cap = o.node_cap;
  g.cutoff = o.cutoff;
  return g;
}

std::vector<finder::Sample> load_training_samples(const std::string& path, const finder::ElementEmbeddingTable& table,
                                                  const finder::GraphOptions& g) {
  std::vector<finder::Sample> samples;
  for (const auto& row : finder::read_dataset(path)) {
    finder::Sample s;
    s.composition = row.composition;
    s.target = row.target;
    s.e_hull_meV = row.e_hull_meV;
    try {
      s.graph = finder::build_graph(row.composition, row.structure_file, table, g);
    } catch (const std::exception& e) {
      throw finder::DataError(path + ":" + std::to_string(row.line) + ": " + e.what());
    }
    samples.push_back(std::move(s));
  }
  if (samples.empty()) throw finder::DataError(path + ": no samples");
  const auto width = samples.front().target.size();
  if (width != 1 && width != finder::kSpectrumPoints)
    throw finder::DataError(path + ": targets must have 1 or " + std::to_string(finder::kSpectrumPoints) + " values");
  for (const auto& s : samples)
    if (s.target.size() != width) throw finder::DataError(path + ": " + s.composition + " has a different target width");
  return samples;
}

std::vector<const finder::Sample*> pick(const std::vector<finder::Sample>& all, const std::vector<std::size_t>& idx) {
  std::vector<const finder::Sample*> out;
  for (auto i : idx) out.push_back(&all[i]);
  return out;
}

void write_metrics(const fs::path& dir, const std::string& format, const finder::Metrics& m,
                   const std::vector<const finder::Sample*>& test) {
  if (format == "json") {
    Json samples = Json::array();
    for (std::size_t i = 0; i < test.size(); ++i)
      samples.push_back({{"composition", test[i]->composition},
                         {"target", m.target[i]},
                         {"prediction", m.prediction[i]},
                         {"abs_error", m.abs_error[i]},
                         {"uncertainty", m.uncertainty[i]}});
    Json j{{"mae", m.mae}, {"rmse", m.rmse}, {"r2", m.r2}, {"mad_mae", m.mad_mae}, {"n", test.size()}, {"samples", samples}};
    write_text(dir / "metrics.json", j.dump(2) + "\n");
    return;
  }
  std::ostringstream os;
  os << "metric,value\nmae," << num(m.mae) << "\nrmse," << num(m.rmse) << "\nr2," << num(m.r2) << "\nmad_mae,"
     << num(m.mad_mae) << "\nn," << test.size() << "\n";
  write_text(dir / "metrics.csv", os.str());
  std::ostringstream ps;
  ps << "composition,target,prediction,abs_error,uncertainty\n";
  for (std::size_t i = 0; i < test.size(); ++i)
    ps << test[i]->composition << ',' << num(m.target[i]) << ',' << num(m.prediction[i]) << ',' << num(m.abs_error[i])
       << ',' << num(m.uncertainty[i]) << '\n';
  write_text(dir / "test_predictions.csv", ps.str());
}

struct RunOutcome {
  finder::Metrics metrics;
  bool aborted = false;
};

template <typename T>
RunOutcome train_once(const TrainOptions& o, const finder::ElementEmbeddingTable& table,
                      const std::vector<finder::Sample>& samples, const std::vector<std::size_t>& train_idx,
                      const finder::Split& parts, const fs::path& dir, spdlog::logger& log) {
  fs::create_directories(dir);
  const auto train_set = pick(samples, train_idx);
  const auto val_set = pick(samples, parts.val);
  const auto test_set = pick(samples, parts.test);
  const auto z = finder::Normalizer::fit(train_set);

  finder::ModelConfig mc;
  mc.input_dim = table.dim;
  mc.node_dim = mc.key_dim = o.node_dim;
  mc.num_layers = o.layers;
  mc.output_points = samples.front().target.size();
  mc.domain = finder::parse_domain(o.domain);
  mc.weight_decay = o.weight_decay;
  mc.seed = o.seed;
  for (const auto& flag : o.ablation) finder::set_ablation_flag(mc.ablation, flag);
  finder::FinderModel<T> model(mc);

  finder::TrainConfig tc;
  tc.batch_size = o.batch_size;
  tc.max_epochs = o.epochs();
  tc.patience = o.patience;
  tc.adam.base_lr = o.base_lr;
  tc.adam.decay = o.lr_decay;
  tc.clip_threshold = o.clip;
  tc.seed = o.seed;
  tc.time_budget_seconds = o.time_budget;
  tc.target_val_mae = o.target_val_mae;

  log.info("{} train / {} val / {} test samples, {} parameters", train_set.size(), val_set.size(), test_set.size(),
           model.parameter_count());
  std::ofstream history(dir / "history.csv");
  if (!history) throw finder::DataError("cannot write " + (dir / "history.csv").string());
  history << "epoch,train_loss,val_MAE,lr\n";
  auto result = finder::train(model, train_set, val_set, tc, z, [&](const finder::EpochRecord& r) {
    history << r.epoch << ',' << num(r.train_loss) << ',' << num(r.val_mae) << ',' << num(r.lr) << '\n';
    history.flush();
    log.info("epoch {:4d}  loss {:.6f}  val MAE {:.6f}", r.epoch, r.train_loss, r.val_mae);
  });
  log.info("stopped: {}; best epoch {} (val MAE {:.6f})", result.stop_reason, result.best_epoch, result.best_val_mae);

  finder::ModelBundle bundle{mc, z, graph_options(o), table};
  bundle.extra = {{"best_epoch", result.best_epoch},
                  {"best_val_mae", result.best_val_mae},
                  {"stop_reason", result.stop_reason},
                  {"train_samples", train_set.size()}};
  finder::save_model((dir / "checkpoint.fdr").string(), model, bundle);

  RunOutcome out;
  out.aborted = result.aborted;
  if (result.aborted) log.error("training aborted: {}", result.abort_reason);
  if (result.history.empty()) return out;
  out.metrics = finder::evaluate(model, test_set, z);
  write_metrics(dir, o.format, out.metrics, test_set);
  log.info("test MAE {:.6f}  RMSE {:.6f}  R2 {:.4f}", out.metrics.mae, out.metrics.rmse, out.metrics.r2);
  return out;
}

template <typename T>
int run_train(const TrainOptions& o) {
  if (o.dataset.empty()) throw UsageError("train: --dataset is required");
  if (o.format != "json" && o.format != "csv") throw UsageError("--format must be json or csv");
  const fs::path dir(o.out);
  fs::create_directories(dir);
  write_text(dir / "config.json", to_json(o).dump(2) + "\n");
  auto log = make_logger(dir / "train.log");

  const auto table = embedding_table(o.embedding);
  const auto samples = load_training_samples(o.dataset, table, graph_options(o));
  const auto parts = finder::split(samples.size(), finder::split_preset(o.split), o.seed);
  log->info("{} samples from {} ({} embedding, {} domain)", samples.size(), o.dataset, table.source, o.domain);

  if (o.train_sizes.empty()) return train_once<T>(o, table, samples, parts.train, parts, dir, *log).aborted ? kNumeric : kOk;

  std::vector<double> sizes, maes;
  std::ostringstream curve;
  curve << "train_size,test_MAE\n";
  bool aborted = false;
  for (auto n : o.train_sizes) {
    if (n == 0 || n > parts.train.size())
      throw UsageError("train size " + std::to_string(n) + " outside 1.." + std::to_string(parts.train.size()));
    const std::vector<std::size_t> subset(parts.train.begin(), parts.train.begin() + static_cast<std::ptrdiff_t>(n));
    log->info("-- training subset of {} samples", n);
    const auto r = train_once<T>(o, table, samples, subset, parts, dir / ("size_" + std::to_string(n)), *log);
    aborted = aborted || r.aborted;
    if (r.aborted) continue;
    sizes.push_back(static_cast<double>(n));
    maes.push_back(r.metrics.mae);
    curve << n << ',' << num(r.metrics.mae) << '\n';
  }
  if (sizes.size() >= 2) {
    const double slope = finder::log_log_slope(sizes, maes);
    curve << "# log-log slope," << num(slope) << '\n';
    log->info("log-log slope of test MAE against training size: {:.4f}", slope);
  }
  write_text(dir / "learning_curve.csv", curve.str());
  return aborted ? kNumeric : kOk;
}

// ---------------------------------------------------------------- predict

struct PredictOptions {
  std::string model;
  std::string dataset;
  std::string out;
  std::string format = "csv";
};

struct PredictedRow {
  std::string composition;
  std::optional<std::string> error;
  std::vector<double> mean, uncertainty;
};

template <typename T>
std::vector<PredictedRow> predict_rows(const finder::LoadedModel<T>& lm, const std::vector<finder::DatasetRow>& rows) {
  const auto& b = lm.bundle;
  std::vector<PredictedRow> out(rows.size());
  std::vector<finder::FormulaGraph> graphs;
  std::vector<std::size_t> ok;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out[i].composition = rows[i].composition;
    try {
      graphs.push_back(finder::build_graph(rows[i].composition, rows[i].structure_file, b.embeddings, b.graph));
      ok.push_back(i);
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  }
  std::vector<const finder::FormulaGraph*> ptrs;
  for (const auto& g : graphs) ptrs.push_back(&g);
  if (ptrs.empty()) return out;
  const auto p = finder::predict(lm.model, ptrs, b.normalizer);
  for (std::size_t k = 0; k < ok.size(); ++k) {
    out[ok[k]].mean = p.mean[k];
    out[ok[k]].uncertainty = p.uncertainty[k];
  }
  return out;
}

void check_domain(const finder::ModelBundle& b, const std::vector<finder::DatasetRow>& rows, const std::string& what) {
  if (b.config.domain != finder::Domain::kCrystal) return;
  for (const auto& r : rows)
    if (!r.structure_file)
      throw finder::DataError(what + ": crystal-domain model needs a structure_file for " + r.composition);
}

template <typename T>
int run_predict_typed(const PredictOptions& o) {
  const auto lm = finder::load_model<T>(o.model);
  const auto rows = finder::read_dataset(o.dataset, false);
  check_domain(lm.bundle, rows, o.dataset);
  const auto preds = predict_rows(lm, rows);
  Output out(o.out);
  auto& os = out.stream();
  const bool spectrum = lm.bundle.config.output_points > 1;
  std::size_t failed = 0;
  for (const auto& r : preds)
    if (r.error) {
      ++failed;
      std::cerr << "warning: " << r.composition << ": " << *r.error << '\n';
    }
  if (o.format == "json") {
    Json j = Json::array();
    for (const auto& r : preds) {
      if (r.error) j.push_back({{"composition", r.composition}, {"error", *r.error}});
      else if (spectrum) j.push_back({{"composition", r.composition}, {"mean", r.mean}, {"uncertainty", r.uncertainty}});
      else j.push_back({{"composition", r.composition}, {"mean", r.mean[0]}, {"uncertainty", r.uncertainty[0]}});
    }
    os << j.dump(2) << '\n';
  } else if (spectrum) {
    os << "composition,part";
    for (std::size_t k = 0; k < finder::kSpectrumPoints; ++k) os << ",e" << k;
    os << '\n';
    for (const auto& r : preds) {
      if (r.error) continue;
      for (const auto* part : {&r.mean, &r.uncertainty}) {
        os << r.composition << ',' << (part == &r.mean ? "mean" : "uncertainty");
        for (double v : *part) os << ',' << num(v);
        os << '\n';
      }
    }
  } else {
    os << "composition,mean,uncertainty,error\n";
    for (const auto& r : preds) {
      if (r.error) os << r.composition << ",,," << '"' << *r.error << '"' << '\n';
      else os << r.composition << ',' << num(r.mean[0]) << ',' << num(r.uncertainty[0]) << ",\n";
    }
  }
  if (failed > 0) std::cerr << failed << " of " << preds.size() << " rows could not be predicted\n";
  return kOk;
}

int run_predict(const PredictOptions& o) {
  if (o.format != "json" && o.format != "csv") throw UsageError("--format must be json or csv");
  const auto ck = finder::load_checkpoint(o.model);
  return ck.scalar_bytes == sizeof(float) ? run_predict_typed<float>(o) : run_predict_typed<double>(o);
}

// ---------------------------------------------------------------- screen-enz

struct ScreenOptions {
  std::string candidates;
  std::string re_model;
  std::string im_model;
  std::string spectra;  // raw (energy, value) points; bypasses the models
  std::string out;
  std::string network;
  std::string format = "csv";
  int min_count = 5;
};

std::vector<finder::DatasetRow> read_candidates(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw finder::DataError("cannot open " + path);
  std::stringstream text;
  text << in.rdbuf();
  if (finder::trim(text.str()).empty()) return {};
  return finder::read_dataset(path, false);
}

// Columns composition, part (eps_re | eps_im), energy_eV, value.
std::map<std::string, std::pair<finder::Spectrum, finder::Spectrum>> read_raw_spectra(const std::string& path) {
  const auto t = finder::read_table_file(path);
  const auto c = t.column("composition"), p = t.column("part"), e = t.column("energy_eV"), v = t.column("value");
  if (!c || !p || !e || !v) throw finder::DataError(path + ": need columns composition, part, energy_eV, value");
  std::map<std::string, std::map<std::string, std::vector<std::pair<double, double>>>> points;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& f = t.rows[r];
    const std::string where = path + ":" + std::to_string(t.lines[r]);
    if (f[*p] != "eps_re" && f[*p] != "eps_im") throw finder::DataError(where + ": part must be eps_re or eps_im");
    points[f[*c]][f[*p]].emplace_back(finder::parse_number(f[*e], where), finder::parse_number(f[*v], where));
  }
  std::map<std::string, std::pair<finder::Spectrum, finder::Spectrum>> out;
  for (auto& [comp, parts] : points) {
    if (!parts.count("eps_re") || !parts.count("eps_im"))
      throw finder::DataError(path + ": " + comp + " needs both eps_re and eps_im points");
    try {
      out[comp] = {finder::resample(parts["eps_re"], finder::SpectrumKind::kReal),
                   finder::resample(parts["eps_im"], finder::SpectrumKind::kImaginary)};
    } catch (const std::invalid_argument& err) {
      throw finder::DataError(path + ": " + comp + ": " + err.what());
    }
  }
  return out;
}

template <typename T>
std::vector<finder::Spectrum> model_spectra(const std::string& path, const std::vector<finder::DatasetRow>& rows,
                                            finder::SpectrumKind kind, std::vector<std::string>& warnings) {
  const auto lm = finder::load_model<T>(path);
  if (lm.bundle.config.output_points != finder::kSpectrumPoints)
    throw UsageError(path + " is not a spectrum model");
  check_domain(lm.bundle, rows, path);
  const auto preds = predict_rows(lm, rows);
  std::vector<finder::Spectrum> out;
  for (const auto& r : preds) {
    if (r.error) {
      warnings.push_back(r.composition + ": " + *r.error + ", skipped");
      out.emplace_back();
    } else {
      out.emplace_back(r.mean, kind);
    }
  }
  return out;
}

std::vector<finder::Spectrum> load_model_spectra(const std::string& path, const std::vector<finder::DatasetRow>& rows,
                                                 finder::SpectrumKind kind, std::vector<std::string>& warnings) {
  const auto ck = finder::load_checkpoint(path);
  return ck.scalar_bytes == sizeof(float) ? model_spectra<float>(path, rows, kind, warnings)
                                          : model_spectra<double>(path, rows, kind, warnings);
}

int run_screen(const ScreenOptions& o) {
  if (o.format != "json" && o.format != "csv") throw UsageError("--format must be json or csv");
  const bool bypass = !o.spectra.empty();
  if (!bypass && (o.re_model.empty() || o.im_model.empty()))
    throw UsageError("screen-enz needs --re-model and --im-model, or --spectra");
  const auto rows = read_candidates(o.candidates);

  std::vector<finder::ScreeningInput> inputs;
  std::vector<std::string> warnings;
  if (bypass) {
    const auto spectra = read_raw_spectra(o.spectra);
    for (const auto& r : rows) {
      auto it = spectra.find(r.composition);
      if (it == spectra.end()) {
        warnings.push_back(r.composition + ": no spectra in " + o.spectra + ", skipped");
        continue;
      }
      inputs.push_back({r.composition, it->second.first, it->second.second, r.e_hull_meV});
    }
  } else if (!rows.empty()) {
    const auto re = load_model_spectra(o.re_model, rows, finder::SpectrumKind::kReal, warnings);
    const auto im = load_model_spectra(o.im_model, rows, finder::SpectrumKind::kImaginary, warnings);
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (!re[i].values.empty() && !im[i].values.empty())
        inputs.push_back({rows[i].composition, re[i], im[i], rows[i].e_hull_meV});
  }

  const auto result = finder::screen(inputs);
  warnings.insert(warnings.end(), result.warnings.begin(), result.warnings.end());
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';

  std::vector<std::string> comps;
  for (const auto& c : result.candidates) comps.push_back(c.composition);
  const auto network = finder::cooccurrence(comps, o.min_count);

  Output out(o.out);
  auto& os = out.stream();
  if (o.format == "json") {
    Json cands = Json::array();
    for (const auto& c : result.candidates)
      cands.push_back({{"composition", c.composition},
                       {"omega_co_eV", c.crossover},
                       {"eps_im_at_co", c.eps_im_at_crossover},
                       {"e_hull_meV", c.e_hull_meV},
                       {"later_crossings_eV", c.later_crossings}});
    Json edges = Json::array();
    for (const auto& [pair, n] : network) edges.push_back({{"a", pair.first}, {"b", pair.second}, {"count", n}});
    os << Json{{"candidates", cands}, {"cooccurrence", edges}, {"warnings", warnings}}.dump(2) << '\n';
  } else {
    os << "composition,omega_co_eV,eps_im_at_co,e_hull_meV,later_crossings_eV\n";
    for (const auto& c : result.candidates) {
      os << c.composition << ',' << num(c.crossover) << ',' << num(c.eps_im_at_crossover) << ',' << num(c.e_hull_meV) << ',';
      for (std::size_t k = 0; k < c.later_crossings.size(); ++k) os << (k ? ";" : "") << num(c.later_crossings[k]);
      os << '\n';
    }
  }
  if (!o.network.empty()) {
    std::ostringstream ns;
    ns << "element_a,element_b,count\n";
    for (const auto& [pair, n] : network) ns << pair.first << ',' << pair.second << ',' << n << '\n';
    write_text(o.network, ns.str());
  }
  return kOk;
}

// ---------------------------------------------------------------- export-eam

struct EamOptions {
  std::string model;
  std::string composition;
  std::string out;
  int layer = -1;
};

template <typename T>
int run_eam_typed(const EamOptions& o) {
  const auto lm = finder::load_model<T>(o.model);
  const auto& b = lm.bundle;
  if (b.config.domain != finder::Domain::kFormula)
    throw UsageError("export-eam: " + o.model + " is a crystal-domain model; EAMs exist only for predicted edges");
  const auto g = finder::build_graph(o.composition, std::nullopt, b.embeddings, b.graph);
  std::optional<std::size_t> layer;
  if (o.layer >= 0) layer = static_cast<std::size_t>(o.layer);
  const auto eam = finder::export_eam(lm.model, g, layer);
  Output out(o.out);
  auto& os = out.stream();
  os << "node";
  for (std::size_t j = 0; j < g.num_nodes; ++j) os << ',' << g.node_elements[j] << j;
  os << '\n';
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    os << g.node_elements[i] << i;
    for (double v : eam[i]) os << ',' << num(v);
    os << '\n';
  }
  return kOk;
}

int run_eam(const EamOptions& o) {
  const auto ck = finder::load_checkpoint(o.model);
  try {
    return ck.scalar_bytes == sizeof(float) ? run_eam_typed<float>(o) : run_eam_typed<double>(o);
  } catch (const finder::FormulaError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    if (dynamic_cast<const finder::ShapeError*>(&e)) throw;
    throw UsageError(e.what());
  }
}

// ---------------------------------------------------------------- compare

struct CompareOptions {
  std::string first;
  std::string second;
  std::string format = "csv";
};

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;
  int n = 0;
};

// Either a single row with mean,std,n or one row per run with an MAE column.
Summary read_summary(const std::string& path) {
  const auto t = finder::read_table_file(path);
  if (t.rows.empty()) throw finder::DataError(path + ": no rows");
  const auto m = t.column("mean"), s = t.column("std"), n = t.column("n");
  if (m && s && n) {
    const auto& r = t.rows.front();
    Summary out{finder::parse_number(r[*m], path), finder::parse_number(r[*s], path), 0};
    const double count = finder::parse_number(r[*n], path);
    if (count != std::floor(count) || count < 1) throw finder::DataError(path + ": n must be a positive integer");
    out.n = static_cast<int>(count);
    return out;
  }
  auto col = t.column("mae");
  if (!col) col = t.column("MAE");
  if (!col) col = t.column("test_MAE");
  if (!col) throw finder::DataError(path + ": need columns mean,std,n or a per-run mae column");
  std::vector<double> v;
  for (const auto& r : t.rows) v.push_back(finder::parse_number(r[*col], path));
  Summary out;
  out.n = static_cast<int>(v.size());
  for (double x : v) out.mean += x;
  out.mean /= static_cast<double>(v.size());
  double sq = 0.0;
  for (double x : v) sq += (x - out.mean) * (x - out.mean);
  out.stddev = v.size() > 1 ? std::sqrt(sq / static_cast<double>(v.size() - 1)) : 0.0;
  return out;
}

int run_compare(const CompareOptions& o) {
  if (o.format != "json" && o.format != "csv") throw UsageError("--format must be json or csv");
  const auto a = read_summary(o.first), b = read_summary(o.second);
  if (a.n < 2 || b.n < 2) throw finder::DataError("compare: each side needs n >= 2 runs");
  const auto r = finder::t_test(a.mean, a.stddev, a.n, b.mean, b.stddev, b.n);
  if (!r.warning.empty()) std::cerr << "warning: " << r.warning << '\n';
  if (o.format == "json") {
    std::cout << Json{{"t", r.t}, {"p", r.p}, {"df", r.degrees_of_freedom}, {"standard_error", r.standard_error}}.dump(2) << '\n';
  } else {
    std::cout << "t,p,df,standard_error\n"
              << num(r.t) << ',' << num(r.p) << ',' << r.degrees_of_freedom << ',' << num(r.standard_error) << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Formula-graph self-attention networks for materials property prediction"};
  app.require_subcommand(1);

  // train
  TrainOptions cli_train;
  std::string train_config;
  std::vector<std::function<void(TrainOptions&)>> overrides;
  auto* train = app.add_subcommand("train", "Train a model; writes a run directory");
  train->add_option("--config", train_config, "Rerun from a resolved config.json; explicit flags override it")
      ->check(CLI::ExistingFile);
  auto bind = [&](const std::string& flag, auto field, const std::string& help) {
    auto* opt = train->add_option(flag, cli_train.*field, help);
    overrides.push_back([opt, field, &cli_train](TrainOptions& t) {
      if (opt->count() > 0) t.*field = cli_train.*field;
    });
    return opt;
  };
  bind("--dataset", &TrainOptions::dataset, "Dataset file (composition, target|target_vector, ...)");
  bind("--domain", &TrainOptions::domain, "formula or crystal")->check(CLI::IsMember({"formula", "crystal"}));
  bind("--embedding", &TrainOptions::embedding, "one-hot, or an element embedding table file");
  bind("--out", &TrainOptions::out, "Run directory");
  bind("--precision", &TrainOptions::precision, "float or double")->check(CLI::IsMember({"float", "double"}));
  bind("--format", &TrainOptions::format, "Metrics report format: json or csv");
  bind("--split", &TrainOptions::split, "default (70/15/15), matbench (60/20/20) or matbench-nested (72/8/20)");
  bind("--ablation", &TrainOptions::ablation, "Ablation flag, repeatable")
      ->check(CLI::IsMember(finder::ablation_flag_names()));
  bind("--train-sizes", &TrainOptions::train_sizes, "Sample-efficiency sweep, e.g. 100,500,1000")->delimiter(',');
  bind("--layers", &TrainOptions::layers, "Message-passing layers (1-3)");
  bind("--node-dim", &TrainOptions::node_dim, "Node state and key width");
  bind("--batch-size", &TrainOptions::batch_size, "Mini-batch size");
  bind("--epochs", &TrainOptions::max_epochs, "Maximum epochs (default 500 formula, 1000 crystal)");
  bind("--patience", &TrainOptions::patience, "Early-stopping patience in epochs");
  bind("--lr", &TrainOptions::base_lr, "Base learning rate");
  bind("--lr-decay", &TrainOptions::lr_decay, "Per-iteration learning-rate multiplier");
  bind("--clip", &TrainOptions::clip, "Global gradient-norm threshold");
  bind("--weight-decay", &TrainOptions::weight_decay, "L2 coefficient on weight matrices");
  bind("--time-budget", &TrainOptions::time_budget, "Stop after this many seconds (0 = unlimited)");
  bind("--target-val-mae", &TrainOptions::target_val_mae, "Stop once validation MAE reaches this value");
  bind("--seed", &TrainOptions::seed, "Seed for splitting, initialisation and shuffling");
  bind("--max-denominator", &TrainOptions::max_denominator, "Largest denominator for fractional amounts");
  bind("--node-cap", &TrainOptions::node_cap, "Maximum atoms per graph");
  bind("--cutoff", &TrainOptions::cutoff, "Crystal-graph neighbour cutoff in Angstrom");

  PredictOptions pred;
  auto* predict = app.add_subcommand("predict", "Predict mean and uncertainty with a trained checkpoint");
  predict->add_option("--model", pred.model, "Checkpoint file")->required();
  predict->add_option("--dataset", pred.dataset, "Input file with a composition column")->required();
  predict->add_option("--out", pred.out, "Output file (default stdout)");
  predict->add_option("--format", pred.format, "csv or json");

  ScreenOptions scr;
  auto* screen = app.add_subcommand("screen-enz", "Screen candidates for low-loss epsilon-near-zero behaviour");
  screen->add_option("--candidates", scr.candidates, "File with composition and e_hull_meV columns")->required();
  screen->add_option("--re-model", scr.re_model, "Checkpoint predicting the real part");
  screen->add_option("--im-model", scr.im_model, "Checkpoint predicting the imaginary part");
  screen->add_option("--spectra", scr.spectra, "Raw spectra file used instead of the models");
  screen->add_option("--out", scr.out, "Report file (default stdout)");
  screen->add_option("--network", scr.network, "Write the element co-occurrence edges here");
  screen->add_option("--min-count", scr.min_count, "Minimum co-occurrence count");
  screen->add_option("--format", scr.format, "csv or json");

  EamOptions eam;
  auto* export_eam = app.add_subcommand("export-eam", "Write the edge-attribute matrix of a composition");
  export_eam->add_option("--model", eam.model, "Formula-domain checkpoint")->required();
  export_eam->add_option("--composition", eam.composition, "Chemical formula")->required();
  export_eam->add_option("--layer", eam.layer, "Message-passing layer (default: last)");
  export_eam->add_option("--out", eam.out, "Output file (default stdout)");

  CompareOptions cmp;
  auto* compare = app.add_subcommand("compare", "Two-tailed pooled t-test between two sets of runs");
  compare->add_option("first", cmp.first, "Summary (mean,std,n) or per-run MAE file")->required();
  compare->add_option("second", cmp.second, "Summary (mean,std,n) or per-run MAE file")->required();
  compare->add_option("--format", cmp.format, "csv or json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*train) {
      TrainOptions o = cli_train;
      if (!train_config.empty()) {
        std::ifstream in(train_config);
        o = train_options_from_json(Json::parse(in));
        for (auto& apply : overrides) apply(o);
      }
      return o.precision == "double" ? run_train<double>(o) : run_train<float>(o);
    }
    if (*predict) return run_predict(pred);
    if (*screen) return run_screen(scr);
    if (*export_eam) return run_eam(eam);
    if (*compare) return run_compare(cmp);
  } catch (const finder::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const Json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const finder::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const finder::FormulaError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const finder::EmbeddingError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const finder::CheckpointError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const finder::ShapeError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
