#pragma once

// Splitting, target normalisation, the training loop and test metrics.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#if __has_include(<malloc.h>)
#include <malloc.h>
#endif

#include "finder/batch.hpp"
#include "finder/model.hpp"
#include "finder/optim.hpp"

namespace finder {

struct Sample {
  std::string composition;
  FormulaGraph graph;
  std::vector<double> target;  // one value, or 3000 spectrum points
  std::optional<double> e_hull_meV;
};

// z-score normalisation fitted on training targets only.
struct Normalizer {
  double mean = 0.0;
  double stddev = 1.0;

  static Normalizer fit(const std::vector<const Sample*>& train) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto* s : train)
      for (double y : s->target) {
        sum += y;
        ++n;
      }
    if (n == 0) throw std::invalid_argument("normalizer: no training targets");
    Normalizer z;
    z.mean = sum / static_cast<double>(n);
    double sq = 0.0;
    for (const auto* s : train)
      for (double y : s->target) sq += (y - z.mean) * (y - z.mean);
    z.stddev = std::sqrt(sq / static_cast<double>(n));
    if (!(z.stddev > 0.0)) throw std::invalid_argument("normalizer: training targets have zero spread");
    return z;
  }

  double normalize(double x) const { return (x - mean) / stddev; }
  double denormalize(double x) const { return x * stddev + mean; }
};

struct SplitRatios {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;

  void validate() const {
    if (!(train > 0 && val > 0 && test > 0)) throw std::invalid_argument("split ratios must be positive");
    if (std::abs(train + val + test - 1.0) > 1e-9) throw std::invalid_argument("split ratios must sum to 1");
  }
};

inline SplitRatios split_preset(const std::string& name) {
  if (name == "default") return {0.70, 0.15, 0.15};
  if (name == "matbench") return {0.60, 0.20, 0.20};
  if (name == "matbench-nested") return {0.72, 0.08, 0.20};
  throw std::invalid_argument("unknown split preset '" + name + "'");
}

struct Split {
  std::vector<std::size_t> train, val, test;
};

// Seeded Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.next() % i]);
  return idx;
}

inline Split split(std::size_t n, const SplitRatios& ratios, std::uint64_t seed) {
  ratios.validate();
  if (n == 0) throw std::invalid_argument("split: empty dataset");
  const auto n_train = static_cast<std::size_t>(std::llround(ratios.train * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(ratios.val * static_cast<double>(n)));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n)
    throw std::invalid_argument("split: " + std::to_string(n) + " samples leave an empty partition");
  Rng rng(seed);
  auto idx = shuffled_indices(n, rng);
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  return s;
}

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t max_epochs = 500;
  std::size_t patience = 50;
  AdamOptions adam;
  double clip_threshold = 1.0;
  std::uint64_t seed = 0;
  SplitRatios ratios;
  double time_budget_seconds = 0.0;  // stop after the epoch that exceeds it; 0 = unlimited
  double target_val_mae = 0.0;       // stop once validation MAE reaches it; 0 = never
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  double lr = 0.0;
};

template <typename T>
struct TrainResult {
  std::vector<std::vector<T>> best_parameters;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_mae = INFINITY;
  bool aborted = false;
  std::string abort_reason;
  std::string stop_reason = "max epochs";
};

struct Predictions {
  std::vector<std::vector<double>> mean;         // original units
  std::vector<std::vector<double>> uncertainty;  // exp(log_scale) * stddev
};

template <typename T>
std::vector<std::vector<T>> snapshot_parameters(const FinderModel<T>& model) {
  std::vector<std::vector<T>> out;
  for (const auto& p : model.parameters()) out.emplace_back(p.data().begin(), p.data().end());
  return out;
}

template <typename T>
void restore_parameters(FinderModel<T>& model, const std::vector<std::vector<T>>& values) {
  auto& params = model.parameters();
  if (values.size() != params.size()) throw std::invalid_argument("restore_parameters: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].size() != params[i].size()) throw ShapeError("restore_parameters: size mismatch for parameter " + std::to_string(i));
    std::copy(values[i].begin(), values[i].end(), params[i].data().begin());
  }
}

template <typename T>
Tensor<T> target_tensor(const std::vector<const Sample*>& batch, const Normalizer& z, std::size_t points) {
  std::vector<T> y;
  y.reserve(batch.size() * points);
  for (const auto* s : batch) {
    if (s->target.size() != points)
      throw ShapeError("sample " + s->composition + " has " + std::to_string(s->target.size()) + " target values, model emits " +
                       std::to_string(points));
    for (double v : s->target) y.push_back(static_cast<T>(z.normalize(v)));
  }
  return Tensor<T>::from_data({batch.size(), points}, std::move(y));
}

// Inference in original units; no tape is recorded.
template <typename T>
Predictions predict(const FinderModel<T>& model, const std::vector<const FormulaGraph*>& graphs, const Normalizer& z,
                    std::size_t batch_size = 256) {
  Predictions out;
  for (std::size_t start = 0; start < graphs.size(); start += batch_size) {
    const std::size_t end = std::min(graphs.size(), start + batch_size);
    std::vector<const FormulaGraph*> chunk(graphs.begin() + static_cast<std::ptrdiff_t>(start),
                                           graphs.begin() + static_cast<std::ptrdiff_t>(end));
    auto res = model.forward(make_batch(chunk));
    const auto points = res.mean.dim(1);
    for (std::size_t g = 0; g < chunk.size(); ++g) {
      std::vector<double> mu(points), sd(points);
      for (std::size_t k = 0; k < points; ++k) {
        mu[k] = z.denormalize(static_cast<double>(res.mean.data()[g * points + k]));
        sd[k] = std::exp(static_cast<double>(res.log_scale.data()[g * points + k])) * z.stddev;
      }
      out.mean.push_back(std::move(mu));
      out.uncertainty.push_back(std::move(sd));
    }
  }
  return out;
}

struct Metrics {
  double mae = 0.0;
  double rmse = 0.0;
  double r2 = 0.0;
  double mad_mae = 0.0;
  std::vector<double> abs_error;    // per sample (mean over points for spectra)
  std::vector<double> uncertainty;  // per sample (mean over points for spectra)
  std::vector<double> target;       // per sample (mean over points for spectra)
  std::vector<double> prediction;   // per sample (mean over points for spectra)
};

// Metrics over every target value; per-sample columns for parity tables.
inline Metrics compute_metrics(const std::vector<std::vector<double>>& y_true, const std::vector<std::vector<double>>& y_pred,
                               const std::vector<std::vector<double>>& uncertainty = {}) {
  if (y_true.empty()) throw std::invalid_argument("metrics: empty test set");
  if (y_true.size() != y_pred.size()) throw std::invalid_argument("metrics: prediction count mismatch");
  Metrics m;
  double abs_sum = 0.0, sq_sum = 0.0, total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i].size() != y_pred[i].size()) throw std::invalid_argument("metrics: target width mismatch");
    double sample_abs = 0.0, sample_y = 0.0, sample_p = 0.0, sample_u = 0.0;
    for (std::size_t k = 0; k < y_true[i].size(); ++k) {
      const double err = y_pred[i][k] - y_true[i][k];
      abs_sum += std::abs(err);
      sq_sum += err * err;
      total += y_true[i][k];
      sample_abs += std::abs(err);
      sample_y += y_true[i][k];
      sample_p += y_pred[i][k];
      if (!uncertainty.empty()) sample_u += uncertainty[i][k];
      ++n;
    }
    const double w = static_cast<double>(y_true[i].size());
    m.abs_error.push_back(sample_abs / w);
    m.target.push_back(sample_y / w);
    m.prediction.push_back(sample_p / w);
    m.uncertainty.push_back(uncertainty.empty() ? 0.0 : sample_u / w);
  }
  const double nd = static_cast<double>(n);
  const double mean_y = total / nd;
  double ss_tot = 0.0, mad = 0.0;
  for (const auto& row : y_true)
    for (double y : row) {
      ss_tot += (y - mean_y) * (y - mean_y);
      mad += std::abs(y - mean_y);
    }
  m.mae = abs_sum / nd;
  m.rmse = std::sqrt(sq_sum / nd);
  m.r2 = ss_tot > 0.0 ? 1.0 - sq_sum / ss_tot : (sq_sum == 0.0 ? 1.0 : 0.0);
  m.mad_mae = m.mae > 0.0 ? (mad / nd) / m.mae : INFINITY;
  return m;
}

template <typename T>
Metrics evaluate(const FinderModel<T>& model, const std::vector<const Sample*>& test, const Normalizer& z) {
  if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
  std::vector<const FormulaGraph*> graphs;
  std::vector<std::vector<double>> truth;
  for (const auto* s : test) {
    graphs.push_back(&s->graph);
    truth.push_back(s->target);
  }
  auto pred = predict(model, graphs, z);
  return compute_metrics(truth, pred.mean, pred.uncertainty);
}

// glibc returns large blocks to the OS on free, so every step would fault
// fresh pages for its gradient buffers. Keep them in the heap instead.
inline void retain_freed_memory() {
#if defined(__GLIBC__) && defined(M_MMAP_THRESHOLD)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

// Mini-batch training with per-iteration learning-rate decay, global-norm
// clipping, and selection of the parameters with the lowest validation MAE.
template <typename T>
TrainResult<T> train(FinderModel<T>& model, const std::vector<const Sample*>& train_set,
                     const std::vector<const Sample*>& val_set, const TrainConfig& cfg, const Normalizer& z,
                     const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  if (train_set.empty() || val_set.empty()) throw std::invalid_argument("train: empty training or validation set");
  if (cfg.batch_size == 0 || cfg.max_epochs == 0) throw std::invalid_argument("train: batch size and epochs must be positive");
  retain_freed_memory();
  const auto started = std::chrono::steady_clock::now();
  TrainResult<T> result;
  result.best_parameters = snapshot_parameters(model);
  auto& params = model.parameters();
  AdamState<T> adam(params, cfg.adam);
  Rng rng(cfg.seed);
  const auto points = model.config().output_points;
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto order = shuffled_indices(train_set.size(), rng);
    double loss_sum = 0.0;
    try {
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg.batch_size);
        std::vector<const Sample*> batch;
        std::vector<const FormulaGraph*> graphs;
        for (std::size_t k = start; k < end; ++k) {
          batch.push_back(train_set[order[k]]);
          graphs.push_back(&train_set[order[k]]->graph);
        }
        Tape<T> tape;
        TapeScope<T> scope(tape);
        auto out = model.forward(make_batch(graphs));
        auto loss = training_loss(model, out, target_tensor<T>(batch, z, points));
        tape.backward(loss);
        const double grad_norm = clip_gradients(params, cfg.clip_threshold);
        if (!std::isfinite(grad_norm)) throw NumericError("train: non-finite gradient norm");
        adam_step(params, adam);
        zero_grad(params);
        loss_sum += static_cast<double>(loss.item()) * static_cast<double>(batch.size());
      }
    } catch (const NumericError& e) {
      result.aborted = true;
      result.abort_reason = e.what();
      result.stop_reason = "numeric failure";
      break;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.val_mae = evaluate(model, val_set, z).mae;
    rec.lr = adam.current_lr();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (!std::isfinite(rec.val_mae)) {
      result.aborted = true;
      result.abort_reason = "train: non-finite validation MAE";
      result.stop_reason = "numeric failure";
      break;
    }
    if (rec.val_mae < result.best_val_mae) {
      result.best_val_mae = rec.val_mae;
      result.best_epoch = epoch;
      result.best_parameters = snapshot_parameters(model);
      stale = 0;
    } else if (++stale >= cfg.patience) {
      result.stop_reason = "patience";
      break;
    }
    if (cfg.target_val_mae > 0.0 && rec.val_mae <= cfg.target_val_mae) {
      result.stop_reason = "target";
      break;
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;
    if (cfg.time_budget_seconds > 0.0 && elapsed.count() >= cfg.time_budget_seconds) {
      result.stop_reason = "time budget";
      break;
    }
  }
  restore_parameters(model, result.best_parameters);
  return result;
}

// Least-squares slope of log(mae) against log(size).
inline double log_log_slope(const std::vector<double>& sizes, const std::vector<double>& maes) {
  if (sizes.size() != maes.size() || sizes.size() < 2) throw std::invalid_argument("log_log_slope: need two or more points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const double x = std::log(sizes[i]), y = std::log(maes[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace finder
