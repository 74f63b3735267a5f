#pragma once

// Straight-line re-implementation of the forward pass with nested loops over
// plain vectors. Reads weights by name from a FinderModel<double>; shares no
// code with the tensor engine.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "finder/finder.hpp"

namespace finder::testing {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

struct OracleLayer {
  Mat edges;      // per edge, 20 wide
  Mat weights;    // per (i, l) pair, i-major
  Mat alignment;  // per edge
  Mat messages;   // per edge
  Mat nodes;      // after the update
  Vec pooled;
};

struct OracleOutput {
  std::vector<OracleLayer> layers;
  Vec combined;
  Vec mean, log_scale;
};

class Oracle {
 public:
  explicit Oracle(const FinderModel<double>& model) : cfg_(model.config()) {
    for (const auto& [name, t] : model.named_parameters()) {
      Param p;
      p.shape = t.shape();
      p.values.assign(t.data().begin(), t.data().end());
      params_[name] = p;
    }
  }

  OracleOutput run(const FormulaGraph& g) const {
    const std::size_t n = g.num_nodes;
    Mat v(n);
    for (std::size_t i = 0; i < n; ++i)
      v[i].assign(g.node_features.begin() + i * g.feature_dim, g.node_features.begin() + (i + 1) * g.feature_dim);

    OracleOutput out;
    for (std::size_t r = 0; r < cfg_.num_layers; ++r) {
      const std::string p = "mp" + std::to_string(r);
      OracleLayer L;
      const std::size_t E = g.edges.size();

      // Neighbour lists in edge order.
      std::vector<std::vector<std::size_t>> nbr(n);
      for (const auto& e : g.edges) nbr[e.src].push_back(e.dst);

      for (std::size_t k = 0; k < E; ++k) {
        const auto i = g.edges[k].src, j = g.edges[k].dst;
        if (g.domain == Domain::kFormula) {
          Vec pair = half_sum(v[i], v[j]);
          Vec ctx(v[i].size(), 0.0);
          for (auto m : nbr[i]) {
            const Vec pm = half_sum(v[i], v[m]);
            for (std::size_t c = 0; c < ctx.size(); ++c) ctx[c] += pm[c];
          }
          for (auto& x : ctx) x /= static_cast<double>(nbr[i].size());
          L.edges.push_back(mlp(p + ".phi_e", join(pair, ctx), cfg_.edge_hidden.size() + 1));
        } else {
          L.edges.emplace_back(g.edge_features.begin() + k * kGaussianCount,
                               g.edge_features.begin() + (k + 1) * kGaussianCount);
        }
      }

      Mat q(n), kk(n), val(n);
      for (std::size_t i = 0; i < n; ++i) {
        q[i] = linear(p + ".F_Q.W", v[i]);
        kk[i] = linear(p + ".F_K.W", v[i]);
        val[i] = linear(p + ".F_V.W", v[i]);
      }
      const double dk = static_cast<double>(cfg_.key_dim);
      for (std::size_t i = 0; i < n; ++i) {
        Mat qk(n, Vec(cfg_.key_dim));
        Vec denom(cfg_.key_dim, 0.0);
        for (std::size_t l = 0; l < n; ++l)
          for (std::size_t c = 0; c < cfg_.key_dim; ++c) {
            qk[l][c] = std::exp(q[i][c] * kk[l][c] / std::sqrt(dk));
            denom[c] += qk[l][c];
          }
        for (std::size_t l = 0; l < n; ++l) {
          Vec w(cfg_.key_dim);
          for (std::size_t c = 0; c < cfg_.key_dim; ++c) w[c] = qk[l][c] / denom[c];
          L.weights.push_back(w);
        }
      }

      Mat incoming(n, Vec(cfg_.node_dim, 0.0));
      std::vector<double> count(n, 0.0);
      for (std::size_t k = 0; k < E; ++k) {
        const auto i = g.edges[k].src, j = g.edges[k].dst;
        Vec a(cfg_.key_dim);
        for (std::size_t c = 0; c < cfg_.key_dim; ++c) a[c] = L.weights[i * n + j][c] * val[j][c];
        Vec m = mlp(p + ".phi_m", join(half_sum(v[i], v[j]), L.edges[k]), cfg_.message_hidden.size() + 1);
        for (std::size_t c = 0; c < m.size(); ++c) m[c] *= a[c];
        for (std::size_t c = 0; c < m.size(); ++c) incoming[i][c] += m[c];
        count[i] += 1.0;
        L.alignment.push_back(a);
        L.messages.push_back(m);
      }
      Mat next(n);
      for (std::size_t i = 0; i < n; ++i) {
        next[i] = linear(p + ".W_int.W", v[i]);
        if (count[i] > 0)
          for (std::size_t c = 0; c < next[i].size(); ++c) next[i][c] += incoming[i][c] / count[i];
      }
      v = next;
      L.nodes = v;
      L.pooled = pool("pool" + std::to_string(r), v);
      if (out.combined.empty()) out.combined.assign(cfg_.node_dim, 0.0);
      for (std::size_t c = 0; c < cfg_.node_dim; ++c) out.combined[c] += L.pooled[c];
      out.layers.push_back(L);
    }

    const Vec h = post_net(out.combined);
    out.mean = affine_layer("head.mean", h);
    out.log_scale = affine_layer("head.log_scale", h);
    return out;
  }

 private:
  struct Param {
    Shape shape;
    Vec values;
  };

  const Param& at(const std::string& name) const { return params_.at(name); }

  static Vec half_sum(const Vec& a, const Vec& b) {
    Vec out(a.size());
    for (std::size_t c = 0; c < a.size(); ++c) out[c] = (a[c] + b[c]) / 2.0;
    return out;
  }

  static Vec join(const Vec& a, const Vec& b) {
    Vec out = a;
    out.insert(out.end(), b.begin(), b.end());
    return out;
  }

  // x . W for W stored row-major as in x out.
  Vec linear(const std::string& name, const Vec& x) const {
    const auto& w = at(name);
    const std::size_t in = w.shape[0], out_w = w.shape[1];
    Vec y(out_w, 0.0);
    for (std::size_t o = 0; o < out_w; ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += x[i] * w.values[i * out_w + o];
      y[o] = acc;
    }
    return y;
  }

  Vec affine_layer(const std::string& name, const Vec& x) const {
    Vec y = linear(name + ".W", x);
    const auto& b = at(name + ".b").values;
    for (std::size_t o = 0; o < y.size(); ++o) y[o] += b[o];
    return y;
  }

  static Vec relu(Vec x) {
    for (auto& e : x) e = e > 0 ? e : 0.0;
    return x;
  }

  Vec mlp(const std::string& name, Vec x, std::size_t layers) const {
    for (std::size_t l = 0; l < layers; ++l) {
      x = affine_layer(name + ".l" + std::to_string(l), x);
      if (l + 1 < layers) x = relu(x);
    }
    return x;
  }

  Vec pool(const std::string& name, const Mat& v) const {
    std::vector<double> gate(v.size());
    double top = -INFINITY;
    for (std::size_t i = 0; i < v.size(); ++i) {
      gate[i] = mlp(name + ".gate", v[i], 2)[0];
      top = std::max(top, gate[i]);
    }
    double z = 0.0;
    for (auto& x : gate) z += std::exp(x - top);
    Vec out(cfg_.node_dim, 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const Vec t = mlp(name + ".transform", v[i], 2);
      const double w = std::exp(gate[i] - top) / z;
      for (std::size_t c = 0; c < out.size(); ++c) out[c] += w * t[c];
    }
    return out;
  }

  Vec post_net(const Vec& x) const {
    const auto& w = at("post.conv.W");
    const auto& b = at("post.conv.b").values;
    const std::size_t k = w.shape[0], f = w.shape[2], len = x.size();
    const long pad = static_cast<long>(k / 2);
    Vec flat(len * f);
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t o = 0; o < f; ++o) {
        double acc = b[o];
        for (std::size_t t = 0; t < k; ++t) {
          const long pos = static_cast<long>(l) + static_cast<long>(t) - pad;
          if (pos >= 0 && pos < static_cast<long>(len)) acc += w.values[t * f + o] * x[static_cast<std::size_t>(pos)];
        }
        flat[l * f + o] = acc > 0 ? acc : 0.0;
      }
    Vec h = relu(affine_layer("post.dense0", flat));
    for (std::size_t l = 1; l < cfg_.dense_widths.size(); ++l) {
      Vec y = relu(affine_layer("post.dense" + std::to_string(l), h));
      const std::string skip = "post.skip" + std::to_string(l) + ".W";
      const Vec s = params_.count(skip) ? linear(skip, h) : h;
      for (std::size_t c = 0; c < y.size(); ++c) y[c] += s[c];
      h = y;
    }
    return h;
  }

  ModelConfig cfg_;
  std::map<std::string, Param> params_;
};

}  // namespace finder::testing
