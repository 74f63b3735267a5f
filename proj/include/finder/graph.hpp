#pragma once

// Formula graphs in both representation domains.
//
// Formula domain: one node per atom of the reduced integer formula, every
// ordered pair of distinct nodes is an edge, edge attributes are predicted by
// the model. Crystal domain: one node per unit-cell site, edges join sites
// (including periodic images) closer than a cutoff, and each edge carries a
// Gaussian expansion of its length.

#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "finder/chem.hpp"
#include "finder/embedding.hpp"

namespace finder {

enum class Domain { kFormula, kCrystal };

inline const char* domain_name(Domain d) { return d == Domain::kFormula ? "formula" : "crystal"; }

inline Domain parse_domain(const std::string& s) {
  if (s == "formula") return Domain::kFormula;
  if (s == "crystal") return Domain::kCrystal;
  throw std::invalid_argument("unknown domain '" + s + "' (expected formula or crystal)");
}

inline constexpr std::size_t kGaussianCount = 20;
inline constexpr double kGaussianMax = 5.0;
inline constexpr double kGaussianWidth = 0.5;
inline constexpr double kDefaultCutoff = 4.0;

struct Edge {
  std::size_t src;
  std::size_t dst;
};

struct FormulaGraph {
  std::size_t num_nodes = 0;
  std::size_t feature_dim = 0;
  std::vector<double> node_features;  // num_nodes x feature_dim, row-major
  std::vector<std::string> node_elements;
  std::vector<Edge> edges;
  std::vector<double> edge_features;  // edges.size() x 20 in the crystal domain, empty otherwise
  std::vector<double> edge_lengths;   // crystal domain only
  Domain domain = Domain::kFormula;
  bool isolated = false;  // crystal graph with no edges

  bool has_edge_features() const { return !edge_features.empty(); }
};

// Row i is the i-th lattice vector in Angstrom.
using Lattice = std::array<std::array<double, 3>, 3>;

struct Site {
  std::string element;
  std::array<double, 3> frac;
};

struct CrystalStructure {
  Lattice lattice{};
  std::vector<Site> sites;
};

struct Neighbor {
  std::size_t i;
  std::size_t j;
  double distance;
  std::array<int, 3> image;
};

namespace detail {

inline double det3(const Lattice& m) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

inline std::array<double, 3> cross(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

inline double norm(const std::array<double, 3>& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }

inline double wrap_unit(double x) {
  double w = x - std::floor(x);
  return w >= 1.0 ? 0.0 : w;
}

inline void load_node_features(FormulaGraph& g, const ElementEmbeddingTable& table) {
  g.feature_dim = table.dim;
  g.node_features.clear();
  g.node_features.reserve(g.num_nodes * table.dim);
  for (const auto& sym : g.node_elements) {
    const auto& v = embed(sym, table);
    g.node_features.insert(g.node_features.end(), v.begin(), v.end());
  }
}

}  // namespace detail

inline void validate(CrystalStructure& s) {
  if (s.sites.empty()) throw std::invalid_argument("crystal structure has no sites");
  if (std::abs(detail::det3(s.lattice)) < 1e-8) throw std::invalid_argument("crystal structure: singular lattice");
  for (auto& site : s.sites) {
    if (!atomic_number(site.element)) throw std::invalid_argument("crystal structure: unknown element '" + site.element + "'");
    for (auto& f : site.frac) f = detail::wrap_unit(f);
  }
}

// Text format:
//   lattice: a11 a12 a13 ; a21 a22 a23 ; a31 a32 a33
//   site: <symbol> fx fy fz
inline CrystalStructure parse_structure(std::istream& in) {
  CrystalStructure s;
  bool have_lattice = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("structure line " + std::to_string(line_no) + ": missing ':'");
    std::string key = line.substr(first, colon - first);
    while (!key.empty() && std::isspace(static_cast<unsigned char>(key.back()))) key.pop_back();
    std::string rest = line.substr(colon + 1);
    if (key == "lattice") {
      for (auto& ch : rest)
        if (ch == ';') ch = ' ';
      std::istringstream ls(rest);
      for (auto& row : s.lattice)
        for (auto& x : row)
          if (!(ls >> x)) throw std::invalid_argument("structure line " + std::to_string(line_no) + ": lattice needs 9 numbers");
      have_lattice = true;
    } else if (key == "site") {
      std::istringstream ls(rest);
      Site site;
      if (!(ls >> site.element >> site.frac[0] >> site.frac[1] >> site.frac[2]))
        throw std::invalid_argument("structure line " + std::to_string(line_no) + ": expected 'site: <symbol> fx fy fz'");
      s.sites.push_back(site);
    } else {
      throw std::invalid_argument("structure line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  if (!have_lattice) throw std::invalid_argument("structure file has no lattice line");
  validate(s);
  return s;
}

inline CrystalStructure load_structure(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open structure file " + path);
  return parse_structure(in);
}

inline std::string format_structure(const CrystalStructure& s) {
  std::ostringstream os;
  os.precision(17);
  os << "lattice:";
  for (int r = 0; r < 3; ++r) os << (r ? " ;" : "") << ' ' << s.lattice[r][0] << ' ' << s.lattice[r][1] << ' ' << s.lattice[r][2];
  os << '\n';
  for (const auto& site : s.sites) os << "site: " << site.element << ' ' << site.frac[0] << ' ' << site.frac[1] << ' ' << site.frac[2] << '\n';
  return os.str();
}

// All (i, j, image) with 0 < |r_j + image.L - r_i| < cutoff. Periodic images of
// the same pair are separate entries.
inline std::vector<Neighbor> neighbor_list(const CrystalStructure& s, double cutoff = kDefaultCutoff) {
  if (std::abs(detail::det3(s.lattice)) < 1e-8) throw std::invalid_argument("neighbor_list: singular lattice");
  if (!(cutoff > 0)) throw std::invalid_argument("neighbor_list: cutoff must be positive");
  const auto& L = s.lattice;
  // Plane spacing along lattice vector k is V / |a_l x a_m|.
  const double volume = std::abs(detail::det3(L));
  std::array<int, 3> reach{};
  for (int k = 0; k < 3; ++k) {
    const double spacing = volume / detail::norm(detail::cross(L[(k + 1) % 3], L[(k + 2) % 3]));
    reach[k] = static_cast<int>(std::ceil(cutoff / spacing)) + 1;
  }
  std::vector<std::array<double, 3>> frac;
  for (const auto& site : s.sites)
    frac.push_back({detail::wrap_unit(site.frac[0]), detail::wrap_unit(site.frac[1]), detail::wrap_unit(site.frac[2])});
  std::vector<Neighbor> out;
  const double cut2 = cutoff * cutoff;
  for (std::size_t i = 0; i < frac.size(); ++i)
    for (std::size_t j = 0; j < frac.size(); ++j)
      for (int a = -reach[0]; a <= reach[0]; ++a)
        for (int b = -reach[1]; b <= reach[1]; ++b)
          for (int c = -reach[2]; c <= reach[2]; ++c) {
            const double df[3] = {frac[j][0] + a - frac[i][0], frac[j][1] + b - frac[i][1], frac[j][2] + c - frac[i][2]};
            double cart[3];
            for (int x = 0; x < 3; ++x) cart[x] = df[0] * L[0][x] + df[1] * L[1][x] + df[2] * L[2][x];
            const double d2 = cart[0] * cart[0] + cart[1] * cart[1] + cart[2] * cart[2];
            if (d2 < cut2 && d2 > 1e-16) out.push_back({i, j, std::sqrt(d2), {a, b, c}});
          }
  return out;
}

// exp(-(d - r_k)^2 / sigma^2) at 20 centres r_k evenly spaced on [0, 5], sigma = 0.5.
inline std::array<double, kGaussianCount> gaussian_expand(double d) {
  if (!(d >= 0)) throw std::invalid_argument("gaussian_expand: distance must be non-negative");
  std::array<double, kGaussianCount> g{};
  for (std::size_t k = 0; k < kGaussianCount; ++k) {
    const double centre = kGaussianMax * static_cast<double>(k) / static_cast<double>(kGaussianCount - 1);
    const double z = (d - centre) / kGaussianWidth;
    g[k] = std::exp(-z * z);
  }
  return g;
}

// Nodes ordered by element symbol, each repeated by its count; all ordered pairs are edges.
inline FormulaGraph build_formula_graph(const IntegerFormula& f, const ElementEmbeddingTable& table,
                                        int node_cap = kDefaultNodeCap) {
  if (f.total_atoms < 1) throw std::invalid_argument("build_formula_graph: formula has no atoms");
  if (f.total_atoms > node_cap)
    throw std::invalid_argument("build_formula_graph: " + std::to_string(f.total_atoms) + " atoms exceed node cap " +
                                std::to_string(node_cap));
  FormulaGraph g;
  g.domain = Domain::kFormula;
  for (const auto& [sym, n] : f.counts)
    for (int k = 0; k < n; ++k) g.node_elements.push_back(sym);
  g.num_nodes = g.node_elements.size();
  detail::load_node_features(g, table);
  for (std::size_t i = 0; i < g.num_nodes; ++i)
    for (std::size_t j = 0; j < g.num_nodes; ++j)
      if (i != j) g.edges.push_back({i, j});
  return g;
}

inline FormulaGraph build_crystal_graph(const CrystalStructure& s, const ElementEmbeddingTable& table,
                                        double cutoff = kDefaultCutoff, int node_cap = kDefaultNodeCap) {
  if (s.sites.size() > static_cast<std::size_t>(node_cap))
    throw std::invalid_argument("build_crystal_graph: " + std::to_string(s.sites.size()) + " sites exceed node cap " +
                                std::to_string(node_cap));
  FormulaGraph g;
  g.domain = Domain::kCrystal;
  for (const auto& site : s.sites) g.node_elements.push_back(site.element);
  g.num_nodes = g.node_elements.size();
  detail::load_node_features(g, table);
  for (const auto& n : neighbor_list(s, cutoff)) {
    if (n.i == n.j) continue;  // images of the site itself are not neighbours
    g.edges.push_back({n.i, n.j});
    g.edge_lengths.push_back(n.distance);
    const auto ge = gaussian_expand(n.distance);
    g.edge_features.insert(g.edge_features.end(), ge.begin(), ge.end());
  }
  g.isolated = g.edges.empty();
  return g;
}

// Relabels nodes: new node k is old node perm[k]. Edge order follows the new labels.
inline FormulaGraph permute_nodes(const FormulaGraph& g, const std::vector<std::size_t>& perm) {
  if (perm.size() != g.num_nodes) throw std::invalid_argument("permute_nodes: permutation size mismatch");
  std::vector<std::size_t> inverse(g.num_nodes);
  for (std::size_t k = 0; k < perm.size(); ++k) inverse[perm[k]] = k;
  FormulaGraph out = g;
  out.node_elements.clear();
  out.node_features.clear();
  for (std::size_t k = 0; k < g.num_nodes; ++k) {
    out.node_elements.push_back(g.node_elements[perm[k]]);
    out.node_features.insert(out.node_features.end(), g.node_features.begin() + perm[k] * g.feature_dim,
                             g.node_features.begin() + (perm[k] + 1) * g.feature_dim);
  }
  for (auto& e : out.edges) e = {inverse[e.src], inverse[e.dst]};
  return out;
}

}  // namespace finder
