#pragma once

// Random compositions labelled with their composition-weighted mean Pauling
// electronegativity.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "finder/finder.hpp"

namespace finder::testing {

inline const std::vector<std::string>& synthetic_elements() {
  static const std::vector<std::string> els = {
      "H",  "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Na", "Mg", "Al", "Si", "P",  "S",  "Cl", "K",
      "Ca", "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br",
      "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I",
      "Cs", "Ba", "La", "Ce", "Nd", "Gd", "Hf", "Ta", "W",  "Re", "Os", "Ir", "Pt", "Au", "Hg", "Pb", "Bi"};
  return els;
}

inline double mean_electronegativity(const Composition& c) {
  double num = 0.0, den = 0.0;
  for (const auto& [sym, amt] : c) {
    num += amt * *pauling_electronegativity(sym);
    den += amt;
  }
  return num / den;
}

// 2-4 distinct elements with integer amounts 1-4.
inline std::vector<std::string> random_compositions(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const auto& els = synthetic_elements();
  std::vector<std::string> out;
  while (out.size() < n) {
    const std::size_t k = 2 + rng.next() % 3;
    Composition c;
    while (c.size() < k) c[els[rng.next() % els.size()]] = static_cast<double>(1 + rng.next() % 4);
    out.push_back(format_formula(c));
  }
  return out;
}

inline std::vector<Sample> electronegativity_task(std::size_t n, std::uint64_t seed, const ElementEmbeddingTable& table) {
  std::vector<Sample> samples;
  for (const auto& text : random_compositions(n, seed)) {
    const auto comp = parse_formula(text);
    Sample s;
    s.composition = text;
    s.graph = build_formula_graph(to_integer_formula(comp), table);
    s.target = {mean_electronegativity(comp)};
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace finder::testing
