#pragma once

#include <cstddef>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "finder/elements.hpp"

namespace finder {

class EmbeddingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ElementEmbeddingTable {
  std::string source;  // "pretrained" | "one-hot"
  std::size_t dim = 0;
  std::map<std::string, std::vector<double>> vectors;

  bool contains(const std::string& symbol) const { return vectors.count(symbol) > 0; }
};

// Row z-1 is the z-th basis vector of R^103.
inline ElementEmbeddingTable one_hot_embeddings() {
  ElementEmbeddingTable t;
  t.source = "one-hot";
  t.dim = kMaxAtomicNumber;
  for (int z = 1; z <= kMaxAtomicNumber; ++z) {
    std::vector<double> v(t.dim, 0.0);
    v[static_cast<std::size_t>(z - 1)] = 1.0;
    t.vectors.emplace(std::string(element_symbol(z)), std::move(v));
  }
  return t;
}

// Text table: one row per element, the symbol followed by D decimals.
// Blank lines and lines starting with '#' are skipped.
inline ElementEmbeddingTable parse_embedding_table(std::istream& in) {
  ElementEmbeddingTable t;
  t.source = "pretrained";
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string sym;
    if (!(ls >> sym) || sym.front() == '#') continue;
    if (!atomic_number(sym)) throw EmbeddingError("embedding table line " + std::to_string(line_no) + ": unknown element '" + sym + "'");
    std::vector<double> v;
    double x;
    while (ls >> x) v.push_back(x);
    if (!ls.eof()) throw EmbeddingError("embedding table line " + std::to_string(line_no) + ": malformed value");
    if (v.empty()) throw EmbeddingError("embedding table line " + std::to_string(line_no) + ": no values");
    if (t.dim == 0) t.dim = v.size();
    if (v.size() != t.dim)
      throw EmbeddingError("embedding table line " + std::to_string(line_no) + ": expected " + std::to_string(t.dim) +
                           " values, got " + std::to_string(v.size()));
    if (!t.vectors.emplace(sym, std::move(v)).second)
      throw EmbeddingError("embedding table line " + std::to_string(line_no) + ": duplicate element '" + sym + "'");
  }
  if (t.vectors.empty()) throw EmbeddingError("embedding table is empty");
  return t;
}

inline ElementEmbeddingTable load_embedding_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw EmbeddingError("cannot open embedding table " + path);
  return parse_embedding_table(in);
}

inline const std::vector<double>& embed(const std::string& symbol, const ElementEmbeddingTable& table) {
  auto it = table.vectors.find(symbol);
  if (it == table.vectors.end()) {
    std::string covered;
    for (const auto& [s, v] : table.vectors) covered += (covered.empty() ? "" : " ") + s;
    throw EmbeddingError("no embedding for '" + symbol + "' (" + table.source + " table covers " +
                         std::to_string(table.vectors.size()) + " elements: " + covered + ")");
  }
  return it->second;
}

}  // namespace finder
