#pragma once

// Delimited-text dataset files.
//
// Header row required. Columns: `composition` (formula string), then either
// `target` (scalar) or `target_vector` (3000 semicolon-separated values),
// optional `structure_file` (path, relative to the dataset file) and optional
// `e_hull_meV`.

#include <charconv>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "finder/chem.hpp"
#include "finder/embedding.hpp"
#include "finder/graph.hpp"

namespace finder {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetRow {
  std::size_t line = 0;
  std::string composition;
  std::vector<double> target;
  std::optional<std::string> structure_file;  // resolved path
  std::optional<double> e_hull_meV;
};

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_fields(std::string_view line, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(delim, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_number(const std::string& s, const std::string& what) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || p != end) throw DataError(what + ": '" + s + "' is not a number");
  return v;
}

// Parsed CSV with a header row; blank lines and '#' comments skipped.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;

  std::optional<std::size_t> column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  }
};

inline Table read_table(std::istream& in, char delim = ',') {
  Table t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    auto fields = split_fields(text, delim);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
    t.lines.push_back(line_no);
  }
  if (t.header.empty()) throw DataError("table has no header row");
  return t;
}

inline Table read_table_file(const std::string& path, char delim = ',') {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return read_table(in, delim);
}

inline std::vector<DatasetRow> read_dataset(const std::string& path, bool require_target = true) {
  const Table t = read_table_file(path);
  const auto comp = t.column("composition");
  if (!comp) throw DataError(path + ": missing 'composition' column");
  const auto scalar = t.column("target");
  const auto vector = t.column("target_vector");
  if (scalar && vector) throw DataError(path + ": both 'target' and 'target_vector' columns present");
  if (require_target && !scalar && !vector) throw DataError(path + ": missing 'target' or 'target_vector' column");
  const auto structure = t.column("structure_file");
  const auto hull = t.column("e_hull_meV");
  const auto base = std::filesystem::path(path).parent_path();
  std::vector<DatasetRow> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& f = t.rows[r];
    const std::string where = path + ":" + std::to_string(t.lines[r]);
    DatasetRow row;
    row.line = t.lines[r];
    row.composition = f[*comp];
    if (row.composition.empty()) throw DataError(where + ": empty composition");
    if (scalar) row.target.push_back(parse_number(f[*scalar], where));
    if (vector) {
      for (const auto& v : split_fields(f[*vector], ';')) row.target.push_back(parse_number(v, where));
    }
    if (structure && !f[*structure].empty()) {
      std::filesystem::path p(f[*structure]);
      row.structure_file = (p.is_absolute() ? p : base / p).string();
    }
    if (hull && !f[*hull].empty()) row.e_hull_meV = parse_number(f[*hull], where);
    out.push_back(std::move(row));
  }
  return out;
}

struct GraphOptions {
  Domain domain = Domain::kFormula;
  int max_denominator = kDefaultMaxDenominator;
  int node_cap = kDefaultNodeCap;
  double cutoff = kDefaultCutoff;
};

inline FormulaGraph build_graph(const std::string& composition, const std::optional<std::string>& structure_file,
                                const ElementEmbeddingTable& table, const GraphOptions& opt) {
  if (opt.domain == Domain::kFormula)
    return build_formula_graph(to_integer_formula(parse_formula(composition), opt.max_denominator, opt.node_cap), table,
                               opt.node_cap);
  if (!structure_file) throw DataError(composition + ": crystal domain needs a structure_file");
  return build_crystal_graph(load_structure(*structure_file), table, opt.cutoff, opt.node_cap);
}

}  // namespace finder
