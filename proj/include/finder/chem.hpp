#pragma once

// Chemical formula parsing and reduction to integer formulas.

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "finder/elements.hpp"

namespace finder {

class FormulaError : public std::invalid_argument {
 public:
  FormulaError(const std::string& what, std::size_t position)
      : std::invalid_argument(what + " at position " + std::to_string(position)), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

// Element symbol -> positive amount, ordered by symbol.
using Composition = std::map<std::string, double>;

struct IntegerFormula {
  std::map<std::string, int> counts;
  int total_atoms = 0;
};

inline constexpr int kDefaultNodeCap = 64;
inline constexpr int kDefaultMaxDenominator = 12;

namespace detail {

class FormulaParser {
 public:
  explicit FormulaParser(std::string_view text) : text_(text) {}

  Composition parse() {
    skip_space();
    if (pos_ == text_.size()) throw FormulaError("empty formula", pos_);
    Composition c = sequence(0);
    if (pos_ != text_.size()) {
      if (text_[pos_] == ')' || text_[pos_] == ']') throw FormulaError("unbalanced closing bracket", pos_);
      throw FormulaError(std::string("unexpected character '") + text_[pos_] + "'", pos_);
    }
    return c;
  }

 private:
  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  static void merge(Composition& into, const Composition& from, double scale) {
    for (const auto& [sym, amt] : from) into[sym] += amt * scale;
  }

  Composition sequence(int depth) {
    Composition out;
    bool any = false;
    for (;;) {
      skip_space();
      if (pos_ >= text_.size()) break;
      const char ch = text_[pos_];
      if (ch == '(' || ch == '[') {
        const std::size_t open_at = pos_;
        const char close = ch == '(' ? ')' : ']';
        ++pos_;
        Composition inner = sequence(depth + 1);
        skip_space();
        if (pos_ >= text_.size() || text_[pos_] != close) throw FormulaError("unbalanced opening bracket", open_at);
        ++pos_;
        merge(out, inner, multiplier());
        any = true;
      } else if (std::isupper(static_cast<unsigned char>(ch))) {
        const std::size_t at = pos_;
        std::string sym(1, ch);
        ++pos_;
        while (pos_ < text_.size() && std::islower(static_cast<unsigned char>(text_[pos_]))) sym += text_[pos_++];
        if (!atomic_number(sym)) throw FormulaError("unknown element symbol '" + sym + "'", at);
        out[sym] += multiplier();
        any = true;
      } else if (ch == ')' || ch == ']') {
        if (depth == 0) throw FormulaError("unbalanced closing bracket", pos_);
        break;
      } else {
        throw FormulaError(std::string("unexpected character '") + ch + "'", pos_);
      }
    }
    if (!any) throw FormulaError("empty group", pos_);
    return out;
  }

  // Optional decimal subscript; 1 when absent.
  double multiplier() {
    skip_space();
    const std::size_t start = pos_;
    while (pos_ < text_.size() && (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.')) ++pos_;
    if (pos_ == start) {
      if (pos_ < text_.size() && text_[pos_] == '-') throw FormulaError("negative subscript", pos_);
      return 1.0;
    }
    double v = 0.0;
    auto [end, ec] = std::from_chars(text_.data() + start, text_.data() + pos_, v);
    if (ec != std::errc() || end != text_.data() + pos_) throw FormulaError("malformed subscript", start);
    if (!(v > 0.0)) throw FormulaError("subscript must be positive", start);
    return v;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Grammar: element symbols with optional decimal subscripts and arbitrarily
// nested (...) or [...] groups with multipliers. Repeated symbols accumulate.
inline Composition parse_formula(std::string_view text) { return detail::FormulaParser(text).parse(); }

// Shortest round-trip text for a composition; amounts of exactly 1 are omitted.
inline std::string format_formula(const Composition& c) {
  std::string out;
  for (const auto& [sym, amt] : c) {
    out += sym;
    if (amt != 1.0) {
      char buf[64];
      auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), amt);
      out.append(buf, end);
    }
  }
  return out;
}

inline std::string format_formula(const IntegerFormula& f) {
  std::string out;
  for (const auto& [sym, n] : f.counts) {
    out += sym;
    if (n != 1) out += std::to_string(n);
  }
  return out;
}

struct Fraction {
  long long num;
  long long den;
};

// Closest fraction to x with denominator in [1, max_den]; ties go to the smaller denominator.
inline Fraction best_rational(double x, int max_den) {
  Fraction best{static_cast<long long>(std::llround(x)), 1};
  double best_err = std::abs(x - static_cast<double>(best.num));
  for (int d = 2; d <= max_den; ++d) {
    const long long n = std::llround(x * d);
    const double err = std::abs(x - static_cast<double>(n) / d);
    if (err < best_err - 1e-12) {
      best = {n, d};
      best_err = err;
    }
  }
  const long long g = std::gcd(best.num, best.den);
  if (g > 1) best = {best.num / g, best.den / g};
  return best;
}

// Rescales so the smallest amount is 1, approximates every ratio by the best
// rational with denominator <= max_denominator, then clears denominators and
// divides by the common gcd.
inline IntegerFormula to_integer_formula(const Composition& c, int max_denominator = kDefaultMaxDenominator,
                                         int node_cap = kDefaultNodeCap) {
  if (c.empty()) throw std::invalid_argument("to_integer_formula: empty composition");
  if (max_denominator < 1) throw std::invalid_argument("to_integer_formula: max_denominator must be >= 1");
  double smallest = std::numeric_limits<double>::infinity();
  for (const auto& [sym, amt] : c) {
    if (!(amt > 0.0) || !std::isfinite(amt))
      throw std::invalid_argument("to_integer_formula: amount of " + sym + " must be positive and finite");
    smallest = std::min(smallest, amt);
  }
  std::map<std::string, Fraction> fr;
  long long lcm = 1;
  for (const auto& [sym, amt] : c) {
    const Fraction f = best_rational(amt / smallest, max_denominator);
    fr.emplace(sym, f);
    lcm = std::lcm(lcm, f.den);
  }
  long long g = 0;
  std::map<std::string, long long> scaled;
  for (const auto& [sym, f] : fr) {
    const long long n = f.num * (lcm / f.den);
    scaled[sym] = n;
    g = std::gcd(g, n);
  }
  IntegerFormula out;
  long long total = 0;
  for (const auto& [sym, n] : scaled) {
    out.counts[sym] = static_cast<int>(n / g);
    total += n / g;
  }
  if (total > node_cap)
    throw std::invalid_argument("to_integer_formula: " + format_formula(c) + " reduces to " + std::to_string(total) +
                                " atoms, above the node cap of " + std::to_string(node_cap) +
                                "; raise the cap or lower max_denominator");
  out.total_atoms = static_cast<int>(total);
  return out;
}

}  // namespace finder
