#pragma once

// Dielectric spectra on the fixed photon-energy grid and epsilon-near-zero screening.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "finder/chem.hpp"

namespace finder {

inline constexpr std::size_t kGridPoints = 3000;
inline constexpr double kGridMaxEnergy = 30.0;  // eV
inline constexpr double kEnzWindowLow = 0.5;    // eV
inline constexpr double kEnzWindowHigh = 12.4;  // eV
inline constexpr double kMaxLossAtCrossover = 2.0;
inline constexpr double kMaxEnergyAboveHull = 25.0;  // meV/atom

inline double grid_energy(std::size_t k) {
  return kGridMaxEnergy * static_cast<double>(k) / static_cast<double>(kGridPoints - 1);
}

inline double grid_step() { return kGridMaxEnergy / static_cast<double>(kGridPoints - 1); }

enum class SpectrumKind { kReal, kImaginary };

struct Spectrum {
  std::vector<double> values;
  SpectrumKind kind = SpectrumKind::kReal;

  Spectrum() = default;
  Spectrum(std::vector<double> v, SpectrumKind k) : values(std::move(v)), kind(k) {
    if (values.size() != kGridPoints)
      throw std::invalid_argument("spectrum: expected " + std::to_string(kGridPoints) + " points, got " +
                                  std::to_string(values.size()));
  }
};

// Linear interpolation of raw (energy, value) points onto the grid, constant beyond the ends.
inline Spectrum resample(const std::vector<std::pair<double, double>>& points, SpectrumKind kind) {
  if (points.size() < 2) throw std::invalid_argument("resample: need at least two points");
  for (std::size_t i = 1; i < points.size(); ++i)
    if (!(points[i].first > points[i - 1].first)) throw std::invalid_argument("resample: energies must be strictly increasing");
  std::vector<double> out(kGridPoints);
  std::size_t seg = 0;
  for (std::size_t k = 0; k < kGridPoints; ++k) {
    const double e = grid_energy(k);
    if (e <= points.front().first) {
      out[k] = points.front().second;
      continue;
    }
    if (e >= points.back().first) {
      out[k] = points.back().second;
      continue;
    }
    while (points[seg + 1].first < e) ++seg;
    const auto& [e0, v0] = points[seg];
    const auto& [e1, v1] = points[seg + 1];
    out[k] = v0 + (v1 - v0) * (e - e0) / (e1 - e0);
  }
  return Spectrum(std::move(out), kind);
}

// Value of the piecewise-linear spectrum at energy e.
inline double interpolate(const Spectrum& s, double e) {
  if (e <= 0.0) return s.values.front();
  if (e >= kGridMaxEnergy) return s.values.back();
  const double x = e / grid_step();
  const auto k = std::min(static_cast<std::size_t>(x), kGridPoints - 2);
  const double t = x - static_cast<double>(k);
  return s.values[k] + (s.values[k + 1] - s.values[k]) * t;
}

struct Crossover {
  double energy = 0.0;
  std::vector<double> later;  // further zero crossings in the window
};

namespace detail {
inline std::vector<double> zero_crossings(const Spectrum& s, double lo, double hi) {
  std::vector<double> out;
  for (std::size_t k = 0; k < kGridPoints; ++k) {
    const double e = grid_energy(k);
    if (e > hi) break;
    const double v = s.values[k];
    if (v == 0.0) {
      if (e >= lo) out.push_back(e);
      continue;
    }
    if (k + 1 == kGridPoints) break;
    const double w = s.values[k + 1];
    if (w == 0.0 || (v < 0) == (w < 0)) continue;
    const double root = e + (grid_energy(k + 1) - e) * v / (v - w);
    if (root >= lo && root <= hi) out.push_back(root);
  }
  return out;
}
}  // namespace detail

// First energy in [lo, hi] where the real part changes sign, linearly
// interpolated between the bracketing grid points.
inline std::optional<Crossover> find_crossover(const Spectrum& eps_re, double lo = kEnzWindowLow,
                                               double hi = kEnzWindowHigh) {
  if (eps_re.kind != SpectrumKind::kReal) throw std::invalid_argument("find_crossover: expects the real part");
  auto roots = detail::zero_crossings(eps_re, lo, hi);
  if (roots.empty()) return std::nullopt;
  Crossover c;
  c.energy = roots.front();
  c.later.assign(roots.begin() + 1, roots.end());
  return c;
}

struct Interval {
  double lo;
  double hi;
};

// Maximal energy ranges with |eps_re| < 1; endpoints interpolated where |eps_re| meets 1.
inline std::vector<Interval> enz_region(const Spectrum& eps_re) {
  std::vector<Interval> out;
  auto inside = [&](std::size_t k) { return std::abs(eps_re.values[k]) < 1.0; };
  auto edge = [&](std::size_t a, std::size_t b) {
    // |eps| crosses 1 between grid points a and b (one inside, one outside).
    const double va = eps_re.values[a], vb = eps_re.values[b];
    const double level = (std::abs(va) >= 1.0 ? va : vb) > 0 ? 1.0 : -1.0;
    return grid_energy(a) + (grid_energy(b) - grid_energy(a)) * (level - va) / (vb - va);
  };
  std::size_t k = 0;
  while (k < kGridPoints) {
    if (!inside(k)) {
      ++k;
      continue;
    }
    const double lo = k == 0 ? 0.0 : edge(k - 1, k);
    std::size_t j = k;
    while (j + 1 < kGridPoints && inside(j + 1)) ++j;
    const double hi = j + 1 == kGridPoints ? kGridMaxEnergy : edge(j, j + 1);
    out.push_back({lo, hi});
    k = j + 1;
  }
  return out;
}

struct ScreeningInput {
  std::string composition;
  Spectrum eps_re;
  Spectrum eps_im;
  std::optional<double> e_hull_meV;
};

struct EnzCandidate {
  std::string composition;
  double crossover = 0.0;      // eV
  double eps_im_at_crossover = 0.0;
  double e_hull_meV = 0.0;
  std::vector<double> later_crossings;
};

struct ScreeningResult {
  std::vector<EnzCandidate> candidates;  // ascending eps_im_at_crossover
  std::vector<std::string> warnings;
};

// Keeps candidates with a crossover in the window, eps_im(crossover) < 2 and E_hull < 25 meV.
inline ScreeningResult screen(const std::vector<ScreeningInput>& inputs) {
  ScreeningResult r;
  for (const auto& in : inputs) {
    if (in.eps_re.kind != SpectrumKind::kReal || in.eps_im.kind != SpectrumKind::kImaginary)
      throw std::invalid_argument("screen: " + in.composition + " needs a real and an imaginary spectrum");
    if (!in.e_hull_meV) {
      r.warnings.push_back(in.composition + ": missing e_hull_meV, skipped");
      continue;
    }
    auto co = find_crossover(in.eps_re);
    if (!co) continue;
    const double loss = interpolate(in.eps_im, co->energy);
    if (!(loss < kMaxLossAtCrossover) || !(*in.e_hull_meV < kMaxEnergyAboveHull)) continue;
    r.candidates.push_back({in.composition, co->energy, loss, *in.e_hull_meV, co->later});
  }
  std::stable_sort(r.candidates.begin(), r.candidates.end(),
                   [](const EnzCandidate& a, const EnzCandidate& b) { return a.eps_im_at_crossover < b.eps_im_at_crossover; });
  return r;
}

// Unordered element pair -> number of compositions containing both.
using CooccurrenceNetwork = std::map<std::pair<std::string, std::string>, int>;

inline CooccurrenceNetwork cooccurrence(const std::vector<std::string>& compositions, int min_count = 5) {
  CooccurrenceNetwork counts;
  for (const auto& text : compositions) {
    const auto comp = parse_formula(text);
    std::vector<std::string> elements;
    for (const auto& [sym, amt] : comp) elements.push_back(sym);
    for (std::size_t a = 0; a < elements.size(); ++a)
      for (std::size_t b = a + 1; b < elements.size(); ++b) ++counts[{elements[a], elements[b]}];
  }
  std::erase_if(counts, [&](const auto& kv) { return kv.second < min_count; });
  return counts;
}

}  // namespace finder
