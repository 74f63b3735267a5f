#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string_view>

namespace finder {

inline constexpr int kMaxAtomicNumber = 103;

namespace detail {
inline constexpr std::array<std::string_view, kMaxAtomicNumber> kSymbols = {
    "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg", "Al", "Si", "P",  "S",  "Cl", "Ar",
    "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr",
    "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I",  "Xe",
    "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf",
    "Ta", "W",  "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
    "Pa", "U",  "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr"};

inline constexpr double kNoValue = std::numeric_limits<double>::quiet_NaN();

// Pauling scale; NaN where undefined (He, Ne, Ar).
inline constexpr std::array<double, kMaxAtomicNumber> kPauling = {
    2.20, kNoValue, 0.98, 1.57, 2.04, 2.55, 3.04, 3.44, 3.98, kNoValue,  // H..Ne
    0.93, 1.31, 1.61, 1.90, 2.19, 2.58, 3.16, kNoValue,                  // Na..Ar
    0.82, 1.00, 1.36, 1.54, 1.63, 1.66, 1.55, 1.83, 1.88, 1.91, 1.90, 1.65, 1.81, 2.01, 2.18, 2.55, 2.96, 3.00,
    0.82, 0.95, 1.22, 1.33, 1.60, 2.16, 1.90, 2.20, 2.28, 2.20, 1.93, 1.69, 1.78, 1.96, 2.05, 2.10, 2.66, 2.60,
    0.79, 0.89, 1.10, 1.12, 1.13, 1.14, 1.13, 1.17, 1.20, 1.20, 1.10, 1.22, 1.23, 1.24, 1.25, 1.10, 1.27,
    1.30, 1.50, 2.36, 1.90, 2.20, 2.20, 2.28, 2.54, 2.00, 1.62, 2.33, 2.02, 2.00, 2.20, 2.20,
    0.70, 0.90, 1.10, 1.30, 1.50, 1.38, 1.36, 1.28, 1.30, 1.30, 1.30, 1.30, 1.30, 1.30, 1.30, 1.30, 1.30};
}  // namespace detail

// Atomic number of `symbol`, or nullopt when it is not an element with Z <= 103.
inline std::optional<int> atomic_number(std::string_view symbol) {
  for (int z = 0; z < kMaxAtomicNumber; ++z)
    if (detail::kSymbols[z] == symbol) return z + 1;
  return std::nullopt;
}

inline std::string_view element_symbol(int z) { return detail::kSymbols.at(static_cast<std::size_t>(z - 1)); }

inline std::optional<double> pauling_electronegativity(std::string_view symbol) {
  auto z = atomic_number(symbol);
  if (!z) return std::nullopt;
  const double v = detail::kPauling[static_cast<std::size_t>(*z - 1)];
  if (std::isnan(v)) return std::nullopt;
  return v;
}

}  // namespace finder
