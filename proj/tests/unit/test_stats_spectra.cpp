#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "finder/spectra.hpp"
#include "finder/stats.hpp"

using namespace finder;

namespace {

// Student t, 4 degrees of freedom: F(t) = 1/2 + (3/4) x (1 - x^2 / 3), x = t / sqrt(4 + t^2).
double two_tailed_p_df4(double t) {
  const double x = std::abs(t) / std::sqrt(4 + t * t);
  return 2 * (1 - (0.5 + 0.75 * x * (1 - x * x / 3)));
}

Spectrum drude_real(double omega_p = 3.0) {
  std::vector<double> v(kGridPoints);
  for (std::size_t k = 0; k < kGridPoints; ++k) {
    const double e = grid_energy(k);
    v[k] = e == 0.0 ? -1e6 : 1 - (omega_p / e) * (omega_p / e);
  }
  return Spectrum(v, SpectrumKind::kReal);
}

Spectrum constant_imag(double value) { return Spectrum(std::vector<double>(kGridPoints, value), SpectrumKind::kImaginary); }

}  // namespace

TEST(TTest, FormationEnergyRow) {
  auto r = t_test(0.0858, 0.0004, 3, 0.0913, 0.0008, 3);
  const double se = std::sqrt((2 * 0.0004 * 0.0004 + 2 * 0.0008 * 0.0008) / 4 * (1.0 / 3 + 1.0 / 3));
  EXPECT_NEAR(r.standard_error, se, 1e-15);
  EXPECT_NEAR(r.t, (0.0858 - 0.0913) / se, 1e-9);
  EXPECT_NEAR(r.t, -10.65, 0.01);
  EXPECT_EQ(r.degrees_of_freedom, 4);
  EXPECT_NEAR(r.p, two_tailed_p_df4(r.t), 1e-12);
  EXPECT_GE(r.p, 0.0002);
  EXPECT_LE(r.p, 0.0008);
}

TEST(TTest, EdgeCases) {
  auto same = t_test(1.0, 0.0, 3, 1.0, 0.0, 3);
  EXPECT_EQ(same.p, 1.0);
  EXPECT_TRUE(same.warning.empty());
  auto apart = t_test(1.0, 0.0, 3, 2.0, 0.0, 3);
  EXPECT_EQ(apart.p, 0.0);
  EXPECT_FALSE(apart.warning.empty());
  EXPECT_THROW(t_test(1, 1, 1, 1, 1, 3), std::invalid_argument);
  EXPECT_THROW(t_test(1, -1, 3, 1, 1, 3), std::invalid_argument);
  EXPECT_NEAR(t_test(0, 1, 3, 0, 1, 3).p, 1.0, 1e-15);
}

TEST(Spectra, GridAndResampling) {
  EXPECT_EQ(grid_energy(0), 0.0);
  EXPECT_DOUBLE_EQ(grid_energy(kGridPoints - 1), 30.0);
  auto s = resample({{1.0, 2.0}, {3.0, 6.0}}, SpectrumKind::kReal);
  EXPECT_EQ(s.values.front(), 2.0);
  EXPECT_EQ(s.values.back(), 6.0);
  for (std::size_t k = 0; k < kGridPoints; ++k) {
    const double e = grid_energy(k);
    if (e > 1.0 && e < 3.0) EXPECT_NEAR(s.values[k], 2.0 + 2.0 * (e - 1.0), 1e-12);
  }
  EXPECT_THROW(resample({{1.0, 2.0}}, SpectrumKind::kReal), std::invalid_argument);
  EXPECT_THROW(resample({{1.0, 2.0}, {1.0, 3.0}}, SpectrumKind::kReal), std::invalid_argument);
  EXPECT_THROW(Spectrum(std::vector<double>(10), SpectrumKind::kReal), std::invalid_argument);
}

TEST(Spectra, DrudeCrossoverAndEnzEdge) {
  auto re = drude_real();
  auto co = find_crossover(re);
  ASSERT_TRUE(co.has_value());
  EXPECT_NEAR(co->energy, 3.0, 0.02);
  EXPECT_TRUE(co->later.empty());
  auto region = enz_region(re);
  ASSERT_EQ(region.size(), 1u);
  EXPECT_NEAR(region[0].lo, std::sqrt(4.5), 0.02);
  EXPECT_EQ(region[0].hi, 30.0);
  EXPECT_THROW(find_crossover(constant_imag(1.0)), std::invalid_argument);
}

TEST(Spectra, CrossoverOutsideWindowIgnored) {
  EXPECT_FALSE(find_crossover(drude_real(20.0)).has_value());
  EXPECT_FALSE(find_crossover(drude_real(0.2)).has_value());
}

TEST(Spectra, LaterCrossingsReported) {
  std::vector<double> v(kGridPoints);
  for (std::size_t k = 0; k < kGridPoints; ++k) v[k] = std::cos(grid_energy(k));  // zeros at pi/2 + n pi
  auto co = find_crossover(Spectrum(v, SpectrumKind::kReal));
  ASSERT_TRUE(co.has_value());
  EXPECT_NEAR(co->energy, M_PI / 2, 1e-4);
  ASSERT_EQ(co->later.size(), 3u);  // 3pi/2, 5pi/2, 7pi/2 are below 12.4
  EXPECT_NEAR(co->later[2], 7 * M_PI / 2, 1e-4);
}

TEST(Screen, BoundaryRejectionsAreExact) {
  auto re = drude_real();
  std::vector<ScreeningInput> in{
      {"Good", re, constant_imag(1.999), 24.999},
      {"LossAtTwo", re, constant_imag(2.0), 10.0},
      {"HullAtTwentyFive", re, constant_imag(0.5), 25.0},
      {"Better", re, constant_imag(0.5), 0.0},
      {"NoHull", re, constant_imag(0.5), std::nullopt},
      {"NoCrossing", drude_real(20.0), constant_imag(0.1), 0.0},
  };
  auto r = screen(in);
  ASSERT_EQ(r.candidates.size(), 2u);
  EXPECT_EQ(r.candidates[0].composition, "Better");
  EXPECT_EQ(r.candidates[1].composition, "Good");
  EXPECT_NEAR(r.candidates[1].eps_im_at_crossover, 1.999, 1e-12);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("NoHull"), std::string::npos);
  EXPECT_TRUE(screen({}).candidates.empty());
}

TEST(Screen, SingleDrudeCandidateReturned) {
  auto r = screen({{"Cu2Ag2O3", drude_real(), constant_imag(0.4), 3.0}});
  ASSERT_EQ(r.candidates.size(), 1u);
  EXPECT_NEAR(r.candidates[0].crossover, 3.0, 0.02);
}

TEST(Cooccurrence, MatchesBruteForcePairs) {
  const std::vector<std::string> comps = {"NaCl", "NaClO", "KCl", "NaO", "Cu2Ag2O3", "AgCl", "CuO", "NaK", "ClO2", "AgNaO"};
  std::map<std::pair<std::string, std::string>, int> expect;
  const std::vector<std::set<std::string>> els = {{"Na", "Cl"},  {"Na", "Cl", "O"}, {"K", "Cl"},  {"Na", "O"},
                                                  {"Cu", "Ag", "O"}, {"Ag", "Cl"}, {"Cu", "O"}, {"Na", "K"},
                                                  {"Cl", "O"},   {"Ag", "Na", "O"}};
  for (const auto& s : els)
    for (const auto& a : s)
      for (const auto& b : s)
        if (a < b) ++expect[{a, b}];
  EXPECT_EQ(cooccurrence(comps, 1), expect);
  auto filtered = cooccurrence(comps, 3);
  for (const auto& [pair, n] : filtered) EXPECT_GE(n, 3);
  ASSERT_EQ(filtered.size(), 1u);
  EXPECT_EQ(filtered.begin()->first, std::make_pair(std::string("Na"), std::string("O")));
}
