#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "ugm/features.hpp"
#include "ugm/random.hpp"

using namespace ugm;

namespace {

HsiCube random_cube(std::size_t h, std::size_t w, std::size_t b, std::uint64_t seed) {
  Rng rng(seed);
  HsiCube c(h, w, b);
  for (auto& v : c.values) v = rng.normal(3.0, 2.0);
  return c;
}

Image random_image(std::size_t h, std::size_t w, std::uint64_t seed, int levels = 0) {
  Rng rng(seed);
  Image img(h, w);
  for (auto& v : img.values) v = levels ? static_cast<double>(rng.below(static_cast<std::uint64_t>(levels))) : rng.normal();
  return img;
}

double band_mean(const HsiCube& c, std::size_t b) {
  double s = 0;
  for (std::size_t p = 0; p < c.pixels(); ++p) s += c.values[p * c.bands + b];
  return s / static_cast<double>(c.pixels());
}

double band_cov(const HsiCube& c, std::size_t a, std::size_t b) {
  const double ma = band_mean(c, a), mb = band_mean(c, b);
  double s = 0;
  for (std::size_t p = 0; p < c.pixels(); ++p) s += (c.values[p * c.bands + a] - ma) * (c.values[p * c.bands + b] - mb);
  return s / static_cast<double>(c.pixels());
}

}  // namespace

TEST(Standardize, HandExample) {
  HsiCube c(1, 3, 1);
  c.values = {1, 2, 3};
  const HsiCube z = standardize(c);
  const double k = std::sqrt(1.5);  // 1 / population sd of {1,2,3}
  EXPECT_NEAR(z.values[0], -k, 1e-12);
  EXPECT_NEAR(z.values[1], 0.0, 1e-12);
  EXPECT_NEAR(z.values[2], k, 1e-12);
  EXPECT_NEAR(z.values[2], 1.2247, 1e-4);
}

TEST(Standardize, ConstantBandBecomesZero) {
  HsiCube c(1, 3, 2);
  c.values = {5, 1, 5, 2, 5, 3};
  const HsiCube z = standardize(c);
  for (std::size_t p = 0; p < 3; ++p) EXPECT_EQ(z.values[p * 2], 0.0);
}

TEST(Standardize, ZeroMeanUnitSdAndIdempotent) {
  const HsiCube c = random_cube(7, 9, 5, 1);
  const HsiCube z = standardize(c);
  for (std::size_t b = 0; b < 5; ++b) {
    EXPECT_LT(std::abs(band_mean(z, b)), 1e-9);
    EXPECT_LT(std::abs(std::sqrt(band_cov(z, b, b)) - 1.0), 1e-9);
  }
  const HsiCube zz = standardize(z);
  for (std::size_t k = 0; k < z.values.size(); ++k) EXPECT_NEAR(zz.values[k], z.values[k], 1e-12);
}

TEST(Pca, RankOneDataNeedsOneComponent) {
  HsiCube c(5, 5, 4);
  const double dir[4] = {1.0, -2.0, 0.5, 3.0};
  Rng rng(2);
  for (std::size_t p = 0; p < 25; ++p) {
    const double t = rng.normal();
    for (std::size_t b = 0; b < 4; ++b) c.values[p * 4 + b] = 10.0 + t * dir[b];
  }
  EXPECT_EQ(pca(c, 0.99).bands, 1u);
}

TEST(Pca, FullFractionKeepsEveryComponentOfFullRankData) {
  const HsiCube c = random_cube(6, 6, 5, 3);
  EXPECT_EQ(pca(c, 1.0).bands, 5u);
}

TEST(Pca, FewerPixelsThanBandsDropsNullDirections) {
  const HsiCube c = random_cube(1, 3, 8, 4);  // rank <= 2 after centering
  const PcaResult r = pca_decompose(c, 1.0);
  EXPECT_LE(r.scores.bands, 2u);
}

TEST(Pca, RetainedVarianceIsTheSmallestSufficientPrefix) {
  const HsiCube c = random_cube(10, 10, 6, 5);
  const HsiCube z = standardize(c);
  double total = 0;
  for (std::size_t b = 0; b < 6; ++b) total += band_cov(z, b, b);
  for (double f : {0.3, 0.5, 0.84, 0.9, 0.99}) {
    const FeatureCube s = pca(c, f);
    std::vector<double> var(s.bands);
    double kept = 0;
    for (std::size_t k = 0; k < s.bands; ++k) kept += var[k] = band_cov(s, k, k);
    EXPECT_GE(kept / total, f - 1e-12) << f;
    EXPECT_LT((kept - var.back()) / total, f) << f;
    for (std::size_t k = 1; k < s.bands; ++k) EXPECT_GE(var[k - 1], var[k] - 1e-12);
  }
}

TEST(Pca, ScoresAreUncorrelatedAndSignsAreFixed) {
  HsiCube c = random_cube(12, 12, 5, 6);
  for (std::size_t p = 0; p < c.pixels(); ++p) c.values[p * 5 + 1] += 2.0 * c.values[p * 5];  // correlate
  const PcaResult r = pca_decompose(c, 1.0);
  const FeatureCube& s = r.scores;
  const double scale = band_cov(s, 0, 0);
  for (std::size_t a = 0; a < s.bands; ++a)
    for (std::size_t b = a + 1; b < s.bands; ++b) EXPECT_LT(std::abs(band_cov(s, a, b)) / scale, 1e-8);
  for (Eigen::Index k = 0; k < r.components.cols(); ++k) {
    Eigen::Index imax = 0;
    r.components.col(k).cwiseAbs().maxCoeff(&imax);
    EXPECT_GT(r.components(imax, k), 0.0);
  }
  // flipping every input sign leaves the scores unchanged up to the convention
  HsiCube neg = c;
  for (auto& v : neg.values) v = -v;
  const FeatureCube sn = pca(neg, 1.0);
  for (std::size_t k = 0; k < s.values.size(); ++k) EXPECT_NEAR(std::abs(sn.values[k]), std::abs(s.values[k]), 1e-9);
}

TEST(Pca, RejectsBadFraction) {
  const HsiCube c = random_cube(2, 2, 2, 1);
  EXPECT_THROW(pca(c, 0.0), DataError);
  EXPECT_THROW(pca(c, 1.5), DataError);
}

TEST(Morphology, DiskRows) {
  EXPECT_EQ(disk_half_widths(1.0), (std::vector<int>{0, 1, 0}));
  EXPECT_EQ(disk_half_widths(1.5), (std::vector<int>{1, 1, 1}));
  EXPECT_EQ(disk_half_widths(2.0), (std::vector<int>{0, 1, 2, 1, 0}));
  EXPECT_EQ(disk_half_widths(0.5), (std::vector<int>{0}));
}

TEST(Morphology, MatchesBruteForceDisk) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const Image img = random_image(9 + seed, 13 - seed, seed);
    for (double r : {0.5, 1.0, 1.5, 2.0, 3.0, 4.5, 7.0}) {
      EXPECT_EQ(erode(img, r).values, oracle::morph(img.values, img.height, img.width, r, false)) << r;
      EXPECT_EQ(dilate(img, r).values, oracle::morph(img.values, img.height, img.width, r, true)) << r;
    }
  }
}

TEST(Morphology, ConstantImageIsFixed) {
  const Image img(6, 7, 4.25);
  EXPECT_EQ(morph_open(img, 2.0), img);
  EXPECT_EQ(morph_close(img, 2.0), img);
}

TEST(Morphology, OpeningRemovesAnIsolatedPeak) {
  Image img(7, 7, 1.0);
  img(3, 3) = 9.0;
  const Image o = morph_open(img, 1.0);
  EXPECT_EQ(o(3, 3), 1.0);
  EXPECT_EQ(o, Image(7, 7, 1.0));
  Image pit(7, 7, 1.0);
  pit(3, 3) = -9.0;
  EXPECT_EQ(morph_close(pit, 1.0), Image(7, 7, 1.0));
}

TEST(Morphology, OrderingAndIdempotence) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Image f = random_image(11, 10, seed, seed % 2 ? 5 : 0);
    Image g = f;
    Rng rng(seed + 100);
    for (auto& v : g.values) v += rng.uniform();  // g >= f
    for (double r : {1.0, 2.0, 3.0}) {
      const Image o = morph_open(f, r), c = morph_close(f, r);
      const Image og = morph_open(g, r), cg = morph_close(g, r);
      for (std::size_t k = 0; k < f.values.size(); ++k) {
        EXPECT_LE(o.values[k], f.values[k]);
        EXPECT_GE(c.values[k], f.values[k]);
        EXPECT_LE(o.values[k], og.values[k]);
        EXPECT_LE(c.values[k], cg.values[k]);
      }
      EXPECT_EQ(morph_open(o, r), o);
      EXPECT_EQ(morph_close(c, r), c);
    }
  }
}

TEST(Emp, DimensionFormula) {
  const HsiCube c = random_cube(8, 8, 3, 7);
  const FeatureCube f = emp(c, {1.0, 2, 2, 2.0});
  EXPECT_EQ(f.bands, 15u);
  for (std::size_t npc = 1; npc < 6; ++npc)
    for (int k = 0; k < 9; ++k) EXPECT_EQ(emp_dims(npc, k), npc * static_cast<std::size_t>(2 * k + 1));
  for (int k : {0, 1, 3}) {
    const std::size_t npc = pca(c, 0.9).bands;
    EXPECT_EQ(emp(c, {0.9, k, 4, 2.0}).bands, emp_dims(npc, k));
  }
}

TEST(Emp, ZeroLevelsIsThePcaScores) {
  const HsiCube c = random_cube(6, 5, 4, 8);
  EXPECT_EQ(emp(c, {0.94, 0, 2, 2.0}).values, pca(c, 0.94).values);
}

TEST(Emp, ProfileLayoutAndOrdering) {
  const HsiCube c = random_cube(10, 10, 4, 9);
  const EmpParams p{1.0, 3, 2, 2.0};
  const FeatureCube f = emp(c, p);
  const FeatureCube s = pca(c, 1.0);
  const std::size_t k = 3;
  for (std::size_t pc = 0; pc < s.bands; ++pc) {
    const std::size_t base = pc * (2 * k + 1);
    Image img(10, 10);
    img.values = s.band(pc);
    EXPECT_EQ(f.band(base), img.values);
    for (std::size_t j = 0; j < k; ++j) {
      const double r = 0.5 * (2.0 + 2.0 * static_cast<double>(j));
      EXPECT_EQ(f.band(base + 1 + j), morph_open(img, r).values);
      EXPECT_EQ(f.band(base + 1 + k + j), morph_close(img, r).values);
    }
  }
}

TEST(Emp, ConstantImageGivesConstantChannels) {
  // the PCA input is standardized, so a constant cube maps to zero scores
  HsiCube c(5, 6, 3, 2.5);
  const FeatureCube f = emp(c, {0.99, 2, 2, 2.0});
  ASSERT_EQ(f.bands, 5u);
  for (std::size_t b = 0; b < f.bands; ++b) {
    const auto band = f.band(b);
    for (double v : band) EXPECT_EQ(v, band.front());
  }
}

TEST(Emp, RejectsNegativeParameters) {
  const HsiCube c = random_cube(4, 4, 2, 1);
  EXPECT_THROW(emp(c, {0.9, -1, 2, 2.0}), DataError);
  EXPECT_THROW(emp(c, {0.9, 1, 2, 0.0}), DataError);
}
