#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "tmpdir.hpp"
#include "ugm/classifiers.hpp"
#include "ugm/dataset.hpp"
#include "ugm/io.hpp"

using namespace ugm;
using testing_support::slurp;
using testing_support::spit;
using testing_support::TempDir;

namespace {

void write_floats(const fs::path& p, std::vector<float> v) { write_raw<float>(p, v); }

std::string cube_header(std::size_t h, std::size_t w, std::size_t b, const std::string& data = "c.raw") {
  return "height=" + std::to_string(h) + "\nwidth=" + std::to_string(w) + "\nbands=" + std::to_string(b) +
         "\ndtype=f32\ninterleave=bsq\ndata=" + data + "\n";
}

LabelMap stripes(std::size_t h, std::size_t w, int classes) {
  LabelMap m(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) m(r, c) = static_cast<int>(c % static_cast<std::size_t>(classes)) + 1;
  return m;
}

}  // namespace

TEST(Rng, MatchesTheStandardEngine) {
  Rng r(5489);
  // 10000th output of the default-seeded mt19937_64 is fixed by the standard
  std::uint64_t v = 0;
  for (int i = 0; i < 10000; ++i) v = r.next_u64();
  EXPECT_EQ(v, 9981545732273789042ULL);
}

TEST(Rng, TransformsAreInRange) {
  Rng r(3);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(r.below(7), 7u);
  }
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Cube, DecodesOnePixelTwoBands) {
  TempDir dir;
  spit(dir / "c.hdr", cube_header(1, 1, 2));
  write_floats(dir / "c.raw", {0.5f, 1.5f});
  const HsiCube c = load_cube(dir / "c.hdr");
  ASSERT_EQ(c.bands, 2u);
  EXPECT_EQ(c.at(0, 0, 0), 0.5);
  EXPECT_EQ(c.at(0, 0, 1), 1.5);
}

TEST(Cube, BandSequentialOrder) {
  TempDir dir;
  spit(dir / "c.hdr", cube_header(1, 2, 2));
  write_floats(dir / "c.raw", {1, 2, 3, 4});  // band 0: px0 px1, band 1: px0 px1
  const HsiCube c = load_cube(dir / "c.hdr");
  EXPECT_EQ(c.at(0, 0, 0), 1);
  EXPECT_EQ(c.at(0, 1, 0), 2);
  EXPECT_EQ(c.at(0, 0, 1), 3);
  EXPECT_EQ(c.at(0, 1, 1), 4);
}

TEST(Cube, ShortRawFileIsAFormatError) {
  TempDir dir;
  spit(dir / "c.hdr", cube_header(2, 2, 1));
  write_floats(dir / "c.raw", {1, 2, 3});
  EXPECT_THROW(load_cube(dir / "c.hdr"), FormatError);
}

TEST(Cube, MissingKeysAndBadValuesAreFormatErrors) {
  TempDir dir;
  write_floats(dir / "c.raw", {1});
  spit(dir / "a.hdr", "height=1\nwidth=1\ndtype=f32\ninterleave=bsq\ndata=c.raw\n");
  EXPECT_THROW(load_cube(dir / "a.hdr"), FormatError);
  spit(dir / "b.hdr", "height=1\nwidth=1\nbands=1\ndtype=i16\ninterleave=bsq\ndata=c.raw\n");
  EXPECT_THROW(load_cube(dir / "b.hdr"), FormatError);
  spit(dir / "c.hdr", "height=1\nwidth=1\nbands=1\ndtype=f32\ninterleave=bip\ndata=c.raw\n");
  EXPECT_THROW(load_cube(dir / "c.hdr"), FormatError);
  spit(dir / "d.hdr", "height=one\nwidth=1\nbands=1\ndtype=f32\ninterleave=bsq\ndata=c.raw\n");
  EXPECT_THROW(load_cube(dir / "d.hdr"), FormatError);
  EXPECT_THROW(load_cube(dir / "missing.hdr"), FormatError);
}

TEST(Cube, NonFiniteSampleNamesThePixel) {
  TempDir dir;
  spit(dir / "c.hdr", cube_header(2, 2, 1));
  write_floats(dir / "c.raw", {0, 0, 0, std::nanf("")});
  try {
    load_cube(dir / "c.hdr");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1, col 1"), std::string::npos) << e.what();
  }
}

TEST(Cube, SaveLoadSaveIsByteIdentical) {
  TempDir dir;
  Rng rng(11);
  HsiCube c(3, 5, 4);
  for (auto& v : c.values) v = static_cast<float>(rng.normal(0, 100));
  save_cube(c, dir / "a.hdr");
  const HsiCube back = load_cube(dir / "a.hdr");
  EXPECT_EQ(back.values, c.values);
  save_cube(back, dir / "b.hdr");
  EXPECT_EQ(slurp(dir / "a.raw"), slurp(dir / "b.raw"));
  // headers differ only in the data file name
  std::string ha = slurp(dir / "a.hdr"), hb = slurp(dir / "b.hdr");
  ha.replace(ha.find("a.raw"), 5, "b.raw");
  EXPECT_EQ(ha, hb);
}

TEST(Cube, F64FieldsRoundTripExactly) {
  TempDir dir;
  ProbabilityField p(2, 3, 3);
  Rng rng(1);
  for (std::size_t q = 0; q < p.pixels(); ++q) {
    double s = 0;
    for (std::size_t c = 0; c < 3; ++c) s += p(q, c) = rng.uniform() + 0.01;
    for (std::size_t c = 0; c < 3; ++c) p(q, c) /= s;
  }
  save_proba(p, dir / "p.hdr");
  EXPECT_NE(slurp(dir / "p.hdr").find("kind=proba"), std::string::npos);
  EXPECT_NE(slurp(dir / "p.hdr").find("dtype=f64"), std::string::npos);
  const ProbabilityField back = ingest_proba(dir / "p.hdr");
  EXPECT_EQ(back.values, p.values);
}

TEST(Labels, CsvGridWithOneUnlabeledPixel) {
  TempDir dir;
  spit(dir / "l.csv", "row,col,label\n0,0,1\n0,1,1\n1,0,0\n1,1,2\n");
  const LabelMap m = load_labels(dir / "l.csv");
  EXPECT_EQ(m.height, 2u);
  EXPECT_EQ(m.width, 2u);
  EXPECT_EQ(m.classes(), 2);
  EXPECT_EQ(m.labeled_count(), 3u);
}

TEST(Labels, NegativeLabelIsAFormatError) {
  TempDir dir;
  spit(dir / "l.csv", "0,0,1\n0,1,-1\n");
  EXPECT_THROW(load_labels(dir / "l.csv"), FormatError);
}

TEST(Labels, DimensionMismatchWithTheCube) {
  TempDir dir;
  save_labels_pgm(LabelMap(2, 3, 1), dir / "l.pgm");
  EXPECT_NO_THROW(load_labels(dir / "l.pgm", 2, 3));
  EXPECT_THROW(load_labels(dir / "l.pgm", 3, 2), FormatError);
}

TEST(Labels, AllZeroMapHasNoLabeledPixels) {
  const LabelMap m(4, 4, 0);
  try {
    require_labeled(m);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_STREQ(e.what(), "no labeled pixels");
  }
  EXPECT_THROW(sample_split(m, 1, 1, 1), DataError);
}

TEST(Labels, PgmRoundTripsAre8And16Bit) {
  TempDir dir;
  LabelMap small(3, 4);
  LabelMap big(3, 4);
  for (std::size_t q = 0; q < 12; ++q) {
    small.labels[q] = static_cast<int>(q % 5);
    big.labels[q] = static_cast<int>(q * 1000);
  }
  save_labels(small, dir / "s.pgm");
  save_labels(big, dir / "b.pgm");
  EXPECT_NE(slurp(dir / "s.pgm").find("\n255\n"), std::string::npos);
  EXPECT_NE(slurp(dir / "b.pgm").find("\n65535\n"), std::string::npos);
  EXPECT_EQ(load_labels(dir / "s.pgm").labels, small.labels);
  EXPECT_EQ(load_labels(dir / "b.pgm").labels, big.labels);
  save_labels(load_labels(dir / "s.pgm"), dir / "s2.pgm");
  EXPECT_EQ(slurp(dir / "s.pgm"), slurp(dir / "s2.pgm"));
  save_labels(small, dir / "s.csv");
  EXPECT_EQ(load_labels(dir / "s.csv", 3, 4).labels, small.labels);
}

TEST(Labels, DropSmallClassesRenumbers) {
  // class sizes: 1 -> 5, 2 -> 1, 3 -> 3, 4 -> 2
  LabelMap m(1, 11);
  m.labels = {1, 1, 1, 1, 1, 2, 3, 3, 3, 4, 4};
  const LabelMap d = drop_small_classes(m, 3);
  EXPECT_EQ(d.labels, (std::vector<std::int32_t>{1, 1, 1, 1, 1, 0, 2, 2, 2, 0, 0}));
  EXPECT_EQ(d.classes(), 2);
}

TEST(Split, PerClassCountsMatchTheProtocol) {
  const LabelMap m = stripes(30, 27, 9);  // 90 pixels per class
  const SplitSet s = sample_split(m, 30, 50, 4);
  EXPECT_EQ(s.test.size(), 450u);
  EXPECT_EQ(s.train.size(), 270u);
}

TEST(Split, InvariantsHoldForManySeeds) {
  LabelMap m = stripes(12, 12, 4);
  m(0, 0) = 0;
  m(5, 7) = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const SplitSet s = sample_split(m, 7, 9, seed);
    std::set<std::size_t> seen;
    std::vector<int> ntrain(5, 0), ntest(5, 0);
    for (const auto& x : s.train) {
      EXPECT_TRUE(seen.insert(x.pixel).second);
      EXPECT_EQ(m.labels[x.pixel], x.label);
      ++ntrain[static_cast<std::size_t>(x.label)];
    }
    for (const auto& x : s.test) {
      EXPECT_TRUE(seen.insert(x.pixel).second);
      EXPECT_EQ(m.labels[x.pixel], x.label);
      ++ntest[static_cast<std::size_t>(x.label)];
    }
    for (int c = 1; c <= 4; ++c) {
      EXPECT_EQ(ntrain[static_cast<std::size_t>(c)], 7);
      EXPECT_EQ(ntest[static_cast<std::size_t>(c)], 9);
    }
  }
}

TEST(Split, SameSeedSameSplitDifferentSeedDifferentSplit) {
  const LabelMap m = stripes(20, 20, 4);
  EXPECT_EQ(sample_split(m, 10, 20, 99), sample_split(m, 10, 20, 99));
  EXPECT_NE(sample_split(m, 10, 20, 99).train, sample_split(m, 10, 20, 100).train);
}

TEST(Split, InsufficientPixelsNamesTheClass) {
  LabelMap m(1, 150);
  for (std::size_t q = 0; q < 150; ++q) m.labels[q] = q < 90 ? 1 : 2;  // class 2 has 60
  try {
    sample_split(m, 40, 50, 1);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("class 2"), std::string::npos) << e.what();
  }
}

TEST(Split, FileRoundTrip) {
  TempDir dir;
  const LabelMap m = stripes(9, 13, 3);
  const SplitSet s = sample_split(m, 4, 5, 17);
  save_split(s, m.width, dir / "s.csv");
  EXPECT_EQ(load_split(dir / "s.csv", m.height, m.width), s);
  spit(dir / "bad.csv", "pixel_row,pixel_col,class,role\n0,0,1,validate\n");
  EXPECT_THROW(load_split(dir / "bad.csv", 9, 13), FormatError);
  spit(dir / "out.csv", "pixel_row,pixel_col,class,role\n9,0,1,train\n");
  EXPECT_THROW(load_split(dir / "out.csv", 9, 13), FormatError);
}

TEST(Holdout, ThirtyPercentPerClassIsDisjoint) {
  const LabelMap m = stripes(20, 20, 4);
  const SplitSet s = sample_split(m, 30, 10, 5);
  const auto [fit, val] = holdout_split(s.train, 0.3, 5);
  EXPECT_EQ(val.size(), 4u * 9u);
  EXPECT_EQ(fit.size(), 4u * 21u);
  std::set<std::size_t> a;
  for (const auto& x : fit) a.insert(x.pixel);
  for (const auto& x : val) EXPECT_FALSE(a.count(x.pixel));
}

TEST(Synth, NoiselessPixelsEqualTheirClassMean) {
  SceneSpec spec;
  spec.height = 6;
  spec.width = 8;
  spec.regions = {{1, 2}, {2, 1}};
  spec.means = {{0.25, 1.0, -2.0}, {3.0, 0.0, 0.5}};
  spec.sigma = 0.0;
  const Scene s = synth_scene(spec, 1);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 8; ++c) {
      const int expect = spec.regions[r / 3][c / 4];
      ASSERT_EQ(s.labels(r, c), expect);
      for (std::size_t b = 0; b < 3; ++b) EXPECT_EQ(s.cube.at(r, c, b), spec.means[static_cast<std::size_t>(expect - 1)][b]);
    }
}

TEST(Synth, NoiselessSceneIsSeparableByNearestMean) {
  const SceneSpec spec = random_block_scene(32, 4, 4, 6, 0.0, 3);
  const Scene s = synth_scene(spec, 3);
  const SplitSet split = sample_split(s.labels, 5, 20, 3);
  // nearest training-class mean
  std::vector<std::vector<double>> mean(4, std::vector<double>(6, 0.0));
  for (const auto& x : split.train)
    for (std::size_t b = 0; b < 6; ++b) mean[static_cast<std::size_t>(x.label - 1)][b] += s.cube.spectrum(x.pixel)[b] / 5.0;
  for (const auto& x : split.test) {
    int best = 0;
    double bd = 1e300;
    for (int c = 0; c < 4; ++c) {
      double d = 0;
      for (std::size_t b = 0; b < 6; ++b) d += std::pow(s.cube.spectrum(x.pixel)[b] - mean[static_cast<std::size_t>(c)][b], 2);
      if (d < bd) bd = d, best = c;
    }
    EXPECT_EQ(best + 1, x.label);
  }
}

TEST(Synth, SameSeedSameCube) {
  const SceneSpec spec = random_block_scene(16, 4, 3, 5, 0.3, 9);
  EXPECT_EQ(synth_scene(spec, 2).cube.values, synth_scene(spec, 2).cube.values);
  EXPECT_NE(synth_scene(spec, 2).cube.values, synth_scene(spec, 3).cube.values);
}

TEST(Synth, IdenticalClassMeansGiveChanceAccuracy) {
  SceneSpec spec;
  spec.height = spec.width = 64;
  spec.regions = {{1, 2}, {2, 1}};
  spec.means = {{1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}};
  spec.sigma = 1.0;
  const Scene s = synth_scene(spec, 21);
  const SplitSet split = sample_split(s.labels, 100, 1000, 21);
  const LabelMap pred = argmax_labels(predict_proba(train_lr(s.cube, split, 1.0), s.cube));
  std::size_t ok = 0;
  for (const auto& x : split.test) ok += pred.labels[x.pixel] == x.label;
  EXPECT_NEAR(static_cast<double>(ok) / static_cast<double>(split.test.size()), 0.5, 0.05);
}

TEST(Synth, InvalidSpecsAreRejected) {
  SceneSpec spec;
  spec.height = spec.width = 4;
  spec.regions = {{1, 3}};
  spec.means = {{0.0}, {1.0}};
  EXPECT_THROW(synth_scene(spec, 1), DataError);
  spec.regions = {{1, 2}};
  spec.sigma = -1;
  EXPECT_THROW(synth_scene(spec, 1), DataError);
}

TEST(KeyValues, ParsesCommentsAndRejectsGarbage) {
  std::istringstream ok("# c\n a = 1 \n\nb=x=y\n");
  const KeyValues kv = KeyValues::parse(ok, "t");
  EXPECT_EQ(kv.get("a"), "1");
  EXPECT_EQ(kv.get("b"), "x=y");
  EXPECT_THROW(kv.get("c"), FormatError);
  std::istringstream bad("novalue\n");
  EXPECT_THROW(KeyValues::parse(bad, "t"), FormatError);
}
