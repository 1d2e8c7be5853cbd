// Copyright (c) 2026, tracesac contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "support.hpp"
#include "tracesac/data.hpp"

namespace tracesac {
namespace {

Dataset from_text(const std::string& text, CsvSchema schema = {}) {
  std::istringstream in(text);
  return read_csv(in, schema);
}

Dataset column_dataset(std::initializer_list<double> values) {
  Dataset d;
  std::int64_t ts = 100;
  for (double v : values) d.bars.push_back({ts++, 1.0, 1.0, {v}});
  return d;
}

TEST(ReadCsv, ParsesWellFormedRows) {
  const Dataset d = from_text(
      "timestamp,bid,ask,f0,f1\n"
      "10,99.5,100.5,0.1,-2\n"
      "11,99.6,100.4,0.2,-1\n"
      "12,99.7,100.3,0.3,0\n");
  ASSERT_EQ(d.size(), 3u);
  EXPECT_EQ(d.feature_count(), 2u);
  EXPECT_EQ(d[1].timestamp, 11);
  EXPECT_DOUBLE_EQ(d[2].ask, 100.3);
  EXPECT_DOUBLE_EQ(d[0].features[1], -2.0);
  EXPECT_DOUBLE_EQ(d[1].mid(), 100.0);
}

TEST(ReadCsv, BidAboveAskNamesTheLine) {
  try {
    from_text("timestamp,bid,ask\n1,99,100\n2,101,100\n");
    FAIL() << "expected an invariant error";
  } catch (const InvariantError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(ReadCsv, RejectsGapsAndDisorder) {
  EXPECT_THROW(from_text("timestamp,bid,ask\n1,99,100\n3,99,100\n"), OrderingError);
  EXPECT_THROW(from_text("timestamp,bid,ask\n2,99,100\n1,99,100\n"), OrderingError);
  EXPECT_THROW(from_text("timestamp,bid,ask\n2,99,100\n2,99,100\n"), OrderingError);
}

TEST(ReadCsv, MalformedValuesReportLine) {
  try {
    from_text("timestamp,bid,ask,f0\n1,99,100,0\n2,99,abc,0\n");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  EXPECT_THROW(from_text("timestamp,bid,ask,f0\n1,99,100\n"), ParseError);
  EXPECT_THROW(from_text("timestamp,bid,ask,f0\n1,99,100,nan\n"), ParseError);
  EXPECT_THROW(from_text("timestamp,bid,ask\n1,0,100\n"), InvariantError);
}

TEST(ReadCsv, EnforcesSchemaFeatureCount) {
  EXPECT_THROW(from_text("timestamp,bid,ask,f0\n1,99,100,0\n", CsvSchema{2}), ParseError);
  EXPECT_NO_THROW(from_text("timestamp,bid,ask,f0\n1,99,100,0\n", CsvSchema{1}));
}

TEST(ReadCsv, RoundTripsThroughWriteCsv) {
  const Dataset d = synthesize_market(MarketKind::random_walk, 50, SynthParams{}, 3);
  std::ostringstream out;
  write_csv(out, d);
  const Dataset back = from_text(out.str());
  EXPECT_EQ(back, d);
}

TEST(ReadCsv, FullSizeFile) {
  testing::TempDir dir("data");
  const Dataset d = synthesize_market(MarketKind::sinusoid, 28800, SynthParams{}, 0);
  write_csv((dir / "m.csv").string(), d);
  EXPECT_EQ(ingest_csv((dir / "m.csv").string()).size(), 28800u);
  EXPECT_THROW(ingest_csv((dir / "missing.csv").string()), Error);
}

TEST(Standardize, KnownColumn) {
  const Dataset z = standardize(column_dataset({1, 2, 3}), {0, 3});
  EXPECT_NEAR(z[0].features[0], -1.224744871391589, 1e-12);
  EXPECT_NEAR(z[1].features[0], 0.0, 1e-15);
  EXPECT_NEAR(z[2].features[0], 1.224744871391589, 1e-12);
  ASSERT_TRUE(z.feature_stats);
  EXPECT_DOUBLE_EQ((*z.feature_stats)[0].mean, 2.0);
}

TEST(Standardize, ConstantColumnMapsToZero) {
  const Dataset z = standardize(column_dataset({5, 5, 5}), {0, 3});
  for (const auto& bar : z.bars) EXPECT_EQ(bar.features[0], 0.0);
}

TEST(Standardize, UsesOnlyTheFitRange) {
  const Dataset z = standardize(column_dataset({1, 3, 100}), {0, 2});
  EXPECT_DOUBLE_EQ(z[0].features[0], -1.0);
  EXPECT_DOUBLE_EQ(z[1].features[0], 1.0);
  EXPECT_DOUBLE_EQ(z[2].features[0], 98.0);
  EXPECT_THROW(standardize(column_dataset({1, 2}), {1, 1}), Error);
  EXPECT_THROW(standardize(column_dataset({1, 2}), {0, 3}), Error);
}

TEST(Standardize, PropertyFitRangeHasZeroMeanUnitStdAndIsIdempotent) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 3 + rng.index(60);
    Dataset d;
    for (std::size_t i = 0; i < n; ++i) {
      d.bars.push_back({static_cast<std::int64_t>(i), 1.0, 1.0,
                        {rng.uniform(-50, 50), 1e3 * rng.normal(), rng.uniform(0, 1e-3)}});
    }
    const std::size_t b = rng.index(n - 2);
    const IndexRange fit{b, b + 2 + rng.index(n - b - 1)};
    const Dataset z = standardize(d, fit);
    const Dataset zz = standardize(z, fit);
    for (std::size_t f = 0; f < 3; ++f) {
      double sum = 0.0, sq = 0.0;
      for (std::size_t i = fit.begin; i < fit.end; ++i) sum += z[i].features[f];
      const double mean = sum / static_cast<double>(fit.size());
      for (std::size_t i = fit.begin; i < fit.end; ++i) sq += (z[i].features[f] - mean) * (z[i].features[f] - mean);
      EXPECT_NEAR(mean, 0.0, 1e-9);
      EXPECT_NEAR(std::sqrt(sq / static_cast<double>(fit.size())), 1.0, 1e-9);
      for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(zz[i].features[f], z[i].features[f], 1e-9);
    }
  }
}

TEST(SeparateEnvironments, TwentyDayLayout) {
  const auto splits = separate_environments(28800, SeparationConfig{});
  ASSERT_EQ(splits.size(), 4u);
  for (std::size_t e = 0; e < 4; ++e) {
    EXPECT_EQ(splits[e].env_id, e);
    EXPECT_EQ(splits[e].train.size(), 4320u);
    EXPECT_EQ(splits[e].validation.size(), 1440u);
    EXPECT_EQ(splits[e].test.size(), 1440u);
    EXPECT_EQ(splits[e].train.begin, e * 7200);
  }
}

TEST(SeparateEnvironments, LengthMismatch) {
  EXPECT_THROW(separate_environments(19 * 1440, SeparationConfig{}), LengthMismatchError);
  EXPECT_THROW(separate_environments(100, SeparationConfig{1, 5, 4, 20}), Error);
}

TEST(SeparateEnvironments, PropertyRangesPartitionTheDataset) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    SeparationConfig cfg;
    cfg.n_envs = 1 + rng.index(6);
    cfg.days_per_env = 3 + rng.index(5);
    cfg.train_days = 1 + rng.index(cfg.days_per_env - 2);
    cfg.minutes_per_day = 1 + rng.index(50);
    const std::size_t len = cfg.n_envs * cfg.days_per_env * cfg.minutes_per_day;
    std::vector<int> hits(len, 0);
    for (const auto& s : separate_environments(len, cfg)) {
      for (const IndexRange& r : {s.train, s.validation, s.test}) {
        EXPECT_FALSE(r.empty());
        for (std::size_t i = r.begin; i < r.end; ++i) ++hits[i];
      }
    }
    for (int h : hits) ASSERT_EQ(h, 1);
  }
}

TEST(Synthesize, FlatMarketIsConstant) {
  const Dataset d = synthesize_market(MarketKind::flat, 30, SynthParams{}, 0);
  for (const auto& bar : d.bars) {
    EXPECT_EQ(bar.bid, 100.0);
    EXPECT_EQ(bar.ask, 100.0);
    for (double f : bar.features) EXPECT_EQ(f, 0.0);
  }
}

TEST(Synthesize, DeterministicForSeed) {
  SynthParams p;
  p.half_spread = 0.01;
  for (MarketKind kind : {MarketKind::random_walk, MarketKind::sinusoid}) {
    std::ostringstream a, b;
    write_csv(a, synthesize_market(kind, 500, p, 42));
    write_csv(b, synthesize_market(kind, 500, p, 42));
    EXPECT_EQ(a.str(), b.str());
  }
  std::ostringstream c, d;
  write_csv(c, synthesize_market(MarketKind::random_walk, 500, p, 42));
  write_csv(d, synthesize_market(MarketKind::random_walk, 500, p, 43));
  EXPECT_NE(c.str(), d.str());
}

TEST(Synthesize, SinusoidRangeIsTwiceAmplitude) {
  SynthParams p;
  p.amplitude = 1.5;
  p.period = 120;
  const Dataset d = synthesize_market(MarketKind::sinusoid, 1200, p, 0);
  double lo = 1e300, hi = -1e300;
  for (const auto& bar : d.bars) {
    lo = std::min(lo, bar.mid());
    hi = std::max(hi, bar.mid());
  }
  // Grid of 120 points per period includes the peak and trough exactly.
  EXPECT_NEAR(hi - lo, 3.0, 1e-9);
  EXPECT_EQ(d.feature_count(), kSynthFeatureCount);
  EXPECT_NO_THROW(validate_dataset(d));
}

TEST(Synthesize, RejectsBadParameters) {
  SynthParams p;
  p.base = -1;
  EXPECT_THROW(synthesize_market(MarketKind::flat, 10, p, 0), InvariantError);
  p = {};
  p.amplitude = 200;
  EXPECT_THROW(synthesize_market(MarketKind::sinusoid, 100, p, 0), InvariantError);
  EXPECT_THROW(synthesize_market(MarketKind::flat, 1, SynthParams{}, 0), Error);
  EXPECT_THROW(market_kind_from_string("noise"), ConfigError);
}

TEST(Synthesize, FeaturesMatchDefinitions) {
  SynthParams p;
  p.volatility = 1e-2;
  const Dataset d = synthesize_market(MarketKind::random_walk, 200, p, 9);
  const std::size_t t = 150;
  EXPECT_NEAR(d[t].features[0], 100.0 * std::log(d[t].mid() / d[t - 1].mid()), 1e-12);
  EXPECT_NEAR(d[t].features[1], 100.0 * std::log(d[t].mid() / d[t - 5].mid()), 1e-12);
  double sum = 0.0;
  for (std::size_t i = t - 14; i <= t; ++i) sum += d[i].mid();
  EXPECT_NEAR(d[t].features[3], 100.0 * (d[t].mid() / (sum / 15.0) - 1.0), 1e-9);
}

}  // namespace
}  // namespace tracesac
