#include "gibscore/rng.hpp"
#include "gibscore/tokenizer.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace gibscore;

namespace {

FeatureMatrix column(std::vector<float> v)
{
  const auto n = v.size();
  return FeatureMatrix(n, 1, std::move(v));
}

// Plain-loop Lloyd written without any of the library's helpers. Mirrors the
// documented update rules: assign (lowest index on ties), mean update with
// frame-order sums, empty cluster takes the farthest frame, stop on relative
// improvement below tol.
struct OracleResult
{
  std::vector<double> centroids;
  double inertia = 0.0;
  std::vector<double> history;
};

OracleResult oracle_lloyd(const std::vector<std::vector<double>>& pts,
                          std::vector<std::vector<double>> cent,
                          int max_iter,
                          double tol)
{
  const std::size_t n = pts.size(), k = cent.size(), d = pts[0].size();
  std::vector<std::size_t> lab(n);
  std::vector<double> dist(n);
  auto assign = [&] {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          s += (pts[i][j] - cent[c][j]) * (pts[i][j] - cent[c][j]);
        }
        if (s < best) {
          best = s;
          lab[i] = c;
        }
      }
      dist[i] = best;
      total += best;
    }
    return total;
  };
  OracleResult r;
  double inertia = assign();
  r.history.push_back(inertia);
  for (int it = 0; it < max_iter && inertia > 0.0; ++it) {
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<double> sum(d, 0.0);
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (lab[i] == c) {
          for (std::size_t j = 0; j < d; ++j) {
            sum[j] += pts[i][j];
          }
          ++count;
        }
      }
      if (count > 0) {
        for (std::size_t j = 0; j < d; ++j) {
          cent[c][j] = sum[j] / static_cast<double>(count);
        }
      } else {
        std::size_t far = 0;
        for (std::size_t i = 1; i < n; ++i) {
          if (dist[i] > dist[far]) {
            far = i;
          }
        }
        cent[c] = pts[far];
        dist[far] = 0.0;
      }
    }
    const double prev = inertia;
    inertia = assign();
    r.history.push_back(inertia);
    if ((prev - inertia) / prev < tol) {
      break;
    }
  }
  for (const auto& c : cent) {
    r.centroids.insert(r.centroids.end(), c.begin(), c.end());
  }
  r.inertia = inertia;
  return r;
}

} // namespace

TEST(KMeans, SeparableOneDimensionalFixture)
{
  const std::vector<FeatureMatrix> corpus{ column({ 0.0f, 0.1f }), column({ 10.0f, 10.1f }) };
  for (std::uint64_t seed : { 0u, 1u, 2u, 3u, 17u }) {
    const auto cb = train_codebook(corpus, { 2, 100, 1e-6, seed, 1 });
    double lo = std::min(cb.centroids[0], cb.centroids[1]);
    double hi = std::max(cb.centroids[0], cb.centroids[1]);
    // the frames are f32, so the oracle means are taken over the stored values
    const double m0 = (static_cast<double>(0.0f) + static_cast<double>(0.1f)) / 2;
    const double m1 = (static_cast<double>(10.0f) + static_cast<double>(10.1f)) / 2;
    EXPECT_NEAR(lo, 0.05, 1e-8);
    EXPECT_NEAR(hi, 10.05, 1e-6);
    EXPECT_NEAR(lo, m0, 1e-12);
    EXPECT_NEAR(hi, m1, 1e-12);
    EXPECT_NEAR(cb.inertia, 0.01, 1e-6);
  }
}

TEST(KMeans, SeparableFixtureInDoublePrecision)
{
  FramePool pool;
  pool.dim = 1;
  pool.values = { 0.0, 0.1, 10.0, 10.1 };
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto cb = train_codebook(pool, { 2, 100, 1e-6, seed, 1 });
    const double lo = std::min(cb.centroids[0], cb.centroids[1]);
    const double hi = std::max(cb.centroids[0], cb.centroids[1]);
    EXPECT_NEAR(lo, 0.05, 1e-12);
    EXPECT_NEAR(hi, 10.05, 1e-12);
    EXPECT_NEAR(cb.inertia, 0.01, 1e-12);
  }
}

TEST(KMeans, SingleCentroidIsTheMean)
{
  SplitMix64 rng(5);
  FeatureMatrix m(37, 3);
  for (auto& v : m.values) {
    v = static_cast<float>(rng.normal());
  }
  const std::vector<FeatureMatrix> corpus{ m };
  const auto cb = train_codebook(corpus, { 1, 50, 1e-9, 9, 1 });
  for (std::uint32_t j = 0; j < 3; ++j) {
    double sum = 0.0;
    for (std::size_t t = 0; t < 37; ++t) {
      sum += m.row(t)[j];
    }
    EXPECT_NEAR(cb.centroids[j], sum / 37.0, 1e-12);
  }
}

TEST(KMeans, MatchesPlainLoopOracleExactly)
{
  SplitMix64 rng(2024);
  FeatureMatrix m(200, 2);
  for (auto& v : m.values) {
    v = static_cast<float>(rng.uniform(-5.0, 5.0));
  }
  const std::vector<FeatureMatrix> corpus{ m };
  const KMeansOptions opt{ 3, 100, 1e-6, 42, 1 };
  const auto cb = train_codebook(corpus, opt);

  const auto pool = pool_frames(corpus);
  const auto init = kmeans_plusplus(pool, 3, 42);
  std::vector<std::vector<double>> pts, cent;
  for (std::size_t t = 0; t < 200; ++t) {
    pts.push_back({ m.row(t)[0], m.row(t)[1] });
  }
  for (std::size_t c = 0; c < 3; ++c) {
    cent.push_back({ init[2 * c], init[2 * c + 1] });
  }
  const auto oracle = oracle_lloyd(pts, cent, 100, 1e-6);
  EXPECT_EQ(cb.inertia, oracle.inertia);
  EXPECT_EQ(cb.centroids, oracle.centroids);
  EXPECT_EQ(cb.inertia_history, oracle.history);
}

TEST(KMeans, InertiaNonIncreasingAndDeterministic)
{
  SplitMix64 rng(8);
  std::vector<FeatureMatrix> corpus;
  for (int u = 0; u < 5; ++u) {
    FeatureMatrix m(60, 4);
    for (auto& v : m.values) {
      v = static_cast<float>(rng.normal() + (u % 3) * 3.0);
    }
    corpus.push_back(m);
  }
  const auto a = train_codebook(corpus, { 8, 200, 0.0, 3, 1 });
  const auto b = train_codebook(corpus, { 8, 200, 0.0, 3, 4 });
  ASSERT_GE(a.inertia_history.size(), 2u);
  for (std::size_t i = 1; i < a.inertia_history.size(); ++i) {
    EXPECT_LE(a.inertia_history[i], a.inertia_history[i - 1]);
  }
  EXPECT_EQ(a.centroids, b.centroids);
  EXPECT_EQ(a.inertia, b.inertia);
}

TEST(KMeans, CentroidsDistinctWithEnoughDistinctFrames)
{
  SplitMix64 rng(3);
  FeatureMatrix m(50, 2);
  for (auto& v : m.values) {
    v = static_cast<float>(rng.uniform());
  }
  const std::vector<FeatureMatrix> corpus{ m };
  const auto cb = train_codebook(corpus, { 10, 100, 1e-6, 1, 1 });
  for (std::uint32_t a = 0; a < cb.k; ++a) {
    for (std::uint32_t b = a + 1; b < cb.k; ++b) {
      EXPECT_GT(squared_distance(cb.centroid(a), cb.centroid(b)), 0.0);
    }
  }
}

TEST(KMeans, Errors)
{
  const std::vector<FeatureMatrix> few{ column({ 1.0f, 2.0f }) };
  EXPECT_THROW(train_codebook(few, { 3, 10, 1e-6, 0, 1 }), InsufficientDataError);
  EXPECT_THROW(train_codebook(std::vector<FeatureMatrix>{}, { 1, 10, 1e-6, 0, 1 }), Error);
  const std::vector<FeatureMatrix> mixed{ FeatureMatrix(2, 1), FeatureMatrix(2, 2) };
  EXPECT_THROW(train_codebook(mixed, { 1, 10, 1e-6, 0, 1 }), DimensionError);
}

TEST(Quantize, ExactCentroidAndTieBreak)
{
  Codebook cb;
  cb.k = 10;
  cb.dim = 1;
  for (int i = 0; i < 10; ++i) {
    cb.centroids.push_back(i * 1.5);
  }
  const auto seq = quantize(cb, column({ 10.5f, 0.75f, 100.0f }));
  EXPECT_EQ(seq.tokens, (std::vector<Token>{ 7, 0, 9 }));
  EXPECT_EQ(seq.vocab_size, 10u);
  EXPECT_FALSE(seq.deduplicated);

  Codebook two{ 2, 1, { 0.0, 1.0 }, 0.0, 0, {} };
  EXPECT_EQ(quantize(two, column({ 0.5f })).tokens, std::vector<Token>{ 0 });
  EXPECT_THROW(quantize(two, FeatureMatrix(1, 2)), DimensionError);
}

TEST(Quantize, MatchesBruteForceNearestNeighbour)
{
  SplitMix64 rng(77);
  Codebook cb{ 7, 3, {}, 0.0, 0, {} };
  for (int i = 0; i < 21; ++i) {
    cb.centroids.push_back(rng.normal());
  }
  FeatureMatrix m(100, 3);
  for (auto& v : m.values) {
    v = static_cast<float>(rng.normal());
  }
  const auto seq = quantize(cb, m);
  for (std::size_t t = 0; t < 100; ++t) {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < 7; ++c) {
      double d = 0;
      for (std::size_t j = 0; j < 3; ++j) {
        const double diff = static_cast<double>(m.row(t)[j]) - cb.centroids[c * 3 + j];
        d += diff * diff;
      }
      if (d < bd) {
        bd = d;
        best = c;
      }
    }
    EXPECT_EQ(seq.tokens[t], best);
  }
}

TEST(Deduplicate, CollapsesRunsAndIsIdempotent)
{
  const TokenSequence s{ 5, { 1, 1, 2, 2, 2, 1, 4, 4 }, false };
  const auto d = deduplicate(s);
  EXPECT_EQ(d.tokens, (std::vector<Token>{ 1, 2, 1, 4 }));
  EXPECT_TRUE(d.deduplicated);
  EXPECT_EQ(deduplicate(d), d);
  EXPECT_TRUE(deduplicate(TokenSequence{ 5, {}, false }).tokens.empty());
}

TEST(Codebook, RoundTrip)
{
  gibscore::test::TempDir dir;
  Codebook cb{ 2, 2, { 0.1, 0.2, -3.0, 1e300 }, 0.125, 99, {} };
  write_codebook(cb, dir / "cb.gibc");
  const auto back = read_codebook(dir / "cb.gibc");
  EXPECT_EQ(back.k, 2u);
  EXPECT_EQ(back.dim, 2u);
  EXPECT_EQ(back.centroids, cb.centroids);
  EXPECT_EQ(back.inertia, cb.inertia);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(encode(back), encode(cb));
}
