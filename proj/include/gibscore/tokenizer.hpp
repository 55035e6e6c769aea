#pragma once

#include "gibscore/binary_io.hpp"
#include "gibscore/error.hpp"
#include "gibscore/interchange.hpp"
#include "gibscore/parallel.hpp"
#include "gibscore/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

namespace gibscore {

inline constexpr binary::Magic kCodebookMagic = binary::make_magic("GIBC");
inline constexpr std::uint32_t kDefaultCodebookSize = 100;

//! k centroids in `dim` dimensions; centroid i is token i.
struct Codebook
{
  std::uint32_t k = 0;
  std::uint32_t dim = 0;
  std::vector<double> centroids; //!< k x dim, row-major
  double inertia = 0.0;
  std::uint64_t seed = 0;
  //! Inertia after every assignment step of training. Not serialized.
  std::vector<double> inertia_history;

  std::span<const double> centroid(std::size_t i) const
  {
    return { centroids.data() + i * dim, dim };
  }
};

struct KMeansOptions
{
  std::uint32_t k = kDefaultCodebookSize;
  std::uint32_t max_iter = 100;
  double rel_tol = 1e-6;
  std::uint64_t seed = 0;
  unsigned jobs = 1; //!< assignment-step threads; results do not depend on it
};

//! All frames of a corpus, flattened to doubles.
struct FramePool
{
  std::uint32_t dim = 0;
  std::vector<double> values;

  std::size_t size() const noexcept { return dim == 0 ? 0 : values.size() / dim; }
  std::span<const double> frame(std::size_t i) const
  {
    return { values.data() + i * dim, dim };
  }
};

inline FramePool pool_frames(std::span<const FeatureMatrix> corpus)
{
  if (corpus.empty()) {
    throw InsufficientDataError("cannot train a codebook on an empty corpus");
  }
  FramePool pool;
  pool.dim = corpus.front().dim;
  for (const auto& m : corpus) {
    if (m.dim != pool.dim) {
      throw DimensionError("corpus matrices have different dims (" +
                           std::to_string(pool.dim) + " vs " + std::to_string(m.dim) + ")");
    }
    pool.values.insert(pool.values.end(), m.values.begin(), m.values.end());
  }
  return pool;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) noexcept
{
  double d = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double diff = a[j] - b[j];
    d += diff * diff;
  }
  return d;
}

//! Index of the nearest centroid; ties resolve to the lowest index.
template<typename Frame>
std::uint32_t nearest_centroid(const std::vector<double>& centroids,
                               std::uint32_t k,
                               std::uint32_t dim,
                               const Frame& frame,
                               double* distance = nullptr)
{
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::uint32_t c = 0; c < k; ++c) {
    double d = 0.0;
    const double* ctr = centroids.data() + static_cast<std::size_t>(c) * dim;
    for (std::uint32_t j = 0; j < dim; ++j) {
      const double diff = static_cast<double>(frame[j]) - ctr[j];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (distance) {
    *distance = best_d;
  }
  return best;
}

//! k-means++ seeding. The first centre is a uniformly drawn frame; each
//! further centre is drawn with probability proportional to the squared
//! distance to the nearest centre chosen so far (inverse-CDF over frames in
//! corpus order, u = rng.uniform() * total).
inline std::vector<double> kmeans_plusplus(const FramePool& pool,
                                           std::uint32_t k,
                                           std::uint64_t seed)
{
  const std::size_t n = pool.size();
  const std::uint32_t dim = pool.dim;
  SplitMix64 rng(seed);
  std::vector<double> centroids;
  centroids.reserve(static_cast<std::size_t>(k) * dim);

  auto append = [&](std::size_t i) {
    auto f = pool.frame(i);
    centroids.insert(centroids.end(), f.begin(), f.end());
  };

  append(rng.below(n));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) {
    d2[i] = squared_distance(pool.frame(i), { centroids.data(), dim });
  }
  for (std::uint32_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double d : d2) {
      total += d;
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      // every frame coincides with a centre already
      pick = rng.below(n);
    }
    append(pick);
    const std::span<const double> added(centroids.data() + static_cast<std::size_t>(c) * dim, dim);
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(pool.frame(i), added));
    }
  }
  return centroids;
}

//! Lloyd iterations from the given initial centroids.
//!
//! Each iteration assigns every frame to its nearest centroid (recording the
//! inertia of that assignment), then moves each centroid to the mean of its
//! frames, summed in frame order. A centroid that lost all its frames is moved
//! onto the frame currently farthest from its own centroid. Training stops
//! when (previous - current) / previous < rel_tol, when the inertia reaches
//! zero, or after max_iter updates; the returned centroids are always the
//! ones whose inertia is reported.
inline Codebook lloyd(const FramePool& pool,
                      std::vector<double> centroids,
                      const KMeansOptions& opt)
{
  const std::size_t n = pool.size();
  const std::uint32_t dim = pool.dim;
  const std::uint32_t k = opt.k;

  Codebook cb;
  cb.k = k;
  cb.dim = dim;
  cb.seed = opt.seed;

  std::vector<std::uint32_t> assign(n);
  std::vector<double> dist(n);

  auto assignment_step = [&] {
    parallel_for(n, opt.jobs, [&](std::size_t i) {
      assign[i] = nearest_centroid(centroids, k, dim, pool.frame(i), &dist[i]);
    });
    double inertia = 0.0;
    for (double d : dist) {
      inertia += d;
    }
    return inertia;
  };

  double inertia = assignment_step();
  cb.inertia_history.push_back(inertia);

  for (std::uint32_t iter = 0; iter < opt.max_iter && inertia > 0.0; ++iter) {
    std::vector<double> sums(static_cast<std::size_t>(k) * dim, 0.0);
    std::vector<std::uint64_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto f = pool.frame(i);
      double* s = sums.data() + static_cast<std::size_t>(assign[i]) * dim;
      for (std::uint32_t j = 0; j < dim; ++j) {
        s[j] += f[j];
      }
      ++counts[assign[i]];
    }
    for (std::uint32_t c = 0; c < k; ++c) {
      double* ctr = centroids.data() + static_cast<std::size_t>(c) * dim;
      if (counts[c] > 0) {
        for (std::uint32_t j = 0; j < dim; ++j) {
          ctr[j] = sums[static_cast<std::size_t>(c) * dim + j] / static_cast<double>(counts[c]);
        }
        continue;
      }
      // empty cluster: take over the worst-served frame
      std::size_t far = 0;
      for (std::size_t i = 1; i < n; ++i) {
        if (dist[i] > dist[far]) {
          far = i;
        }
      }
      auto f = pool.frame(far);
      std::copy(f.begin(), f.end(), ctr);
      dist[far] = 0.0;
    }

    const double previous = inertia;
    inertia = assignment_step();
    cb.inertia_history.push_back(inertia);
    if (previous <= 0.0 || (previous - inertia) / previous < opt.rel_tol) {
      break;
    }
  }

  cb.centroids = std::move(centroids);
  cb.inertia = inertia;
  return cb;
}

//! k-means++ then Lloyd over frames already held in double precision.
inline Codebook train_codebook(const FramePool& pool, const KMeansOptions& opt)
{
  if (opt.k == 0) {
    throw UsageError("k must be positive");
  }
  if (pool.size() == 0) {
    throw InsufficientDataError("no frames to cluster");
  }
  if (pool.size() < opt.k) {
    throw InsufficientDataError("corpus has " + std::to_string(pool.size()) +
                                " frames, fewer than k = " + std::to_string(opt.k));
  }
  return lloyd(pool, kmeans_plusplus(pool, opt.k, opt.seed), opt);
}

inline Codebook train_codebook(std::span<const FeatureMatrix> corpus, const KMeansOptions& opt)
{
  if (opt.k == 0) {
    throw UsageError("k must be positive");
  }
  return train_codebook(pool_frames(corpus), opt);
}

//! Nearest-centroid token per frame; never deduplicated.
inline TokenSequence quantize(const Codebook& codebook, const FeatureMatrix& features)
{
  if (features.dim != codebook.dim) {
    throw DimensionError("feature dim " + std::to_string(features.dim) +
                         " does not match codebook dim " + std::to_string(codebook.dim));
  }
  TokenSequence out;
  out.vocab_size = codebook.k;
  out.tokens.resize(static_cast<std::size_t>(features.frame_count));
  for (std::size_t t = 0; t < out.tokens.size(); ++t) {
    out.tokens[t] = nearest_centroid(codebook.centroids, codebook.k, codebook.dim, features.row(t));
  }
  return out;
}

//! Collapses runs of equal adjacent tokens. Idempotent.
inline TokenSequence deduplicate(const TokenSequence& sequence)
{
  TokenSequence out;
  out.vocab_size = sequence.vocab_size;
  out.deduplicated = true;
  out.tokens.reserve(sequence.tokens.size());
  for (Token t : sequence.tokens) {
    if (out.tokens.empty() || out.tokens.back() != t) {
      out.tokens.push_back(t);
    }
  }
  return out;
}

// GIBC: "GIBC" | version u32 | k u32 | dim u32 | seed u64 | inertia f64 |
//       k * dim f64 centroids

inline std::vector<char> encode(const Codebook& cb)
{
  if (cb.centroids.size() != static_cast<std::size_t>(cb.k) * cb.dim) {
    throw ValidationError("codebook centroid array does not match k x dim");
  }
  binary::Writer w;
  w.put_magic(kCodebookMagic);
  w.put(kFormatVersion);
  w.put(cb.k);
  w.put(cb.dim);
  w.put(cb.seed);
  w.put(cb.inertia);
  w.put_array(std::span<const double>(cb.centroids));
  return w.bytes();
}

inline Codebook decode_codebook(binary::Reader in)
{
  in.expect_magic(kCodebookMagic);
  in.expect_version(kFormatVersion);
  Codebook cb;
  cb.k = in.get<std::uint32_t>();
  cb.dim = in.get<std::uint32_t>();
  cb.seed = in.get<std::uint64_t>();
  cb.inertia = in.get<double>();
  if (cb.k == 0 || cb.dim == 0) {
    throw ValidationError(in.source() + ": codebook k and dim must be positive");
  }
  cb.centroids = in.get_array<double>(static_cast<std::uint64_t>(cb.k) * cb.dim);
  in.expect_end();
  for (double v : cb.centroids) {
    if (!std::isfinite(v)) {
      throw ValidationError(in.source() + ": non-finite centroid value");
    }
  }
  return cb;
}

inline void write_codebook(const Codebook& cb, const std::filesystem::path& destination)
{
  binary::save_bytes(encode(cb), destination);
}

inline Codebook read_codebook(const std::filesystem::path& source)
{
  return decode_codebook(binary::Reader::open(source));
}

} // namespace gibscore
