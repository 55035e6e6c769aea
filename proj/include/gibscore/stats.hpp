#pragma once

#include "gibscore/error.hpp"
#include "gibscore/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gibscore {

//! Equal-length real vectors with optional ids, e.g. per-utterance scores
//! (xs) against per-utterance PER (ys).
struct PairedSamples
{
  std::vector<std::string> ids;
  std::vector<double> xs;
  std::vector<double> ys;

  std::size_t size() const noexcept { return xs.size(); }
};

inline void validate(const PairedSamples& s)
{
  if (s.xs.size() != s.ys.size()) {
    throw ValidationError("paired samples have different lengths");
  }
  if (!s.ids.empty() && s.ids.size() != s.xs.size()) {
    throw ValidationError("paired samples: id count does not match value count");
  }
  if (s.xs.size() < 3) {
    throw UndefinedError("correlation needs at least 3 pairs, got " + std::to_string(s.xs.size()));
  }
  for (std::size_t i = 0; i < s.xs.size(); ++i) {
    if (std::isnan(s.xs[i]) || std::isnan(s.ys[i])) {
      throw ValidationError("paired samples contain NaN at index " + std::to_string(i));
    }
  }
}

namespace detail {

inline double pearson_unchecked(std::span<const double> x, std::span<const double> y)
{
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw UndefinedError("correlation undefined: a variable has zero variance");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

} // namespace detail

//! 1-based ranks; tied values share the mean of the positions they occupy.
inline std::vector<double> average_ranks(std::span<const double> values)
{
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) {
      ++j;
    }
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      ranks[order[k]] = r;
    }
    i = j + 1;
  }
  return ranks;
}

//! Pearson product-moment correlation.
inline double pearson(const PairedSamples& s)
{
  validate(s);
  return detail::pearson_unchecked(s.xs, s.ys);
}

//! Spearman rank correlation: Pearson of average ranks.
inline double spearman(const PairedSamples& s)
{
  validate(s);
  const auto rx = average_ranks(s.xs);
  const auto ry = average_ranks(s.ys);
  return detail::pearson_unchecked(rx, ry);
}

// ---------------------------------------------------------------------------
// distributions

//! Equal-width histogram normalized so that the bar areas sum to one.
struct Histogram
{
  std::vector<double> edges; //!< bin_count + 1 ascending boundaries
  std::vector<std::uint64_t> counts;
  std::vector<double> mass;    //!< count / n
  std::vector<double> density; //!< mass / bin width

  std::size_t bin_count() const noexcept { return counts.size(); }
};

//! Bins cover [min, max]; a value equal to max falls in the last bin. When all
//! values coincide the result is a single unit-width bin centred on them.
inline Histogram histogram(std::span<const double> values, std::size_t bin_count)
{
  if (values.empty()) {
    throw UndefinedError("histogram of an empty sample");
  }
  if (bin_count == 0) {
    throw UsageError("histogram needs at least one bin");
  }
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  const double n = static_cast<double>(values.size());

  Histogram h;
  if (lo == hi) {
    h.edges = { lo - 0.5, lo + 0.5 };
    h.counts = { values.size() };
    h.mass = { 1.0 };
    h.density = { 1.0 };
    return h;
  }

  const double width = (hi - lo) / static_cast<double>(bin_count);
  h.edges.resize(bin_count + 1);
  for (std::size_t b = 0; b <= bin_count; ++b) {
    h.edges[b] = lo + width * static_cast<double>(b);
  }
  h.edges.back() = hi;
  h.counts.assign(bin_count, 0);
  for (double v : values) {
    auto b = static_cast<std::size_t>((v - lo) / width);
    ++h.counts[std::min(b, bin_count - 1)];
  }
  for (std::size_t b = 0; b < bin_count; ++b) {
    h.mass.push_back(static_cast<double>(h.counts[b]) / n);
    h.density.push_back(h.mass.back() / (h.edges[b + 1] - h.edges[b]));
  }
  return h;
}

//! Sample quantile with linear interpolation between order statistics
//! (Hyndman & Fan type 7).
inline double quantile(std::vector<double> values, double q)
{
  if (values.empty()) {
    throw UndefinedError("quantile of an empty sample");
  }
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto below = static_cast<std::size_t>(std::floor(pos));
  const auto above = std::min(below + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(below);
  return values[below] + frac * (values[above] - values[below]);
}

inline double sample_stddev(std::span<const double> values)
{
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) {
    mean += v;
  }
  mean /= n;
  double ss = 0.0;
  for (double v : values) {
    ss += (v - mean) * (v - mean);
  }
  return std::sqrt(ss / (n - 1.0));
}

//! Silverman's rule of thumb, 0.9 min(sd, IQR / 1.34) n^(-1/5). If the IQR is
//! zero while the standard deviation is not, the standard deviation is used.
inline double silverman_bandwidth(std::span<const double> values)
{
  if (values.size() < 2) {
    throw UndefinedError("bandwidth selection needs at least 2 values");
  }
  const double sd = sample_stddev(values);
  if (!(sd > 0.0)) {
    throw UndefinedError("sample has zero variance; pass an explicit bandwidth");
  }
  std::vector<double> v(values.begin(), values.end());
  const double iqr = quantile(v, 0.75) - quantile(v, 0.25);
  const double scale = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  return 0.9 * scale * std::pow(static_cast<double>(values.size()), -0.2);
}

struct DensityEstimate
{
  std::vector<double> grid;
  std::vector<double> density;
  double bandwidth = 0.0;
  std::size_t sample_count = 0;

  //! Grid point with the highest density.
  double mode() const
  {
    auto it = std::max_element(density.begin(), density.end());
    return grid[static_cast<std::size_t>(it - density.begin())];
  }
};

inline constexpr std::size_t kDensityGridSize = 512;

//! Gaussian kernel density estimate on kDensityGridSize equally spaced points
//! spanning [min - 3h, max + 3h].
inline DensityEstimate kde(std::span<const double> values, std::optional<double> bandwidth = std::nullopt)
{
  if (values.size() < 2) {
    throw UndefinedError("density estimation needs at least 2 values");
  }
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw ValidationError("density estimation input contains a non-finite value");
    }
  }
  DensityEstimate d;
  d.sample_count = values.size();
  if (bandwidth) {
    if (!(*bandwidth > 0.0) || !std::isfinite(*bandwidth)) {
      throw UsageError("bandwidth must be a positive finite number");
    }
    d.bandwidth = *bandwidth;
  } else {
    d.bandwidth = silverman_bandwidth(values);
  }
  const double h = d.bandwidth;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it - 3.0 * h;
  const double hi = *hi_it + 3.0 * h;
  const double norm = 1.0 / (static_cast<double>(values.size()) * h * std::sqrt(2.0 * std::numbers::pi));

  d.grid.resize(kDensityGridSize);
  d.density.resize(kDensityGridSize);
  for (std::size_t i = 0; i < kDensityGridSize; ++i) {
    const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(kDensityGridSize - 1);
    double s = 0.0;
    for (double v : values) {
      const double z = (x - v) / h;
      s += std::exp(-0.5 * z * z);
    }
    d.grid[i] = x;
    d.density[i] = s * norm;
  }
  return d;
}

//! Trapezoidal rule over a (grid, value) curve.
inline double trapezoid(std::span<const double> x, std::span<const double> y)
{
  double s = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    s += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
  }
  return s;
}

// ---------------------------------------------------------------------------
// per-condition analysis

struct CorrelationPair
{
  std::size_t n = 0;
  double pcc = 0.0;  //!< signed
  double srcc = 0.0; //!< signed
};

struct ConditionAnalysis
{
  std::string condition;
  std::vector<double> scores;
  double mean = 0.0;
  Histogram histogram;
  std::optional<DensityEstimate> density;
  std::string density_note; //!< why density is absent
  std::optional<CorrelationPair> correlation;
  std::string correlation_note;
};

struct AnalysisOptions
{
  std::size_t bins = 20;
  std::optional<double> bandwidth;
};

struct AnalysisBundle
{
  std::vector<ConditionAnalysis> conditions; //!< first-seen order
  bool has_reference = false;
  std::optional<CorrelationPair> pooled;
  std::string pooled_note;
  std::size_t matched = 0;
  std::vector<std::string> unmatched_score_ids;
  std::vector<std::string> unmatched_reference_ids;
};

namespace detail {

inline std::optional<CorrelationPair> try_correlate(const PairedSamples& s, std::string& note)
{
  try {
    return CorrelationPair{ s.size(), pearson(s), spearman(s) };
  } catch (const Error& e) {
    note = e.what();
    return std::nullopt;
  }
}

} // namespace detail

//! Per-condition histograms and densities of the report's scores and, when a
//! per-id reference metric is given, signed PCC / SRCC between score and
//! reference per condition and pooled over all matched utterances. Ids present
//! on only one side are listed and excluded.
inline AnalysisBundle condition_report(const ScoreReport& report,
                                       const std::optional<std::map<std::string, double>>& reference,
                                       const AnalysisOptions& opt = {})
{
  if (report.records.empty()) {
    throw UndefinedError("score report has no records");
  }
  AnalysisBundle out;
  out.has_reference = reference.has_value();

  std::map<std::string, std::size_t> index;
  std::vector<PairedSamples> paired;
  PairedSamples pooled;
  std::map<std::string, bool> reference_used;
  if (reference) {
    for (const auto& [id, _] : *reference) {
      reference_used[id] = false;
    }
  }

  for (const auto& r : report.records) {
    auto [it, inserted] = index.emplace(r.condition, out.conditions.size());
    if (inserted) {
      out.conditions.push_back({});
      out.conditions.back().condition = r.condition;
      paired.emplace_back();
    }
    out.conditions[it->second].scores.push_back(r.score);
    if (reference) {
      auto ref = reference->find(r.id);
      if (ref == reference->end()) {
        out.unmatched_score_ids.push_back(r.id);
        continue;
      }
      reference_used[r.id] = true;
      auto& p = paired[it->second];
      p.ids.push_back(r.id);
      p.xs.push_back(r.score);
      p.ys.push_back(ref->second);
      pooled.ids.push_back(r.id);
      pooled.xs.push_back(r.score);
      pooled.ys.push_back(ref->second);
    }
  }
  for (const auto& [id, used] : reference_used) {
    if (!used) {
      out.unmatched_reference_ids.push_back(id);
    }
  }
  out.matched = pooled.size();

  for (std::size_t c = 0; c < out.conditions.size(); ++c) {
    auto& ca = out.conditions[c];
    double sum = 0.0;
    for (double v : ca.scores) {
      sum += v;
    }
    ca.mean = sum / static_cast<double>(ca.scores.size());
    ca.histogram = histogram(ca.scores, opt.bins);
    try {
      ca.density = kde(ca.scores, opt.bandwidth);
    } catch (const Error& e) {
      ca.density_note = e.what();
    }
    if (reference) {
      ca.correlation = detail::try_correlate(paired[c], ca.correlation_note);
    }
  }
  if (reference) {
    if (out.matched == 0) {
      out.pooled_note = "no score ids matched the reference";
    } else {
      out.pooled = detail::try_correlate(pooled, out.pooled_note);
    }
  }
  return out;
}

} // namespace gibscore
