#pragma once

// Output files of an analysis run, all written into one directory:
//
//   analysis.json      machine summary (signed and absolute correlations,
//                      bandwidths, modes, unmatched ids)
//   densities.tsv      condition, x, density            (one row per grid point)
//   histograms.tsv     condition, bin_lo, bin_hi, count, mass, density
//   correlations.tsv   scope, n, pcc, abs_pcc, srcc, abs_srcc
//   pairs.tsv          id, condition, score, reference  (matched pairs only)
//   distributions.svg  density curves, one polyline per condition

#include "gibscore/report.hpp"
#include "gibscore/stats.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>

namespace gibscore {

namespace detail {

inline nlohmann::json correlation_json(const std::optional<CorrelationPair>& c, const std::string& note)
{
  if (!c) {
    return { { "available", false }, { "reason", note } };
  }
  return { { "available", true },    { "n", c->n },
           { "pcc", c->pcc },        { "abs_pcc", std::abs(c->pcc) },
           { "srcc", c->srcc },      { "abs_srcc", std::abs(c->srcc) } };
}

inline std::string xml_escape(const std::string& s)
{
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

} // namespace detail

struct AnalysisStamp
{
  std::string config_hash;
  std::optional<std::uint64_t> seed;
  std::string generated_at;
};

inline nlohmann::json analysis_to_json(const AnalysisBundle& a, const AnalysisStamp& stamp = {})
{
  using nlohmann::json;
  json j;
  j["format"] = "gibscore-analysis";
  j["version"] = 1;
  j["config_hash"] = stamp.config_hash;
  j["seed"] = stamp.seed ? json(*stamp.seed) : json(nullptr);
  j["generated_at"] = stamp.generated_at;
  j["score_polarity"] = "lower_is_better";
  j["has_reference"] = a.has_reference;
  json conditions = json::array();
  for (const auto& c : a.conditions) {
    json cj;
    cj["condition"] = c.condition;
    cj["count"] = c.scores.size();
    cj["mean"] = c.mean;
    cj["bins"] = c.histogram.bin_count();
    if (c.density) {
      cj["bandwidth"] = c.density->bandwidth;
      cj["mode"] = c.density->mode();
    } else {
      cj["density_unavailable"] = c.density_note;
    }
    if (a.has_reference) {
      cj["correlation"] = detail::correlation_json(c.correlation, c.correlation_note);
    }
    conditions.push_back(std::move(cj));
  }
  j["conditions"] = std::move(conditions);
  if (a.has_reference) {
    j["pooled_correlation"] = detail::correlation_json(a.pooled, a.pooled_note);
    j["matched"] = a.matched;
    j["unmatched_score_ids"] = a.unmatched_score_ids;
    j["unmatched_reference_ids"] = a.unmatched_reference_ids;
  }
  return j;
}

//! Minimal standalone SVG line plot of the per-condition densities.
inline std::string render_density_svg(const AnalysisBundle& a)
{
  static constexpr std::array<const char*, 8> palette = { "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                           "#9467bd", "#8c564b", "#e377c2", "#7f7f7f" };
  constexpr double width = 640, height = 400, left = 60, right = 160, top = 20, bottom = 50;
  double xmin = INFINITY, xmax = -INFINITY, ymax = 0.0;
  for (const auto& c : a.conditions) {
    if (!c.density) {
      continue;
    }
    xmin = std::min(xmin, c.density->grid.front());
    xmax = std::max(xmax, c.density->grid.back());
    ymax = std::max(ymax, *std::max_element(c.density->density.begin(), c.density->density.end()));
  }
  std::ostringstream svg;
  svg.precision(6);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const double pw = width - left - right, ph = height - top - bottom;
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  if (!(xmax > xmin) || !(ymax > 0.0)) {
    svg << "<text x=\"" << left + 10 << "\" y=\"" << top + 20 << "\">no density available</text>\n</svg>\n";
    return svg.str();
  }
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return top + ph - y / ymax * ph; };
  std::size_t k = 0;
  for (const auto& c : a.conditions) {
    const char* colour = palette[k % palette.size()];
    const double ly = top + 15 + 18 * static_cast<double>(k);
    svg << "<text x=\"" << width - right + 10 << "\" y=\"" << ly << "\" fill=\"" << colour
        << "\" font-size=\"12\">" << detail::xml_escape(c.condition) << "</text>\n";
    ++k;
    if (!c.density) {
      continue;
    }
    svg << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < c.density->grid.size(); ++i) {
      svg << px(c.density->grid[i]) << ',' << py(c.density->density[i]) << ' ';
    }
    svg << "\"/>\n";
  }
  svg << "<text x=\"" << left << "\" y=\"" << height - 30 << "\" font-size=\"11\">" << xmin << "</text>\n";
  svg << "<text x=\"" << left + pw << "\" y=\"" << height - 30 << "\" font-size=\"11\" text-anchor=\"end\">"
      << xmax << "</text>\n";
  svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 10
      << "\" font-size=\"12\" text-anchor=\"middle\">log-perplexity (nats/token)</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

inline void write_analysis(const AnalysisBundle& a,
                           const std::filesystem::path& out_dir,
                           const AnalysisStamp& stamp = {},
                           const ScoreReport* report = nullptr,
                           const std::map<std::string, double>* reference = nullptr)
{
  std::filesystem::create_directories(out_dir);
  save_text(analysis_to_json(a, stamp).dump(2) + "\n", out_dir / "analysis.json");

  std::ostringstream dens, hist, corr;
  dens << "condition\tx\tdensity\n";
  hist << "condition\tbin_lo\tbin_hi\tcount\tmass\tdensity\n";
  for (const auto& c : a.conditions) {
    if (c.density) {
      for (std::size_t i = 0; i < c.density->grid.size(); ++i) {
        dens << c.condition << '\t' << detail::format_real(c.density->grid[i]) << '\t'
             << detail::format_real(c.density->density[i]) << '\n';
      }
    }
    const auto& h = c.histogram;
    for (std::size_t b = 0; b < h.bin_count(); ++b) {
      hist << c.condition << '\t' << detail::format_real(h.edges[b]) << '\t'
           << detail::format_real(h.edges[b + 1]) << '\t' << h.counts[b] << '\t'
           << detail::format_real(h.mass[b]) << '\t' << detail::format_real(h.density[b]) << '\n';
    }
  }
  save_text(dens.str(), out_dir / "densities.tsv");
  save_text(hist.str(), out_dir / "histograms.tsv");

  if (a.has_reference) {
    corr << "scope\tn\tpcc\tabs_pcc\tsrcc\tabs_srcc\n";
    auto row = [&](const std::string& scope, const std::optional<CorrelationPair>& c) {
      if (!c) {
        corr << scope << "\t0\tnan\tnan\tnan\tnan\n";
        return;
      }
      corr << scope << '\t' << c->n << '\t' << detail::format_real(c->pcc) << '\t'
           << detail::format_real(std::abs(c->pcc)) << '\t' << detail::format_real(c->srcc) << '\t'
           << detail::format_real(std::abs(c->srcc)) << '\n';
    };
    for (const auto& c : a.conditions) {
      row(c.condition, c.correlation);
    }
    row("pooled", a.pooled);
    save_text(corr.str(), out_dir / "correlations.tsv");

    if (report && reference) {
      std::ostringstream pairs;
      pairs << "id\tcondition\tscore\treference\n";
      for (const auto& r : report->records) {
        auto it = reference->find(r.id);
        if (it != reference->end()) {
          pairs << r.id << '\t' << r.condition << '\t' << detail::format_real(r.score) << '\t'
                << detail::format_real(it->second) << '\n';
        }
      }
      save_text(pairs.str(), out_dir / "pairs.tsv");
    }
  }
  save_text(render_density_svg(a), out_dir / "distributions.svg");
}

} // namespace gibscore
