#pragma once

// Descriptor matching metrics: FPR95, ROC, similarity histograms,
// non-matching second moment and Recall@K.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "spreadout/csv.hpp"
#include "spreadout/error.hpp"
#include "spreadout/linalg.hpp"

namespace spreadout {

/// Cosine similarities of embedding pairs with their match labels (1 = match).
struct ScoredPairs {
  std::vector<double> similarities;
  std::vector<std::uint8_t> labels;

  void validate() const {
    if (similarities.size() != labels.size()) throw ShapeError("ScoredPairs: length mismatch");
    for (double s : similarities)
      if (!(s >= -1.0 - 1e-9 && s <= 1.0 + 1e-9)) throw DomainError("ScoredPairs: similarity outside [-1, 1]");
    for (auto y : labels)
      if (y > 1) throw ConfigError("ScoredPairs: labels must be 0 or 1");
  }

  std::size_t count(std::uint8_t label) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
  }
};

struct RocPoint {
  double threshold;  // pairs with similarity >= threshold are accepted
  double fpr;
  double tpr;
};

struct Histograms {
  std::vector<double> bin_centers;
  std::vector<double> match_density;
  std::vector<double> nonmatch_density;
  double overlap = 0.0;
};

namespace detail {

inline void require_both_classes(const ScoredPairs& s, const char* where) {
  s.validate();
  if (s.count(1) == 0 || s.count(0) == 0)
    throw ConfigError(std::string(where) + ": need at least one matching and one non-matching pair");
}

}  // namespace detail

/// False positive rate at the threshold accepting ceil(0.95 M) of the M
/// matching pairs: t is the ceil(0.95 M)-th largest matching similarity and
/// the result is the fraction of non-matching similarities >= t.
inline double fpr95(const ScoredPairs& scored) {
  detail::require_both_classes(scored, "fpr95");
  std::vector<double> match;
  std::vector<double> nonmatch;
  for (std::size_t i = 0; i < scored.labels.size(); ++i)
    (scored.labels[i] ? match : nonmatch).push_back(scored.similarities[i]);
  const std::size_t m = match.size();
  const std::size_t k = (95 * m + 99) / 100;  // ceil(0.95 m) in integers
  std::nth_element(match.begin(), match.begin() + static_cast<std::ptrdiff_t>(k - 1), match.end(),
                   std::greater<>());
  const double t = match[k - 1];
  const auto fp = std::count_if(nonmatch.begin(), nonmatch.end(), [t](double s) { return s >= t; });
  return static_cast<double>(fp) / static_cast<double>(nonmatch.size());
}

/// Step ROC over all distinct similarity thresholds in decreasing order,
/// starting at (0, 0) (threshold +inf) and ending at (1, 1).
inline std::vector<RocPoint> roc_curve(const ScoredPairs& scored) {
  detail::require_both_classes(scored, "roc_curve");
  const double n_pos = static_cast<double>(scored.count(1));
  const double n_neg = static_cast<double>(scored.count(0));

  std::vector<std::size_t> order(scored.similarities.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scored.similarities[a] > scored.similarities[b]; });

  std::vector<RocPoint> roc{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = scored.similarities[order[i]];
    for (; i < order.size() && scored.similarities[order[i]] == t; ++i) (scored.labels[order[i]] ? tp : fp) += 1;
    roc.push_back({t, fp / n_neg, tp / n_pos});
  }
  return roc;
}

/// Trapezoidal area under a ROC curve.
inline double roc_auc(const std::vector<RocPoint>& roc) {
  double area = 0.0;
  for (std::size_t i = 1; i < roc.size(); ++i)
    area += (roc[i].fpr - roc[i - 1].fpr) * 0.5 * (roc[i].tpr + roc[i - 1].tpr);
  return area;
}

/// Density-normalized histograms of matching and non-matching similarities
/// over [-1, 1], and their overlap sum_b min(p_b, q_b) * width.
inline Histograms similarity_histograms(const ScoredPairs& scored, std::size_t n_bins = 100) {
  scored.validate();
  if (n_bins < 2) throw ConfigError("similarity_histograms: n_bins must be >= 2");
  const double width = 2.0 / static_cast<double>(n_bins);
  Histograms h;
  h.bin_centers.resize(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) h.bin_centers[b] = -1.0 + (static_cast<double>(b) + 0.5) * width;
  std::vector<std::size_t> cm(n_bins, 0), cn(n_bins, 0);
  for (std::size_t i = 0; i < scored.similarities.size(); ++i) {
    const double pos = (scored.similarities[i] + 1.0) / width;
    const auto b = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(n_bins - 1)));
    (scored.labels[i] ? cm : cn)[b] += 1;
  }
  const std::size_t nm = scored.count(1);
  const std::size_t nn = scored.count(0);
  h.match_density.resize(n_bins);
  h.nonmatch_density.resize(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    h.match_density[b] = nm ? static_cast<double>(cm[b]) / (static_cast<double>(nm) * width) : 0.0;
    h.nonmatch_density[b] = nn ? static_cast<double>(cn[b]) / (static_cast<double>(nn) * width) : 0.0;
    h.overlap += std::min(h.match_density[b], h.nonmatch_density[b]) * width;
  }
  h.overlap = std::clamp(h.overlap, 0.0, 1.0);
  return h;
}

/// Mean squared similarity over the non-matching pairs.
inline double nonmatch_second_moment(const ScoredPairs& scored) {
  scored.validate();
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < scored.labels.size(); ++i) {
    if (scored.labels[i]) continue;
    sum += scored.similarities[i] * scored.similarities[i];
    ++n;
  }
  if (n == 0) throw ConfigError("nonmatch_second_moment: no non-matching pairs");
  return sum / static_cast<double>(n);
}

/// For every K: fraction of rows whose K nearest other rows (Euclidean,
/// ties to the smaller index) include a row with the same label.
inline std::map<std::size_t, double> recall_at_k(const Matrix& embeddings, const std::vector<std::uint32_t>& labels,
                                                 const std::vector<std::size_t>& ks) {
  const std::size_t n = embeddings.rows();
  if (labels.size() != n) throw ShapeError("recall_at_k: label count does not match row count");
  std::size_t k_max = 0;
  for (std::size_t k : ks) {
    if (k < 1) throw ConfigError("recall_at_k: K must be >= 1");
    if (k >= n) throw ConfigError("recall_at_k: K = " + std::to_string(k) + " must be smaller than the dataset size");
    k_max = std::max(k_max, k);
  }

  // first_hit[q] = rank (1-based) of the first same-class neighbour, 0 if none within k_max.
  std::vector<std::size_t> first_hit(n, 0);
  std::vector<std::pair<double, std::uint32_t>> cand;
  cand.reserve(n);
  for (std::size_t q = 0; q < n; ++q) {
    cand.clear();
    auto xq = embeddings.row(q);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == q) continue;
      auto xj = embeddings.row(j);
      double d = 0.0;
      for (std::size_t c = 0; c < xq.size(); ++c) {
        const double t = xq[c] - xj[c];
        d += t * t;
      }
      cand.emplace_back(d, static_cast<std::uint32_t>(j));
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k_max), cand.end());
    for (std::size_t r = 0; r < k_max; ++r) {
      if (labels[cand[r].second] == labels[q]) {
        first_hit[q] = r + 1;
        break;
      }
    }
  }

  std::map<std::size_t, double> out;
  for (std::size_t k : ks) {
    const auto hits = std::count_if(first_hit.begin(), first_hit.end(), [k](std::size_t r) { return r >= 1 && r <= k; });
    out[k] = static_cast<double>(hits) / static_cast<double>(n);
  }
  return out;
}

struct EvalReport {
  double fpr95 = 0.0;
  std::vector<RocPoint> roc;
  Histograms hist;
  double nonmatch_second_moment = 0.0;
  std::map<std::size_t, double> recall_at_k;
};

inline EvalReport evaluate(const ScoredPairs& scored, std::size_t n_bins = 100) {
  EvalReport r;
  r.fpr95 = fpr95(scored);
  r.roc = roc_curve(scored);
  r.hist = similarity_histograms(scored, n_bins);
  r.nonmatch_second_moment = nonmatch_second_moment(scored);
  return r;
}

namespace detail {

inline std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  return out;
}

}  // namespace detail

/// Writes roc.csv, hist.csv and summary.csv into `dir`.
inline void write_eval_csvs(const EvalReport& r, const std::string& dir) {
  {
    auto out = detail::open_csv(dir + "/roc.csv");
    out << "threshold,fpr,tpr\n";
    for (const auto& p : r.roc)
      out << (std::isinf(p.threshold) ? std::string("inf") : format_real(p.threshold)) << ',' << format_real(p.fpr)
          << ',' << format_real(p.tpr) << '\n';
  }
  {
    auto out = detail::open_csv(dir + "/hist.csv");
    out << "bin_center,match_density,nonmatch_density\n";
    for (std::size_t b = 0; b < r.hist.bin_centers.size(); ++b)
      out << format_real(r.hist.bin_centers[b]) << ',' << format_real(r.hist.match_density[b]) << ','
          << format_real(r.hist.nonmatch_density[b]) << '\n';
  }
  {
    auto out = detail::open_csv(dir + "/summary.csv");
    out << "fpr95,overlap,second_moment";
    for (const auto& [k, v] : r.recall_at_k) out << ",recall@" << k;
    out << '\n' << format_real(r.fpr95) << ',' << format_real(r.hist.overlap) << ','
        << format_real(r.nonmatch_second_moment);
    for (const auto& [k, v] : r.recall_at_k) out << ',' << format_real(v);
    out << '\n';
  }
}

}  // namespace spreadout
