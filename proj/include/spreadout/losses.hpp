#pragma once

// Metric-learning losses and the global orthogonal regularizer. Every loss
// returns its value together with the gradient for each embedding matrix it
// was given, and averages over the batch.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "spreadout/error.hpp"
#include "spreadout/linalg.hpp"

namespace spreadout {

/// Lower bound used in place of a Euclidean distance in gradient denominators.
inline constexpr double kMinDistance = 1e-12;

struct PairBatch {
  Matrix lefts;
  Matrix rights;
  std::vector<std::uint8_t> labels;  // 1 = matching pair

  void validate() const {
    require_same_shape(lefts, rights, "PairBatch");
    if (labels.size() != lefts.rows()) throw ShapeError("PairBatch: label count does not match pair count");
    for (auto y : labels)
      if (y > 1) throw ConfigError("PairBatch: labels must be 0 or 1");
  }
};

struct TripletBatch {
  Matrix anchors;
  Matrix positives;
  Matrix negatives;

  void validate() const {
    require_same_shape(anchors, positives, "TripletBatch");
    require_same_shape(anchors, negatives, "TripletBatch");
  }
};

/// Row i of `anchors` and row i of `positives` share class i; all classes
/// in the batch are distinct.
struct NPairBatch {
  Matrix anchors;
  Matrix positives;

  void validate() const {
    require_same_shape(anchors, positives, "NPairBatch");
    if (anchors.rows() == 0) throw ConfigError("n_pair_loss: batch must contain at least one pair");
  }
};

/// Loss value and one gradient matrix per input matrix, in the order the
/// inputs appear in the batch type (lefts, rights / anchors, positives,
/// negatives).
struct LossResult {
  double value = 0.0;
  std::vector<Matrix> grads;
};

/// Mean over pairs of y * max(0, D - eps_plus) + (1 - y) * max(0, eps_minus - D)
/// with D = |a - b|. With `include_negative_term` false only matching pairs
/// contribute.
inline LossResult contrastive_loss(const PairBatch& batch, double eps_plus, double eps_minus,
                                   bool include_negative_term = true) {
  batch.validate();
  if (eps_plus < 0.0 || eps_minus < 0.0) throw ConfigError("contrastive_loss: margins must be >= 0");
  if (include_negative_term && eps_minus < eps_plus)
    throw ConfigError("contrastive_loss: eps_minus must be >= eps_plus");

  const std::size_t n = batch.lefts.rows();
  LossResult res{0.0, {Matrix(n, batch.lefts.cols()), Matrix(n, batch.lefts.cols())}};
  if (n == 0) return res;
  const double inv_n = 1.0 / static_cast<double>(n);

  for (std::size_t i = 0; i < n; ++i) {
    auto a = batch.lefts.row(i);
    auto b = batch.rights.row(i);
    const double dist = distance(a, b);
    double coeff = 0.0;  // d(loss_i)/dD
    if (batch.labels[i] == 1) {
      if (dist > eps_plus) {
        res.value += dist - eps_plus;
        coeff = 1.0;
      }
    } else if (include_negative_term && dist < eps_minus) {
      res.value += eps_minus - dist;
      coeff = -1.0;
    }
    if (coeff == 0.0) continue;
    const double scale = coeff * inv_n / std::max(dist, kMinDistance);
    auto ga = res.grads[0].row(i);
    auto gb = res.grads[1].row(i);
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double g = scale * (a[k] - b[k]);
      ga[k] += g;
      gb[k] -= g;
    }
  }
  res.value *= inv_n;
  return res;
}

/// Mean over triplets of max(0, eps - (D_neg - |a - p|)) where D_neg is
/// |a - n|, or with anchor swap min(|a - n|, |p - n|).
inline LossResult triplet_loss(const TripletBatch& batch, double eps, bool anchor_swap) {
  batch.validate();
  if (eps < 0.0) throw ConfigError("triplet_loss: margin must be >= 0");

  const std::size_t n = batch.anchors.rows();
  const std::size_t dim = batch.anchors.cols();
  LossResult res{0.0, {Matrix(n, dim), Matrix(n, dim), Matrix(n, dim)}};
  if (n == 0) return res;
  const double inv_n = 1.0 / static_cast<double>(n);

  for (std::size_t i = 0; i < n; ++i) {
    auto a = batch.anchors.row(i);
    auto p = batch.positives.row(i);
    auto q = batch.negatives.row(i);
    const double d_pos = distance(a, p);
    const double d_an = distance(a, q);
    const double d_pn = anchor_swap ? distance(p, q) : d_an;
    const bool swapped = anchor_swap && d_pn < d_an;
    const double d_neg = swapped ? d_pn : d_an;

    const double h = eps - (d_neg - d_pos);
    if (!(h > 0.0)) continue;
    res.value += h;

    auto ga = res.grads[0].row(i);
    auto gp = res.grads[1].row(i);
    auto gn = res.grads[2].row(i);
    // + d(d_pos)
    const double sp = inv_n / std::max(d_pos, kMinDistance);
    for (std::size_t k = 0; k < dim; ++k) {
      const double g = sp * (a[k] - p[k]);
      ga[k] += g;
      gp[k] -= g;
    }
    // - d(d_neg)
    const double sn = inv_n / std::max(d_neg, kMinDistance);
    auto from = swapped ? p : a;
    auto g_from = swapped ? gp : ga;
    for (std::size_t k = 0; k < dim; ++k) {
      const double g = sn * (from[k] - q[k]);
      g_from[k] -= g;
      gn[k] += g;
    }
  }
  res.value *= inv_n;
  return res;
}

/// Global orthogonal regularization over non-matching pairs (lefts[i], rights[i]):
/// M1^2 + max(0, M2 - 1/d), where M1 and M2 are the sample mean and second
/// moment of the pair inner products.
inline LossResult gor(const Matrix& lefts, const Matrix& rights, std::size_t d) {
  require_same_shape(lefts, rights, "gor");
  const std::size_t n = lefts.rows();
  if (n == 0) throw ConfigError("gor: need at least one non-matching pair");
  if (d != lefts.cols())
    throw ShapeError("gor: d = " + std::to_string(d) + " but embeddings have " + std::to_string(lefts.cols()) +
                     " columns");

  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> ips(n);
  double m1 = 0.0;
  double m2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ips[i] = dot(lefts.row(i), rights.row(i));
    m1 += ips[i];
    m2 += ips[i] * ips[i];
  }
  m1 *= inv_n;
  m2 *= inv_n;
  const double excess = m2 - 1.0 / static_cast<double>(d);
  const bool hinge_active = excess > 0.0;

  LossResult res{m1 * m1 + (hinge_active ? excess : 0.0), {Matrix(n, d), Matrix(n, d)}};
  for (std::size_t i = 0; i < n; ++i) {
    // d(value)/d(ip_i)
    const double c = 2.0 * m1 * inv_n + (hinge_active ? 2.0 * ips[i] * inv_n : 0.0);
    if (c == 0.0) continue;
    axpy(c, rights.row(i), res.grads[0].row(i));
    axpy(c, lefts.row(i), res.grads[1].row(i));
  }
  return res;
}

/// (1/N) sum_i log(1 + sum_{j != i} exp(f_i . f_j+ - f_i . f_i+)).
inline LossResult n_pair_loss(const NPairBatch& batch) {
  batch.validate();
  const std::size_t n = batch.anchors.rows();
  const std::size_t dim = batch.anchors.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  LossResult res{0.0, {Matrix(n, dim), Matrix(n, dim)}};

  std::vector<double> logits(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto fi = batch.anchors.row(i);
    for (std::size_t j = 0; j < n; ++j) logits[j] = dot(fi, batch.positives.row(j));
    // log(sum_j exp(l_j - l_i)) with the j = i term contributing exp(0) = 1.
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    res.value += std::log(z) + mx - logits[i];

    auto gi = res.grads[0].row(i);
    for (std::size_t j = 0; j < n; ++j) {
      const double pj = std::exp(logits[j] - mx) / z;
      const double c = (pj - (j == i ? 1.0 : 0.0)) * inv_n;
      if (c == 0.0) continue;
      axpy(c, batch.positives.row(j), gi);
      axpy(c, fi, res.grads[1].row(j));
    }
  }
  res.value *= inv_n;
  return res;
}

enum class LossKind { contrastive, triplet, triplet_swap, n_pair };

struct LossParams {
  double margin = 0.5;     // triplet
  double eps_plus = 0.7;   // contrastive, matching pairs
  double eps_minus = 1.4;  // contrastive, non-matching pairs
  /// For a contrastive base, drop the non-matching hinge so the regularizer
  /// is the only term acting on non-matching pairs.
  bool gor_replaces_negative = false;
};

using LossBatch = std::variant<PairBatch, TripletBatch, NPairBatch>;

struct CombinedLossResult : LossResult {
  double base_value = 0.0;
  double gor_value = 0.0;
  /// False when the batch supplied no non-matching pairs.
  bool has_gor_pairs = false;
};

/// The non-matching (left, right) rows the regularizer sees for a batch:
/// (anchor, negative) for triplets, label-0 pairs for pair batches and
/// (anchor_i, positive_{i+1 mod N}) for N-pair batches. `left_of[k]` /
/// `right_of[k]` give (input matrix, row) for gradient routing.
struct GorPairs {
  Matrix lefts;
  Matrix rights;
  std::vector<std::pair<std::size_t, std::size_t>> left_of;
  std::vector<std::pair<std::size_t, std::size_t>> right_of;
};

inline GorPairs gor_pairs(const LossBatch& batch) {
  GorPairs out;
  auto collect = [&](const Matrix& l, std::size_t lm, const Matrix& r, std::size_t rm,
                     const std::vector<std::pair<std::size_t, std::size_t>>& rows) {
    out.lefts = Matrix(rows.size(), l.cols());
    out.rights = Matrix(rows.size(), r.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      auto [li, ri] = rows[k];
      std::copy(l.row(li).begin(), l.row(li).end(), out.lefts.row(k).begin());
      std::copy(r.row(ri).begin(), r.row(ri).end(), out.rights.row(k).begin());
      out.left_of.emplace_back(lm, li);
      out.right_of.emplace_back(rm, ri);
    }
  };
  std::vector<std::pair<std::size_t, std::size_t>> rows;
  if (const auto* t = std::get_if<TripletBatch>(&batch)) {
    for (std::size_t i = 0; i < t->anchors.rows(); ++i) rows.emplace_back(i, i);
    collect(t->anchors, 0, t->negatives, 2, rows);
  } else if (const auto* p = std::get_if<PairBatch>(&batch)) {
    for (std::size_t i = 0; i < p->lefts.rows(); ++i)
      if (p->labels[i] == 0) rows.emplace_back(i, i);
    collect(p->lefts, 0, p->rights, 1, rows);
  } else {
    const auto& np = std::get<NPairBatch>(batch);
    const std::size_t n = np.anchors.rows();
    if (n >= 2)
      for (std::size_t i = 0; i < n; ++i) rows.emplace_back(i, (i + 1) % n);
    collect(np.anchors, 0, np.positives, 1, rows);
  }
  return out;
}

inline LossResult base_loss(LossKind kind, const LossBatch& batch, const LossParams& params) {
  switch (kind) {
    case LossKind::contrastive:
      return contrastive_loss(std::get<PairBatch>(batch), params.eps_plus, params.eps_minus,
                              !params.gor_replaces_negative);
    case LossKind::triplet:
      return triplet_loss(std::get<TripletBatch>(batch), params.margin, false);
    case LossKind::triplet_swap:
      return triplet_loss(std::get<TripletBatch>(batch), params.margin, true);
    case LossKind::n_pair:
      return n_pair_loss(std::get<NPairBatch>(batch));
  }
  throw ConfigError("unknown loss kind");
}

/// base + alpha * gor. The regularizer value is always reported; its gradient
/// is only accumulated when alpha != 0.
inline CombinedLossResult combined_loss(LossKind kind, const LossBatch& batch, double alpha,
                                        const LossParams& params) {
  if (alpha < 0.0) throw ConfigError("combined_loss: alpha must be >= 0");
  CombinedLossResult res;
  static_cast<LossResult&>(res) = base_loss(kind, batch, params);
  res.base_value = res.value;

#ifndef SPREADOUT_DISABLE_GOR
  const GorPairs pairs = gor_pairs(batch);
  if (pairs.lefts.rows() == 0) return res;
  res.has_gor_pairs = true;
  const LossResult reg = gor(pairs.lefts, pairs.rights, pairs.lefts.cols());
  res.gor_value = reg.value;
  res.value = res.base_value + alpha * reg.value;
  if (alpha != 0.0) {
    for (std::size_t k = 0; k < pairs.left_of.size(); ++k) {
      auto [lm, li] = pairs.left_of[k];
      auto [rm, ri] = pairs.right_of[k];
      axpy(alpha, reg.grads[0].row(k), res.grads[lm].row(li));
      axpy(alpha, reg.grads[1].row(k), res.grads[rm].row(ri));
    }
  }
#endif
  return res;
}

}  // namespace spreadout
