#pragma once

// Glue between a trained encoder and the metrics: embed a dataset, score a
// pair list, build an EvalReport.

#include <cstdint>
#include <vector>

#include "spreadout/data.hpp"
#include "spreadout/encoder.hpp"
#include "spreadout/eval.hpp"

namespace spreadout {

inline Matrix embed(const EncoderParams& params, const Matrix& samples) {
  if (samples.rows() == 0) return Matrix(0, params.spec.output_dim);
  return forward(params, samples).trace.embeddings;
}

inline ScoredPairs score_pairs(const Matrix& embeddings, const PairIndexBatch& pairs) {
  ScoredPairs s;
  s.labels = pairs.labels;
  s.similarities.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i)
    s.similarities.push_back(std::clamp(dot(embeddings.row(pairs.lefts[i]), embeddings.row(pairs.rights[i])), -1.0, 1.0));
  return s;
}

struct EvalOptions {
  std::size_t n_pairs = 10000;  // half matching, half non-matching
  std::uint64_t seed = 1;
  std::size_t n_bins = 100;
  std::vector<std::size_t> ks{1, 5, 10};
};

/// Balanced pair evaluation plus Recall@K over the whole dataset.
inline EvalReport evaluate_encoder(const EncoderParams& params, const PatchDataset& ds, const EvalOptions& opt) {
  if (params.spec.input_dim != ds.input_dim())
    throw ShapeError("checkpoint expects input_dim " + std::to_string(params.spec.input_dim) + " but dataset has " +
                     std::to_string(ds.input_dim()));
  const Matrix emb = embed(params, ds.samples);
  const std::size_t n_match = (opt.n_pairs + 1) / 2;
  const PairIndexBatch pairs = sample_pairs(ds, n_match, opt.n_pairs - n_match, opt.seed);
  EvalReport report = evaluate(score_pairs(emb, pairs), opt.n_bins);
  if (!opt.ks.empty()) report.recall_at_k = recall_at_k(emb, ds.labels, opt.ks);
  return report;
}

}  // namespace spreadout
