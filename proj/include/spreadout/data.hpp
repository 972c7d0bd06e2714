#pragma once

// Synthetic patch-correspondence data, its binary file format, and the
// pair / triplet / N-pair index samplers used for training and evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "spreadout/binary_io.hpp"
#include "spreadout/error.hpp"
#include "spreadout/linalg.hpp"
#include "spreadout/random.hpp"

namespace spreadout {

struct PatchDataset {
  Matrix samples;  // (n_samples, input_dim), one flattened patch per row
  std::vector<std::uint32_t> labels;
  std::uint32_t n_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t input_dim() const noexcept { return samples.cols(); }

  bool operator==(const PatchDataset&) const = default;

  void validate() const {
    if (samples.rows() != labels.size()) throw ShapeError("PatchDataset: sample/label count mismatch");
    for (auto y : labels)
      if (y >= n_classes) throw FormatError("PatchDataset: label " + std::to_string(y) + " >= n_classes");
  }

  /// Sample indices grouped by class id.
  std::vector<std::vector<std::uint32_t>> class_members() const {
    std::vector<std::vector<std::uint32_t>> members(n_classes);
    for (std::uint32_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
    return members;
  }
};

struct GeneratorConfig {
  std::uint32_t n_classes = 200;
  std::uint32_t per_class = 32;
  std::size_t input_dim = 64;
  double noise_sigma = 1.0;
  double scale_jitter = 0.2;
  /// Prototypes vary only in the first `intrinsic_dim` coordinates (0 means
  /// all of them); the remaining coordinates carry noise only.
  std::size_t intrinsic_dim = 6;
  std::uint64_t seed = 1;
};

/// Each class gets a prototype whose first intrinsic_dim coordinates are
/// N(0, 1) and the rest 0; each sample is
/// s * (prototype + sigma * N(0, I)) with s ~ U[1 - jitter, 1 + jitter].
/// Samples are stored class by class.
inline PatchDataset generate_synthetic(const GeneratorConfig& cfg) {
  if (cfg.n_classes < 2) throw ConfigError("generate_synthetic: need at least 2 classes");
  if (cfg.per_class < 2) throw ConfigError("generate_synthetic: class needs >= 2 samples");
  if (cfg.input_dim < 1) throw ConfigError("generate_synthetic: input_dim must be >= 1");
  if (cfg.intrinsic_dim > cfg.input_dim) throw ConfigError("generate_synthetic: intrinsic_dim exceeds input_dim");
  if (!(cfg.noise_sigma >= 0.0) || !(cfg.scale_jitter >= 0.0) || cfg.scale_jitter >= 1.0)
    throw ConfigError("generate_synthetic: need noise_sigma >= 0 and 0 <= scale_jitter < 1");

  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> scale(1.0 - cfg.scale_jitter, 1.0 + cfg.scale_jitter);

  const std::size_t n = static_cast<std::size_t>(cfg.n_classes) * cfg.per_class;
  PatchDataset ds{Matrix(n, cfg.input_dim), std::vector<std::uint32_t>(n), cfg.n_classes};
  const std::size_t active = cfg.intrinsic_dim == 0 ? cfg.input_dim : cfg.intrinsic_dim;
  std::vector<double> proto(cfg.input_dim);
  std::size_t row = 0;
  for (std::uint32_t c = 0; c < cfg.n_classes; ++c) {
    for (std::size_t j = 0; j < cfg.input_dim; ++j) proto[j] = j < active ? normal(rng) : 0.0;
    for (std::uint32_t k = 0; k < cfg.per_class; ++k, ++row) {
      const double s = cfg.scale_jitter > 0.0 ? scale(rng) : 1.0;
      auto out = ds.samples.row(row);
      for (std::size_t j = 0; j < cfg.input_dim; ++j) {
        const double noise = cfg.noise_sigma > 0.0 ? cfg.noise_sigma * normal(rng) : 0.0;
        out[j] = s * (proto[j] + noise);
      }
      ds.labels[row] = c;
    }
  }
  return ds;
}

// Dataset file: "SODS", u32 version = 1, u64 n_samples, u64 input_dim,
// u64 n_classes, u32 labels[n_samples], f64 samples[n_samples * input_dim]
// row-major, all little-endian.
inline constexpr std::uint32_t kDatasetVersion = 1;

inline std::vector<char> encode_dataset(const PatchDataset& ds) {
  ds.validate();
  binary::Writer w;
  w.bytes("SODS");
  w.uint(kDatasetVersion);
  w.uint<std::uint64_t>(ds.size());
  w.uint<std::uint64_t>(ds.input_dim());
  w.uint<std::uint64_t>(ds.n_classes);
  for (auto y : ds.labels) w.uint(y);
  for (double v : ds.samples.flat()) w.f64(v);
  return w.buffer();
}

inline PatchDataset decode_dataset(std::vector<char> bytes) {
  binary::Reader r(std::move(bytes));
  constexpr std::string_view what = "dataset";
  r.expect_magic("SODS", what);
  const auto version = r.uint<std::uint32_t>(what);
  if (version != kDatasetVersion) throw FormatError("dataset: unsupported version " + std::to_string(version));
  const auto n = r.uint<std::uint64_t>(what);
  const auto dim = r.uint<std::uint64_t>(what);
  const auto n_classes = r.uint<std::uint64_t>(what);
  if (n_classes > UINT32_MAX) throw FormatError("dataset: n_classes too large");
  const std::uint64_t rem = r.remaining();
  bool consistent = false;
  if (n == 0) {
    consistent = rem == 0;
  } else if (dim <= rem / 8) {
    const std::uint64_t per_sample = 4 + 8 * dim;
    consistent = n <= rem / per_sample && n * per_sample == rem;
  }
  if (!consistent) throw FormatError("dataset: declared sizes disagree with file length");

  PatchDataset ds{Matrix(n, dim), std::vector<std::uint32_t>(n), static_cast<std::uint32_t>(n_classes)};
  for (auto& y : ds.labels) y = r.uint<std::uint32_t>(what);
  for (double& v : ds.samples.flat()) v = r.f64(what);
  ds.validate();
  return ds;
}

inline void save_dataset(const PatchDataset& ds, const std::string& path) {
  binary::write_file(path, encode_dataset(ds));
}

inline PatchDataset load_dataset(const std::string& path) { return decode_dataset(binary::read_file(path)); }

struct TripletIndexBatch {
  std::vector<std::uint32_t> anchors;
  std::vector<std::uint32_t> positives;
  std::vector<std::uint32_t> negatives;

  std::size_t size() const noexcept { return anchors.size(); }
  bool operator==(const TripletIndexBatch&) const = default;
};

struct PairIndexBatch {
  std::vector<std::uint32_t> lefts;
  std::vector<std::uint32_t> rights;
  std::vector<std::uint8_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  bool operator==(const PairIndexBatch&) const = default;
};

/// Row i of anchors/positives comes from a distinct class.
struct NPairIndexBatch {
  std::vector<std::uint32_t> anchors;
  std::vector<std::uint32_t> positives;

  bool operator==(const NPairIndexBatch&) const = default;
};

namespace detail {

inline std::vector<std::vector<std::uint32_t>> checked_members(const PatchDataset& ds) {
  ds.validate();
  auto members = ds.class_members();
  std::uint32_t populated = 0;
  for (std::uint32_t c = 0; c < members.size(); ++c) {
    if (members[c].empty()) continue;
    if (members[c].size() < 2)
      throw ConfigError("sampler: class " + std::to_string(c) + " has fewer than 2 samples");
    ++populated;
  }
  if (populated < 2) throw ConfigError("sampler: dataset needs at least 2 classes");
  return members;
}

inline std::uint32_t pick(std::size_t n, Rng& rng) {
  return static_cast<std::uint32_t>(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
}

// Uniform same-class partner of `anchor`, never `anchor` itself.
inline std::uint32_t pick_positive(const std::vector<std::uint32_t>& cls, std::uint32_t anchor, Rng& rng) {
  std::uint32_t k = pick(cls.size() - 1, rng);
  if (cls[k] == anchor) k = static_cast<std::uint32_t>(cls.size() - 1);
  return cls[k];
}

// Uniform over all samples of other classes.
inline std::uint32_t pick_negative(const PatchDataset& ds, std::uint32_t anchor, Rng& rng) {
  for (;;) {
    const std::uint32_t j = pick(ds.size(), rng);
    if (ds.labels[j] != ds.labels[anchor]) return j;
  }
}

}  // namespace detail

inline TripletIndexBatch sample_triplets(const PatchDataset& ds, std::size_t count, std::uint64_t seed) {
  const auto members = detail::checked_members(ds);
  Rng rng(seed);
  TripletIndexBatch out;
  out.anchors.reserve(count);
  out.positives.reserve(count);
  out.negatives.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t a = detail::pick(ds.size(), rng);
    out.anchors.push_back(a);
    out.positives.push_back(detail::pick_positive(members[ds.labels[a]], a, rng));
    out.negatives.push_back(detail::pick_negative(ds, a, rng));
  }
  return out;
}

/// `count_matching` label-1 pairs followed by `count_nonmatching` label-0 pairs.
inline PairIndexBatch sample_pairs(const PatchDataset& ds, std::size_t count_matching, std::size_t count_nonmatching,
                                   std::uint64_t seed) {
  const auto members = detail::checked_members(ds);
  Rng rng(seed);
  PairIndexBatch out;
  for (std::size_t i = 0; i < count_matching; ++i) {
    const std::uint32_t a = detail::pick(ds.size(), rng);
    out.lefts.push_back(a);
    out.rights.push_back(detail::pick_positive(members[ds.labels[a]], a, rng));
    out.labels.push_back(1);
  }
  for (std::size_t i = 0; i < count_nonmatching; ++i) {
    const std::uint32_t a = detail::pick(ds.size(), rng);
    out.lefts.push_back(a);
    out.rights.push_back(detail::pick_negative(ds, a, rng));
    out.labels.push_back(0);
  }
  return out;
}

/// `n_pairs` (anchor, positive) pairs from `n_pairs` distinct classes.
inline NPairIndexBatch sample_npairs(const PatchDataset& ds, std::size_t n_pairs, std::uint64_t seed) {
  const auto members = detail::checked_members(ds);
  std::vector<std::uint32_t> classes;
  for (std::uint32_t c = 0; c < members.size(); ++c)
    if (!members[c].empty()) classes.push_back(c);
  if (n_pairs > classes.size())
    throw ConfigError("sample_npairs: requested " + std::to_string(n_pairs) + " pairs but only " +
                      std::to_string(classes.size()) + " classes");
  Rng rng(seed);
  NPairIndexBatch out;
  for (std::size_t i = 0; i < n_pairs; ++i) {
    // Partial Fisher-Yates over the class list.
    const std::size_t j = i + detail::pick(classes.size() - i, rng);
    std::swap(classes[i], classes[j]);
    const auto& cls = members[classes[i]];
    const std::uint32_t a = cls[detail::pick(cls.size(), rng)];
    out.anchors.push_back(a);
    out.positives.push_back(detail::pick_positive(cls, a, rng));
  }
  return out;
}

}  // namespace spreadout
