#pragma once

// SGD-with-momentum training of the encoder under any loss configuration.
// Every branch of a step (anchor / positive / negative, or left / right)
// is embedded by one forward pass over the stacked rows, so all branches see
// the same parameter version.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "spreadout/csv.hpp"
#include "spreadout/data.hpp"
#include "spreadout/encoder.hpp"
#include "spreadout/error.hpp"
#include "spreadout/losses.hpp"
#include "spreadout/random.hpp"

namespace spreadout {

struct TrainConfig {
  LossKind loss = LossKind::triplet;
  /// gor_replaces_negative defaults on: for a contrastive base with alpha > 0
  /// the regularizer takes over the non-matching hinge.
  LossParams loss_params{0.5, 0.7, 1.4, true};
  double alpha = 1.0;
  double lr0 = 0.1;
  double momentum = 0.9;
  double decay = 0.96;
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  /// Triplets (or pairs) drawn per epoch; resampled every epoch.
  std::size_t samples_per_epoch = 50000;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
    if (!(lr0 > 0.0)) throw ConfigError("lr0 must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
    if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("decay must be in (0, 1]");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (samples_per_epoch < 1) throw ConfigError("samples_per_epoch must be >= 1");
    if (!(loss_params.margin >= 0.0) || !(loss_params.eps_plus >= 0.0) || !(loss_params.eps_minus >= 0.0))
      throw ConfigError("loss margins must be >= 0");
  }

  /// Loss parameters actually handed to combined_loss.
  LossParams effective_loss_params() const {
    LossParams p = loss_params;
    p.gor_replaces_negative = p.gor_replaces_negative && alpha > 0.0;
    return p;
  }
};

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  double mean_gor = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t steps = 0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  EncoderParams params;
  TrainReport report;
};

inline double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.lr0 * std::pow(cfg.decay, static_cast<double>(epoch));
}

/// v <- momentum * v - lr * g; w <- w + v for every weight and bias.
inline void sgd_momentum_step(EncoderParams& params, const EncoderGradients& grads, double lr, double momentum) {
  if (grads.weight.size() != params.layers.size() || grads.bias.size() != params.layers.size())
    throw ShapeError("sgd_momentum_step: gradient layer count mismatch");
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    require_same_shape(params.layers[l].weight, grads.weight[l], "sgd_momentum_step");
    if (grads.bias[l].size() != params.layers[l].bias.size()) throw ShapeError("sgd_momentum_step: bias mismatch");
    if (!all_finite(grads.weight[l].flat()) || !all_finite(grads.bias[l]))
      throw NumericError("sgd_momentum_step: non-finite gradient in layer " + std::to_string(l));
  }
  auto update = [lr, momentum](std::span<double> w, std::span<double> v, std::span<const double> g) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum * v[i] - lr * g[i];
      w[i] += v[i];
    }
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    DenseLayer& layer = params.layers[l];
    update(layer.weight.flat(), layer.weight_velocity.flat(), grads.weight[l].flat());
    update(layer.bias, layer.bias_velocity, grads.bias[l]);
  }
}

/// Sample indices for one step, grouped by branch.
struct StepIndices {
  std::vector<std::vector<std::uint32_t>> branches;
  std::vector<std::uint8_t> labels;  // pair batches only
};

/// Index batches for every step of one epoch.
inline std::vector<StepIndices> epoch_plan(const PatchDataset& ds, const TrainConfig& cfg, std::size_t epoch) {
  const std::size_t count = cfg.samples_per_epoch;
  const std::size_t bs = cfg.batch_size;
  const std::size_t n_steps = (count + bs - 1) / bs;
  std::vector<StepIndices> plan;
  plan.reserve(n_steps);

  switch (cfg.loss) {
    case LossKind::triplet:
    case LossKind::triplet_swap: {
      const auto t = sample_triplets(ds, count, derive_seed(cfg.seed, 1, epoch));
      for (std::size_t s = 0; s < n_steps; ++s) {
        const std::size_t b = s * bs;
        const std::size_t e = std::min(count, b + bs);
        plan.push_back({{{t.anchors.begin() + b, t.anchors.begin() + e},
                         {t.positives.begin() + b, t.positives.begin() + e},
                         {t.negatives.begin() + b, t.negatives.begin() + e}},
                        {}});
      }
      break;
    }
    case LossKind::contrastive: {
      const std::size_t n_match = (count + 1) / 2;
      const auto p = sample_pairs(ds, n_match, count - n_match, derive_seed(cfg.seed, 2, epoch));
      // Interleave matching and non-matching pairs so every batch is balanced.
      std::vector<std::size_t> order;
      for (std::size_t i = 0; i < n_match; ++i) {
        order.push_back(i);
        if (n_match + i < count) order.push_back(n_match + i);
      }
      for (std::size_t s = 0; s < n_steps; ++s) {
        StepIndices step{{{}, {}}, {}};
        for (std::size_t k = s * bs; k < std::min(count, (s + 1) * bs); ++k) {
          step.branches[0].push_back(p.lefts[order[k]]);
          step.branches[1].push_back(p.rights[order[k]]);
          step.labels.push_back(p.labels[order[k]]);
        }
        plan.push_back(std::move(step));
      }
      break;
    }
    case LossKind::n_pair: {
      std::size_t n_classes = 0;
      for (const auto& m : ds.class_members()) n_classes += m.empty() ? 0 : 1;
      const std::size_t n = std::min(bs, n_classes);
      for (std::size_t s = 0; s < n_steps; ++s) {
        auto np = sample_npairs(ds, n, derive_seed(cfg.seed, 3, epoch * n_steps + s));
        plan.push_back({{std::move(np.anchors), std::move(np.positives)}, {}});
      }
      break;
    }
  }
  return plan;
}

/// Stacks the branch rows of `ds` into one input matrix.
inline Matrix stack_inputs(const PatchDataset& ds, const StepIndices& step) {
  std::vector<std::uint32_t> all;
  for (const auto& b : step.branches) all.insert(all.end(), b.begin(), b.end());
  return gather_rows(ds.samples, std::span<const std::uint32_t>(all));
}

/// Splits stacked embeddings back into the loss batch type for `kind`.
inline LossBatch make_loss_batch(LossKind kind, const Matrix& stacked, const StepIndices& step) {
  const std::size_t n = step.branches.front().size();
  switch (kind) {
    case LossKind::triplet:
    case LossKind::triplet_swap:
      return TripletBatch{slice_rows(stacked, 0, n), slice_rows(stacked, n, n), slice_rows(stacked, 2 * n, n)};
    case LossKind::contrastive:
      return PairBatch{slice_rows(stacked, 0, n), slice_rows(stacked, n, n), step.labels};
    case LossKind::n_pair:
      return NPairBatch{slice_rows(stacked, 0, n), slice_rows(stacked, n, n)};
  }
  throw ConfigError("unknown loss kind");
}

struct StepOutcome {
  double loss = 0.0;
  double gor = 0.0;
  bool has_gor = false;
};

/// One optimization step: forward all branches, combined loss, backward,
/// momentum update.
inline StepOutcome train_step(EncoderParams& params, const PatchDataset& ds, const StepIndices& step,
                              const TrainConfig& cfg, double lr) {
  const Matrix inputs = stack_inputs(ds, step);
  const ForwardResult fwd = forward(params, inputs);
  const LossBatch batch = make_loss_batch(cfg.loss, fwd.trace.embeddings, step);
  const CombinedLossResult loss = combined_loss(cfg.loss, batch, cfg.alpha, cfg.effective_loss_params());
  if (!std::isfinite(loss.value)) throw NumericError("non-finite loss");

  std::vector<const Matrix*> parts;
  for (const Matrix& g : loss.grads) parts.push_back(&g);
  const Matrix grad_out = vstack(parts);
  const EncoderGradients grads = backward(params, fwd.trace, grad_out);
  sgd_momentum_step(params, grads, lr, cfg.momentum);
  return {loss.value, loss.gor_value, loss.has_gor_pairs};
}

/// Called after every epoch with the statistics for that epoch.
using EpochObserver = std::function<void(const EpochStats&)>;

inline TrainResult train(const PatchDataset& ds, const EncoderSpec& spec, const TrainConfig& cfg,
                         const EpochObserver& observer = {}) {
  cfg.validate();
  spec.validate();
  if (spec.input_dim != ds.input_dim())
    throw ShapeError("train: encoder input_dim " + std::to_string(spec.input_dim) + " does not match dataset dim " +
                     std::to_string(ds.input_dim()));

  const auto start = std::chrono::steady_clock::now();
  TrainResult out{init_params(spec, cfg.seed), {}};
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    const auto plan = epoch_plan(ds, cfg, epoch);
    double loss_sum = 0.0;
    double gor_sum = 0.0;
    std::size_t gor_steps = 0;
    for (std::size_t s = 0; s < plan.size(); ++s) {
      StepOutcome o;
      try {
        o = train_step(out.params, ds, plan[s], cfg, lr);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + " step " + std::to_string(s) + ": " + e.what());
      }
      loss_sum += o.loss;
      if (o.has_gor) {
        gor_sum += o.gor;
        ++gor_steps;
      }
      ++out.report.steps;
    }
    EpochStats stats{epoch, lr, loss_sum / static_cast<double>(plan.size()),
                     gor_steps ? gor_sum / static_cast<double>(gor_steps) : 0.0};
    if (!std::isfinite(stats.mean_loss))
      throw NumericError("epoch " + std::to_string(epoch) + ": non-finite mean loss");
    out.report.epochs.push_back(stats);
    if (observer) observer(stats);
  }
  out.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

inline void write_epoch_csv(const TrainReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "epoch,lr,mean_loss,mean_gor\n";
  for (const auto& e : report.epochs)
    out << e.epoch << ',' << format_real(e.lr) << ',' << format_real(e.mean_loss) << ','
        << format_real(e.mean_gor) << '\n';
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace spreadout
