#pragma once

// Dense embedding network: input -> [Linear -> ReLU]* -> Linear -> l2 norm.
// Forward and backward passes are written out by hand.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "spreadout/binary_io.hpp"
#include "spreadout/error.hpp"
#include "spreadout/linalg.hpp"
#include "spreadout/random.hpp"

namespace spreadout {

struct EncoderSpec {
  std::size_t input_dim = 64;
  std::vector<std::size_t> hidden_dims{128};
  std::size_t output_dim = 64;

  void validate() const {
    if (input_dim < 1) throw ConfigError("EncoderSpec: input_dim must be >= 1");
    for (std::size_t h : hidden_dims)
      if (h < 1) throw ConfigError("EncoderSpec: hidden dims must be >= 1");
    if (output_dim < 2) throw ConfigError("EncoderSpec: output_dim must be >= 2");
  }

  /// (fan_in, fan_out) of every linear layer in order.
  std::vector<std::pair<std::size_t, std::size_t>> layer_shapes() const {
    std::vector<std::pair<std::size_t, std::size_t>> shapes;
    std::size_t in = input_dim;
    for (std::size_t h : hidden_dims) {
      shapes.emplace_back(in, h);
      in = h;
    }
    shapes.emplace_back(in, output_dim);
    return shapes;
  }

  bool operator==(const EncoderSpec&) const = default;
};

/// One linear layer. `weight` is (fan_out, fan_in); velocities hold the
/// optimizer momentum and have the same shapes.
struct DenseLayer {
  Matrix weight;
  std::vector<double> bias;
  Matrix weight_velocity;
  std::vector<double> bias_velocity;

  bool operator==(const DenseLayer&) const = default;
};

struct EncoderParams {
  EncoderSpec spec;
  std::vector<DenseLayer> layers;

  bool operator==(const EncoderParams&) const = default;

  bool all_finite() const {
    for (const auto& l : layers) {
      if (!spreadout::all_finite(l.weight.flat()) || !spreadout::all_finite(l.bias) ||
          !spreadout::all_finite(l.weight_velocity.flat()) || !spreadout::all_finite(l.bias_velocity))
        return false;
    }
    return true;
  }
};

/// Row-normalized embeddings with optional per-row class labels.
class EmbeddingBatch {
 public:
  static constexpr double kNormTolerance = 1e-6;

  EmbeddingBatch() = default;
  explicit EmbeddingBatch(Matrix rows, std::vector<std::uint32_t> labels = {})
      : rows_(std::move(rows)), labels_(std::move(labels)) {
    if (!labels_.empty() && labels_.size() != rows_.rows())
      throw ShapeError("EmbeddingBatch: label count does not match row count");
    for (std::size_t r = 0; r < rows_.rows(); ++r)
      if (std::abs(norm2(rows_.row(r)) - 1.0) > kNormTolerance)
        throw NumericError("EmbeddingBatch: row " + std::to_string(r) + " is not unit norm");
  }

  const Matrix& rows() const noexcept { return rows_; }
  std::size_t size() const noexcept { return rows_.rows(); }
  std::size_t dim() const noexcept { return rows_.cols(); }
  const std::vector<std::uint32_t>& labels() const noexcept { return labels_; }

 private:
  Matrix rows_;
  std::vector<std::uint32_t> labels_;
};

/// Cached intermediates of a forward pass.
struct ForwardTrace {
  /// Input of each linear layer (the batch input, then post-ReLU activations).
  std::vector<Matrix> layer_inputs;
  /// Pre-activation of each hidden layer; ReLU derivative is [z > 0].
  std::vector<Matrix> hidden_pre;
  /// Output of the last linear layer before normalization.
  Matrix pre_norm;
  std::vector<double> norms;
  Matrix embeddings;
};

struct ForwardResult {
  EmbeddingBatch embeddings;
  ForwardTrace trace;
};

struct EncoderGradients {
  std::vector<Matrix> weight;
  std::vector<std::vector<double>> bias;
  Matrix input;
};

namespace detail {

// out(r, :) = W * in(r, :) + b
inline Matrix linear_forward(const DenseLayer& layer, const Matrix& in) {
  const std::size_t fan_out = layer.weight.rows();
  Matrix out(in.rows(), fan_out);
  for (std::size_t r = 0; r < in.rows(); ++r) {
    auto x = in.row(r);
    auto y = out.row(r);
    for (std::size_t o = 0; o < fan_out; ++o) y[o] = dot(layer.weight.row(o), x) + layer.bias[o];
  }
  return out;
}

}  // namespace detail

/// He initialization: weights ~ N(0, 2 / fan_in), zero biases and momentum.
inline EncoderParams init_params(const EncoderSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  EncoderParams params{spec, {}};
  for (auto [fan_in, fan_out] : spec.layer_shapes()) {
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    DenseLayer layer{Matrix(fan_out, fan_in), std::vector<double>(fan_out, 0.0), Matrix(fan_out, fan_in),
                     std::vector<double>(fan_out, 0.0)};
    for (double& w : layer.weight.flat()) w = normal(rng);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

/// Gradient of g . (x / |x|) with respect to x: (g - y (y . g)) / |x|.
inline void l2_normalize_backward(std::span<const double> y, double norm, std::span<const double> g,
                                  std::span<double> dx) {
  const double yg = dot(y, g);
  const double inv = 1.0 / (norm + 1e-12);
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = (g[i] - y[i] * yg) * inv;
}

inline ForwardResult forward(const EncoderParams& params, const Matrix& inputs) {
  if (inputs.cols() != params.spec.input_dim)
    throw ShapeError("forward: input has " + std::to_string(inputs.cols()) + " columns, encoder expects " +
                     std::to_string(params.spec.input_dim));
  ForwardTrace trace;
  Matrix act = inputs;
  const std::size_t n_layers = params.layers.size();
  for (std::size_t l = 0; l + 1 < n_layers; ++l) {
    Matrix z = detail::linear_forward(params.layers[l], act);
    Matrix a = z;
    for (double& v : a.flat()) v = v > 0.0 ? v : 0.0;
    trace.layer_inputs.push_back(std::move(act));
    trace.hidden_pre.push_back(std::move(z));
    act = std::move(a);
  }
  trace.pre_norm = detail::linear_forward(params.layers.back(), act);
  trace.layer_inputs.push_back(std::move(act));

  Matrix emb = trace.pre_norm;
  trace.norms.resize(emb.rows());
  for (std::size_t r = 0; r < emb.rows(); ++r) {
    const double n = norm2(emb.row(r));
    if (!(n >= 1e-12))
      throw NumericError("forward: row " + std::to_string(r) + " has near-zero norm before l2 normalization");
    trace.norms[r] = n;
    for (double& v : emb.row(r)) v /= n;
  }
  trace.embeddings = emb;
  return {EmbeddingBatch(std::move(emb)), std::move(trace)};
}

/// Gradients of sum_r grad_out(r, :) . embedding(r, :) with respect to all
/// parameters and the batch input.
inline EncoderGradients backward(const EncoderParams& params, const ForwardTrace& trace, const Matrix& grad_out) {
  require_same_shape(trace.embeddings, grad_out, "backward");
  if (trace.layer_inputs.size() != params.layers.size()) throw ShapeError("backward: trace does not match params");

  const std::size_t batch = grad_out.rows();
  const std::size_t n_layers = params.layers.size();
  EncoderGradients grads;
  grads.weight.resize(n_layers);
  grads.bias.resize(n_layers);

  Matrix delta(batch, grad_out.cols());
  for (std::size_t r = 0; r < batch; ++r)
    l2_normalize_backward(trace.embeddings.row(r), trace.norms[r], grad_out.row(r), delta.row(r));

  for (std::size_t l = n_layers; l-- > 0;) {
    const DenseLayer& layer = params.layers[l];
    const Matrix& in = trace.layer_inputs[l];
    const std::size_t fan_out = layer.weight.rows();
    const std::size_t fan_in = layer.weight.cols();

    Matrix gw(fan_out, fan_in);
    std::vector<double> gb(fan_out, 0.0);
    Matrix gin(batch, fan_in);
    for (std::size_t r = 0; r < batch; ++r) {
      auto d = delta.row(r);
      auto x = in.row(r);
      auto gx = gin.row(r);
      for (std::size_t o = 0; o < fan_out; ++o) {
        const double g = d[o];
        if (g == 0.0) continue;
        gb[o] += g;
        axpy(g, x, gw.row(o));
        axpy(g, layer.weight.row(o), gx);
      }
    }
    grads.weight[l] = std::move(gw);
    grads.bias[l] = std::move(gb);

    if (l > 0) {
      const Matrix& z = trace.hidden_pre[l - 1];
      for (std::size_t i = 0; i < gin.size(); ++i)
        if (!(z.flat()[i] > 0.0)) gin.flat()[i] = 0.0;
    }
    delta = std::move(gin);
  }
  grads.input = std::move(delta);
  return grads;
}

/// Scalar loss of a batch of embeddings plus its gradient with respect to
/// those embeddings.
struct EmbeddingLoss {
  double value = 0.0;
  Matrix grad;
};

using EmbeddingLossFn = std::function<EmbeddingLoss(const Matrix& embeddings)>;

/// Worst relative error between analytic gradients (through the encoder)
/// and central finite differences over sampled parameter and input
/// coordinates. Relative error is |a - n| / max(|a|, |n|, 1e-6).
inline double gradient_check(const EncoderParams& params, const Matrix& inputs, const EmbeddingLossFn& loss,
                             std::size_t n_coords = 200, std::uint64_t seed = 0, double step = 1e-5) {
  const ForwardResult fwd = forward(params, inputs);
  const EmbeddingLoss at = loss(fwd.trace.embeddings);
  const EncoderGradients grads = backward(params, fwd.trace, at.grad);

  // Coordinate address: (layer, 0=weight / 1=bias, flat index); layer == n_layers means input.
  struct Coord {
    std::size_t layer;
    int kind;
    std::size_t index;
  };
  std::vector<Coord> all;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    for (std::size_t i = 0; i < params.layers[l].weight.size(); ++i) all.push_back({l, 0, i});
    for (std::size_t i = 0; i < params.layers[l].bias.size(); ++i) all.push_back({l, 1, i});
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) all.push_back({params.layers.size(), 0, i});

  if (all.size() > n_coords) {
    Rng rng(seed);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(n_coords);
  }

  auto eval = [&](const EncoderParams& p, const Matrix& x) { return loss(forward(p, x).trace.embeddings).value; };

  double worst = 0.0;
  EncoderParams p = params;
  Matrix x = inputs;
  for (const Coord& c : all) {
    double* slot = nullptr;
    double analytic = 0.0;
    if (c.layer == params.layers.size()) {
      slot = &x.flat()[c.index];
      analytic = grads.input.flat()[c.index];
    } else if (c.kind == 0) {
      slot = &p.layers[c.layer].weight.flat()[c.index];
      analytic = grads.weight[c.layer].flat()[c.index];
    } else {
      slot = &p.layers[c.layer].bias[c.index];
      analytic = grads.bias[c.layer][c.index];
    }
    const double orig = *slot;
    *slot = orig + step;
    const double up = eval(p, x);
    *slot = orig - step;
    const double down = eval(p, x);
    *slot = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

/// Smallest |pre-activation| over all hidden units of a forward pass. Finite
/// difference checks are only meaningful when this exceeds the step size.
inline double min_abs_hidden_preactivation(const ForwardTrace& trace) {
  double m = std::numeric_limits<double>::infinity();
  for (const Matrix& z : trace.hidden_pre)
    for (double v : z.flat()) m = std::min(m, std::abs(v));
  return m;
}

// Checkpoint file: "SOEN", u32 version, u64 input_dim, u64 hidden count,
// u64 hidden dims..., u64 output_dim, then per layer in order: weight,
// bias, weight velocity, bias velocity as raw f64.
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<char> encode_checkpoint(const EncoderParams& params) {
  binary::Writer w;
  w.bytes("SOEN");
  w.uint(kCheckpointVersion);
  w.uint<std::uint64_t>(params.spec.input_dim);
  w.uint<std::uint64_t>(params.spec.hidden_dims.size());
  for (std::size_t h : params.spec.hidden_dims) w.uint<std::uint64_t>(h);
  w.uint<std::uint64_t>(params.spec.output_dim);
  for (const DenseLayer& l : params.layers) {
    for (double v : l.weight.flat()) w.f64(v);
    for (double v : l.bias) w.f64(v);
    for (double v : l.weight_velocity.flat()) w.f64(v);
    for (double v : l.bias_velocity) w.f64(v);
  }
  return w.buffer();
}

inline void save_checkpoint(const EncoderParams& params, const std::string& path) {
  binary::write_file(path, encode_checkpoint(params));
}

inline EncoderParams decode_checkpoint(std::vector<char> bytes) {
  binary::Reader r(std::move(bytes));
  constexpr std::string_view what = "checkpoint";
  r.expect_magic("SOEN", what);
  const auto version = r.uint<std::uint32_t>(what);
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  EncoderSpec spec;
  spec.input_dim = r.uint<std::uint64_t>(what);
  const auto n_hidden = r.uint<std::uint64_t>(what);
  if (n_hidden > r.remaining() / 8) throw FormatError("checkpoint: truncated file");
  spec.hidden_dims.clear();
  for (std::uint64_t i = 0; i < n_hidden; ++i) spec.hidden_dims.push_back(r.uint<std::uint64_t>(what));
  spec.output_dim = r.uint<std::uint64_t>(what);
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }

  std::uint64_t expected = 0;
  for (auto [in, out] : spec.layer_shapes()) expected += 2 * (in * out + out);
  if (r.remaining() != expected * 8)
    throw FormatError("checkpoint: payload size disagrees with declared dimensions");

  EncoderParams params{spec, {}};
  for (auto [in, out] : spec.layer_shapes()) {
    DenseLayer l{Matrix(out, in), std::vector<double>(out), Matrix(out, in), std::vector<double>(out)};
    for (double& v : l.weight.flat()) v = r.f64(what);
    for (double& v : l.bias) v = r.f64(what);
    for (double& v : l.weight_velocity.flat()) v = r.f64(what);
    for (double& v : l.bias_velocity) v = r.f64(what);
    params.layers.push_back(std::move(l));
  }
  return params;
}

inline EncoderParams load_checkpoint(const std::string& path) {
  return decode_checkpoint(binary::read_file(path));
}

}  // namespace spreadout
