#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "e2e_losses.hpp"
#include "oracles.hpp"
#include "spreadout/encoder.hpp"

using namespace spreadout;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix m(r, c);
  for (double& v : m.flat()) v = normal(rng);
  return m;
}

// Plain nested-loop forward pass used as a second implementation.
Matrix reference_forward(const EncoderParams& p, const Matrix& x) {
  std::vector<std::vector<double>> out;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::vector<double> a(x.row(r).begin(), x.row(r).end());
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      const auto& L = p.layers[l];
      std::vector<double> z(L.weight.rows());
      for (std::size_t o = 0; o < z.size(); ++o) {
        double s = L.bias[o];
        for (std::size_t i = 0; i < a.size(); ++i) s += L.weight(o, i) * a[i];
        z[o] = (l + 1 < p.layers.size()) ? std::max(0.0, s) : s;
      }
      a = z;
    }
    double n = 0;
    for (double v : a) n += v * v;
    for (double& v : a) v /= std::sqrt(n);
    out.push_back(a);
  }
  return Matrix::from_rows(out);
}

// He init leaves biases at zero; a row whose hidden units are all inactive
// would then map to the zero vector, which forward rejects.
EncoderParams random_encoder(const EncoderSpec& spec, std::uint64_t seed) {
  EncoderParams p = init_params(spec, seed);
  std::mt19937_64 rng(seed + 100);
  std::normal_distribution<double> normal;
  for (auto& l : p.layers)
    for (double& b : l.bias) b = 0.1 * normal(rng);
  return p;
}

EncoderParams identity_encoder() {
  EncoderParams p{{2, {}, 2}, {}};
  DenseLayer l{Matrix::from_rows({{1, 0}, {0, 1}}), {0, 0}, Matrix(2, 2), {0, 0}};
  p.layers.push_back(l);
  return p;
}

}  // namespace

TEST(EncoderSpecShape, Validation) {
  EXPECT_THROW((EncoderSpec{0, {}, 4}.validate()), ConfigError);
  EXPECT_THROW((EncoderSpec{4, {0}, 4}.validate()), ConfigError);
  EXPECT_THROW((EncoderSpec{4, {}, 1}.validate()), ConfigError);
  EXPECT_NO_THROW((EncoderSpec{4, {}, 2}.validate()));
}

TEST(InitParams, Examples) {
  const auto p = init_params({4, {}, 2}, 5);
  ASSERT_EQ(p.layers.size(), 1u);
  EXPECT_EQ(p.layers[0].weight.rows(), 2u);
  EXPECT_EQ(p.layers[0].weight.cols(), 4u);
  EXPECT_EQ(p.layers[0].bias.size(), 2u);
  EXPECT_EQ(init_params({4, {}, 2}, 5), p);
  EXPECT_NE(init_params({4, {}, 2}, 6), p);
}

TEST(InitParams, Statistics) {
  const auto p = init_params({64, {32}, 16}, 1);
  double sum = 0, sumsq = 0;
  std::size_t n = 0;
  for (const auto& l : p.layers) {
    for (double w : l.weight.flat()) {
      sum += w;
      ++n;
    }
    for (double b : l.bias) EXPECT_EQ(b, 0.0);
    for (double v : l.weight_velocity.flat()) EXPECT_EQ(v, 0.0);
  }
  EXPECT_LT(std::abs(sum / n), 0.05);
  // First layer variance is 2 / fan_in.
  for (double w : p.layers[0].weight.flat()) sumsq += w * w;
  EXPECT_NEAR(sumsq / p.layers[0].weight.size(), 2.0 / 64, 0.1 * 2.0 / 64);
}

TEST(Forward, PureNormalization) {
  const auto r = forward(identity_encoder(), Matrix::from_rows({{3, 4}}));
  EXPECT_NEAR(r.trace.embeddings(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(r.trace.embeddings(0, 1), 0.8, 1e-15);
}

TEST(Forward, UnitNormRowsAndReference) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 10; ++t) {
    const auto p = random_encoder({5, {7, 6}, 8}, t);
    const Matrix x = random_matrix(9, 5, rng);
    const auto r = forward(p, x);
    for (std::size_t i = 0; i < x.rows(); ++i) EXPECT_NEAR(norm2(r.trace.embeddings.row(i)), 1.0, 1e-12);
    const Matrix ref = reference_forward(p, x);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(r.trace.embeddings.flat()[i], ref.flat()[i], 1e-12);
  }
}

TEST(Forward, Errors) {
  EXPECT_THROW(forward(identity_encoder(), Matrix(1, 3)), ShapeError);
  EXPECT_THROW(forward(identity_encoder(), Matrix::from_rows({{0, 0}})), NumericError);
}

TEST(Forward, RowPermutationEquivariant) {
  std::mt19937_64 rng(4);
  const auto p = init_params({5, {7}, 4}, 1);
  const Matrix x = random_matrix(6, 5, rng);
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  const Matrix xp = gather_rows<std::size_t>(x, perm);
  const Matrix a = forward(p, x).trace.embeddings;
  const Matrix b = forward(p, xp).trace.embeddings;
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(b(i, c), a(perm[i], c));
}

TEST(Backward, NormLayerExample) {
  const auto p = identity_encoder();
  const auto r = forward(p, Matrix::from_rows({{3, 4}}));
  const auto g = backward(p, r.trace, Matrix::from_rows({{1, 0}}));
  EXPECT_NEAR(g.input(0, 0), 0.128, 1e-12);
  EXPECT_NEAR(g.input(0, 1), -0.096, 1e-12);
  // Oracle: finite differences of x -> (x / |x|)[0].
  std::vector<double> x{3, 4};
  auto f = [&] { return x[0] / std::hypot(x[0], x[1]); };
  EXPECT_NEAR(oracle::central_difference(f, x[0]), 0.128, 1e-9);
  EXPECT_NEAR(oracle::central_difference(f, x[1]), -0.096, 1e-9);
}

TEST(Backward, ZeroUpstreamGivesZero) {
  std::mt19937_64 rng(5);
  const auto p = init_params({5, {7}, 4}, 1);
  const auto r = forward(p, random_matrix(3, 5, rng));
  const auto g = backward(p, r.trace, Matrix(3, 4));
  for (const auto& w : g.weight)
    for (double v : w.flat()) EXPECT_EQ(v, 0.0);
  for (const auto& b : g.bias)
    for (double v : b) EXPECT_EQ(v, 0.0);
  for (double v : g.input.flat()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(backward(p, r.trace, Matrix(2, 4)), ShapeError);
}

TEST(Backward, ThreeLayerNetMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  EncoderParams p = random_encoder({5, {8, 7}, 4}, 3);
  Matrix x = random_matrix(4, 5, rng);
  while (min_abs_hidden_preactivation(forward(p, x).trace) < 1e-3) x = random_matrix(4, 5, rng);
  const Matrix up = random_matrix(4, 4, rng);
  auto value = [&](const EncoderParams& q, const Matrix& in) {
    const Matrix e = forward(q, in).trace.embeddings;
    double s = 0;
    for (std::size_t i = 0; i < e.size(); ++i) s += e.flat()[i] * up.flat()[i];
    return s;
  };
  const auto g = backward(p, forward(p, x).trace, up);
  EncoderParams q = p;
  Matrix xi = x;
  auto f = [&] { return value(q, xi); };
  for (std::size_t l = 0; l < q.layers.size(); ++l) {
    for (std::size_t i = 0; i < q.layers[l].weight.size(); ++i)
      EXPECT_LE(oracle::rel_err(g.weight[l].flat()[i], oracle::central_difference(f, q.layers[l].weight.flat()[i])), 1e-4);
    for (std::size_t i = 0; i < q.layers[l].bias.size(); ++i)
      EXPECT_LE(oracle::rel_err(g.bias[l][i], oracle::central_difference(f, q.layers[l].bias[i])), 1e-4);
  }
  for (std::size_t i = 0; i < xi.size(); ++i)
    EXPECT_LE(oracle::rel_err(g.input.flat()[i], oracle::central_difference(f, xi.flat()[i])), 1e-4);
}

TEST(GradientCheck, ConstantLossIsZero) {
  std::mt19937_64 rng(7);
  const auto p = init_params({5, {7}, 4}, 1);
  const Matrix x = random_matrix(3, 5, rng);
  EXPECT_EQ(gradient_check(p, x, [](const Matrix& e) { return EmbeddingLoss{0.0, Matrix(e.rows(), e.cols())}; }), 0.0);
}

TEST(GradientCheck, DetectsWrongGradient) {
  std::mt19937_64 rng(8);
  const auto p = init_params({5, {7}, 4}, 1);
  const Matrix x = random_matrix(3, 5, rng);
  auto wrong = [](const Matrix& e) {
    Matrix g(e.rows(), e.cols());
    for (double& v : g.flat()) v = 1.0;
    return EmbeddingLoss{e(0, 0) * 2.0, g};
  };
  EXPECT_GT(gradient_check(p, x, wrong), 1e-2);
}

TEST(GradientCheck, EveryLossThroughEncoder) {
  for (const auto& name : e2e::loss_names()) {
    for (std::uint64_t s = 1; s <= 5; ++s) {
      const auto pt = e2e::smooth_point(name, s);
      EXPECT_LE(gradient_check(pt.params, pt.inputs, e2e::as_fn(name), 200, s), 1e-4) << name << " seed " << s;
    }
  }
}

TEST(Checkpoint, RoundTrip) {
  auto p = init_params({5, {7, 3}, 4}, 11);
  p.layers[1].bias_velocity[2] = -0.25;
  const auto bytes = encode_checkpoint(p);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SOEN");
  EXPECT_EQ(decode_checkpoint(bytes), p);
  const auto path = std::filesystem::temp_directory_path() / "spreadout_test_ckpt.soen";
  save_checkpoint(p, path.string());
  EXPECT_EQ(load_checkpoint(path.string()), p);
  std::filesystem::remove(path);
  // No hidden layers.
  const auto q = init_params({3, {}, 2}, 1);
  EXPECT_EQ(decode_checkpoint(encode_checkpoint(q)), q);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const auto bytes = encode_checkpoint(init_params({5, {7}, 4}, 11));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(decode_checkpoint(bad_version), FormatError);
  EXPECT_THROW(decode_checkpoint({bytes.begin(), bytes.end() - 1}), FormatError);
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(decode_checkpoint(extra), FormatError);
  EXPECT_THROW(decode_checkpoint({bytes.begin(), bytes.begin() + 10}), FormatError);
  EXPECT_THROW(decode_checkpoint({}), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.soen"), std::runtime_error);
}

TEST(Checkpoint, LittleEndianLayout) {
  const auto bytes = encode_checkpoint(init_params({3, {}, 2}, 1));
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);  // version, low byte first
  EXPECT_EQ(static_cast<unsigned char>(bytes[5]), 0u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 3u);  // input_dim
  // 4 magic + 4 version + 8 input + 8 hidden count + 8 output + 2 * (6 + 2) doubles
  EXPECT_EQ(bytes.size(), 32u + 16u * 8u);
}
