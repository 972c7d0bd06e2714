#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "spreadout/data.hpp"

using namespace spreadout;

namespace {

GeneratorConfig small(std::uint32_t classes, std::uint32_t per_class, std::uint64_t seed = 1) {
  GeneratorConfig c;
  c.n_classes = classes;
  c.per_class = per_class;
  c.input_dim = 8;
  c.intrinsic_dim = 4;
  c.seed = seed;
  return c;
}

std::filesystem::path temp_file(const char* name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST(Generate, ShapeContract) {
  GeneratorConfig c{10, 20, 64, 0.1, 0.2, 8, 5};
  const auto ds = generate_synthetic(c);
  EXPECT_EQ(ds.size(), 200u);
  EXPECT_EQ(ds.input_dim(), 64u);
  EXPECT_EQ(ds.n_classes, 10u);
  std::vector<int> counts(10);
  for (auto y : ds.labels) ++counts.at(y);
  for (int k : counts) EXPECT_EQ(k, 20);
}

TEST(Generate, NoNoiseMeansIdenticalClassMembers) {
  GeneratorConfig c = small(5, 4);
  c.noise_sigma = 0;
  c.scale_jitter = 0;
  const auto ds = generate_synthetic(c);
  const auto members = ds.class_members();
  for (const auto& m : members)
    for (std::uint32_t i : m) EXPECT_TRUE(std::equal(ds.samples.row(i).begin(), ds.samples.row(i).end(),
                                                     ds.samples.row(m[0]).begin()));
  // Prototypes pairwise distinct.
  for (std::size_t a = 0; a < members.size(); ++a)
    for (std::size_t b = a + 1; b < members.size(); ++b)
      EXPECT_GT(distance(ds.samples.row(members[a][0]), ds.samples.row(members[b][0])), 0.0);
}

TEST(Generate, Deterministic) {
  EXPECT_EQ(generate_synthetic(small(6, 3, 9)), generate_synthetic(small(6, 3, 9)));
  EXPECT_NE(generate_synthetic(small(6, 3, 9)), generate_synthetic(small(6, 3, 10)));
}

TEST(Generate, IntrinsicDimensionLimitsPrototypes) {
  GeneratorConfig c = small(4, 3);
  c.noise_sigma = 0;
  c.scale_jitter = 0;
  const auto ds = generate_synthetic(c);
  for (std::size_t r = 0; r < ds.size(); ++r)
    for (std::size_t j = c.intrinsic_dim; j < c.input_dim; ++j) EXPECT_EQ(ds.samples(r, j), 0.0);
  c.intrinsic_dim = 0;
  const auto full = generate_synthetic(c);
  EXPECT_NE(full.samples(0, 7), 0.0);
}

TEST(Generate, RejectsInvalidConfig) {
  EXPECT_THROW(generate_synthetic(small(1, 4)), ConfigError);
  EXPECT_THROW(generate_synthetic(small(4, 1)), ConfigError);
  GeneratorConfig c = small(4, 4);
  c.noise_sigma = -1;
  EXPECT_THROW(generate_synthetic(c), ConfigError);
  c = small(4, 4);
  c.intrinsic_dim = 9;
  EXPECT_THROW(generate_synthetic(c), ConfigError);
  c = small(4, 4);
  c.input_dim = 0;
  c.intrinsic_dim = 0;
  EXPECT_THROW(generate_synthetic(c), ConfigError);
}

TEST(DatasetFile, RoundTrip) {
  const auto ds = generate_synthetic(small(5, 3));
  const auto path = temp_file("spreadout_test_ds.sods");
  save_dataset(ds, path.string());
  EXPECT_EQ(load_dataset(path.string()), ds);
  std::filesystem::remove(path);
}

TEST(DatasetFile, EmptyDatasetAccepted) {
  const PatchDataset empty{Matrix(0, 7), {}, 3};
  const auto back = decode_dataset(encode_dataset(empty));
  EXPECT_EQ(back.size(), 0u);
  EXPECT_EQ(back.n_classes, 3u);
}

TEST(DatasetFile, RejectsCorruption) {
  const auto bytes = encode_dataset(generate_synthetic(small(3, 2)));
  auto bad = bytes;
  bad[1] = 'X';
  EXPECT_THROW(decode_dataset(bad), FormatError);
  bad = bytes;
  bad[4] = 2;
  EXPECT_THROW(decode_dataset(bad), FormatError);
  EXPECT_THROW(decode_dataset({bytes.begin(), bytes.end() - 3}), FormatError);
  bad = bytes;
  bad.push_back(0);
  EXPECT_THROW(decode_dataset(bad), FormatError);
  // Declared n_samples larger than the payload.
  bad = bytes;
  bad[8] = static_cast<char>(0xff);
  bad[15] = 0x7f;
  EXPECT_THROW(decode_dataset(bad), FormatError);
  // Label out of range.
  bad = bytes;
  bad[32] = 9;
  EXPECT_THROW(decode_dataset(bad), FormatError);
  EXPECT_THROW(decode_dataset({}), FormatError);
  EXPECT_THROW(load_dataset("/nonexistent/dir/x.sods"), std::runtime_error);
}

TEST(DatasetFile, HeaderLayout) {
  const auto bytes = encode_dataset(generate_synthetic(small(3, 2)));
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SODS");
  EXPECT_EQ(bytes[8], 6);   // n_samples, little-endian
  EXPECT_EQ(bytes[16], 8);  // input_dim
  EXPECT_EQ(bytes[24], 3);  // n_classes
  EXPECT_EQ(bytes.size(), 32u + 6u * 4u + 6u * 8u * 8u);
}

TEST(SampleTriplets, Invariants) {
  const auto ds = generate_synthetic(small(7, 3));
  const auto t = sample_triplets(ds, 2000, 4);
  ASSERT_EQ(t.size(), 2000u);
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(ds.labels[t.anchors[i]], ds.labels[t.positives[i]]);
    EXPECT_NE(t.anchors[i], t.positives[i]);
    EXPECT_NE(ds.labels[t.anchors[i]], ds.labels[t.negatives[i]]);
  }
  EXPECT_EQ(sample_triplets(ds, 50, 4), sample_triplets(ds, 50, 4));
  EXPECT_NE(sample_triplets(ds, 50, 4), sample_triplets(ds, 50, 5));
}

TEST(SampleTriplets, AnchorClassBalance) {
  const auto ds = generate_synthetic(small(2, 2));
  const auto t = sample_triplets(ds, 10000, 8);
  std::size_t zero = 0;
  for (auto a : t.anchors) zero += ds.labels[a] == 0;
  EXPECT_NEAR(zero / 1e4, 0.5, 0.03);
}

TEST(SampleTriplets, PositivesUniformOverOthers) {
  const auto ds = generate_synthetic(small(2, 4));
  const auto t = sample_triplets(ds, 30000, 2);
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> counts;
  for (std::size_t i = 0; i < t.size(); ++i) ++counts[{t.anchors[i], t.positives[i]}];
  EXPECT_EQ(counts.size(), 8u * 3u);
  // Each (anchor, positive) cell expects 30000 / 24 = 1250.
  for (const auto& [k, n] : counts) EXPECT_NEAR(n, 1250, 150);
}

TEST(SampleTriplets, RejectsUnusableDatasets) {
  PatchDataset ds{Matrix(3, 2), {0, 0, 1}, 2};
  EXPECT_THROW(sample_triplets(ds, 1, 1), ConfigError);
  PatchDataset one_class{Matrix(3, 2), {0, 0, 0}, 1};
  EXPECT_THROW(sample_triplets(one_class, 1, 1), ConfigError);
}

TEST(SamplePairs, CountsAndLabels) {
  const auto ds = generate_synthetic(small(4, 3));
  const auto p = sample_pairs(ds, 5, 5, 3);
  ASSERT_EQ(p.size(), 10u);
  int pos = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.labels[i]) {
      ++pos;
      EXPECT_EQ(ds.labels[p.lefts[i]], ds.labels[p.rights[i]]);
      EXPECT_NE(p.lefts[i], p.rights[i]);
    } else {
      EXPECT_NE(ds.labels[p.lefts[i]], ds.labels[p.rights[i]]);
    }
  }
  EXPECT_EQ(pos, 5);
  EXPECT_EQ(sample_pairs(ds, 5, 5, 3), p);
}

TEST(SampleNPairs, DistinctClasses) {
  const auto ds = generate_synthetic(small(9, 3));
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto b = sample_npairs(ds, 9, s);
    std::set<std::uint32_t> classes;
    for (std::size_t i = 0; i < b.anchors.size(); ++i) {
      EXPECT_EQ(ds.labels[b.anchors[i]], ds.labels[b.positives[i]]);
      EXPECT_NE(b.anchors[i], b.positives[i]);
      classes.insert(ds.labels[b.anchors[i]]);
    }
    EXPECT_EQ(classes.size(), 9u);
  }
  EXPECT_THROW(sample_npairs(ds, 10, 1), ConfigError);
  EXPECT_EQ(sample_npairs(ds, 4, 3), sample_npairs(ds, 4, 3));
}
