#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "error.hpp"
#include "protocol.hpp"

namespace tlh {
namespace {

std::vector<Species> four_species_layout() {
  std::vector<Species> out;
  for (const char* s : {"Bird", "Fruit", "Flower", "Pepper"}) {
    Species sp{s, {}};
    for (int c = 0; c < 5; ++c) sp.classes.push_back(std::string(s) + "_" + std::to_string(c));
    out.push_back(sp);
  }
  return out;
}

ClassSplit split_one(double f, std::size_t j, std::size_t class_size, std::uint64_t seed = 0,
                     const std::string& name = "c") {
  const std::vector<ClassSize> sizes{{name, class_size}};
  return make_splits(SplitSpec{f, j, seed}, sizes).classes.at(0);
}

TEST(Splits, DocumentedSizes) {
  const auto a = split_one(0.10, 500, 500);
  EXPECT_EQ(a.train_ids.size(), 50u);
  EXPECT_EQ(a.val_ids.size(), 25u);
  EXPECT_EQ(a.test_ids.size(), 425u);
  const auto b = split_one(0.40, 500, 500);
  EXPECT_EQ(b.train_ids.size(), 200u);
  EXPECT_EQ(b.val_ids.size(), 100u);
  EXPECT_EQ(b.test_ids.size(), 200u);
  const auto c = split_one(0.20, 10, 10);
  EXPECT_EQ(c.train_ids.size(), 2u);
  EXPECT_EQ(c.val_ids.size(), 1u);
  EXPECT_EQ(c.test_ids.size(), 7u);
}

TEST(Splits, TestShareIsEveryRemainingImage) {
  const auto s = split_one(0.10, 500, 530);
  EXPECT_EQ(s.train_ids.size(), 50u);
  EXPECT_EQ(s.val_ids.size(), 25u);
  EXPECT_EQ(s.test_ids.size(), 455u);
}

TEST(Splits, DisjointAndExhaustiveForEveryFraction) {
  for (double f : {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}) {
    const auto s = split_one(f, 500, 500, 3);
    std::vector<std::size_t> all;
    for (const auto* part : {&s.train_ids, &s.val_ids, &s.test_ids}) all.insert(all.end(), part->begin(), part->end());
    std::sort(all.begin(), all.end());
    ASSERT_EQ(all.size(), 500u);
    for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
    const auto train = static_cast<std::size_t>(std::llround(f * 500));
    EXPECT_EQ(s.train_ids.size(), train);
    EXPECT_EQ(s.val_ids.size(), train / 2);
    EXPECT_EQ(s.test_ids.size(), 500 - train - train / 2);
  }
}

TEST(Splits, StableAndSeedSensitive) {
  const auto a = split_one(0.1, 500, 500, 1);
  const auto b = split_one(0.1, 500, 500, 1);
  const auto c = split_one(0.1, 500, 500, 2);
  EXPECT_EQ(a.train_ids, b.train_ids);
  EXPECT_EQ(a.test_ids, b.test_ids);
  EXPECT_NE(a.train_ids, c.train_ids);
}

TEST(Splits, AddingAClassLeavesOthersUntouched) {
  const std::vector<ClassSize> two{{"a", 40}, {"b", 40}};
  const std::vector<ClassSize> three{{"a", 40}, {"z", 60}, {"b", 40}};
  const SplitSpec spec{0.2, 40, 7};
  const auto s2 = make_splits(spec, two);
  const auto s3 = make_splits(spec, three);
  EXPECT_EQ(s2.classes[0].train_ids, s3.classes[0].train_ids);
  EXPECT_EQ(s2.classes[1].train_ids, s3.classes[2].train_ids);
  EXPECT_EQ(s2.classes[1].test_ids, s3.classes[2].test_ids);
}

TEST(Splits, Rejections) {
  EXPECT_THROW(split_one(0.15, 10, 10), ValidationError);  // f*J = 1.5
  EXPECT_THROW(split_one(0.10, 10, 10), ValidationError);  // f*J/2 = 0.5
  EXPECT_THROW(split_one(0.40, 500, 100), ValidationError);
  EXPECT_THROW(split_one(0.0, 500, 500), ValidationError);
  EXPECT_THROW(split_one(0.7, 500, 500), ValidationError);
}

TEST(Compose, AType) {
  const auto layout = four_species_layout();
  const auto e = compose_experiment({ExperimentKind::kAType, "Bird", 3, 12}, layout, 0);
  ASSERT_EQ(e.classes.size(), 3u);
  for (const auto& c : e.classes) EXPECT_EQ(c.species, "Bird");
  EXPECT_EQ(e.group(), "Bird");
}

TEST(Compose, BTypeTakesEqualShareFromEachSpecies) {
  const auto layout = four_species_layout();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto e = compose_experiment({ExperimentKind::kBType, "", 3, 12}, layout, seed);
    ASSERT_EQ(e.classes.size(), 12u);
    std::map<std::string, int> per;
    std::set<std::string> names;
    for (const auto& c : e.classes) {
      ++per[c.species];
      names.insert(c.name);
    }
    EXPECT_EQ(names.size(), 12u);
    for (const auto& s : layout) EXPECT_EQ(per[s.name], 3);
  }
  EXPECT_EQ(compose_experiment({ExperimentKind::kBType, "", 3, 8}, layout, 0).group(), "Mixed");
}

TEST(Compose, Rejections) {
  const auto layout = four_species_layout();
  EXPECT_THROW(compose_experiment({ExperimentKind::kAType, "Bird", 6, 12}, layout, 0), ValidationError);
  EXPECT_THROW(compose_experiment({ExperimentKind::kAType, "Bird", 2, 12}, layout, 0), ValidationError);
  EXPECT_THROW(compose_experiment({ExperimentKind::kAType, "Cat", 3, 12}, layout, 0), ConfigError);
  EXPECT_THROW(compose_experiment({ExperimentKind::kBType, "", 3, 10}, layout, 0), ValidationError);
}

TEST(SynthFeatures, ShapeAndDeterminism) {
  const auto a = synth_features(3, 10, 16, 5.0, 4);
  EXPECT_EQ(a.n_images, 30u);
  EXPECT_EQ(a.dim, 16u);
  EXPECT_EQ(a.n_variants, 1u);
  EXPECT_EQ(a.labels[0], 0u);
  EXPECT_EQ(a.labels[29], 2u);
  EXPECT_NO_THROW(a.validate());
  EXPECT_EQ(a, synth_features(3, 10, 16, 5.0, 4));
  EXPECT_NE(a.data, synth_features(3, 10, 16, 5.0, 5).data);
}

TEST(SynthFeatures, ClassMeansSitAtSeparation) {
  const auto fs = synth_features(3, 2000, 8, 10.0, 1);
  std::vector<std::vector<double>> mean(3, std::vector<double>(8, 0.0));
  for (std::size_t i = 0; i < fs.n_images; ++i) {
    for (std::size_t d = 0; d < 8; ++d) mean[fs.labels[i]][d] += fs.vec(i)[d] / 2000.0;
  }
  for (int c = 0; c < 3; ++c) {
    double norm = 0.0;
    for (double v : mean[c]) norm += v * v;
    EXPECT_NEAR(std::sqrt(norm), 10.0, 0.15);
  }
}

TEST(SynthFeatures, Rejections) {
  EXPECT_THROW(synth_features(5, 10, 4, 1.0, 0), ValidationError);
  EXPECT_THROW(synth_features(0, 10, 4, 1.0, 0), ValidationError);
}

TEST(SeededOrthonormal, RowsAreOrthonormal) {
  const auto basis = seeded_orthonormal(6, 10, 3);
  for (std::size_t a = 0; a < 6; ++a) {
    for (std::size_t b = 0; b < 6; ++b) {
      double dot = 0.0;
      for (std::size_t i = 0; i < 10; ++i) dot += basis[a][i] * basis[b][i];
      EXPECT_NEAR(dot, a == b ? 1.0 : 0.0, 1e-12);
    }
  }
}

TEST(StratifiedFolds, EqualPartitionOf75) {
  std::vector<std::uint32_t> labels(75);
  for (std::size_t i = 0; i < 75; ++i) labels[i] = static_cast<std::uint32_t>(i % 3);
  const auto folds = stratified_folds(labels, 5, 9);
  std::vector<std::size_t> sizes(5, 0);
  std::vector<std::vector<int>> per_class(5, std::vector<int>(3, 0));
  for (std::size_t i = 0; i < 75; ++i) {
    ++sizes[folds[i]];
    ++per_class[folds[i]][labels[i]];
  }
  EXPECT_EQ(sizes, (std::vector<std::size_t>{15, 15, 15, 15, 15}));
  for (const auto& f : per_class) EXPECT_EQ(f, (std::vector<int>{5, 5, 5}));
}

TEST(StratifiedFolds, TooManyFoldsRejected) {
  const std::vector<std::uint32_t> labels{0, 0, 1, 1, 1};
  EXPECT_THROW(stratified_folds(labels, 3, 0), ValidationError);
  EXPECT_THROW(stratified_folds(labels, 0, 0), ValidationError);
}

}  // namespace
}  // namespace tlh
