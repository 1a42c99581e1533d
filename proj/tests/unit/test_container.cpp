#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "container.hpp"
#include "error.hpp"
#include "rng.hpp"

namespace tlh {
namespace {

FeatureSet random_set(Rng& rng, const std::string& name) {
  FeatureSet fs;
  fs.name = name;
  fs.n_images = rng.below(6);
  fs.n_variants = 1 + rng.below(3);
  fs.dim = rng.below(9);
  fs.data.resize(fs.n_images * fs.n_variants * fs.dim);
  for (auto& v : fs.data) v = static_cast<float>(rng.normal() * 100.0);
  if (rng.below(2) == 1) {
    fs.labels.resize(fs.n_images);
    for (auto& l : fs.labels) l = static_cast<std::uint32_t>(rng.below(65536));
  }
  return fs;
}

std::vector<std::byte> bytes_of(std::initializer_list<int> values) {
  std::vector<std::byte> out;
  for (int v : values) out.push_back(static_cast<std::byte>(v));
  return out;
}

void append_u32(std::vector<std::byte>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
}

std::vector<std::byte> header(std::uint32_t count) {
  auto b = bytes_of({'F', 'T', 'B', '1'});
  append_u32(b, 1);
  append_u32(b, count);
  return b;
}

ParseFailure failure_of(std::span<const std::byte> bytes, std::uint64_t* offset = nullptr) {
  try {
    decode_container(bytes);
  } catch (const ParseError& e) {
    if (offset) *offset = e.offset();
    return e.failure();
  }
  ADD_FAILURE() << "decode unexpectedly succeeded";
  return ParseFailure::kBadMagic;
}

TEST(Container, EncodesDocumentedLayout) {
  FeatureSet fs;
  fs.name = "ab";
  fs.n_images = 2;
  fs.dim = 1;
  fs.data = {1.0f, -2.0f};
  fs.labels = {3, 258};
  const std::vector<FeatureSet> tensors{fs};
  const auto bytes = encode_container(tensors);

  auto want = header(1);
  want.push_back(std::byte{2});
  want.push_back(std::byte{0});
  want.push_back(std::byte{'a'});
  want.push_back(std::byte{'b'});
  append_u32(want, 2);
  append_u32(want, 1);
  append_u32(want, 1);
  want.push_back(std::byte{1});
  for (int v : {3, 0, 2, 1}) want.push_back(static_cast<std::byte>(v));
  for (float f : fs.data) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    append_u32(want, u);
  }
  EXPECT_EQ(bytes, want);
}

TEST(Container, RandomRoundTrips) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<FeatureSet> tensors;
    const std::size_t count = rng.below(4);
    for (std::size_t i = 0; i < count; ++i) tensors.push_back(random_set(rng, "t" + std::to_string(i)));
    const auto decoded = decode_container(encode_container(tensors));
    ASSERT_EQ(decoded, tensors) << "trial " << trial;
  }
}

TEST(Container, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "tlh_container_test";
  std::filesystem::create_directories(dir);
  Rng rng(2);
  FeatureSet fs = random_set(rng, "features");
  write_feature_set(dir / "f.ftb", fs);
  EXPECT_EQ(read_feature_set(dir / "f.ftb"), fs);
  std::filesystem::remove_all(dir);
}

TEST(Container, BadMagic) {
  auto b = header(0);
  std::memcpy(b.data(), "XXXX", 4);
  std::uint64_t offset = 99;
  EXPECT_EQ(failure_of(b, &offset), ParseFailure::kBadMagic);
  EXPECT_EQ(offset, 0u);
}

TEST(Container, BadVersion) {
  auto b = bytes_of({'F', 'T', 'B', '1'});
  append_u32(b, 2);
  append_u32(b, 0);
  EXPECT_EQ(failure_of(b), ParseFailure::kBadVersion);
}

TEST(Container, TruncatedPayloadNamesOffset) {
  FeatureSet fs;
  fs.name = "x";
  fs.n_images = 3;
  fs.dim = 4;
  fs.data.assign(12, 1.0f);
  const std::vector<FeatureSet> tensors{fs};
  auto b = encode_container(tensors);
  b.resize(b.size() - 5);
  std::uint64_t offset = 0;
  EXPECT_EQ(failure_of(b, &offset), ParseFailure::kTruncated);
  EXPECT_GT(offset, 0u);
  EXPECT_LE(offset, b.size());
  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, std::size_t{14}}) {
    auto shorter = encode_container(tensors);
    shorter.resize(cut);
    const auto f = failure_of(shorter);
    EXPECT_TRUE(f == ParseFailure::kTruncated || f == ParseFailure::kBadMagic) << cut;
  }
}

TEST(Container, DimOverflow) {
  auto b = header(1);
  b.push_back(std::byte{1});
  b.push_back(std::byte{0});
  b.push_back(std::byte{'x'});
  const std::uint64_t shape_offset = b.size();
  append_u32(b, 0xffffffffu);
  append_u32(b, 0xffffffffu);
  append_u32(b, 0xffffffffu);
  b.push_back(std::byte{0});
  std::uint64_t offset = 0;
  EXPECT_EQ(failure_of(b, &offset), ParseFailure::kDimOverflow);
  EXPECT_EQ(offset, shape_offset);
}

TEST(Container, FailuresAreDistinct) {
  auto flag = header(1);
  flag.push_back(std::byte{1});
  flag.push_back(std::byte{0});
  flag.push_back(std::byte{'x'});
  append_u32(flag, 0);
  append_u32(flag, 1);
  append_u32(flag, 0);
  flag.push_back(std::byte{7});
  EXPECT_EQ(failure_of(flag), ParseFailure::kBadFlag);

  auto trailing = header(0);
  trailing.push_back(std::byte{0});
  EXPECT_EQ(failure_of(trailing), ParseFailure::kTrailingBytes);

  auto shape = header(1);
  shape.push_back(std::byte{1});
  shape.push_back(std::byte{0});
  shape.push_back(std::byte{'x'});
  append_u32(shape, 1);
  append_u32(shape, 0);
  append_u32(shape, 1);
  shape.push_back(std::byte{0});
  EXPECT_EQ(failure_of(shape), ParseFailure::kBadShape);
}

TEST(Container, EncoderRejectsUnrepresentableSets) {
  FeatureSet fs;
  fs.name = "x";
  fs.n_images = 1;
  fs.dim = 1;
  fs.data = {0.0f};
  fs.labels = {70000};
  EXPECT_THROW(encode_container(std::vector<FeatureSet>{fs}), ValidationError);
  fs.labels = {};
  fs.name = "";
  EXPECT_THROW(encode_container(std::vector<FeatureSet>{fs}), ValidationError);
  fs.name = "x";
  EXPECT_THROW(encode_container(std::vector<FeatureSet>{fs, fs}), ValidationError);
}

TEST(Container, MissingFileIsIoError) {
  EXPECT_THROW(read_container("/nonexistent/dir/file.ftb"), IoError);
}

TEST(FeatureSet, ValidateAndSubset) {
  FeatureSet fs;
  fs.name = "s";
  fs.n_images = 3;
  fs.n_variants = 2;
  fs.dim = 2;
  for (int i = 0; i < 12; ++i) fs.data.push_back(static_cast<float>(i));
  fs.labels = {0, 1, 0};
  fs.class_names = {"a", "b"};
  EXPECT_NO_THROW(fs.validate());
  EXPECT_EQ(fs.vec(1, 1)[0], 6.0f);

  const std::vector<std::size_t> ids{2, 0};
  const FeatureSet sub = fs.subset(ids);
  EXPECT_EQ(sub.n_images, 2u);
  EXPECT_EQ(sub.labels, (std::vector<std::uint32_t>{0, 0}));
  EXPECT_EQ(sub.vec(0, 1)[1], 11.0f);
  EXPECT_EQ(sub.vec(1, 0)[0], 0.0f);

  FeatureSet bad = fs;
  bad.data.pop_back();
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = fs;
  bad.labels[1] = 2;
  EXPECT_THROW(bad.validate(), ValidationError);
}

}  // namespace
}  // namespace tlh
