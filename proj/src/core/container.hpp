#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace tlh {

// Dense float tensor [n_images x n_variants x dim] with optional class labels.
// The variant axis holds augmentation snapshots of the same image; evaluation
// sets carry a single variant.
struct FeatureSet {
  std::string name;
  std::size_t n_images = 0;
  std::size_t n_variants = 1;
  std::size_t dim = 0;
  std::vector<float> data;
  std::vector<std::uint32_t> labels;  // empty for unlabeled tensors (weights)
  std::vector<std::string> class_names;

  bool has_labels() const noexcept { return !labels.empty(); }
  std::size_t n_classes() const noexcept { return class_names.size(); }

  std::span<const float> vec(std::size_t image, std::size_t variant = 0) const {
    return {data.data() + (image * n_variants + variant) * dim, dim};
  }

  // Throws ValidationError when any invariant is broken.
  void validate() const;

  // Images at `ids`, in that order, keeping every variant.
  FeatureSet subset(std::span<const std::size_t> ids) const;

  friend bool operator==(const FeatureSet&, const FeatureSet&) = default;
};

// FTB1 container: little-endian, a header followed by named tensors.
//   "FTB1" | u32 version=1 | u32 tensor_count
//   per tensor: u16 name_len | name (UTF-8) | u32 N | u32 V | u32 D |
//               u8 has_labels | [N x u16 labels] | N*V*D x f32
// Class names are not stored; they come from the sidecar manifest.
inline constexpr std::uint32_t kContainerVersion = 1;

std::vector<std::byte> encode_container(std::span<const FeatureSet> tensors);
std::vector<FeatureSet> decode_container(std::span<const std::byte> bytes);

// Writes to a temporary file next to `path` and renames it into place.
void write_container(const std::filesystem::path& path, std::span<const FeatureSet> tensors);
std::vector<FeatureSet> read_container(const std::filesystem::path& path);

void write_feature_set(const std::filesystem::path& path, const FeatureSet& fs);
FeatureSet read_feature_set(const std::filesystem::path& path);

}  // namespace tlh
