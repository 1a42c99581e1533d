#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "container.hpp"
#include "heads.hpp"
#include "protocol.hpp"

namespace tlh {

// Tensor names written by the feature exporter. Each is labelled with the
// global class index (manifest order) and holds one centre-crop variant per
// image. "<name>.aug", when present, holds the augmented training variants
// for the same images in the same order.
inline constexpr const char* kBaselineInput = "baseline_in";
inline constexpr const char* kClassifierInput = "cls_in";
inline constexpr const char* kLogits = "logits";
inline constexpr const char* kAugmentedSuffix = ".aug";

struct ManifestClass {
  std::string name;
  std::string synset;
};

struct ManifestSpecies {
  std::string name;
  std::vector<ManifestClass> classes;
};

// Sidecar JSON describing a feature container.
struct Manifest {
  std::string backbone;
  std::vector<ManifestSpecies> species;
  std::vector<std::string> image_ids;  // payload order
  nlohmann::json extra = nlohmann::json::object();  // passthrough (normalization, exporter settings)

  std::vector<std::string> class_names() const;    // flattened, species-major
  std::vector<std::string> class_species() const;  // species of each flattened class
  std::vector<Species> species_layout() const;
  std::optional<std::size_t> class_index(const std::string& name) const;

  static Manifest from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  static Manifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

// Default manifest location: the container path with a .json extension.
std::filesystem::path default_manifest_path(const std::filesystem::path& container);

class Dataset {
 public:
  Dataset(Manifest manifest, std::vector<FeatureSet> tensors);
  static Dataset load(const std::filesystem::path& container, std::optional<std::filesystem::path> manifest = {});

  const Manifest& manifest() const noexcept { return manifest_; }
  bool has(const std::string& name) const { return tensors_.count(name) != 0; }
  const FeatureSet& tensor(const std::string& name) const;
  std::vector<std::string> tensor_names() const;

  std::optional<AffineParams> pretrained(const char* weight_name, const char* bias_name) const;
  AffineParams classifier() const;  // fc_cls, required
  std::optional<AffineParams> penultimate() const { return pretrained(kPenultimateWeight, kPenultimateBias); }

  // Input tensor each head kind consumes.
  static const char* input_tensor(HeadKind kind) {
    return kind == HeadKind::kProposed ? kClassifierInput : kBaselineInput;
  }

  // Image indices (payload order) of each class in the base tensor.
  std::vector<std::size_t> images_of(std::size_t class_index) const;

 private:
  Manifest manifest_;
  std::map<std::string, FeatureSet> tensors_;
};

struct TaskSets {
  FeatureSet train;  // augmented variants when available
  FeatureSet val;
  FeatureSet test;
};

// Resolves J when the spec leaves it at 0: the smallest selected class size.
SplitSpec resolve_split(const Dataset& ds, const ExperimentClasses& classes, SplitSpec spec);

// Train/val/test sets for one experiment with labels renumbered 0..n-1 in
// the order of `classes`.
TaskSets make_task_sets(const Dataset& ds, const ExperimentClasses& classes, const SplitSpec& split,
                        const std::string& input_tensor);

struct SynthOptions {
  std::string backbone = "VGG19";
  std::vector<std::string> species = {"Bird", "Fruit", "Flower", "Pepper"};
  std::vector<double> separation = {6.0, 5.0, 4.0, 3.0};  // per species, cycled
  std::size_t classes_per_species = 5;
  std::size_t images_per_class = 500;
  std::size_t dim = 0;  // 0: 4096 for VGG19, 512 otherwise
  std::size_t variants = 1;
  double augment_noise = 0.1;
  std::uint64_t seed = 0;
};

// Gaussian-blob stand-in for an exported dataset, including synthetic
// pretrained layers and logits consistent with them.
std::pair<std::vector<FeatureSet>, Manifest> synth_dataset(const SynthOptions& options);

// Largest |logits - affine(cls_in, fc_cls)| over all elements.
double tap_consistency_error(const Dataset& ds);

}  // namespace tlh
