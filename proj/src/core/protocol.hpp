#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "container.hpp"

namespace tlh {

// Per-class partition: f*J images for training, f*J/2 for validation and
// every remaining image for testing.
struct SplitSpec {
  double f = 0.10;
  std::size_t images_per_class = 500;  // J
  std::uint64_t seed = 0;

  std::size_t train_count() const;  // validated f*J
  std::size_t val_count() const;    // validated f*J/2
  void validate() const;
};

struct ClassSize {
  std::string name;
  std::size_t size = 0;
};

struct ClassSplit {
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> val_ids;
  std::vector<std::size_t> test_ids;
};

struct Split {
  std::vector<ClassSplit> classes;  // same order as the class_sizes argument
};

// Ids are positions within each class. The shuffle for a class is seeded by
// (spec.seed, class name), so classes do not influence each other.
Split make_splits(const SplitSpec& spec, std::span<const ClassSize> class_sizes);

struct Species {
  std::string name;
  std::vector<std::string> classes;
};

enum class ExperimentKind { kAType, kBType };

struct ExperimentRequest {
  ExperimentKind kind = ExperimentKind::kAType;
  std::string species;  // A-type only
  std::size_t n = 3;    // A-type class count
  std::size_t k = 12;   // B-type total class count, k / n_species per species
};

struct SelectedClass {
  std::string species;
  std::string name;
};

struct ExperimentClasses {
  ExperimentRequest request;
  std::vector<SelectedClass> classes;

  // "Bird" for A-type, "Mixed" for B-type.
  std::string group() const;
};

ExperimentClasses compose_experiment(const ExperimentRequest& request, std::span<const Species> species,
                                     std::uint64_t seed);

// Gaussian blobs (sigma 1) centred at separation * u_c, with u_c seeded
// orthonormal directions. Images are grouped by class; one variant.
FeatureSet synth_features(std::size_t n_classes, std::size_t per_class, std::size_t dim, double separation,
                          std::uint64_t seed);

// Orthonormal rows [n x dim] from Gram-Schmidt on seeded Gaussian vectors.
std::vector<std::vector<double>> seeded_orthonormal(std::size_t n, std::size_t dim, std::uint64_t seed);

// Stratified k-fold assignment: result[i] is the fold of item i. Within each
// class the items are shuffled and dealt round-robin.
std::vector<std::size_t> stratified_folds(std::span<const std::uint32_t> labels, std::size_t folds,
                                          std::uint64_t seed);

}  // namespace tlh
