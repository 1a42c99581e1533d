#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "container.hpp"

namespace tlh {

inline constexpr std::size_t kConfidenceBins = 10;

// Confidence similarity of a new class to the pretrained classes: the mean,
// over the class's images, of the top softmax probability of the pretrained
// logits, in percent.
struct ClassSimilarity {
  std::string species;
  std::string name;
  double similarity_pct = 0.0;
  std::size_t nearest_class = 0;  // most frequent per-image argmax, lowest index on ties
  std::size_t n_images = 0;
  std::array<std::size_t, kConfidenceBins> histogram{};  // top-probability counts over [0, 1]
};

struct SpeciesSimilarity {
  std::string name;
  double mean_similarity_pct = 0.0;
};

struct SimilarityReport {
  std::vector<ClassSimilarity> classes;
  std::vector<SpeciesSimilarity> species;  // in order of first appearance
};

// `logits` must be dim 1000; every image (variant 0) contributes.
ClassSimilarity class_similarity(const FeatureSet& logits);

// Per-class scores for the labelled logits set; class_species[c] names the
// species of class c (may be empty).
SimilarityReport similarity_report(const FeatureSet& logits, const std::vector<std::string>& class_species);

}  // namespace tlh
