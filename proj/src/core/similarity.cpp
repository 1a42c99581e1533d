#include "similarity.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "error.hpp"
#include "heads.hpp"

namespace tlh {

ClassSimilarity class_similarity(const FeatureSet& logits) {
  logits.validate();
  if (logits.dim != kPretrainedClasses) {
    throw ValidationError("similarity needs 1000 pretrained logits per image, got " + std::to_string(logits.dim));
  }
  if (logits.n_images == 0) throw ValidationError("similarity needs at least one image");

  ClassSimilarity out;
  out.n_images = logits.n_images;
  std::vector<std::size_t> votes(logits.dim, 0);
  double sum_top = 0.0;
  for (std::size_t i = 0; i < logits.n_images; ++i) {
    const auto row = logits.vec(i, 0);
    const auto top_it = std::max_element(row.begin(), row.end());
    const double top = *top_it;
    double denom = 0.0;
    for (float v : row) denom += std::exp(static_cast<double>(v) - top);
    const double p = 1.0 / denom;
    sum_top += p;
    ++votes[static_cast<std::size_t>(top_it - row.begin())];
    const auto bin = std::min<std::size_t>(kConfidenceBins - 1, static_cast<std::size_t>(p * kConfidenceBins));
    ++out.histogram[bin];
  }
  out.similarity_pct = 100.0 * sum_top / static_cast<double>(logits.n_images);
  out.nearest_class = static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
  return out;
}

SimilarityReport similarity_report(const FeatureSet& logits, const std::vector<std::string>& class_species) {
  logits.validate();
  if (!logits.has_labels()) throw ValidationError("similarity report needs labelled logits");
  const std::size_t n_classes = logits.class_names.empty()
                                    ? (*std::max_element(logits.labels.begin(), logits.labels.end()) + 1u)
                                    : logits.class_names.size();
  std::vector<std::vector<std::size_t>> members(n_classes);
  for (std::size_t i = 0; i < logits.n_images; ++i) members[logits.labels[i]].push_back(i);

  SimilarityReport report;
  std::vector<std::string> species_order;
  std::map<std::string, std::vector<double>> by_species;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (members[c].empty()) continue;
    auto cs = class_similarity(logits.subset(members[c]));
    cs.name = c < logits.class_names.size() ? logits.class_names[c] : "class_" + std::to_string(c);
    cs.species = c < class_species.size() ? class_species[c] : std::string();
    if (!by_species.count(cs.species)) species_order.push_back(cs.species);
    by_species[cs.species].push_back(cs.similarity_pct);
    report.classes.push_back(std::move(cs));
  }
  for (const auto& name : species_order) {
    const auto& v = by_species[name];
    double sum = 0.0;
    for (double x : v) sum += x;
    report.species.push_back({name, sum / static_cast<double>(v.size())});
  }
  return report;
}

}  // namespace tlh
