#include "protocol.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "error.hpp"
#include "rng.hpp"

namespace tlh {
namespace {

std::size_t exact_count(double value, const char* what) {
  const double rounded = std::round(value);
  if (std::fabs(value - rounded) > 1e-9 * std::max(1.0, std::fabs(value)) || rounded < 0.0) {
    throw ValidationError(std::string("split: ") + what + " = " + std::to_string(value) +
                          " is not a whole number of images");
  }
  return static_cast<std::size_t>(rounded);
}

}  // namespace

void SplitSpec::validate() const {
  if (!(f > 0.0 && f < 2.0 / 3.0)) {
    throw ValidationError("split: f must lie in (0, 2/3), got " + std::to_string(f));
  }
  if (images_per_class == 0) throw ValidationError("split: J must be positive");
  const auto train = exact_count(f * static_cast<double>(images_per_class), "f*J");
  if (train == 0) throw ValidationError("split: f*J is zero");
  if (train % 2 != 0) {
    throw ValidationError("split: f*J/2 = " + std::to_string(train) + "/2 is not a whole number of images");
  }
}

std::size_t SplitSpec::train_count() const {
  validate();
  return exact_count(f * static_cast<double>(images_per_class), "f*J");
}

std::size_t SplitSpec::val_count() const { return train_count() / 2; }

Split make_splits(const SplitSpec& spec, std::span<const ClassSize> class_sizes) {
  const std::size_t n_train = spec.train_count();
  const std::size_t n_val = spec.val_count();
  Split split;
  split.classes.reserve(class_sizes.size());
  for (const auto& cls : class_sizes) {
    if (cls.size < n_train + n_val) {
      throw ValidationError("split: class '" + cls.name + "' has " + std::to_string(cls.size) +
                            " images, needs at least " + std::to_string(n_train + n_val));
    }
    std::vector<std::size_t> ids(cls.size);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    Rng rng(Rng::mix_seed(spec.seed, cls.name));
    rng.shuffle(std::span<std::size_t>(ids));
    ClassSplit cs;
    cs.train_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    cs.val_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                      ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    cs.test_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
    split.classes.push_back(std::move(cs));
  }
  return split;
}

std::string ExperimentClasses::group() const {
  return request.kind == ExperimentKind::kAType ? request.species : std::string("Mixed");
}

ExperimentClasses compose_experiment(const ExperimentRequest& request, std::span<const Species> species,
                                     std::uint64_t seed) {
  ExperimentClasses out;
  out.request = request;
  if (request.kind == ExperimentKind::kAType) {
    if (request.n < 3 || request.n > 5) {
      throw ValidationError("A-type experiments use 3, 4 or 5 classes, got " + std::to_string(request.n));
    }
    const auto it = std::find_if(species.begin(), species.end(),
                                 [&](const Species& s) { return s.name == request.species; });
    if (it == species.end()) throw ConfigError("unknown species '" + request.species + "'");
    if (it->classes.size() < request.n) {
      throw ConfigError("species '" + it->name + "' has only " + std::to_string(it->classes.size()) +
                        " classes");
    }
    for (std::size_t i = 0; i < request.n; ++i) out.classes.push_back({it->name, it->classes[i]});
    return out;
  }

  if (species.empty()) throw ConfigError("B-type experiment needs at least one species");
  if (request.k == 0 || request.k % species.size() != 0) {
    throw ValidationError("B-type k = " + std::to_string(request.k) + " is not a multiple of the " +
                          std::to_string(species.size()) + " species");
  }
  const std::size_t per_species = request.k / species.size();
  std::set<std::string> names;
  for (const auto& s : species) {
    if (s.classes.size() < per_species) {
      throw ConfigError("species '" + s.name + "' has fewer than " + std::to_string(per_species) + " classes");
    }
    std::vector<std::size_t> order(s.classes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(Rng::mix_seed(seed, "btype/" + s.name));
    rng.shuffle(std::span<std::size_t>(order));
    order.resize(per_species);
    std::sort(order.begin(), order.end());
    for (auto idx : order) {
      if (!names.insert(s.classes[idx]).second) {
        throw ConfigError("class name '" + s.classes[idx] + "' appears in more than one species");
      }
      out.classes.push_back({s.name, s.classes[idx]});
    }
  }
  return out;
}

std::vector<std::vector<double>> seeded_orthonormal(std::size_t n, std::size_t dim, std::uint64_t seed) {
  if (dim < n) {
    throw ValidationError("cannot place " + std::to_string(n) + " orthonormal centres in " +
                          std::to_string(dim) + " dimensions");
  }
  Rng rng(Rng::mix_seed(seed, "centres"));
  std::vector<std::vector<double>> basis;
  basis.reserve(n);
  while (basis.size() < n) {
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal();
    // Two Gram-Schmidt passes for numerical orthogonality.
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& b : basis) {
        const double dot = std::inner_product(v.begin(), v.end(), b.begin(), 0.0);
        for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * b[i];
      }
    }
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (norm < 1e-6) continue;
    for (double& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  return basis;
}

FeatureSet synth_features(std::size_t n_classes, std::size_t per_class, std::size_t dim, double separation,
                          std::uint64_t seed) {
  if (n_classes == 0 || per_class == 0 || dim == 0) {
    throw ValidationError("synth_features: class count, images per class and dim must be >= 1");
  }
  if (!std::isfinite(separation)) throw ValidationError("synth_features: separation must be finite");
  const auto centres = seeded_orthonormal(n_classes, dim, seed);
  FeatureSet fs;
  fs.name = "synthetic";
  fs.n_images = n_classes * per_class;
  fs.n_variants = 1;
  fs.dim = dim;
  fs.data.resize(fs.n_images * dim);
  fs.labels.resize(fs.n_images);
  for (std::size_t c = 0; c < n_classes; ++c) fs.class_names.push_back("class_" + std::to_string(c));

  Rng rng(Rng::mix_seed(seed, "samples"));
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::size_t img = c * per_class + i;
      fs.labels[img] = static_cast<std::uint32_t>(c);
      float* dst = fs.data.data() + img * dim;
      for (std::size_t d = 0; d < dim; ++d) {
        dst[d] = static_cast<float>(separation * centres[c][d] + rng.normal());
      }
    }
  }
  return fs;
}

std::vector<std::size_t> stratified_folds(std::span<const std::uint32_t> labels, std::size_t folds,
                                          std::uint64_t seed) {
  if (folds == 0) throw ValidationError("folds must be >= 1");
  std::map<std::uint32_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<std::size_t> fold_of(labels.size(), 0);
  for (auto& [label, items] : by_class) {
    if (items.size() < folds) {
      throw ValidationError(std::to_string(folds) + " folds exceed the " + std::to_string(items.size()) +
                            " items of class " + std::to_string(label));
    }
    Rng rng(Rng::mix_seed(seed, "fold/" + std::to_string(label)));
    rng.shuffle(std::span<std::size_t>(items));
    for (std::size_t r = 0; r < items.size(); ++r) fold_of[items[r]] = r % folds;
  }
  return fold_of;
}

}  // namespace tlh
