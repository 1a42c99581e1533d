#include "dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>

#include "error.hpp"
#include "rng.hpp"

namespace tlh {

using nlohmann::json;

std::vector<std::string> Manifest::class_names() const {
  std::vector<std::string> out;
  for (const auto& s : species) {
    for (const auto& c : s.classes) out.push_back(c.name);
  }
  return out;
}

std::vector<std::string> Manifest::class_species() const {
  std::vector<std::string> out;
  for (const auto& s : species) out.insert(out.end(), s.classes.size(), s.name);
  return out;
}

std::vector<Species> Manifest::species_layout() const {
  std::vector<Species> out;
  for (const auto& s : species) {
    Species sp{s.name, {}};
    for (const auto& c : s.classes) sp.classes.push_back(c.name);
    out.push_back(std::move(sp));
  }
  return out;
}

std::optional<std::size_t> Manifest::class_index(const std::string& name) const {
  const auto names = class_names();
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names.begin());
}

Manifest Manifest::from_json(const json& j) {
  try {
    Manifest m;
    m.backbone = j.value("backbone", std::string());
    for (const auto& js : j.at("species")) {
      ManifestSpecies s;
      s.name = js.at("name").get<std::string>();
      for (const auto& jc : js.at("classes")) {
        if (jc.is_string()) {
          s.classes.push_back({jc.get<std::string>(), ""});
        } else {
          s.classes.push_back({jc.at("name").get<std::string>(), jc.value("synset", std::string())});
        }
      }
      m.species.push_back(std::move(s));
    }
    if (j.contains("image_ids")) m.image_ids = j.at("image_ids").get<std::vector<std::string>>();
    for (const auto& [key, value] : j.items()) {
      if (key != "backbone" && key != "species" && key != "image_ids") m.extra[key] = value;
    }
    std::vector<std::string> names = m.class_names();
    std::sort(names.begin(), names.end());
    if (std::adjacent_find(names.begin(), names.end()) != names.end()) {
      throw DataError("manifest lists a class name twice");
    }
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
}

json Manifest::to_json() const {
  json j = extra;
  j["backbone"] = backbone;
  json sp = json::array();
  for (const auto& s : species) {
    json cls = json::array();
    for (const auto& c : s.classes) cls.push_back({{"name", c.name}, {"synset", c.synset}});
    sp.push_back({{"name", s.name}, {"classes", cls}});
  }
  j["species"] = sp;
  j["image_ids"] = image_ids;
  return j;
}

Manifest Manifest::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest '" + path.string() + "'");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw DataError("manifest '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

void Manifest::save(const std::filesystem::path& path) const {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp);
    if (!f) throw IoError("cannot write manifest '" + tmp.string() + "'");
    f << to_json().dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

std::filesystem::path default_manifest_path(const std::filesystem::path& container) {
  auto p = container;
  p.replace_extension(".json");
  return p;
}

Dataset::Dataset(Manifest manifest, std::vector<FeatureSet> tensors) : manifest_(std::move(manifest)) {
  const auto names = manifest_.class_names();
  for (auto& t : tensors) {
    if (t.has_labels()) {
      t.class_names = names;
      try {
        t.validate();
      } catch (const ValidationError& e) {
        throw DataError(std::string("tensor does not match the manifest: ") + e.what());
      }
    }
    tensors_.emplace(t.name, std::move(t));
  }
  // Every labelled image tensor describes the same images.
  const FeatureSet* reference = nullptr;
  for (const auto& [name, t] : tensors_) {
    if (!t.has_labels()) continue;
    if (reference == nullptr) {
      reference = &t;
      continue;
    }
    if (t.labels != reference->labels) {
      throw DataError("tensors '" + reference->name + "' and '" + name + "' disagree on image labels");
    }
  }
  if (reference != nullptr && !manifest_.image_ids.empty() && manifest_.image_ids.size() != reference->n_images) {
    throw DataError("manifest lists " + std::to_string(manifest_.image_ids.size()) + " images, tensors hold " +
                    std::to_string(reference->n_images));
  }
}

Dataset Dataset::load(const std::filesystem::path& container, std::optional<std::filesystem::path> manifest) {
  auto tensors = read_container(container);
  auto m = Manifest::load(manifest.value_or(default_manifest_path(container)));
  return Dataset(std::move(m), std::move(tensors));
}

const FeatureSet& Dataset::tensor(const std::string& name) const {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) throw DataError("container has no tensor '" + name + "'");
  return it->second;
}

std::vector<std::string> Dataset::tensor_names() const {
  std::vector<std::string> out;
  for (const auto& [name, t] : tensors_) out.push_back(name);
  return out;
}

std::optional<AffineParams> Dataset::pretrained(const char* weight_name, const char* bias_name) const {
  if (!has(weight_name) || !has(bias_name)) return std::nullopt;
  try {
    return affine_from_tensors(tensor(weight_name), tensor(bias_name));
  } catch (const Error& e) {
    throw DataError(std::string("pretrained layer unusable: ") + e.what());
  }
}

AffineParams Dataset::classifier() const {
  auto p = pretrained(kClassifierWeight, kClassifierBias);
  if (!p) throw DataError("container has no pretrained classifier (fc_cls.weight / fc_cls.bias)");
  return std::move(*p);
}

std::vector<std::size_t> Dataset::images_of(std::size_t class_index) const {
  const FeatureSet* ref = nullptr;
  for (const char* name : {kClassifierInput, kBaselineInput, kLogits}) {
    if (has(name)) {
      ref = &tensor(name);
      break;
    }
  }
  if (ref == nullptr) throw DataError("container has no labelled image tensor");
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < ref->n_images; ++i) {
    if (ref->labels[i] == class_index) ids.push_back(i);
  }
  return ids;
}

namespace {

std::vector<std::vector<std::size_t>> class_members(const Dataset& ds, const ExperimentClasses& classes) {
  std::vector<std::vector<std::size_t>> members;
  std::vector<std::string> missing;
  for (const auto& c : classes.classes) {
    const auto idx = ds.manifest().class_index(c.name);
    if (!idx) {
      missing.push_back(c.name);
      members.emplace_back();
      continue;
    }
    members.push_back(ds.images_of(*idx));
    if (members.back().empty()) missing.push_back(c.name);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw ConfigError("no features for class(es): " + list);
  }
  return members;
}

FeatureSet relabelled(const FeatureSet& src, const std::vector<std::size_t>& ids,
                      const std::vector<std::uint32_t>& labels, const std::vector<std::string>& names) {
  FeatureSet out = src.subset(ids);
  out.labels = labels;
  out.class_names = names;
  return out;
}

// relu(affine(x, fc_pen)) for every image and variant of fs.
std::vector<float> penultimate_output(const FeatureSet& fs, const AffineParams& fc_pen) {
  const std::size_t rows = fs.n_images * fs.n_variants;
  std::vector<float> result(rows * fc_pen.fan_out());
  constexpr std::size_t kChunk = 512;
  DenseMatrix x, y;
  for (std::size_t start = 0; start < rows; start += kChunk) {
    const std::size_t end = std::min(rows, start + kChunk);
    x.resize(end - start, fs.dim);
    std::memcpy(x.data(), fs.data.data() + start * fs.dim, (end - start) * fs.dim * sizeof(float));
    affine_forward(x, fc_pen, y);
    float* dst = result.data() + start * fc_pen.fan_out();
    for (std::size_t i = 0; i < y.size(); ++i) dst[i] = std::max(y.values()[i], 0.0f);
  }
  return result;
}

}  // namespace

SplitSpec resolve_split(const Dataset& ds, const ExperimentClasses& classes, SplitSpec spec) {
  if (spec.images_per_class != 0) return spec;
  const auto members = class_members(ds, classes);
  std::size_t smallest = members.front().size();
  for (const auto& m : members) smallest = std::min(smallest, m.size());
  spec.images_per_class = smallest;
  return spec;
}

TaskSets make_task_sets(const Dataset& ds, const ExperimentClasses& classes, const SplitSpec& split,
                        const std::string& input_tensor) {
  const auto members = class_members(ds, classes);
  std::vector<ClassSize> sizes;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < members.size(); ++c) {
    sizes.push_back({classes.classes[c].name, members[c].size()});
    names.push_back(classes.classes[c].name);
  }
  const Split parts = make_splits(split, sizes);

  std::vector<std::size_t> train_ids, val_ids, test_ids;
  std::vector<std::uint32_t> train_labels, val_labels, test_labels;
  for (std::size_t c = 0; c < members.size(); ++c) {
    const auto label = static_cast<std::uint32_t>(c);
    for (auto i : parts.classes[c].train_ids) train_ids.push_back(members[c][i]);
    for (auto i : parts.classes[c].val_ids) val_ids.push_back(members[c][i]);
    for (auto i : parts.classes[c].test_ids) test_ids.push_back(members[c][i]);
    train_labels.insert(train_labels.end(), parts.classes[c].train_ids.size(), label);
    val_labels.insert(val_labels.end(), parts.classes[c].val_ids.size(), label);
    test_labels.insert(test_labels.end(), parts.classes[c].test_ids.size(), label);
  }

  const FeatureSet& base = ds.tensor(input_tensor);
  if (base.n_variants != 1) {
    throw DataError("tensor '" + input_tensor + "' must hold one centre-crop variant per image");
  }
  const std::string aug_name = input_tensor + kAugmentedSuffix;
  const FeatureSet& train_src = ds.has(aug_name) ? ds.tensor(aug_name) : base;
  if (train_src.n_images != base.n_images || train_src.dim != base.dim) {
    throw DataError("tensor '" + aug_name + "' does not match '" + input_tensor + "'");
  }
  TaskSets sets;
  sets.train = relabelled(train_src, train_ids, train_labels, names);
  sets.val = relabelled(base, val_ids, val_labels, names);
  sets.test = relabelled(base, test_ids, test_labels, names);
  return sets;
}

std::pair<std::vector<FeatureSet>, Manifest> synth_dataset(const SynthOptions& o) {
  if (o.species.empty() || o.classes_per_species == 0 || o.images_per_class == 0) {
    throw ValidationError("synthetic dataset needs species, classes and images");
  }
  if (o.separation.empty()) throw ValidationError("synthetic dataset needs at least one separation");
  if (o.variants == 0) throw ValidationError("variant count must be >= 1");
  const bool wide = o.backbone == "VGG19";
  const std::size_t dim = o.dim != 0 ? o.dim : (wide ? 4096 : 512);
  const std::size_t n_classes = o.species.size() * o.classes_per_species;
  const std::size_t n_images = n_classes * o.images_per_class;

  Manifest m;
  m.backbone = o.backbone;
  m.extra["generator"] = {{"kind", "synthetic"}, {"seed", o.seed}, {"dim", dim}};
  for (std::size_t s = 0; s < o.species.size(); ++s) {
    ManifestSpecies sp{o.species[s], {}};
    for (std::size_t c = 0; c < o.classes_per_species; ++c) {
      std::string name = o.species[s];
      std::transform(name.begin(), name.end(), name.begin(), [](unsigned char ch) { return std::tolower(ch); });
      sp.classes.push_back({name + "_" + std::to_string(c + 1), ""});
    }
    m.species.push_back(std::move(sp));
  }
  const auto names = m.class_names();
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t i = 0; i < o.images_per_class; ++i) m.image_ids.push_back(names[c] + "/" + std::to_string(i));
  }

  const auto centres = seeded_orthonormal(n_classes, dim, o.seed);
  FeatureSet feats;
  feats.name = kBaselineInput;
  feats.n_images = n_images;
  feats.dim = dim;
  feats.data.resize(n_images * dim);
  feats.labels.resize(n_images);
  Rng noise = Rng(o.seed).derive("samples");
  for (std::size_t c = 0; c < n_classes; ++c) {
    const double sep = o.separation[(c / o.classes_per_species) % o.separation.size()];
    for (std::size_t i = 0; i < o.images_per_class; ++i) {
      const std::size_t img = c * o.images_per_class + i;
      feats.labels[img] = static_cast<std::uint32_t>(c);
      float* dst = feats.data.data() + img * dim;
      for (std::size_t d = 0; d < dim; ++d) dst[d] = static_cast<float>(sep * centres[c][d] + noise.normal());
    }
  }

  Rng weights = Rng(o.seed).derive("pretrained");
  const AffineParams fc_cls = init_uniform(dim, kPretrainedClasses, weights);
  std::optional<AffineParams> fc_pen;
  if (wide) fc_pen = init_uniform(dim, dim, weights);

  // The classifier tap sits behind the penultimate layer when there is one.
  const auto classifier_view = [&](const FeatureSet& fs) {
    FeatureSet view = fs;
    if (fc_pen) view.data = penultimate_output(fs, *fc_pen);
    return view;
  };

  FeatureSet cls_in = classifier_view(feats);
  cls_in.name = kClassifierInput;
  FeatureSet logits;
  logits.name = kLogits;
  logits.n_images = n_images;
  logits.dim = kPretrainedClasses;
  logits.labels = feats.labels;
  {
    const DenseMatrix out = affine_forward(DenseMatrix(n_images, dim, cls_in.data), fc_cls);
    logits.data.assign(out.values().begin(), out.values().end());
  }

  std::vector<FeatureSet> out;
  if (o.variants > 1) {
    Rng jitter = Rng(o.seed).derive("augment");
    FeatureSet aug;
    aug.n_images = n_images;
    aug.n_variants = o.variants;
    aug.dim = dim;
    aug.labels = feats.labels;
    aug.data.resize(n_images * o.variants * dim);
    for (std::size_t i = 0; i < n_images; ++i) {
      for (std::size_t v = 0; v < o.variants; ++v) {
        float* dst = aug.data.data() + (i * o.variants + v) * dim;
        const float* src = feats.data.data() + i * dim;
        for (std::size_t d = 0; d < dim; ++d) {
          dst[d] = src[d] + static_cast<float>(o.augment_noise * jitter.normal());
        }
      }
    }
    FeatureSet cls_aug = classifier_view(aug);
    aug.name = std::string(kBaselineInput) + kAugmentedSuffix;
    cls_aug.name = std::string(kClassifierInput) + kAugmentedSuffix;
    out.push_back(std::move(aug));
    out.push_back(std::move(cls_aug));
  }

  out.push_back(std::move(feats));
  out.push_back(std::move(cls_in));
  out.push_back(std::move(logits));
  auto [cw, cb] = affine_to_tensors(fc_cls, "fc_cls");
  out.push_back(std::move(cw));
  out.push_back(std::move(cb));
  if (fc_pen) {
    auto [pw, pb] = affine_to_tensors(*fc_pen, "fc_pen");
    out.push_back(std::move(pw));
    out.push_back(std::move(pb));
  }
  return {std::move(out), std::move(m)};
}

double tap_consistency_error(const Dataset& ds) {
  const auto fc_cls = ds.classifier();
  const FeatureSet& in = ds.tensor(kClassifierInput);
  const FeatureSet& logits = ds.tensor(kLogits);
  if (in.n_images != logits.n_images || logits.dim != fc_cls.fan_out() || in.dim != fc_cls.fan_in()) {
    throw DataError("cls_in, logits and fc_cls shapes are inconsistent");
  }
  double worst = 0.0;
  DenseMatrix x;
  DenseMatrix out;
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < in.n_images; start += kChunk) {
    const std::size_t end = std::min(in.n_images, start + kChunk);
    x.resize(end - start, in.dim);
    for (std::size_t i = start; i < end; ++i) {
      const auto v = in.vec(i, 0);
      std::memcpy(x.data() + (i - start) * in.dim, v.data(), in.dim * sizeof(float));
    }
    affine_forward(x, fc_cls, out);
    for (std::size_t i = start; i < end; ++i) {
      const auto ref = logits.vec(i, 0);
      for (std::size_t j = 0; j < ref.size(); ++j) {
        worst = std::max(worst, std::fabs(static_cast<double>(ref[j]) - out(i - start, j)));
      }
    }
  }
  return worst;
}

}  // namespace tlh
