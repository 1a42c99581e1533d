#include "heads.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>

#include "error.hpp"

namespace tlh {

const char* to_string(HeadKind kind) noexcept {
  return kind == HeadKind::kProposed ? "proposed" : "baseline";
}

HeadKind parse_head_kind(const std::string& s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "proposed" || lower == "p") return HeadKind::kProposed;
  if (lower == "baseline" || lower == "b") return HeadKind::kBaseline;
  throw ConfigError("unknown head kind '" + s + "' (expected proposed or baseline)");
}

AffineParams affine_from_tensors(const FeatureSet& weight, const FeatureSet& bias) {
  weight.validate();
  bias.validate();
  if (weight.n_variants != 1 || bias.n_variants != 1) {
    throw ShapeError("pretrained tensors '" + weight.name + "'/'" + bias.name + "' must have one variant");
  }
  const std::size_t fan_out = weight.n_images, fan_in = weight.dim;
  if (bias.n_images * bias.dim != fan_out) {
    throw ShapeError("bias '" + bias.name + "' holds " + std::to_string(bias.n_images * bias.dim) +
                     " values for " + std::to_string(fan_out) + " outputs");
  }
  DenseMatrix w(fan_in, fan_out);
  for (std::size_t o = 0; o < fan_out; ++o) {
    for (std::size_t i = 0; i < fan_in; ++i) w(i, o) = weight.data[o * fan_in + i];
  }
  return AffineParams(std::move(w), std::vector<float>(bias.data.begin(), bias.data.end()));
}

std::pair<FeatureSet, FeatureSet> affine_to_tensors(const AffineParams& p, const std::string& prefix) {
  FeatureSet w;
  w.name = prefix + ".weight";
  w.n_images = p.fan_out();
  w.dim = p.fan_in();
  w.data.resize(p.fan_in() * p.fan_out());
  for (std::size_t o = 0; o < p.fan_out(); ++o) {
    for (std::size_t i = 0; i < p.fan_in(); ++i) w.data[o * p.fan_in() + i] = p.weights()(i, o);
  }
  FeatureSet b;
  b.name = prefix + ".bias";
  b.n_images = 1;
  b.dim = p.fan_out();
  b.data.assign(p.bias().begin(), p.bias().end());
  return {std::move(w), std::move(b)};
}

void HeadSpec::validate() const {
  if (layers.empty()) throw ValidationError("head has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].fan_in == 0 || layers[i].fan_out == 0) {
      throw ValidationError("head layer " + std::to_string(i) + " has a zero dimension");
    }
    if (i > 0 && layers[i - 1].fan_out != layers[i].fan_in) {
      throw ValidationError("head layer " + std::to_string(i) + " expects " + std::to_string(layers[i].fan_in) +
                            " inputs but the previous layer emits " + std::to_string(layers[i - 1].fan_out));
    }
  }
  const auto& last = layers.back();
  if (kind == HeadKind::kProposed) {
    if (layers.size() < 2) throw ValidationError("proposed head needs the pretrained classifier and a new layer");
    if (last.fan_in != kPretrainedClasses || !last.relu_after) {
      throw ValidationError("proposed head's appended layer must take the 1000 pretrained logits and end in ReLU");
    }
    if (layers[layers.size() - 2].init != LayerInit::kPretrained) {
      throw ValidationError("proposed head's classification layer must be pretrained");
    }
  } else if (last.init != LayerInit::kUniform) {
    throw ValidationError("baseline head's replaced classifier must be freshly initialised");
  }
}

Head::Head(HeadSpec spec, std::vector<AffineParams> params, std::vector<std::string> notes)
    : spec_(std::move(spec)), notes_(std::move(notes)) {
  spec_.validate();
  if (params.size() != spec_.layers.size()) {
    throw ShapeError("head spec lists " + std::to_string(spec_.layers.size()) + " layers, got " +
                     std::to_string(params.size()) + " parameter blocks");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].fan_in() != spec_.layers[i].fan_in || params[i].fan_out() != spec_.layers[i].fan_out) {
      throw ShapeError("head layer " + std::to_string(i) + " parameters " + params[i].weights().shape_string() +
                       " do not match the spec");
    }
    layers_.push_back({std::move(params[i]), spec_.layers[i].relu_after});
  }
}

const DenseMatrix& Head::forward(const DenseMatrix& x, HeadWorkspace& ws, unsigned threads) const {
  ws.outputs.resize(layers_.size());
  ws.masks.resize(layers_.size());
  const DenseMatrix* in = &x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    affine_forward(*in, layers_[l].params, ws.outputs[l], threads);
    if (layers_[l].relu_after) relu_inplace(ws.outputs[l], ws.masks[l]);
    in = &ws.outputs[l];
  }
  return ws.outputs.back();
}

double Head::loss_and_gradients(const DenseMatrix& x, std::span<const std::uint32_t> labels, HeadWorkspace& ws,
                                unsigned threads) {
  const DenseMatrix& out = forward(x, ws, threads);
  const double loss = softmax_cross_entropy(out, labels, &ws.d_logits);
  DenseMatrix* upstream = &ws.d_logits;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    if (layers_[l].relu_after) relu_backward_inplace(*upstream, ws.masks[l]);
    const DenseMatrix& in = l == 0 ? x : ws.outputs[l - 1];
    DenseMatrix* d_in = nullptr;
    if (l > 0) d_in = upstream == &ws.grad_a ? &ws.grad_b : &ws.grad_a;
    affine_backward(in, layers_[l].params, *upstream, d_in, threads);
    upstream = d_in;
  }
  return loss;
}

double Head::train_step(const DenseMatrix& x, std::span<const std::uint32_t> labels, HeadWorkspace& ws, double lr,
                        double momentum, unsigned threads) {
  const DenseMatrix& out = forward(x, ws, threads);
  const double loss = softmax_cross_entropy(out, labels, &ws.d_logits);
  if (!std::isfinite(loss)) return loss;
  DenseMatrix* upstream = &ws.d_logits;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    if (layers_[l].relu_after) relu_backward_inplace(*upstream, ws.masks[l]);
    const DenseMatrix& in = l == 0 ? x : ws.outputs[l - 1];
    DenseMatrix* d_in = nullptr;
    if (l > 0) {
      d_in = upstream == &ws.grad_a ? &ws.grad_b : &ws.grad_a;
      matmul_nt(*upstream, layers_[l].params.weights(), *d_in, threads);
    }
    sgd_step_fused(layers_[l].params, in, *upstream, lr, momentum, threads);
    upstream = d_in;
  }
  return loss;
}

Head build_proposed_head(const AffineParams& pretrained_classifier, std::size_t n_classes, Rng& rng) {
  if (n_classes == 0) throw ValidationError("proposed head needs at least one class");
  if (pretrained_classifier.fan_out() != kPretrainedClasses) {
    throw ValidationError("pretrained classifier has " + std::to_string(pretrained_classifier.fan_out()) +
                          " outputs, expected 1000");
  }
  HeadSpec spec;
  spec.kind = HeadKind::kProposed;
  spec.layers.push_back(
      {pretrained_classifier.fan_in(), kPretrainedClasses, LayerInit::kPretrained, "fc_cls", false});
  spec.layers.push_back({kPretrainedClasses, n_classes, LayerInit::kUniform, "", true});
  std::vector<AffineParams> params;
  params.emplace_back(pretrained_classifier.weights(),
                      std::vector<float>(pretrained_classifier.bias().begin(), pretrained_classifier.bias().end()));
  params.push_back(init_uniform(kPretrainedClasses, n_classes, rng));
  return Head(std::move(spec), std::move(params));
}

Head build_baseline_head(const AffineParams* pretrained_penultimate, std::size_t feature_dim,
                         std::size_t n_classes, Rng& rng) {
  if (n_classes == 0) throw ValidationError("baseline head needs at least one class");
  if (feature_dim == 0) throw ValidationError("baseline head needs a positive feature dimension");
  HeadSpec spec;
  spec.kind = HeadKind::kBaseline;
  std::vector<AffineParams> params;
  std::vector<std::string> notes;
  if (pretrained_penultimate != nullptr) {
    if (pretrained_penultimate->fan_in() != feature_dim) {
      throw ValidationError("pretrained penultimate layer takes " + std::to_string(pretrained_penultimate->fan_in()) +
                            " inputs, features have " + std::to_string(feature_dim));
    }
    spec.layers.push_back({feature_dim, pretrained_penultimate->fan_out(), LayerInit::kPretrained, "fc_pen", true});
    params.emplace_back(pretrained_penultimate->weights(), std::vector<float>(pretrained_penultimate->bias().begin(),
                                                                              pretrained_penultimate->bias().end()));
    spec.layers.push_back({pretrained_penultimate->fan_out(), n_classes, LayerInit::kUniform, "", false});
    params.push_back(init_uniform(pretrained_penultimate->fan_out(), n_classes, rng));
  } else {
    spec.layers.push_back({feature_dim, n_classes, LayerInit::kUniform, "", false});
    params.push_back(init_uniform(feature_dim, n_classes, rng));
    notes.push_back("backbone has no wide fully-connected layer; baseline fine-tunes only the replaced classifier");
  }
  return Head(std::move(spec), std::move(params), std::move(notes));
}

std::size_t count_params(const Head& head) {
  std::size_t n = 0;
  for (const auto& l : head.layers()) n += l.params.param_count();
  return n;
}

TrainConfig TrainConfig::defaults_for(HeadKind kind) {
  TrainConfig cfg;
  cfg.sgd.step_size = 7;
  cfg.sgd.gamma = 0.1;
  if (kind == HeadKind::kProposed) {
    cfg.sgd.base_lr = 1e-2;
    cfg.sgd.momentum = 0.0;
  } else {
    cfg.sgd.base_lr = 1e-3;
    cfg.sgd.momentum = 0.9;
  }
  return cfg;
}

void TrainConfig::validate() const {
  sgd.validate();
  if (max_epochs == 0) throw ValidationError("max_epochs must be positive");
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  if (threads == 0) throw ValidationError("threads must be positive");
  if (early_stop.min_delta < 0.0 || std::isnan(early_stop.min_delta)) {
    throw ValidationError("early stopping min_delta must be non-negative");
  }
}

namespace {

void check_set(const Head& head, const FeatureSet& set, const char* role, bool single_variant) {
  set.validate();
  if (set.n_images == 0) throw ValidationError(std::string(role) + " set is empty");
  if (!set.has_labels()) throw ValidationError(std::string(role) + " set has no labels");
  if (set.dim != head.input_dim()) {
    throw ShapeError(std::string(role) + " features have dim " + std::to_string(set.dim) + ", head expects " +
                     std::to_string(head.input_dim()));
  }
  if (single_variant && set.n_variants != 1) {
    throw ValidationError(std::string(role) + " set must hold a single variant, has " +
                          std::to_string(set.n_variants));
  }
  for (auto label : set.labels) {
    if (label >= head.n_classes()) {
      throw ValidationError(std::string(role) + " label " + std::to_string(label) + " outside the head's " +
                            std::to_string(head.n_classes()) + " classes");
    }
  }
}

void gather(const FeatureSet& set, std::span<const std::size_t> ids, std::size_t variant, DenseMatrix& x,
            std::vector<std::uint32_t>& labels) {
  x.resize(ids.size(), set.dim);
  labels.resize(ids.size());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const auto src = set.vec(ids[r], variant);
    std::memcpy(x.data() + r * set.dim, src.data(), set.dim * sizeof(float));
    labels[r] = set.labels[ids[r]];
  }
}

constexpr std::size_t kEvalChunk = 256;

template <typename Fn>
void for_each_chunk(const Head& head, const FeatureSet& set, unsigned threads, Fn&& fn) {
  HeadWorkspace ws;
  DenseMatrix x;
  std::vector<std::uint32_t> labels;
  std::vector<std::size_t> ids;
  for (std::size_t start = 0; start < set.n_images; start += kEvalChunk) {
    const std::size_t end = std::min(set.n_images, start + kEvalChunk);
    ids.resize(end - start);
    std::iota(ids.begin(), ids.end(), start);
    x.resize(ids.size(), set.dim);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      const auto src = set.vec(ids[r], 0);
      std::memcpy(x.data() + r * set.dim, src.data(), set.dim * sizeof(float));
    }
    const DenseMatrix& out = head.forward(x, ws, threads);
    fn(start, out);
  }
}

double mean_loss_unchecked(const Head& head, const FeatureSet& set, unsigned threads) {
  double total = 0.0;
  for_each_chunk(head, set, threads, [&](std::size_t start, const DenseMatrix& out) {
    const std::span<const std::uint32_t> labels(set.labels.data() + start, out.rows());
    total += softmax_cross_entropy(out, labels, nullptr) * static_cast<double>(out.rows());
  });
  return total / static_cast<double>(set.n_images);
}

double accuracy_unchecked(const Head& head, const FeatureSet& set, unsigned threads) {
  const auto pred = predict(head, set, threads);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == set.labels[i] ? 1 : 0;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(set.n_images);
}

}  // namespace

std::vector<std::uint32_t> predict(const Head& head, const FeatureSet& set, unsigned threads) {
  if (set.dim != head.input_dim()) {
    throw ShapeError("features have dim " + std::to_string(set.dim) + ", head expects " +
                     std::to_string(head.input_dim()));
  }
  std::vector<std::uint32_t> pred(set.n_images);
  for_each_chunk(head, set, threads, [&](std::size_t start, const DenseMatrix& out) {
    for (std::size_t r = 0; r < out.rows(); ++r) {
      const auto row = out.row(r);
      pred[start + r] = static_cast<std::uint32_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
  });
  return pred;
}

double evaluate(const Head& head, const FeatureSet& test, unsigned threads) {
  check_set(head, test, "test", true);
  return accuracy_unchecked(head, test, threads);
}

double mean_loss(const Head& head, const FeatureSet& set, unsigned threads) {
  check_set(head, set, "evaluation", true);
  return mean_loss_unchecked(head, set, threads);
}

TrainResult train_head(Head& head, const FeatureSet& train, const FeatureSet& val, const TrainConfig& cfg) {
  cfg.validate();
  check_set(head, train, "training", false);
  check_set(head, val, "validation", true);

  TrainResult result;
  result.param_count = count_params(head);
  result.threads = cfg.threads;
  result.warnings = head.notes();

  const auto layers = head.layers();
  std::vector<AffineParams> best;
  EarlyStopState stop_state;
  stop_state.patience = cfg.early_stop.patience;
  stop_state.min_delta = cfg.early_stop.min_delta;

  Rng order_rng = Rng(cfg.seed).derive("epoch-order");
  std::vector<std::size_t> order(train.n_images);
  std::iota(order.begin(), order.end(), std::size_t{0});

  HeadWorkspace ws;
  DenseMatrix x;
  std::vector<std::uint32_t> labels;

  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = step_lr(cfg.sgd.base_lr, epoch, cfg.sgd.step_size, cfg.sgd.gamma);
    result.lr_trace.push_back(lr);
    order_rng.shuffle(std::span<std::size_t>(order));
    const std::size_t variant = epoch % train.n_variants;

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      gather(train, std::span<const std::size_t>(order).subspan(start, end - start), variant, x, labels);
      const double loss = head.train_step(x, labels, ws, lr, cfg.sgd.momentum, cfg.threads);
      if (!std::isfinite(loss)) throw DivergedError(epoch, "training loss is " + std::to_string(loss));
      epoch_loss += loss * static_cast<double>(end - start);

      if (epoch == 0 && start == 0 && head.layers().back().relu_after) {
        const auto& mask = ws.masks.back();
        const std::size_t width = head.n_classes();
        std::size_t dead = 0;
        for (std::size_t j = 0; j < width; ++j) {
          bool alive = false;
          for (std::size_t r = 0; r < x.rows() && !alive; ++r) alive = mask[r * width + j] != 0;
          dead += alive ? 0 : 1;
        }
        result.dead_output_fraction = static_cast<double>(dead) / static_cast<double>(width);
        if (2 * dead > width) {
          result.warnings.push_back(std::to_string(dead) + " of " + std::to_string(width) +
                                    " ReLU outputs are inactive on the first batch");
        }
      }

    }
    epoch_loss /= static_cast<double>(train.n_images);
    const double val_loss = mean_loss_unchecked(head, val, cfg.threads);
    if (!std::isfinite(val_loss)) throw DivergedError(epoch, "validation loss is " + std::to_string(val_loss));
    result.loss_curve.push_back(epoch_loss);
    result.val_loss_curve.push_back(val_loss);
    result.epochs_run = epoch + 1;

    if (!cfg.early_stop.enabled) continue;
    const auto decision = early_stop_check(stop_state, val_loss);
    if (decision.improved && cfg.early_stop.restore_best) {
      if (best.empty()) {
        for (const auto& layer : layers) {
          best.emplace_back(layer.params.weights(),
                            std::vector<float>(layer.params.bias().begin(), layer.params.bias().end()));
        }
      } else {
        for (std::size_t l = 0; l < layers.size(); ++l) best[l].copy_values_from(layers[l].params);
      }
    }
    if (decision.stop) {
      result.stopped_early = true;
      if (cfg.early_stop.restore_best && !best.empty()) {
        for (std::size_t l = 0; l < layers.size(); ++l) layers[l].params.copy_values_from(best[l]);
      }
      break;
    }
  }
  const auto t1 = std::chrono::steady_clock::now();
  result.train_time_s = std::chrono::duration<double>(t1 - t0).count();
  result.best_epoch = cfg.early_stop.enabled ? stop_state.best_epoch : result.epochs_run - 1;

  FeatureSet train_eval = train;
  if (train.n_variants > 1) {
    train_eval.n_variants = 1;
    train_eval.data.resize(train.n_images * train.dim);
    for (std::size_t i = 0; i < train.n_images; ++i) {
      const auto src = train.vec(i, 0);
      std::memcpy(train_eval.data.data() + i * train.dim, src.data(), train.dim * sizeof(float));
    }
  }
  result.train_accuracy_pct = accuracy_unchecked(head, train_eval, cfg.threads);
  result.val_accuracy_pct = accuracy_unchecked(head, val, cfg.threads);
  return result;
}

std::vector<FeatureSet> head_to_tensors(const Head& head) {
  std::vector<FeatureSet> out;
  const std::string prefix = to_string(head.kind());
  for (std::size_t l = 0; l < head.layers().size(); ++l) {
    auto [w, b] = affine_to_tensors(head.layers()[l].params, prefix + "." + std::to_string(l));
    out.push_back(std::move(w));
    out.push_back(std::move(b));
  }
  return out;
}

Head head_from_tensors(std::span<const FeatureSet> tensors) {
  std::map<std::string, const FeatureSet*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  HeadKind kind;
  if (by_name.count("proposed.0.weight")) {
    kind = HeadKind::kProposed;
  } else if (by_name.count("baseline.0.weight")) {
    kind = HeadKind::kBaseline;
  } else {
    throw DataError("container holds no head weights");
  }
  const std::string prefix = to_string(kind);
  std::vector<AffineParams> params;
  for (std::size_t l = 0;; ++l) {
    const auto w = by_name.find(prefix + "." + std::to_string(l) + ".weight");
    const auto b = by_name.find(prefix + "." + std::to_string(l) + ".bias");
    if (w == by_name.end() || b == by_name.end()) break;
    params.push_back(affine_from_tensors(*w->second, *b->second));
  }
  HeadSpec spec;
  spec.kind = kind;
  std::vector<std::string> notes;
  for (std::size_t l = 0; l < params.size(); ++l) {
    LayerSpec ls{params[l].fan_in(), params[l].fan_out(), LayerInit::kUniform, "", false};
    if (kind == HeadKind::kProposed) {
      ls.init = l + 1 < params.size() ? LayerInit::kPretrained : LayerInit::kUniform;
      ls.source = ls.init == LayerInit::kPretrained ? "fc_cls" : "";
      ls.relu_after = l + 1 == params.size();
    } else {
      ls.init = l + 1 < params.size() ? LayerInit::kPretrained : LayerInit::kUniform;
      ls.source = ls.init == LayerInit::kPretrained ? "fc_pen" : "";
      ls.relu_after = l + 1 < params.size();
    }
    spec.layers.push_back(ls);
  }
  if (kind == HeadKind::kBaseline && params.size() == 1) {
    notes.push_back("backbone has no wide fully-connected layer; baseline fine-tunes only the replaced classifier");
  }
  return Head(std::move(spec), std::move(params), std::move(notes));
}

}  // namespace tlh
