#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "container.hpp"
#include "layers.hpp"
#include "optim.hpp"

namespace tlh {

enum class HeadKind { kProposed, kBaseline };

const char* to_string(HeadKind kind) noexcept;
HeadKind parse_head_kind(const std::string& s);

// Names of pretrained tensors in a feature container. Weights are stored
// [fan_out rows x fan_in], one row per output neuron.
inline constexpr const char* kClassifierWeight = "fc_cls.weight";
inline constexpr const char* kClassifierBias = "fc_cls.bias";
inline constexpr const char* kPenultimateWeight = "fc_pen.weight";
inline constexpr const char* kPenultimateBias = "fc_pen.bias";

// Pretrained width of the ImageNet classification layer.
inline constexpr std::size_t kPretrainedClasses = 1000;

AffineParams affine_from_tensors(const FeatureSet& weight, const FeatureSet& bias);
std::pair<FeatureSet, FeatureSet> affine_to_tensors(const AffineParams& p, const std::string& prefix);

enum class LayerInit { kPretrained, kUniform };

struct LayerSpec {
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
  LayerInit init = LayerInit::kUniform;
  std::string source;  // tensor prefix for pretrained layers
  bool relu_after = false;
};

struct HeadSpec {
  HeadKind kind = HeadKind::kProposed;
  std::vector<LayerSpec> layers;

  void validate() const;
};

struct HeadLayer {
  AffineParams params;
  bool relu_after = false;
};

// Per-batch scratch: activations and masks from the last forward pass.
struct HeadWorkspace {
  std::vector<DenseMatrix> outputs;
  std::vector<ReluMask> masks;
  DenseMatrix grad_a;
  DenseMatrix grad_b;
  DenseMatrix d_logits;
};

class Head {
 public:
  Head(HeadSpec spec, std::vector<AffineParams> params, std::vector<std::string> notes = {});

  const HeadSpec& spec() const noexcept { return spec_; }
  HeadKind kind() const noexcept { return spec_.kind; }
  std::size_t input_dim() const noexcept { return layers_.front().params.fan_in(); }
  std::size_t n_classes() const noexcept { return layers_.back().params.fan_out(); }
  std::span<HeadLayer> layers() noexcept { return layers_; }
  std::span<const HeadLayer> layers() const noexcept { return layers_; }
  // Deviations and caveats attached at construction, surfaced by training.
  const std::vector<std::string>& notes() const noexcept { return notes_; }

  // Outputs of the last layer (post-ReLU when the last layer is activated).
  const DenseMatrix& forward(const DenseMatrix& x, HeadWorkspace& ws, unsigned threads = 1) const;

  // Forward, mean cross-entropy and backward; gradients land in each layer's
  // buffers. Input gradients are not propagated into x.
  double loss_and_gradients(const DenseMatrix& x, std::span<const std::uint32_t> labels, HeadWorkspace& ws,
                            unsigned threads = 1);

  // One SGD step on a batch: forward, loss, and per-layer input gradient
  // followed by the fused parameter update (sgd_step_fused). Returns the
  // batch loss from before the update.
  double train_step(const DenseMatrix& x, std::span<const std::uint32_t> labels, HeadWorkspace& ws, double lr,
                    double momentum, unsigned threads = 1);

 private:
  HeadSpec spec_;
  std::vector<HeadLayer> layers_;
  std::vector<std::string> notes_;
};

// affine(D -> 1000, pretrained) -> affine(1000 -> n_classes, uniform) -> ReLU.
Head build_proposed_head(const AffineParams& pretrained_classifier, std::size_t n_classes, Rng& rng);

// With a pretrained penultimate layer: affine(pretrained) -> ReLU ->
// affine(-> n_classes, uniform). Without one only the replaced layer
// affine(feature_dim -> n_classes) exists.
Head build_baseline_head(const AffineParams* pretrained_penultimate, std::size_t feature_dim,
                         std::size_t n_classes, Rng& rng);

std::size_t count_params(const Head& head);

struct EarlyStopConfig {
  bool enabled = true;
  std::size_t patience = 3;
  double min_delta = 1e-4;
  bool restore_best = true;
};

struct TrainConfig {
  SgdConfig sgd;
  std::size_t max_epochs = 25;
  std::size_t batch_size = 16;
  EarlyStopConfig early_stop;
  std::uint64_t seed = 0;
  unsigned threads = 1;

  static TrainConfig defaults_for(HeadKind kind);
  void validate() const;
};

struct TrainResult {
  std::optional<double> test_accuracy_pct;
  double train_time_s = 0.0;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
  std::size_t param_count = 0;
  std::vector<double> loss_curve;
  std::vector<double> val_loss_curve;
  std::vector<double> lr_trace;
  double train_accuracy_pct = 0.0;
  double val_accuracy_pct = 0.0;
  // Fraction of output neurons inactive on the whole first batch; only
  // meaningful for heads whose last layer is ReLU-activated.
  double dead_output_fraction = 0.0;
  unsigned threads = 1;
  std::vector<std::string> warnings;
};

// Mini-batch SGD with step decay and early stopping on validation loss.
// train_time_s covers the epoch loop only.
TrainResult train_head(Head& head, const FeatureSet& train, const FeatureSet& val, const TrainConfig& cfg);

// Argmax predictions over the head outputs; ties go to the lowest index.
std::vector<std::uint32_t> predict(const Head& head, const FeatureSet& set, unsigned threads = 1);

// 100 * correct / N on a single-variant labelled set.
double evaluate(const Head& head, const FeatureSet& test, unsigned threads = 1);

// Mean cross-entropy of the head on a single-variant labelled set.
double mean_loss(const Head& head, const FeatureSet& set, unsigned threads = 1);

// Head weights as container tensors "<kind>.<layer>.weight|bias".
std::vector<FeatureSet> head_to_tensors(const Head& head);
Head head_from_tensors(std::span<const FeatureSet> tensors);

}  // namespace tlh
