#pragma once

#include <cstddef>
#include <limits>

#include "layers.hpp"

namespace tlh {

struct SgdConfig {
  double base_lr = 1e-2;
  double momentum = 0.0;
  double weight_decay = 0.0;  // must stay 0
  std::size_t step_size = 7;
  double gamma = 0.1;

  void validate() const;
};

// v <- momentum * v + grad; param <- param - lr * v.
// With momentum == 0 the velocity buffers are not touched and the update is
// exactly param - lr * grad.
void sgd_step(AffineParams& params, double lr, double momentum);

// Same update as affine_backward followed by sgd_step, computed from the
// layer input x and upstream gradient d_out without materialising the weight
// gradient: grad_bias is filled, grad_weights is left as it was.
void sgd_step_fused(AffineParams& params, const DenseMatrix& x, const DenseMatrix& d_out, double lr,
                    double momentum, unsigned threads = 1);

// base_lr * gamma^floor(epoch / step_size), epoch counted from 0.
double step_lr(double base_lr, std::size_t epoch, std::size_t step_size, double gamma);

struct EarlyStopState {
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t epochs_since_improvement = 0;
  std::size_t patience = 3;
  double min_delta = 1e-4;
  std::size_t epochs_seen = 0;
};

struct EarlyStopDecision {
  bool improved = false;
  bool stop = false;
};

// Feeds one epoch's validation loss. An improvement is a drop of more than
// min_delta below the best loss so far; it resets the counter and records the
// epoch. Stop is signalled once the counter exceeds patience.
EarlyStopDecision early_stop_check(EarlyStopState& state, double val_loss);

}  // namespace tlh
