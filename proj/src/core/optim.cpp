#include "optim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "error.hpp"

namespace tlh {

void SgdConfig::validate() const {
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) {
    throw ValidationError("sgd: base_lr must be positive, got " + std::to_string(base_lr));
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ValidationError("sgd: momentum must be in [0, 1), got " + std::to_string(momentum));
  }
  if (weight_decay != 0.0) throw ValidationError("sgd: weight decay is not supported");
  if (step_size == 0) throw ValidationError("sgd: step_size must be positive");
  if (!(gamma > 0.0)) throw ValidationError("sgd: gamma must be positive");
}

namespace {

void plain_update(std::span<float> param, std::span<const float> grad, float lr) {
  for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr * grad[i];
}

void momentum_update(std::span<float> param, std::span<float> velocity, std::span<const float> grad,
                     float lr, float momentum) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i];
    param[i] -= lr * velocity[i];
  }
}

void check_step(double lr, double momentum) {
  if (!(lr > 0.0)) throw ValidationError("sgd_step: lr must be positive, got " + std::to_string(lr));
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ValidationError("sgd_step: momentum must be in [0, 1), got " + std::to_string(momentum));
  }
}

}  // namespace

void sgd_step(AffineParams& params, double lr, double momentum) {
  check_step(lr, momentum);
  const auto lr_f = static_cast<float>(lr);
  if (momentum == 0.0) {
    plain_update(params.weights().values(), params.grad_weights().values(), lr_f);
    plain_update(params.bias(), params.grad_bias(), lr_f);
    return;
  }
  const auto mu = static_cast<float>(momentum);
  momentum_update(params.weights().values(), params.velocity_weights().values(),
                  params.grad_weights().values(), lr_f, mu);
  momentum_update(params.bias(), params.velocity_bias(), params.grad_bias(), lr_f, mu);
}

void sgd_step_fused(AffineParams& params, const DenseMatrix& x, const DenseMatrix& d_out, double lr,
                    double momentum, unsigned threads) {
  check_step(lr, momentum);
  if (x.cols() != params.fan_in() || d_out.cols() != params.fan_out() || x.rows() != d_out.rows()) {
    throw ShapeError("sgd_step_fused: input " + x.shape_string() + ", upstream " + d_out.shape_string() +
                     ", weights " + params.weights().shape_string());
  }
  auto gb = params.grad_bias();
  std::fill(gb.begin(), gb.end(), 0.0f);
  for (std::size_t i = 0; i < d_out.rows(); ++i) {
    const auto row = d_out.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) gb[j] += row[j];
  }

  const auto lr_f = static_cast<float>(lr);
  const auto mu = static_cast<float>(momentum);
  const std::size_t n = params.fan_out();
  auto w = params.weights().values();
  auto v = params.velocity_weights().values();
  matmul_tn_strips(
      x, d_out,
      [&](std::size_t first_row, std::span<const float> grad) {
        const std::size_t offset = first_row * n;
        if (momentum == 0.0) {
          plain_update(w.subspan(offset, grad.size()), grad, lr_f);
        } else {
          momentum_update(w.subspan(offset, grad.size()), v.subspan(offset, grad.size()), grad, lr_f, mu);
        }
      },
      threads);
  if (momentum == 0.0) {
    plain_update(params.bias(), params.grad_bias(), lr_f);
  } else {
    momentum_update(params.bias(), params.velocity_bias(), params.grad_bias(), lr_f, mu);
  }
}

double step_lr(double base_lr, std::size_t epoch, std::size_t step_size, double gamma) {
  if (step_size == 0) throw ValidationError("step_lr: step_size must be positive");
  if (!(base_lr > 0.0)) throw ValidationError("step_lr: base_lr must be positive");
  const auto steps = static_cast<double>(epoch / step_size);
  return base_lr * std::pow(gamma, steps);
}

EarlyStopDecision early_stop_check(EarlyStopState& state, double val_loss) {
  if (std::isnan(val_loss)) throw ValidationError("early_stop_check: validation loss is NaN");
  EarlyStopDecision d;
  const std::size_t epoch = state.epochs_seen++;
  if (state.best_val_loss - val_loss > state.min_delta) {
    state.best_val_loss = val_loss;
    state.best_epoch = epoch;
    state.epochs_since_improvement = 0;
    d.improved = true;
  } else {
    ++state.epochs_since_improvement;
  }
  d.stop = state.epochs_since_improvement > state.patience;
  return d;
}

}  // namespace tlh
