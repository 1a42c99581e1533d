#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "matrix.hpp"
#include "rng.hpp"

namespace tlh {

// Weights of one fully-connected layer, stored [fan_in x fan_out], together
// with their gradient and momentum buffers. The buffers always have the same
// shapes as the parameters; velocities start at zero.
class AffineParams {
 public:
  AffineParams() = default;
  AffineParams(DenseMatrix weights, std::vector<float> bias);

  std::size_t fan_in() const noexcept { return weights_.rows(); }
  std::size_t fan_out() const noexcept { return weights_.cols(); }
  std::size_t param_count() const noexcept { return weights_.size() + bias_.size(); }

  const DenseMatrix& weights() const noexcept { return weights_; }
  DenseMatrix& weights() noexcept { return weights_; }
  std::span<const float> bias() const noexcept { return bias_; }
  std::span<float> bias() noexcept { return bias_; }

  const DenseMatrix& grad_weights() const noexcept { return grad_weights_; }
  DenseMatrix& grad_weights() noexcept { return grad_weights_; }
  std::span<const float> grad_bias() const noexcept { return grad_bias_; }
  std::span<float> grad_bias() noexcept { return grad_bias_; }

  const DenseMatrix& velocity_weights() const noexcept { return velocity_weights_; }
  DenseMatrix& velocity_weights() noexcept { return velocity_weights_; }
  std::span<const float> velocity_bias() const noexcept { return velocity_bias_; }
  std::span<float> velocity_bias() noexcept { return velocity_bias_; }

  void zero_grad();

  // Copies weights and bias only; buffers are left alone.
  void copy_values_from(const AffineParams& other);

 private:
  DenseMatrix weights_;
  std::vector<float> bias_;
  DenseMatrix grad_weights_;
  std::vector<float> grad_bias_;
  DenseMatrix velocity_weights_;
  std::vector<float> velocity_bias_;
};

// out[i, j] = sum_k x[i, k] * W[k, j] + b[j]
DenseMatrix affine_forward(const DenseMatrix& x, const AffineParams& p, unsigned threads = 1);
void affine_forward(const DenseMatrix& x, const AffineParams& p, DenseMatrix& out, unsigned threads = 1);

// Writes grad_weights = x^T dOut and grad_bias = column sums of dOut, and
// returns dX = dOut W^T.
DenseMatrix affine_backward(const DenseMatrix& x, AffineParams& p, const DenseMatrix& d_out,
                            unsigned threads = 1);
// Same, but dX is only computed when d_x is non-null.
void affine_backward(const DenseMatrix& x, AffineParams& p, const DenseMatrix& d_out, DenseMatrix* d_x,
                     unsigned threads = 1);

using ReluMask = std::vector<std::uint8_t>;

struct ReluOutput {
  DenseMatrix out;
  ReluMask mask;  // 1 where the input was strictly positive
};

ReluOutput relu_forward(const DenseMatrix& x);
void relu_inplace(DenseMatrix& x, ReluMask& mask);

DenseMatrix relu_backward(const DenseMatrix& d_out, const ReluMask& mask);
void relu_backward_inplace(DenseMatrix& d_out, const ReluMask& mask);

struct LossOutput {
  double loss = 0.0;
  DenseMatrix d_logits;
};

// Mean softmax cross-entropy over the batch. Rows are shifted by their max
// before exponentiation.
LossOutput softmax_cross_entropy(const DenseMatrix& logits, std::span<const std::uint32_t> labels);
double softmax_cross_entropy(const DenseMatrix& logits, std::span<const std::uint32_t> labels,
                             DenseMatrix* d_logits);

// Weights and biases i.i.d. from U(-sqrt(k), sqrt(k)) with k = 1 / fan_in.
// Draw order: weights row-major, then bias.
AffineParams init_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace tlh
