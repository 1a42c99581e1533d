#include "layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "error.hpp"

namespace tlh {

AffineParams::AffineParams(DenseMatrix weights, std::vector<float> bias)
    : weights_(std::move(weights)), bias_(std::move(bias)) {
  if (bias_.size() != weights_.cols()) {
    throw ShapeError("bias length " + std::to_string(bias_.size()) + " does not match weights " +
                     weights_.shape_string());
  }
  grad_weights_ = DenseMatrix(weights_.rows(), weights_.cols());
  grad_bias_.assign(bias_.size(), 0.0f);
  velocity_weights_ = DenseMatrix(weights_.rows(), weights_.cols());
  velocity_bias_.assign(bias_.size(), 0.0f);
}

void AffineParams::zero_grad() {
  grad_weights_.fill(0.0f);
  std::fill(grad_bias_.begin(), grad_bias_.end(), 0.0f);
}

void AffineParams::copy_values_from(const AffineParams& other) {
  if (other.fan_in() != fan_in() || other.fan_out() != fan_out()) {
    throw ShapeError("cannot copy " + other.weights_.shape_string() + " into " + weights_.shape_string());
  }
  std::copy(other.weights_.values().begin(), other.weights_.values().end(), weights_.values().begin());
  std::copy(other.bias_.begin(), other.bias_.end(), bias_.begin());
}

void affine_forward(const DenseMatrix& x, const AffineParams& p, DenseMatrix& out, unsigned threads) {
  if (x.cols() != p.fan_in()) {
    throw ShapeError("affine_forward: input " + x.shape_string() + " vs weights " +
                     p.weights().shape_string());
  }
  matmul(x, p.weights(), out, threads);
  const auto bias = p.bias();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[j];
  }
}

DenseMatrix affine_forward(const DenseMatrix& x, const AffineParams& p, unsigned threads) {
  DenseMatrix out;
  affine_forward(x, p, out, threads);
  return out;
}

void affine_backward(const DenseMatrix& x, AffineParams& p, const DenseMatrix& d_out, DenseMatrix* d_x,
                     unsigned threads) {
  if (x.cols() != p.fan_in() || d_out.cols() != p.fan_out() || x.rows() != d_out.rows()) {
    throw ShapeError("affine_backward: input " + x.shape_string() + ", upstream " +
                     d_out.shape_string() + ", weights " + p.weights().shape_string());
  }
  matmul_tn(x, d_out, p.grad_weights(), threads);
  auto gb = p.grad_bias();
  std::fill(gb.begin(), gb.end(), 0.0f);
  for (std::size_t i = 0; i < d_out.rows(); ++i) {
    const auto row = d_out.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) gb[j] += row[j];
  }
  if (d_x != nullptr) matmul_nt(d_out, p.weights(), *d_x, threads);
}

DenseMatrix affine_backward(const DenseMatrix& x, AffineParams& p, const DenseMatrix& d_out,
                            unsigned threads) {
  DenseMatrix d_x;
  affine_backward(x, p, d_out, &d_x, threads);
  return d_x;
}

void relu_inplace(DenseMatrix& x, ReluMask& mask) {
  auto v = x.values();
  mask.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const bool pos = v[i] > 0.0f;
    mask[i] = pos ? 1 : 0;
    if (!pos) v[i] = 0.0f;
  }
}

ReluOutput relu_forward(const DenseMatrix& x) {
  ReluOutput r{x, {}};
  relu_inplace(r.out, r.mask);
  return r;
}

void relu_backward_inplace(DenseMatrix& d_out, const ReluMask& mask) {
  auto v = d_out.values();
  if (mask.size() != v.size()) {
    throw ShapeError("relu_backward: gradient " + d_out.shape_string() + " vs mask of " +
                     std::to_string(mask.size()));
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!mask[i]) v[i] = 0.0f;
  }
}

DenseMatrix relu_backward(const DenseMatrix& d_out, const ReluMask& mask) {
  DenseMatrix d_x = d_out;
  relu_backward_inplace(d_x, mask);
  return d_x;
}

double softmax_cross_entropy(const DenseMatrix& logits, std::span<const std::uint32_t> labels,
                             DenseMatrix* d_logits) {
  const std::size_t batch = logits.rows(), classes = logits.cols();
  if (batch == 0) throw ValidationError("softmax_cross_entropy: empty batch");
  if (labels.size() != batch) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     logits.shape_string() + " logits");
  }
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] >= classes) {
      throw ValidationError("softmax_cross_entropy: label " + std::to_string(labels[i]) + " at row " +
                            std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  if (d_logits != nullptr && (d_logits->rows() != batch || d_logits->cols() != classes)) {
    d_logits->resize(batch, classes);
  }

  const double inv_batch = 1.0 / static_cast<double>(batch);
  std::vector<double> probs(classes);
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      probs[c] = std::exp(static_cast<double>(row[c]) - mx);
      sum += probs[c];
    }
    const double log_sum = std::log(sum);
    total += log_sum - (static_cast<double>(row[labels[i]]) - mx);
    if (d_logits != nullptr) {
      auto drow = d_logits->row(i);
      for (std::size_t c = 0; c < classes; ++c) {
        const double target = c == labels[i] ? 1.0 : 0.0;
        drow[c] = static_cast<float>((probs[c] / sum - target) * inv_batch);
      }
    }
  }
  return total * inv_batch;
}

LossOutput softmax_cross_entropy(const DenseMatrix& logits, std::span<const std::uint32_t> labels) {
  LossOutput r;
  r.loss = softmax_cross_entropy(logits, labels, &r.d_logits);
  return r;
}

AffineParams init_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  if (fan_in == 0) throw ValidationError("init_uniform: fan_in must be at least 1");
  if (fan_out == 0) throw ValidationError("init_uniform: fan_out must be at least 1");
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  DenseMatrix w(fan_in, fan_out);
  for (float& v : w.values()) v = static_cast<float>(rng.uniform(-bound, bound));
  std::vector<float> b(fan_out);
  for (float& v : b) v = static_cast<float>(rng.uniform(-bound, bound));
  return AffineParams(std::move(w), std::move(b));
}

}  // namespace tlh
