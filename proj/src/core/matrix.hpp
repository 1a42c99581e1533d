#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace tlh {

// Row-major 32-bit matrix.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<float> data);
  DenseMatrix(std::initializer_list<std::initializer_list<float>> rows);

  static DenseMatrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }
  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }

  // Reshape in place, keeping capacity; contents become zero.
  void resize(std::size_t rows, std::size_t cols);
  void fill(float v);
  bool all_finite() const noexcept;
  std::string shape_string() const;

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

// Splits [0, n) into contiguous chunks, one per worker. Every index is handled
// by exactly one worker, so results do not depend on the thread count as long
// as fn only writes state owned by its indices.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads <= 1 || n < 2) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(threads, n);
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  fn(std::size_t{0}, std::min(n, chunk));
}

// out = a * b
void matmul(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out, unsigned threads = 1);
// out = transpose(a) * b
void matmul_tn(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out, unsigned threads = 1);
// Computes transpose(a) * b strip by strip and passes each finished strip
// (rows [first_row, first_row + strip.size() / b.cols())) to `sink` instead
// of storing the whole product. Values match matmul_tn bit for bit. With
// several threads, sink runs concurrently on disjoint strips.
using StripSink = std::function<void(std::size_t first_row, std::span<const float> strip)>;
void matmul_tn_strips(const DenseMatrix& a, const DenseMatrix& b, const StripSink& sink, unsigned threads = 1);
// out = a * transpose(b)
void matmul_nt(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out, unsigned threads = 1);

}  // namespace tlh
