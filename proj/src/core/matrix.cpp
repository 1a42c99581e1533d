#include "matrix.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace tlh {
namespace {

constexpr std::size_t kBlockK = 64;
constexpr std::size_t kBlockN = 2048;
constexpr std::size_t kBlockRowsNt = 64;
// Below this many multiply-adds a kernel runs on the calling thread.
constexpr std::size_t kParallelThreshold = std::size_t{1} << 20;

unsigned effective_threads(unsigned threads, std::size_t work) {
  return work < kParallelThreshold ? 1u : threads;
}

}  // namespace

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                     std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

DenseMatrix::DenseMatrix(std::initializer_list<std::initializer_list<float>> rows)
    : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0) {
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
  return m;
}

void DenseMatrix::resize(std::size_t rows, std::size_t cols) {
  rows_ = rows;
  cols_ = cols;
  data_.assign(rows * cols, 0.0f);
}

void DenseMatrix::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool DenseMatrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

std::string DenseMatrix::shape_string() const {
  return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

namespace {

constexpr std::size_t kTileRows = 4;
constexpr std::size_t kTileCols = 64;
constexpr std::size_t kLanes = 16;

// out rows [i, i + R) x cols [j, j + W) += a rows x b over k in [k0, k1), in
// ascending k. R and W are compile-time so the accumulators stay in registers.
template <std::size_t R, std::size_t W>
void tile_nn(const float* a, std::size_t lda, const float* b, std::size_t ldb, float* out, std::size_t ldo,
             std::size_t k0, std::size_t k1) {
  float acc[R][W];
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < W; ++c) acc[r][c] = out[r * ldo + c];
  }
  for (std::size_t k = k0; k < k1; ++k) {
    const float* brow = b + k * ldb;
    for (std::size_t r = 0; r < R; ++r) {
      const float ark = a[r * lda + k];
      for (std::size_t c = 0; c < W; ++c) acc[r][c] += ark * brow[c];
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < W; ++c) out[r * ldo + c] = acc[r][c];
  }
}

// Scalar fallback for ragged tile edges, same accumulation order.
void tile_nn_edge(const float* a, std::size_t lda, const float* b, std::size_t ldb, float* out, std::size_t ldo,
                  std::size_t rows, std::size_t cols, std::size_t k0, std::size_t k1) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = k0; k < k1; ++k) {
      const float ark = a[r * lda + k];
      const float* brow = b + k * ldb;
      for (std::size_t c = 0; c < cols; ++c) out[r * ldo + c] += ark * brow[c];
    }
  }
}

// out rows [k, k + R) of a^T b, columns [j, j + W), summing over all m rows
// of a and b in ascending order.
template <std::size_t R, std::size_t W>
void tile_tn(const float* a, std::size_t lda, const float* b, std::size_t ldb, float* out, std::size_t ldo,
             std::size_t m) {
  float acc[R][W] = {};
  for (std::size_t i = 0; i < m; ++i) {
    const float* brow = b + i * ldb;
    for (std::size_t r = 0; r < R; ++r) {
      const float aik = a[i * lda + r];
      for (std::size_t c = 0; c < W; ++c) acc[r][c] += aik * brow[c];
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < W; ++c) out[r * ldo + c] = acc[r][c];
  }
}

void tile_tn_edge(const float* a, std::size_t lda, const float* b, std::size_t ldb, float* out, std::size_t ldo,
                  std::size_t rows, std::size_t cols, std::size_t m) {
  for (std::size_t r = 0; r < rows; ++r) {
    float* orow = out + r * ldo;
    std::fill(orow, orow + cols, 0.0f);
    for (std::size_t i = 0; i < m; ++i) {
      const float air = a[i * lda + r];
      const float* brow = b + i * ldb;
      for (std::size_t c = 0; c < cols; ++c) orow[c] += air * brow[c];
    }
  }
}

// Dot product with kLanes interleaved partial sums combined in a fixed order.
float lane_dot(const float* x, const float* y, std::size_t n) {
  float lanes[kLanes] = {};
  std::size_t j = 0;
  for (; j + kLanes <= n; j += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += x[j + l] * y[j + l];
  }
  for (std::size_t l = 0; j < n; ++j, ++l) lanes[l] += x[j] * y[j];
  for (std::size_t width = kLanes / 2; width > 0; width /= 2) {
    for (std::size_t l = 0; l < width; ++l) lanes[l] += lanes[l + width];
  }
  return lanes[0];
}

}  // namespace

void matmul(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out, unsigned threads) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + a.shape_string() + " * " + b.shape_string());
  }
  const std::size_t m = a.rows(), k_dim = a.cols(), n = b.cols();
  if (out.rows() != m || out.cols() != n) out.resize(m, n);
  out.fill(0.0f);

  // Each out(i, j) accumulates over k in ascending order regardless of
  // blocking, tiling or row partitioning.
  parallel_for(m, effective_threads(threads, m * k_dim * n), [&](std::size_t r0, std::size_t r1) {
    for (std::size_t j0 = 0; j0 < n; j0 += kBlockN) {
      const std::size_t j1 = std::min(n, j0 + kBlockN);
      for (std::size_t k0 = 0; k0 < k_dim; k0 += kBlockK) {
        const std::size_t k1 = std::min(k_dim, k0 + kBlockK);
        for (std::size_t i = r0; i < r1; i += kTileRows) {
          const std::size_t rows = std::min(kTileRows, r1 - i);
          const float* ap = a.data() + i * k_dim;
          for (std::size_t j = j0; j < j1; j += kTileCols) {
            const std::size_t cols = std::min(kTileCols, j1 - j);
            float* op = out.data() + i * n + j;
            if (rows == kTileRows && cols == kTileCols) {
              tile_nn<kTileRows, kTileCols>(ap, k_dim, b.data() + j, n, op, n, k0, k1);
            } else {
              tile_nn_edge(ap, k_dim, b.data() + j, n, op, n, rows, cols, k0, k1);
            }
          }
        }
      }
    }
  });
}

namespace {

// Rows [k0, k1) of transpose(a) * b into `out` (leading dimension b.cols()).
void tn_rows(const DenseMatrix& a, const DenseMatrix& b, float* out, std::size_t k0, std::size_t k1) {
  const std::size_t m = a.rows(), k_dim = a.cols(), n = b.cols();
  for (std::size_t k = k0; k < k1; k += kTileRows) {
    const std::size_t rows = std::min(kTileRows, k1 - k);
    for (std::size_t j = 0; j < n; j += kTileCols) {
      const std::size_t cols = std::min(kTileCols, n - j);
      float* op = out + (k - k0) * n + j;
      if (rows == kTileRows && cols == kTileCols) {
        tile_tn<kTileRows, kTileCols>(a.data() + k, k_dim, b.data() + j, n, op, n, m);
      } else {
        tile_tn_edge(a.data() + k, k_dim, b.data() + j, n, op, n, rows, cols, m);
      }
    }
  }
}

}  // namespace

void matmul_tn(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out, unsigned threads) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: transpose" + a.shape_string() + " * " + b.shape_string());
  }
  const std::size_t m = a.rows(), k_dim = a.cols(), n = b.cols();
  if (out.rows() != k_dim || out.cols() != n) out.resize(k_dim, n);
  parallel_for(k_dim, effective_threads(threads, m * k_dim * n), [&](std::size_t r0, std::size_t r1) {
    tn_rows(a, b, out.data() + r0 * n, r0, r1);
  });
}

void matmul_tn_strips(const DenseMatrix& a, const DenseMatrix& b, const StripSink& sink, unsigned threads) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn_strips: transpose" + a.shape_string() + " * " + b.shape_string());
  }
  const std::size_t m = a.rows(), k_dim = a.cols(), n = b.cols();
  parallel_for(k_dim, effective_threads(threads, m * k_dim * n), [&](std::size_t r0, std::size_t r1) {
    std::vector<float> strip(kTileRows * n);
    for (std::size_t k = r0; k < r1; k += kTileRows) {
      const std::size_t rows = std::min(kTileRows, r1 - k);
      tn_rows(a, b, strip.data(), k, k + rows);
      sink(k, std::span<const float>(strip.data(), rows * n));
    }
  });
}

void matmul_nt(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out, unsigned threads) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + a.shape_string() + " * transpose" + b.shape_string());
  }
  const std::size_t m = a.rows(), n = a.cols(), k_dim = b.rows();
  if (out.rows() != m || out.cols() != k_dim) out.resize(m, k_dim);

  parallel_for(m, effective_threads(threads, m * k_dim * n), [&](std::size_t r0, std::size_t r1) {
    for (std::size_t k0 = 0; k0 < k_dim; k0 += kBlockRowsNt) {
      const std::size_t k1 = std::min(k_dim, k0 + kBlockRowsNt);
      for (std::size_t i = r0; i < r1; ++i) {
        const float* arow = a.data() + i * n;
        for (std::size_t k = k0; k < k1; ++k) out.data()[i * k_dim + k] = lane_dot(arow, b.data() + k * n, n);
      }
    }
  });
}

}  // namespace tlh
