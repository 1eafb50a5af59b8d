#include "proxprop/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <string>
#include <vector>

#include "proxprop/errors.hpp"

namespace proxprop::kernels {

namespace {

std::atomic<int> g_threads{1};

struct OpDims {
  std::size_t rows;
  std::size_t cols;
};

OpDims op_dims(Trans t, const ConstMatrixView& v) {
  return t == Trans::no ? OpDims{v.rows, v.cols} : OpDims{v.cols, v.rows};
}

void check_gemm_dims(Trans ta, Trans tb, const ConstMatrixView& a, const ConstMatrixView& b,
                     const MatrixView& c) {
  const OpDims da = op_dims(ta, a);
  const OpDims db = op_dims(tb, b);
  if (da.cols != db.rows || c.rows != da.rows || c.cols != db.cols) {
    throw DimensionError("gemm: op(A) is " + std::to_string(da.rows) + "x" +
                         std::to_string(da.cols) + ", op(B) is " + std::to_string(db.rows) + "x" +
                         std::to_string(db.cols) + ", C is " + std::to_string(c.rows) + "x" +
                         std::to_string(c.cols));
  }
}

// Row-major copy of op(v); returns v.data unchanged when no transpose is needed.
const double* materialize(Trans t, const ConstMatrixView& v, std::vector<double>& storage) {
  if (t == Trans::no) return v.data;
  storage.resize(v.rows * v.cols);
  constexpr std::size_t kBlock = 32;
  for (std::size_t i0 = 0; i0 < v.rows; i0 += kBlock) {
    for (std::size_t j0 = 0; j0 < v.cols; j0 += kBlock) {
      const std::size_t i1 = std::min(v.rows, i0 + kBlock);
      const std::size_t j1 = std::min(v.cols, j0 + kBlock);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) storage[j * v.rows + i] = v.data[i * v.cols + j];
    }
  }
  return storage.data();
}

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kDepthBlock = 128;
constexpr std::size_t kColBlock = 512;

// Accumulates rows [i0, i0+rows) of C += alpha * A * B for row-major A (m x k), B (k x n).
void accumulate_rows(std::size_t i0, std::size_t rows, std::size_t k, std::size_t n, double alpha,
                     const double* a, const double* b, double* c) {
  for (std::size_t p0 = 0; p0 < k; p0 += kDepthBlock) {
    const std::size_t p1 = std::min(k, p0 + kDepthBlock);
    for (std::size_t j0 = 0; j0 < n; j0 += kColBlock) {
      const std::size_t j1 = std::min(n, j0 + kColBlock);
      if (rows == kRowBlock) {
        double* c0 = c + (i0 + 0) * n;
        double* c1 = c + (i0 + 1) * n;
        double* c2 = c + (i0 + 2) * n;
        double* c3 = c + (i0 + 3) * n;
        for (std::size_t p = p0; p < p1; ++p) {
          const double a0 = alpha * a[(i0 + 0) * k + p];
          const double a1 = alpha * a[(i0 + 1) * k + p];
          const double a2 = alpha * a[(i0 + 2) * k + p];
          const double a3 = alpha * a[(i0 + 3) * k + p];
          const double* bp = b + p * n;
#pragma omp simd
          for (std::size_t j = j0; j < j1; ++j) {
            const double bv = bp[j];
            c0[j] += a0 * bv;
            c1[j] += a1 * bv;
            c2[j] += a2 * bv;
            c3[j] += a3 * bv;
          }
        }
      } else {
        for (std::size_t i = i0; i < i0 + rows; ++i) {
          double* ci = c + i * n;
          for (std::size_t p = p0; p < p1; ++p) {
            const double av = alpha * a[i * k + p];
            const double* bp = b + p * n;
#pragma omp simd
            for (std::size_t j = j0; j < j1; ++j) ci[j] += av * bp[j];
          }
        }
      }
    }
  }
}

}  // namespace

int num_threads() { return g_threads.load(); }

void set_num_threads(int n) { g_threads.store(std::max(1, n)); }

void gemm(Trans ta, Trans tb, double alpha, ConstMatrixView a, ConstMatrixView b, double beta,
          MatrixView c) {
  check_gemm_dims(ta, tb, a, b, c);
  const std::size_t m = c.rows;
  const std::size_t n = c.cols;
  const std::size_t k = op_dims(ta, a).cols;

  std::vector<double> a_storage;
  std::vector<double> b_storage;
  const double* ap = materialize(ta, a, a_storage);
  const double* bp = materialize(tb, b, b_storage);

  const std::size_t blocks = (m + kRowBlock - 1) / kRowBlock;
  const int threads = num_threads();
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1)
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    const std::size_t i0 = blk * kRowBlock;
    const std::size_t rows = std::min(kRowBlock, m - i0);
    double* cblock = c.data + i0 * n;
    if (beta == 0.0) {
      std::fill(cblock, cblock + rows * n, 0.0);
    } else if (beta != 1.0) {
      for (std::size_t t = 0; t < rows * n; ++t) cblock[t] *= beta;
    }
    if (k > 0 && alpha != 0.0) accumulate_rows(i0, rows, k, n, alpha, ap, bp, c.data);
  }
}

void im2col(const ConvGeometry& g, ConstMatrixView input, MatrixView patches) {
  const std::size_t batch = input.cols;
  const std::size_t oh = g.out_h();
  const std::size_t ow = g.out_w();
  if (input.rows != g.in_features() || patches.rows != g.patch_size() ||
      patches.cols != oh * ow * batch) {
    throw DimensionError("im2col: operand shapes do not match the convolution geometry");
  }
  const std::size_t rows = g.patch_size();
  const int threads = num_threads();
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1)
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t kj = r % g.kernel_w;
    const std::size_t ki = (r / g.kernel_w) % g.kernel_h;
    const std::size_t ch = r / (g.kernel_w * g.kernel_h);
    double* dst = patches.data + r * patches.cols;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.padding);
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.padding);
        double* out = dst + (oy * ow + ox) * batch;
        if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
            ix >= static_cast<long>(g.width)) {
          std::fill(out, out + batch, 0.0);
        } else {
          const double* src = input.data + ((ch * g.height + iy) * g.width + ix) * batch;
          std::copy(src, src + batch, out);
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, ConstMatrixView patches, MatrixView input_grad) {
  const std::size_t batch = input_grad.cols;
  const std::size_t oh = g.out_h();
  const std::size_t ow = g.out_w();
  if (input_grad.rows != g.in_features() || patches.rows != g.patch_size() ||
      patches.cols != oh * ow * batch) {
    throw DimensionError("col2im: operand shapes do not match the convolution geometry");
  }
  const int threads = num_threads();
  // Each channel's input rows are written only by that channel's patch rows.
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1)
  for (std::size_t ch = 0; ch < g.channels; ++ch) {
    double* plane = input_grad.data + ch * g.height * g.width * batch;
    std::fill(plane, plane + g.height * g.width * batch, 0.0);
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const std::size_t r = (ch * g.kernel_h + ki) * g.kernel_w + kj;
        const double* src_row = patches.data + r * patches.cols;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.padding);
            if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
            const double* src = src_row + (oy * ow + ox) * batch;
            double* dst = plane + (iy * g.width + ix) * batch;
#pragma omp simd
            for (std::size_t n = 0; n < batch; ++n) dst[n] += src[n];
          }
        }
      }
    }
  }
}

namespace reference {

void gemm(Trans ta, Trans tb, double alpha, ConstMatrixView a, ConstMatrixView b, double beta,
          MatrixView c) {
  check_gemm_dims(ta, tb, a, b, c);
  const std::size_t k = op_dims(ta, a).cols;
  auto at = [&](std::size_t i, std::size_t p) {
    return ta == Trans::no ? a.data[i * a.cols + p] : a.data[p * a.cols + i];
  };
  auto bt = [&](std::size_t p, std::size_t j) {
    return tb == Trans::no ? b.data[p * b.cols + j] : b.data[j * b.cols + p];
  };
  for (std::size_t i = 0; i < c.rows; ++i) {
    for (std::size_t j = 0; j < c.cols; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += at(i, p) * bt(p, j);
      double& out = c.data[i * c.cols + j];
      out = alpha * s + (beta == 0.0 ? 0.0 : beta * out);
    }
  }
}

void conv2d(const ConvGeometry& g, ConstMatrixView kernel, ConstMatrixView input,
            MatrixView output) {
  const std::size_t batch = input.cols;
  const std::size_t oh = g.out_h();
  const std::size_t ow = g.out_w();
  const std::size_t out_ch = kernel.rows;
  if (kernel.cols != g.patch_size() || input.rows != g.in_features() ||
      output.rows != out_ch * oh * ow || output.cols != batch) {
    throw DimensionError("reference::conv2d: operand shapes do not match the geometry");
  }
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t co = 0; co < out_ch; ++co) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double s = 0.0;
          for (std::size_t ci = 0; ci < g.channels; ++ci) {
            for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
              for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
                const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.padding);
                const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.padding);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
                    ix >= static_cast<long>(g.width))
                  continue;
                const double w = kernel.data[co * kernel.cols + (ci * g.kernel_h + ki) * g.kernel_w + kj];
                s += w * input.data[((ci * g.height + iy) * g.width + ix) * batch + n];
              }
            }
          }
          output.data[((co * oh + oy) * ow + ox) * batch + n] = s;
        }
      }
    }
  }
}

void im2col(const ConvGeometry& g, ConstMatrixView input, MatrixView patches) {
  const std::size_t batch = input.cols;
  const std::size_t oh = g.out_h();
  const std::size_t ow = g.out_w();
  for (std::size_t ch = 0; ch < g.channels; ++ch)
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki)
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj)
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox)
            for (std::size_t n = 0; n < batch; ++n) {
              const std::size_t r = (ch * g.kernel_h + ki) * g.kernel_w + kj;
              const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.padding);
              const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.padding);
              const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) &&
                                  ix < static_cast<long>(g.width);
              patches.data[r * patches.cols + (oy * ow + ox) * batch + n] =
                  inside ? input.data[((ch * g.height + iy) * g.width + ix) * batch + n] : 0.0;
            }
}

void col2im(const ConvGeometry& g, ConstMatrixView patches, MatrixView input_grad) {
  const std::size_t batch = input_grad.cols;
  const std::size_t oh = g.out_h();
  const std::size_t ow = g.out_w();
  std::fill(input_grad.data, input_grad.data + input_grad.rows * input_grad.cols, 0.0);
  for (std::size_t ch = 0; ch < g.channels; ++ch)
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki)
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj)
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox)
            for (std::size_t n = 0; n < batch; ++n) {
              const std::size_t r = (ch * g.kernel_h + ki) * g.kernel_w + kj;
              const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.padding);
              const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.padding);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
                  ix >= static_cast<long>(g.width))
                continue;
              input_grad.data[((ch * g.height + iy) * g.width + ix) * batch + n] +=
                  patches.data[r * patches.cols + (oy * ow + ox) * batch + n];
            }
}

}  // namespace reference

}  // namespace proxprop::kernels
