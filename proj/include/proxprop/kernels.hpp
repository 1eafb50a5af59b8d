#pragma once

// Data-parallel compute kernels.
//
// Every kernel here has a straight-loop serial twin in `kernels::reference`
// used by the tests and the benchmark. The parallel versions split work by
// output rows only, so each output entry is accumulated in the same order
// regardless of the thread count and results are bit-identical across
// thread counts.

#include <cstddef>

namespace proxprop::kernels {

enum class Trans { no, yes };

/// Row-major contiguous matrix, viewed before any transposition.
struct ConstMatrixView {
  const double* data;
  std::size_t rows;
  std::size_t cols;
};

struct MatrixView {
  double* data;
  std::size_t rows;
  std::size_t cols;
};

/// Number of OpenMP threads used by the kernels. Defaults to 1.
int num_threads();
void set_num_threads(int n);

/// C = alpha * op(A) * op(B) + beta * C. Throws DimensionError on mismatch.
/// When beta == 0, C is overwritten without being read.
void gemm(Trans ta, Trans tb, double alpha, ConstMatrixView a, ConstMatrixView b, double beta,
          MatrixView c);

/// Geometry of a 2-D convolution over a C x H x W input.
struct ConvGeometry {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_h() const { return (height + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * padding - kernel_w) / stride + 1; }
  std::size_t patch_size() const { return channels * kernel_h * kernel_w; }
  std::size_t in_features() const { return channels * height * width; }
  bool valid() const {
    return stride > 0 && kernel_h > 0 && kernel_w > 0 && height + 2 * padding >= kernel_h &&
           width + 2 * padding >= kernel_w;
  }
};

/// Lowers a batch of images into a patch matrix.
///
/// `input` is (C*H*W) x N with one image per column. `patches` must be
/// patch_size() x (out_h*out_w*N); column (p*N + n) holds the receptive
/// field of output pixel p of sample n, padded with zeros. With this
/// column order a kernel matrix times the patch matrix is already laid out
/// as (C_out*out_h*out_w) x N.
void im2col(const ConvGeometry& g, ConstMatrixView input, MatrixView patches);

/// Adjoint of im2col: scatter-adds patch columns back into an image batch.
/// `input_grad` is overwritten.
void col2im(const ConvGeometry& g, ConstMatrixView patches, MatrixView input_grad);

namespace reference {

/// Triple-loop gemm with the same contract as kernels::gemm.
void gemm(Trans ta, Trans tb, double alpha, ConstMatrixView a, ConstMatrixView b, double beta,
          MatrixView c);

/// Direct (non-lowered) convolution without bias.
/// `kernel` is C_out x (C*kh*kw); `output` is (C_out*out_h*out_w) x N.
void conv2d(const ConvGeometry& g, ConstMatrixView kernel, ConstMatrixView input,
            MatrixView output);

void im2col(const ConvGeometry& g, ConstMatrixView input, MatrixView patches);
void col2im(const ConvGeometry& g, ConstMatrixView patches, MatrixView input_grad);

}  // namespace reference

}  // namespace proxprop::kernels
