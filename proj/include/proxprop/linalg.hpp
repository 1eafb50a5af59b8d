#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "proxprop/kernels.hpp"
#include "proxprop/tensor.hpp"

namespace proxprop::linalg {

using kernels::Trans;

/// C = op(A) * op(B) for rank-2 tensors.
Tensor gemm(const Tensor& a, const Tensor& b, Trans ta = Trans::no, Trans tb = Trans::no);

/// Linear map on tensors of a fixed shape. The flat inner product over all
/// entries defines symmetry.
struct LinearOperator {
  Shape shape;
  std::function<Tensor(const Tensor&)> apply;

  std::size_t dim() const;
  Tensor operator()(const Tensor& x) const { return apply(x); }
};

/// Dense symmetric matrix wrapped as an operator on column vectors.
LinearOperator matrix_operator(Tensor a);
/// Explicit dim x dim matrix of `op` in the flattened basis (small sizes only).
Tensor materialize(const LinearOperator& op);

struct CgOptions {
  int max_iters = 0;     // 0 means the system dimension
  double tol = 1e-10;    // relative residual ||op(x) - b|| <= tol * ||b||
  bool record_history = false;
};

struct CgResult {
  Tensor x;
  int iterations = 0;
  double residual_norm = 0.0;
  /// Iterates x_1..x_k, kept only with record_history.
  std::vector<Tensor> history;
};

/// Conjugate gradients from the zero vector, never warm-started.
/// Throws NumericalError carrying the iteration index on non-finite values.
CgResult cg_solve(const LinearOperator& op, const Tensor& b, const CgOptions& options);
CgResult cg_solve(const LinearOperator& op, const Tensor& b, int max_iters, double tol);

/// Lower Cholesky factor of a symmetric positive-definite matrix.
/// Throws FactorizationError on a non-positive pivot.
Tensor cholesky(const Tensor& a);
/// Solves A X = B for SPD A via its Cholesky factor.
Tensor direct_spd_solve(const Tensor& a, const Tensor& b);

/// Rayleigh-quotient estimate of the largest eigenvalue of a symmetric PSD
/// operator after `iters` power steps from a seeded Gaussian start. Returns 0
/// for the zero operator.
double power_iteration(const LinearOperator& op, int iters, std::uint64_t seed);
double power_iteration(const LinearOperator& op, std::size_t dim, int iters, std::uint64_t seed);

/// Estimate of the smallest eigenvalue of an SPD operator via power
/// iteration on its inverse, applied through inner CG solves.
double inverse_power_iteration(const LinearOperator& op, int iters, std::uint64_t seed,
                               double inner_tol = 1e-12);

/// All eigenvalues of a dense symmetric matrix, ascending.
std::vector<double> symmetric_eigenvalues(const Tensor& a);

}  // namespace proxprop::linalg
