#include "proxprop/linalg.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>

namespace proxprop::linalg {

Tensor gemm(const Tensor& a, const Tensor& b, Trans ta, Trans tb) {
  const std::size_t m = ta == Trans::no ? a.rows() : a.cols();
  const std::size_t n = tb == Trans::no ? b.cols() : b.rows();
  Tensor c = Tensor::matrix(m, n);
  kernels::gemm(ta, tb, 1.0, {a.data(), a.rows(), a.cols()}, {b.data(), b.rows(), b.cols()}, 0.0,
                {c.data(), m, n});
  return c;
}

std::size_t LinearOperator::dim() const {
  std::size_t d = 1;
  for (std::size_t s : shape) d *= s;
  return d;
}

LinearOperator matrix_operator(Tensor a) {
  if (a.rank() != 2 || a.rows() != a.cols()) {
    throw DimensionError("matrix_operator: expected a square matrix, got " + shape_string(a.shape()));
  }
  const std::size_t n = a.rows();
  return LinearOperator{Shape{n, 1}, [m = std::move(a)](const Tensor& x) { return gemm(m, x); }};
}

Tensor materialize(const LinearOperator& op) {
  const std::size_t n = op.dim();
  Tensor dense = Tensor::matrix(n, n);
  Tensor e(op.shape);
  for (std::size_t j = 0; j < n; ++j) {
    e.fill(0.0);
    e[j] = 1.0;
    const Tensor col = op(e);
    for (std::size_t i = 0; i < n; ++i) dense(i, j) = col[i];
  }
  return dense;
}

CgResult cg_solve(const LinearOperator& op, const Tensor& b, const CgOptions& options) {
  if (b.shape() != op.shape) {
    throw DimensionError("cg_solve: rhs shape " + shape_string(b.shape()) + " vs operator shape " +
                         shape_string(op.shape));
  }
  CgResult result;
  result.x = Tensor(b.shape());
  const double b_norm = norm(b);
  if (!std::isfinite(b_norm)) throw NumericalError("cg_solve: non-finite right-hand side", 0);
  if (b_norm == 0.0) return result;

  const int max_iters = options.max_iters > 0 ? options.max_iters : static_cast<int>(op.dim());
  Tensor r = b;
  Tensor p = r;
  double rs = b_norm * b_norm;
  while (result.iterations < max_iters) {
    const Tensor ap = op(p);
    const double p_ap = dot(p, ap);
    const int it = result.iterations + 1;
    if (!std::isfinite(p_ap) || p_ap <= 0.0) {
      throw NumericalError("cg_solve: breakdown, <p, Ap> = " + std::to_string(p_ap), it);
    }
    const double alpha = rs / p_ap;
    axpy(alpha, p, result.x);
    axpy(-alpha, ap, r);
    const double rs_new = dot(r, r);
    result.iterations = it;
    if (!std::isfinite(rs_new)) throw NumericalError("cg_solve: non-finite residual", it);
    if (options.record_history) result.history.push_back(result.x);
    if (std::sqrt(rs_new) <= options.tol * b_norm) {
      rs = rs_new;
      break;
    }
    const double beta = rs_new / rs;
    rs = rs_new;
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = r[k] + beta * p[k];
  }
  result.residual_norm = std::sqrt(rs);
  return result;
}

CgResult cg_solve(const LinearOperator& op, const Tensor& b, int max_iters, double tol) {
  return cg_solve(op, b, CgOptions{max_iters, tol, false});
}

Tensor cholesky(const Tensor& a) {
  if (a.rank() != 2 || a.rows() != a.cols()) {
    throw DimensionError("cholesky: expected a square matrix, got " + shape_string(a.shape()));
  }
  const std::size_t n = a.rows();
  Tensor l = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double* li = l.row(i);
    for (std::size_t j = 0; j <= i; ++j) {
      const double* lj = l.row(j);
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= li[k] * lj[k];
      if (i == j) {
        if (!(s > 0.0)) throw FactorizationError("cholesky: non-positive pivot", i);
        li[i] = std::sqrt(s);
      } else {
        li[j] = s / lj[j];
      }
    }
  }
  return l;
}

Tensor direct_spd_solve(const Tensor& a, const Tensor& b) {
  const Tensor l = cholesky(a);
  const std::size_t n = l.rows();
  if (b.rows() != n) {
    throw DimensionError("direct_spd_solve: A is " + shape_string(a.shape()) + ", B is " +
                         shape_string(b.shape()));
  }
  const std::size_t m = b.cols();
  Tensor x = b.reshaped(Shape{n, m});
  // L Y = B
  for (std::size_t i = 0; i < n; ++i) {
    double* xi = x.row(i);
    for (std::size_t k = 0; k < i; ++k) {
      const double lik = l(i, k);
      const double* xk = x.row(k);
      for (std::size_t c = 0; c < m; ++c) xi[c] -= lik * xk[c];
    }
    const double inv = 1.0 / l(i, i);
    for (std::size_t c = 0; c < m; ++c) xi[c] *= inv;
  }
  // L^T X = Y
  for (std::size_t ii = n; ii-- > 0;) {
    double* xi = x.row(ii);
    for (std::size_t k = ii + 1; k < n; ++k) {
      const double lki = l(k, ii);
      const double* xk = x.row(k);
      for (std::size_t c = 0; c < m; ++c) xi[c] -= lki * xk[c];
    }
    const double inv = 1.0 / l(ii, ii);
    for (std::size_t c = 0; c < m; ++c) xi[c] *= inv;
  }
  return std::move(x).reshaped(b.shape());
}

double power_iteration(const LinearOperator& op, int iters, std::uint64_t seed) {
  if (iters < 1) throw InputError("power_iteration: iters must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Tensor x(op.shape);
  for (double& v : x.values()) v = gauss(rng);
  x *= 1.0 / norm(x);
  for (int it = 0; it < iters; ++it) {
    Tensor y = op(x);
    const double ny = norm(y);
    if (ny == 0.0) return 0.0;
    x = std::move(y);
    x *= 1.0 / ny;
  }
  return dot(x, op(x));
}

double power_iteration(const LinearOperator& op, std::size_t dim, int iters, std::uint64_t seed) {
  if (dim != op.dim()) throw DimensionError("power_iteration: dim does not match operator");
  return power_iteration(op, iters, seed);
}

double inverse_power_iteration(const LinearOperator& op, int iters, std::uint64_t seed,
                               double inner_tol) {
  const int inner_iters = static_cast<int>(4 * op.dim() + 10);
  LinearOperator inverse{op.shape, [&op, inner_tol, inner_iters](const Tensor& x) {
                           return cg_solve(op, x, inner_iters, inner_tol).x;
                         }};
  const double largest_inverse = power_iteration(inverse, iters, seed);
  return 1.0 / largest_inverse;
}

std::vector<double> symmetric_eigenvalues(const Tensor& a) {
  if (a.rank() != 2 || a.rows() != a.cols()) {
    throw DimensionError("symmetric_eigenvalues: expected a square matrix");
  }
  const auto n = static_cast<Eigen::Index>(a.rows());
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
      a.data(), n, n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd& ev = solver.eigenvalues();
  return std::vector<double>(ev.data(), ev.data() + ev.size());
}

}  // namespace proxprop::linalg
