#include "diffrec/matrix.hpp"

#include <cmath>

#include "diffrec/errors.hpp"

#ifdef DIFFREC_HAVE_CBLAS
#include <cblas.h>
#endif

namespace diffrec {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

#ifndef DIFFREC_HAVE_CBLAS
// Fallback dgemm: C = C*beta + alpha * op(A)*op(B), row-major, ikj order.
void naive_gemm(bool ta, bool tb, int m, int n, int k, double alpha,
                const double* a, int lda, const double* b, int ldb,
                double beta, double* c, int ldc) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) c[i * ldc + j] *= beta;
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      double av = alpha * (ta ? a[p * lda + i] : a[i * lda + p]);
      if (av == 0.0) continue;
      const double* brow = tb ? nullptr : &b[p * ldb];
      if (!tb) {
        double* crow = &c[i * ldc];
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (int j = 0; j < n; ++j) c[i * ldc + j] += av * b[j * ldb + p];
      }
    }
  }
}
#endif

void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a,
          int lda, const double* b, int ldb, double beta, double* c, int ldc) {
#ifdef DIFFREC_HAVE_CBLAS
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
              beta, c, ldc);
#else
  naive_gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
#endif
}

}  // namespace

void matmul(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out) {
  require(a.cols == b.rows, "matmul: shape mismatch " + a.shape_str() + " * " + b.shape_str());
  out.rows = a.rows;
  out.cols = b.cols;
  out.data.assign(static_cast<std::size_t>(a.rows) * b.cols, 0.0);
  if (a.rows == 0 || b.cols == 0 || a.cols == 0) return;
  gemm(false, false, a.rows, b.cols, a.cols, 1.0, a.data.data(), a.cols,
       b.data.data(), b.cols, 0.0, out.data.data(), out.cols);
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix out;
  matmul(a, b, out);
  return out;
}

void matmul_at_b_accum(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out) {
  require(a.rows == b.rows && out.rows == a.cols && out.cols == b.cols,
          "matmul_at_b: shape mismatch");
  if (a.rows == 0) return;
  gemm(true, false, a.cols, b.cols, a.rows, 1.0, a.data.data(), a.cols,
       b.data.data(), b.cols, 1.0, out.data.data(), out.cols);
}

void matmul_a_bt_accum(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out) {
  require(a.cols == b.cols && out.rows == a.rows && out.cols == b.rows,
          "matmul_a_bt: shape mismatch");
  if (a.cols == 0) return;
  gemm(false, true, a.rows, b.rows, a.cols, 1.0, a.data.data(), a.cols,
       b.data.data(), b.cols, 1.0, out.data.data(), out.cols);
}

void check_finite(const DenseMatrix& m, const std::string& what) {
  for (double x : m.data)
    if (!std::isfinite(x))
      throw NumericError("non-finite value in " + what + " (" + m.shape_str() + ")");
}

void check_finite(double x, const std::string& what) {
  if (!std::isfinite(x)) throw NumericError("non-finite value in " + what);
}

double sum_of_squares(const DenseMatrix& m) {
  double s = 0.0;
  for (double x : m.data) s += x * x;
  return s;
}

}  // namespace diffrec
