#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace diffrec {

// Row-major dense matrix of 64-bit floats. Vectors are 1xN or Nx1 matrices.
struct DenseMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  DenseMatrix() = default;
  DenseMatrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  static DenseMatrix identity(int n) {
    DenseMatrix m(n, n);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
  }

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  double* row_ptr(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row_ptr(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const DenseMatrix& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape_str() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
  }
};

// out = a * b. Uses BLAS dgemm when available.
void matmul(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out);
// out += a^T * b
void matmul_at_b_accum(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out);
// out += a * b^T
void matmul_a_bt_accum(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out);

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);

// Throws NumericError naming `what` if any entry is NaN/Inf.
void check_finite(const DenseMatrix& m, const std::string& what);
void check_finite(double x, const std::string& what);

double sum_of_squares(const DenseMatrix& m);

}  // namespace diffrec
