#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ndm {

// Row-major dense matrix of doubles. Shape mismatches throw; entry
// finiteness is asserted at kernel boundaries in debug builds only.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double value = 0.0);

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
  std::span<const double> row_span(int r) const { return {row(r), static_cast<std::size_t>(cols)}; }
  std::span<double> row_span(int r) { return {row(r), static_cast<std::size_t>(cols)}; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  void fill(double v);
  std::string shape_str() const;
};

bool operator==(const Matrix& a, const Matrix& b);

// c = a.b
Matrix matmul(const Matrix& a, const Matrix& b);
// Accumulates gradients of c = a.b: da += dc.b^T, db += a^T.dc. Either
// output may be null.
void matmul_backward(const Matrix& a, const Matrix& b, const Matrix& dc,
                     Matrix* da, Matrix* db);

Matrix transpose(const Matrix& m);

Matrix add(const Matrix& a, const Matrix& b);
void add_backward(const Matrix& dc, Matrix* da, Matrix* db);
void add_inplace(Matrix& a, const Matrix& b);
void scale_inplace(Matrix& a, double s);

// Horizontal concatenation of equally-tall blocks, and its inverse/backward.
Matrix hconcat(std::span<const Matrix> parts);
std::vector<Matrix> hsplit(const Matrix& m, int parts);

Matrix gather_rows(const Matrix& m, std::span<const int> row_ids);
// scatter-add of upstream gradient back into dm
void gather_rows_backward(const Matrix& dgathered, std::span<const int> row_ids, Matrix& dm);

double dot(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// Probability-normalizing softmax, stabilized by max subtraction over the
// unmasked entries. mask[i] == true forces probability exactly 0 at i.
// Throws if every position is masked.
std::vector<double> softmax(std::span<const double> logits,
                            const std::vector<bool>* mask = nullptr);

// dx accumulation for y = softmax(x): dx += y * (dy - sum(y*dy)).
// Masked positions carry y == 0 and therefore receive zero gradient.
void softmax_backward(std::span<const double> y, std::span<const double> dy,
                      std::span<double> dx);

// Parameter-free LayerNorm with population variance:
//   y = (x - mean(x)) / sqrt(var(x) + epsilon)
std::vector<double> layer_norm(std::span<const double> x, double epsilon);
// Variant that also reports the denominator needed by the backward pass.
std::vector<double> layer_norm_fwd(std::span<const double> x, double epsilon,
                                   double* sigma_out);
// dx accumulation given normalized output y and the forward denominator:
//   dx += (dy - mean(dy) - y * mean(dy*y)) / sigma
void layer_norm_backward(std::span<const double> y, double sigma,
                         std::span<const double> dy, std::span<double> dx);

constexpr double kLayerNormEpsilon = 1e-5;

// Central-difference gradient check. For every coordinate of every
// parameter the relative error is
//   |analytic - numeric| / max(1, |analytic|, |numeric|)
// and the report carries the worst coordinate. Throws if f evaluates to a
// non-finite value at a perturbed point, or if h is outside [1e-6, 1e-3].
struct FdCheckReport {
  double max_rel_error = 0.0;
  int param = -1;
  int row = -1;
  int col = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

FdCheckReport finite_difference_check(
    const std::function<double(const std::vector<Matrix>&)>& f,
    std::vector<Matrix> params, const std::vector<Matrix>& analytic_grads,
    double h);

}  // namespace ndm
