#include "ndm/numerics.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ndm {

namespace {

[[noreturn]] void shape_error(const std::string& op, const Matrix& a, const Matrix& b) {
  throw std::invalid_argument(op + ": shape mismatch (" + a.shape_str() + " vs " +
                              b.shape_str() + ")");
}

#ifndef NDEBUG
void assert_finite(const Matrix& m) {
  for (double v : m.data) assert(std::isfinite(v));
}
#else
void assert_finite(const Matrix&) {}
#endif

}  // namespace

Matrix::Matrix(int r, int c, double value)
    : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), value) {
  if (r < 0 || c < 0) throw std::invalid_argument("Matrix: negative dimension");
}

void Matrix::fill(double v) { std::fill(data.begin(), data.end(), v); }

std::string Matrix::shape_str() const {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

bool operator==(const Matrix& a, const Matrix& b) {
  return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) shape_error("matmul", a, b);
  assert_finite(a);
  assert_finite(b);
  Matrix c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row(i);
    double* crow = c.row(i);
    for (int k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.row(k);
      for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

void matmul_backward(const Matrix& a, const Matrix& b, const Matrix& dc,
                     Matrix* da, Matrix* db) {
  if (a.cols != b.rows) shape_error("matmul_backward", a, b);
  if (dc.rows != a.rows || dc.cols != b.cols) shape_error("matmul_backward(dc)", dc, a);
  if (da != nullptr) {
    if (!da->same_shape(a)) shape_error("matmul_backward(da)", *da, a);
    // da += dc . b^T
    for (int i = 0; i < a.rows; ++i) {
      const double* dcrow = dc.row(i);
      double* darow = da->row(i);
      for (int k = 0; k < a.cols; ++k) {
        darow[k] += dot({dcrow, static_cast<std::size_t>(dc.cols)}, b.row_span(k));
      }
    }
  }
  if (db != nullptr) {
    if (!db->same_shape(b)) shape_error("matmul_backward(db)", *db, b);
    // db += a^T . dc
    for (int i = 0; i < a.rows; ++i) {
      const double* arow = a.row(i);
      const double* dcrow = dc.row(i);
      for (int k = 0; k < a.cols; ++k) {
        const double aik = arow[k];
        if (aik == 0.0) continue;
        double* dbrow = db->row(k);
        for (int j = 0; j < dc.cols; ++j) dbrow[j] += aik * dcrow[j];
      }
    }
  }
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols, m.rows);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
  return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) shape_error("add", a, b);
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data[i] += b.data[i];
  return c;
}

void add_backward(const Matrix& dc, Matrix* da, Matrix* db) {
  if (da != nullptr) add_inplace(*da, dc);
  if (db != nullptr) add_inplace(*db, dc);
}

void add_inplace(Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) shape_error("add_inplace", a, b);
  for (std::size_t i = 0; i < a.size(); ++i) a.data[i] += b.data[i];
}

void scale_inplace(Matrix& a, double s) {
  for (double& v : a.data) v *= s;
}

Matrix hconcat(std::span<const Matrix> parts) {
  if (parts.empty()) throw std::invalid_argument("hconcat: no parts");
  int total_cols = 0;
  for (const Matrix& p : parts) {
    if (p.rows != parts[0].rows) shape_error("hconcat", p, parts[0]);
    total_cols += p.cols;
  }
  Matrix c(parts[0].rows, total_cols);
  for (int i = 0; i < c.rows; ++i) {
    double* crow = c.row(i);
    for (const Matrix& p : parts) {
      const double* prow = p.row(i);
      std::copy(prow, prow + p.cols, crow);
      crow += p.cols;
    }
  }
  return c;
}

std::vector<Matrix> hsplit(const Matrix& m, int parts) {
  if (parts <= 0 || m.cols % parts != 0)
    throw std::invalid_argument("hsplit: " + m.shape_str() + " into " +
                                std::to_string(parts) + " parts");
  const int w = m.cols / parts;
  std::vector<Matrix> out(parts, Matrix(m.rows, w));
  for (int i = 0; i < m.rows; ++i) {
    const double* mrow = m.row(i);
    for (int p = 0; p < parts; ++p) {
      std::copy(mrow + p * w, mrow + (p + 1) * w, out[p].row(i));
    }
  }
  return out;
}

Matrix gather_rows(const Matrix& m, std::span<const int> row_ids) {
  Matrix out(static_cast<int>(row_ids.size()), m.cols);
  for (std::size_t i = 0; i < row_ids.size(); ++i) {
    const int r = row_ids[i];
    if (r < 0 || r >= m.rows)
      throw std::out_of_range("gather_rows: row " + std::to_string(r) + " of " + m.shape_str());
    std::copy(m.row(r), m.row(r) + m.cols, out.row(static_cast<int>(i)));
  }
  return out;
}

void gather_rows_backward(const Matrix& dgathered, std::span<const int> row_ids, Matrix& dm) {
  if (dgathered.rows != static_cast<int>(row_ids.size()) || dgathered.cols != dm.cols)
    shape_error("gather_rows_backward", dgathered, dm);
  for (std::size_t i = 0; i < row_ids.size(); ++i) {
    axpy(1.0, dgathered.row_span(static_cast<int>(i)), dm.row_span(row_ids[i]));
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

std::vector<double> softmax(std::span<const double> logits, const std::vector<bool>* mask) {
  const std::size_t n = logits.size();
  if (mask != nullptr && mask->size() != n)
    throw std::invalid_argument("softmax: mask size " + std::to_string(mask->size()) +
                                " vs logits size " + std::to_string(n));
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    if (mask != nullptr && (*mask)[i]) continue;
    max_logit = std::max(max_logit, logits[i]);
  }
  if (!std::isfinite(max_logit)) throw std::runtime_error("softmax: all positions masked");

  std::vector<double> out(n, 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (mask != nullptr && (*mask)[i]) continue;
    out[i] = std::exp(logits[i] - max_logit);
    sum += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= sum;
  return out;
}

void softmax_backward(std::span<const double> y, std::span<const double> dy,
                      std::span<double> dx) {
  assert(y.size() == dy.size() && y.size() == dx.size());
  const double inner = dot(y, dy);
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] += y[i] * (dy[i] - inner);
}

std::vector<double> layer_norm(std::span<const double> x, double epsilon) {
  double sigma = 0.0;
  return layer_norm_fwd(x, epsilon, &sigma);
}

std::vector<double> layer_norm_fwd(std::span<const double> x, double epsilon,
                                   double* sigma_out) {
  const std::size_t n = x.size();
  if (n < 2) throw std::invalid_argument("layer_norm: dimension must be >= 2");
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double sigma = std::sqrt(var + epsilon);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = (x[i] - mean) / sigma;
  if (sigma_out != nullptr) *sigma_out = sigma;
  return y;
}

void layer_norm_backward(std::span<const double> y, double sigma,
                         std::span<const double> dy, std::span<double> dx) {
  assert(y.size() == dy.size() && y.size() == dx.size());
  const std::size_t n = y.size();
  double mean_dy = 0.0;
  double mean_dyy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_dy += dy[i];
    mean_dyy += dy[i] * y[i];
  }
  mean_dy /= static_cast<double>(n);
  mean_dyy /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    dx[i] += (dy[i] - mean_dy - y[i] * mean_dyy) / sigma;
  }
}

FdCheckReport finite_difference_check(
    const std::function<double(const std::vector<Matrix>&)>& f,
    std::vector<Matrix> params, const std::vector<Matrix>& analytic_grads,
    double h) {
  if (h < 1e-6 || h > 1e-3)
    throw std::invalid_argument("finite_difference_check: h must be in [1e-6, 1e-3]");
  if (params.size() != analytic_grads.size())
    throw std::invalid_argument("finite_difference_check: grads do not match params");

  FdCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p].same_shape(analytic_grads[p]))
      shape_error("finite_difference_check", params[p], analytic_grads[p]);
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double saved = params[p].data[i];
      params[p].data[i] = saved + h;
      const double f_plus = f(params);
      params[p].data[i] = saved - h;
      const double f_minus = f(params);
      params[p].data[i] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
        throw std::runtime_error("finite_difference_check: non-finite f at perturbed point");
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double analytic = analytic_grads[p].data[i];
      const double rel = std::abs(analytic - numeric) /
                         std::max({1.0, std::abs(analytic), std::abs(numeric)});
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.param = static_cast<int>(p);
        report.row = static_cast<int>(i) / params[p].cols;
        report.col = static_cast<int>(i) % params[p].cols;
        report.analytic = analytic;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace ndm
