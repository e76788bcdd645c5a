#include "pcscnet/matrix.hpp"

#include <cmath>
#include <stdexcept>

namespace pcsc {

Matrix::Matrix(int r, int c, double fill) : rows(r), cols(c), v(std::size_t(r) * c, fill) {
    if (r < 0 || c < 0) throw std::invalid_argument("Matrix: negative shape");
}

std::string Matrix::shape_str() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
}

void Matrix::fill(double x) {
    for (auto& e : v) e = x;
}

bool Matrix::all_finite() const {
    for (double e : v)
        if (!std::isfinite(e)) return false;
    return true;
}

double Matrix::frob_norm() const {
    double s = 0.0;
    for (double e : v) s += e * e;
    return std::sqrt(s);
}

double Matrix::max_abs_diff(const Matrix& o) const {
    if (!same_shape(o)) throw std::invalid_argument("max_abs_diff: shape mismatch: " + shape_str() + " vs " + o.shape_str());
    double m = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) m = std::max(m, std::fabs(v[i] - o.v[i]));
    return m;
}

void require_shape(const Matrix& m, int rows, int cols, const std::string& who) {
    if (m.rows != rows || m.cols != cols)
        throw std::invalid_argument(who + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                                    ", got " + m.shape_str());
}

void require_mul_conformable(const Matrix& a, const Matrix& b, const std::string& who) {
    if (a.cols != b.rows)
        throw std::invalid_argument(who + ": shape mismatch: " + a.shape_str() + " * " + b.shape_str());
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    require_mul_conformable(a, b, "matmul");
    Matrix c(a.rows, b.cols, 0.0);
    matmul_acc(a, b, c);
    return c;
}

void matmul_acc(const Matrix& a, const Matrix& b, Matrix& c) {
    require_mul_conformable(a, b, "matmul_acc");
    require_shape(c, a.rows, b.cols, "matmul_acc out");
    const int n = a.rows, k = a.cols, m = b.cols;
#pragma omp parallel for schedule(static) if (std::size_t(n) * k * m > 16384)
    for (int i = 0; i < n; ++i) {
        double* ci = c.row(i);
        const double* ai = a.row(i);
        for (int p = 0; p < k; ++p) {
            const double aip = ai[p];
            if (aip == 0.0) continue;
            const double* bp = b.row(p);
            for (int j = 0; j < m; ++j) ci[j] += aip * bp[j];
        }
    }
}

void matmul_at_b_acc(const Matrix& a, const Matrix& b, Matrix& c) {
    if (a.rows != b.rows)
        throw std::invalid_argument("matmul_at_b_acc: shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
    require_shape(c, a.cols, b.cols, "matmul_at_b_acc out");
    const int n = a.rows, k = a.cols, m = b.cols;
    // c[p][j] += sum_i a[i][p] * b[i][j]; parallel over rows of c keeps the
    // per-element accumulation order fixed regardless of thread count.
#pragma omp parallel for schedule(static) if (std::size_t(n) * k * m > 16384)
    for (int p = 0; p < k; ++p) {
        double* cp = c.row(p);
        for (int i = 0; i < n; ++i) {
            const double aip = a.at(i, p);
            if (aip == 0.0) continue;
            const double* bi = b.row(i);
            for (int j = 0; j < m; ++j) cp[j] += aip * bi[j];
        }
    }
}

Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols)
        throw std::invalid_argument("matmul_a_bt: shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
    Matrix c(a.rows, b.rows, 0.0);
    const int n = a.rows, k = a.cols, m = b.rows;
#pragma omp parallel for schedule(static) if (std::size_t(n) * k * m > 16384)
    for (int i = 0; i < n; ++i) {
        const double* ai = a.row(i);
        double* ci = c.row(i);
        for (int j = 0; j < m; ++j) {
            const double* bj = b.row(j);
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = acc;
        }
    }
    return c;
}

Matrix col_sums(const Matrix& a) {
    Matrix s(1, a.cols, 0.0);
    for (int i = 0; i < a.rows; ++i) {
        const double* ai = a.row(i);
        for (int j = 0; j < a.cols; ++j) s.v[j] += ai[j];
    }
    return s;
}

void add_row_vector(Matrix& a, const Matrix& row) {
    require_shape(row, 1, a.cols, "add_row_vector");
#pragma omp parallel for schedule(static) if (a.size() > 16384)
    for (int i = 0; i < a.rows; ++i) {
        double* ai = a.row(i);
        for (int j = 0; j < a.cols; ++j) ai[j] += row.v[j];
    }
}

void axpy(double alpha, const Matrix& x, Matrix& y) {
    if (!x.same_shape(y)) throw std::invalid_argument("axpy: shape mismatch: " + x.shape_str() + " vs " + y.shape_str());
    for (std::size_t i = 0; i < x.v.size(); ++i) y.v[i] += alpha * x.v[i];
}

} // namespace pcsc
