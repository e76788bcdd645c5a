#pragma once
#include <cstddef>
#include <string>
#include <vector>

namespace pcsc {

// Dense row-major matrix of doubles. The only tensor type in the engine;
// row vectors are 1xC matrices.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0);

    double& at(int r, int c) { return v[std::size_t(r) * cols + c]; }
    double at(int r, int c) const { return v[std::size_t(r) * cols + c]; }
    double* row(int r) { return v.data() + std::size_t(r) * cols; }
    const double* row(int r) const { return v.data() + std::size_t(r) * cols; }
    std::size_t size() const { return v.size(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    std::string shape_str() const;

    void fill(double x);
    bool all_finite() const;
    double frob_norm() const;
    double max_abs_diff(const Matrix& o) const;
};

// c = a * b
Matrix matmul(const Matrix& a, const Matrix& b);
// c += a * b
void matmul_acc(const Matrix& a, const Matrix& b, Matrix& c);
// c += a^T * b
void matmul_at_b_acc(const Matrix& a, const Matrix& b, Matrix& c);
// c = a * b^T
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);

Matrix col_sums(const Matrix& a);                    // 1xC
void add_row_vector(Matrix& a, const Matrix& row);   // a[i] += row for all i
void axpy(double alpha, const Matrix& x, Matrix& y); // y += alpha * x

// Throws std::invalid_argument naming `who` and both shapes.
void require_shape(const Matrix& m, int rows, int cols, const std::string& who);
void require_mul_conformable(const Matrix& a, const Matrix& b, const std::string& who);

} // namespace pcsc
