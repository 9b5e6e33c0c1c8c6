#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace corrlab {

/// Dense row-major matrix of doubles. Values are immutable by convention once
/// a primitive has produced them; primitives allocate fresh results.
class Matrix {
public:
    Matrix() : rows_(0), cols_(0) {}
    Matrix(int rows, int cols);
    Matrix(int rows, int cols, std::vector<double> data);

    static Matrix zeros(int rows, int cols) { return Matrix(rows, cols); }
    static Matrix constant(int rows, int cols, double v);
    static Matrix identity(int n);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    bool all_finite() const;

    /// Throws std::runtime_error when any entry is NaN/Inf; `what` names the op.
    void require_finite(const char* what) const;

    std::string shape_str() const;

private:
    int rows_;
    int cols_;
    std::vector<double> data_;
};

// Elementwise and reduction kernels. All validate shapes and finiteness of
// their results (non-finite output is a hard error, per the numeric core
// contract).
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
Matrix transpose(const Matrix& a);

/// C = op(A) * op(B) with optional transposes; backed by Eigen's GEMM.
Matrix matmul(const Matrix& a, const Matrix& b, bool trans_a = false, bool trans_b = false);

double sum(const Matrix& a);
double frobenius_norm(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

/// 1 x cols row vector of per-column means / maxima over rows.
Matrix col_mean(const Matrix& a);
Matrix col_sum(const Matrix& a);

}  // namespace corrlab
