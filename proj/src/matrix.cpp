#include "corrlab/matrix.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace corrlab {

namespace {

using EigenRowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<EigenRowMajor>;
using ConstMapRM = Eigen::Map<const EigenRowMajor>;

ConstMapRM as_eigen(const Matrix& m) {
    return ConstMapRM(m.data(), m.rows(), m.cols());
}

MapRM as_eigen(Matrix& m) {
    return MapRM(m.data(), m.rows(), m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
    }
}

}  // namespace

Matrix::Matrix(int rows, int cols)
    : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, 0.0) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("Matrix: negative dimension");
}

Matrix::Matrix(int rows, int cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("Matrix: negative dimension");
    if (data_.size() != static_cast<std::size_t>(rows) * cols) {
        throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) +
                                    " != " + std::to_string(rows) + "x" + std::to_string(cols));
    }
}

Matrix Matrix::constant(int rows, int cols, double v) {
    Matrix m(rows, cols);
    std::fill(m.data_.begin(), m.data_.end(), v);
    return m;
}

Matrix Matrix::identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

bool Matrix::all_finite() const {
    return as_eigen(*this).allFinite();
}

void Matrix::require_finite(const char* what) const {
    if (!all_finite()) {
        throw std::runtime_error(std::string(what) + ": non-finite entries in " + shape_str() +
                                 " result");
    }
}

std::string Matrix::shape_str() const {
    std::ostringstream os;
    os << "[" << rows_ << "x" << cols_ << "]";
    return os.str();
}

Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix c(a.rows(), a.cols());
    as_eigen(c) = as_eigen(a) + as_eigen(b);
    c.require_finite("add");
    return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "sub");
    Matrix c(a.rows(), a.cols());
    as_eigen(c) = as_eigen(a) - as_eigen(b);
    c.require_finite("sub");
    return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "hadamard");
    Matrix c(a.rows(), a.cols());
    as_eigen(c) = as_eigen(a).cwiseProduct(as_eigen(b));
    c.require_finite("hadamard");
    return c;
}

Matrix scale(const Matrix& a, double s) {
    Matrix c(a.rows(), a.cols());
    as_eigen(c) = as_eigen(a) * s;
    c.require_finite("scale");
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix c(a.cols(), a.rows());
    as_eigen(c) = as_eigen(a).transpose();
    return c;
}

Matrix matmul(const Matrix& a, const Matrix& b, bool trans_a, bool trans_b) {
    const int ar = trans_a ? a.cols() : a.rows();
    const int ac = trans_a ? a.rows() : a.cols();
    const int br = trans_b ? b.cols() : b.rows();
    const int bc = trans_b ? b.rows() : b.cols();
    if (ac != br) {
        throw std::invalid_argument("matmul: inner dimension mismatch " + a.shape_str() +
                                    (trans_a ? "^T" : "") + " * " + b.shape_str() +
                                    (trans_b ? "^T" : ""));
    }
    Matrix c(ar, bc);
    auto ea = as_eigen(a);
    auto eb = as_eigen(b);
    auto ec = as_eigen(c);
    if (!trans_a && !trans_b)
        ec.noalias() = ea * eb;
    else if (trans_a && !trans_b)
        ec.noalias() = ea.transpose() * eb;
    else if (!trans_a && trans_b)
        ec.noalias() = ea * eb.transpose();
    else
        ec.noalias() = ea.transpose() * eb.transpose();
    c.require_finite("matmul");
    return c;
}

double sum(const Matrix& a) {
    return as_eigen(a).sum();
}

double frobenius_norm(const Matrix& a) {
    return as_eigen(a).norm();
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "max_abs_diff");
    if (a.size() == 0) return 0.0;
    return (as_eigen(a) - as_eigen(b)).cwiseAbs().maxCoeff();
}

Matrix col_mean(const Matrix& a) {
    if (a.rows() == 0) throw std::invalid_argument("col_mean: empty matrix");
    Matrix c(1, a.cols());
    as_eigen(c) = as_eigen(a).colwise().mean();
    return c;
}

Matrix col_sum(const Matrix& a) {
    Matrix c(1, a.cols());
    as_eigen(c) = as_eigen(a).colwise().sum();
    return c;
}

}  // namespace corrlab
