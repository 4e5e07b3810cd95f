#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace debias {

// Dense row-major matrix. Vectors are stored as 1xN or Nx1 as convenient.
template <typename Real>
class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, Real fill = Real(0))
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    Real* row(std::size_t r) { return data_.data() + r * cols_; }
    const Real* row(std::size_t r) const { return data_.data() + r * cols_; }

    Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    Real operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::vector<Real>& data() { return data_; }
    const std::vector<Real>& data() const { return data_; }

    void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(Real(0)); }

    bool same_shape(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_;
    }

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<Real> data_;
};

// C += A * B   (A: m x k, B: k x n)
template <typename Real>
void matmul_acc(const Matrix<Real>& a, const Matrix<Real>& b, Matrix<Real>& c) {
    if (a.cols() != b.rows() || c.rows() != a.rows() || c.cols() != b.cols())
        throw std::invalid_argument("matmul_acc: shape mismatch");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    for (std::size_t i = 0; i < m; ++i) {
        const Real* ai = a.row(i);
        Real* ci = c.row(i);
        for (std::size_t p = 0; p < k; ++p) {
            const Real av = ai[p];
            if (av == Real(0)) continue;
            const Real* bp = b.row(p);
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C += A * B^T   (A: m x k, B: n x k)
template <typename Real>
void matmul_bt_acc(const Matrix<Real>& a, const Matrix<Real>& b, Matrix<Real>& c) {
    if (a.cols() != b.cols() || c.rows() != a.rows() || c.cols() != b.rows())
        throw std::invalid_argument("matmul_bt_acc: shape mismatch");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    for (std::size_t i = 0; i < m; ++i) {
        const Real* ai = a.row(i);
        Real* ci = c.row(i);
        for (std::size_t j = 0; j < n; ++j) {
            const Real* bj = b.row(j);
            Real s = Real(0);
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] += s;
        }
    }
}

// C += A^T * B   (A: k x m, B: k x n)
template <typename Real>
void matmul_at_acc(const Matrix<Real>& a, const Matrix<Real>& b, Matrix<Real>& c) {
    if (a.rows() != b.rows() || c.rows() != a.cols() || c.cols() != b.cols())
        throw std::invalid_argument("matmul_at_acc: shape mismatch");
    const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
    for (std::size_t p = 0; p < k; ++p) {
        const Real* ap = a.row(p);
        const Real* bp = b.row(p);
        for (std::size_t i = 0; i < m; ++i) {
            const Real av = ap[i];
            if (av == Real(0)) continue;
            Real* ci = c.row(i);
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

}  // namespace debias
