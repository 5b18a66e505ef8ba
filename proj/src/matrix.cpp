#include "graffl/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "graffl/error.hpp"

namespace graffl {

namespace {

std::string shape(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_square(const Matrix& a, const char* what) {
    if (a.rows() != a.cols()) {
        throw Error(ErrorCode::DimensionMismatch, std::string(what) + " needs a square matrix, got " + shape(a));
    }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw Error(ErrorCode::DimensionMismatch, "matrix data length " + std::to_string(data_.size()) +
                                                      " does not match " + std::to_string(rows_) + "x" +
                                                      std::to_string(cols_));
    }
    if (!all_finite()) throw Error(ErrorCode::NonFiniteFeature, "matrix contains NaN or Inf");
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw Error(ErrorCode::DimensionMismatch, "ragged row list");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
}

Matrix Matrix::from_rows(const std::vector<Vector>& rows, std::size_t cols) {
    std::vector<double> data;
    data.reserve(rows.size() * cols);
    for (const auto& row : rows) {
        if (row.size() != cols) throw Error(ErrorCode::DimensionMismatch, "ragged row list");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(rows.size(), cols, std::move(data));
}

Matrix Matrix::slice_rows(std::size_t begin, std::size_t count) const {
    if (begin + count > rows_) throw Error(ErrorCode::DimensionMismatch, "row slice out of range");
    Matrix out(count, cols_);
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_), count * cols_, out.data_.begin());
    return out;
}

Matrix Matrix::transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw Error(ErrorCode::DimensionMismatch, "matmul " + shape(a) + " by " + shape(b));
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
        }
    }
    return out;
}

Vector matvec(const Matrix& a, std::span<const double> x) {
    if (a.cols() != x.size()) throw Error(ErrorCode::DimensionMismatch, "matvec " + shape(a));
    Vector out(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto r = a.row(i);
        out[i] = std::inner_product(r.begin(), r.end(), x.begin(), 0.0);
    }
    return out;
}

Matrix vstack(std::span<const Matrix> blocks) {
    std::size_t rows = 0;
    std::size_t cols = 0;
    bool have_cols = false;
    for (const auto& b : blocks) {
        if (b.rows() == 0) continue;
        if (have_cols && b.cols() != cols) throw Error(ErrorCode::DimensionMismatch, "vstack column mismatch");
        cols = b.cols();
        have_cols = true;
        rows += b.rows();
    }
    std::vector<double> data;
    data.reserve(rows * cols);
    for (const auto& b : blocks) data.insert(data.end(), b.data().begin(), b.data().end());
    return Matrix(rows, cols, std::move(data));
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "compare " + shape(a) + " with " + shape(b));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    return worst;
}

bool is_symmetric(const Matrix& a, double tol) {
    if (a.rows() != a.cols()) return false;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = i + 1; j < a.cols(); ++j)
            if (std::abs(a(i, j) - a(j, i)) > tol) return false;
    return true;
}

Matrix cholesky(const Matrix& a) {
    require_square(a, "cholesky");
    if (!is_symmetric(a, 1e-9)) throw Error(ErrorCode::NotPositiveDefinite, "cholesky input is not symmetric");
    const std::size_t n = a.rows();
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double diag = a(j, j);
        for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
        if (!(diag > 0.0)) {
            throw Error(ErrorCode::NotPositiveDefinite, "non-positive pivot at column " + std::to_string(j));
        }
        const double ljj = std::sqrt(diag);
        l(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / ljj;
        }
    }
    return l;
}

Vector solve_lower(const Matrix& lower, std::span<const double> b) {
    const std::size_t n = lower.rows();
    if (b.size() != n) throw Error(ErrorCode::DimensionMismatch, "solve_lower rhs length");
    Vector y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= lower(i, k) * y[k];
        y[i] = s / lower(i, i);
    }
    return y;
}

Vector solve_lower_transpose(const Matrix& lower, std::span<const double> y) {
    const std::size_t n = lower.rows();
    if (y.size() != n) throw Error(ErrorCode::DimensionMismatch, "solve_lower_transpose rhs length");
    Vector x(n);
    for (std::size_t ii = n; ii-- > 0;) {
        double s = y[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= lower(k, ii) * x[k];
        x[ii] = s / lower(ii, ii);
    }
    return x;
}

Vector solve_spd(const Matrix& a, std::span<const double> b) {
    const Matrix l = cholesky(a);
    return solve_lower_transpose(l, solve_lower(l, b));
}

Matrix invert_lower(const Matrix& lower) {
    require_square(lower, "invert_lower");
    const std::size_t n = lower.rows();
    Matrix inv(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        inv(j, j) = 1.0 / lower(j, j);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = 0.0;
            for (std::size_t k = j; k < i; ++k) s -= lower(i, k) * inv(k, j);
            inv(i, j) = s / lower(i, i);
        }
    }
    return inv;
}

Matrix inverse_spd(const Matrix& a) {
    const Matrix linv = invert_lower(cholesky(a));
    // a⁻¹ = L⁻ᵀ L⁻¹
    Matrix out = matmul(linv.transpose(), linv);
    const std::size_t n = out.rows();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = 0.5 * (out(i, j) + out(j, i));
            out(i, j) = v;
            out(j, i) = v;
        }
    return out;
}

SymmetricEigen symmetric_eigen(const Matrix& a) {
    require_square(a, "symmetric_eigen");
    const std::size_t n = a.rows();
    Matrix m = a;
    Matrix v = Matrix::identity(n);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += m(p, q) * m(p, q);
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (m(p, q) == 0.0) continue;
                const double theta = (m(q, q) - m(p, p)) / (2.0 * m(p, q));
                const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double mkp = m(k, p);
                    const double mkq = m(k, q);
                    m(k, p) = c * mkp - s * mkq;
                    m(k, q) = s * mkp + c * mkq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double mpk = m(p, k);
                    const double mqk = m(q, k);
                    m(p, k) = c * mpk - s * mqk;
                    m(q, k) = s * mpk + c * mqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return m(x, x) < m(y, y); });
    SymmetricEigen out{Vector(n), Matrix(n, n)};
    for (std::size_t i = 0; i < n; ++i) {
        out.values[i] = m(order[i], order[i]);
        for (std::size_t k = 0; k < n; ++k) out.vectors(k, i) = v(k, order[i]);
    }
    return out;
}

Matrix nearest_spd(const Matrix& a, double floor) {
    require_square(a, "nearest_spd");
    const std::size_t n = a.rows();
    Matrix sym(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) sym(i, j) = 0.5 * (a(i, j) + a(j, i));
    const auto eig = symmetric_eigen(sym);
    if (eig.values.front() >= floor) return sym;
    Matrix out(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        const double lambda = std::max(eig.values[k], floor);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) out(i, j) += lambda * eig.vectors(i, k) * eig.vectors(j, k);
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) out(j, i) = out(i, j);
    return out;
}

}  // namespace graffl
