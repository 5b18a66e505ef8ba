#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace graffl {

using Vector = std::vector<double>;

/// Dense row-major real matrix. Entries are finite on construction.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix from_rows(const std::vector<Vector>& rows, std::size_t cols);

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }
    [[nodiscard]] std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }

    [[nodiscard]] const std::vector<double>& data() const noexcept { return data_; }
    [[nodiscard]] std::vector<double>& data() noexcept { return data_; }

    /// Rows [begin, begin + count) as a new matrix.
    [[nodiscard]] Matrix slice_rows(std::size_t begin, std::size_t count) const;
    [[nodiscard]] Matrix transpose() const;
    [[nodiscard]] bool all_finite() const noexcept;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Vector matvec(const Matrix& a, std::span<const double> x);
Matrix vstack(std::span<const Matrix> blocks);

/// Largest |a_ij - b_ij|; shapes must agree.
double max_abs_diff(const Matrix& a, const Matrix& b);

bool is_symmetric(const Matrix& a, double tol = 1e-9);

/// Lower-triangular L with L Lᵀ = a. Throws NotPositiveDefinite on a pivot <= 0.
Matrix cholesky(const Matrix& a);

/// Solves L y = b for lower-triangular L.
Vector solve_lower(const Matrix& lower, std::span<const double> b);
/// Solves Lᵀ x = y for lower-triangular L.
Vector solve_lower_transpose(const Matrix& lower, std::span<const double> y);
/// Solves a x = b for symmetric positive-definite a.
Vector solve_spd(const Matrix& a, std::span<const double> b);

Matrix invert_lower(const Matrix& lower);
Matrix inverse_spd(const Matrix& a);

struct SymmetricEigen {
    Vector values;   // ascending
    Matrix vectors;  // column i pairs with values[i]
};

/// Cyclic Jacobi eigendecomposition; intended for the small (d <= ~32) matrices here.
SymmetricEigen symmetric_eigen(const Matrix& a);

/// Symmetrizes and clamps eigenvalues from below at `floor`.
Matrix nearest_spd(const Matrix& a, double floor);

}  // namespace graffl
