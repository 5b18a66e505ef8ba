#include "graffl/samplers.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "graffl/error.hpp"

namespace graffl {

double sample_standard_normal(RngStream& rng) {
    for (;;) {
        const double u = 2.0 * rng.uniform() - 1.0;
        const double v = 2.0 * rng.uniform() - 1.0;
        const double s = u * u + v * v;
        if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
}

double sample_gamma(double shape, RngStream& rng) {
    if (!(shape > 0.0) || !std::isfinite(shape)) {
        throw Error(ErrorCode::InvalidHyperparameter, "gamma shape must be positive, got " + std::to_string(shape));
    }
    if (shape < 1.0) {
        const double boosted = sample_gamma(shape + 1.0, rng);
        return boosted * std::pow(rng.uniform_open_low(), 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = 0.0;
        double v = 0.0;
        do {
            x = sample_standard_normal(rng);
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = rng.uniform_open_low();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

double sample_chi_squared(double dof, RngStream& rng) { return 2.0 * sample_gamma(0.5 * dof, rng); }

Vector sample_mvn_chol(std::span<const double> mean, const Matrix& chol_lower, RngStream& rng) {
    const std::size_t n = mean.size();
    if (chol_lower.rows() != n || chol_lower.cols() != n) {
        throw Error(ErrorCode::DimensionMismatch, "mvn mean/covariance dimension mismatch");
    }
    Vector u(n);
    for (auto& ui : u) ui = sample_standard_normal(rng);
    Vector out(mean.begin(), mean.end());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k <= i; ++k) out[i] += chol_lower(i, k) * u[k];
    return out;
}

Vector sample_mvn(std::span<const double> mean, const Matrix& cov, RngStream& rng) {
    if (cov.rows() != mean.size()) throw Error(ErrorCode::DimensionMismatch, "mvn mean/covariance dimension mismatch");
    return sample_mvn_chol(mean, cholesky(cov), rng);
}

Vector sample_dirichlet(std::span<const double> alpha, RngStream& rng) {
    if (alpha.empty()) throw Error(ErrorCode::InvalidHyperparameter, "empty Dirichlet concentration");
    for (double a : alpha) {
        if (!(a > 0.0) || !std::isfinite(a)) {
            throw Error(ErrorCode::InvalidHyperparameter, "Dirichlet concentration must be positive");
        }
    }
    Vector draws(alpha.size());
    double total = 0.0;
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        draws[i] = sample_gamma(alpha[i], rng);
        total += draws[i];
    }
    if (!(total > 0.0)) {
        // Every gamma underflowed (tiny alphas); fall back to a vertex of the simplex.
        draws.assign(alpha.size(), 0.0);
        draws[rng.uniform_index(alpha.size())] = 1.0;
        return draws;
    }
    for (auto& v : draws) v /= total;
    return draws;
}

Matrix sample_inverse_wishart(double nu, const Matrix& psi, RngStream& rng) {
    const std::size_t dim = psi.rows();
    if (psi.cols() != dim) throw Error(ErrorCode::DimensionMismatch, "inverse-Wishart scale must be square");
    if (!(nu > static_cast<double>(dim) - 1.0)) {
        throw Error(ErrorCode::InvalidHyperparameter,
                    "inverse-Wishart needs nu > D - 1, got nu=" + std::to_string(nu) + " D=" + std::to_string(dim));
    }
    // Wishart(nu, psi⁻¹) = (C A)(C A)ᵀ with C = chol(psi⁻¹) and A the Bartlett factor.
    const Matrix c = cholesky(inverse_spd(psi));
    Matrix a(dim, dim);
    for (std::size_t i = 0; i < dim; ++i) {
        a(i, i) = std::sqrt(sample_chi_squared(nu - static_cast<double>(i), rng));
        for (std::size_t j = 0; j < i; ++j) a(i, j) = sample_standard_normal(rng);
    }
    const Matrix t = matmul(c, a);  // lower triangular
    const Matrix tinv = invert_lower(t);
    // Σ = (T Tᵀ)⁻¹ = T⁻ᵀ T⁻¹
    Matrix sigma = matmul(tinv.transpose(), tinv);
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = i + 1; j < dim; ++j) {
            const double v = 0.5 * (sigma(i, j) + sigma(j, i));
            sigma(i, j) = v;
            sigma(j, i) = v;
        }
    if (!sigma.all_finite()) throw Error(ErrorCode::NotPositiveDefinite, "inverse-Wishart draw is not finite");
    return sigma;
}

std::size_t sample_categorical(std::span<const double> weights, RngStream& rng) {
    if (weights.empty()) throw Error(ErrorCode::InvalidWeights, "empty weight vector");
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorCode::InvalidWeights, "negative or non-finite weight");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw Error(ErrorCode::InvalidWeights, "weights sum to " + std::to_string(total) + ", expected 1");
    }
    const double u = rng.uniform() * total;
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        if (weights[k] <= 0.0) continue;
        last_positive = k;
        acc += weights[k];
        if (u < acc) return k;
    }
    return last_positive;
}

}  // namespace graffl
