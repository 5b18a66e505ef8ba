#pragma once

#include <cstddef>
#include <span>

#include "graffl/matrix.hpp"
#include "graffl/rng.hpp"

namespace graffl {

/// Standard normal via the Marsaglia polar method (no cached spare).
double sample_standard_normal(RngStream& rng);

/// Gamma(shape, 1) by Marsaglia–Tsang; shape < 1 uses the U^(1/shape) boost.
double sample_gamma(double shape, RngStream& rng);

double sample_chi_squared(double dof, RngStream& rng);

/// mean + L·u with L = cholesky(cov), u ~ N(0, I).
Vector sample_mvn(std::span<const double> mean, const Matrix& cov, RngStream& rng);

/// Same draw with a precomputed Cholesky factor.
Vector sample_mvn_chol(std::span<const double> mean, const Matrix& chol_lower, RngStream& rng);

/// Normalized independent Gamma(alpha_i) draws. Throws InvalidHyperparameter for alpha_i <= 0.
Vector sample_dirichlet(std::span<const double> alpha, RngStream& rng);

/// Σ ~ IW(nu, psi): Bartlett draw W ~ Wishart(nu, psi⁻¹), then Σ = W⁻¹.
/// Requires nu > D - 1.
Matrix sample_inverse_wishart(double nu, const Matrix& psi, RngStream& rng);

/// Index k with probability weights[k]. Throws InvalidWeights on a negative
/// entry or when the weights do not sum to 1 within 1e-9.
std::size_t sample_categorical(std::span<const double> weights, RngStream& rng);

}  // namespace graffl
