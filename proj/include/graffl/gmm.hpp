#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

#include "graffl/matrix.hpp"
#include "graffl/rng.hpp"

namespace graffl {

/// Mixture weights, component means and covariances in the d-dimensional summary space.
struct GmmParams {
    Vector weights;
    std::vector<Vector> means;
    std::vector<Matrix> covs;

    [[nodiscard]] std::size_t k() const noexcept { return weights.size(); }
    [[nodiscard]] std::size_t dim() const noexcept { return means.empty() ? 0 : means.front().size(); }

    /// Throws InvalidWeights / DimensionMismatch / NotPositiveDefinite.
    void validate() const;

    friend bool operator==(const GmmParams&, const GmmParams&) = default;
};

/// Dirichlet concentration plus Normal-Inverse-Wishart hyperparameters.
struct PriorConfig {
    Vector alpha;
    double nu = 0.0;
    Matrix psi;
    Vector m;
    double kappa = 0.0;

    [[nodiscard]] std::size_t dim() const noexcept { return m.size(); }

    /// α = 1, m = 0, κ = 0.1, ν = d + 2, Ψ = spread · I.
    static PriorConfig defaults(std::size_t k, std::size_t dim, double spread = 1.0);

    /// Throws InvalidHyperparameter (or DimensionMismatch) when an invariant fails.
    void validate() const;
};

struct GmmSample {
    Matrix x;
    std::vector<std::size_t> assignments;  // test oracles only; never transmitted
};

double log_density(std::span<const double> x, const GmmParams& params);

/// Σ_k π_k N(x | μ_k, Σ_k), evaluated through log-sum-exp.
double density(std::span<const double> x, const GmmParams& params);

GmmSample sample(const GmmParams& params, std::size_t n, RngStream& rng);

/// π ~ Dir(α); per component Σ_k ~ IW(ν, Ψ) then μ_k ~ N(m, Σ_k / κ).
GmmParams sample_prior(const PriorConfig& prior, std::size_t k, RngStream& rng);

double log_likelihood(const Matrix& data, const GmmParams& params);

nlohmann::ordered_json to_json(const GmmParams& params);
GmmParams gmm_from_json(const nlohmann::json& doc);

nlohmann::ordered_json to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& doc);

}  // namespace graffl
