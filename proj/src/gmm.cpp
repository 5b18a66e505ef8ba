#include "graffl/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "graffl/error.hpp"
#include "graffl/samplers.hpp"

namespace graffl {

namespace {

constexpr int kMaxCovarianceRedraws = 100;

double log_normal_chol(std::span<const double> x, std::span<const double> mean, const Matrix& chol) {
    const std::size_t d = x.size();
    Vector diff(d);
    for (std::size_t i = 0; i < d; ++i) diff[i] = x[i] - mean[i];
    const Vector y = solve_lower(chol, diff);
    double quad = 0.0;
    double log_det_half = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        quad += y[i] * y[i];
        log_det_half += std::log(chol(i, i));
    }
    return -0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + quad) - log_det_half;
}

std::vector<Matrix> factor_all(const GmmParams& params) {
    std::vector<Matrix> chols;
    chols.reserve(params.k());
    for (const auto& c : params.covs) chols.push_back(cholesky(c));
    return chols;
}

double log_density_factored(std::span<const double> x, const GmmParams& params, const std::vector<Matrix>& chols) {
    if (x.size() != params.dim()) {
        throw Error(ErrorCode::DimensionMismatch, "point has dimension " + std::to_string(x.size()) +
                                                      ", model has " + std::to_string(params.dim()));
    }
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(params.k(), best);
    for (std::size_t k = 0; k < params.k(); ++k) {
        if (params.weights[k] <= 0.0) continue;
        terms[k] = std::log(params.weights[k]) + log_normal_chol(x, params.means[k], chols[k]);
        best = std::max(best, terms[k]);
    }
    if (!std::isfinite(best)) return best;
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - best);
    return best + std::log(acc);
}

}  // namespace

void GmmParams::validate() const {
    if (weights.empty()) throw Error(ErrorCode::InvalidWeights, "mixture has no components");
    if (means.size() != weights.size() || covs.size() != weights.size()) {
        throw Error(ErrorCode::DimensionMismatch, "weights/means/covs disagree on component count");
    }
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0 && w <= 1.0)) throw Error(ErrorCode::InvalidWeights, "weight outside [0, 1]");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw Error(ErrorCode::InvalidWeights, "weights do not sum to 1");
    const std::size_t d = dim();
    for (std::size_t k = 0; k < weights.size(); ++k) {
        if (means[k].size() != d || covs[k].rows() != d || covs[k].cols() != d) {
            throw Error(ErrorCode::DimensionMismatch, "component " + std::to_string(k) + " has the wrong dimension");
        }
        (void)cholesky(covs[k]);
    }
}

PriorConfig PriorConfig::defaults(std::size_t k, std::size_t dim, double spread) {
    PriorConfig p;
    p.alpha.assign(k, 1.0);
    p.nu = static_cast<double>(dim) + 2.0;
    p.psi = Matrix::identity(dim);
    for (std::size_t i = 0; i < dim; ++i) p.psi(i, i) = spread;
    p.m.assign(dim, 0.0);
    p.kappa = 0.1;
    return p;
}

void PriorConfig::validate() const {
    if (alpha.empty()) throw Error(ErrorCode::InvalidHyperparameter, "empty Dirichlet concentration");
    for (double a : alpha)
        if (!(a > 0.0)) throw Error(ErrorCode::InvalidHyperparameter, "Dirichlet concentration must be positive");
    const std::size_t d = m.size();
    if (d == 0) throw Error(ErrorCode::InvalidHyperparameter, "prior location is empty");
    if (psi.rows() != d || psi.cols() != d) throw Error(ErrorCode::DimensionMismatch, "psi does not match m");
    if (!(nu > static_cast<double>(d) - 1.0)) throw Error(ErrorCode::InvalidHyperparameter, "nu must exceed d - 1");
    if (!(kappa > 0.0)) throw Error(ErrorCode::InvalidHyperparameter, "kappa must be positive");
    try {
        (void)cholesky(psi);
    } catch (const Error&) {
        throw Error(ErrorCode::InvalidHyperparameter, "psi is not positive-definite");
    }
}

double log_density(std::span<const double> x, const GmmParams& params) {
    return log_density_factored(x, params, factor_all(params));
}

double density(std::span<const double> x, const GmmParams& params) { return std::exp(log_density(x, params)); }

GmmSample sample(const GmmParams& params, std::size_t n, RngStream& rng) {
    const std::size_t d = params.dim();
    const auto chols = factor_all(params);
    GmmSample out{Matrix(n, d), std::vector<std::size_t>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t z = sample_categorical(params.weights, rng);
        out.assignments[i] = z;
        const Vector x = sample_mvn_chol(params.means[z], chols[z], rng);
        std::copy(x.begin(), x.end(), out.x.row(i).begin());
    }
    return out;
}

GmmParams sample_prior(const PriorConfig& prior, std::size_t k, RngStream& rng) {
    if (prior.alpha.size() != k) {
        throw Error(ErrorCode::DimensionMismatch, "alpha has " + std::to_string(prior.alpha.size()) +
                                                      " entries for K=" + std::to_string(k));
    }
    GmmParams p;
    p.weights = sample_dirichlet(prior.alpha, rng);
    p.means.reserve(k);
    p.covs.reserve(k);
    const double inv_kappa = 1.0 / prior.kappa;
    for (std::size_t c = 0; c < k; ++c) {
        for (int attempt = 0;; ++attempt) {
            Matrix sigma = sample_inverse_wishart(prior.nu, prior.psi, rng);
            Matrix chol;
            try {
                chol = cholesky(sigma);
            } catch (const Error&) {
                if (attempt + 1 >= kMaxCovarianceRedraws) throw;
                continue;
            }
            // chol(Σ/κ) = chol(Σ)/√κ
            const double scale = std::sqrt(inv_kappa);
            for (auto& v : chol.data()) v *= scale;
            p.means.push_back(sample_mvn_chol(prior.m, chol, rng));
            p.covs.push_back(std::move(sigma));
            break;
        }
    }
    return p;
}

double log_likelihood(const Matrix& data, const GmmParams& params) {
    if (data.rows() == 0) return 0.0;
    if (data.cols() != params.dim()) throw Error(ErrorCode::DimensionMismatch, "data columns do not match model");
    const auto chols = factor_all(params);
    double total = 0.0;
    for (std::size_t i = 0; i < data.rows(); ++i) total += log_density_factored(data.row(i), params, chols);
    return total;
}

nlohmann::ordered_json to_json(const Matrix& m) {
    auto rows = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto r = m.row(i);
        rows.push_back(std::vector<double>(r.begin(), r.end()));
    }
    return rows;
}

Matrix matrix_from_json(const nlohmann::json& doc) {
    if (!doc.is_array()) throw Error(ErrorCode::ParseError, "matrix must be an array of rows");
    std::vector<Vector> rows;
    std::size_t cols = 0;
    for (const auto& r : doc) {
        rows.push_back(r.get<Vector>());
        cols = rows.back().size();
    }
    return Matrix::from_rows(rows, cols);
}

nlohmann::ordered_json to_json(const GmmParams& params) {
    nlohmann::ordered_json doc;
    doc["k"] = params.k();
    doc["dim"] = params.dim();
    doc["weights"] = params.weights;
    doc["means"] = params.means;
    auto covs = nlohmann::ordered_json::array();
    for (const auto& c : params.covs) covs.push_back(to_json(c));
    doc["covs"] = std::move(covs);
    return doc;
}

GmmParams gmm_from_json(const nlohmann::json& doc) {
    try {
        GmmParams p;
        p.weights = doc.at("weights").get<Vector>();
        p.means = doc.at("means").get<std::vector<Vector>>();
        for (const auto& c : doc.at("covs")) p.covs.push_back(matrix_from_json(c));
        if (doc.at("k").get<std::size_t>() != p.k() || doc.at("dim").get<std::size_t>() != p.dim()) {
            throw Error(ErrorCode::DimensionMismatch, "declared k/dim disagree with arrays");
        }
        p.validate();
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, e.what());
    }
}

}  // namespace graffl
