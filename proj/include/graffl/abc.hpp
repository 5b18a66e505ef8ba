#pragma once

#include <cstddef>
#include <queue>
#include <span>
#include <vector>

#include <json.hpp>

#include "graffl/gmm.hpp"
#include "graffl/matrix.hpp"
#include "graffl/rng.hpp"

namespace graffl {

struct AbcConfig {
    std::size_t n_proposals = 0;  // N
    std::size_t n_accept = 0;     // L
    std::size_t k = 0;
    PriorConfig prior;
    std::size_t dim = 0;

    /// Throws InsufficientProposals when N < L, InvalidHyperparameter otherwise.
    void validate() const;
};

struct AcceptedDraw {
    std::size_t proposal_index = 0;
    GmmParams params;
    double discrepancy = 0.0;

    friend bool operator==(const AcceptedDraw&, const AcceptedDraw&) = default;
};

/// Accepted draws in ascending (discrepancy, proposal index) order.
struct Posterior {
    std::vector<AcceptedDraw> accepted;
    double epsilon = 0.0;

    friend bool operator==(const Posterior&, const Posterior&) = default;
};

/// One prior draw and the single summary-space sample simulated from it.
struct Proposal {
    GmmParams params;
    Vector sample;
};

Proposal propose(const AbcConfig& config, RngStream& rng);

/// Row-wise squared Euclidean distance between positionally paired rows.
Vector discrepancy_batch(const Matrix& enc, const Matrix& gen);

/// Smallest rejected discrepancy once the L smallest are accepted; the
/// largest value when nothing is rejected (L >= n).
double select_threshold(std::span<const double> discrepancies, std::size_t n_accept);

/**
 * Running top-L selection over (discrepancy, proposal index) keys.
 *
 * Holds at most L parameter sets plus the smallest rejected discrepancy, so
 * memory stays O(L) however many proposals are offered. Ties resolve to the
 * lower proposal index.
 */
class TopLSelector {
public:
    explicit TopLSelector(std::size_t n_accept);

    void offer(std::size_t proposal_index, GmmParams params, double discrepancy);

    [[nodiscard]] std::size_t offered() const noexcept { return offered_; }

    Posterior finish() &&;

private:
    struct Entry {
        double discrepancy;
        std::size_t index;
        GmmParams params;
    };
    struct WorseFirst {
        bool operator()(const Entry& a, const Entry& b) const noexcept {
            return a.discrepancy < b.discrepancy || (a.discrepancy == b.discrepancy && a.index < b.index);
        }
    };

    std::size_t capacity_;
    std::size_t offered_ = 0;
    std::priority_queue<Entry, std::vector<Entry>, WorseFirst> kept_;
    bool any_rejected_ = false;
    double min_rejected_ = 0.0;
};

/// Centralized rejection sampler: N proposals, each paired with observed row
/// (proposal index mod M), keeping the L smallest discrepancies.
Posterior rejection_sample(const AbcConfig& config, const Matrix& observed_enc, RngStream& rng);

/// Components sorted by mean, lexicographically.
GmmParams canonical_order(const GmmParams& params);

/// Element-wise mean of the canonically ordered accepted draws, projected
/// back onto valid mixture parameters.
GmmParams summarize_posterior(const Posterior& posterior);

/// Two-sample Kolmogorov–Smirnov statistic.
double ks_statistic(std::span<const double> a, std::span<const double> b);

/// KS distance between the accepted π₁ marginal (L = N run) and a fresh
/// prior sample of the same size.
double prior_limit_check(const AbcConfig& config, const Matrix& observed_enc, RngStream& rng);

nlohmann::ordered_json to_json(const Posterior& posterior);
Posterior posterior_from_json(const nlohmann::json& doc);

}  // namespace graffl
