#include "graffl/abc.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "graffl/error.hpp"
#include "graffl/samplers.hpp"

namespace graffl {

void AbcConfig::validate() const {
    if (n_accept == 0) throw Error(ErrorCode::InvalidHyperparameter, "L must be at least 1");
    if (n_proposals < n_accept) {
        throw Error(ErrorCode::InsufficientProposals,
                    "N=" + std::to_string(n_proposals) + " is smaller than L=" + std::to_string(n_accept));
    }
    if (k == 0) throw Error(ErrorCode::InvalidHyperparameter, "K must be at least 1");
    prior.validate();
    if (prior.dim() != dim) throw Error(ErrorCode::DimensionMismatch, "prior dimension differs from summary dim");
    if (prior.alpha.size() != k) throw Error(ErrorCode::DimensionMismatch, "alpha length differs from K");
}

Proposal propose(const AbcConfig& config, RngStream& rng) {
    Proposal p{sample_prior(config.prior, config.k, rng), {}};
    const GmmSample draw = sample(p.params, 1, rng);
    p.sample.assign(draw.x.row(0).begin(), draw.x.row(0).end());
    return p;
}

Vector discrepancy_batch(const Matrix& enc, const Matrix& gen) {
    if (enc.rows() != gen.rows() || enc.cols() != gen.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "discrepancy needs equal shapes, got " + std::to_string(enc.rows()) +
                                                      "x" + std::to_string(enc.cols()) + " and " +
                                                      std::to_string(gen.rows()) + "x" + std::to_string(gen.cols()));
    }
    Vector out(enc.rows(), 0.0);
    for (std::size_t i = 0; i < enc.rows(); ++i) {
        const auto a = enc.row(i);
        const auto b = gen.row(i);
        double s = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) {
            const double diff = a[k] - b[k];
            s += diff * diff;
        }
        out[i] = s;
    }
    return out;
}

double select_threshold(std::span<const double> discrepancies, std::size_t n_accept) {
    if (discrepancies.empty()) throw Error(ErrorCode::EmptyPosterior, "no discrepancies");
    Vector sorted(discrepancies.begin(), discrepancies.end());
    std::sort(sorted.begin(), sorted.end());
    if (n_accept >= sorted.size()) return sorted.back();
    return sorted[n_accept];
}

TopLSelector::TopLSelector(std::size_t n_accept) : capacity_(n_accept) {
    if (n_accept == 0) throw Error(ErrorCode::InvalidHyperparameter, "L must be at least 1");
}

void TopLSelector::offer(std::size_t proposal_index, GmmParams params, double discrepancy) {
    ++offered_;
    auto reject = [this](double d) {
        if (!any_rejected_ || d < min_rejected_) min_rejected_ = d;
        any_rejected_ = true;
    };
    if (kept_.size() < capacity_) {
        kept_.push({discrepancy, proposal_index, std::move(params)});
        return;
    }
    const Entry& worst = kept_.top();
    const bool better = discrepancy < worst.discrepancy ||
                        (discrepancy == worst.discrepancy && proposal_index < worst.index);
    if (!better) {
        reject(discrepancy);
        return;
    }
    reject(worst.discrepancy);
    kept_.pop();
    kept_.push({discrepancy, proposal_index, std::move(params)});
}

Posterior TopLSelector::finish() && {
    if (kept_.empty()) throw Error(ErrorCode::EmptyPosterior, "no proposals were offered");
    Posterior post;
    post.accepted.resize(kept_.size());
    for (std::size_t i = kept_.size(); i-- > 0;) {
        // priority_queue::top is const; the entry is popped right after, so moving out is safe.
        auto& top = const_cast<Entry&>(kept_.top());
        post.accepted[i] = {top.index, std::move(top.params), top.discrepancy};
        kept_.pop();
    }
    post.epsilon = any_rejected_ ? min_rejected_ : post.accepted.back().discrepancy;
    return post;
}

Posterior rejection_sample(const AbcConfig& config, const Matrix& observed_enc, RngStream& rng) {
    config.validate();
    const std::size_t m = observed_enc.rows();
    if (m == 0) throw Error(ErrorCode::DimensionMismatch, "observed summary matrix is empty");
    if (observed_enc.cols() != config.dim) {
        throw Error(ErrorCode::DimensionMismatch, "observed summary width differs from configured dim");
    }
    TopLSelector selector(config.n_accept);
    std::size_t index = 0;
    while (index < config.n_proposals) {
        const std::size_t round = std::min(m, config.n_proposals - index);
        Matrix gen(round, config.dim);
        std::vector<GmmParams> params;
        params.reserve(round);
        for (std::size_t i = 0; i < round; ++i) {
            Proposal p = propose(config, rng);
            std::copy(p.sample.begin(), p.sample.end(), gen.row(i).begin());
            params.push_back(std::move(p.params));
        }
        const Vector disc = discrepancy_batch(observed_enc.slice_rows(0, round), gen);
        for (std::size_t i = 0; i < round; ++i) selector.offer(index + i, std::move(params[i]), disc[i]);
        index += round;
    }
    return std::move(selector).finish();
}

GmmParams canonical_order(const GmmParams& params) {
    std::vector<std::size_t> order(params.k());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::lexicographical_compare(params.means[a].begin(), params.means[a].end(), params.means[b].begin(),
                                            params.means[b].end());
    });
    GmmParams out;
    for (std::size_t idx : order) {
        out.weights.push_back(params.weights[idx]);
        out.means.push_back(params.means[idx]);
        out.covs.push_back(params.covs[idx]);
    }
    return out;
}

GmmParams summarize_posterior(const Posterior& posterior) {
    if (posterior.accepted.empty()) throw Error(ErrorCode::EmptyPosterior, "posterior has no accepted draws");
    const auto& first = posterior.accepted.front().params;
    const std::size_t k = first.k();
    const std::size_t d = first.dim();
    GmmParams mean;
    mean.weights.assign(k, 0.0);
    mean.means.assign(k, Vector(d, 0.0));
    mean.covs.assign(k, Matrix(d, d));
    for (const auto& draw : posterior.accepted) {
        if (draw.params.k() != k || draw.params.dim() != d) {
            throw Error(ErrorCode::DimensionMismatch, "accepted draws disagree on K or d");
        }
        const GmmParams ordered = canonical_order(draw.params);
        for (std::size_t c = 0; c < k; ++c) {
            mean.weights[c] += ordered.weights[c];
            for (std::size_t i = 0; i < d; ++i) mean.means[c][i] += ordered.means[c][i];
            for (std::size_t i = 0; i < d * d; ++i) mean.covs[c].data()[i] += ordered.covs[c].data()[i];
        }
    }
    const double inv_l = 1.0 / static_cast<double>(posterior.accepted.size());
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        mean.weights[c] *= inv_l;
        total += mean.weights[c];
        for (auto& v : mean.means[c]) v *= inv_l;
        for (auto& v : mean.covs[c].data()) v *= inv_l;
        mean.covs[c] = nearest_spd(mean.covs[c], 1e-9);
    }
    for (auto& w : mean.weights) w /= total;
    return mean;
}

double ks_statistic(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw Error(ErrorCode::DimensionMismatch, "KS statistic needs non-empty samples");
    Vector x(a.begin(), a.end());
    Vector y(b.begin(), b.end());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    const double nx = static_cast<double>(x.size());
    const double ny = static_cast<double>(y.size());
    std::size_t i = 0;
    std::size_t j = 0;
    double best = 0.0;
    while (i < x.size() && j < y.size()) {
        const double v = std::min(x[i], y[j]);
        while (i < x.size() && x[i] == v) ++i;
        while (j < y.size() && y[j] == v) ++j;
        best = std::max(best, std::abs(static_cast<double>(i) / nx - static_cast<double>(j) / ny));
    }
    return best;
}

double prior_limit_check(const AbcConfig& config, const Matrix& observed_enc, RngStream& rng) {
    if (config.n_accept != config.n_proposals) {
        throw Error(ErrorCode::InvalidHyperparameter, "prior limit check requires L = N");
    }
    const Posterior post = rejection_sample(config, observed_enc, rng);
    Vector accepted;
    accepted.reserve(post.accepted.size());
    for (const auto& a : post.accepted) accepted.push_back(a.params.weights[0]);
    Vector fresh;
    fresh.reserve(accepted.size());
    for (std::size_t i = 0; i < accepted.size(); ++i) fresh.push_back(sample_dirichlet(config.prior.alpha, rng)[0]);
    return ks_statistic(accepted, fresh);
}

nlohmann::ordered_json to_json(const Posterior& posterior) {
    nlohmann::ordered_json doc;
    doc["epsilon"] = posterior.epsilon;
    auto accepted = nlohmann::ordered_json::array();
    for (const auto& a : posterior.accepted) {
        nlohmann::ordered_json entry;
        entry["proposal_index"] = a.proposal_index;
        entry["discrepancy"] = a.discrepancy;
        entry["params"] = to_json(a.params);
        accepted.push_back(std::move(entry));
    }
    doc["accepted"] = std::move(accepted);
    return doc;
}

Posterior posterior_from_json(const nlohmann::json& doc) {
    try {
        Posterior p;
        p.epsilon = doc.at("epsilon").get<double>();
        for (const auto& entry : doc.at("accepted")) {
            p.accepted.push_back({entry.at("proposal_index").get<std::size_t>(), gmm_from_json(entry.at("params")),
                                  entry.at("discrepancy").get<double>()});
        }
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, e.what());
    }
}

}  // namespace graffl
