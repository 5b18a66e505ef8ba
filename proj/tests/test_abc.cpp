#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "graffl/abc.hpp"
#include "graffl/error.hpp"
#include "graffl/experiment.hpp"
#include "support.hpp"

using namespace graffl;

namespace {

AbcConfig small_config(std::size_t n, std::size_t l, std::size_t k = 2, std::size_t d = 2) {
    return {n, l, k, PriorConfig::defaults(k, d, 2.0), d};
}

GmmParams two_component(double a, double b, double w) {
    GmmParams p;
    p.weights = {w, 1.0 - w};
    p.means = {{a, 0.0}, {b, 1.0}};
    p.covs = {Matrix::identity(2), Matrix::from_rows({{2.0, 0.1}, {0.1, 1.0}})};
    return p;
}

void check_posterior_invariants(const Posterior& post, std::size_t n, std::size_t l) {
    REQUIRE(post.accepted.size() == l);
    for (std::size_t i = 1; i < post.accepted.size(); ++i) {
        const auto& a = post.accepted[i - 1];
        const auto& b = post.accepted[i];
        CHECK((a.discrepancy < b.discrepancy || (a.discrepancy == b.discrepancy && a.proposal_index < b.proposal_index)));
    }
    for (const auto& a : post.accepted) CHECK(a.discrepancy <= post.epsilon);
    if (l == n) CHECK(post.epsilon == post.accepted.back().discrepancy);
}

}  // namespace

TEST_CASE("discrepancy examples") {
    const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
    for (double v : discrepancy_batch(a, a)) CHECK(v == 0.0);
    CHECK(discrepancy_batch(Matrix::from_rows({{0, 0}}), Matrix::from_rows({{3, 4}}))[0] == 25.0);
    CHECK_THROWS_AS(discrepancy_batch(a, Matrix(2, 3)), Error);
}

TEST_CASE("property: discrepancy matches the summation oracle") {
    RngStream rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(8), d = 1 + rng.uniform_index(5);
        const Matrix a = testing::random_matrix(n, d, rng, 10.0);
        const Matrix b = testing::random_matrix(n, d, rng, 10.0);
        const Vector got = discrepancy_batch(a, b);
        for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(got[i] - testing::squared_distance_oracle(a.row(i), b.row(i))) < 1e-12);
    }
}

TEST_CASE("select_threshold") {
    const Vector d{5, 1, 4, 2, 3};
    CHECK(select_threshold(d, 2) == 3.0);
    CHECK(select_threshold(d, 5) == 5.0);
    CHECK(select_threshold(d, 9) == 5.0);
    CHECK_THROWS_AS(select_threshold(Vector{}, 1), Error);
}

TEST_CASE("TopLSelector keeps the best L with index tie-break") {
    TopLSelector sel(2);
    const GmmParams p = two_component(0, 1, 0.5);
    sel.offer(0, p, 3.0);
    sel.offer(1, p, 1.0);
    sel.offer(2, p, 1.0);
    sel.offer(3, p, 0.5);
    const Posterior post = std::move(sel).finish();
    REQUIRE(post.accepted.size() == 2);
    CHECK(post.accepted[0].proposal_index == 3);
    CHECK(post.accepted[1].proposal_index == 1);
    CHECK(post.epsilon == 1.0);
}

TEST_CASE("config validation") {
    auto code_of = [](const AbcConfig& c) {
        try {
            c.validate();
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::ConfigError;
    };
    CHECK(code_of(small_config(5, 10)) == ErrorCode::InsufficientProposals);
    CHECK(code_of(small_config(5, 0)) == ErrorCode::InvalidHyperparameter);
    AbcConfig c = small_config(5, 2);
    c.dim = 3;
    CHECK(code_of(c) == ErrorCode::DimensionMismatch);
}

TEST_CASE("L = N accepts everything and epsilon is the largest discrepancy") {
    RngStream data_rng(2);
    const Matrix observed = testing::random_matrix(7, 2, data_rng, 3.0);
    RngStream rng(3);
    const Posterior post = rejection_sample(small_config(20, 20), observed, rng);
    check_posterior_invariants(post, 20, 20);
    std::set<std::size_t> idx;
    for (const auto& a : post.accepted) idx.insert(a.proposal_index);
    CHECK(idx.size() == 20);
}

TEST_CASE("degenerate prior: exact ties resolve to the first L proposals") {
    // Covariances so small that every draw rounds to m exactly.
    AbcConfig c;
    c.n_proposals = 30;
    c.n_accept = 7;
    c.k = 2;
    c.dim = 2;
    c.prior.alpha = {1.0, 1.0};
    c.prior.nu = 50.0;
    c.prior.psi = Matrix::from_rows({{1e-40, 0.0}, {0.0, 1e-40}});
    c.prior.m = {1.0, 2.0};
    c.prior.kappa = 1e9;
    const Matrix observed = Matrix::from_rows({{1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}});
    RngStream rng(4);
    const Posterior post = rejection_sample(c, observed, rng);
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(post.accepted[i].proposal_index == i);
        CHECK(post.accepted[i].discrepancy == 0.0);
    }
    CHECK(post.epsilon == 0.0);
}

TEST_CASE("N=5, L=2 against the brute-force oracle") {
    const Matrix observed = Matrix::from_rows({{0.5, -0.5}, {1.0, 1.0}});
    const AbcConfig c = small_config(5, 2);
    RngStream rng(5);
    const Posterior post = rejection_sample(c, observed, rng);
    const auto oracle = testing::brute_force_rejection(c, observed, 5);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(post.accepted[i].proposal_index == oracle.indices[i]);
        CHECK(post.accepted[i].discrepancy == oracle.discrepancies[i]);
    }
    CHECK(post.epsilon == oracle.epsilon);
}

TEST_CASE("property: rejection_sample equals the brute-force oracle for N <= 200") {
    RngStream meta(6);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + meta.uniform_index(200);
        const std::size_t l = 1 + meta.uniform_index(n);
        const std::size_t m = 1 + meta.uniform_index(40);
        const std::size_t k = 1 + meta.uniform_index(3);
        const std::size_t d = 1 + meta.uniform_index(3);
        const Matrix observed = testing::random_matrix(m, d, meta, 4.0);
        const AbcConfig c = small_config(n, l, k, d);
        const std::uint64_t seed = meta.next_u64();
        RngStream rng(seed);
        const Posterior post = rejection_sample(c, observed, rng);
        const auto oracle = testing::brute_force_rejection(c, observed, seed);
        check_posterior_invariants(post, n, l);
        for (std::size_t i = 0; i < l; ++i) {
            REQUIRE(post.accepted[i].proposal_index == oracle.indices[i]);
            REQUIRE(post.accepted[i].discrepancy == oracle.discrepancies[i]);
        }
        CHECK(post.epsilon == oracle.epsilon);
    }
}

TEST_CASE("property: raising L yields a superset of accepted proposals") {
    RngStream data_rng(7);
    const Matrix observed = testing::random_matrix(13, 2, data_rng, 3.0);
    std::set<std::size_t> previous;
    for (std::size_t l : {1, 5, 20, 80, 150, 300}) {
        RngStream rng(8);
        const Posterior post = rejection_sample(small_config(300, l), observed, rng);
        std::set<std::size_t> current;
        for (const auto& a : post.accepted) current.insert(a.proposal_index);
        CHECK(std::includes(current.begin(), current.end(), previous.begin(), previous.end()));
        previous = std::move(current);
    }
}

TEST_CASE("property: epsilon is the smallest rejected discrepancy") {
    RngStream meta(9);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 2 + meta.uniform_index(150);
        const std::size_t l = 1 + meta.uniform_index(n - 1);
        const Matrix observed = testing::random_matrix(1 + meta.uniform_index(20), 2, meta, 3.0);
        const std::uint64_t seed = meta.next_u64();
        RngStream rng(seed);
        const Posterior post = rejection_sample(small_config(n, l), observed, rng);
        // Recompute every discrepancy and take the minimum over the rejected set.
        RngStream replay(seed);
        std::set<std::size_t> accepted;
        for (const auto& a : post.accepted) accepted.insert(a.proposal_index);
        double min_rejected = std::numeric_limits<double>::infinity();
        for (std::size_t p = 0; p < n; ++p) {
            const Proposal prop = propose(small_config(n, l), replay);
            const double d = testing::squared_distance_oracle(observed.row(p % observed.rows()), prop.sample);
            if (!accepted.count(p)) min_rejected = std::min(min_rejected, d);
        }
        CHECK(post.epsilon == min_rejected);
        check_posterior_invariants(post, n, l);
    }
}

TEST_CASE("contraction on the trimodal fixture") {
    RngStream data_rng(10);
    const TrimodalFixture fx = generate_trimodal(300, data_rng);
    AbcConfig c{4000, 2000, 3, PriorConfig::defaults(3, 2), 2};
    RngStream rng(11);
    const Posterior post = rejection_sample(c, fx.x, rng);
    double mean_half = 0.0, mean_50 = 0.0;
    for (std::size_t i = 0; i < post.accepted.size(); ++i) {
        mean_half += post.accepted[i].discrepancy / 2000.0;
        if (i < 50) mean_50 += post.accepted[i].discrepancy / 50.0;
    }
    CHECK(mean_50 < mean_half);
}

TEST_CASE("canonical_order sorts components by mean") {
    const GmmParams p = two_component(3.0, -1.0, 0.25);
    const GmmParams c = canonical_order(p);
    CHECK(c.means[0] == p.means[1]);
    CHECK(c.weights[0] == 0.75);
    CHECK(c.covs[0] == p.covs[1]);
    GmmParams tie = p;
    tie.means = {{1.0, 5.0}, {1.0, 2.0}};
    CHECK(canonical_order(tie).means[0] == Vector{1.0, 2.0});
}

TEST_CASE("summarize_posterior of a single draw") {
    const GmmParams p = two_component(3.0, -1.0, 0.25);
    const Posterior post{{{0, p, 0.1}}, 0.2};
    const GmmParams s = summarize_posterior(post);
    const GmmParams c = canonical_order(p);
    CHECK(s.weights == c.weights);
    CHECK(s.means == c.means);
    for (std::size_t k = 0; k < 2; ++k) CHECK(max_abs_diff(s.covs[k], c.covs[k]) < 1e-12);
}

TEST_CASE("summarize_posterior ignores component order") {
    const GmmParams p = two_component(-1.0, 3.0, 0.4);
    GmmParams swapped;
    swapped.weights = {p.weights[1], p.weights[0]};
    swapped.means = {p.means[1], p.means[0]};
    swapped.covs = {p.covs[1], p.covs[0]};
    const Posterior post{{{0, p, 0.1}, {1, swapped, 0.2}}, 0.3};
    const GmmParams s = summarize_posterior(post);
    const GmmParams single = summarize_posterior(Posterior{{{0, p, 0.1}}, 0.2});
    CHECK(s.weights == single.weights);
    CHECK(s.means == single.means);
}

TEST_CASE("summarize_posterior averages three hand-built draws") {
    const GmmParams a = two_component(-2.0, 1.0, 0.2);
    const GmmParams b = two_component(-1.0, 4.0, 0.5);
    const GmmParams c = two_component(0.0, 2.0, 0.8);
    const Posterior post{{{0, a, 0.1}, {1, b, 0.2}, {2, c, 0.3}}, 0.4};
    const GmmParams s = summarize_posterior(post);
    CHECK(std::abs(s.weights[0] - (0.2 + 0.5 + 0.8) / 3.0) < 1e-12);
    CHECK(std::abs(s.weights[1] - (0.8 + 0.5 + 0.2) / 3.0) < 1e-12);
    CHECK(std::abs(s.means[0][0] - (-3.0 / 3.0)) < 1e-12);
    CHECK(std::abs(s.means[1][0] - (7.0 / 3.0)) < 1e-12);
    CHECK(std::abs(s.means[1][1] - 1.0) < 1e-12);
    CHECK(max_abs_diff(s.covs[1], Matrix::from_rows({{2.0, 0.1}, {0.1, 1.0}})) < 1e-12);
    CHECK_THROWS_AS(summarize_posterior(Posterior{}), Error);
}

TEST_CASE("KS statistic examples") {
    RngStream rng(12);
    Vector a, b, shifted;
    for (int i = 0; i < 5000; ++i) {
        a.push_back(sample_dirichlet(Vector{1, 1}, rng)[0]);
        b.push_back(sample_dirichlet(Vector{1, 1}, rng)[0]);
        shifted.push_back(sample_dirichlet(Vector{9, 1}, rng)[0]);
    }
    CHECK(ks_statistic(a, a) == 0.0);
    CHECK(ks_statistic(a, b) < 0.05);
    CHECK(ks_statistic(a, shifted) > 0.2);
    CHECK(ks_statistic(Vector{1, 2}, Vector{3, 4}) == 1.0);
}

TEST_CASE("prior limit: L = N reproduces the prior marginal") {
    RngStream data_rng(13);
    const TrimodalFixture fx = generate_trimodal(300, data_rng);
    AbcConfig c{5000, 5000, 3, PriorConfig::defaults(3, 2), 2};
    RngStream rng(14);
    CHECK(prior_limit_check(c, fx.x, rng) < 0.05);
    c.n_accept = 10;
    CHECK_THROWS_AS(prior_limit_check(c, fx.x, rng), Error);
}

TEST_CASE("Posterior JSON round trip") {
    RngStream data_rng(15);
    const Matrix observed = testing::random_matrix(5, 2, data_rng, 3.0);
    RngStream rng(16);
    const Posterior post = rejection_sample(small_config(40, 6), observed, rng);
    CHECK(posterior_from_json(nlohmann::json::parse(to_json(post).dump())) == post);
    CHECK_THROWS_AS(posterior_from_json(nlohmann::json::parse("{\"accepted\": []}")), Error);
}

TEST_CASE("rejection_sample is deterministic and checks the observed shape") {
    RngStream data_rng(17);
    const Matrix observed = testing::random_matrix(5, 2, data_rng, 3.0);
    RngStream a(18), b(18);
    CHECK(rejection_sample(small_config(50, 5), observed, a) == rejection_sample(small_config(50, 5), observed, b));
    RngStream c(18);
    CHECK_THROWS_AS(rejection_sample(small_config(50, 5), Matrix(3, 3), c), Error);
}
