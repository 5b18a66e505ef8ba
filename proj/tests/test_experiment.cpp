#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "graffl/error.hpp"
#include "graffl/experiment.hpp"
#include "support.hpp"

using namespace graffl;
using nlohmann::json;

namespace {

ErrorCode code_of(auto&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::ParseError;  // sentinel: nothing was thrown
}

ExperimentConfig small_trimodal(std::uint64_t seed = 3) {
    ExperimentConfig c = ExperimentConfig::defaults(Scenario::Trimodal);
    c.seed = seed;
    c.synthetic.n_per_component = 60;
    c.n_proposals = 3000;
    c.n_accept = 30;
    return c;
}

ExperimentConfig small_classifier(Scenario s, std::uint64_t seed = 5) {
    ExperimentConfig c = ExperimentConfig::defaults(s);
    c.seed = seed;
    c.n_proposals = 400;
    c.n_accept = 20;
    c.suffiae.epochs = 5;
    c.suffiae.hidden = {8};
    c.suffiae.latent_dim = 3;
    c.synthetic.raw_dim = 6;
    c.synthetic.test_majority = 40;
    c.synthetic.test_minority = 20;
    c.eval.epochs = 30;
    c.eval.repeats = 3;
    return c;
}

bool same_files(const std::filesystem::path& a, const std::filesystem::path& b) {
    for (const char* name : {"config.json", "posterior.json", "metrics.csv"}) {
        if (testing::read_file(a / name) != testing::read_file(b / name)) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("generate_trimodal shape and component means") {
    RngStream rng(1);
    const TrimodalFixture f = generate_trimodal(3000, rng);
    CHECK(f.x.rows() == 9000);
    CHECK(f.x.cols() == 2);
    CHECK(f.component.size() == 9000);
    CHECK(f.truth.k() == 3);

    RngStream big(2);
    const TrimodalFixture g = generate_trimodal(10000, big);
    for (std::size_t c = 0; c < 3; ++c) {
        double sx = 0.0, sy = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < g.x.rows(); ++i) {
            if (g.component[i] != c) continue;
            sx += g.x(i, 0);
            sy += g.x(i, 1);
            ++n;
        }
        CHECK(n == 10000);
        CHECK(std::abs(sx / n - g.truth.means[c][0]) < 0.05);
        CHECK(std::abs(sy / n - g.truth.means[c][1]) < 0.05);
    }

    RngStream a(4), b(4);
    CHECK(generate_trimodal(50, a).x == generate_trimodal(50, b).x);
}

TEST_CASE("property: match_components recovers a permutation of the truth") {
    RngStream rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t k = 1 + rng.uniform_index(5);
        GmmParams truth;
        for (std::size_t c = 0; c < k; ++c) {
            truth.weights.push_back(1.0 / static_cast<double>(k));
            // Well separated so the greedy pairing is unambiguous.
            truth.means.push_back({20.0 * static_cast<double>(c), 5.0 * rng.uniform()});
            truth.covs.push_back(Matrix::identity(2));
        }
        std::vector<std::size_t> perm(k);
        for (std::size_t i = 0; i < k; ++i) perm[i] = i;
        for (std::size_t i = k; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
        GmmParams est = truth;
        for (std::size_t c = 0; c < k; ++c) {
            est.means[perm[c]] = truth.means[c];
            est.means[perm[c]][0] += rng.uniform() - 0.5;
        }
        CHECK(match_components(truth, est) == perm);
    }
}

TEST_CASE("run_trimodal on a small configuration") {
    const TrimodalReport r = run_trimodal(small_trimodal(), inprocess_runner());
    CHECK(r.posterior.accepted.size() == 30);
    std::set<std::size_t> used(r.matching.begin(), r.matching.end());
    CHECK(used.size() == 3);
    CHECK(r.mu_error.size() == 3);
    for (double e : r.pi_error) CHECK((e >= 0.0 && e <= 1.0));

    // Accepting everything from a very wide prior is no better than the learned posterior.
    ExperimentConfig wide = small_trimodal();
    wide.n_proposals = 30;
    wide.prior.spread = 400.0;
    const TrimodalReport base = run_trimodal(wide, inprocess_runner());
    double learned = 0.0, baseline = 0.0;
    for (std::size_t t = 0; t < 3; ++t) {
        learned += r.mu_error[t];
        baseline += base.mu_error[t];
    }
    CHECK(baseline > learned);
}

TEST_CASE("run_experiment is byte-identical across repeats except the manifest") {
    const auto a = testing::scratch_dir("exp_repeat_a");
    const auto b = testing::scratch_dir("exp_repeat_b");
    const ExperimentConfig c = small_trimodal(11);
    run_experiment(c, inprocess_runner(), a.string());
    run_experiment(c, inprocess_runner(), b.string());
    CHECK(same_files(a, b));
    CHECK(std::filesystem::exists(a / "manifest.json"));
    const json manifest = json::parse(testing::read_file(a / "manifest.json"));
    CHECK(manifest["seed"] == 11);
    CHECK(manifest.contains("timings_ms"));
}

TEST_CASE("in-process and socket transports give identical outputs") {
    const auto a = testing::scratch_dir("exp_inproc");
    const auto b = testing::scratch_dir("exp_socket");
    const ExperimentConfig c = small_classifier(Scenario::Imbalance, 8);
    run_experiment(c, inprocess_runner(), a.string());
    run_experiment(c, local_socket_runner("127.0.0.1:0"), b.string());
    CHECK(same_files(a, b));
}

TEST_CASE("imbalance report layout") {
    const ExperimentConfig c = small_classifier(Scenario::Imbalance);
    const ClassifierReport r = run_imbalance(c, inprocess_runner());
    REQUIRE(r.rows.size() == 1 + 2 * c.n_sites);
    CHECK(r.rows[0].site == "all");
    for (std::size_t j = 0; j < c.n_sites; ++j) {
        const EvalReport& raw = r.rows[1 + 2 * j];
        const EvalReport& gen = r.rows[2 + 2 * j];
        CHECK(raw.condition == "raw");
        CHECK(gen.condition == "graffl");
        CHECK(raw.n_pos == c.synthetic.train_minority);
        CHECK(raw.n_neg == c.synthetic.train_majority);
        CHECK(gen.n_pos == gen.n_neg);
        CHECK((gen.auc >= 0.0 && gen.auc <= 1.0));
    }
    CHECK(r.participating_sites.size() == c.n_sites);
    CHECK(r.estimate.k() == 1);
    CHECK(r.estimate.dim() == c.suffiae.latent_dim);

    ExperimentConfig tiny = c;
    tiny.synthetic.train_minority = 1;
    CHECK(code_of([&] { run_imbalance(tiny, inprocess_runner()); }) == ErrorCode::MinorityTooSmall);
}

TEST_CASE("scarce scenario drops class 0 on affected sites") {
    ExperimentConfig c = small_classifier(Scenario::Scarce);
    c.synthetic.retained_percent = 5.0;
    const auto dir = testing::scratch_dir("exp_scarce");
    const RunOutputs out = run_experiment(c, inprocess_runner(), dir.string());
    CHECK(out.posterior["retained_percent"] == 5.0);
    const json post = json::parse(testing::read_file(dir / "posterior.json"));
    CHECK(post["retained_percent"] == 5.0);

    const ClassifierReport r = run_scarce(c, inprocess_runner());
    REQUIRE(r.rows.size() == 2 * c.n_sites);
    const std::size_t keep = c.synthetic.train_minority * 5 / 100;
    for (std::size_t j = 0; j < c.n_sites; ++j) {
        const EvalReport& raw = r.rows[2 * j];
        const bool affected = j >= c.n_sites - c.synthetic.affected_sites;
        CHECK(raw.n_neg == (affected ? keep : c.synthetic.train_minority));
        if (affected) CHECK(raw.f1 == 0.0);
    }

    RngStream rng(9);
    SyntheticConfig none = c.synthetic;
    none.retained_percent = 0.0;
    const auto sites = generate_scarce_sites(none, 4, rng);
    CHECK(std::count(sites[3].train.y.begin(), sites[3].train.y.end(), 0) == 0);
    CHECK(std::count(sites[0].train.y.begin(), sites[0].train.y.end(), 0) ==
          static_cast<long>(none.train_minority));
}

TEST_CASE("config parsing and validation") {
    const ExperimentConfig c = ExperimentConfig::from_json(json{{"scenario", "imbalance"}, {"seed", 7}});
    CHECK(c.scenario == Scenario::Imbalance);
    CHECK(c.seed == 7);
    CHECK(c.n_sites == 3);

    const ExperimentConfig back = ExperimentConfig::from_json(json::parse(c.to_json().dump()));
    CHECK(back.to_json() == c.to_json());

    CHECK(code_of([] { ExperimentConfig::from_json(json{{"scenario", "trimodal"}, {"sedd", 1}}); }) ==
          ErrorCode::ConfigError);
    CHECK(code_of([] { ExperimentConfig::from_json(json{{"scenario", "nope"}}); }) == ErrorCode::ConfigError);
    CHECK(code_of([] { ExperimentConfig::from_json(json{{"scenario", "trimodal"}, {"abc", {{"N", "x"}}}}); }) ==
          ErrorCode::ConfigError);

    ExperimentConfig short_n = ExperimentConfig::defaults(Scenario::Trimodal);
    short_n.n_proposals = 10;
    short_n.n_accept = 20;
    CHECK(code_of([&] { short_n.validate(); }) == ErrorCode::InsufficientProposals);

    CHECK(code_of([] { load_config("/nonexistent/graffl.json"); }) == ErrorCode::ConfigError);
}
