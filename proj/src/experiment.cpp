#include "graffl/experiment.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "graffl/csv.hpp"
#include "graffl/error.hpp"
#include "graffl/samplers.hpp"
#include "graffl/transport.hpp"

#ifndef GRAFFL_VERSION
#define GRAFFL_VERSION "0.1.0-unknown"
#endif

namespace graffl {

using nlohmann::json;
using nlohmann::ordered_json;

std::string version_string() { return GRAFFL_VERSION; }

std::string to_string(Scenario scenario) {
    switch (scenario) {
        case Scenario::Trimodal: return "trimodal";
        case Scenario::Imbalance: return "imbalance";
        case Scenario::Scarce: return "scarce";
        case Scenario::Custom: return "custom";
    }
    return "unknown";
}

Scenario scenario_from_string(const std::string& name) {
    if (name == "trimodal") return Scenario::Trimodal;
    if (name == "imbalance") return Scenario::Imbalance;
    if (name == "scarce") return Scenario::Scarce;
    if (name == "custom") return Scenario::Custom;
    throw Error(ErrorCode::ConfigError, "unknown scenario '" + name + "'");
}

PriorConfig PriorSettings::resolve(std::size_t k, std::size_t dim) const {
    PriorConfig p = PriorConfig::defaults(k, dim, spread);
    p.kappa = kappa;
    if (nu) p.nu = *nu;
    std::fill(p.alpha.begin(), p.alpha.end(), alpha);
    if (m) {
        if (m->size() != dim) throw Error(ErrorCode::ConfigError, "prior.m length differs from the summary dimension");
        p.m = *m;
    }
    p.validate();
    return p;
}

// ---------------------------------------------------------------------------
// Config

ExperimentConfig ExperimentConfig::defaults(Scenario scenario) {
    ExperimentConfig c;
    c.scenario = scenario;
    switch (scenario) {
        case Scenario::Trimodal:
            c.identity_summary = true;
            c.n_sites = 3;
            c.n_proposals = 50000;
            c.n_accept = 100;
            c.k = 3;
            break;
        case Scenario::Imbalance:
        case Scenario::Custom:
            c.n_sites = 3;
            c.n_proposals = 20000;
            c.n_accept = 100;
            c.k = 1;
            c.prior.spread = 0.25;
            c.prior.kappa = 0.01;
            break;
        case Scenario::Scarce:
            c.n_sites = 6;
            c.n_proposals = 20000;
            c.n_accept = 100;
            c.k = 1;
            c.prior.spread = 0.25;
            c.prior.kappa = 0.01;
            c.synthetic.train_majority = 60;
            c.synthetic.train_minority = 30;
            c.synthetic.test_majority = 120;
            c.synthetic.test_minority = 60;
            c.synthetic.class_separation = 4.0;
            break;
    }
    return c;
}

namespace {

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorCode::ConfigError, what); }

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) config_error(where + " must be an object");
    for (const auto& item : obj.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return item.key() == a; })) {
            config_error("unknown key '" + item.key() + "' in " + where);
        }
    }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
    const auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return;
    try {
        out = it->get<T>();
    } catch (const json::exception&) {
        config_error(where + "." + key + " has the wrong type");
    }
}

void read_count(const json& obj, const char* key, std::size_t& out, const std::string& where) {
    const auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return;
    if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<long long>() >= 0)) {
        config_error(where + "." + key + " must be a non-negative integer");
    }
    out = it->get<std::size_t>();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
    check_keys(doc, "config",
               {"scenario", "seed", "identity_summary", "sites", "prior", "abc", "suffiae", "eval", "synthetic",
                "transport", "output_dir"});
    std::string scenario_name = "trimodal";
    read(doc, "scenario", scenario_name, "config");
    ExperimentConfig c = defaults(scenario_from_string(scenario_name));

    if (auto it = doc.find("seed"); it != doc.end()) {
        if (!it->is_number_integer()) config_error("config.seed must be an integer");
        c.seed = it->is_number_unsigned() ? it->get<std::uint64_t>() : static_cast<std::uint64_t>(it->get<long long>());
    }
    read(doc, "identity_summary", c.identity_summary, "config");
    read(doc, "output_dir", c.output_dir, "config");

    if (auto it = doc.find("sites"); it != doc.end()) {
        if (it->is_array()) {
            c.csv_sites.clear();
            for (const auto& s : *it) {
                check_keys(s, "sites[]", {"csv", "label_column", "test_fraction"});
                CsvSiteSource src;
                read(s, "csv", src.path, "sites[]");
                read(s, "label_column", src.label_column, "sites[]");
                read(s, "test_fraction", src.test_fraction, "sites[]");
                c.csv_sites.push_back(src);
            }
            c.n_sites = c.csv_sites.size();
        } else {
            read_count(doc, "sites", c.n_sites, "config");
        }
    }

    if (auto it = doc.find("prior"); it != doc.end()) {
        check_keys(*it, "prior", {"spread", "kappa", "nu", "alpha", "m"});
        read(*it, "spread", c.prior.spread, "prior");
        read(*it, "kappa", c.prior.kappa, "prior");
        if (it->contains("nu") && !(*it)["nu"].is_null()) {
            double nu = 0.0;
            read(*it, "nu", nu, "prior");
            c.prior.nu = nu;
        }
        read(*it, "alpha", c.prior.alpha, "prior");
        if (it->contains("m") && !(*it)["m"].is_null()) {
            Vector m;
            read(*it, "m", m, "prior");
            c.prior.m = m;
        }
    }
    if (auto it = doc.find("abc"); it != doc.end()) {
        check_keys(*it, "abc", {"N", "L", "K"});
        read_count(*it, "N", c.n_proposals, "abc");
        read_count(*it, "L", c.n_accept, "abc");
        read_count(*it, "K", c.k, "abc");
    }
    if (auto it = doc.find("suffiae"); it != doc.end()) {
        check_keys(*it, "suffiae",
                   {"hidden", "d", "epochs", "learning_rate", "batch_size", "noise_alpha", "publish_noisy",
                    "shared_init"});
        read(*it, "hidden", c.suffiae.hidden, "suffiae");
        read_count(*it, "d", c.suffiae.latent_dim, "suffiae");
        read_count(*it, "epochs", c.suffiae.epochs, "suffiae");
        read(*it, "learning_rate", c.suffiae.learning_rate, "suffiae");
        read_count(*it, "batch_size", c.suffiae.batch_size, "suffiae");
        read(*it, "noise_alpha", c.suffiae.noise_alpha, "suffiae");
        read(*it, "publish_noisy", c.suffiae.publish_noisy, "suffiae");
        read(*it, "shared_init", c.suffiae.shared_init, "suffiae");
    }
    if (auto it = doc.find("eval"); it != doc.end()) {
        check_keys(*it, "eval", {"epochs", "learning_rate", "repeats"});
        read_count(*it, "epochs", c.eval.epochs, "eval");
        read(*it, "learning_rate", c.eval.learning_rate, "eval");
        read_count(*it, "repeats", c.eval.repeats, "eval");
    }
    if (auto it = doc.find("synthetic"); it != doc.end()) {
        check_keys(*it, "synthetic",
                   {"n_per_component", "raw_dim", "train_majority", "train_minority", "test_majority",
                    "test_minority", "class_separation", "site_shift", "retained_percent", "affected_sites"});
        auto& s = c.synthetic;
        read_count(*it, "n_per_component", s.n_per_component, "synthetic");
        read_count(*it, "raw_dim", s.raw_dim, "synthetic");
        read_count(*it, "train_majority", s.train_majority, "synthetic");
        read_count(*it, "train_minority", s.train_minority, "synthetic");
        read_count(*it, "test_majority", s.test_majority, "synthetic");
        read_count(*it, "test_minority", s.test_minority, "synthetic");
        read(*it, "class_separation", s.class_separation, "synthetic");
        read(*it, "site_shift", s.site_shift, "synthetic");
        read(*it, "retained_percent", s.retained_percent, "synthetic");
        read_count(*it, "affected_sites", s.affected_sites, "synthetic");
    }
    if (auto it = doc.find("transport"); it != doc.end()) {
        if (it->is_string()) {
            c.transport.kind = it->get<std::string>();
        } else {
            check_keys(*it, "transport", {"kind", "address"});
            read(*it, "kind", c.transport.kind, "transport");
            read(*it, "address", c.transport.address, "transport");
        }
    }
    c.validate();
    return c;
}

ordered_json ExperimentConfig::to_json() const {
    ordered_json j;
    j["scenario"] = graffl::to_string(scenario);
    j["seed"] = seed;
    j["identity_summary"] = identity_summary;
    if (scenario == Scenario::Custom) {
        j["sites"] = ordered_json::array();
        for (const auto& s : csv_sites) {
            j["sites"].push_back({{"csv", s.path}, {"label_column", s.label_column}, {"test_fraction", s.test_fraction}});
        }
    } else {
        j["sites"] = n_sites;
    }
    ordered_json p;
    p["spread"] = prior.spread;
    p["kappa"] = prior.kappa;
    p["nu"] = prior.nu ? ordered_json(*prior.nu) : ordered_json(nullptr);
    p["alpha"] = prior.alpha;
    p["m"] = prior.m ? ordered_json(*prior.m) : ordered_json(nullptr);
    j["prior"] = p;
    j["abc"] = {{"N", n_proposals}, {"L", n_accept}, {"K", k}};
    j["suffiae"] = {{"hidden", suffiae.hidden},
                    {"d", suffiae.latent_dim},
                    {"epochs", suffiae.epochs},
                    {"learning_rate", suffiae.learning_rate},
                    {"batch_size", suffiae.batch_size},
                    {"noise_alpha", suffiae.noise_alpha},
                    {"publish_noisy", suffiae.publish_noisy},
                    {"shared_init", suffiae.shared_init}};
    j["eval"] = {{"epochs", eval.epochs}, {"learning_rate", eval.learning_rate}, {"repeats", eval.repeats}};
    j["synthetic"] = {{"n_per_component", synthetic.n_per_component},
                      {"raw_dim", synthetic.raw_dim},
                      {"train_majority", synthetic.train_majority},
                      {"train_minority", synthetic.train_minority},
                      {"test_majority", synthetic.test_majority},
                      {"test_minority", synthetic.test_minority},
                      {"class_separation", synthetic.class_separation},
                      {"site_shift", synthetic.site_shift},
                      {"retained_percent", synthetic.retained_percent},
                      {"affected_sites", synthetic.affected_sites}};
    j["transport"] = {{"kind", transport.kind}, {"address", transport.address}};
    j["output_dir"] = output_dir;
    return j;
}

void ExperimentConfig::validate() const {
    if (n_accept == 0) config_error("abc.L must be positive");
    if (n_proposals < n_accept) {
        throw Error(ErrorCode::InsufficientProposals,
                    "abc.N = " + std::to_string(n_proposals) + " is below abc.L = " + std::to_string(n_accept));
    }
    if (k == 0) config_error("abc.K must be positive");
    if (n_sites == 0) config_error("at least one site is required");
    if (transport.kind != "inprocess" && transport.kind != "socket") {
        config_error("transport.kind must be 'inprocess' or 'socket'");
    }
    if (!(prior.spread > 0.0) || !(prior.kappa > 0.0) || !(prior.alpha > 0.0)) {
        config_error("prior spread, kappa and alpha must be positive");
    }
    switch (scenario) {
        case Scenario::Trimodal:
            if (!identity_summary) config_error("the trimodal scenario has no labels; set identity_summary");
            if (synthetic.n_per_component == 0) config_error("synthetic.n_per_component must be positive");
            if (3 * synthetic.n_per_component < n_sites) config_error("more sites than trimodal rows");
            break;
        case Scenario::Custom:
            if (csv_sites.empty()) config_error("the custom scenario needs a sites array of CSV sources");
            for (const auto& s : csv_sites) {
                if (!std::filesystem::exists(s.path)) config_error("data file '" + s.path + "' does not exist");
                if (!(s.test_fraction > 0.0 && s.test_fraction < 1.0)) config_error("test_fraction must be in (0,1)");
            }
            [[fallthrough]];
        case Scenario::Imbalance:
        case Scenario::Scarce:
            if (identity_summary) config_error("classifier scenarios need the SuffiAE summary");
            if (suffiae.latent_dim == 0) config_error("suffiae.d must be positive");
            if (suffiae.batch_size == 0) config_error("suffiae.batch_size must be positive");
            if (!(suffiae.noise_alpha > 0.0)) config_error("suffiae.noise_alpha must be positive");
            if (eval.repeats == 0) config_error("eval.repeats must be positive");
            if (scenario != Scenario::Custom && synthetic.raw_dim < 2) config_error("synthetic.raw_dim must be >= 2");
            if (scenario == Scenario::Scarce) {
                if (synthetic.affected_sites > n_sites) config_error("more affected sites than sites");
                if (!(synthetic.retained_percent >= 0.0 && synthetic.retained_percent <= 100.0)) {
                    config_error("synthetic.retained_percent must be in [0,100]");
                }
            }
            break;
    }
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) config_error("cannot open config '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        config_error("config '" + path + "' is not valid JSON: " + e.what());
    }
    return ExperimentConfig::from_json(doc);
}

// ---------------------------------------------------------------------------
// Transports

FederationRunner inprocess_runner() {
    return [](const FederationRunConfig& cfg, std::span<const Matrix> summaries) {
        return run_inprocess(cfg, summaries);
    };
}

FederationRunner local_socket_runner(const std::string& address) {
    return [address](const FederationRunConfig& cfg, std::span<const Matrix> summaries) {
        if (summaries.size() != cfg.sites.size()) config_error("one summary matrix per site is required");
        const Endpoint ep = Endpoint::parse(address);
        SocketCoordinatorLink coordinator(ep, cfg.sites.size());
        const Endpoint target{ep.host.empty() || ep.host == "*" || ep.host == "0.0.0.0" ? "127.0.0.1" : ep.host,
                              coordinator.port()};
        std::vector<std::exception_ptr> errors(cfg.sites.size());
        std::vector<std::thread> workers;
        for (std::size_t j = 0; j < cfg.sites.size(); ++j) {
            workers.emplace_back([&, j] {
                try {
                    SocketSiteLink link(target);
                    serve_site(cfg.sites[j], summaries[j], link);
                } catch (...) {
                    errors[j] = std::current_exception();
                }
            });
        }
        Posterior post;
        std::exception_ptr coordinator_error;
        try {
            coordinator.accept_all();
            post = coordinate(cfg, coordinator);
        } catch (...) {
            coordinator_error = std::current_exception();
            coordinator.close();
        }
        for (auto& w : workers) w.join();
        if (coordinator_error) std::rethrow_exception(coordinator_error);
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
        return post;
    };
}

FederationRunner remote_coordinator_runner(const std::string& address) {
    return [address](const FederationRunConfig& cfg, std::span<const Matrix>) {
        SocketCoordinatorLink coordinator(Endpoint::parse(address), cfg.sites.size());
        coordinator.accept_all();
        return coordinate(cfg, coordinator);
    };
}

// ---------------------------------------------------------------------------
// Fixtures

TrimodalFixture generate_trimodal(std::size_t n_per_component, RngStream& rng) {
    if (n_per_component == 0) config_error("generate_trimodal needs n >= 1");
    TrimodalFixture f;
    f.truth.weights = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    f.truth.means = {{-9.0, 3.0}, {0.0, -9.0}, {8.0, 3.0}};
    f.truth.covs = {Matrix::identity(2), Matrix::identity(2), Matrix::identity(2)};

    const std::size_t n = 3 * n_per_component;
    Matrix blocked(n, 2);
    std::vector<std::size_t> comp(n);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < n_per_component; ++i) {
            const std::size_t r = c * n_per_component + i;
            blocked(r, 0) = f.truth.means[c][0] + sample_standard_normal(rng);
            blocked(r, 1) = f.truth.means[c][1] + sample_standard_normal(rng);
            comp[r] = c;
        }
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
    f.x = Matrix(n, 2);
    f.component.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        f.x(i, 0) = blocked(order[i], 0);
        f.x(i, 1) = blocked(order[i], 1);
        f.component[i] = comp[order[i]];
    }
    return f;
}

namespace {

LabeledBatch draw_classes(std::size_t n0, std::size_t n1, const Vector& mean0, const Vector& mean1, RngStream& rng) {
    const std::size_t d = mean0.size();
    LabeledBatch b{Matrix(n0 + n1, d), {}};
    b.y.reserve(n0 + n1);
    // Interleave the classes so that any prefix holds both.
    std::size_t done0 = 0;
    std::size_t done1 = 0;
    for (std::size_t r = 0; r < n0 + n1; ++r) {
        const bool pick1 = done1 < n1 && (done0 >= n0 || done1 * (n0 + n1) < r * n1 + n1 / 2);
        const Vector& mean = pick1 ? mean1 : mean0;
        for (std::size_t c = 0; c < d; ++c) b.x(r, c) = mean[c] + sample_standard_normal(rng);
        b.y.push_back(pick1 ? 1 : 0);
        (pick1 ? done1 : done0) += 1;
    }
    return b;
}

std::vector<SiteSplit> two_class_sites(const SyntheticConfig& cfg, std::size_t sites, std::size_t train0,
                                       std::size_t train1, std::size_t test0, std::size_t test1, RngStream& rng) {
    const std::size_t d = cfg.raw_dim;
    const std::size_t half = d / 2;
    Vector direction(d, 0.0);
    for (std::size_t c = 0; c < half; ++c) direction[c] = cfg.class_separation / std::sqrt(static_cast<double>(half));
    std::vector<SiteSplit> out;
    for (std::size_t j = 0; j < sites; ++j) {
        Vector mean0(d, 0.0);
        for (std::size_t c = half; c < d; ++c) mean0[c] = cfg.site_shift * sample_standard_normal(rng);
        Vector mean1 = mean0;
        for (std::size_t c = 0; c < d; ++c) mean1[c] += direction[c];
        SiteSplit s;
        s.train = draw_classes(train0, train1, mean0, mean1, rng);
        s.test = draw_classes(test0, test1, mean0, mean1, rng);
        out.push_back(std::move(s));
    }
    return out;
}

LabeledBatch select_rows(const LabeledBatch& b, const std::vector<std::size_t>& rows) {
    LabeledBatch out{Matrix(rows.size(), b.x.cols()), {}};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy(b.x.row(rows[i]).begin(), b.x.row(rows[i]).end(), out.x.row(i).begin());
        out.y.push_back(b.y[rows[i]]);
    }
    return out;
}

std::vector<std::size_t> rows_with_label(const std::vector<int>& y, int label) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (y[i] == label) rows.push_back(i);
    return rows;
}

}  // namespace

std::vector<SiteSplit> generate_imbalance_sites(const SyntheticConfig& config, std::size_t sites, RngStream& rng) {
    // Class 1 is the minority.
    return two_class_sites(config, sites, config.train_majority, config.train_minority, config.test_majority,
                           config.test_minority, rng);
}

std::vector<SiteSplit> generate_scarce_sites(const SyntheticConfig& config, std::size_t sites, RngStream& rng) {
    // Class 1 is plentiful everywhere; class 0 is the one lost on affected sites.
    auto out = two_class_sites(config, sites, config.train_minority, config.train_majority, config.test_minority,
                               config.test_majority, rng);
    const auto keep = static_cast<std::size_t>(
        std::floor(static_cast<double>(config.train_minority) * config.retained_percent / 100.0 + 1e-9));
    for (std::size_t j = sites - std::min(config.affected_sites, sites); j < sites; ++j) {
        std::vector<std::size_t> rows;
        std::size_t kept0 = 0;
        for (std::size_t i = 0; i < out[j].train.y.size(); ++i) {
            if (out[j].train.y[i] == 1 || kept0 < keep) rows.push_back(i);
            if (out[j].train.y[i] == 0 && kept0 < keep) ++kept0;
        }
        out[j].train = select_rows(out[j].train, rows);
    }
    return out;
}

std::vector<std::size_t> match_components(const GmmParams& truth, const GmmParams& estimate) {
    const std::size_t k = truth.k();
    if (estimate.k() != k) throw Error(ErrorCode::DimensionMismatch, "component counts differ");
    std::vector<std::size_t> match(k, k);
    std::vector<bool> used(k, false);
    for (std::size_t step = 0; step < k; ++step) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bt = 0;
        std::size_t be = 0;
        for (std::size_t t = 0; t < k; ++t) {
            if (match[t] != k) continue;
            for (std::size_t e = 0; e < k; ++e) {
                if (used[e]) continue;
                double d2 = 0.0;
                for (std::size_t c = 0; c < truth.dim(); ++c) {
                    const double diff = truth.means[t][c] - estimate.means[e][c];
                    d2 += diff * diff;
                }
                if (d2 < best) {
                    best = d2;
                    bt = t;
                    be = e;
                }
            }
        }
        match[bt] = be;
        used[be] = true;
    }
    return match;
}

// ---------------------------------------------------------------------------
// Scenario plans. Every process (coordinator or site) derives the same plan
// from config + seed; a site only ever publishes its own summary rows.

namespace {

enum Stream : std::uint64_t { kData = 0, kInit = 1, kTrain = 2, kPublish = 3, kFederation = 4, kEval = 5, kPooled = 6 };

std::uint64_t federation_seed(const ExperimentConfig& c) { return RngStream(c.seed).split(kFederation).next_u64(); }

struct TrimodalPlan {
    TrimodalFixture fixture;
    FederationRunConfig federation;
    std::vector<Matrix> summaries;
};

TrimodalPlan trimodal_plan(const ExperimentConfig& c) {
    if (c.scenario != Scenario::Trimodal) config_error("scenario is not trimodal");
    c.validate();
    RngStream data_rng = RngStream(c.seed).split(kData);
    TrimodalPlan plan;
    plan.fixture = generate_trimodal(c.synthetic.n_per_component, data_rng);
    const std::size_t n = plan.fixture.x.rows();
    plan.federation.abc = {c.n_proposals, c.n_accept, c.k, c.prior.resolve(c.k, 2), 2};
    plan.federation.seed = federation_seed(c);
    std::size_t offset = 0;
    for (std::size_t j = 0; j < c.n_sites; ++j) {
        const std::size_t take = n / c.n_sites + (j < n % c.n_sites ? 1 : 0);
        plan.summaries.push_back(plan.fixture.x.slice_rows(offset, take));
        plan.federation.sites.push_back({static_cast<std::uint32_t>(j), take, 2});
        offset += take;
    }
    return plan;
}

struct ClassifierPlan {
    std::vector<SiteSplit> sites;
    std::vector<SuffiAEModel> models;
    int target = 1;  // the class the federated model is fitted to
    bool strict = true;
    std::vector<std::size_t> participating;
    std::vector<Matrix> published;
    FederationRunConfig federation;
};

SuffiAEModel train_model(const ExperimentConfig& c, const LabeledBatch& data, RngStream init_rng,
                         RngStream train_rng) {
    SuffiAEArchitecture arch{data.x.cols(), c.suffiae.hidden, c.suffiae.latent_dim, c.suffiae.noise_alpha};
    TrainOptions opts;
    opts.epochs = c.suffiae.epochs;
    opts.learning_rate = c.suffiae.learning_rate;
    opts.batch_size = c.suffiae.batch_size;
    return train(SuffiAEModel::init(arch, init_rng), data, opts, train_rng);
}

RngStream init_stream(const ExperimentConfig& c, std::size_t site) {
    const RngStream base = RngStream(c.seed).split(kInit);
    return c.suffiae.shared_init ? base : base.split(site + 1);
}

std::vector<SiteSplit> load_csv_sites(const ExperimentConfig& c, RngStream& rng) {
    std::vector<SiteSplit> out;
    for (const auto& src : c.csv_sites) {
        CsvDataset ds = ingest_csv(src.path, src.label_column);
        const std::size_t n = ds.rows();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
        const auto n_test = static_cast<std::size_t>(std::llround(src.test_fraction * static_cast<double>(n)));
        LabeledBatch all{std::move(ds.features), std::move(ds.labels)};
        out.push_back({select_rows(all, {order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end()}),
                       select_rows(all, {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test)})});
    }
    for (std::size_t j = 1; j < out.size(); ++j) {
        if (out[j].train.x.cols() != out[0].train.x.cols()) {
            config_error("CSV sites disagree on the number of features");
        }
    }
    return out;
}

ClassifierPlan classifier_plan(const ExperimentConfig& c) {
    c.validate();
    RngStream data_rng = RngStream(c.seed).split(kData);
    ClassifierPlan plan;
    switch (c.scenario) {
        case Scenario::Imbalance:
            plan.sites = generate_imbalance_sites(c.synthetic, c.n_sites, data_rng);
            plan.target = 1;
            break;
        case Scenario::Scarce:
            plan.sites = generate_scarce_sites(c.synthetic, c.n_sites, data_rng);
            plan.target = 0;
            plan.strict = false;
            break;
        case Scenario::Custom: {
            plan.sites = load_csv_sites(c, data_rng);
            std::size_t ones = 0;
            std::size_t total = 0;
            for (const auto& s : plan.sites) {
                ones += static_cast<std::size_t>(std::count(s.train.y.begin(), s.train.y.end(), 1));
                total += s.train.y.size();
            }
            plan.target = 2 * ones <= total ? 1 : 0;
            break;
        }
        case Scenario::Trimodal: config_error("trimodal is not a classifier scenario");
    }

    std::size_t pooled_target = 0;
    for (std::size_t j = 0; j < plan.sites.size(); ++j) {
        const auto rows = rows_with_label(plan.sites[j].train.y, plan.target);
        if (plan.strict && rows.size() < 2) {
            throw Error(ErrorCode::MinorityTooSmall, "site " + std::to_string(j + 1) + " has " +
                                                         std::to_string(rows.size()) + " minority rows, need 2");
        }
        plan.sites[j].train.validate();
        plan.sites[j].test.validate();
        plan.models.push_back(
            train_model(c, plan.sites[j].train, init_stream(c, j), RngStream(c.seed).split(kTrain).split(j)));
        if (rows.empty()) continue;
        const Matrix raw = select_rows(plan.sites[j].train, rows).x;
        RngStream publish_rng = RngStream(c.seed).split(kPublish).split(j);
        plan.published.push_back(c.suffiae.publish_noisy ? encode_noisy(plan.models[j], raw, publish_rng)
                                                         : encode(plan.models[j], raw));
        plan.participating.push_back(j);
        plan.federation.sites.push_back({static_cast<std::uint32_t>(j), rows.size(), c.suffiae.latent_dim});
        pooled_target += rows.size();
    }
    if (pooled_target < 2) {
        throw Error(ErrorCode::MinorityTooSmall, "fewer than 2 rows of the federated class across all sites");
    }
    const std::size_t d = c.suffiae.latent_dim;
    plan.federation.abc = {c.n_proposals, c.n_accept, c.k, c.prior.resolve(c.k, d), d};
    plan.federation.seed = federation_seed(c);
    return plan;
}

struct Scored {
    double auc = 0.5;
    double f1 = 0.0;
    double cutoff = 0.5;
};

// Scores and metrics are taken with `target` as the positive class.
Scored evaluate(const Matrix& train_x, const std::vector<int>& train_y, const Matrix& test_x,
                const std::vector<int>& test_y, int target, const EvalSettings& es, RngStream rng) {
    LogisticOptions opts{es.epochs, es.learning_rate};
    const LogisticModel model = fit_logistic(train_x, train_y, opts, rng);
    auto view = [target](Vector p, std::vector<int> y) {
        if (target == 0) {
            for (auto& v : p) v = 1.0 - v;
            for (auto& v : y) v = 1 - v;
        }
        return std::pair{std::move(p), std::move(y)};
    };
    const auto [tr_s, tr_y] = view(model.predict(train_x), train_y);
    const auto [te_s, te_y] = view(model.predict(test_x), test_y);
    Scored s;
    s.auc = auc(te_s, te_y);
    s.cutoff = select_cutoff(tr_s, tr_y);
    s.f1 = f1_at_cutoff(te_s, te_y, s.cutoff);
    return s;
}

std::size_t count_label(const std::vector<int>& y, int label) {
    return static_cast<std::size_t>(std::count(y.begin(), y.end(), label));
}

ClassifierReport run_classifier(const ExperimentConfig& c, const FederationRunner& runner) {
    ClassifierPlan plan = classifier_plan(c);
    ClassifierReport report;
    report.posterior = runner(plan.federation, plan.published);
    report.estimate = summarize_posterior(report.posterior);
    report.participating_sites = plan.participating;
    const std::string scenario = to_string(c.scenario);
    const RngStream eval_base = RngStream(c.seed).split(kEval);

    if (c.scenario != Scenario::Scarce) {
        std::vector<Matrix> xs;
        std::vector<Matrix> ts;
        LabeledBatch pooled_train;
        LabeledBatch pooled_test;
        for (const auto& s : plan.sites) {
            xs.push_back(s.train.x);
            ts.push_back(s.test.x);
            pooled_train.y.insert(pooled_train.y.end(), s.train.y.begin(), s.train.y.end());
            pooled_test.y.insert(pooled_test.y.end(), s.test.y.begin(), s.test.y.end());
        }
        pooled_train.x = vstack(xs);
        pooled_test.x = vstack(ts);
        const SuffiAEModel pooled = train_model(c, pooled_train, init_stream(c, 0), RngStream(c.seed).split(kPooled));
        const Scored s = evaluate(encode(pooled, pooled_train.x), pooled_train.y, encode(pooled, pooled_test.x),
                                  pooled_test.y, plan.target, c.eval, eval_base.split(0));
        report.rows.push_back({scenario, "all", "all", s.auc, 0.0, s.f1, s.cutoff, count_label(pooled_train.y, 1),
                               count_label(pooled_train.y, 0)});
    }

    for (std::size_t j = 0; j < plan.sites.size(); ++j) {
        const SiteSplit& site = plan.sites[j];
        const std::string name = "site" + std::to_string(j + 1);
        const Matrix train_enc = encode(plan.models[j], site.train.x);
        const Matrix test_enc = encode(plan.models[j], site.test.x);
        const std::size_t n_target = count_label(site.train.y, plan.target);
        const std::size_t n_other = site.train.y.size() - n_target;

        Scored raw;
        if (n_target >= 2 && n_other >= 1) {
            raw = evaluate(train_enc, site.train.y, test_enc, site.test.y, plan.target, c.eval,
                           eval_base.split(1).split(j));
        }
        report.rows.push_back({scenario, name, "raw", raw.auc, 0.0, raw.f1, raw.cutoff,
                               count_label(site.train.y, 1), count_label(site.train.y, 0)});

        const std::size_t deficit = n_other > n_target ? n_other - n_target : 0;
        std::vector<int> aug_y = site.train.y;
        aug_y.insert(aug_y.end(), deficit, plan.target);
        Vector aucs;
        double f1_sum = 0.0;
        double cutoff_sum = 0.0;
        for (std::size_t r = 0; r < c.eval.repeats; ++r) {
            RngStream rep = eval_base.split(2 + r).split(j);
            RngStream gen_rng = rep.split(0);
            Matrix aug_x = train_enc;
            if (deficit > 0) {
                const std::array<Matrix, 2> blocks{train_enc, sample(report.estimate, deficit, gen_rng).x};
                aug_x = vstack(blocks);
            }
            const Scored s = evaluate(aug_x, aug_y, test_enc, site.test.y, plan.target, c.eval, rep.split(1));
            aucs.push_back(s.auc);
            f1_sum += s.f1;
            cutoff_sum += s.cutoff;
        }
        const double reps = static_cast<double>(c.eval.repeats);
        const double mean = std::accumulate(aucs.begin(), aucs.end(), 0.0) / reps;
        double var = 0.0;
        for (double a : aucs) var += (a - mean) * (a - mean);
        const double sd = aucs.size() > 1 ? std::sqrt(var / (reps - 1.0)) : 0.0;
        report.rows.push_back({scenario, name, "graffl", mean, sd, f1_sum / reps, cutoff_sum / reps,
                               count_label(aug_y, 1), count_label(aug_y, 0)});
    }
    return report;
}

}  // namespace

TrimodalReport run_trimodal(const ExperimentConfig& config, const FederationRunner& runner) {
    TrimodalPlan plan = trimodal_plan(config);
    TrimodalReport r;
    r.truth = plan.fixture.truth;
    r.posterior = runner(plan.federation, plan.summaries);
    r.estimate = summarize_posterior(r.posterior);
    if (r.estimate.k() != r.truth.k()) {
        throw Error(ErrorCode::DimensionMismatch, "recovery scoring needs K = 3");
    }
    r.matching = match_components(r.truth, r.estimate);
    for (std::size_t t = 0; t < r.truth.k(); ++t) {
        const auto& e = r.estimate.means[r.matching[t]];
        r.mu_error.push_back(std::hypot(e[0] - r.truth.means[t][0], e[1] - r.truth.means[t][1]));
        r.pi_error.push_back(std::abs(r.estimate.weights[r.matching[t]] - r.truth.weights[t]));
    }
    return r;
}

ClassifierReport run_imbalance(const ExperimentConfig& config, const FederationRunner& runner) {
    if (config.scenario != Scenario::Imbalance && config.scenario != Scenario::Custom) {
        config_error("scenario is not imbalance");
    }
    return run_classifier(config, runner);
}

ClassifierReport run_scarce(const ExperimentConfig& config, const FederationRunner& runner) {
    if (config.scenario != Scenario::Scarce) config_error("scenario is not scarce");
    return run_classifier(config, runner);
}

std::optional<SiteSessionSummary> serve_experiment_site(const ExperimentConfig& config, std::size_t site_index,
                                                        SiteLink& link) {
    if (site_index >= config.n_sites) {
        config_error("site id " + std::to_string(site_index) + " is out of range");
    }
    if (config.scenario == Scenario::Trimodal) {
        const TrimodalPlan plan = trimodal_plan(config);
        return serve_site(plan.federation.sites[site_index], plan.summaries[site_index], link);
    }
    const ClassifierPlan plan = classifier_plan(config);
    const auto it = std::find(plan.participating.begin(), plan.participating.end(), site_index);
    if (it == plan.participating.end()) return std::nullopt;
    const auto slot = static_cast<std::size_t>(it - plan.participating.begin());
    return serve_site(plan.federation.sites[slot], plan.published[slot], link);
}

// ---------------------------------------------------------------------------
// Output

namespace {

std::string join_reals(const Vector& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i > 0) out += ' ';
        out += format_real(v[i]);
    }
    return out;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::ConfigError, "cannot write '" + path.string() + "'");
    out << text;
}

}  // namespace

RunOutputs run_experiment(const ExperimentConfig& config, const FederationRunner& runner,
                          const std::string& out_dir) {
    using Clock = std::chrono::steady_clock;
    const auto t0 = Clock::now();
    double federation_ms = 0.0;
    const FederationRunner timed = [&](const FederationRunConfig& cfg, std::span<const Matrix> summaries) {
        const auto start = Clock::now();
        Posterior p = runner(cfg, summaries);
        federation_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
        return p;
    };

    RunOutputs out;
    ordered_json post;
    post["scenario"] = to_string(config.scenario);
    if (config.scenario == Scenario::Trimodal) {
        const TrimodalReport r = run_trimodal(config, timed);
        out.metrics_csv = format_csv_row(
            {"component", "matched_estimate", "mu_error", "pi_error", "true_mu", "estimated_mu", "true_pi", "estimated_pi"});
        for (std::size_t t = 0; t < r.truth.k(); ++t) {
            const std::size_t e = r.matching[t];
            out.metrics_csv += format_csv_row({std::to_string(t), std::to_string(e), format_real(r.mu_error[t]),
                                               format_real(r.pi_error[t]), join_reals(r.truth.means[t]),
                                               join_reals(r.estimate.means[e]), format_real(r.truth.weights[t]),
                                               format_real(r.estimate.weights[e])});
        }
        post["epsilon"] = r.posterior.epsilon;
        post["truth"] = to_json(r.truth);
        post["estimate"] = to_json(r.estimate);
        post["matching"] = r.matching;
        post["posterior"] = to_json(r.posterior);
    } else {
        const ClassifierReport r =
            config.scenario == Scenario::Scarce ? run_scarce(config, timed) : run_imbalance(config, timed);
        out.metrics_csv = eval_csv_header();
        for (const auto& row : r.rows) out.metrics_csv += to_csv_row(row);
        post["epsilon"] = r.posterior.epsilon;
        if (config.scenario == Scenario::Scarce) post["retained_percent"] = config.synthetic.retained_percent;
        post["participating_sites"] = r.participating_sites;
        post["estimate"] = to_json(r.estimate);
        post["posterior"] = to_json(r.posterior);
    }
    out.posterior = post;

    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    ordered_json resolved = config.to_json();
    resolved.erase("output_dir");
    write_file(dir / "config.json", resolved.dump(2) + "\n");
    write_file(dir / "posterior.json", post.dump(2) + "\n");
    write_file(dir / "metrics.csv", out.metrics_csv);

    ordered_json manifest;
    manifest["version"] = version_string();
    manifest["scenario"] = to_string(config.scenario);
    manifest["seed"] = config.seed;
    manifest["transport"] = config.transport.kind;
    if (config.scenario == Scenario::Scarce) manifest["retained_percent"] = config.synthetic.retained_percent;
    manifest["files"] = {"config.json", "posterior.json", "metrics.csv"};
    manifest["timings_ms"] = {
        {"federation", federation_ms},
        {"total", std::chrono::duration<double, std::milli>(Clock::now() - t0).count()}};
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
    return out;
}

}  // namespace graffl
