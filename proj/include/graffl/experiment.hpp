#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "graffl/abc.hpp"
#include "graffl/eval.hpp"
#include "graffl/federation.hpp"
#include "graffl/gmm.hpp"
#include "graffl/suffiae.hpp"

namespace graffl {

enum class Scenario { Trimodal, Imbalance, Scarce, Custom };

std::string to_string(Scenario scenario);
Scenario scenario_from_string(const std::string& name);

/// A site backed by a user CSV file (custom scenario).
struct CsvSiteSource {
    std::string path;
    std::string label_column = "label";
    double test_fraction = 0.3;
};

/// Shape of the generated fixtures.
struct SyntheticConfig {
    std::size_t n_per_component = 300;  // trimodal
    std::size_t raw_dim = 16;
    std::size_t train_majority = 60;
    std::size_t train_minority = 10;
    std::size_t test_majority = 1200;
    std::size_t test_minority = 200;
    double class_separation = 1.5;  // distance between class means
    double site_shift = 0.5;        // scale of the per-site mean offset
    double retained_percent = 5.0;  // scarce: share of minority rows kept on affected sites
    std::size_t affected_sites = 3;
};

struct PriorSettings {
    double spread = 1.0;
    double kappa = 0.1;
    std::optional<double> nu;     // d + 2 when absent
    double alpha = 1.0;           // symmetric Dirichlet concentration
    std::optional<Vector> m;      // zero vector when absent

    [[nodiscard]] PriorConfig resolve(std::size_t k, std::size_t dim) const;
};

struct SuffiAESettings {
    std::vector<std::size_t> hidden{16};
    std::size_t latent_dim = 4;
    std::size_t epochs = 100;
    double learning_rate = 1e-2;
    std::size_t batch_size = 32;
    double noise_alpha = 0.1;
    bool publish_noisy = true;
    bool shared_init = true;  // every site starts from the same weights
};

struct EvalSettings {
    std::size_t epochs = 200;
    double learning_rate = 0.1;
    std::size_t repeats = 20;
};

struct TransportSettings {
    std::string kind = "inprocess";  // or "socket"
    std::string address = "127.0.0.1:0";
};

struct ExperimentConfig {
    Scenario scenario = Scenario::Trimodal;
    std::uint64_t seed = 0;
    bool identity_summary = false;
    std::size_t n_sites = 3;
    std::vector<CsvSiteSource> csv_sites;
    PriorSettings prior;
    std::size_t n_proposals = 50000;
    std::size_t n_accept = 100;
    std::size_t k = 3;
    SuffiAESettings suffiae;
    EvalSettings eval;
    SyntheticConfig synthetic;
    TransportSettings transport;
    std::string output_dir = "out";

    /// Scenario-specific defaults (sites, fixture shape, N, L, K).
    static ExperimentConfig defaults(Scenario scenario);

    /// Starts from defaults(scenario) and overrides whatever the document
    /// sets. Unknown keys and bad values raise ConfigError.
    static ExperimentConfig from_json(const nlohmann::json& doc);

    [[nodiscard]] nlohmann::ordered_json to_json() const;

    /// Throws ConfigError (or InsufficientProposals when N < L).
    void validate() const;
};

ExperimentConfig load_config(const std::string& path);

/// Runs the ABC phase given the per-site summary rows.
using FederationRunner = std::function<Posterior(const FederationRunConfig&, std::span<const Matrix>)>;

FederationRunner inprocess_runner();

/// Coordinator and sites in this process, talking TCP over `address`.
FederationRunner local_socket_runner(const std::string& address);

/// Listens on `address` and waits for the site processes; the summaries
/// passed in are ignored.
FederationRunner remote_coordinator_runner(const std::string& address);

struct TrimodalFixture {
    Matrix x;
    std::vector<std::size_t> component;
    GmmParams truth;
};

/// 3·n rows, n per component, rows shuffled.
TrimodalFixture generate_trimodal(std::size_t n_per_component, RngStream& rng);

struct SiteSplit {
    LabeledBatch train;
    LabeledBatch test;
};

/// Two Gaussian classes in raw_dim dimensions. Class means differ along the
/// first half of the coordinates; each site adds its own offset on the
/// second half.
std::vector<SiteSplit> generate_imbalance_sites(const SyntheticConfig& config, std::size_t sites, RngStream& rng);

/// As generate_imbalance_sites with balanced counts; the last
/// `affected_sites` sites keep floor(retained_percent% ) of their class-0
/// training rows.
std::vector<SiteSplit> generate_scarce_sites(const SyntheticConfig& config, std::size_t sites, RngStream& rng);

/// For each true component, the estimated component it was paired with.
/// Greedy: repeatedly takes the closest unmatched pair of means.
std::vector<std::size_t> match_components(const GmmParams& truth, const GmmParams& estimate);

struct TrimodalReport {
    GmmParams truth;
    GmmParams estimate;
    std::vector<std::size_t> matching;
    Vector mu_error;
    Vector pi_error;
    Posterior posterior;
};

TrimodalReport run_trimodal(const ExperimentConfig& config, const FederationRunner& runner);

struct ClassifierReport {
    std::vector<EvalReport> rows;
    Posterior posterior;
    GmmParams estimate;
    std::vector<std::size_t> participating_sites;
};

ClassifierReport run_imbalance(const ExperimentConfig& config, const FederationRunner& runner);
ClassifierReport run_scarce(const ExperimentConfig& config, const FederationRunner& runner);

/// Socket site process: rebuilds the scenario's data for `site_index`,
/// publishes its summary rows and serves the coordinator. Returns nullopt
/// when the site holds no rows for the federated model.
std::optional<SiteSessionSummary> serve_experiment_site(const ExperimentConfig& config, std::size_t site_index,
                                                        SiteLink& link);

struct RunOutputs {
    std::string metrics_csv;
    nlohmann::ordered_json posterior;
};

/// Runs the configured scenario and writes config.json, posterior.json,
/// metrics.csv and manifest.json into `out_dir`. Only manifest.json
/// carries wall-clock data.
RunOutputs run_experiment(const ExperimentConfig& config, const FederationRunner& runner,
                          const std::string& out_dir);

/// git-describe style version baked in at build time.
std::string version_string();

}  // namespace graffl
