#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "graffl/abc.hpp"
#include "graffl/suffiae.hpp"
#include "graffl/transport.hpp"
#include "graffl/wire.hpp"

namespace graffl {

struct SiteDescriptor {
    std::uint32_t site_id = 0;
    std::size_t n_j = 0;
    std::size_t dim = 0;

    friend bool operator==(const SiteDescriptor&, const SiteDescriptor&) = default;
};

struct FederationRunConfig {
    AbcConfig abc;
    std::vector<SiteDescriptor> sites;  // split order
    std::uint64_t seed = 0;

    [[nodiscard]] std::size_t total_samples() const noexcept;
    /// ⌈N / Σ n_j⌉
    [[nodiscard]] std::size_t iterations() const noexcept;
    void validate() const;
};

/// Contiguous partition of `gen` in site order. A short final batch fills
/// sites greedily, so trailing sites may receive zero rows.
std::vector<ProposalBatch> split_proposals(const Matrix& gen, std::span<const SiteDescriptor> sites,
                                           std::size_t iteration = 0);

/// Pairs batch row i with local summary row i.
DiscrepancyReport site_handle(const Matrix& local_enc, const ProposalBatch& batch);

struct CoordinatorStats {
    std::size_t iterations = 0;
    std::vector<std::size_t> batches_per_site;
};

/**
 * Coordinator side of the protocol.
 *
 * Waits for a Hello on every connection, checks it against config.sites,
 * then runs ⌈N / Σ n_j⌉ iterations: draw proposals in index order, dispatch
 * one batch per site, collect every report (in any arrival order) and fold
 * the discrepancies into the running top-L selection. Ends with Terminate
 * to every site.
 *
 * Proposal draws use RngStream(config.seed), in the same order as
 * rejection_sample, so the result matches the centralized run exactly.
 */
Posterior coordinate(const FederationRunConfig& config, CoordinatorLink& link, CoordinatorStats* stats = nullptr);

struct SiteSessionSummary {
    std::size_t batches_served = 0;
    bool terminated = false;
};

/// Sends Hello, answers every ProposalBatch with a DiscrepancyReport, and
/// returns after Terminate (or when the coordinator disconnects).
SiteSessionSummary serve_site(const SiteDescriptor& descriptor, const Matrix& local_enc, SiteLink& link);

/// Local SuffiAE setup for one site.
struct SiteTrainingConfig {
    SuffiAEArchitecture architecture;
    TrainOptions train;
    bool publish_noisy = true;
    std::uint64_t seed = 0;
};

struct SiteSummary {
    SuffiAEModel model;
    Matrix encoded;  // the frozen summary rows compared against proposals
};

/// Trains the site's SuffiAE and freezes its published summary rows.
SiteSummary prepare_site_summary(const LabeledBatch& local_data, const SiteTrainingConfig& config);

/// prepare_site_summary followed by serve_site. Neither raw data nor any
/// model weights are written to the link.
SiteSessionSummary run_site(const SiteDescriptor& descriptor, const LabeledBatch& local_data,
                            const SiteTrainingConfig& config, SiteLink& link);

/// Convenience: coordinator plus one thread per site over an in-process
/// network, each site serving its pre-computed summary rows.
Posterior run_inprocess(const FederationRunConfig& config, std::span<const Matrix> site_summaries);

}  // namespace graffl
