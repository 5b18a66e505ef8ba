#include "graffl/federation.hpp"

#include <algorithm>
#include <exception>
#include <optional>
#include <string>
#include <thread>

#include "graffl/error.hpp"

namespace graffl {

std::size_t FederationRunConfig::total_samples() const noexcept {
    std::size_t total = 0;
    for (const auto& s : sites) total += s.n_j;
    return total;
}

std::size_t FederationRunConfig::iterations() const noexcept {
    const std::size_t m = total_samples();
    return m == 0 ? 0 : (abc.n_proposals + m - 1) / m;
}

void FederationRunConfig::validate() const {
    abc.validate();
    if (sites.empty()) throw Error(ErrorCode::ConfigError, "federation needs at least one site");
    for (std::size_t j = 0; j < sites.size(); ++j) {
        if (sites[j].n_j == 0) throw Error(ErrorCode::ConfigError, "site " + std::to_string(sites[j].site_id) + " has n_j = 0");
        if (sites[j].dim != abc.dim) throw Error(ErrorCode::DimensionMismatch, "site dim differs from ABC dim");
        for (std::size_t i = 0; i < j; ++i)
            if (sites[i].site_id == sites[j].site_id) throw Error(ErrorCode::ConfigError, "duplicate site id");
    }
}

std::vector<ProposalBatch> split_proposals(const Matrix& gen, std::span<const SiteDescriptor> sites,
                                           std::size_t iteration) {
    std::size_t capacity = 0;
    for (const auto& s : sites) capacity += s.n_j;
    if (gen.rows() > capacity) {
        throw Error(ErrorCode::DimensionMismatch, std::to_string(gen.rows()) + " proposal rows exceed Σ n_j = " +
                                                      std::to_string(capacity));
    }
    std::vector<ProposalBatch> batches;
    batches.reserve(sites.size());
    std::size_t offset = 0;
    for (const auto& s : sites) {
        const std::size_t take = std::min(s.n_j, gen.rows() - offset);
        batches.push_back({iteration, take == 0 ? Matrix(0, gen.cols()) : gen.slice_rows(offset, take)});
        offset += take;
    }
    return batches;
}

DiscrepancyReport site_handle(const Matrix& local_enc, const ProposalBatch& batch) {
    const std::size_t rows = batch.rows.rows();
    if (rows > local_enc.rows()) {
        throw Error(ErrorCode::DimensionMismatch, "batch has " + std::to_string(rows) + " rows, site holds " +
                                                      std::to_string(local_enc.rows()));
    }
    if (rows == 0) return {batch.iteration, {}};
    return {batch.iteration, discrepancy_batch(local_enc.slice_rows(0, rows), batch.rows)};
}

namespace {

[[noreturn]] void closed(std::size_t conn) {
    throw Error(ErrorCode::TransportClosed, "connection " + std::to_string(conn) + " closed mid-run");
}

}  // namespace

Posterior coordinate(const FederationRunConfig& config, CoordinatorLink& link, CoordinatorStats* stats) {
    config.validate();
    const std::size_t s_count = config.sites.size();
    if (link.connections() != s_count) {
        throw Error(ErrorCode::HandshakeMismatch, "expected " + std::to_string(s_count) + " connections, have " +
                                                      std::to_string(link.connections()));
    }

    // Handshake: map each connection to its slot in config.sites.
    std::vector<std::optional<std::size_t>> slot_of_conn(s_count);
    std::vector<std::size_t> conn_of_slot(s_count, 0);
    std::vector<bool> slot_taken(s_count, false);
    for (std::size_t seen = 0; seen < s_count;) {
        Inbound in = link.receive();
        if (!in.frame) closed(in.connection);
        const SiteMessage msg = decode_site_frame(*in.frame);
        const auto* hello = std::get_if<Hello>(&msg);
        if (!hello || slot_of_conn[in.connection]) {
            throw Error(ErrorCode::ProtocolViolation, "expected exactly one Hello per connection first");
        }
        const auto it = std::find_if(config.sites.begin(), config.sites.end(),
                                     [&](const SiteDescriptor& s) { return s.site_id == hello->site_id; });
        if (it == config.sites.end()) {
            throw Error(ErrorCode::HandshakeMismatch, "unknown site id " + std::to_string(hello->site_id));
        }
        const auto slot = static_cast<std::size_t>(it - config.sites.begin());
        if (slot_taken[slot]) throw Error(ErrorCode::HandshakeMismatch, "site id announced twice");
        if (hello->n_j != it->n_j || hello->dim != it->dim) {
            throw Error(ErrorCode::HandshakeMismatch,
                        "site " + std::to_string(hello->site_id) + " announced n_j=" + std::to_string(hello->n_j) +
                            " dim=" + std::to_string(hello->dim) + ", config says n_j=" + std::to_string(it->n_j) +
                            " dim=" + std::to_string(it->dim));
        }
        slot_taken[slot] = true;
        slot_of_conn[in.connection] = slot;
        conn_of_slot[slot] = in.connection;
        ++seen;
    }

    RngStream rng(config.seed);
    TopLSelector selector(config.abc.n_accept);
    const std::size_t n = config.abc.n_proposals;
    const std::size_t m = config.total_samples();
    const std::size_t iterations = config.iterations();
    std::vector<std::size_t> batches_per_site(s_count, 0);

    std::size_t next_index = 0;
    for (std::size_t iter = 0; iter < iterations; ++iter) {
        const std::size_t round = std::min(m, n - next_index);
        Matrix gen(round, config.abc.dim);
        std::vector<GmmParams> params;
        params.reserve(round);
        for (std::size_t i = 0; i < round; ++i) {
            Proposal p = propose(config.abc, rng);
            std::copy(p.sample.begin(), p.sample.end(), gen.row(i).begin());
            params.push_back(std::move(p.params));
        }

        const auto batches = split_proposals(gen, config.sites, iter);
        std::vector<std::size_t> offsets(s_count, 0);
        for (std::size_t slot = 0, off = 0; slot < s_count; ++slot) {
            offsets[slot] = off;
            off += batches[slot].rows.rows();
        }
        for (std::size_t slot = 0; slot < s_count; ++slot) {
            link.send(conn_of_slot[slot], encode_frame(WireMessage{batches[slot]}));
            ++batches_per_site[slot];
        }
        // Sample rows are not retained past dispatch.
        gen = Matrix();

        Vector disc(round, 0.0);
        std::vector<bool> reported(s_count, false);
        for (std::size_t received = 0; received < s_count;) {
            Inbound in = link.receive();
            if (!in.frame) closed(in.connection);
            SiteMessage msg = decode_site_frame(*in.frame);
            auto* report = std::get_if<DiscrepancyReport>(&msg);
            const auto slot = slot_of_conn[in.connection];
            if (!report || !slot || reported[*slot]) {
                throw Error(ErrorCode::ProtocolViolation, "unexpected frame from connection " +
                                                              std::to_string(in.connection));
            }
            const std::size_t expected = batches[*slot].rows.rows();
            if (report->iteration != iter || report->values.size() != expected) {
                throw Error(ErrorCode::ReportShapeMismatch,
                            "site " + std::to_string(config.sites[*slot].site_id) + " reported " +
                                std::to_string(report->values.size()) + " values for iteration " +
                                std::to_string(report->iteration) + ", expected " + std::to_string(expected) +
                                " for iteration " + std::to_string(iter));
            }
            std::copy(report->values.begin(), report->values.end(),
                      disc.begin() + static_cast<std::ptrdiff_t>(offsets[*slot]));
            reported[*slot] = true;
            ++received;
        }
        for (std::size_t i = 0; i < round; ++i) selector.offer(next_index + i, std::move(params[i]), disc[i]);
        next_index += round;
    }

    for (std::size_t conn = 0; conn < s_count; ++conn) link.send(conn, encode_frame(WireMessage{Terminate{}}));
    link.close();
    if (stats) *stats = {iterations, std::move(batches_per_site)};
    return std::move(selector).finish();
}

SiteSessionSummary serve_site(const SiteDescriptor& descriptor, const Matrix& local_enc, SiteLink& link) {
    if (local_enc.rows() != descriptor.n_j || local_enc.cols() != descriptor.dim) {
        throw Error(ErrorCode::DimensionMismatch, "site summary shape does not match its descriptor");
    }
    link.send(encode_frame(SiteMessage{Hello{descriptor.site_id, descriptor.n_j, descriptor.dim}}));
    SiteSessionSummary summary;
    for (;;) {
        auto frame = link.receive();
        if (!frame) break;
        WireMessage msg = decode_frame(*frame);
        if (std::holds_alternative<Terminate>(msg)) {
            summary.terminated = true;
            break;
        }
        const auto* batch = std::get_if<ProposalBatch>(&msg);
        if (!batch) throw Error(ErrorCode::ProtocolViolation, "site received a frame it cannot handle");
        if (batch->rows.rows() > 0 && batch->rows.cols() != descriptor.dim) {
            throw Error(ErrorCode::DimensionMismatch, "proposal width differs from agreed dim");
        }
        link.send(encode_frame(SiteMessage{site_handle(local_enc, *batch)}));
        ++summary.batches_served;
    }
    link.close();
    return summary;
}

SiteSummary prepare_site_summary(const LabeledBatch& local_data, const SiteTrainingConfig& config) {
    local_data.validate();
    RngStream rng(config.seed);
    RngStream init_rng = rng.split(0);
    RngStream train_rng = rng.split(1);
    RngStream publish_rng = rng.split(2);
    SuffiAEArchitecture arch = config.architecture;
    arch.input_dim = local_data.x.cols();
    SuffiAEModel model = train(SuffiAEModel::init(arch, init_rng), local_data, config.train, train_rng);
    Matrix enc = config.publish_noisy ? encode_noisy(model, local_data.x, publish_rng) : encode(model, local_data.x);
    return {std::move(model), std::move(enc)};
}

SiteSessionSummary run_site(const SiteDescriptor& descriptor, const LabeledBatch& local_data,
                            const SiteTrainingConfig& config, SiteLink& link) {
    const SiteSummary summary = prepare_site_summary(local_data, config);
    return serve_site(descriptor, summary.encoded, link);
}

Posterior run_inprocess(const FederationRunConfig& config, std::span<const Matrix> site_summaries) {
    if (site_summaries.size() != config.sites.size()) {
        throw Error(ErrorCode::ConfigError, "one summary matrix per site is required");
    }
    InProcessNetwork net(config.sites.size());
    std::vector<std::exception_ptr> errors(config.sites.size());
    std::vector<std::thread> workers;
    for (std::size_t j = 0; j < config.sites.size(); ++j) {
        workers.emplace_back([&, j] {
            try {
                serve_site(config.sites[j], site_summaries[j], net.site(j));
            } catch (...) {
                errors[j] = std::current_exception();
                net.site(j).close();
            }
        });
    }
    Posterior post;
    std::exception_ptr coordinator_error;
    try {
        post = coordinate(config, net.coordinator());
    } catch (...) {
        coordinator_error = std::current_exception();
        net.coordinator().close();
    }
    for (auto& w : workers) w.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    if (coordinator_error) std::rethrow_exception(coordinator_error);
    return post;
}

}  // namespace graffl
