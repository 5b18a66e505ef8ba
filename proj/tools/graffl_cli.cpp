#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "graffl/error.hpp"
#include "graffl/experiment.hpp"
#include "graffl/transport.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

struct RunArgs {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string transport;
    std::string listen;
    std::string connect;
    std::optional<std::size_t> site_id;
};

int run(const RunArgs& args) {
    graffl::ExperimentConfig config;
    try {
        config = graffl::load_config(args.config);
        if (args.seed) config.seed = *args.seed;
        if (!args.out.empty()) config.output_dir = args.out;
        if (!args.transport.empty()) config.transport.kind = args.transport;
        if (!args.listen.empty() || !args.connect.empty()) config.transport.kind = "socket";
        if (!args.listen.empty() && !args.connect.empty()) {
            throw graffl::Error(graffl::ErrorCode::ConfigError, "--listen and --connect are exclusive");
        }
        if (!args.connect.empty() && !args.site_id) {
            throw graffl::Error(graffl::ErrorCode::ConfigError, "--connect needs --site-id");
        }
        config.validate();
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    }

    try {
        if (!args.connect.empty()) {
            graffl::SocketSiteLink link(graffl::Endpoint::parse(args.connect));
            const auto summary = graffl::serve_experiment_site(config, *args.site_id, link);
            if (!summary) {
                std::cerr << "site " << *args.site_id << " holds no rows for the federated model; nothing to serve\n";
                link.close();
            } else {
                std::cerr << "site " << *args.site_id << " served " << summary->batches_served << " batches\n";
            }
            return kOk;
        }
        graffl::FederationRunner runner;
        if (!args.listen.empty()) {
            std::cerr << "waiting for sites on " << args.listen << '\n';
            runner = graffl::remote_coordinator_runner(args.listen);
        } else if (config.transport.kind == "socket") {
            runner = graffl::local_socket_runner(config.transport.address);
        } else {
            runner = graffl::inprocess_runner();
        }
        graffl::run_experiment(config, runner, config.output_dir);
        std::cerr << "results written to " << config.output_dir << '\n';
        return kOk;
    } catch (const graffl::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.code() == graffl::ErrorCode::ConfigError ? kConfigError : kRuntimeError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"graffl: federated ABC for Gaussian mixtures"};
    app.set_version_flag("--version", graffl::version_string());
    app.require_subcommand(1);

    RunArgs args;
    auto* cmd = app.add_subcommand("run", "Run an experiment described by a JSON config");
    cmd->add_option("--config", args.config, "Config file (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", args.out, "Output directory (overrides output_dir)");
    cmd->add_option("--seed", args.seed, "Seed (overrides the config)");
    cmd->add_option("--transport", args.transport, "inprocess or socket")->check(CLI::IsMember({"inprocess", "socket"}));
    auto* listen = cmd->add_option("--listen", args.listen, "Coordinator: accept site processes on host:port");
    auto* connect = cmd->add_option("--connect", args.connect, "Site: connect to the coordinator at host:port");
    cmd->add_option("--site-id", args.site_id, "Site index when running as a site process")->needs(connect);
    listen->excludes(connect);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }
    return run(args);
}
