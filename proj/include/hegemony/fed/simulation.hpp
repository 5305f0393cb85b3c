#ifndef HEGEMONY_FED_SIMULATION_HPP
#define HEGEMONY_FED_SIMULATION_HPP

// Whole-protocol drivers: an in-process simulation over loopback channels,
// and the two ends of a TCP session.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "hegemony/fed/client.hpp"
#include "hegemony/fed/server.hpp"

namespace hegemony::fed {

struct SimulationOptions {
    std::map<std::uint32_t, ClientFaults> faults;  // by client id
    std::optional<threshold::Ceremony> ceremony;   // reuse keys instead of running a ceremony
};

struct SimulationResult {
    AggregationTranscript transcript;
    std::vector<ClientResult> clients;  // index id-1
    double ceremony_seconds = 0;
};

inline threshold::Ceremony run_ceremony(const FedConfig& config) {
    auto rng = config.seeded ? RandomSource::seeded(derive_seed(config.seed, 0xce7e)) : RandomSource::secure();
    return threshold::ceremony_keygen(config.key_bits / 2, config.clients, rng);
}

/// Runs setup and `config.rounds` rounds with one thread per client, all
/// talking to the server through loopback channels.
inline SimulationResult run_simulation(const FedConfig& config, const UpdateProvider& provider,
                                       SimulationOptions options = {}) {
    config.validate();
    SimulationResult out;
    const auto c0 = std::chrono::steady_clock::now();
    const threshold::Ceremony ceremony = options.ceremony ? *options.ceremony : run_ceremony(config);
    out.ceremony_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - c0).count();

    AggregationServer server(ceremony.public_key, config);
    Hub hub;
    out.clients.resize(config.clients);
    std::vector<std::thread> threads;
    const Millis client_timeout = config.phase_timeout * 4;
    for (std::uint32_t id = 1; id <= config.clients; ++id) {
        auto [server_end, client_end] = loopback_pair();
        auto [dealer_end, inbox] = loopback_pair();
        dealer_end->send(FedClient::share_delivery(ceremony.shares[id - 1]));
        hub.attach(server_end);
        const auto faults = options.faults.count(id) ? options.faults.at(id) : ClientFaults{};
        threads.emplace_back([&, id, faults, client_end = client_end, inbox = inbox] {
            ClientResult& r = out.clients[id - 1];
            r.id = id;
            try {
                FedClient client(id, FedClient::receive_share(*inbox, client_timeout), provider, faults, client_timeout);
                r = client.run(*client_end);
            } catch (const Error& e) {
                r.status = "aborted";
                r.cause = std::string(to_string(e.kind()));
                r.detail = e.what();
            }
            client_end->close();
        });
    }
    out.transcript = server.run(hub);
    for (auto& t : threads) t.join();
    hub.shutdown();
    return out;
}

/// Server end of a TCP session: waits for `config.clients` connections on
/// `listener`, then runs the protocol.
inline AggregationTranscript serve(TcpListener& listener, const threshold::ThresholdPublicKey& pk,
                                   const FedConfig& config) {
    AggregationServer server(pk, config);
    Hub hub;
    for (std::uint32_t i = 0; i < config.clients; ++i) hub.attach(listener.accept(config.phase_timeout));
    auto transcript = server.run(hub);
    hub.shutdown();
    return transcript;
}

inline AggregationTranscript serve(const std::string& address, const threshold::ThresholdPublicKey& pk,
                                   const FedConfig& config) {
    TcpListener listener(address);
    return serve(listener, pk, config);
}

inline threshold::ThresholdKeyShare load_share(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::FormatError, "cannot open share file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::FormatError, "share file " + path.string() + ": " + e.what());
    }
    return threshold::share_from_json(j);
}

/// Client end of a TCP session; the client id is the share index.
inline ClientResult connect(const std::string& address, const std::filesystem::path& share_file,
                            const UpdateProvider& provider, Millis timeout = Millis(60'000), ClientFaults faults = {}) {
    auto share = load_share(share_file);
    const auto id = share.index;
    auto ch = tcp_connect(address, timeout);
    FedClient client(id, std::move(share), provider, faults, timeout * 4);
    auto r = client.run(*ch);
    ch->close();
    return r;
}

/// Replays recorded updates from `dir`/client<c>_round<t>.csv, one weight per
/// line or comma separated.
inline UpdateProvider replay_provider(std::filesystem::path dir) {
    return [dir](std::uint32_t client, std::uint64_t round, const std::vector<double>&) {
        const auto path = dir / ("client" + std::to_string(client) + "_round" + std::to_string(round) + ".csv");
        std::ifstream in(path);
        if (!in) fail(ErrorKind::FormatError, "missing update file " + path.string());
        std::vector<double> w;
        std::string line, cell;
        while (std::getline(in, line)) {
            std::stringstream ss(line);
            while (std::getline(ss, cell, ',')) {
                if (cell.find_first_not_of(" \t\r") == std::string::npos) continue;
                try {
                    w.push_back(std::stod(cell));
                } catch (const std::exception&) {
                    fail(ErrorKind::FormatError, path.string() + ": bad number '" + cell + "'");
                }
            }
        }
        return w;
    };
}

}  // namespace hegemony::fed

#endif  // HEGEMONY_FED_SIMULATION_HPP
