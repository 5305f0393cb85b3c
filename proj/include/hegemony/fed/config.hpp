#ifndef HEGEMONY_FED_CONFIG_HPP
#define HEGEMONY_FED_CONFIG_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "hegemony/json.hpp"
#include "hegemony/packing.hpp"
#include "hegemony/random.hpp"

namespace hegemony::fed {

struct FedConfig {
    std::uint32_t clients = 3;         // K
    std::uint64_t rounds = 1;          // T
    double client_fraction = 1.0;      // C
    std::size_t local_epochs = 1;      // E
    std::size_t batches_per_round = 1; // B
    double learning_rate = 0.01;       // eta
    packing::PackingConfig packing;
    std::size_t key_bits = 512;        // bits of n
    std::size_t weight_count = 1000;
    std::uint64_t seed = 1;
    bool seeded = true;                // false: keys and encryption randomness from the OS
    std::chrono::milliseconds phase_timeout{60'000};

    void validate() const {
        if (clients < 2) fail(ErrorKind::FormatError, "need at least two clients");
        if (rounds == 0) fail(ErrorKind::FormatError, "need at least one round");
        if (!(client_fraction > 0.0 && client_fraction <= 1.0))
            fail(ErrorKind::FormatError, "client fraction must lie in (0, 1]");
        if (key_bits < 64 || key_bits % 2) fail(ErrorKind::FormatError, "key bits must be even and at least 64");
        packing.validate();
    }

    /// max(C*K, 1) clients per round.
    std::uint32_t per_round() const {
        return std::max<std::uint32_t>(1, static_cast<std::uint32_t>(std::floor(client_fraction * clients + 1e-9)));
    }

    nlohmann::json to_json() const {
        return {{"clients", clients},
                {"rounds", rounds},
                {"client_fraction", client_fraction},
                {"local_epochs", local_epochs},
                {"batches_per_round", batches_per_round},
                {"learning_rate", learning_rate},
                {"packing", packing::to_json(packing)},
                {"key_bits", key_bits},
                {"weight_count", weight_count},
                {"seed", seed},
                {"seeded", seeded},
                {"phase_timeout_ms", phase_timeout.count()}};
    }

    static FedConfig from_json(const nlohmann::json& j) {
        FedConfig c;
        c.clients = json_number<std::uint32_t>(j, "clients");
        c.rounds = json_number<std::uint64_t>(j, "rounds");
        c.client_fraction = json_number<double>(j, "client_fraction");
        c.local_epochs = json_number<std::size_t>(j, "local_epochs");
        c.batches_per_round = json_number<std::size_t>(j, "batches_per_round");
        c.learning_rate = json_number<double>(j, "learning_rate");
        c.packing = packing::config_from_json(json_field(j, "packing"));
        c.key_bits = json_number<std::size_t>(j, "key_bits");
        c.weight_count = json_number<std::size_t>(j, "weight_count");
        c.seed = json_number<std::uint64_t>(j, "seed");
        c.seeded = json_field(j, "seeded").get<bool>();
        c.phase_timeout = std::chrono::milliseconds(json_number<long long>(j, "phase_timeout_ms"));
        return c;
    }
};

/// Mixes seed, client and round into an independent stream seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    std::uint64_t x = seed ^ 0x9e3779b97f4a7c15ull;
    for (std::uint64_t v : {a, b}) {
        x ^= v + 0x9e3779b97f4a7c15ull + (x << 6) + (x >> 2);
        x ^= x >> 31;
        x *= 0xbf58476d1ce4e5b9ull;
        x ^= x >> 29;
    }
    return x;
}

/// Alg 5's S_t: a uniformly random subset of max(C*K, 1) client ids (1-based).
inline std::vector<std::uint32_t> select_clients(const FedConfig& c, std::uint64_t round) {
    std::vector<std::uint32_t> ids(c.clients);
    std::iota(ids.begin(), ids.end(), 1u);
    auto rng = RandomSource::seeded(derive_seed(c.seed, 0x5e1ec7, round));
    for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.uniform(i)]);
    ids.resize(c.per_round());
    std::sort(ids.begin(), ids.end());
    return ids;
}

/// Shared starting point omega_0 in [-1, 1).
inline std::vector<double> initial_weights(const FedConfig& c) {
    auto rng = RandomSource::seeded(derive_seed(c.seed, 0x1417));
    std::vector<double> w(c.weight_count);
    for (auto& x : w) x = rng.uniform_real(-1.0, 1.0);
    return w;
}

/// Stand-in for local SGD: B*E steps, each adding a seeded perturbation in
/// [-eta, eta] per weight. Deterministic in (seed, previous).
inline std::vector<double> client_update_stub(std::uint64_t seed, const std::vector<double>& previous,
                                              const FedConfig& config) {
    auto rng = RandomSource::seeded(seed);
    std::vector<double> w = previous;
    const std::size_t steps = config.batches_per_round * config.local_epochs;
    for (std::size_t s = 0; s < steps; ++s)
        for (auto& x : w) x -= config.learning_rate * rng.uniform_real(-1.0, 1.0);
    return w;
}

/// Supplies a client's post-training weights for a round.
using UpdateProvider =
    std::function<std::vector<double>(std::uint32_t client, std::uint64_t round, const std::vector<double>& previous)>;

inline UpdateProvider stub_provider(const FedConfig& config) {
    return [config](std::uint32_t client, std::uint64_t round, const std::vector<double>& previous) {
        return client_update_stub(derive_seed(config.seed, client, round), previous, config);
    };
}

// ---------------------------------------------------------------- transcript

struct RoundRecord {
    std::uint64_t round = 0;
    std::vector<std::uint32_t> participants;
    std::size_t ciphertexts = 0;  // per upload
    double local_update = 0, encrypt = 0, aggregate = 0, decrypt = 0, total = 0;
    std::string checksum;
    std::string status = "ok";  // "ok" or "RoundAbort"
    std::string cause;          // ErrorKind name when aborted
    std::string detail;
    std::vector<std::string> rejected;  // messages dropped by the stale/replay guard
};

struct AggregationTranscript {
    double setup_seconds = 0;
    std::vector<RoundRecord> rounds;

    bool aborted() const { return !rounds.empty() && rounds.back().status != "ok"; }

    /// One JSON record per phase, then one summary record per round.
    std::vector<nlohmann::json> records() const {
        std::vector<nlohmann::json> out;
        out.push_back({{"type", "setup"}, {"seconds", setup_seconds}});
        for (const auto& r : rounds) {
            for (auto [name, secs] : {std::pair{"local_update", r.local_update}, {"encrypt", r.encrypt},
                                      {"aggregate", r.aggregate}, {"decrypt", r.decrypt}})
                out.push_back({{"type", "phase"}, {"round", r.round}, {"phase", name}, {"seconds", secs}});
            nlohmann::json s = {{"type", "round"},          {"round", r.round},
                                {"participants", r.participants}, {"ciphertexts", r.ciphertexts},
                                {"total_seconds", r.total}, {"checksum", r.checksum},
                                {"status", r.status},       {"rejected_messages", r.rejected}};
            if (r.status != "ok") {
                s["cause"] = r.cause;
                s["detail"] = r.detail;
            }
            out.push_back(std::move(s));
        }
        return out;
    }

    std::string json_lines() const {
        std::string s;
        for (const auto& r : records()) s += r.dump() + "\n";
        return s;
    }
};

/// FNV-1a over the decrypted slot fields; equal across clients in a round.
inline std::string fields_checksum(const std::vector<std::uint64_t>& fields) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (auto f : fields)
        for (int b = 0; b < 8; ++b) {
            h ^= (f >> (8 * b)) & 0xff;
            h *= 0x100000001b3ull;
        }
    return json_u64_hex(h);
}

}  // namespace hegemony::fed

#endif  // HEGEMONY_FED_CONFIG_HPP
