#ifndef HEGEMONY_FED_CLIENT_HPP
#define HEGEMONY_FED_CLIENT_HPP

// Federated client: holds one threshold share, uploads packed encrypted
// weights when selected, and takes part in every joint decryption.

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "hegemony/fed/config.hpp"
#include "hegemony/fed/protocol.hpp"
#include "hegemony/fed/transport.hpp"
#include "hegemony/packing.hpp"
#include "hegemony/parallel.hpp"
#include "hegemony/threshold_paillier.hpp"

namespace hegemony::fed {

struct ClientFaults {
    bool corrupt_partials = false;  // send garbage instead of c^(2 delta sk_i)
    bool replay_upload = false;     // send every ModelUpload twice
    bool stale_upload = false;      // also send a copy stamped with the previous round
};

struct ClientResult {
    std::uint32_t id = 0;
    std::vector<std::vector<double>> averages;  // omega_{t+1} per completed round
    std::vector<std::string> checksums;
    std::string status = "ok";  // "ok" or "aborted"
    std::string cause;
    std::string detail;
};

/// Number of plaintext bits usable for packing under modulus n.
inline std::size_t packing_bits(const BigInt& n) { return mpz_sizeinbase(n.get_mpz_t(), 2) - 1; }

/// Encrypts packed integers in fixed chunks, each with its own stream forked in
/// order, so the output does not depend on the thread count.
inline std::vector<paillier::Ciphertext> encrypt_packed(const threshold::ThresholdPublicKey& pk,
                                                        const std::vector<BigInt>& integers, RandomSource& rng) {
    constexpr std::size_t chunk = 32;
    const std::size_t chunks = (integers.size() + chunk - 1) / chunk;
    std::vector<RandomSource> streams;
    for (std::size_t c = 0; c < chunks; ++c) streams.push_back(rng.fork());
    std::vector<paillier::Ciphertext> out(integers.size());
    parallel_for(chunks, [&](std::size_t c) {
        for (std::size_t i = c * chunk; i < std::min(integers.size(), (c + 1) * chunk); ++i)
            out[i] = threshold::encrypt(pk, integers[i], streams[c]);
    });
    return out;
}

/// An empty provider runs the synthetic update stub under the session config.
class FedClient {
public:
    FedClient(std::uint32_t id, threshold::ThresholdKeyShare share, UpdateProvider provider, ClientFaults faults = {},
              Millis timeout = Millis(300'000))
        : id_(id), share_(std::move(share)), provider_(std::move(provider)), faults_(faults), timeout_(timeout) {
        if (share_.index != id_)
            fail(ErrorKind::KeyMismatch, "share " + std::to_string(share_.index) + " given to client " + std::to_string(id_));
    }

    /// Reads the dealer's ShareDelivery from `ch`.
    static threshold::ThresholdKeyShare receive_share(Channel& ch, Millis timeout) {
        const auto m = ch.recv(timeout);
        if (m.kind != MessageKind::ShareDelivery || m.sender != kDealerId || m.round != 0)
            fail(ErrorKind::ProtocolError, "expected the dealer's ShareDelivery");
        return threshold::share_from_json(json_field(m.body, "share"));
    }

    static RoundMessage share_delivery(const threshold::ThresholdKeyShare& s) {
        return {MessageKind::ShareDelivery, 0, kDealerId, {{"share", threshold::to_json(s)}}};
    }

    /// Runs the session until the server's final RoundComplete.
    ClientResult run(Channel& ch) {
        ClientResult result;
        result.id = id_;
        ch.send(make(MessageKind::Hello, 0, {{"ceremony_id", share_.ceremony_id}, {"index", share_.index}}));
        const auto keys = expect(ch, MessageKind::PublicKeyBroadcast, 0);
        pk_ = threshold::public_key_from_json(json_field(keys.body, "public_key"));
        config_ = FedConfig::from_json(json_field(keys.body, "config"));
        if (pk_.ceremony_id != share_.ceremony_id)
            fail(ErrorKind::KeyMismatch, "server key belongs to another ceremony");
        weights_ = initial_weights(config_);

        std::uint64_t round = 0;
        for (;;) {
            const RoundMessage m = ch.recv(timeout_);
            if (m.sender != kServerId) continue;
            if (m.kind == MessageKind::RoundComplete && m.round == 0) break;
            if (m.kind == MessageKind::Hello && m.round == round + 1) {
                round = m.round;
                aggregate_.clear();
                if (json_field(m.body, "selected").get<bool>()) upload(ch, round);
                continue;
            }
            if (m.round != round || round == 0) continue;  // stale
            if (m.kind == MessageKind::AggregateBroadcast) {
                aggregate_ = bigints_from_json(json_field(m.body, "ciphertexts"));
                participants_ = json_number<unsigned>(m.body, "participants");
                ch.send(make(MessageKind::PartialDecryption, round, partials()));
            } else if (m.kind == MessageKind::PartialDecryption) {
                nlohmann::json done;
                try {
                    const auto avg = combine_and_average(json_field(m.body, "partials"));
                    result.averages.push_back(avg.first);
                    result.checksums.push_back(avg.second);
                    weights_ = avg.first;
                    done = {{"status", "ok"}, {"checksum", avg.second}};
                } catch (const Error& e) {
                    result.status = "aborted";
                    result.cause = std::string(to_string(e.kind()));
                    result.detail = e.what();
                    done = {{"status", "aborted"}, {"cause", result.cause}, {"detail", result.detail}};
                }
                ch.send(make(MessageKind::RoundComplete, round, done));
            }
        }
        return result;
    }

private:
    RoundMessage make(MessageKind kind, std::uint64_t round, nlohmann::json body) const {
        return {kind, round, id_, std::move(body)};
    }

    RoundMessage expect(Channel& ch, MessageKind kind, std::uint64_t round) {
        for (;;) {
            auto m = ch.recv(timeout_);
            if (m.kind == MessageKind::RoundComplete && m.round == 0)
                fail(ErrorKind::ProtocolError, "server ended the session: " + m.body.value("status", std::string{}));
            if (m.kind == kind && m.round == round && m.sender == kServerId) return m;
        }
    }

    RandomSource round_rng(std::uint64_t round) const {
        if (!config_.seeded) return RandomSource::secure();
        return RandomSource::seeded(derive_seed(config_.seed ^ 0xe2c, id_, round));
    }

    void upload(Channel& ch, std::uint64_t round) {
        using Clock = std::chrono::steady_clock;
        const auto t0 = Clock::now();
        const auto update = provider_ ? provider_(id_, round, weights_)
                                      : client_update_stub(derive_seed(config_.seed, id_, round), weights_, config_);
        const auto t1 = Clock::now();
        if (update.size() != config_.weight_count)
            fail(ErrorKind::FormatError, "update has " + std::to_string(update.size()) + " weights, expected " +
                                             std::to_string(config_.weight_count));
        const auto packed = packing::pack(update, config_.packing, packing_bits(pk_.n));
        auto rng = round_rng(round);
        const auto cts = encrypt_packed(pk_, packed.integers, rng);
        std::vector<BigInt> values;
        for (const auto& c : cts) values.push_back(c.value);
        const auto t2 = Clock::now();
        const auto m = make(MessageKind::ModelUpload, round,
                            {{"ciphertexts", hex_list(values)},
                             {"weight_count", update.size()},
                             {"local_update_seconds", std::chrono::duration<double>(t1 - t0).count()},
                             {"encrypt_seconds", std::chrono::duration<double>(t2 - t1).count()}});
        if (faults_.stale_upload) {
            auto old = m;
            old.round = round - 1;
            ch.send(old);
        }
        ch.send(m);
        if (faults_.replay_upload) ch.send(m);
    }

    nlohmann::json partials() const {
        std::vector<BigInt> values(aggregate_.size());
        parallel_for(aggregate_.size(), [&](std::size_t i) {
            values[i] = faults_.corrupt_partials
                            ? BigInt(2 + i)
                            : threshold::partial_decrypt(share_, pk_, {aggregate_[i], pk_.fingerprint}).value;
        });
        return {{"index", share_.index}, {"values", hex_list(values)}};
    }

    /// Combines the relayed partials into packed sums, then divides by the
    /// round's participant count.
    std::pair<std::vector<double>, std::string> combine_and_average(const nlohmann::json& bundle) const {
        if (!bundle.is_array()) fail(ErrorKind::FormatError, "partials bundle must be an array");
        std::vector<std::uint32_t> indices;
        std::vector<std::vector<BigInt>> values;
        for (const auto& p : bundle) {
            indices.push_back(json_number<std::uint32_t>(p, "index"));
            values.push_back(bigints_from_json(json_field(p, "values")));
            if (values.back().size() != aggregate_.size())
                fail(ErrorKind::IncompleteShareSet, "partial set does not cover every ciphertext");
        }
        packing::PackedWeights sum;
        sum.count = config_.weight_count;
        sum.config = config_.packing;
        sum.slots_per_integer = packing::slots_per_integer(config_.packing, packing_bits(pk_.n));
        sum.integers.resize(aggregate_.size());
        parallel_for(aggregate_.size(), [&](std::size_t i) {
            std::vector<threshold::PartialDecryption> ps;
            for (std::size_t k = 0; k < indices.size(); ++k) ps.push_back({indices[k], values[k][i]});
            sum.integers[i] = threshold::combine(pk_, ps);
        });
        const auto fields = packing::unpack_fields(sum, participants_);
        return {packing::unpack_sum(sum, participants_), fields_checksum(fields)};
    }

    std::uint32_t id_;
    threshold::ThresholdKeyShare share_;
    UpdateProvider provider_;
    ClientFaults faults_;
    Millis timeout_;
    threshold::ThresholdPublicKey pk_;
    FedConfig config_;
    std::vector<double> weights_;
    std::vector<BigInt> aggregate_;
    unsigned participants_ = 0;
};

}  // namespace hegemony::fed

#endif  // HEGEMONY_FED_CLIENT_HPP
