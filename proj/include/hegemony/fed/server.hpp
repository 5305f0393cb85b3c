#ifndef HEGEMONY_FED_SERVER_HPP
#define HEGEMONY_FED_SERVER_HPP

// Aggregation server. It is built from the threshold public key alone and
// only ever multiplies ciphertexts; it has no share and never calls the
// decryption side of the threshold scheme.

#include <chrono>
#include <map>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include "hegemony/fed/config.hpp"
#include "hegemony/fed/protocol.hpp"
#include "hegemony/fed/transport.hpp"
#include "hegemony/parallel.hpp"
#include "hegemony/threshold_paillier.hpp"

namespace hegemony::fed {

class AggregationServer {
public:
    AggregationServer(threshold::ThresholdPublicKey pk, FedConfig config) : pk_(std::move(pk)), config_(config) {
        config_.validate();
        if (pk_.l != config_.clients)
            fail(ErrorKind::KeyMismatch, "public key is for " + std::to_string(pk_.l) + " clients, config has " +
                                             std::to_string(config_.clients));
    }

    const threshold::ThresholdPublicKey& public_key() const { return pk_; }

    /// Slot-wise homomorphic sum: ciphertext products mod n^2, no division.
    std::vector<paillier::Ciphertext> aggregate(const std::vector<std::vector<paillier::Ciphertext>>& uploads) const {
        if (uploads.empty()) fail(ErrorKind::ProtocolError, "nothing to aggregate");
        const std::size_t count = uploads[0].size();
        for (const auto& u : uploads)
            if (u.size() != count) fail(ErrorKind::ProtocolError, "uploads carry different ciphertext counts");
        const auto pk = pk_.as_paillier();
        std::vector<paillier::Ciphertext> out(uploads[0]);
        parallel_for(count, [&](std::size_t i) {
            for (std::size_t k = 1; k < uploads.size(); ++k) out[i] = paillier::add_ct(pk, out[i], uploads[k][i]);
        });
        return out;
    }

    /// Drives setup and all rounds over `hub`, whose links are the client
    /// connections in any order. Returns once the last round completes or a
    /// round aborts.
    AggregationTranscript run(Hub& hub) {
        AggregationTranscript transcript;
        const auto setup_start = Clock::now();
        std::vector<std::string> setup_rejects;
        try {
            setup(hub, setup_rejects);
        } catch (const Error& e) {
            RoundRecord r;
            r.round = 0;
            r.status = "RoundAbort";
            r.cause = std::string(to_string(e.kind()));
            r.detail = e.what();
            r.rejected = setup_rejects;
            transcript.rounds.push_back(std::move(r));
            finish(hub, false);
            return transcript;
        }
        transcript.setup_seconds = seconds_since(setup_start);

        for (std::uint64_t t = 1; t <= config_.rounds; ++t) {
            RoundRecord rec = run_round(hub, t);
            const bool ok = rec.status == "ok";
            transcript.rounds.push_back(std::move(rec));
            if (!ok) {
                finish(hub, false);
                return transcript;
            }
        }
        finish(hub, true);
        return transcript;
    }

private:
    using Clock = std::chrono::steady_clock;

    static double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

    RoundMessage make(MessageKind kind, std::uint64_t round, nlohmann::json body) const {
        return {kind, round, kServerId, std::move(body)};
    }

    void broadcast(Hub& hub, const RoundMessage& m) {
        for (const auto& [id, link] : links_) hub.send(link, m);
    }

    /// Waits for one `kind` message for `round` from each id in `from`.
    /// Anything else (stale round, replay, wrong sender) is dropped and logged.
    std::map<std::uint32_t, RoundMessage> collect(Hub& hub, MessageKind kind, std::uint64_t round,
                                                  const std::set<std::uint32_t>& from, std::vector<std::string>& rejected) {
        std::map<std::uint32_t, RoundMessage> got;
        const auto deadline = Clock::now() + config_.phase_timeout;
        while (got.size() < from.size()) {
            const auto left = std::chrono::duration_cast<Millis>(deadline - Clock::now());
            if (left.count() <= 0)
                fail(ErrorKind::Timeout, std::string("waiting for ") + std::string(to_string(kind)) + " in round " +
                                             std::to_string(round));
            auto entry = hub.pop(left);
            if (!entry.message) fail(ErrorKind::ProtocolError, "client link failed: " + entry.error);
            const RoundMessage& m = *entry.message;
            const auto owner = client_of(entry.link);
            std::string why;
            if (m.round != round) why = "stale round " + std::to_string(m.round);
            else if (m.kind != kind) why = "unexpected " + std::string(to_string(m.kind));
            else if (!owner || *owner != m.sender) why = "sender does not match its connection";
            else if (!from.count(m.sender)) why = "sender not expected in this phase";
            else if (got.count(m.sender)) why = "replayed message";
            if (!why.empty()) {
                rejected.push_back(std::string(to_string(m.kind)) + " from " + std::to_string(m.sender) + ": " + why);
                continue;
            }
            got.emplace(m.sender, m);
        }
        return got;
    }

    std::optional<std::uint32_t> client_of(std::size_t link) const {
        for (const auto& [id, l] : links_)
            if (l == link) return id;
        return std::nullopt;
    }

    void setup(Hub& hub, std::vector<std::string>& rejected) {
        const auto deadline = Clock::now() + config_.phase_timeout;
        while (links_.size() < config_.clients) {
            const auto left = std::chrono::duration_cast<Millis>(deadline - Clock::now());
            if (left.count() <= 0) fail(ErrorKind::Timeout, "not every client said Hello");
            auto entry = hub.pop(left);
            if (!entry.message) fail(ErrorKind::ProtocolError, "client link failed: " + entry.error);
            const auto& m = *entry.message;
            const auto id = m.sender;
            if (m.kind != MessageKind::Hello || m.round != 0 || id == 0 || id > config_.clients || links_.count(id) ||
                client_of(entry.link)) {
                rejected.push_back("setup: dropped " + std::string(to_string(m.kind)) + " from " + std::to_string(id));
                continue;
            }
            if (m.body.value("ceremony_id", std::string{}) != pk_.ceremony_id)
                fail(ErrorKind::KeyMismatch, "client " + std::to_string(id) + " holds a share of another ceremony");
            links_[id] = entry.link;
        }
        broadcast(hub, make(MessageKind::PublicKeyBroadcast, 0,
                            {{"public_key", threshold::to_json(pk_)}, {"config", config_.to_json()}}));
    }

    RoundRecord run_round(Hub& hub, std::uint64_t t) {
        RoundRecord rec;
        rec.round = t;
        rec.participants = select_clients(config_, t);
        const std::set<std::uint32_t> selected(rec.participants.begin(), rec.participants.end());
        std::set<std::uint32_t> everyone;
        for (const auto& [id, link] : links_) everyone.insert(id);

        const auto t0 = Clock::now();
        auto stamp = t0;
        double* phase = &rec.encrypt;  // where time goes if the round aborts now
        try {
            for (const auto& [id, link] : links_)
                hub.send(link, make(MessageKind::Hello, t, {{"selected", selected.count(id) > 0},
                                                            {"participants", rec.participants}}));
            const auto uploads = collect(hub, MessageKind::ModelUpload, t, selected, rec.rejected);
            const auto t1 = Clock::now();
            // Split the upload wait between local training and encryption in
            // the proportion the clients reported.
            double upd = 0, enc = 0;
            std::vector<std::vector<paillier::Ciphertext>> cts;
            for (const auto& [id, m] : uploads) {
                upd += m.body.value("local_update_seconds", 0.0);
                enc += m.body.value("encrypt_seconds", 0.0);
                std::vector<paillier::Ciphertext> v;
                for (auto& x : bigints_from_json(json_field(m.body, "ciphertexts")))
                    v.push_back({std::move(x), pk_.fingerprint});
                if (json_number<std::size_t>(m.body, "weight_count") != config_.weight_count)
                    fail(ErrorKind::ProtocolError, "client " + std::to_string(id) + " uploaded a different model size");
                cts.push_back(std::move(v));
            }
            const double wait = std::chrono::duration<double>(t1 - t0).count();
            rec.local_update = upd + enc > 0 ? wait * upd / (upd + enc) : 0.0;
            rec.encrypt = wait - rec.local_update;
            rec.ciphertexts = cts.front().size();
            stamp = t1;
            phase = &rec.aggregate;

            const auto sum = aggregate(cts);
            std::vector<BigInt> values;
            for (const auto& c : sum) values.push_back(c.value);
            const auto t2 = Clock::now();
            rec.aggregate = std::chrono::duration<double>(t2 - t1).count();
            stamp = t2;
            phase = &rec.decrypt;

            broadcast(hub, make(MessageKind::AggregateBroadcast, t,
                                {{"ciphertexts", hex_list(values)},
                                 {"participants", rec.participants.size()},
                                 {"weight_count", config_.weight_count}}));
            const auto partials = collect(hub, MessageKind::PartialDecryption, t, everyone, rec.rejected);
            nlohmann::json bundle = nlohmann::json::array();
            for (const auto& [id, m] : partials)
                bundle.push_back({{"index", json_field(m.body, "index")}, {"values", json_field(m.body, "values")}});
            broadcast(hub, make(MessageKind::PartialDecryption, t, {{"partials", bundle}}));

            const auto done = collect(hub, MessageKind::RoundComplete, t, everyone, rec.rejected);
            rec.decrypt = seconds_since(t2);
            rec.total = seconds_since(t0);
            std::set<std::string> sums;
            for (const auto& [id, m] : done) {
                if (m.body.value("status", std::string{}) != "ok") {
                    rec.status = "RoundAbort";
                    rec.cause = m.body.value("cause", std::string("ProtocolError"));
                    rec.detail = "client " + std::to_string(id) + ": " + m.body.value("detail", std::string{});
                    return rec;
                }
                sums.insert(m.body.value("checksum", std::string{}));
            }
            if (sums.size() != 1) {
                rec.status = "RoundAbort";
                rec.cause = "ProtocolError";
                rec.detail = "clients disagree on the decrypted average";
                return rec;
            }
            rec.checksum = *sums.begin();
        } catch (const Error& e) {
            *phase += seconds_since(stamp);
            rec.total = seconds_since(t0);
            rec.status = "RoundAbort";
            rec.cause = std::string(to_string(e.kind()));
            rec.detail = e.what();
        }
        return rec;
    }

    void finish(Hub& hub, bool ok) {
        const auto m = make(MessageKind::RoundComplete, 0, {{"final", true}, {"status", ok ? "ok" : "aborted"}});
        for (const auto& [id, link] : links_) {
            try {
                hub.send(link, m);
            } catch (const Error&) {
            }
        }
    }

    threshold::ThresholdPublicKey pk_;
    FedConfig config_;
    std::map<std::uint32_t, std::size_t> links_;  // client id -> hub link
};

// The server cannot be handed decryption material.
static_assert(!std::is_constructible_v<AggregationServer, threshold::ThresholdKeyShare, FedConfig>);
static_assert(!std::is_constructible_v<AggregationServer, threshold::Ceremony, FedConfig>);
static_assert(!std::is_constructible_v<AggregationServer, std::vector<threshold::ThresholdKeyShare>, FedConfig>);

}  // namespace hegemony::fed

#endif  // HEGEMONY_FED_SERVER_HPP
