#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

#include "hegemony/fed/simulation.hpp"

using namespace hegemony;
using namespace hegemony::fed;

namespace {

FedConfig small_config(std::uint32_t clients, std::uint64_t rounds, std::size_t weights, std::uint64_t seed = 7) {
    FedConfig c;
    c.clients = clients;
    c.rounds = rounds;
    c.weight_count = weights;
    c.key_bits = 256;
    c.seed = seed;
    c.phase_timeout = Millis(20'000);
    return c;
}

// Every selected client draws fresh uniform weights in [-4, 4).
UpdateProvider random_provider(std::uint64_t seed, std::size_t count) {
    return [=](std::uint32_t client, std::uint64_t round, const std::vector<double>&) {
        auto rng = RandomSource::seeded(derive_seed(seed, client, round));
        std::vector<double> w(count);
        for (auto& x : w) x = rng.uniform_real(-4.0, 4.0);
        return w;
    };
}

void expect_all_ok(const SimulationResult& r) {
    EXPECT_FALSE(r.transcript.aborted());
    for (const auto& c : r.clients) EXPECT_EQ(c.status, "ok") << c.cause << ": " << c.detail;
}

}  // namespace

TEST(ClientUpdateStub, ZeroLearningRateIsIdentity) {
    FedConfig c;
    c.learning_rate = 0;
    c.batches_per_round = 3;
    c.local_epochs = 2;
    const std::vector<double> w{0.5, -1.25, 3.0};
    EXPECT_EQ(client_update_stub(11, w, c), w);
}

TEST(ClientUpdateStub, FixedSeedReproducesAndOtherSeedDiffers) {
    FedConfig c;
    const std::vector<double> w(50, 0.25);
    EXPECT_EQ(client_update_stub(3, w, c), client_update_stub(3, w, c));
    EXPECT_NE(client_update_stub(3, w, c), client_update_stub(4, w, c));
}

TEST(ClientUpdateStub, PerturbationBoundedByEtaTimesSteps) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        FedConfig c;
        c.learning_rate = 0.05;
        c.batches_per_round = 1 + seed % 4;
        c.local_epochs = 1 + seed % 3;
        const std::vector<double> w(200, -0.5);
        const auto u = client_update_stub(seed, w, c);
        ASSERT_EQ(u.size(), w.size());
        const double bound = c.learning_rate * double(c.batches_per_round * c.local_epochs);
        for (std::size_t i = 0; i < w.size(); ++i) ASSERT_LE(std::fabs(u[i] - w[i]), bound + 1e-12);
    }
}

TEST(ClientSelection, PicksMaxOfFractionTimesKAndOne) {
    FedConfig c;
    c.clients = 10;
    for (double frac : {0.01, 0.1, 0.35, 0.5, 1.0}) {
        c.client_fraction = frac;
        const std::size_t want = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(frac * 10 + 1e-9)));
        for (std::uint64_t t = 1; t <= 20; ++t) {
            const auto s = select_clients(c, t);
            ASSERT_EQ(s.size(), want);
            ASSERT_TRUE(std::is_sorted(s.begin(), s.end()));
            ASSERT_EQ(std::adjacent_find(s.begin(), s.end()), s.end());
            for (auto id : s) ASSERT_TRUE(id >= 1 && id <= 10);
        }
    }
}

TEST(Framing, RoundtripAndVersionCheck) {
    const RoundMessage m{MessageKind::ModelUpload, 4, 2, {{"ciphertexts", {"ff", "10"}}}};
    const std::string frame = encode_frame(m);
    ASSERT_EQ(frame_length(reinterpret_cast<const unsigned char*>(frame.data())), frame.size() - 4);
    const auto back = decode_frame_body(std::string_view(frame).substr(4));
    EXPECT_EQ(back.kind, m.kind);
    EXPECT_EQ(back.round, 4u);
    EXPECT_EQ(back.sender, 2u);
    EXPECT_EQ(back.body, m.body);

    auto j = m.to_json();
    j["v"] = 99;
    try {
        RoundMessage::from_json(j);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::ProtocolError);
    }
    j["v"] = kProtocolVersion;
    j["kind"] = "Shout";
    EXPECT_THROW(RoundMessage::from_json(j), Error);
    EXPECT_THROW(decode_frame_body("{not json"), Error);
}

TEST(Framing, LoopbackTimesOutThenDelivers) {
    auto [a, b] = loopback_pair();
    EXPECT_THROW(b->recv(Millis(20)), Error);
    a->send({MessageKind::Hello, 0, 1, {}});
    EXPECT_EQ(b->recv(Millis(100)).sender, 1u);
    a->close();
    try {
        b->recv(Millis(100));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::ProtocolError);
    }
}

TEST(ServerBlindness, ServerCannotBeBuiltFromDecryptionMaterial) {
    EXPECT_FALSE((std::is_constructible_v<AggregationServer, threshold::ThresholdKeyShare, FedConfig>));
    EXPECT_FALSE((std::is_constructible_v<AggregationServer, threshold::Ceremony, FedConfig>));
    EXPECT_TRUE((std::is_constructible_v<AggregationServer, threshold::ThresholdPublicKey, FedConfig>));
}

TEST(FedSimulation, ConstantClientsAverageToTwo) {
    auto cfg = small_config(3, 1, 1);
    const auto provider = [](std::uint32_t client, std::uint64_t, const std::vector<double>&) {
        return std::vector<double>{double(client)};
    };
    const auto r = run_simulation(cfg, provider);
    expect_all_ok(r);
    for (const auto& c : r.clients) {
        ASSERT_EQ(c.averages.size(), 1u);
        EXPECT_NEAR(c.averages[0][0], 2.0, std::ldexp(1.0, -16));
    }
}

TEST(FedSimulation, RandomWeightsMatchPlaintextFedAvg) {
    const std::size_t count = 1000;
    auto cfg = small_config(3, 2, count, 21);
    const auto provider = random_provider(5, count);
    const auto r = run_simulation(cfg, provider);
    expect_all_ok(r);
    ASSERT_EQ(r.transcript.rounds.size(), 2u);
    const double tol = std::ldexp(1.0, -16);
    for (std::uint64_t t = 1; t <= 2; ++t) {
        const auto& rec = r.transcript.rounds[t - 1];
        EXPECT_EQ(rec.participants, (std::vector<std::uint32_t>{1, 2, 3}));
        EXPECT_EQ(rec.ciphertexts, (count + 4) / 5);  // 255 plaintext bits hold five 48-bit slots
        std::vector<double> mean(count, 0.0);
        for (std::uint32_t c = 1; c <= 3; ++c) {
            const auto w = provider(c, t, {});
            for (std::size_t i = 0; i < count; ++i) mean[i] += w[i] / 3.0;
        }
        for (const auto& c : r.clients) {
            ASSERT_EQ(c.averages.size(), 2u);
            EXPECT_EQ(c.checksums[t - 1], rec.checksum);
            for (std::size_t i = 0; i < count; ++i) ASSERT_NEAR(c.averages[t - 1][i], mean[i], tol) << "weight " << i;
        }
    }
}

TEST(FedSimulation, StubProviderAveragesEvolveAcrossRounds) {
    auto cfg = small_config(3, 3, 40, 2);
    cfg.learning_rate = 0.1;
    const auto provider = stub_provider(cfg);
    const auto r = run_simulation(cfg, provider);
    expect_all_ok(r);
    // Plaintext replay of the same loop.
    std::vector<double> w = initial_weights(cfg);
    for (std::uint64_t t = 1; t <= 3; ++t) {
        std::vector<double> next(w.size(), 0.0);
        for (std::uint32_t c = 1; c <= 3; ++c) {
            const auto u = provider(c, t, w);
            for (std::size_t i = 0; i < w.size(); ++i) next[i] += u[i] / 3.0;
        }
        for (std::size_t i = 0; i < w.size(); ++i) ASSERT_NEAR(r.clients[0].averages[t - 1][i], next[i], 1e-4);
        w = r.clients[0].averages[t - 1];
    }
}

TEST(FedSimulation, PartialSelectionDividesByRoundParticipants) {
    auto cfg = small_config(4, 3, 20, 9);
    cfg.client_fraction = 0.5;
    const auto provider = random_provider(8, 20);
    const auto r = run_simulation(cfg, provider);
    expect_all_ok(r);
    for (std::uint64_t t = 1; t <= 3; ++t) {
        const auto& rec = r.transcript.rounds[t - 1];
        ASSERT_EQ(rec.participants, select_clients(cfg, t));
        ASSERT_EQ(rec.participants.size(), 2u);
        std::vector<double> mean(20, 0.0);
        for (auto c : rec.participants) {
            const auto w = provider(c, t, {});
            for (std::size_t i = 0; i < 20; ++i) mean[i] += w[i] / 2.0;
        }
        for (const auto& c : r.clients)
            for (std::size_t i = 0; i < 20; ++i) ASSERT_NEAR(c.averages[t - 1][i], mean[i], std::ldexp(1.0, -16));
    }
}

TEST(FedSimulation, DeterministicUnderSeedAndThreadCount) {
    auto cfg = small_config(3, 2, 64, 4);
    const auto provider = random_provider(1, 64);
    auto ceremony = run_ceremony(cfg);
    set_thread_count(1);
    const auto a = run_simulation(cfg, provider, {{}, ceremony});
    set_thread_count(4);
    const auto b = run_simulation(cfg, provider, {{}, ceremony});
    set_thread_count(0);
    expect_all_ok(a);
    expect_all_ok(b);
    for (std::size_t t = 0; t < 2; ++t) EXPECT_EQ(a.transcript.rounds[t].checksum, b.transcript.rounds[t].checksum);
    EXPECT_EQ(a.clients[1].averages, b.clients[1].averages);
}

TEST(FedSimulation, PhaseTimesAreDisjointAndSumToTotal) {
    auto cfg = small_config(3, 2, 300, 6);
    const auto r = run_simulation(cfg, random_provider(2, 300));
    expect_all_ok(r);
    for (const auto& rec : r.transcript.rounds) {
        for (double p : {rec.local_update, rec.encrypt, rec.aggregate, rec.decrypt}) EXPECT_GE(p, 0.0);
        const double sum = rec.local_update + rec.encrypt + rec.aggregate + rec.decrypt;
        EXPECT_NEAR(sum, rec.total, 1e-3 + 0.01 * rec.total);
    }
    const auto records = r.transcript.records();
    ASSERT_EQ(records.size(), 1u + 2u * 5u);
    EXPECT_EQ(records[0]["type"], "setup");
    EXPECT_EQ(records[1]["phase"], "local_update");
    EXPECT_EQ(records[5]["type"], "round");
}

TEST(FedFaults, GarbagePartialAbortsWithCombineFailed) {
    auto cfg = small_config(2, 2, 10, 3);
    SimulationOptions opts;
    opts.faults[2].corrupt_partials = true;
    const auto r = run_simulation(cfg, random_provider(3, 10), opts);
    ASSERT_TRUE(r.transcript.aborted());
    ASSERT_EQ(r.transcript.rounds.size(), 1u);
    const auto& rec = r.transcript.rounds[0];
    EXPECT_EQ(rec.status, "RoundAbort");
    EXPECT_EQ(rec.cause, "CombineFailed");
    EXPECT_EQ(rec.participants.size(), 2u);
    EXPECT_EQ(rec.ciphertexts, 2u);
    for (const auto& c : r.clients) {
        EXPECT_EQ(c.status, "aborted");
        EXPECT_TRUE(c.averages.empty());
    }
    const auto lines = r.transcript.json_lines();
    EXPECT_NE(lines.find("\"status\":\"RoundAbort\""), std::string::npos);
    EXPECT_NE(lines.find("CombineFailed"), std::string::npos);
}

TEST(FedFaults, MoreAddendsThanHeadroomAbortsWithOverflow) {
    auto cfg = small_config(3, 1, 10, 3);
    cfg.packing.max_addends = 2;
    const auto r = run_simulation(cfg, random_provider(3, 10));
    ASSERT_TRUE(r.transcript.aborted());
    EXPECT_EQ(r.transcript.rounds[0].cause, "OverflowDetected");
    for (const auto& c : r.clients) EXPECT_EQ(c.cause, "OverflowDetected");
}

TEST(FedProtocol, ReplayedAndStaleUploadsAreRejected) {
    auto cfg = small_config(3, 2, 30, 12);
    SimulationOptions opts;
    opts.faults[1].replay_upload = true;
    opts.faults[3].stale_upload = true;
    const auto provider = random_provider(4, 30);
    const auto faulty = run_simulation(cfg, provider, opts);
    expect_all_ok(faulty);
    bool replay = false, stale = false;
    for (const auto& rec : faulty.transcript.rounds)
        for (const auto& why : rec.rejected) {
            replay |= why.find("replayed") != std::string::npos;
            stale |= why.find("stale round") != std::string::npos;
        }
    EXPECT_TRUE(replay);
    EXPECT_TRUE(stale);

    // Dropped messages leave the result unchanged.
    auto clean_opts = SimulationOptions{};
    const auto clean = run_simulation(cfg, provider, clean_opts);
    for (std::size_t t = 0; t < 2; ++t)
        EXPECT_EQ(clean.transcript.rounds[t].checksum, faulty.transcript.rounds[t].checksum);
}

TEST(FedProtocol, SlowClientTimesOutThePhase) {
    auto cfg = small_config(2, 1, 4, 1);
    cfg.phase_timeout = Millis(150);
    const auto provider = [](std::uint32_t client, std::uint64_t, const std::vector<double>& prev) {
        if (client == 2) std::this_thread::sleep_for(Millis(600));
        return prev;
    };
    const auto r = run_simulation(cfg, provider);
    ASSERT_TRUE(r.transcript.aborted());
    EXPECT_EQ(r.transcript.rounds[0].cause, "Timeout");
}

TEST(FedTcp, LoopbackSocketSession) {
    auto cfg = small_config(3, 2, 50, 13);
    const auto ceremony = run_ceremony(cfg);
    const auto dir = std::filesystem::temp_directory_path() / ("hegemony_fed_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    for (const auto& s : ceremony.shares)
        std::ofstream(dir / ("share" + std::to_string(s.index) + ".json")) << threshold::to_json(s).dump();

    TcpListener listener("127.0.0.1:0");
    const std::string address = "127.0.0.1:" + std::to_string(listener.port());
    const auto provider = random_provider(6, 50);
    std::vector<ClientResult> results(3);
    std::vector<std::thread> threads;
    for (std::uint32_t id = 1; id <= 3; ++id)
        threads.emplace_back([&, id] {
            results[id - 1] = connect(address, dir / ("share" + std::to_string(id) + ".json"), provider, Millis(10'000));
        });
    const auto transcript = serve(listener, ceremony.public_key, cfg);
    for (auto& t : threads) t.join();
    std::filesystem::remove_all(dir);

    ASSERT_FALSE(transcript.aborted());
    ASSERT_EQ(transcript.rounds.size(), 2u);
    const auto loop = run_simulation(cfg, provider, {{}, ceremony});
    for (std::size_t t = 0; t < 2; ++t) {
        EXPECT_EQ(transcript.rounds[t].checksum, loop.transcript.rounds[t].checksum);
        for (const auto& r : results) EXPECT_EQ(r.checksums.at(t), transcript.rounds[t].checksum);
    }
}

TEST(FedReplay, ReadsRecordedUpdates) {
    const auto dir = std::filesystem::temp_directory_path() / ("hegemony_replay_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "client2_round1.csv") << "0.5, -1\n2.25\n";
    const auto p = replay_provider(dir);
    EXPECT_EQ(p(2, 1, {}), (std::vector<double>{0.5, -1.0, 2.25}));
    EXPECT_THROW(p(1, 1, {}), Error);
    std::filesystem::remove_all(dir);
}
