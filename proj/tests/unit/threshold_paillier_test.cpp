#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "hegemony/threshold_paillier.hpp"

using namespace hegemony;
namespace th = hegemony::threshold;

namespace {

th::Ceremony ceremony(std::size_t bits, std::uint32_t l, std::uint64_t seed) {
    auto rng = RandomSource::seeded(seed);
    return th::ceremony_keygen(bits, l, rng);
}

std::vector<th::PartialDecryption> all_partials(const th::Ceremony& c, const th::Ciphertext& ct) {
    std::vector<th::PartialDecryption> out;
    for (const auto& s : c.shares) out.push_back(th::partial_decrypt(s, c.public_key, ct));
    return out;
}

void expect_kind(ErrorKind kind, const std::function<void()>& f) {
    try {
        f();
        FAIL() << "expected " << to_string(kind);
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), kind) << e.what();
    }
}

}  // namespace

TEST(ThresholdCeremony, KeyMaterialShape) {
    const auto c = ceremony(64, 3, 1);
    EXPECT_EQ(c.public_key.delta, 6);
    EXPECT_EQ(c.public_key.l, 3u);
    EXPECT_EQ(c.public_key.threshold, 3u);
    ASSERT_EQ(c.shares.size(), 3u);
    for (std::uint32_t i = 0; i < 3; ++i) {
        EXPECT_EQ(c.shares[i].index, i + 1);
        EXPECT_EQ(c.shares[i].ceremony_id, c.public_key.ceremony_id);
    }
    EXPECT_NO_THROW(mod_inv(c.public_key.theta, c.public_key.n));
}

TEST(ThresholdCeremony, ThreeClientsHundredRandomRoundtrips) {
    const auto c = ceremony(96, 3, 2);
    auto rng = RandomSource::seeded(3);
    for (int i = 0; i < 100; ++i) {
        const BigInt m = random_below(rng, c.public_key.n);
        const auto ct = th::encrypt(c.public_key, m, rng);
        ASSERT_EQ(th::combine(c.public_key, all_partials(c, ct)), m);
    }
}

TEST(ThresholdCeremony, TwoClientsRoundtrip) {
    const auto c = ceremony(64, 2, 4);
    auto rng = RandomSource::seeded(5);
    for (int i = 0; i < 20; ++i) {
        const BigInt m = random_below(rng, c.public_key.n);
        EXPECT_EQ(th::combine(c.public_key, all_partials(c, th::encrypt(c.public_key, m, rng))), m);
    }
    EXPECT_EQ(th::combine(c.public_key, all_partials(c, th::encrypt(c.public_key, 0, rng))), 0);
}

TEST(ThresholdCeremony, AggregateThenDecrypt) {
    const auto c = ceremony(64, 3, 6);
    auto rng = RandomSource::seeded(7);
    BigInt expected = 0;
    auto acc = th::encrypt(c.public_key, 0, rng);
    for (int i = 0; i < 5; ++i) {
        const BigInt m = random_below(rng, c.public_key.n);
        expected = mod(expected + m, c.public_key.n);
        acc = th::add_ct(c.public_key, acc, th::encrypt(c.public_key, m, rng));
    }
    EXPECT_EQ(th::combine(c.public_key, all_partials(c, acc)), expected);
}

TEST(ThresholdCombine, OrderIndependent) {
    const auto c = ceremony(64, 4, 8);
    auto rng = RandomSource::seeded(9);
    const auto ct = th::encrypt(c.public_key, 42, rng);
    auto partials = all_partials(c, ct);
    std::mt19937 shuffle_rng(10);
    for (int i = 0; i < 10; ++i) {
        std::shuffle(partials.begin(), partials.end(), shuffle_rng);
        EXPECT_EQ(th::combine(c.public_key, partials), 42);
    }
}

TEST(ThresholdCombine, PartialsAreDeterministic) {
    const auto c = ceremony(64, 3, 11);
    auto rng = RandomSource::seeded(12);
    const auto ct = th::encrypt(c.public_key, 5, rng);
    EXPECT_EQ(th::partial_decrypt(c.shares[1], c.public_key, ct).value,
              th::partial_decrypt(c.shares[1], c.public_key, ct).value);
}

TEST(ThresholdCombine, EveryStrictSubsetIsRejected) {
    const auto c = ceremony(64, 3, 13);
    auto rng = RandomSource::seeded(14);
    const auto partials = all_partials(c, th::encrypt(c.public_key, 77, rng));
    for (std::size_t drop = 0; drop < 3; ++drop) {
        auto subset = partials;
        subset.erase(subset.begin() + static_cast<long>(drop));
        expect_kind(ErrorKind::IncompleteShareSet, [&] { th::combine(c.public_key, subset); });
        expect_kind(ErrorKind::IncompleteShareSet, [&] { th::combine(c.public_key, {subset[0]}); });
    }
    expect_kind(ErrorKind::IncompleteShareSet, [&] { th::combine(c.public_key, {}); });
    expect_kind(ErrorKind::IncompleteShareSet,
                [&] { th::combine(c.public_key, {partials[0], partials[0], partials[1]}); });
}

TEST(ThresholdCombine, CorruptedPartialIsDetected) {
    const auto c = ceremony(64, 3, 15);
    auto rng = RandomSource::seeded(16);
    for (int trial = 0; trial < 20; ++trial) {
        const BigInt m = random_below(rng, c.public_key.n);
        auto partials = all_partials(c, th::encrypt(c.public_key, m, rng));
        partials[trial % 3].value = random_unit(rng, c.public_key.n_squared);
        try {
            EXPECT_NE(th::combine(c.public_key, partials), m);
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::CombineFailed);
        }
    }
}

TEST(ThresholdCombine, ForeignCiphertextIsKeyMismatch) {
    const auto a = ceremony(64, 2, 17);
    const auto b = ceremony(64, 2, 18);
    auto rng = RandomSource::seeded(19);
    const auto ct = th::encrypt(b.public_key, 1, rng);
    expect_kind(ErrorKind::KeyMismatch, [&] { th::partial_decrypt(a.shares[0], a.public_key, ct); });
}

TEST(ThresholdCeremony, LowerDegreeDecryptsFromSubset) {
    auto rng = RandomSource::seeded(20);
    const auto c = th::ceremony_keygen(64, 4, rng, 1);
    EXPECT_EQ(c.public_key.threshold, 2u);
    const auto ct = th::encrypt(c.public_key, 1234, rng);
    EXPECT_EQ(th::combine(c.public_key, {th::partial_decrypt(c.shares[3], c.public_key, ct),
                                         th::partial_decrypt(c.shares[1], c.public_key, ct)}),
              1234);
}

TEST(ThresholdJson, PublicKeyAndSharesRoundtrip) {
    const auto c = ceremony(64, 3, 21);
    const auto pk = th::public_key_from_json(nlohmann::json::parse(th::to_json(c.public_key).dump()));
    std::vector<th::ThresholdKeyShare> shares;
    for (const auto& s : c.shares) shares.push_back(th::share_from_json(nlohmann::json::parse(th::to_json(s).dump())));
    auto rng = RandomSource::seeded(22);
    const auto ct = th::encrypt(pk, 4321, rng);
    std::vector<th::PartialDecryption> partials;
    for (const auto& s : shares)
        partials.push_back(th::partial_from_json(th::to_json(th::partial_decrypt(s, pk, ct))));
    EXPECT_EQ(th::combine(pk, partials), 4321);
}
