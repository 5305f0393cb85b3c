#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "hegemony/packing.hpp"

using namespace hegemony;
using namespace hegemony::packing;

namespace {

PackingConfig small_config() {
    PackingConfig c;
    c.frac_bits = 10;
    c.slot_bits = 32;
    c.shift = 1u << 15;
    c.max_addends = 4;
    return c;
}

}  // namespace

TEST(Pack, ZeroQuantizesToShift) {
    const std::vector<double> w{0.0};
    const auto p = pack(w, small_config(), 64);
    ASSERT_EQ(p.integers.size(), 1u);
    EXPECT_EQ(p.integers[0], 32768);
}

TEST(Pack, HandBitLayout) {
    const std::vector<double> w{1.0, -1.0};
    const auto p = pack(w, small_config(), 64);
    ASSERT_EQ(p.integers.size(), 1u);
    const BigInt expected = BigInt(1024 + 32768) + (BigInt(32768 - 1024) << 32);
    EXPECT_EQ(p.integers[0], expected);
    EXPECT_EQ(p.integers[0], BigInt(33792) + (BigInt(31744) << 32));
}

TEST(Pack, SlotsPerIntegerFollowPlaintextWidth) {
    const PackingConfig c;  // defaults: 48-bit slots
    EXPECT_EQ(slots_per_integer(c, 2046), 42u);
    EXPECT_EQ(slots_per_integer(c, 1022), 21u);
    std::vector<double> w(100, 0.5);
    const auto p = pack(w, c, 1022);
    EXPECT_EQ(p.integers.size(), 5u);
    for (const auto& x : p.integers) EXPECT_LE(bit_length(x), 1022u);
}

TEST(Pack, RoundtripWithinQuantizationBound) {
    auto rng = RandomSource::seeded(1);
    const PackingConfig c;
    std::vector<double> w(10000);
    for (auto& x : w) x = rng.uniform_real(-1.0, 1.0);
    const auto back = unpack(pack(w, c, 1022));
    ASSERT_EQ(back.size(), w.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) worst = std::max(worst, std::fabs(back[i] - w[i]));
    EXPECT_LE(worst, std::ldexp(1.0, -static_cast<int>(c.frac_bits)));
}

TEST(Pack, RoundingIsHalfAwayFromZero) {
    EXPECT_EQ(quantize(0.5 / 1024, 10), 1);
    EXPECT_EQ(quantize(-0.5 / 1024, 10), -1);
    EXPECT_EQ(quantize(1.5 / 1024, 10), 2);
    EXPECT_EQ(quantize(-2.5 / 1024, 10), -3);
}

TEST(Pack, OutOfRangeReportsIndex) {
    const std::vector<double> w{0.1, 0.2, 40.0, 0.3};  // 40 * 2^10 > 2^15
    try {
        pack(w, small_config(), 64);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::WeightOutOfRange);
        ASSERT_TRUE(e.index().has_value());
        EXPECT_EQ(*e.index(), 2u);
    }
    const std::vector<double> nan{NAN};
    EXPECT_THROW(pack(nan, small_config(), 64), Error);
}

TEST(Pack, ConfigValidation) {
    PackingConfig c;
    c.slot_bits = 36;  // 32 value bits + 4 headroom bits + 1 > 36
    EXPECT_THROW(c.validate(), Error);
    c.slot_bits = 37;
    EXPECT_NO_THROW(c.validate());
}

TEST(UnpackSum, SingleAddendIsRoundtrip) {
    const std::vector<double> w{0.25, -0.75, 3.0};
    const auto back = unpack_sum(pack(w, small_config(), 64), 1);
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(back[i], w[i], std::ldexp(1.0, -10));
}

TEST(UnpackSum, AverageOfThreeConstants) {
    const PackingConfig c;
    const std::vector<double> a{0.3}, b{0.6}, d{0.9};
    const auto sum = add(add(pack(a, c, 1022), pack(b, c, 1022)), pack(d, c, 1022));
    const auto avg = unpack_sum(sum, 3);
    ASSERT_EQ(avg.size(), 1u);
    EXPECT_NEAR(avg[0], 0.6, std::ldexp(1.0, -16));
}

TEST(UnpackSum, TooManyAddendsIsOverflow) {
    const auto c = small_config();
    const std::vector<double> w{31.0, -31.0};
    auto sum = pack(w, c, 64);
    for (unsigned k = 1; k <= c.max_addends; ++k) sum = add(sum, pack(w, c, 64));
    try {
        unpack_sum(sum, c.max_addends + 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::OverflowDetected);
    }
    // Claiming fewer addends than were summed exceeds the per-slot bound.
    try {
        unpack_sum(sum, c.max_addends);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::OverflowDetected);
    }
}

TEST(UnpackSum, EndToEndAverageProperty) {
    auto rng = RandomSource::seeded(2);
    const PackingConfig c;
    for (int trial = 0; trial < 40; ++trial) {
        const unsigned k = 1 + static_cast<unsigned>(rng.uniform(c.max_addends));
        const std::size_t len = 1 + rng.uniform(300);
        std::vector<double> mean(len, 0.0);
        PackedWeights sum;
        for (unsigned i = 0; i < k; ++i) {
            std::vector<double> w(len);
            for (auto& x : w) x = rng.uniform_real(-100.0, 100.0);
            for (std::size_t j = 0; j < len; ++j) mean[j] += w[j] / k;
            auto p = pack(w, c, 1022);
            sum = i == 0 ? p : add(sum, p);
        }
        const auto avg = unpack_sum(sum, k);
        for (std::size_t j = 0; j < len; ++j) ASSERT_LE(std::fabs(avg[j] - mean[j]), std::ldexp(1.0, -16));
    }
}

TEST(UnpackSum, SlotIsolationExhaustiveAtEightBitSlots) {
    PackingConfig c;
    c.frac_bits = 0;
    c.slot_bits = 8;
    c.shift = 16;  // values in [-15, 15], shifted fields in [1, 31]
    c.max_addends = 4;
    ASSERT_NO_THROW(c.validate());

    // Three slots per integer; the middle slot sweeps every tuple while the
    // neighbours sit at the extremes, so any carry would show up next door.
    std::vector<PackedWeights> packed;
    for (int v = -15; v <= 15; ++v) {
        const std::vector<double> w{15.0, static_cast<double>(v), -15.0};
        packed.push_back(pack(w, c, 24));
    }
    const int n = static_cast<int>(packed.size());
    for (unsigned k = 1; k <= 4; ++k) {
        std::vector<int> idx(k, 0);
        for (;;) {
            BigInt total = 0;
            int expected_mid = 0;
            for (int i : idx) {
                total += packed[i].integers[0];
                expected_mid += (i - 15) + 16;
            }
            PackedWeights s = packed[0];
            s.integers[0] = total;
            const auto f = unpack_fields(s, k);
            ASSERT_EQ(f[0], k * 31u);
            ASSERT_EQ(f[1], static_cast<std::uint64_t>(expected_mid));
            ASSERT_EQ(f[2], k * 1u);
            std::size_t pos = 0;
            while (pos < k && ++idx[pos] == n) idx[pos++] = 0;
            if (pos == k) break;
        }
    }
}

TEST(Pack, InjectiveOnQuantizedRepresentatives) {
    auto rng = RandomSource::seeded(3);
    const PackingConfig c;
    for (int i = 0; i < 500; ++i) {
        std::vector<double> a(5), b(5);
        for (auto& x : a) x = std::ldexp(static_cast<double>(static_cast<int>(rng.uniform(2001)) - 1000), -16);
        b = a;
        b[rng.uniform(5)] += std::ldexp(1.0, -16);
        EXPECT_NE(pack(a, c, 1022).integers[0], pack(b, c, 1022).integers[0]);
    }
}
