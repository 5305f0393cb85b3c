#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <sstream>
#include <vector>

#include "hegemony/ckks/serialize.hpp"

using namespace hegemony;
using namespace hegemony::ckks;

namespace {

bool trial_division_prime(u64 n) {
    if (n < 2) return false;
    for (u64 d = 2; d * d <= n; ++d)
        if (n % d == 0) return false;
    return true;
}

// Schoolbook product in Z_q[X]/(X^n + 1).
std::vector<u64> negacyclic_schoolbook(const std::vector<u64>& a, const std::vector<u64>& b, u64 q) {
    const std::size_t n = a.size();
    std::vector<u64> c(n, 0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const u64 prod = static_cast<u64>(static_cast<u128>(a[i]) * b[j] % q);
            const std::size_t k = i + j;
            if (k < n) c[k] = (c[k] + prod) % q;
            else c[k - n] = (c[k - n] + q - prod) % q;
        }
    return c;
}

// Canonical embedding by direct evaluation: slot j = m(zeta^(5^j)) / scale.
std::vector<std::complex<double>> embedding_oracle(const std::vector<double>& m, double scale) {
    const std::size_t n = m.size();
    const std::size_t slots = n / 2;
    std::vector<std::complex<double>> out(slots);
    std::size_t five = 1;
    for (std::size_t j = 0; j < slots; ++j) {
        std::complex<double> acc = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double ang = M_PI * static_cast<double>((five * i) % (2 * n)) / static_cast<double>(n);
            acc += m[i] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        out[j] = acc / scale;
        five = five * 5 % (2 * n);
    }
    return out;
}

std::shared_ptr<const CkksContext> context(std::size_t n, std::size_t levels) {
    CkksParams p;
    p.ring_degree = n;
    p.levels = levels;
    return std::make_shared<const CkksContext>(p);
}

double max_err(const std::vector<double>& a, const std::vector<double>& b, std::size_t len) {
    double e = 0.0;
    for (std::size_t i = 0; i < len; ++i) e = std::max(e, std::fabs(a[i] - b[i]));
    return e;
}

}  // namespace

TEST(ModArith, BarrettMatchesWideDivision) {
    auto rng = RandomSource::seeded(1);
    for (u64 q : std::vector<u64>{97, 65537, (1ull << 40) - 87, (1ull << 61) - 1, (1ull << 60) - 93}) {
        const Modulus m(q);
        for (int i = 0; i < 20000; ++i) {
            const u64 a = rng.uniform(q), b = rng.uniform(q);
            ASSERT_EQ(m.mul(a, b), static_cast<u64>(static_cast<u128>(a) * b % q));
            const u128 wide = (static_cast<u128>(rng.next_u64() % q) << 64) | rng.next_u64();
            ASSERT_EQ(m.reduce128(wide), static_cast<u64>(wide % q));
        }
        EXPECT_EQ(m.mul(m.inv(12345 % q == 0 ? 2 : 12345), 12345 % q == 0 ? 2 : 12345), 1u % q);
        EXPECT_EQ(m.from_signed(-1), q - 1);
        EXPECT_EQ(m.from_signed(INT64_MIN), static_cast<u64>((static_cast<__int128>(INT64_MIN) % q + q) % q));
    }
}

TEST(ModArith, ShoupMatchesDirect) {
    auto rng = RandomSource::seeded(2);
    const u64 q = (1ull << 50) - 27;
    for (int i = 0; i < 10000; ++i) {
        const u64 w = rng.uniform(q), a = rng.uniform(q);
        ASSERT_EQ(mul_shoup(a, ShoupConst(w, q), q), static_cast<u64>(static_cast<u128>(a) * w % q));
    }
}

TEST(ModArith, DeterministicPrimality) {
    for (u64 n = 0; n < 200000; ++n) ASSERT_EQ(is_prime_u64(n), trial_division_prime(n)) << n;
    EXPECT_TRUE(is_prime_u64((1ull << 61) - 1));
    EXPECT_FALSE(is_prime_u64(3215031751ull));  // strong pseudoprime to bases 2, 3, 5, 7
    EXPECT_FALSE(is_prime_u64(((1ull << 31) - 1) * ((1ull << 31) - 1)));
}

TEST(ModArith, ChainPrimesAreNttFriendly) {
    const auto ps = primes_congruent_one(40, 6, 2 * 8192);
    ASSERT_EQ(ps.size(), 6u);
    for (u64 p : ps) {
        EXPECT_TRUE(is_prime_u64(p));
        EXPECT_EQ(p % (2 * 8192), 1u);
        EXPECT_LT(p, 1ull << 40);
        EXPECT_GE(p, 1ull << 39);
    }
}

TEST(Ntt, RoundtripIsExact) {
    auto rng = RandomSource::seeded(3);
    for (std::size_t n : {8u, 64u, 1024u, 8192u}) {
        const Modulus q(primes_congruent_one(50, 1, 2 * n)[0]);
        const NttTables t(n, q);
        std::vector<u64> a(n);
        for (auto& x : a) x = rng.uniform(q.value);
        auto b = a;
        t.forward(b);
        t.inverse(b);
        ASSERT_EQ(a, b) << n;
    }
}

TEST(Ntt, ConvolutionMatchesSchoolbook) {
    auto rng = RandomSource::seeded(4);
    for (std::size_t n : {4u, 8u, 16u, 32u, 64u}) {
        for (unsigned bits : {30u, 45u, 61u}) {
            const Modulus q(primes_congruent_one(bits, 1, 2 * n)[0]);
            const NttTables t(n, q);
            for (int trial = 0; trial < 5; ++trial) {
                std::vector<u64> a(n), b(n);
                for (auto& x : a) x = rng.uniform(q.value);
                for (auto& x : b) x = rng.uniform(q.value);
                const auto expected = negacyclic_schoolbook(a, b, q.value);
                auto fa = a, fb = b;
                t.forward(fa);
                t.forward(fb);
                for (std::size_t i = 0; i < n; ++i) fa[i] = q.mul(fa[i], fb[i]);
                t.inverse(fa);
                ASSERT_EQ(fa, expected) << "n=" << n << " bits=" << bits;
            }
        }
    }
}

TEST(Ntt, NonPowerOfTwoRejected) {
    try {
        CkksParams p;
        p.ring_degree = 1000;
        CkksContext ctx(p);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::UnsupportedDegree);
    }
}

TEST(Encoder, DecodeMatchesCanonicalEmbeddingOracle) {
    auto rng = RandomSource::seeded(5);
    for (std::size_t n : {8u, 16u, 64u, 256u}) {
        const Encoder enc(n);
        std::vector<double> m(n);
        for (auto& x : m) x = std::round(rng.uniform_real(-1000.0, 1000.0));
        const auto oracle = embedding_oracle(m, 64.0);
        std::vector<Encoder::cd> u(n / 2);
        for (std::size_t i = 0; i < n / 2; ++i) u[i] = Encoder::cd(m[i] / 64.0, m[i + n / 2] / 64.0);
        enc.special_fft(u);
        for (std::size_t j = 0; j < n / 2; ++j) {
            ASSERT_NEAR(u[j].real(), oracle[j].real(), 1e-8) << n;
            ASSERT_NEAR(u[j].imag(), oracle[j].imag(), 1e-8) << n;
        }
    }
}

TEST(Encoder, EncodeInvertsEmbedding) {
    auto rng = RandomSource::seeded(6);
    const std::size_t n = 64;
    const Encoder enc(n);
    std::vector<double> v(n / 2);
    for (auto& x : v) x = rng.uniform_real(-1.0, 1.0);
    const double scale = std::ldexp(1.0, 30);
    const auto coeffs = enc.encode(v, scale);
    std::vector<double> m(coeffs.begin(), coeffs.end());
    const auto oracle = embedding_oracle(m, scale);
    for (std::size_t j = 0; j < n / 2; ++j) {
        EXPECT_NEAR(oracle[j].real(), v[j], 1e-7);
        EXPECT_NEAR(oracle[j].imag(), 0.0, 1e-7);
    }
}

TEST(Encoder, ZerosUnitAndRandomRoundtrip) {
    const Encoder enc(8192);
    const double scale = std::ldexp(1.0, 40);
    auto decode = [&](const std::vector<std::int64_t>& c) {
        std::vector<double> d(c.begin(), c.end());
        return enc.decode(d, scale);
    };
    const auto zeros = decode(enc.encode(std::vector<double>(4096, 0.0), scale));
    for (double x : zeros) ASSERT_EQ(x, 0.0);

    const auto unit = decode(enc.encode(std::vector<double>{1.0}, scale));
    EXPECT_NEAR(unit[0], 1.0, 1e-9);
    for (std::size_t i = 1; i < unit.size(); ++i) ASSERT_NEAR(unit[i], 0.0, 1e-9);

    auto rng = RandomSource::seeded(7);
    std::vector<double> v(4096);
    for (auto& x : v) x = rng.uniform_real(-1.0, 1.0);
    EXPECT_LT(max_err(decode(enc.encode(v, scale)), v, v.size()), 1e-6);
}

TEST(Encoder, ScaleOverflowRaised) {
    const Encoder enc(16);
    try {
        enc.encode(std::vector<double>{1e9}, std::ldexp(1.0, 60));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::ScaleOverflow);
    }
}

TEST(Galois, PermutationMatchesCoefficientAutomorphism) {
    auto ctx = context(64, 1);
    auto rng = RandomSource::seeded(8);
    const std::size_t n = ctx->n();
    const auto& q = ctx->modulus(0);
    for (long k : {1L, 3L, -1L, 7L}) {
        const u64 g = ctx->galois_element(k);
        std::vector<u64> a(n);
        for (auto& x : a) x = rng.uniform(q.value);
        // X^i -> X^(g i mod 2n), negated when the exponent wraps past n.
        std::vector<u64> expected(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t e = static_cast<std::size_t>(g * i % (2 * n));
            if (e < n) expected[e] = q.add(expected[e], a[i]);
            else expected[e - n] = q.sub(expected[e - n], a[i]);
        }
        auto fa = a;
        ctx->ntt(0).forward(fa);
        const auto perm = ctx->galois_permutation(g);
        std::vector<u64> permuted(n);
        for (std::size_t j = 0; j < n; ++j) permuted[j] = fa[perm[j]];
        ctx->ntt(0).inverse(permuted);
        ASSERT_EQ(permuted, expected) << k;
    }
}

TEST(CkksBackendTest, PublicKeyErrorIsSmall) {
    auto ctx = context(1024, 2);
    auto rng = RandomSource::seeded(9);
    const auto keys = generate_keys(*ctx, {}, rng);
    const auto& q = ctx->modulus(0);
    std::vector<u64> e(ctx->n());
    for (std::size_t j = 0; j < ctx->n(); ++j)
        e[j] = q.sub(keys.pub.b.row(0)[j], q.mul(keys.pub.a.row(0)[j], keys.secret.s.row(0)[j]));
    ctx->ntt(0).inverse(e);
    for (u64 x : e) {
        const double c = x > q.value / 2 ? -static_cast<double>(q.value - x) : static_cast<double>(x);
        ASSERT_LE(std::fabs(c), 6.0 * 3.2 + 1);
    }
}

class CkksDefault : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        ctx_ = context(8192, 5);
        auto rng = RandomSource::seeded(10);
        const std::vector<long> steps{1, 5, -3};
        keys_ = new KeyBundle(generate_keys(*ctx_, steps, rng));
    }
    static void TearDownTestSuite() {
        delete keys_;
        ctx_.reset();
    }
    CkksBackend backend() const { return CkksBackend(ctx_, *keys_, RandomSource::seeded(11)); }
    static std::vector<double> randoms(std::uint64_t seed) {
        auto rng = RandomSource::seeded(seed);
        std::vector<double> v(4096);
        for (auto& x : v) x = rng.uniform_real(-1.0, 1.0);
        return v;
    }

    static inline std::shared_ptr<const CkksContext> ctx_;
    static inline KeyBundle* keys_ = nullptr;
};

TEST_F(CkksDefault, DefaultsGiveFourThousandSlotsAndFiveLevels) {
    const auto b = backend();
    EXPECT_EQ(b.slot_count(), 4096u);
    EXPECT_EQ(b.max_level(), 5u);
    EXPECT_EQ(ctx_->moduli().size(), 7u);
    for (const auto& q : ctx_->moduli()) EXPECT_EQ(q.value % 16384, 1u);
}

TEST_F(CkksDefault, AddWithinOneEMinusFour) {
    const auto b = backend();
    const auto v = randoms(12), w = randoms(13);
    const auto d = b.decrypt_vec(b.add(b.encrypt_vec(v), b.encrypt_vec(w)));
    double e = 0;
    for (std::size_t i = 0; i < v.size(); ++i) e = std::max(e, std::fabs(d[i] - (v[i] + w[i])));
    EXPECT_LT(e, 1e-4);
}

TEST_F(CkksDefault, SquareRelativeErrorBelowOneEMinusThree) {
    const auto b = backend();
    const auto v = randoms(14);
    const auto d = b.decrypt_vec(b.square(b.encrypt_vec(v)));
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = v[i] * v[i];
        ASSERT_LE(std::fabs(d[i] - x), 1e-3 * std::max(std::fabs(x), 1e-3)) << i;
    }
}

TEST_F(CkksDefault, RotateFiveMatchesShift) {
    const auto b = backend();
    const auto v = randoms(15);
    const auto d = b.decrypt_vec(b.rotate(b.encrypt_vec(v), 5));
    double e = 0;
    for (std::size_t i = 0; i < v.size(); ++i) e = std::max(e, std::fabs(d[i] - v[(i + 5) % 4096]));
    EXPECT_LT(e, 1e-4);
}

TEST_F(CkksDefault, MissingGaloisKeyIsReported) {
    const auto b = backend();
    try {
        b.rotate(b.encrypt_vec(std::vector<double>{1.0}), 2);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::KeyMismatch);
    }
}

TEST_F(CkksDefault, NoiseGrowsMonotonicallyThenRaises) {
    const auto b = backend();
    auto v = randoms(16);
    auto c = b.encrypt_vec(v);
    double previous = 0.0;
    for (std::size_t d = 1; d <= b.max_level(); ++d) {
        c = b.square(c);
        for (auto& x : v) x = x * x;
        const auto dec = b.decrypt_vec(c);
        double e = 0;
        for (std::size_t i = 0; i < v.size(); ++i) e = std::max(e, std::fabs(dec[i] - v[i]));
        EXPECT_GE(e, previous) << "depth " << d;
        EXPECT_LT(e, 1e-3);
        previous = e;
    }
    try {
        b.square(c);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::BudgetExhausted);
    }
}

TEST_F(CkksDefault, EvaluationOnlyBackendCannotDecrypt) {
    const CkksBackend eval_only(ctx_, keys_->pub, keys_->eval, RandomSource::seeded(17));
    const auto c = eval_only.encrypt_vec(std::vector<double>{0.25});
    EXPECT_FALSE(eval_only.can_decrypt());
    EXPECT_THROW(eval_only.decrypt_vec(c), Error);
    EXPECT_NEAR(backend().decrypt_vec(c)[0], 0.25, 1e-6);
}

TEST_F(CkksDefault, CiphertextAndKeySerializationRoundtrip) {
    const auto b = backend();
    const auto v = randoms(18);
    auto c = b.rotate(b.mul_plain(b.encrypt_vec(v), v), 1);
    std::stringstream ss;
    write_ciphertext(ss, *ctx_, c);
    const auto back = read_ciphertext(ss, *ctx_);
    EXPECT_EQ(back.level, c.level);
    EXPECT_EQ(back.layout, c.layout);
    EXPECT_EQ(back.payload.ct->c1.data, c.payload.ct->c1.data);
    EXPECT_EQ(b.decrypt_vec(back), b.decrypt_vec(c));

    std::stringstream keys;
    write_secret_key(keys, *ctx_, keys_->secret);
    write_public_key(keys, *ctx_, keys_->pub);
    write_eval_keys(keys, *ctx_, *keys_->eval);
    KeyBundle loaded;
    loaded.secret = read_secret_key(keys, *ctx_);
    loaded.pub = read_public_key(keys, *ctx_);
    loaded.eval = std::make_shared<EvalKeys>(read_eval_keys(keys, *ctx_));
    const CkksBackend b2(ctx_, loaded, RandomSource::seeded(19));
    EXPECT_NEAR(b2.decrypt_vec(b2.rotate(b2.encrypt_vec(v), -3))[3], v[0], 1e-5);

    std::stringstream bad("HCT2garbage");
    EXPECT_THROW(read_ciphertext(bad, *ctx_), Error);
}

TEST(CkksParamsTest, ForeignParametersRejected) {
    auto a = context(1024, 2);
    auto b = context(1024, 3);
    auto rng = RandomSource::seeded(20);
    const auto keys = generate_keys(*a, {}, rng);
    const CkksBackend backend(a, keys, RandomSource::seeded(21));
    std::stringstream ss;
    write_ciphertext(ss, *a, backend.encrypt_vec(std::vector<double>{1.0}));
    try {
        read_ciphertext(ss, *b);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::KeyMismatch);
    }
}
