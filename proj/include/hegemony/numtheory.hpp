#ifndef HEGEMONY_NUMTHEORY_HPP
#define HEGEMONY_NUMTHEORY_HPP

// Arbitrary-precision helpers shared by the Paillier variants and Shamir
// sharing. Big integers are GMP's mpz_class; none of this is constant-time.

#include <gmpxx.h>

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "hegemony/errors.hpp"
#include "hegemony/random.hpp"

namespace hegemony {

using BigInt = mpz_class;

inline std::size_t bit_length(const BigInt& x) {
    return x == 0 ? 0 : mpz_sizeinbase(x.get_mpz_t(), 2);
}

inline std::string to_hex(const BigInt& x) { return x.get_str(16); }

inline BigInt from_hex(const std::string& s) {
    BigInt out;
    if (s.empty() || out.set_str(s, 16) != 0) fail(ErrorKind::FormatError, "bad hex integer '" + s + "'");
    return out;
}

/// Uniform integer with exactly `bits` random bits (top bit not forced).
inline BigInt random_bits(RandomSource& rng, std::size_t bits) {
    BigInt out = 0;
    std::size_t remaining = bits;
    while (remaining > 0) {
        const std::size_t take = std::min<std::size_t>(remaining, 64);
        std::uint64_t word = rng.next_u64();
        if (take < 64) word &= (std::uint64_t{1} << take) - 1;
        out <<= static_cast<mp_bitcnt_t>(take);
        BigInt w;
        mpz_import(w.get_mpz_t(), 1, 1, sizeof(word), 0, 0, &word);
        out += w;
        remaining -= take;
    }
    return out;
}

/// Uniform in [0, bound).
inline BigInt random_below(RandomSource& rng, const BigInt& bound) {
    if (bound <= 0) fail(ErrorKind::FormatError, "random_below: bound must be positive");
    const std::size_t bits = bit_length(bound);
    BigInt x;
    do {
        x = random_bits(rng, bits);
    } while (x >= bound);
    return x;
}

/// Uniform element of Z_n^* represented in [1, n).
inline BigInt random_unit(RandomSource& rng, const BigInt& n) {
    BigInt x, g;
    do {
        x = random_below(rng, n);
        mpz_gcd(g.get_mpz_t(), x.get_mpz_t(), n.get_mpz_t());
    } while (x == 0 || g != 1);
    return x;
}

inline BigInt mod(const BigInt& a, const BigInt& m) {
    BigInt r;
    mpz_mod(r.get_mpz_t(), a.get_mpz_t(), m.get_mpz_t());
    return r;
}

inline BigInt gcd(const BigInt& a, const BigInt& b) {
    BigInt g;
    mpz_gcd(g.get_mpz_t(), a.get_mpz_t(), b.get_mpz_t());
    return g;
}

inline BigInt lcm(const BigInt& a, const BigInt& b) {
    BigInt l;
    mpz_lcm(l.get_mpz_t(), a.get_mpz_t(), b.get_mpz_t());
    return l;
}

/// b with a*b = 1 (mod modulus). Throws NotInvertible when gcd(a, modulus) != 1.
inline BigInt mod_inv(const BigInt& a, const BigInt& modulus) {
    BigInt out;
    if (modulus <= 1 || mpz_invert(out.get_mpz_t(), a.get_mpz_t(), modulus.get_mpz_t()) == 0)
        fail(ErrorKind::NotInvertible, "element shares a factor with the modulus");
    return out;
}

/// base^exp mod modulus. A negative exponent inverts the base first.
inline BigInt mod_exp(const BigInt& base, const BigInt& exp, const BigInt& modulus) {
    BigInt out;
    if (exp < 0) {
        const BigInt inv = mod_inv(base, modulus);
        const BigInt pos = -exp;
        mpz_powm(out.get_mpz_t(), inv.get_mpz_t(), pos.get_mpz_t(), modulus.get_mpz_t());
    } else {
        mpz_powm(out.get_mpz_t(), base.get_mpz_t(), exp.get_mpz_t(), modulus.get_mpz_t());
    }
    return out;
}

namespace detail {

inline const std::vector<std::uint32_t>& small_primes() {
    static const std::vector<std::uint32_t> primes = [] {
        constexpr std::uint32_t limit = 1u << 16;
        std::vector<bool> composite(limit, false);
        std::vector<std::uint32_t> out;
        for (std::uint32_t i = 2; i < limit; ++i) {
            if (composite[i]) continue;
            out.push_back(i);
            for (std::uint64_t j = std::uint64_t{i} * i; j < limit; j += i) composite[j] = true;
        }
        return out;
    }();
    return primes;
}

inline bool miller_rabin_round(const BigInt& n, const BigInt& d, unsigned r, const BigInt& a) {
    const BigInt n_minus_1 = n - 1;
    BigInt x = mod_exp(a, d, n);
    if (x == 1 || x == n_minus_1) return true;
    for (unsigned i = 1; i < r; ++i) {
        x = x * x % n;
        if (x == n_minus_1) return true;
        if (x == 1) return false;
    }
    return false;
}

}  // namespace detail

/// Trial division by every prime below 2^16, then `rounds` Miller-Rabin rounds
/// with random bases. Exact for n < 2^32.
inline bool is_probable_prime(const BigInt& n, RandomSource& rng, unsigned rounds = 40) {
    if (n < 2) return false;
    for (std::uint32_t p : detail::small_primes()) {
        if (n == p) return true;
        if (mpz_divisible_ui_p(n.get_mpz_t(), p)) return false;
    }
    if (bit_length(n) <= 32) return true;

    BigInt d = n - 1;
    unsigned r = 0;
    while (mpz_even_p(d.get_mpz_t())) {
        d >>= 1;
        ++r;
    }
    const BigInt span = n - 3;
    for (unsigned i = 0; i < rounds; ++i) {
        const BigInt a = random_below(rng, span) + 2;
        if (!detail::miller_rabin_round(n, d, r, a)) return false;
    }
    return true;
}

/// Random prime with exactly `bits` bits and its two top bits set, so the
/// product of two such primes has exactly 2*bits bits.
inline BigInt gen_prime(std::size_t bits, RandomSource& rng) {
    if (bits < 4) fail(ErrorKind::FormatError, "gen_prime: need at least 4 bits");
    for (;;) {
        BigInt c = random_bits(rng, bits);
        mpz_setbit(c.get_mpz_t(), bits - 1);
        mpz_setbit(c.get_mpz_t(), bits - 2);
        mpz_setbit(c.get_mpz_t(), 0);
        if (is_probable_prime(c, rng)) return c;
    }
}

/// p = 2 * p_half + 1 with both prime.
struct StrongPrime {
    BigInt p;
    BigInt p_half;
};

/// Random strong prime with exactly `bits` bits.
///
/// Samples p' first and tests 2p'+1. Above 24 bits candidates come from a
/// sieved window: offsets where p' or 2p'+1 has a factor below 2^16 are struck
/// before any modular exponentiation. `attempt_budget` bounds the number of
/// candidates examined; exceeding it raises Timeout. With `top_two_bits` the
/// two leading bits of p are set, so a product of two such primes has exactly
/// 2*bits bits.
inline StrongPrime gen_strong_prime(std::size_t bits, RandomSource& rng,
                                    std::uint64_t attempt_budget = 200'000'000, bool top_two_bits = false) {
    if (bits < 3 || (top_two_bits && bits < 8)) fail(ErrorKind::FormatError, "gen_strong_prime: too few bits");
    const std::size_t half_bits = bits - 1;
    const BigInt lo = top_two_bits ? BigInt(3) << static_cast<mp_bitcnt_t>(half_bits - 2)
                                   : BigInt(1) << static_cast<mp_bitcnt_t>(half_bits - 1);
    const BigInt hi = BigInt(1) << static_cast<mp_bitcnt_t>(half_bits);
    std::uint64_t attempts = 0;

    auto accept = [&](const BigInt& q) -> bool {
        const BigInt p = 2 * q + 1;
        if (bit_length(p) != bits) return false;
        // A single base-2 Fermat test on p screens most survivors cheaply.
        if (bit_length(p) > 32 && mod_exp(2, p - 1, p) != 1) return false;
        return is_probable_prime(q, rng) && is_probable_prime(p, rng);
    };

    if (half_bits <= 24) {
        for (;;) {
            if (++attempts > attempt_budget) fail(ErrorKind::Timeout, "strong prime search exhausted its budget");
            const BigInt q = lo + random_below(rng, hi - lo);
            if (accept(q)) return {2 * q + 1, q};
        }
    }

    const auto& primes = detail::small_primes();
    constexpr std::size_t window = 1u << 15;  // candidates q = start + 2t, t < window
    std::vector<char> struck(window);
    for (;;) {
        BigInt start = lo + random_below(rng, hi - lo);
        mpz_setbit(start.get_mpz_t(), 0);
        std::fill(struck.begin(), struck.end(), 0);
        for (std::size_t k = 1; k < primes.size(); ++k) {  // skip 2; candidates are odd
            const std::uint64_t s = primes[k];
            const std::uint64_t r = mpz_fdiv_ui(start.get_mpz_t(), s);
            const std::uint64_t inv2 = (s + 1) / 2;
            // q = start + 2t is struck when q = 0 or q = (s-1)/2 (mod s), the
            // latter making 2q+1 divisible by s.
            for (std::uint64_t target : {std::uint64_t{0}, (s - 1) / 2}) {
                std::uint64_t t = ((target + s - r) % s) * inv2 % s;
                for (; t < window; t += s) struck[t] = 1;
            }
        }
        for (std::size_t t = 0; t < window; ++t) {
            if (struck[t]) continue;
            if (++attempts > attempt_budget) fail(ErrorKind::Timeout, "strong prime search exhausted its budget");
            const BigInt q = start + 2 * static_cast<unsigned long>(t);
            if (q >= hi) break;
            if (accept(q)) return {2 * q + 1, q};
        }
    }
}

/// One Shamir share: the polynomial evaluated at `index`.
struct ShamirShare {
    std::uint32_t index = 0;
    BigInt value;
};

struct ShamirShareSet {
    std::vector<ShamirShare> shares;
    std::size_t degree = 0;
    BigInt modulus;
};

/// Shares `secret` among `l` parties as P(1..l) mod `modulus`, where P has
/// P(0) = secret and uniformly random higher coefficients. The polynomial
/// degree defaults to l-1, so every share is needed to reconstruct.
inline ShamirShareSet shamir_share(const BigInt& secret, std::size_t l, const BigInt& modulus,
                                   RandomSource& rng, std::optional<std::size_t> degree = std::nullopt) {
    if (l < 2) fail(ErrorKind::IncompleteShareSet, "shamir_share needs at least two parties");
    const std::size_t deg = degree.value_or(l - 1);
    if (deg == 0 || deg >= l) fail(ErrorKind::IncompleteShareSet, "polynomial degree must be in [1, l-1]");
    if (secret < 0 || secret >= modulus) fail(ErrorKind::MessageOutOfRange, "secret must lie in [0, modulus)");

    std::vector<BigInt> coeffs{secret};
    for (std::size_t i = 1; i <= deg; ++i) coeffs.push_back(random_below(rng, modulus));

    ShamirShareSet out{{}, deg, modulus};
    for (std::uint32_t x = 1; x <= l; ++x) {
        BigInt acc = 0;
        for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = mod(acc * x + *it, modulus);
        out.shares.push_back({x, acc});
    }
    return out;
}

inline BigInt factorial(std::size_t l) {
    BigInt out;
    mpz_fac_ui(out.get_mpz_t(), l);
    return out;
}

/// delta * prod_{j' in indices, j' != j} j' / (j' - j), exact. delta must be
/// a multiple of every denominator (l! always is when indices are within 1..l).
inline BigInt lagrange_mu(std::uint32_t j, std::span<const std::uint32_t> indices, const BigInt& delta) {
    BigInt num = delta;
    BigInt den = 1;
    for (std::uint32_t other : indices) {
        if (other == j) continue;
        num *= other;
        den *= static_cast<long>(other) - static_cast<long>(j);
    }
    if (!mpz_divisible_p(num.get_mpz_t(), den.get_mpz_t()))
        fail(ErrorKind::CombineFailed, "lagrange coefficient is not integral for this delta");
    BigInt out;
    mpz_divexact(out.get_mpz_t(), num.get_mpz_t(), den.get_mpz_t());
    return out;
}

/// mu_j over the full index set 1..l with delta = l!.
inline BigInt lagrange_mu(std::uint32_t j, std::size_t l) {
    std::vector<std::uint32_t> all(l);
    for (std::size_t i = 0; i < l; ++i) all[i] = static_cast<std::uint32_t>(i + 1);
    return lagrange_mu(j, all, factorial(l));
}

/// Recovers P(0) mod modulus from the first degree+1 shares. Requires the
/// integer Lagrange denominators to be invertible mod modulus.
inline BigInt shamir_reconstruct(const ShamirShareSet& set) {
    const std::size_t need = set.degree + 1;
    if (set.shares.size() < need) fail(ErrorKind::IncompleteShareSet, "not enough shares to reconstruct");
    std::vector<std::uint32_t> idx;
    std::set<std::uint32_t> seen;
    for (std::size_t i = 0; i < need; ++i) {
        const auto x = set.shares[i].index;
        if (x == 0 || !seen.insert(x).second) fail(ErrorKind::IncompleteShareSet, "share indices must be distinct and non-zero");
        idx.push_back(x);
    }
    const std::uint32_t max_index = *std::max_element(idx.begin(), idx.end());
    const BigInt delta = factorial(max_index);
    BigInt acc = 0;
    for (std::size_t i = 0; i < need; ++i)
        acc = mod(acc + lagrange_mu(idx[i], idx, delta) * set.shares[i].value, set.modulus);
    return mod(acc * mod_inv(delta, set.modulus), set.modulus);
}

}  // namespace hegemony

#endif  // HEGEMONY_NUMTHEORY_HPP
