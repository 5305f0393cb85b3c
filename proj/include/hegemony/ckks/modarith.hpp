#ifndef HEGEMONY_CKKS_MODARITH_HPP
#define HEGEMONY_CKKS_MODARITH_HPP

#include <cstdint>
#include <vector>

#include "hegemony/errors.hpp"

namespace hegemony::ckks {

using u64 = std::uint64_t;
using u128 = unsigned __int128;

/// Word-sized modulus below 2^62 with a precomputed floor(2^128 / q) for
/// Barrett reduction of 128-bit products.
struct Modulus {
    u64 value = 0;
    u64 ratio_lo = 0;
    u64 ratio_hi = 0;

    Modulus() = default;
    explicit Modulus(u64 q) : value(q) {
        // floor(2^128 / q) as two words: long division of (2^128 - 1) by q
        // differs only when q divides 2^128, which never happens for odd q.
        const u128 max = ~u128(0);
        const u128 r = max / q;
        ratio_lo = static_cast<u64>(r);
        ratio_hi = static_cast<u64>(r >> 64);
    }

    u64 reduce128(u128 x) const {
        const u64 lo = static_cast<u64>(x), hi = static_cast<u64>(x >> 64);
        // Only the high word of x * ratio / 2^128 is needed.
        const u128 a = static_cast<u128>(lo) * ratio_lo;
        const u128 b = static_cast<u128>(lo) * ratio_hi;
        const u128 c = static_cast<u128>(hi) * ratio_lo;
        const u128 mid = (a >> 64) + static_cast<u64>(b) + static_cast<u64>(c);
        const u64 quot = hi * ratio_hi + static_cast<u64>(b >> 64) + static_cast<u64>(c >> 64) +
                         static_cast<u64>(mid >> 64);
        u64 r = lo - quot * value;
        if (r >= value) r -= value;
        return r;
    }

    u64 reduce(u64 x) const { return x >= value ? reduce128(x) : x; }
    u64 mul(u64 a, u64 b) const { return reduce128(static_cast<u128>(a) * b); }
    u64 add(u64 a, u64 b) const {
        const u64 s = a + b;
        return s >= value ? s - value : s;
    }
    u64 sub(u64 a, u64 b) const { return a >= b ? a - b : a + value - b; }
    u64 neg(u64 a) const { return a == 0 ? 0 : value - a; }
    /// Residue of a signed value.
    u64 from_signed(std::int64_t x) const {
        if (x >= 0) return reduce(static_cast<u64>(x));
        const u64 r = reduce(static_cast<u64>(-(x + 1)) + 1);
        return neg(r);
    }
    u64 pow(u64 base, u64 e) const {
        u64 acc = 1 % value;
        base = reduce(base);
        while (e) {
            if (e & 1) acc = mul(acc, base);
            base = mul(base, base);
            e >>= 1;
        }
        return acc;
    }
    u64 inv(u64 a) const {
        if (reduce(a) == 0) fail(ErrorKind::NotInvertible, "zero has no inverse");
        return pow(a, value - 2);  // value is prime
    }
};

/// Precomputed multiplier for Shoup's fixed-operand modular multiplication.
struct ShoupConst {
    u64 w = 0;
    u64 w_shoup = 0;
    ShoupConst() = default;
    ShoupConst(u64 w_, u64 q) : w(w_), w_shoup(static_cast<u64>((static_cast<u128>(w_) << 64) / q)) {}
};

inline u64 mul_shoup(u64 a, const ShoupConst& c, u64 q) {
    const u64 hi = static_cast<u64>((static_cast<u128>(a) * c.w_shoup) >> 64);
    u64 r = a * c.w - hi * q;
    return r >= q ? r - q : r;
}

/// Deterministic Miller-Rabin for 64-bit integers.
inline bool is_prime_u64(u64 n) {
    if (n < 2) return false;
    for (u64 p : {2ull, 3ull, 5ull, 7ull, 11ull, 13ull, 17ull, 19ull, 23ull, 29ull, 31ull, 37ull}) {
        if (n % p == 0) return n == p;
    }
    u64 d = n - 1;
    int s = 0;
    while ((d & 1) == 0) {
        d >>= 1;
        ++s;
    }
    auto mulmod = [n](u64 a, u64 b) { return static_cast<u64>(static_cast<u128>(a) * b % n); };
    for (u64 a : {2ull, 3ull, 5ull, 7ull, 11ull, 13ull, 17ull, 19ull, 23ull, 29ull, 31ull, 37ull}) {
        u64 x = 1, base = a % n, e = d;
        while (e) {
            if (e & 1) x = mulmod(x, base);
            base = mulmod(base, base);
            e >>= 1;
        }
        if (x == 1 || x == n - 1) continue;
        bool composite = true;
        for (int r = 1; r < s; ++r) {
            x = mulmod(x, x);
            if (x == n - 1) {
                composite = false;
                break;
            }
        }
        if (composite) return false;
    }
    return true;
}

/// `count` distinct primes q < 2^bits with q = 1 mod `step`, descending from
/// the top of the range, skipping anything in `exclude`.
inline std::vector<u64> primes_congruent_one(unsigned bits, std::size_t count, u64 step,
                                             const std::vector<u64>& exclude = {}) {
    if (bits < 20 || bits > 61) fail(ErrorKind::UnsupportedDegree, "chain primes must have 20..61 bits");
    std::vector<u64> out;
    u64 candidate = ((1ull << bits) - 1) / step * step + 1;
    if (candidate >= (1ull << bits)) candidate -= step;
    const u64 floor = 1ull << (bits - 1);
    while (out.size() < count) {
        if (candidate < floor) fail(ErrorKind::UnsupportedDegree, "not enough NTT-friendly primes");
        bool skip = false;
        for (u64 e : exclude) skip = skip || e == candidate;
        if (!skip && is_prime_u64(candidate)) out.push_back(candidate);
        candidate -= step;
    }
    return out;
}

}  // namespace hegemony::ckks

#endif  // HEGEMONY_CKKS_MODARITH_HPP
