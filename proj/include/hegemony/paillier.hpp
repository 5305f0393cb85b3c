#ifndef HEGEMONY_PAILLIER_HPP
#define HEGEMONY_PAILLIER_HPP

#include <cstdint>
#include <string>
#include <utility>

#include "hegemony/json.hpp"
#include "hegemony/numtheory.hpp"

namespace hegemony::paillier {

/// 64-bit FNV-1a over the hex digits of n; binds ciphertexts to their key.
inline std::uint64_t key_fingerprint(const BigInt& n) {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : to_hex(n)) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

struct PublicKey {
    BigInt n;
    BigInt g;
    BigInt n_squared;
    std::uint64_t fingerprint = 0;

    PublicKey() = default;
    PublicKey(BigInt n_, BigInt g_) : n(std::move(n_)), g(std::move(g_)), n_squared(n * n), fingerprint(key_fingerprint(n)) {}

    bool g_is_n_plus_one() const { return g == n + 1; }
};

struct SecretKey {
    BigInt lambda;
    BigInt mu;  // L(g^lambda mod n^2)^-1 mod n
};

struct Ciphertext {
    BigInt value;
    std::uint64_t key_fingerprint = 0;

    friend bool operator==(const Ciphertext&, const Ciphertext&) = default;
};

/// L(u) = (u - 1) / n, which must divide exactly.
inline BigInt l_function(const BigInt& u, const BigInt& n, ErrorKind on_inexact) {
    BigInt t = u - 1;
    if (!mpz_divisible_p(t.get_mpz_t(), n.get_mpz_t())) fail(on_inexact, "L(u) division is not exact");
    BigInt out;
    mpz_divexact(out.get_mpz_t(), t.get_mpz_t(), n.get_mpz_t());
    return out;
}

inline SecretKey derive_secret(const PublicKey& pk, const BigInt& lambda) {
    const BigInt u = mod_exp(pk.g, lambda, pk.n_squared);
    const BigInt l = l_function(u, pk.n, ErrorKind::InvalidCiphertext);
    return {lambda, mod_inv(l, pk.n)};
}

/// Key pair from explicit primes, with g = n + 1.
inline std::pair<PublicKey, SecretKey> keypair_from_primes(const BigInt& p, const BigInt& q) {
    if (p == q) fail(ErrorKind::FormatError, "p and q must differ");
    const BigInt n = p * q;
    PublicKey pk(n, n + 1);
    return {pk, derive_secret(pk, lcm(p - 1, q - 1))};
}

/// Fresh key pair over two distinct primes of `bits_per_prime` bits each.
inline std::pair<PublicKey, SecretKey> keygen(std::size_t bits_per_prime, RandomSource& rng) {
    if (bits_per_prime < 8) fail(ErrorKind::FormatError, "paillier keygen needs at least 8 bits per prime");
    for (;;) {
        const BigInt p = gen_prime(bits_per_prime, rng);
        const BigInt q = gen_prime(bits_per_prime, rng);
        if (p == q) continue;
        if (gcd(p * q, (p - 1) * (q - 1)) != 1) continue;
        return keypair_from_primes(p, q);
    }
}

/// g^m mod n^2; with g = n + 1 this is 1 + m*n.
inline BigInt g_pow(const PublicKey& pk, const BigInt& m) {
    if (pk.g_is_n_plus_one()) return mod(1 + m * pk.n, pk.n_squared);
    return mod_exp(pk.g, m, pk.n_squared);
}

inline Ciphertext encrypt(const PublicKey& pk, const BigInt& m, RandomSource& rng) {
    if (m < 0 || m >= pk.n) fail(ErrorKind::MessageOutOfRange, "message must lie in [0, n)");
    const BigInt x = random_unit(rng, pk.n);
    const BigInt c = g_pow(pk, m) * mod_exp(x, pk.n, pk.n_squared) % pk.n_squared;
    return {c, pk.fingerprint};
}

inline void check_key(const PublicKey& pk, const Ciphertext& c) {
    if (c.key_fingerprint != pk.fingerprint) fail(ErrorKind::KeyMismatch, "ciphertext was produced under a different key");
}

inline BigInt decrypt(const SecretKey& sk, const PublicKey& pk, const Ciphertext& c) {
    check_key(pk, c);
    if (c.value <= 0 || c.value >= pk.n_squared) fail(ErrorKind::InvalidCiphertext, "ciphertext out of range");
    const BigInt u = mod_exp(c.value, sk.lambda, pk.n_squared);
    return mod(l_function(u, pk.n, ErrorKind::InvalidCiphertext) * sk.mu, pk.n);
}

/// E(m1) * E(m2) = E(m1 + m2).
inline Ciphertext add_ct(const PublicKey& pk, const Ciphertext& a, const Ciphertext& b) {
    check_key(pk, a);
    check_key(pk, b);
    return {a.value * b.value % pk.n_squared, pk.fingerprint};
}

/// E(m)^k = E(k * m).
inline Ciphertext scalar_mul(const PublicKey& pk, const Ciphertext& c, const BigInt& k) {
    check_key(pk, c);
    if (k < 0) fail(ErrorKind::MessageOutOfRange, "scalar must be non-negative");
    return {mod_exp(c.value, k, pk.n_squared), pk.fingerprint};
}

// Canonical JSON: lowercase hex big integers.

inline nlohmann::json to_json(const PublicKey& pk) { return {{"n", to_hex(pk.n)}, {"g", to_hex(pk.g)}}; }

inline nlohmann::json to_json(const SecretKey& sk) { return {{"lambda", to_hex(sk.lambda)}}; }

inline nlohmann::json to_json(const Ciphertext& c) {
    return {{"c", to_hex(c.value)}, {"key", json_u64_hex(c.key_fingerprint)}};
}

inline PublicKey public_key_from_json(const nlohmann::json& j) {
    return PublicKey(from_hex(json_string(j, "n")), from_hex(json_string(j, "g")));
}

inline SecretKey secret_key_from_json(const nlohmann::json& j, const PublicKey& pk) {
    return derive_secret(pk, from_hex(json_string(j, "lambda")));
}

inline Ciphertext ciphertext_from_json(const nlohmann::json& j) {
    return {from_hex(json_string(j, "c")), json_u64_from_hex(json_string(j, "key"))};
}

}  // namespace hegemony::paillier

#endif  // HEGEMONY_PAILLIER_HPP
