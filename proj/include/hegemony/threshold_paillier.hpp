#ifndef HEGEMONY_THRESHOLD_PAILLIER_HPP
#define HEGEMONY_THRESHOLD_PAILLIER_HPP

// Threshold Paillier: the decryption exponent beta*n' is Shamir-shared
// among l clients. Each client raises the ciphertext to 2*delta*sk_i; any
// `threshold` partials recombine through integer Lagrange coefficients.

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "hegemony/json.hpp"
#include "hegemony/numtheory.hpp"
#include "hegemony/paillier.hpp"

namespace hegemony::threshold {

using paillier::Ciphertext;

struct ThresholdPublicKey {
    BigInt n;
    BigInt g;
    BigInt n_squared;
    BigInt theta;                // L(g^(beta n') mod n^2) mod n
    std::uint32_t l = 0;         // number of share holders
    std::uint32_t threshold = 0; // partials needed to decrypt; l unless a lower degree was requested
    BigInt delta;                // l!
    std::string ceremony_id;
    std::uint64_t fingerprint = 0;

    paillier::PublicKey as_paillier() const { return paillier::PublicKey(n, g); }
};

struct ThresholdKeyShare {
    std::string ceremony_id;
    std::uint32_t index = 0;
    BigInt sk;  // P(index) mod n n'
};

struct PartialDecryption {
    std::uint32_t index = 0;
    BigInt value;  // c^(2 delta sk_i) mod n^2
};

struct Ceremony {
    ThresholdPublicKey public_key;
    std::vector<ThresholdKeyShare> shares;
};

inline ThresholdPublicKey make_public_key(BigInt n, BigInt g, BigInt theta, std::uint32_t l,
                                          std::uint32_t threshold, std::string ceremony_id) {
    ThresholdPublicKey pk;
    pk.n = std::move(n);
    pk.g = std::move(g);
    pk.n_squared = pk.n * pk.n;
    pk.theta = std::move(theta);
    pk.l = l;
    pk.threshold = threshold;
    pk.delta = factorial(l);
    pk.ceremony_id = std::move(ceremony_id);
    pk.fingerprint = paillier::key_fingerprint(pk.n);
    return pk;
}

inline Ciphertext encrypt(const ThresholdPublicKey& pk, const BigInt& m, RandomSource& rng) {
    if (m < 0 || m >= pk.n) fail(ErrorKind::MessageOutOfRange, "message must lie in [0, n)");
    const BigInt x = random_unit(rng, pk.n);
    const BigInt c = mod_exp(pk.g, m, pk.n_squared) * mod_exp(x, pk.n, pk.n_squared) % pk.n_squared;
    return {c, pk.fingerprint};
}

inline Ciphertext add_ct(const ThresholdPublicKey& pk, const Ciphertext& a, const Ciphertext& b) {
    return paillier::add_ct(pk.as_paillier(), a, b);
}

inline PartialDecryption partial_decrypt(const ThresholdKeyShare& share, const ThresholdPublicKey& pk,
                                         const Ciphertext& c) {
    if (c.key_fingerprint != pk.fingerprint || share.ceremony_id != pk.ceremony_id)
        fail(ErrorKind::KeyMismatch, "share, key and ciphertext belong to different ceremonies");
    return {share.index, mod_exp(c.value, 2 * pk.delta * share.sk, pk.n_squared)};
}

/// Recovers m from `threshold` partial decryptions of one ciphertext. Order
/// of `partials` does not matter. Fewer partials, duplicate or out-of-range
/// indices raise IncompleteShareSet; a corrupted partial raises CombineFailed.
inline BigInt combine(const ThresholdPublicKey& pk, const std::vector<PartialDecryption>& partials) {
    std::set<std::uint32_t> seen;
    for (const auto& p : partials) {
        if (p.index == 0 || p.index > pk.l) fail(ErrorKind::IncompleteShareSet, "partial index out of range");
        if (!seen.insert(p.index).second) fail(ErrorKind::IncompleteShareSet, "duplicate partial index");
    }
    if (seen.size() < pk.threshold)
        fail(ErrorKind::IncompleteShareSet, "need " + std::to_string(pk.threshold) + " partials, got " +
                                                std::to_string(seen.size()));

    std::vector<const PartialDecryption*> used;
    for (const auto& p : partials) used.push_back(&p);
    std::sort(used.begin(), used.end(), [](auto* a, auto* b) { return a->index < b->index; });
    used.resize(pk.threshold);
    std::vector<std::uint32_t> indices;
    for (auto* p : used) indices.push_back(p->index);

    BigInt acc = 1;
    for (auto* p : used) {
        if (p->value <= 0 || p->value >= pk.n_squared) fail(ErrorKind::CombineFailed, "partial out of range");
        const BigInt mu = lagrange_mu(p->index, indices, pk.delta);
        BigInt term;
        try {
            term = mod_exp(p->value, 2 * mu, pk.n_squared);
        } catch (const Error&) {
            fail(ErrorKind::CombineFailed, "partial is not invertible mod n^2");
        }
        acc = acc * term % pk.n_squared;
    }
    const BigInt l_value = paillier::l_function(acc, pk.n, ErrorKind::CombineFailed);
    const BigInt denom = mod(4 * pk.delta * pk.delta * pk.theta, pk.n);
    return mod(l_value * mod_inv(denom, pk.n), pk.n);
}

/// Runs the whole dealer-side key generation for `l` clients.
///
/// p = 2p'+1 and q = 2q'+1 are strong primes, n' = p'q', g = (1+n)^a b^n,
/// theta = L(g^(beta n')). The secret beta*n' is shared mod n*n' with a
/// polynomial of degree `degree` (default l-1). n has exactly
/// 2*bits_per_prime bits. The order of g is not checked
/// algebraically; a roundtrip self-test on a random message stands in for it,
/// and the ceremony restarts if the self-test fails.
inline Ceremony ceremony_keygen(std::size_t bits_per_prime, std::uint32_t l, RandomSource& rng,
                                std::optional<std::size_t> degree = std::nullopt) {
    if (l < 2) fail(ErrorKind::IncompleteShareSet, "threshold ceremony needs at least two clients");
    if (bits_per_prime < 8) fail(ErrorKind::FormatError, "threshold keygen needs at least 8 bits per prime");
    const std::size_t deg = degree.value_or(l - 1);

    for (;;) {
        const StrongPrime sp = gen_strong_prime(bits_per_prime, rng, 200'000'000, true);
        const StrongPrime sq = gen_strong_prime(bits_per_prime, rng, 200'000'000, true);
        if (sp.p == sq.p) continue;
        const BigInt n = sp.p * sq.p;
        const BigInt n_prime = sp.p_half * sq.p_half;
        const BigInt n2 = n * n;
        if (gcd(n, n_prime) != 1) continue;

        const BigInt beta = random_unit(rng, n);
        const BigInt a = random_unit(rng, n);
        const BigInt b = random_unit(rng, n);
        const BigInt g = mod(1 + a * n, n2) * mod_exp(b, n, n2) % n2;
        const BigInt secret = beta * n_prime;

        BigInt theta;
        try {
            theta = mod(paillier::l_function(mod_exp(g, secret, n2), n, ErrorKind::CombineFailed), n);
            mod_inv(theta, n);
        } catch (const Error&) {
            continue;
        }

        const std::string id = json_u64_hex(rng.next_u64());
        Ceremony out{make_public_key(n, g, theta, l, static_cast<std::uint32_t>(deg + 1), id), {}};
        const ShamirShareSet set = shamir_share(secret, l, n * n_prime, rng, deg);
        for (const auto& s : set.shares) out.shares.push_back({id, s.index, s.value});

        const BigInt probe = random_below(rng, n);
        const Ciphertext c = encrypt(out.public_key, probe, rng);
        std::vector<PartialDecryption> partials;
        for (const auto& s : out.shares) partials.push_back(partial_decrypt(s, out.public_key, c));
        try {
            if (combine(out.public_key, partials) == probe) return out;
        } catch (const Error&) {
        }
    }
}

inline nlohmann::json to_json(const ThresholdPublicKey& pk) {
    return {{"ceremony_id", pk.ceremony_id}, {"n", to_hex(pk.n)},       {"g", to_hex(pk.g)},
            {"theta", to_hex(pk.theta)},     {"l", pk.l},               {"threshold", pk.threshold},
            {"delta", to_hex(pk.delta)}};
}

inline ThresholdPublicKey public_key_from_json(const nlohmann::json& j) {
    const auto l = json_number<std::uint32_t>(j, "l");
    const auto threshold = j.contains("threshold") ? json_number<std::uint32_t>(j, "threshold") : l;
    auto pk = make_public_key(from_hex(json_string(j, "n")), from_hex(json_string(j, "g")),
                              from_hex(json_string(j, "theta")), l, threshold, json_string(j, "ceremony_id"));
    if (j.contains("delta") && from_hex(json_string(j, "delta")) != pk.delta)
        fail(ErrorKind::FormatError, "delta does not equal l!");
    if (threshold == 0 || threshold > l) fail(ErrorKind::FormatError, "threshold must be in [1, l]");
    return pk;
}

inline nlohmann::json to_json(const ThresholdKeyShare& s) {
    return {{"ceremony_id", s.ceremony_id}, {"index", s.index}, {"sk_i", to_hex(s.sk)}};
}

inline ThresholdKeyShare share_from_json(const nlohmann::json& j) {
    return {json_string(j, "ceremony_id"), json_number<std::uint32_t>(j, "index"), from_hex(json_string(j, "sk_i"))};
}

inline nlohmann::json to_json(const PartialDecryption& p) { return {{"index", p.index}, {"c_i", to_hex(p.value)}}; }

inline PartialDecryption partial_from_json(const nlohmann::json& j) {
    return {json_number<std::uint32_t>(j, "index"), from_hex(json_string(j, "c_i"))};
}

}  // namespace hegemony::threshold

#endif  // HEGEMONY_THRESHOLD_PAILLIER_HPP
