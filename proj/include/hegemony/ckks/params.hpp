#ifndef HEGEMONY_CKKS_PARAMS_HPP
#define HEGEMONY_CKKS_PARAMS_HPP

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "hegemony/ckks/ntt.hpp"
#include "hegemony/json.hpp"

namespace hegemony::ckks {

/// Chain layout: q_0 (base prime, holds the decrypted message), then one
/// prime per level near the scale, then a special prime P for key switching.
struct CkksParams {
    std::size_t ring_degree = 8192;
    std::size_t levels = 5;
    unsigned scale_bits = 40;
    unsigned base_bits = 60;
    unsigned special_bits = 61;
    double sigma = 3.2;

    std::size_t slot_count() const { return ring_degree / 2; }
    double scale() const { return std::ldexp(1.0, static_cast<int>(scale_bits)); }

    void validate() const {
        if (ring_degree < 8 || (ring_degree & (ring_degree - 1)) != 0)
            fail(ErrorKind::UnsupportedDegree, "ring degree must be a power of two >= 8");
        if (levels == 0) fail(ErrorKind::UnsupportedDegree, "need at least one level");
        if (scale_bits >= base_bits || base_bits > special_bits || special_bits > 61)
            fail(ErrorKind::UnsupportedDegree, "need scale < base prime <= special prime <= 2^61");
    }

    nlohmann::json to_json() const {
        return {{"ring_degree", ring_degree}, {"levels", levels},           {"scale_bits", scale_bits},
                {"base_bits", base_bits},     {"special_bits", special_bits}, {"sigma", sigma}};
    }
    static CkksParams from_json(const nlohmann::json& j) {
        CkksParams p;
        p.ring_degree = json_number<std::size_t>(j, "ring_degree");
        p.levels = json_number<std::size_t>(j, "levels");
        p.scale_bits = json_number<unsigned>(j, "scale_bits");
        p.base_bits = json_number<unsigned>(j, "base_bits");
        p.special_bits = json_number<unsigned>(j, "special_bits");
        p.sigma = json_number<double>(j, "sigma");
        return p;
    }
};

/// Immutable per-parameter-set tables: chain primes, NTT tables, Galois
/// permutations of the evaluation domain.
class CkksContext {
public:
    explicit CkksContext(const CkksParams& params) : params_(params) {
        params.validate();
        const std::size_t n = params.ring_degree;
        const u64 step = 2 * n;
        const auto base = primes_congruent_one(params.base_bits, 1, step);
        const auto mids = primes_congruent_one(params.scale_bits, params.levels, step, base);
        std::vector<u64> taken = base;
        taken.insert(taken.end(), mids.begin(), mids.end());
        const auto special = primes_congruent_one(params.special_bits, 1, step, taken);

        std::vector<u64> all = base;
        all.insert(all.end(), mids.begin(), mids.end());
        all.push_back(special[0]);
        for (u64 q : all) {
            moduli_.emplace_back(q);
            ntt_.emplace_back(n, moduli_.back());
        }
        build_exponent_table();
        hash_ = compute_hash();
    }

    const CkksParams& params() const { return params_; }
    std::size_t n() const { return params_.ring_degree; }
    std::size_t max_level() const { return params_.levels; }
    /// Index of the special prime in moduli().
    std::size_t special_index() const { return params_.levels + 1; }
    const std::vector<Modulus>& moduli() const { return moduli_; }
    const Modulus& modulus(std::size_t i) const { return moduli_[i]; }
    const NttTables& ntt(std::size_t i) const { return ntt_[i]; }
    std::uint64_t hash() const { return hash_; }

    /// Galois element realizing a left rotation of the slot vector by k.
    u64 galois_element(long k) const {
        const long slots = static_cast<long>(n() / 2);
        const u64 m = 2 * n();
        u64 e = static_cast<u64>(((k % slots) + slots) % slots);
        u64 g = 1, base = 5;
        while (e) {
            if (e & 1) g = g * base % m;
            base = base * base % m;
            e >>= 1;
        }
        return g;
    }

    /// perm[j] = index whose value moves to j under X -> X^g, valid for
    /// polynomials in evaluation form.
    std::vector<std::uint32_t> galois_permutation(u64 g) const {
        const u64 m = 2 * n();
        std::vector<std::uint32_t> perm(n());
        for (std::size_t j = 0; j < n(); ++j) perm[j] = index_of_exponent_[(g * exponent_[j]) % m];
        return perm;
    }

private:
    void build_exponent_table() {
        // NTT of the monomial X gives psi^e at each index; recover e by lookup.
        const std::size_t nn = n();
        const u64 m = 2 * nn;
        index_of_exponent_.assign(m, UINT32_MAX);
        std::vector<u64> exps;
        for (std::size_t i = 0; i < moduli_.size(); ++i) {
            const auto& q = moduli_[i];
            std::unordered_map<u64, u64> log;
            u64 p = 1;
            for (u64 e = 0; e < m; ++e) {
                log[p] = e;
                p = q.mul(p, ntt_[i].psi());
            }
            std::vector<u64> x(nn, 0);
            x[1] = 1;
            ntt_[i].forward(x);
            std::vector<u64> e(nn);
            for (std::size_t j = 0; j < nn; ++j) e[j] = log.at(x[j]);
            if (i == 0) exps = e;
            else if (e != exps) fail(ErrorKind::UnsupportedDegree, "NTT evaluation order differs across primes");
        }
        exponent_ = exps;
        for (std::size_t j = 0; j < nn; ++j) index_of_exponent_[exponent_[j]] = static_cast<std::uint32_t>(j);
    }

    std::uint64_t compute_hash() const {
        std::uint64_t h = 1469598103934665603ull;
        auto mix = [&h](u64 x) {
            for (int b = 0; b < 8; ++b) {
                h ^= (x >> (8 * b)) & 0xff;
                h *= 1099511628211ull;
            }
        };
        mix(n());
        mix(params_.scale_bits);
        for (const auto& q : moduli_) mix(q.value);
        return h;
    }

    CkksParams params_;
    std::vector<Modulus> moduli_;
    std::vector<NttTables> ntt_;
    std::vector<u64> exponent_;
    std::vector<std::uint32_t> index_of_exponent_;
    std::uint64_t hash_ = 0;
};

}  // namespace hegemony::ckks

#endif  // HEGEMONY_CKKS_PARAMS_HPP
