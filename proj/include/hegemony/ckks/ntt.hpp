#ifndef HEGEMONY_CKKS_NTT_HPP
#define HEGEMONY_CKKS_NTT_HPP

// Negacyclic number-theoretic transform over Z_q[X]/(X^N + 1). Forward uses
// Cooley-Tukey with bit-reversed powers of a primitive 2N-th root psi, so the
// output at index j is the evaluation at psi^(2 bitrev(j) + 1).

#include <cstddef>
#include <span>
#include <vector>

#include "hegemony/ckks/modarith.hpp"

namespace hegemony::ckks {

inline std::size_t bit_reverse(std::size_t x, unsigned bits) {
    std::size_t r = 0;
    for (unsigned i = 0; i < bits; ++i) {
        r = (r << 1) | (x & 1);
        x >>= 1;
    }
    return r;
}

class NttTables {
public:
    NttTables() = default;
    NttTables(std::size_t n, const Modulus& q) : n_(n), q_(q) {
        if (n < 2 || (n & (n - 1)) != 0) fail(ErrorKind::UnsupportedDegree, "ring degree must be a power of two");
        if ((q.value - 1) % (2 * n) != 0) fail(ErrorKind::UnsupportedDegree, "q is not 1 mod 2N");
        while ((1ull << log_n_) < n) ++log_n_;
        psi_ = find_psi();
        const u64 psi_inv = q.inv(psi_);
        fwd_.resize(n);
        inv_.resize(n);
        u64 p = 1, pi = 1;
        std::vector<u64> pows(n), ipows(n);
        for (std::size_t i = 0; i < n; ++i) {
            pows[i] = p;
            ipows[i] = pi;
            p = q.mul(p, psi_);
            pi = q.mul(pi, psi_inv);
        }
        for (std::size_t i = 0; i < n; ++i) {
            const auto r = bit_reverse(i, log_n_);
            fwd_[i] = ShoupConst(pows[r], q.value);
            inv_[i] = ShoupConst(ipows[r], q.value);
        }
        n_inv_ = ShoupConst(q.inv(n), q.value);
    }

    std::size_t degree() const { return n_; }
    const Modulus& modulus() const { return q_; }
    u64 psi() const { return psi_; }

    void forward(std::span<u64> a) const {
        const u64 q = q_.value;
        std::size_t t = n_;
        for (std::size_t m = 1; m < n_; m <<= 1) {
            t >>= 1;
            for (std::size_t i = 0; i < m; ++i) {
                const auto& w = fwd_[m + i];
                u64* x = a.data() + 2 * i * t;
                u64* y = x + t;
                for (std::size_t j = 0; j < t; ++j) {
                    const u64 u = x[j];
                    const u64 v = mul_shoup(y[j], w, q);
                    const u64 s = u + v;
                    x[j] = s >= q ? s - q : s;
                    y[j] = u >= v ? u - v : u + q - v;
                }
            }
        }
    }

    void inverse(std::span<u64> a) const {
        const u64 q = q_.value;
        std::size_t t = 1;
        for (std::size_t m = n_ >> 1; m >= 1; m >>= 1) {
            for (std::size_t i = 0; i < m; ++i) {
                const auto& w = inv_[m + i];
                u64* x = a.data() + 2 * i * t;
                u64* y = x + t;
                for (std::size_t j = 0; j < t; ++j) {
                    const u64 u = x[j], v = y[j];
                    const u64 s = u + v;
                    x[j] = s >= q ? s - q : s;
                    y[j] = mul_shoup(u >= v ? u - v : u + q - v, w, q);
                }
            }
            t <<= 1;
        }
        for (auto& x : a) x = mul_shoup(x, n_inv_, q);
    }

private:
    u64 find_psi() const {
        // psi = g^((q-1)/2N) for a generator candidate g; accept once psi^N = -1.
        const u64 q = q_.value;
        for (u64 g = 2; g < q; ++g) {
            const u64 psi = q_.pow(g, (q - 1) / (2 * n_));
            if (q_.pow(psi, n_) == q - 1) return psi;
        }
        fail(ErrorKind::UnsupportedDegree, "no primitive 2N-th root of unity");
    }

    std::size_t n_ = 0;
    unsigned log_n_ = 0;
    Modulus q_;
    u64 psi_ = 0;
    std::vector<ShoupConst> fwd_, inv_;
    ShoupConst n_inv_;
};

}  // namespace hegemony::ckks

#endif  // HEGEMONY_CKKS_NTT_HPP
