#ifndef HEGEMONY_CKKS_CKKS_HPP
#define HEGEMONY_CKKS_CKKS_HPP

// Leveled RLWE backend in residue-number-system form. Ciphertexts (c1, c2)
// decrypt as c2 - c1*s and live in evaluation (NTT) form at all times; a
// ciphertext at level l carries residues for q_0..q_l. Key switching uses one
// digit per chain prime and the special prime P (hybrid with dnum = l+1).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "hegemony/ckks/encoder.hpp"
#include "hegemony/ckks/params.hpp"
#include "hegemony/he/backend.hpp"
#include "hegemony/parallel.hpp"
#include "hegemony/random.hpp"

namespace hegemony::ckks {

/// k residue rows of n words each.
struct RnsPoly {
    std::size_t n = 0;
    std::size_t k = 0;
    std::vector<u64> data;

    RnsPoly() = default;
    RnsPoly(std::size_t n_, std::size_t k_) : n(n_), k(k_), data(n_ * k_, 0) {}
    u64* row(std::size_t i) { return data.data() + i * n; }
    const u64* row(std::size_t i) const { return data.data() + i * n; }
    std::span<u64> span(std::size_t i) { return {row(i), n}; }
    /// First `rows` residues only (dropping higher chain primes).
    RnsPoly truncated(std::size_t rows) const {
        RnsPoly p(n, rows);
        std::copy(data.begin(), data.begin() + static_cast<long>(rows * n), p.data.begin());
        return p;
    }
};

struct CtData {
    RnsPoly c1, c2;
    double scale = 1.0;
};

struct SecretKey {
    RnsPoly s;  // all chain primes plus P, evaluation form
};

struct PublicKey {
    RnsPoly a, b;  // b = a*s + e over the chain primes
};

/// Encryptions of P * s' under s, one pair per chain prime (digit).
struct SwitchKey {
    std::vector<RnsPoly> a, b;
};

struct EvalKeys {
    SwitchKey relin;
    std::map<u64, SwitchKey> galois;  // keyed by Galois element
};

struct KeyBundle {
    SecretKey secret;
    PublicKey pub;
    std::shared_ptr<const EvalKeys> eval;
};

namespace detail {

inline RnsPoly ternary_poly(const CkksContext& ctx, std::size_t rows, bool with_special, RandomSource& rng) {
    const std::size_t n = ctx.n();
    const std::size_t k = rows + (with_special ? 1 : 0);
    RnsPoly p(n, k);
    std::vector<int> coeff(n);
    for (auto& c : coeff) c = static_cast<int>(rng.uniform(3)) - 1;
    for (std::size_t r = 0; r < k; ++r) {
        const std::size_t pi = r < rows ? r : ctx.special_index();
        const auto& q = ctx.modulus(pi);
        u64* dst = p.row(r);
        for (std::size_t j = 0; j < n; ++j) dst[j] = q.from_signed(coeff[j]);
        ctx.ntt(pi).forward(p.span(r));
    }
    return p;
}

inline RnsPoly gaussian_poly(const CkksContext& ctx, std::size_t rows, bool with_special, RandomSource& rng) {
    const std::size_t n = ctx.n();
    const std::size_t k = rows + (with_special ? 1 : 0);
    const double sigma = ctx.params().sigma;
    const double bound = 6.0 * sigma;
    std::vector<std::int64_t> coeff(n);
    for (auto& c : coeff) {
        double x;
        do {
            x = rng.normal(sigma);
        } while (std::fabs(x) > bound);
        c = static_cast<std::int64_t>(std::llround(x));
    }
    RnsPoly p(n, k);
    for (std::size_t r = 0; r < k; ++r) {
        const std::size_t pi = r < rows ? r : ctx.special_index();
        const auto& q = ctx.modulus(pi);
        u64* dst = p.row(r);
        for (std::size_t j = 0; j < n; ++j) dst[j] = q.from_signed(coeff[j]);
        ctx.ntt(pi).forward(p.span(r));
    }
    return p;
}

inline RnsPoly uniform_poly(const CkksContext& ctx, std::size_t rows, bool with_special, RandomSource& rng) {
    const std::size_t n = ctx.n();
    const std::size_t k = rows + (with_special ? 1 : 0);
    RnsPoly p(n, k);
    for (std::size_t r = 0; r < k; ++r) {
        const std::size_t pi = r < rows ? r : ctx.special_index();
        const u64 q = ctx.modulus(pi).value;
        u64* dst = p.row(r);
        for (std::size_t j = 0; j < n; ++j) dst[j] = rng.uniform(q);
    }
    return p;
}

/// Switching key from s' (evaluation form over all primes) to s.
inline SwitchKey make_switch_key(const CkksContext& ctx, const RnsPoly& s, const RnsPoly& s_prime,
                                 RandomSource& rng) {
    const std::size_t chain = ctx.max_level() + 1;
    const std::size_t k = chain + 1;
    const std::size_t n = ctx.n();
    const u64 big_p = ctx.modulus(ctx.special_index()).value;
    SwitchKey key;
    for (std::size_t i = 0; i < chain; ++i) {
        RnsPoly a = uniform_poly(ctx, chain, true, rng);
        RnsPoly b = gaussian_poly(ctx, chain, true, rng);
        for (std::size_t r = 0; r < k; ++r) {
            const auto& q = ctx.modulus(r);
            u64* br = b.row(r);
            const u64* ar = a.row(r);
            const u64* sr = s.row(r);
            for (std::size_t j = 0; j < n; ++j) br[j] = q.add(br[j], q.mul(ar[j], sr[j]));
            if (r == i) {
                const u64 pm = q.reduce(big_p);
                const u64* spr = s_prime.row(r);
                for (std::size_t j = 0; j < n; ++j) br[j] = q.add(br[j], q.mul(pm, spr[j]));
            }
        }
        key.a.push_back(std::move(a));
        key.b.push_back(std::move(b));
    }
    return key;
}

}  // namespace detail

/// Keys for a context: secret, public, relinearization, and one Galois key
/// per distinct rotation step (steps equal mod slot count share a key).
inline KeyBundle generate_keys(const CkksContext& ctx, std::span<const long> rotation_steps, RandomSource& rng) {
    const std::size_t chain = ctx.max_level() + 1;
    const std::size_t k = chain + 1;
    const std::size_t n = ctx.n();
    KeyBundle out;
    out.secret.s = detail::ternary_poly(ctx, chain, true, rng);
    const RnsPoly& s = out.secret.s;

    out.pub.a = detail::uniform_poly(ctx, chain, false, rng);
    out.pub.b = detail::gaussian_poly(ctx, chain, false, rng);
    for (std::size_t r = 0; r < chain; ++r) {
        const auto& q = ctx.modulus(r);
        for (std::size_t j = 0; j < n; ++j)
            out.pub.b.row(r)[j] = q.add(out.pub.b.row(r)[j], q.mul(out.pub.a.row(r)[j], s.row(r)[j]));
    }

    auto eval = std::make_shared<EvalKeys>();
    RnsPoly s2(n, k);
    for (std::size_t r = 0; r < k; ++r) {
        const auto& q = ctx.modulus(r);
        for (std::size_t j = 0; j < n; ++j) s2.row(r)[j] = q.mul(s.row(r)[j], s.row(r)[j]);
    }
    eval->relin = detail::make_switch_key(ctx, s, s2, rng);

    for (long step : rotation_steps) {
        const u64 g = ctx.galois_element(step);
        if (g == 1 || eval->galois.count(g)) continue;
        const auto perm = ctx.galois_permutation(g);
        RnsPoly sg(n, k);
        for (std::size_t r = 0; r < k; ++r)
            for (std::size_t j = 0; j < n; ++j) sg.row(r)[j] = s.row(r)[perm[j]];
        eval->galois.emplace(g, detail::make_switch_key(ctx, s, sg, rng));
    }
    out.eval = std::move(eval);
    return out;
}

class CkksBackend {
public:
    struct Payload {
        std::shared_ptr<const CtData> ct;
    };
    using Vector = he::HeVector<Payload>;
    struct Plain {
        RnsPoly poly;  // evaluation form, primes 0..level
        std::size_t level = 0;
        double scale = 1.0;
        he::IntervalSet support;
    };

    /// Evaluation-only backend: can encrypt and compute, cannot decrypt.
    CkksBackend(std::shared_ptr<const CkksContext> ctx, PublicKey pub, std::shared_ptr<const EvalKeys> eval,
                RandomSource rng = RandomSource::secure())
        : ctx_(std::move(ctx)), encoder_(ctx_->n()), pub_(std::move(pub)), eval_(std::move(eval)),
          rng_(std::make_shared<Rng>(std::move(rng))) {
        precompute();
    }

    CkksBackend(std::shared_ptr<const CkksContext> ctx, const KeyBundle& keys,
                RandomSource rng = RandomSource::secure())
        : CkksBackend(std::move(ctx), keys.pub, keys.eval, std::move(rng)) {
        secret_ = keys.secret;
    }

    CkksBackend(const CkksBackend& o)
        : ctx_(o.ctx_), encoder_(o.encoder_), pub_(o.pub_), eval_(o.eval_), secret_(o.secret_), rng_(o.rng_),
          inv_p_(o.inv_p_), inv_q_(o.inv_q_), perms_(o.perms_) {}

    const CkksContext& context() const { return *ctx_; }
    std::shared_ptr<const CkksContext> context_ptr() const { return ctx_; }
    const Encoder& encoder() const { return encoder_; }
    std::size_t slot_count() const { return ctx_->n() / 2; }
    std::size_t max_level() const { return ctx_->max_level(); }
    bool can_decrypt() const { return secret_.has_value(); }
    bool has_rotation(long k) const {
        const u64 g = ctx_->galois_element(k);
        return g == 1 || eval_->galois.count(g) > 0;
    }

    Vector encrypt_vec(std::span<const double> values) const {
        if (values.size() > slot_count()) fail(ErrorKind::TooManyValues, "more values than slots");
        const double scale = ctx_->params().scale();
        const double limit = static_cast<double>(ctx_->modulus(0).value) / 2.0 / scale;
        for (double v : values)
            if (!(std::fabs(v) < limit)) fail(ErrorKind::ScaleOverflow, "value exceeds the representable range");
        const std::size_t level = max_level();
        const std::size_t rows = level + 1;
        RnsPoly m = encode_rows(values, scale, rows);

        RnsPoly u, e1, e2;
        {
            std::lock_guard lock(rng_->mutex);
            u = detail::ternary_poly(*ctx_, rows, false, rng_->rng);
            e1 = detail::gaussian_poly(*ctx_, rows, false, rng_->rng);
            e2 = detail::gaussian_poly(*ctx_, rows, false, rng_->rng);
        }
        auto ct = std::make_shared<CtData>();
        ct->c1 = RnsPoly(ctx_->n(), rows);
        ct->c2 = RnsPoly(ctx_->n(), rows);
        ct->scale = scale;
        for (std::size_t r = 0; r < rows; ++r) {
            const auto& q = ctx_->modulus(r);
            for (std::size_t j = 0; j < ctx_->n(); ++j) {
                const u64 uj = u.row(r)[j];
                ct->c1.row(r)[j] = q.add(q.mul(pub_.a.row(r)[j], uj), e1.row(r)[j]);
                ct->c2.row(r)[j] = q.add(q.add(q.mul(pub_.b.row(r)[j], uj), e2.row(r)[j]), m.row(r)[j]);
            }
        }
        return {{std::move(ct)}, slot_count(), level, he::SlotLayout::prefix(values.size())};
    }

    /// Plaintext for multiplication at `level`, encoded at scale q_level so the
    /// ciphertext scale is unchanged after rescaling.
    Plain encode_plain(std::span<const double> values, std::size_t level) const {
        if (level == 0 || level > max_level()) fail(ErrorKind::BudgetExhausted, "no level left for a plaintext product");
        const double scale = static_cast<double>(ctx_->modulus(level).value);
        return {encode_rows(values, scale, level + 1), level, scale, he::IntervalSet::nonzero(values)};
    }

    Vector add(const Vector& a, const Vector& b) const {
        ++counts_.add;
        const std::size_t level = std::min(a.level, b.level);
        const auto& x = *a.payload.ct;
        const auto& y = *b.payload.ct;
        check_scales(x.scale, y.scale);
        auto ct = std::make_shared<CtData>();
        ct->c1 = RnsPoly(ctx_->n(), level + 1);
        ct->c2 = RnsPoly(ctx_->n(), level + 1);
        ct->scale = x.scale;
        for (std::size_t r = 0; r <= level; ++r) {
            const auto& q = ctx_->modulus(r);
            for (std::size_t j = 0; j < ctx_->n(); ++j) {
                ct->c1.row(r)[j] = q.add(x.c1.row(r)[j], y.c1.row(r)[j]);
                ct->c2.row(r)[j] = q.add(x.c2.row(r)[j], y.c2.row(r)[j]);
            }
        }
        return {{std::move(ct)}, slot_count(), level, he::layout_after_add(a.layout, b.layout)};
    }

    Vector add_plain(const Vector& a, std::span<const double> values) const {
        const auto& x = *a.payload.ct;
        const std::size_t rows = a.level + 1;
        const RnsPoly m = encode_rows(values, x.scale, rows);
        auto ct = std::make_shared<CtData>(x);
        for (std::size_t r = 0; r < rows; ++r) {
            const auto& q = ctx_->modulus(r);
            for (std::size_t j = 0; j < ctx_->n(); ++j) ct->c2.row(r)[j] = q.add(ct->c2.row(r)[j], m.row(r)[j]);
        }
        he::SlotLayout layout = a.layout;
        layout.support = layout.support.unite(he::IntervalSet::nonzero(values));
        layout.valid = layout.valid.unite(he::IntervalSet::nonzero(values));
        return {{std::move(ct)}, slot_count(), a.level, std::move(layout)};
    }

    Vector mul_plain(const Vector& a, std::span<const double> values) const {
        he::require_level(a.level, "mul_plain");
        return mul_plain(a, encode_plain(values, a.level));
    }

    Vector mul_plain(const Vector& a, const Plain& p) const {
        const std::pair<const Vector*, const Plain*> term{&a, &p};
        Vector out = dot_plain(std::span(&term, 1));
        out.layout = {a.layout.valid, a.layout.support.intersect(p.support), a.layout.pending_scale,
                      a.layout.pending_mask};
        return out;
    }

    /// sum_i x_i * p_i with one rescale; products accumulate lazily in 128 bits.
    Vector dot_plain(std::span<const std::pair<const Vector*, const Plain*>> terms) const {
        if (terms.empty()) fail(ErrorKind::LayoutMismatch, "dot_plain needs at least one term");
        std::size_t level = terms[0].first->level;
        for (auto [v, p] : terms) level = std::min(level, v->level);
        he::require_level(level, "dot_plain");
        const double scale = terms[0].first->payload.ct->scale;
        for (auto [v, p] : terms) {
            check_scales(scale, v->payload.ct->scale);
            if (p->level != level) fail(ErrorKind::LayoutMismatch, "plaintext encoded for a different level");
        }
        counts_.mul_plain += terms.size();
        const std::size_t n = ctx_->n();
        const std::size_t rows = level + 1;
        RnsPoly c1(n, rows), c2(n, rows);
        std::vector<u128> acc1(n), acc2(n);
        constexpr std::size_t kLazy = 32;  // 32 products of < 2^122 stay below 2^127
        for (std::size_t r = 0; r < rows; ++r) {
            const auto& q = ctx_->modulus(r);
            std::fill(acc1.begin(), acc1.end(), 0);
            std::fill(acc2.begin(), acc2.end(), 0);
            std::size_t pending = 0;
            for (auto [v, p] : terms) {
                const u64* x1 = v->payload.ct->c1.row(r);
                const u64* x2 = v->payload.ct->c2.row(r);
                const u64* pr = p->poly.row(r);
                for (std::size_t j = 0; j < n; ++j) {
                    acc1[j] += static_cast<u128>(x1[j]) * pr[j];
                    acc2[j] += static_cast<u128>(x2[j]) * pr[j];
                }
                if (++pending == kLazy) {
                    for (std::size_t j = 0; j < n; ++j) {
                        acc1[j] = q.reduce128(acc1[j]);
                        acc2[j] = q.reduce128(acc2[j]);
                    }
                    pending = 0;
                }
            }
            u64* o1 = c1.row(r);
            u64* o2 = c2.row(r);
            for (std::size_t j = 0; j < n; ++j) {
                o1[j] = q.reduce128(acc1[j]);
                o2[j] = q.reduce128(acc2[j]);
            }
        }
        auto ct = std::make_shared<CtData>();
        ct->c1 = rescale(c1, level);
        ct->c2 = rescale(c2, level);
        ct->scale = scale;  // product scale is scale * q_level, divided back out

        he::IntervalSet support;
        for (auto [v, p] : terms) support = support.unite(v->layout.support.intersect(p->support));
        const auto& first = terms[0].first->layout;
        return {{std::move(ct)}, slot_count(), level - 1, {support, support, first.pending_scale, first.pending_mask}};
    }

    Vector square(const Vector& a) const {
        he::require_level(a.level, "square");
        he::require_no_pending_scale(a.layout, "square");
        ++counts_.square;
        const std::size_t level = a.level;
        const std::size_t rows = level + 1;
        const std::size_t n = ctx_->n();
        const auto& x = *a.payload.ct;
        RnsPoly d0(n, rows), d1(n, rows), d2(n, rows);
        for (std::size_t r = 0; r < rows; ++r) {
            const auto& q = ctx_->modulus(r);
            const u64* c1 = x.c1.row(r);
            const u64* c2 = x.c2.row(r);
            for (std::size_t j = 0; j < n; ++j) {
                d0.row(r)[j] = q.mul(c2[j], c2[j]);
                const u64 m = q.mul(c1[j], c2[j]);
                d1.row(r)[j] = q.add(m, m);
                d2.row(r)[j] = q.mul(c1[j], c1[j]);
            }
        }
        const auto digits = decompose(d2, level);
        auto [u, v] = key_switch(digits, eval_->relin, level, nullptr);
        for (std::size_t r = 0; r < rows; ++r) {
            const auto& q = ctx_->modulus(r);
            for (std::size_t j = 0; j < n; ++j) {
                d0.row(r)[j] = q.add(d0.row(r)[j], v.row(r)[j]);
                d1.row(r)[j] = q.add(d1.row(r)[j], u.row(r)[j]);
            }
        }
        auto ct = std::make_shared<CtData>();
        ct->c1 = rescale(d1, level);
        ct->c2 = rescale(d0, level);
        ct->scale = x.scale * x.scale / static_cast<double>(ctx_->modulus(level).value);
        return {{std::move(ct)}, slot_count(), level - 1, a.layout};
    }

    Vector rotate(const Vector& a, long k) const {
        const long steps[1] = {k};
        return std::move(rotate_many(a, steps).front());
    }

    /// Hoisted rotations: c1 is decomposed once, each step then costs one
    /// permuted inner product and a ModDown.
    std::vector<Vector> rotate_many(const Vector& a, std::span<const long> steps) const {
        const std::size_t level = a.level;
        const std::size_t rows = level + 1;
        const std::size_t n = ctx_->n();
        const auto& x = *a.payload.ct;
        std::vector<const SwitchKey*> keys(steps.size(), nullptr);
        bool any = false;
        for (std::size_t i = 0; i < steps.size(); ++i) {
            const u64 g = ctx_->galois_element(steps[i]);
            if (g == 1) continue;
            auto key_it = eval_->galois.find(g);
            if (key_it == eval_->galois.end())
                fail(ErrorKind::KeyMismatch, "no Galois key for rotation step " + std::to_string(steps[i]));
            keys[i] = &key_it->second;
            any = true;
        }
        counts_.rotate += steps.size();
        std::vector<RnsPoly> digits;
        if (any) digits = decompose(x.c1, level);
        std::vector<Vector> out(steps.size());
        parallel_for(steps.size(), [&](std::size_t i) {
            const long k = steps[i];
            if (!keys[i]) {
                out[i] = {a.payload, slot_count(), level, a.layout.rotated(k, slot_count())};
                return;
            }
            const auto& perm = permutation(ctx_->galois_element(k));
            auto [u, v] = key_switch(digits, *keys[i], level, &perm);
            auto ct = std::make_shared<CtData>();
            ct->c1 = RnsPoly(n, rows);
            ct->c2 = RnsPoly(n, rows);
            ct->scale = x.scale;
            for (std::size_t r = 0; r < rows; ++r) {
                const auto& q = ctx_->modulus(r);
                const u64* c2 = x.c2.row(r);
                for (std::size_t j = 0; j < n; ++j) {
                    ct->c2.row(r)[j] = q.sub(c2[perm[j]], v.row(r)[j]);
                    ct->c1.row(r)[j] = q.neg(u.row(r)[j]);
                }
            }
            out[i] = {{std::move(ct)}, slot_count(), level, a.layout.rotated(k, slot_count())};
        });
        return out;
    }

    std::vector<double> decrypt_vec(const Vector& a) const {
        if (!secret_) fail(ErrorKind::KeyMismatch, "backend holds no secret key");
        const auto& x = *a.payload.ct;
        const std::size_t n = ctx_->n();
        const auto& q = ctx_->modulus(0);
        std::vector<u64> m(n);
        const u64* s = secret_->s.row(0);
        for (std::size_t j = 0; j < n; ++j) m[j] = q.sub(x.c2.row(0)[j], q.mul(x.c1.row(0)[j], s[j]));
        ctx_->ntt(0).inverse(m);
        std::vector<double> coeffs(n);
        const u64 half = q.value / 2;
        for (std::size_t j = 0; j < n; ++j)
            coeffs[j] = m[j] > half ? -static_cast<double>(q.value - m[j]) : static_cast<double>(m[j]);
        return encoder_.decode(coeffs, x.scale);
    }

    he::OpCounts counts() const {
        return {counts_.mul_plain.load(), counts_.square.load(), counts_.rotate.load(), counts_.add.load()};
    }

private:
    struct Rng {
        explicit Rng(RandomSource r) : rng(std::move(r)) {}
        std::mutex mutex;
        RandomSource rng;
    };

    struct AtomicCounts {
        std::atomic<std::uint64_t> mul_plain{0}, square{0}, rotate{0}, add{0};
    };

    void precompute() {
        const std::size_t chain = max_level() + 1;
        const u64 big_p = ctx_->modulus(ctx_->special_index()).value;
        inv_p_.resize(chain);
        inv_q_.assign(chain, std::vector<ShoupConst>(chain));
        for (std::size_t t = 0; t < chain; ++t) {
            const auto& q = ctx_->modulus(t);
            inv_p_[t] = ShoupConst(q.inv(q.reduce(big_p)), q.value);
            for (std::size_t l = t + 1; l < chain; ++l)
                inv_q_[l][t] = ShoupConst(q.inv(q.reduce(ctx_->modulus(l).value)), q.value);
        }
        auto perms = std::make_shared<std::map<u64, std::vector<std::uint32_t>>>();
        for (const auto& [g, key] : eval_->galois) perms->emplace(g, ctx_->galois_permutation(g));
        perms_ = std::move(perms);
    }

    const std::vector<std::uint32_t>& permutation(u64 g) const { return perms_->at(g); }

    void check_scales(double a, double b) const {
        if (std::fabs(a - b) > 1e-9 * std::fabs(a)) fail(ErrorKind::ScaleMismatch, "ciphertext scales differ");
    }

    RnsPoly encode_rows(std::span<const double> values, double scale, std::size_t rows) const {
        const auto coeffs = encoder_.encode(values, scale);
        const std::size_t n = ctx_->n();
        RnsPoly p(n, rows);
        for (std::size_t r = 0; r < rows; ++r) {
            const auto& q = ctx_->modulus(r);
            u64* dst = p.row(r);
            for (std::size_t j = 0; j < n; ++j) dst[j] = q.from_signed(coeffs[j]);
            ctx_->ntt(r).forward(p.span(r));
        }
        return p;
    }

    /// Divide by q_level with rounding; input in evaluation form over primes
    /// 0..level, output over 0..level-1.
    RnsPoly rescale(const RnsPoly& in, std::size_t level) const {
        const std::size_t n = ctx_->n();
        std::vector<u64> last(in.row(level), in.row(level) + n);
        ctx_->ntt(level).inverse(last);
        const u64 ql = ctx_->modulus(level).value;
        RnsPoly out(n, level);
        std::vector<u64> tmp(n);
        for (std::size_t t = 0; t < level; ++t) {
            const auto& q = ctx_->modulus(t);
            const u64 ql_mod = q.reduce(ql);
            for (std::size_t j = 0; j < n; ++j) {
                const u64 v = last[j];
                tmp[j] = v > ql / 2 ? q.sub(q.reduce(v), ql_mod) : q.reduce(v);
            }
            ctx_->ntt(t).forward(tmp);
            const u64* src = in.row(t);
            u64* dst = out.row(t);
            for (std::size_t j = 0; j < n; ++j) dst[j] = mul_shoup(q.sub(src[j], tmp[j]), inv_q_[level][t], q.value);
        }
        return out;
    }

    /// Digits of d (evaluation form, primes 0..level): digit i is the residue
    /// mod q_i lifted to primes 0..level and P (row level+1).
    std::vector<RnsPoly> decompose(const RnsPoly& d, std::size_t level) const {
        const std::size_t n = ctx_->n();
        const std::size_t rows = level + 1;
        std::vector<RnsPoly> digits;
        digits.reserve(rows);
        std::vector<u64> coeff(n);
        for (std::size_t i = 0; i < rows; ++i) {
            RnsPoly digit(n, rows + 1);
            std::copy(d.row(i), d.row(i) + n, coeff.begin());
            ctx_->ntt(i).inverse(coeff);
            for (std::size_t t = 0; t <= rows; ++t) {
                const std::size_t pi = t < rows ? t : ctx_->special_index();
                u64* dst = digit.row(t);
                if (t == i) {
                    std::copy(d.row(i), d.row(i) + n, dst);
                    continue;
                }
                const auto& q = ctx_->modulus(pi);
                for (std::size_t j = 0; j < n; ++j) dst[j] = q.reduce(coeff[j]);
                ctx_->ntt(pi).forward(digit.span(t));
            }
            digits.push_back(std::move(digit));
        }
        return digits;
    }

    /// Inner product of (optionally permuted) digits with a switching key,
    /// followed by division by P. Returns (u, v) with v - u*s ~ d * s'.
    std::pair<RnsPoly, RnsPoly> key_switch(const std::vector<RnsPoly>& digits, const SwitchKey& key,
                                           std::size_t level, const std::vector<std::uint32_t>* perm) const {
        const std::size_t n = ctx_->n();
        const std::size_t rows = level + 1;
        RnsPoly u(n, rows + 1), v(n, rows + 1);
        std::vector<u128> acc_u(n), acc_v(n);
        for (std::size_t t = 0; t <= rows; ++t) {
            const std::size_t pi = t < rows ? t : ctx_->special_index();
            const auto& q = ctx_->modulus(pi);
            std::fill(acc_u.begin(), acc_u.end(), 0);
            std::fill(acc_v.begin(), acc_v.end(), 0);
            for (std::size_t i = 0; i < rows; ++i) {
                const u64* dg = digits[i].row(t);
                const u64* ka = key.a[i].row(pi);
                const u64* kb = key.b[i].row(pi);
                if (perm) {
                    const auto* p = perm->data();
                    for (std::size_t j = 0; j < n; ++j) {
                        const u64 x = dg[p[j]];
                        acc_u[j] += static_cast<u128>(x) * ka[j];
                        acc_v[j] += static_cast<u128>(x) * kb[j];
                    }
                } else {
                    for (std::size_t j = 0; j < n; ++j) {
                        acc_u[j] += static_cast<u128>(dg[j]) * ka[j];
                        acc_v[j] += static_cast<u128>(dg[j]) * kb[j];
                    }
                }
                if ((i + 1) % 32 == 0) {
                    for (std::size_t j = 0; j < n; ++j) {
                        acc_u[j] = q.reduce128(acc_u[j]);
                        acc_v[j] = q.reduce128(acc_v[j]);
                    }
                }
            }
            for (std::size_t j = 0; j < n; ++j) {
                u.row(t)[j] = q.reduce128(acc_u[j]);
                v.row(t)[j] = q.reduce128(acc_v[j]);
            }
        }
        return {mod_down(u, level), mod_down(v, level)};
    }

    RnsPoly mod_down(const RnsPoly& x, std::size_t level) const {
        const std::size_t n = ctx_->n();
        const std::size_t rows = level + 1;
        const std::size_t sp = ctx_->special_index();
        std::vector<u64> last(x.row(rows), x.row(rows) + n);
        ctx_->ntt(sp).inverse(last);
        const u64 big_p = ctx_->modulus(sp).value;
        RnsPoly out(n, rows);
        std::vector<u64> tmp(n);
        for (std::size_t t = 0; t < rows; ++t) {
            const auto& q = ctx_->modulus(t);
            const u64 p_mod = q.reduce(big_p);
            for (std::size_t j = 0; j < n; ++j) {
                const u64 w = last[j];
                tmp[j] = w > big_p / 2 ? q.sub(q.reduce(w), p_mod) : q.reduce(w);
            }
            ctx_->ntt(t).forward(tmp);
            const u64* src = x.row(t);
            u64* dst = out.row(t);
            for (std::size_t j = 0; j < n; ++j) dst[j] = mul_shoup(q.sub(src[j], tmp[j]), inv_p_[t], q.value);
        }
        return out;
    }

    std::shared_ptr<const CkksContext> ctx_;
    Encoder encoder_;
    PublicKey pub_;
    std::shared_ptr<const EvalKeys> eval_;
    std::optional<SecretKey> secret_;
    std::shared_ptr<Rng> rng_;
    std::vector<ShoupConst> inv_p_;
    std::vector<std::vector<ShoupConst>> inv_q_;
    std::shared_ptr<const std::map<u64, std::vector<std::uint32_t>>> perms_;
    mutable AtomicCounts counts_;
};

static_assert(he::HeBackend<CkksBackend>);

}  // namespace hegemony::ckks

#endif  // HEGEMONY_CKKS_CKKS_HPP
