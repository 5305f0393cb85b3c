#ifndef HEGEMONY_VERIFY_HPP
#define HEGEMONY_VERIFY_HPP

// Acceptance checks shared by the `verify` subcommand and the acceptance
// test binary. Each check returns one Outcome; none of them throws.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hegemony/ckks/ckks.hpp"
#include "hegemony/enc_tensor.hpp"
#include "hegemony/fed/simulation.hpp"
#include "hegemony/he/simulator.hpp"
#include "hegemony/model.hpp"
#include "hegemony/paillier.hpp"
#include "hegemony/threshold_paillier.hpp"

namespace hegemony::verify {

struct Outcome {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0;
};

struct Options {
    std::uint64_t seed = 1;
    bool full_size_threshold = true;  // also run the 1024-bit-per-prime ceremony
};

inline std::string format_line(const Outcome& o) {
    std::ostringstream s;
    s << (o.pass ? "PASS" : "FAIL") << " [" << o.id << "] " << o.name << ": " << o.detail << " ("
      << std::fixed << std::setprecision(1) << o.seconds << " s)";
    return s.str();
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

/// Runs `body`, which fills `detail` and returns pass/fail; exceptions fail.
inline Outcome run(int id, std::string name, const std::function<bool(std::string&)>& body) {
    Outcome o{id, std::move(name), false, {}, 0};
    const auto t0 = Clock::now();
    try {
        o.pass = body(o.detail);
    } catch (const std::exception& e) {
        o.pass = false;
        o.detail += (o.detail.empty() ? "" : "; ") + std::string("unexpected error: ") + e.what();
    }
    o.seconds = since(t0);
    return o;
}

inline std::string fmt(double v, int precision = 2) {
    std::ostringstream s;
    s << std::setprecision(precision) << v;
    return s.str();
}

inline std::string secs(double v) { return fmt(v, 3) + " s"; }

template <class F>
std::optional<Error> error_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e;
    }
    return std::nullopt;
}

// ---- independent plaintext oracles (nested loops over the definitions)

inline std::vector<double> matmul(const Matrix& a, const std::vector<double>& x) {
    std::vector<double> y(a.size(), 0.0);
    for (std::size_t r = 0; r < a.size(); ++r)
        for (std::size_t c = 0; c < a[r].size(); ++c) y[r] += a[r][c] * x[c];
    return y;
}

inline Tensor conv(const Tensor& img, const tensor::ConvFilters& f) {
    const std::size_t kh = f.weights.dim(0), kw = f.weights.dim(1), cin = f.weights.dim(2), cout = f.weights.dim(3);
    const std::size_t s = f.stride;
    const std::size_t oh = (img.dim(0) - kh) / s + 1, ow = (img.dim(1) - kw) / s + 1;
    Tensor out({oh, ow, cout});
    for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t x = 0; x < ow; ++x)
            for (std::size_t k = 0; k < cout; ++k) {
                double acc = f.bias.empty() ? 0.0 : f.bias[k];
                for (std::size_t j = 0; j < kh; ++j)
                    for (std::size_t t = 0; t < kw; ++t)
                        for (std::size_t c = 0; c < cin; ++c) acc += img(i * s + j, x * s + t, c) * f.weights(j, t, c, k);
                out(i, x, k) = acc;
            }
    return out;
}

inline std::vector<double> channel_sums(const Tensor& img) {
    std::vector<double> s(img.dim(2), 0.0);
    for (std::size_t y = 0; y < img.dim(0); ++y)
        for (std::size_t x = 0; x < img.dim(1); ++x)
            for (std::size_t c = 0; c < img.dim(2); ++c) s[c] += img(y, x, c);
    return s;
}

/// Entry (r, c) of the square zero-padded matrix, read back from diagonal order.
inline double from_diagonals(const tensor::DiagMatrix& d, std::size_t r, std::size_t c) {
    const std::size_t n = d.size();
    return d.rows[(c + n - r) % n][r];
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return INFINITY;
    double e = 0;
    for (std::size_t i = 0; i < a.size(); ++i) e = std::max(e, std::fabs(a[i] - b[i]));
    return e;
}

// ---- kernel suite

struct KernelCases {
    std::vector<Matrix> mats;
    std::vector<std::vector<double>> xs;
    std::vector<Tensor> conv_imgs;
    std::vector<tensor::ConvFilters> filters;
    std::vector<Tensor> pool_imgs;
    std::vector<Matrix> dense_w;
    std::vector<std::vector<double>> dense_b;
};

/// `exact` draws multiples of 1/8 in [-2, 2] and power-of-two pooling areas,
/// so every intermediate is a short dyadic and double arithmetic is exact.
inline KernelCases make_cases(std::uint64_t seed, std::size_t count, bool exact, std::size_t max_dim = 64,
                              std::size_t max_side = 16) {
    auto rng = RandomSource::seeded(seed);
    auto value = [&]() {
        return exact ? static_cast<double>(static_cast<long>(rng.uniform(33)) - 16) / 8.0 : rng.uniform_real(-1, 1);
    };
    auto tensor_of = [&](std::vector<std::size_t> shape) {
        Tensor t(std::move(shape));
        for (auto& v : t.data) v = value();
        return t;
    };
    auto vec = [&](std::size_t n) {
        std::vector<double> v(n);
        for (auto& x : v) x = value();
        return v;
    };
    KernelCases c;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t r = 1 + rng.uniform(max_dim), cols = 1 + rng.uniform(max_dim);
        Matrix m(r, std::vector<double>(cols));
        for (auto& row : m)
            for (auto& v : row) v = value();
        c.mats.push_back(std::move(m));
        c.xs.push_back(vec(cols));

        const std::size_t h = 5 + rng.uniform(max_side - 4), w = 5 + rng.uniform(max_side - 4);
        const std::size_t cin = 1 + rng.uniform(3), cout = 1 + rng.uniform(4);
        const std::size_t kh = 1 + rng.uniform(5), kw = 1 + rng.uniform(5), stride = 1 + rng.uniform(4);
        c.conv_imgs.push_back(tensor_of({h, w, cin}));
        c.filters.push_back({tensor_of({kh, kw, cin, cout}), stride, vec(cout)});

        std::size_t ph, pw;
        if (exact) {
            ph = std::size_t{1} << rng.uniform(5);
            pw = std::size_t{1} << rng.uniform(5);
        } else {
            ph = 1 + rng.uniform(max_side);
            pw = 1 + rng.uniform(max_side);
        }
        const std::size_t pc = 1 + rng.uniform(3), out = 1 + rng.uniform(10);
        c.pool_imgs.push_back(tensor_of({ph, pw, pc}));
        Matrix dw(out, std::vector<double>(pc));
        for (auto& row : dw)
            for (auto& v : row) v = value();
        c.dense_w.push_back(std::move(dw));
        c.dense_b.push_back(vec(out));
    }
    return c;
}

struct KernelOutputs {
    std::vector<std::vector<double>> matvec, conv, square, pool, dense;
};

template <he::HeBackend B>
KernelOutputs run_kernels(const B& b, const KernelCases& c) {
    KernelOutputs o;
    for (std::size_t i = 0; i < c.mats.size(); ++i) {
        const auto y = b.decrypt_vec(tensor::matvec(b, tensor::diagonalize(c.mats[i]), b.encrypt_vec(c.xs[i])));
        o.matvec.emplace_back(y.begin(), y.begin() + static_cast<long>(c.mats[i].size()));

        const auto conv = tensor::conv2d(b, c.filters[i], tensor::encrypt_image(b, c.conv_imgs[i]));
        o.conv.push_back(tensor::decrypt_image(b, conv).data);
        o.square.push_back(tensor::decrypt_image(b, tensor::square_activation(b, conv)).data);

        const auto& img = c.pool_imgs[i];
        const auto g = tensor::global_avg_pool(b, tensor::encrypt_image(b, img));
        const auto gd = b.decrypt_vec(g);
        std::vector<double> sums;
        for (std::size_t k = 0; k < img.dim(2); ++k) sums.push_back(gd[k * img.dim(1)]);
        o.pool.push_back(std::move(sums));
        const auto y2 = b.decrypt_vec(tensor::dense_with_fold(b, c.dense_w[i], c.dense_b[i], g));
        o.dense.emplace_back(y2.begin(), y2.begin() + static_cast<long>(c.dense_w[i].size()));
    }
    return o;
}

inline KernelOutputs oracle_outputs(const KernelCases& c) {
    KernelOutputs o;
    for (std::size_t i = 0; i < c.mats.size(); ++i) {
        o.matvec.push_back(matmul(c.mats[i], c.xs[i]));
        const auto cv = conv(c.conv_imgs[i], c.filters[i]);
        o.conv.push_back(cv.data);
        auto sq = cv.data;
        for (auto& v : sq) v *= v;
        o.square.push_back(std::move(sq));
        const auto sums = channel_sums(c.pool_imgs[i]);
        o.pool.push_back(sums);
        const double area = double(c.pool_imgs[i].dim(0) * c.pool_imgs[i].dim(1));
        std::vector<double> means;
        for (double s : sums) means.push_back(s / area);
        auto y = matmul(c.dense_w[i], means);
        for (std::size_t r = 0; r < y.size(); ++r) y[r] += c.dense_b[i][r];
        o.dense.push_back(std::move(y));
    }
    return o;
}

inline constexpr std::size_t kSuiteSlots = 4096;  // N = 8192

// ---- federated helpers

inline fed::UpdateProvider uniform_provider(std::uint64_t seed, std::size_t count, double bound) {
    return [=](std::uint32_t client, std::uint64_t round, const std::vector<double>&) {
        auto rng = RandomSource::seeded(fed::derive_seed(seed, client, round));
        std::vector<double> w(count);
        for (auto& x : w) x = rng.uniform_real(-bound, bound);
        return w;
    };
}

/// Setup record, four phase records and a summary for every round, with the
/// abort cause on the last one.
inline bool transcript_complete(const fed::AggregationTranscript& t, const std::string& cause) {
    const auto records = t.records();
    if (records.size() != 1 + 5 * t.rounds.size() || t.rounds.empty()) return false;
    const auto& last = records.back();
    return last.value("status", "") == "RoundAbort" && last.value("cause", "") == cause &&
           !last.value("detail", std::string{}).empty();
}

}  // namespace detail

// ---------------------------------------------------------------- criteria

inline Outcome paillier_laws(const Options& opt) {
    return detail::run(1, "Paillier laws", [&](std::string& d) {
        auto rng = RandomSource::seeded(fed::derive_seed(opt.seed, 1));
        const auto [pk, sk] = paillier::keygen(256, rng);
        std::size_t add_ok = 0, mul_ok = 0;
        for (int i = 0; i < 1000; ++i) {
            const BigInt m1 = random_below(rng, pk.n), m2 = random_below(rng, pk.n);
            const auto c1 = paillier::encrypt(pk, m1, rng), c2 = paillier::encrypt(pk, m2, rng);
            add_ok += paillier::decrypt(sk, pk, paillier::add_ct(pk, c1, c2)) == mod(m1 + m2, pk.n);
            const BigInt k = random_below(rng, pk.n);
            mul_ok += paillier::decrypt(sk, pk, paillier::scalar_mul(pk, c1, k)) == mod(k * m1, pk.n);
        }
        const bool bits_ok = mpz_sizeinbase(pk.n.get_mpz_t(), 2) == 512;
        d = "add " + std::to_string(add_ok) + "/1000, scalar " + std::to_string(mul_ok) + "/1000 exact at " +
            std::to_string(mpz_sizeinbase(pk.n.get_mpz_t(), 2)) + "-bit n";
        return add_ok == 1000 && mul_ok == 1000 && bits_ok;
    });
}

inline Outcome threshold_ceremony(const Options& opt) {
    const auto t0 = detail::Clock::now();
    Outcome o = detail::run(2, "Threshold ceremony", [&](std::string& d) {
        auto rng = RandomSource::seeded(fed::derive_seed(opt.seed, 2));
        const auto c = threshold::ceremony_keygen(256, 3, rng);
        const auto& pk = c.public_key;
        std::size_t ok = 0, rejected = 0, subsets = 0;
        for (int i = 0; i < 100; ++i) {
            const BigInt m = random_below(rng, pk.n);
            const auto ct = threshold::encrypt(pk, m, rng);
            std::vector<threshold::PartialDecryption> ps;
            for (const auto& s : c.shares) ps.push_back(threshold::partial_decrypt(s, pk, ct));
            ok += threshold::combine(pk, ps) == m;
            for (std::size_t drop = 0; drop < 3; ++drop) {
                auto two = ps;
                two.erase(two.begin() + static_cast<long>(drop));
                ++subsets;
                const auto e = detail::error_of([&] { threshold::combine(pk, two); });
                rejected += e && e->kind() == ErrorKind::IncompleteShareSet;
            }
        }
        const double bounded = detail::since(t0);
        d = std::to_string(ok) + "/100 roundtrips exact, " + std::to_string(rejected) + "/" + std::to_string(subsets) +
            " 2-of-3 subsets raised IncompleteShareSet, 512-bit in " + detail::secs(bounded);
        bool pass = ok == 100 && rejected == subsets && bounded < 30.0;
        if (opt.full_size_threshold) {
            const auto t1 = detail::Clock::now();
            const auto big = threshold::ceremony_keygen(1024, 3, rng);
            const BigInt m = random_below(rng, big.public_key.n);
            const auto ct = threshold::encrypt(big.public_key, m, rng);
            std::vector<threshold::PartialDecryption> ps;
            for (const auto& s : big.shares) ps.push_back(threshold::partial_decrypt(s, big.public_key, ct));
            const bool big_ok = threshold::combine(big.public_key, ps) == m;
            const auto bits = mpz_sizeinbase(big.public_key.n.get_mpz_t(), 2);
            d += "; " + std::to_string(bits) + "-bit roundtrip " + std::string(big_ok ? "exact" : "WRONG") + " in " +
                 detail::secs(detail::since(t1)) + " (reported, not bounded)";
            pass = pass && big_ok && bits == 2048;
        }
        return pass;
    });
    return o;
}

inline Outcome kernel_oracles(const Options& opt) {
    return detail::run(3, "Kernel/oracle equivalence (simulator)", [&](std::string& d) {
        const auto cases = detail::make_cases(fed::derive_seed(opt.seed, 3), 25, true);
        he::Simulator sim(detail::kSuiteSlots, 4);
        std::size_t diag_ok = 0;
        for (const auto& m : cases.mats) {
            const auto dm = tensor::diagonalize(m);
            bool same = true;
            for (std::size_t r = 0; r < dm.size(); ++r)
                for (std::size_t c = 0; c < dm.size(); ++c) {
                    const double want = r < m.size() && c < m[0].size() ? m[r][c] : 0.0;
                    same = same && detail::from_diagonals(dm, r, c) == want;
                }
            diag_ok += same;
        }
        const auto got = detail::run_kernels(sim, cases);
        const auto want = detail::oracle_outputs(cases);
        auto count = [](const auto& a, const auto& b) {
            std::size_t n = 0;
            for (std::size_t i = 0; i < a.size(); ++i) n += a[i] == b[i];
            return n;
        };
        const std::size_t mv = count(got.matvec, want.matvec), cv = count(got.conv, want.conv),
                          sq = count(got.square, want.square), gp = count(got.pool, want.pool),
                          dn = count(got.dense, want.dense);
        d = "bit-exact: diagonalize " + std::to_string(diag_ok) + "/25, matvec " + std::to_string(mv) +
            "/25, conv2d " + std::to_string(cv) + "/25, square " + std::to_string(sq) + "/25, GAP " +
            std::to_string(gp) + "/25, dense " + std::to_string(dn) + "/25";
        return diag_ok == 25 && mv == 25 && cv == 25 && sq == 25 && gp == 25 && dn == 25;
    });
}

inline Outcome ckks_equivalence(const Options& opt) {
    return detail::run(4, "CKKS backend equivalence", [&](std::string& d) {
        const auto cases = detail::make_cases(fed::derive_seed(opt.seed, 4), 25, false);
        he::Simulator sim(detail::kSuiteSlots, 5);
        const auto want = detail::run_kernels(sim, cases);
        const auto steps = sim.rotation_log();
        auto ctx = std::make_shared<const ckks::CkksContext>(ckks::CkksParams{});
        auto krng = RandomSource::seeded(fed::derive_seed(opt.seed, 4, 1));
        const auto t0 = detail::Clock::now();
        const auto keys = ckks::generate_keys(*ctx, steps, krng);
        const double keygen = detail::since(t0);
        const ckks::CkksBackend b(ctx, keys, RandomSource::seeded(fed::derive_seed(opt.seed, 4, 2)));
        const auto got = detail::run_kernels(b, cases);
        auto worst = [](const auto& a, const auto& w) {
            double e = 0;
            for (std::size_t i = 0; i < a.size(); ++i) e = std::max(e, detail::max_abs_diff(a[i], w[i]));
            return e;
        };
        const double e_mv = worst(got.matvec, want.matvec), e_cv = worst(got.conv, want.conv),
                     e_sq = worst(got.square, want.square), e_gp = worst(got.pool, want.pool),
                     e_dn = worst(got.dense, want.dense);
        const double e = std::max({e_mv, e_cv, e_sq, e_gp, e_dn});
        d = "N=8192, scale 2^40, 25 instances per kernel, max abs error vs simulator: matvec " + detail::fmt(e_mv) +
            ", conv2d " + detail::fmt(e_cv) + ", square " + detail::fmt(e_sq) + ", GAP " + detail::fmt(e_gp) +
            ", dense " + detail::fmt(e_dn) + " (" + std::to_string(keys.eval->galois.size()) + " Galois keys in " +
            detail::secs(keygen) + ")";
        return e <= 1e-3;
    });
}

// ---- inference helpers, shared with the bench subcommand

struct BenchResult {
    std::size_t conv_layers = 0;
    std::size_t size = 0;
    std::size_t levels_used = 0;
    double keygen_seconds = 0;
    double encrypt_seconds = 0;
    double infer_seconds = 0;
    std::vector<model::LayerTrace> layers;
    std::vector<double> logits, plain_logits;
};

inline model::ModelSpec bench_spec(std::size_t conv_layers, std::size_t size, std::uint64_t seed) {
    model::RandomSpecOptions o;
    o.size = size;
    o.conv_layers = conv_layers;
    return model::random_spec(o, seed);
}

/// Keygen, client-side encryption and a timed server-side pass with an
/// evaluation-only backend. `levels` defaults to the model's depth.
inline BenchResult bench_ckks(const model::ModelSpec& spec, std::uint64_t seed, std::size_t levels = 0) {
    BenchResult r;
    r.conv_layers = spec.conv_layers();
    r.size = spec.input_shape[0];
    ckks::CkksParams p;
    p.levels = levels ? levels : model::depth_required(spec);
    auto ctx = std::make_shared<const ckks::CkksContext>(p);
    auto rng = RandomSource::seeded(fed::derive_seed(seed, 0xbe));
    auto t0 = detail::Clock::now();
    const auto keys = ckks::generate_keys(*ctx, model::rotation_steps(spec, ctx->params().slot_count()), rng);
    r.keygen_seconds = detail::since(t0);
    const ckks::CkksBackend client(ctx, keys, RandomSource::seeded(fed::derive_seed(seed, 0xc1)));
    const ckks::CkksBackend server(ctx, keys.pub, keys.eval, RandomSource::seeded(fed::derive_seed(seed, 0x5e)));
    const Tensor image = model::random_image(spec.input_shape[0], spec.input_shape[1], spec.input_shape[2],
                                             fed::derive_seed(seed, 0x1a));
    t0 = detail::Clock::now();
    const auto enc = model::encode_image_rows(image, client);
    r.encrypt_seconds = detail::since(t0);
    t0 = detail::Clock::now();
    const auto y = model::infer_encrypted(spec, enc, server, &r.layers);
    r.infer_seconds = detail::since(t0);
    r.levels_used = p.levels - y.level;
    const auto d = client.decrypt_vec(y);
    r.logits.assign(d.begin(), d.begin() + static_cast<long>(spec.classes()));
    r.plain_logits = model::infer_plain(spec, image);
    return r;
}

inline Outcome depth_ledger(const Options& opt) {
    return detail::run(5, "Depth ledger", [&](std::string& d) {
        const auto two = bench_spec(2, 32, fed::derive_seed(opt.seed, 5, 2));
        const auto three = bench_spec(3, 32, fed::derive_seed(opt.seed, 5, 3));
        const std::size_t slots = ckks::CkksParams{}.slot_count();
        const Tensor image = model::random_image(32, 32, 1, fed::derive_seed(opt.seed, 5));

        auto sim_used = [&](const model::ModelSpec& s) {
            he::Simulator sim(slots, 9);
            return sim.max_level() - model::infer_encrypted(s, model::encode_image_rows(image, sim), sim).level;
        };
        const std::size_t sim2 = sim_used(two), sim3 = sim_used(three);

        // Both specs on one 7-level CKKS chain; the timings double as the
        // bench relation at size 32.
        const auto ck2 = bench_ckks(two, opt.seed, 7);
        const auto ck3 = bench_ckks(three, opt.seed, 7);

        he::Simulator small(slots, 5);
        const auto sim_err = detail::error_of(
            [&] { model::infer_encrypted(three, model::encode_image_rows(image, small), small); });
        std::optional<Error> ckks_err;
        {
            ckks::CkksParams p;
            p.levels = 5;
            auto ctx = std::make_shared<const ckks::CkksContext>(p);
            auto rng = RandomSource::seeded(fed::derive_seed(opt.seed, 5, 5));
            const auto keys = ckks::generate_keys(*ctx, model::rotation_steps(three, slots), rng);
            const ckks::CkksBackend b(ctx, keys, RandomSource::seeded(fed::derive_seed(opt.seed, 5, 6)));
            ckks_err = detail::error_of([&] { model::infer_encrypted(three, model::encode_image_rows(image, b), b); });
        }
        // conv, square, conv, square, conv leave level 0; the third square is
        // the first layer without a level.
        constexpr std::size_t kFailing = 5;
        auto at_layer = [&](const std::optional<Error>& e) {
            return e && e->kind() == ErrorKind::BudgetExhausted && e->index() == kFailing;
        };
        const bool depth_ok = model::depth_required(two) == 5 && model::depth_required(three) == 7 && sim2 == 5 &&
                              sim3 == 7 && ck2.levels_used == 5 && ck3.levels_used == 7;
        const bool monotone = ck3.infer_seconds > ck2.infer_seconds;
        d = "levels used 2-conv sim/ckks " + std::to_string(sim2) + "/" + std::to_string(ck2.levels_used) +
            ", 3-conv " + std::to_string(sim3) + "/" + std::to_string(ck3.levels_used) +
            "; 3-conv at budget 5: sim " + (at_layer(sim_err) ? "BudgetExhausted at layer 5" : "WRONG") + ", ckks " +
            (at_layer(ckks_err) ? "BudgetExhausted at layer 5" : "WRONG") + "; bench size 32: 2-layer " +
            detail::secs(ck2.infer_seconds) + " < 3-layer " + detail::secs(ck3.infer_seconds) +
            (monotone ? "" : " VIOLATED");
        return depth_ok && at_layer(sim_err) && at_layer(ckks_err) && monotone;
    });
}

inline Outcome oblivious_inference(const Options& opt) {
    return detail::run(6, "End-to-end oblivious inference", [&](std::string& d) {
        constexpr int kModels = 20;
        std::vector<model::ModelSpec> specs;
        std::vector<Tensor> images;
        std::set<long> steps;
        auto ctx = std::make_shared<const ckks::CkksContext>(ckks::CkksParams{});
        for (int i = 0; i < kModels; ++i) {
            specs.push_back(bench_spec(2, 32, fed::derive_seed(opt.seed, 6, i)));
            images.push_back(model::random_image(32, 32, 1, fed::derive_seed(opt.seed, 0x16, i)));
            for (long s : model::rotation_steps(specs.back(), ctx->params().slot_count())) steps.insert(s);
        }
        auto rng = RandomSource::seeded(fed::derive_seed(opt.seed, 6));
        const std::vector<long> step_list(steps.begin(), steps.end());
        const auto keys = ckks::generate_keys(*ctx, step_list, rng);
        const ckks::CkksBackend client(ctx, keys, RandomSource::seeded(fed::derive_seed(opt.seed, 6, 100)));
        const ckks::CkksBackend server(ctx, keys.pub, keys.eval, RandomSource::seeded(fed::derive_seed(opt.seed, 6, 101)));
        int argmax_ok = 0, close_ok = 0;
        double worst = 0;
        for (int i = 0; i < kModels; ++i) {
            const auto plain = model::infer_plain(specs[i], images[i]);
            const auto y = model::infer_encrypted(specs[i], model::encode_image_rows(images[i], client), server);
            const auto dec = client.decrypt_vec(y);
            const std::vector<double> enc(dec.begin(), dec.begin() + static_cast<long>(plain.size()));
            const auto arg = [](const std::vector<double>& v) { return std::max_element(v.begin(), v.end()) - v.begin(); };
            argmax_ok += arg(enc) == arg(plain);
            double scale = 0;
            for (double v : plain) scale = std::max(scale, std::fabs(v));
            const double rel = detail::max_abs_diff(enc, plain) / std::max(scale, 1e-12);
            worst = std::max(worst, rel);
            close_ok += rel <= 1e-2;
        }
        d = "argmax agrees " + std::to_string(argmax_ok) + "/20, logits within 1e-2 relative " +
            std::to_string(close_ok) + "/20 (worst " + detail::fmt(worst) + ")";
        return argmax_ok == kModels && close_ok == kModels;
    });
}

inline Outcome federated_averaging(const Options& opt) {
    return detail::run(7, "Federated averaging", [&](std::string& d) {
        fed::FedConfig cfg;
        cfg.clients = 3;
        cfg.rounds = 3;
        cfg.weight_count = 10'000;
        cfg.key_bits = 512;
        cfg.seed = fed::derive_seed(opt.seed, 7);
        const auto provider = detail::uniform_provider(cfg.seed, cfg.weight_count, 8.0);
        const auto t0 = detail::Clock::now();
        const auto r = fed::run_simulation(cfg, provider);
        const double elapsed = detail::since(t0);
        const double tol = std::ldexp(1.0, -static_cast<int>(cfg.packing.frac_bits));
        double worst = 0;
        bool all_rounds = r.transcript.rounds.size() == 3 && !r.transcript.aborted(), checksums = true;
        for (std::uint64_t t = 1; t <= cfg.rounds && all_rounds; ++t) {
            const auto& rec = r.transcript.rounds[t - 1];
            std::vector<double> mean(cfg.weight_count, 0.0);
            for (auto c : rec.participants) {
                const auto w = provider(c, t, {});
                for (std::size_t i = 0; i < w.size(); ++i) mean[i] += w[i];
            }
            for (auto& m : mean) m /= double(rec.participants.size());
            for (const auto& c : r.clients) {
                if (c.averages.size() != cfg.rounds) {
                    all_rounds = false;
                    break;
                }
                worst = std::max(worst, detail::max_abs_diff(c.averages[t - 1], mean));
                checksums = checksums && c.checksums[t - 1] == rec.checksum;
            }
        }
        constexpr bool blind = !std::is_constructible_v<fed::AggregationServer, threshold::ThresholdKeyShare, fed::FedConfig> &&
                               !std::is_constructible_v<fed::AggregationServer, threshold::Ceremony, fed::FedConfig>;
        const std::size_t cts = r.transcript.rounds.empty() ? 0 : r.transcript.rounds[0].ciphertexts;
        d = "K=3 T=3, 10000 weights as " + std::to_string(cts) + " ciphertexts per client at 512-bit n, max error " +
            detail::fmt(worst) + " vs 2^-16 = " + detail::fmt(tol) + ", checksums " +
            (checksums ? "equal" : "DIFFER") + ", server " + (blind ? "holds no share" : "CAN HOLD A SHARE") +
            ", run " + detail::secs(elapsed);
        return all_rounds && worst <= tol && checksums && blind && elapsed < 120.0;
    });
}

inline Outcome fault_injection(const Options& opt) {
    return detail::run(8, "Fault injection", [&](std::string& d) {
        fed::FedConfig cfg;
        cfg.clients = 2;
        cfg.rounds = 2;
        cfg.weight_count = 100;
        cfg.key_bits = 512;
        cfg.seed = fed::derive_seed(opt.seed, 8);
        fed::SimulationOptions faults;
        faults.faults[2].corrupt_partials = true;
        const auto bad = fed::run_simulation(cfg, detail::uniform_provider(cfg.seed, 100, 1.0), faults);
        const bool corrupt_ok = bad.transcript.aborted() && detail::transcript_complete(bad.transcript, "CombineFailed");

        // More participants than the packing headroom admits.
        fed::FedConfig over = cfg;
        over.clients = over.packing.max_addends + 1;
        over.rounds = 1;
        const auto ov = fed::run_simulation(over, detail::uniform_provider(cfg.seed, 100, 1.0));
        const bool over_ok = ov.transcript.aborted() && detail::transcript_complete(ov.transcript, "OverflowDetected");

        auto cause = [](const fed::AggregationTranscript& t) {
            return t.rounds.empty() ? std::string("none") : t.rounds.back().status + "/" + t.rounds.back().cause;
        };
        d = "corrupted partial -> " + cause(bad.transcript) + ", K=" + std::to_string(over.clients) + " > max_addends " +
            std::to_string(over.packing.max_addends) + " -> " + cause(ov.transcript) + ", transcripts " +
            (corrupt_ok && over_ok ? "complete" : "INCOMPLETE");
        return corrupt_ok && over_ok;
    });
}

// ---------------------------------------------------------------- suites

inline std::vector<int> suite_criteria(const std::string& suite) {
    if (suite == "paillier") return {1};
    if (suite == "threshold") return {2};
    if (suite == "kernels") return {3};
    if (suite == "ckks") return {4, 5, 6};
    if (suite == "fedavg") return {7, 8};
    if (suite == "all") return {1, 2, 3, 4, 5, 6, 7, 8};
    fail(ErrorKind::FormatError, "unknown suite '" + suite + "'");
}

inline Outcome run_criterion(int id, const Options& opt) {
    switch (id) {
        case 1: return paillier_laws(opt);
        case 2: return threshold_ceremony(opt);
        case 3: return kernel_oracles(opt);
        case 4: return ckks_equivalence(opt);
        case 5: return depth_ledger(opt);
        case 6: return oblivious_inference(opt);
        case 7: return federated_averaging(opt);
        case 8: return fault_injection(opt);
    }
    fail(ErrorKind::FormatError, "no criterion " + std::to_string(id));
}

/// Runs the criteria in order, writing each line to `out` as it finishes.
inline std::vector<Outcome> run_suite(const std::vector<int>& ids, const Options& opt, std::ostream* out = nullptr) {
    std::vector<Outcome> results;
    for (int id : ids) {
        results.push_back(run_criterion(id, opt));
        if (out) *out << format_line(results.back()) << std::endl;
    }
    return results;
}

}  // namespace hegemony::verify

#endif  // HEGEMONY_VERIFY_HPP
