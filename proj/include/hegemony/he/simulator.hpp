#ifndef HEGEMONY_HE_SIMULATOR_HPP
#define HEGEMONY_HE_SIMULATOR_HPP

// Exact cleartext stand-in for an HE backend: slots are plain doubles, but
// the payload is only readable through decrypt_vec and every operation obeys
// the same level ledger a leveled scheme would.

#include <atomic>
#include <memory>
#include <mutex>
#include <set>
#include <span>
#include <vector>

#include "hegemony/he/backend.hpp"

namespace hegemony::he {

class Simulator {
public:
    struct Payload {
        std::shared_ptr<const std::vector<double>> slots;
    };
    using Vector = HeVector<Payload>;
    struct Plain {
        std::vector<double> values;
        std::size_t level = 0;
    };

    explicit Simulator(std::size_t slot_count = 4096, std::size_t levels = 6)
        : slots_(slot_count), levels_(levels) {
        if (slot_count == 0 || (slot_count & (slot_count - 1)) != 0)
            fail(ErrorKind::UnsupportedDegree, "slot count must be a power of two");
    }
    Simulator(const Simulator& o) : slots_(o.slots_), levels_(o.levels_) {}

    /// Distinct rotation steps requested so far, reduced mod slot count. A
    /// dry run on the simulator tells the CKKS key generator which Galois
    /// keys a computation needs.
    std::vector<long> rotation_log() const {
        std::lock_guard lock(log_mutex_);
        return {steps_.begin(), steps_.end()};
    }

    std::size_t slot_count() const { return slots_; }
    std::size_t max_level() const { return levels_; }

    Vector encrypt_vec(std::span<const double> values) const {
        if (values.size() > slots_) fail(ErrorKind::TooManyValues, "more values than slots");
        std::vector<double> s(slots_, 0.0);
        std::copy(values.begin(), values.end(), s.begin());
        return make(std::move(s), levels_, SlotLayout::prefix(values.size()));
    }

    /// Encrypt at a chosen level below the maximum; used for ledger tests.
    Vector encrypt_at(std::span<const double> values, std::size_t level) const {
        Vector v = encrypt_vec(values);
        v.level = std::min(level, levels_);
        return v;
    }

    Plain encode_plain(std::span<const double> values, std::size_t level) const {
        if (values.size() > slots_) fail(ErrorKind::TooManyValues, "more values than slots");
        Plain p{std::vector<double>(slots_, 0.0), level};
        std::copy(values.begin(), values.end(), p.values.begin());
        return p;
    }

    Vector add(const Vector& a, const Vector& b) const {
        ++counts_.add;
        const auto& x = *a.payload.slots;
        const auto& y = *b.payload.slots;
        std::vector<double> s(slots_);
        for (std::size_t i = 0; i < slots_; ++i) s[i] = x[i] + y[i];
        return make(std::move(s), std::min(a.level, b.level), layout_after_add(a.layout, b.layout));
    }

    Vector add_plain(const Vector& a, std::span<const double> values) const {
        if (values.size() > slots_) fail(ErrorKind::TooManyValues, "more values than slots");
        std::vector<double> s = *a.payload.slots;
        for (std::size_t i = 0; i < values.size(); ++i) s[i] += values[i];
        SlotLayout layout = a.layout;
        layout.support = layout.support.unite(IntervalSet::nonzero(values));
        layout.valid = layout.valid.unite(IntervalSet::nonzero(values));
        return make(std::move(s), a.level, std::move(layout));
    }

    Vector mul_plain(const Vector& a, std::span<const double> values) const {
        return mul_plain(a, encode_plain(values, a.level));
    }

    Vector mul_plain(const Vector& a, const Plain& p) const {
        require_level(a.level, "mul_plain");
        ++counts_.mul_plain;
        const auto& x = *a.payload.slots;
        std::vector<double> s(slots_);
        for (std::size_t i = 0; i < slots_; ++i) s[i] = x[i] * p.values[i];
        return make(std::move(s), a.level - 1, layout_after_mul_plain(a.layout, p.values));
    }

    /// Sum of plaintext products, one level consumed in total.
    Vector dot_plain(std::span<const std::pair<const Vector*, const Plain*>> terms) const {
        if (terms.empty()) fail(ErrorKind::LayoutMismatch, "dot_plain needs at least one term");
        std::size_t level = terms[0].first->level;
        for (auto [v, p] : terms) level = std::min(level, v->level);
        require_level(level, "dot_plain");
        counts_.mul_plain += terms.size();
        std::vector<double> s(slots_, 0.0);
        IntervalSet support;
        for (auto [v, p] : terms) {
            const auto& x = *v->payload.slots;
            for (std::size_t i = 0; i < slots_; ++i) s[i] += x[i] * p->values[i];
            support = support.unite(v->layout.support.intersect(IntervalSet::nonzero(p->values)));
        }
        const auto& first = terms[0].first->layout;
        return make(std::move(s), level - 1, {support, support, first.pending_scale, first.pending_mask});
    }

    Vector square(const Vector& a) const {
        require_level(a.level, "square");
        require_no_pending_scale(a.layout, "square");
        ++counts_.square;
        const auto& x = *a.payload.slots;
        std::vector<double> s(slots_);
        for (std::size_t i = 0; i < slots_; ++i) s[i] = x[i] * x[i];
        return make(std::move(s), a.level - 1, a.layout);
    }

    Vector rotate(const Vector& a, long k) const {
        ++counts_.rotate;
        const long m = static_cast<long>(slots_);
        const std::size_t shift = static_cast<std::size_t>(((k % m) + m) % m);
        if (shift != 0) {
            std::lock_guard lock(log_mutex_);
            steps_.insert(static_cast<long>(shift));
        }
        const auto& x = *a.payload.slots;
        std::vector<double> s(slots_);
        for (std::size_t i = 0; i < slots_; ++i) s[i] = x[(i + shift) % slots_];
        return make(std::move(s), a.level, a.layout.rotated(k, slots_));
    }

    std::vector<Vector> rotate_many(const Vector& a, std::span<const long> steps) const {
        std::vector<Vector> out;
        out.reserve(steps.size());
        for (long k : steps) out.push_back(rotate(a, k));
        return out;
    }

    std::vector<double> decrypt_vec(const Vector& a) const { return *a.payload.slots; }

    OpCounts counts() const {
        return {counts_.mul_plain.load(), counts_.square.load(), counts_.rotate.load(), counts_.add.load()};
    }

private:
    Vector make(std::vector<double> s, std::size_t level, SlotLayout layout) const {
        return {{std::make_shared<const std::vector<double>>(std::move(s))}, slots_, level, std::move(layout)};
    }

    struct AtomicCounts {
        std::atomic<std::uint64_t> mul_plain{0}, square{0}, rotate{0}, add{0};
    };

    std::size_t slots_;
    std::size_t levels_;
    mutable AtomicCounts counts_;
    mutable std::mutex log_mutex_;
    mutable std::set<long> steps_;
};

static_assert(HeBackend<Simulator>);

}  // namespace hegemony::he

#endif  // HEGEMONY_HE_SIMULATOR_HPP
