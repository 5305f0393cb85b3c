#ifndef HEGEMONY_HE_BACKEND_HPP
#define HEGEMONY_HE_BACKEND_HPP

// Contract shared by the slot simulator and the CKKS backend. Kernels in
// enc_tensor.hpp are templates over any type satisfying HeBackend.

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hegemony/errors.hpp"
#include "hegemony/json.hpp"

namespace hegemony::he {

/// Sorted, disjoint, half-open slot intervals inside [0, slot_count).
class IntervalSet {
public:
    using Interval = std::pair<std::size_t, std::size_t>;

    IntervalSet() = default;
    static IntervalSet range(std::size_t begin, std::size_t end) {
        IntervalSet s;
        s.insert(begin, end);
        return s;
    }
    static IntervalSet points(const std::vector<std::size_t>& slots) {
        IntervalSet s;
        for (auto p : slots) s.insert(p, p + 1);
        return s;
    }
    /// Slots where `values` is nonzero.
    static IntervalSet nonzero(std::span<const double> values) {
        IntervalSet s;
        std::size_t i = 0;
        while (i < values.size()) {
            if (values[i] == 0.0) {
                ++i;
                continue;
            }
            std::size_t j = i;
            while (j < values.size() && values[j] != 0.0) ++j;
            s.parts_.emplace_back(i, j);
            i = j;
        }
        return s;
    }

    void insert(std::size_t begin, std::size_t end) {
        if (begin >= end) return;
        parts_.emplace_back(begin, end);
        normalize();
    }

    bool empty() const { return parts_.empty(); }
    bool contains(std::size_t slot) const {
        auto it = std::upper_bound(parts_.begin(), parts_.end(), Interval{slot, SIZE_MAX});
        if (it == parts_.begin()) return false;
        --it;
        return slot >= it->first && slot < it->second;
    }
    std::size_t size() const {
        std::size_t n = 0;
        for (auto [a, b] : parts_) n += b - a;
        return n;
    }
    std::vector<std::size_t> slots() const {
        std::vector<std::size_t> out;
        for (auto [a, b] : parts_)
            for (auto i = a; i < b; ++i) out.push_back(i);
        return out;
    }
    /// One past the largest member, 0 when empty.
    std::size_t extent() const { return parts_.empty() ? 0 : parts_.back().second; }
    const std::vector<Interval>& intervals() const { return parts_; }

    IntervalSet unite(const IntervalSet& o) const {
        IntervalSet s = *this;
        s.parts_.insert(s.parts_.end(), o.parts_.begin(), o.parts_.end());
        s.normalize();
        return s;
    }
    IntervalSet intersect(const IntervalSet& o) const {
        IntervalSet s;
        std::size_t i = 0, j = 0;
        while (i < parts_.size() && j < o.parts_.size()) {
            const auto lo = std::max(parts_[i].first, o.parts_[j].first);
            const auto hi = std::min(parts_[i].second, o.parts_[j].second);
            if (lo < hi) s.parts_.emplace_back(lo, hi);
            if (parts_[i].second < o.parts_[j].second) ++i;
            else ++j;
        }
        return s;
    }
    bool subset_of(const IntervalSet& o) const { return intersect(o) == *this; }

    /// Image under a cyclic left shift by k in a ring of `slots` lanes.
    IntervalSet rotate_left(long k, std::size_t slots) const {
        const long m = static_cast<long>(slots);
        const std::size_t shift = static_cast<std::size_t>(((k % m) + m) % m);
        IntervalSet s;
        for (auto [a, b] : parts_) {
            // slot x moves to x - shift (mod slots)
            const std::size_t na = (a + slots - shift) % slots;
            const std::size_t len = b - a;
            if (na + len <= slots) {
                s.parts_.emplace_back(na, na + len);
            } else {
                s.parts_.emplace_back(na, slots);
                s.parts_.emplace_back(0, na + len - slots);
            }
        }
        s.normalize();
        return s;
    }

    bool operator==(const IntervalSet&) const = default;

    nlohmann::json to_json() const {
        auto j = nlohmann::json::array();
        for (auto [a, b] : parts_) j.push_back({a, b});
        return j;
    }
    static IntervalSet from_json(const nlohmann::json& j) {
        IntervalSet s;
        for (const auto& p : j) s.parts_.emplace_back(p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>());
        s.normalize();
        return s;
    }

private:
    void normalize() {
        std::sort(parts_.begin(), parts_.end());
        std::vector<Interval> merged;
        for (auto p : parts_) {
            if (p.first >= p.second) continue;
            if (!merged.empty() && p.first <= merged.back().second)
                merged.back().second = std::max(merged.back().second, p.second);
            else
                merged.push_back(p);
        }
        parts_ = std::move(merged);
    }

    std::vector<Interval> parts_;
};

/// Public bookkeeping carried beside a ciphertext. `valid` lists slots with
/// meaningful values in order; `support` over-approximates the slots that may
/// be nonzero. With pending_mask false, support is contained in valid.
struct SlotLayout {
    IntervalSet valid;
    IntervalSet support;
    double pending_scale = 1.0;
    bool pending_mask = false;

    static SlotLayout prefix(std::size_t len) {
        return {IntervalSet::range(0, len), IntervalSet::range(0, len), 1.0, false};
    }

    SlotLayout rotated(long k, std::size_t slots) const {
        return {valid.rotate_left(k, slots), support.rotate_left(k, slots), pending_scale, pending_mask};
    }

    bool operator==(const SlotLayout&) const = default;

    nlohmann::json to_json() const {
        return {{"valid", valid.to_json()},
                {"support", support.to_json()},
                {"pending_scale", pending_scale},
                {"pending_mask", pending_mask}};
    }
    static SlotLayout from_json(const nlohmann::json& j) {
        return {IntervalSet::from_json(j.at("valid")), IntervalSet::from_json(j.at("support")),
                j.at("pending_scale").get<double>(), j.at("pending_mask").get<bool>()};
    }
};

inline SlotLayout layout_after_add(const SlotLayout& a, const SlotLayout& b) {
    if (a.pending_scale != b.pending_scale)
        fail(ErrorKind::ScaleMismatch, "adding vectors with different pending scales");
    return {a.valid.unite(b.valid), a.support.unite(b.support), a.pending_scale,
            a.pending_mask || b.pending_mask};
}

inline SlotLayout layout_after_mul_plain(const SlotLayout& a, std::span<const double> plain) {
    return {a.valid, a.support.intersect(IntervalSet::nonzero(plain)), a.pending_scale, a.pending_mask};
}

template <class Payload>
struct HeVector {
    Payload payload;
    std::size_t slot_count = 0;
    std::size_t level = 0;
    SlotLayout layout;
};

/// Operation counters for the depth estimator and bench reports.
struct OpCounts {
    std::uint64_t mul_plain = 0;
    std::uint64_t square = 0;
    std::uint64_t rotate = 0;
    std::uint64_t add = 0;
};

template <class B>
concept HeBackend = requires(const B& b, const typename B::Vector& v, const typename B::Plain& p,
                             std::span<const double> values, std::span<const long> steps,
                             std::span<const std::pair<const typename B::Vector*, const typename B::Plain*>> terms) {
    { b.slot_count() } -> std::convertible_to<std::size_t>;
    { b.max_level() } -> std::convertible_to<std::size_t>;
    { b.encrypt_vec(values) } -> std::same_as<typename B::Vector>;
    { b.encode_plain(values, std::size_t{}) } -> std::same_as<typename B::Plain>;
    { b.add(v, v) } -> std::same_as<typename B::Vector>;
    { b.add_plain(v, values) } -> std::same_as<typename B::Vector>;
    { b.mul_plain(v, values) } -> std::same_as<typename B::Vector>;
    { b.mul_plain(v, p) } -> std::same_as<typename B::Vector>;
    { b.dot_plain(terms) } -> std::same_as<typename B::Vector>;
    { b.square(v) } -> std::same_as<typename B::Vector>;
    { b.rotate(v, long{}) } -> std::same_as<typename B::Vector>;
    { b.rotate_many(v, steps) } -> std::same_as<std::vector<typename B::Vector>>;
    { b.decrypt_vec(v) } -> std::same_as<std::vector<double>>;
};

template <class V>
std::size_t level_of(const V& v) {
    return v.level;
}
template <class V>
const SlotLayout& slots_of(const V& v) {
    return v.layout;
}

inline void require_level(std::size_t level, const char* op) {
    if (level == 0) fail(ErrorKind::BudgetExhausted, std::string(op) + ": no multiplicative level left");
}

inline void require_no_pending_scale(const SlotLayout& layout, const char* op) {
    if (layout.pending_scale != 1.0)
        fail(ErrorKind::DeferredScalePresent, std::string(op) + ": deferred scale must be folded first");
}

}  // namespace hegemony::he

#endif  // HEGEMONY_HE_BACKEND_HPP
