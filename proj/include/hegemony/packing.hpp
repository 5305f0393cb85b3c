#ifndef HEGEMONY_PACKING_HPP
#define HEGEMONY_PACKING_HPP

// Fixed-point weight packing: each weight becomes round(w * 2^frac_bits) +
// shift, a non-negative integer stored in a slot_bits-wide bit field. Many
// fields share one big integer (lowest slot in the lowest bits), so one
// Paillier ciphertext carries many weights and ciphertext products add all
// of them at once. Headroom above the value bits absorbs the carries of up
// to max_addends additions.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hegemony/json.hpp"
#include "hegemony/numtheory.hpp"

namespace hegemony::packing {

struct PackingConfig {
    unsigned frac_bits = 16;
    unsigned slot_bits = 48;
    std::uint64_t shift = std::uint64_t{1} << 31;
    unsigned max_addends = 16;

    /// Bits needed for one shifted value, which lies in [0, 2*shift).
    unsigned value_bits() const {
        unsigned b = 0;
        while ((std::uint64_t{1} << b) < 2 * shift) ++b;
        return b;
    }

    unsigned headroom_bits() const {
        unsigned b = 0;
        while ((1u << b) < max_addends) ++b;
        return b;
    }

    void validate() const {
        if (shift == 0 || max_addends == 0 || slot_bits == 0 || slot_bits > 62)
            fail(ErrorKind::FormatError, "packing config fields must be positive and slot_bits <= 62");
        if (slot_bits < value_bits() + headroom_bits() + 1)
            fail(ErrorKind::FormatError, "slot_bits too small for shift and max_addends");
    }

    friend bool operator==(const PackingConfig&, const PackingConfig&) = default;
};

struct PackedWeights {
    std::vector<BigInt> integers;
    std::size_t count = 0;
    std::size_t slots_per_integer = 0;
    PackingConfig config;
};

inline std::size_t slots_per_integer(const PackingConfig& config, std::size_t plaintext_bits) {
    const std::size_t slots = plaintext_bits / config.slot_bits;
    if (slots == 0) fail(ErrorKind::FormatError, "plaintext too narrow for a single slot");
    return slots;
}

/// Fixed-point representative with round-half-away-from-zero.
inline std::int64_t quantize(double w, unsigned frac_bits) {
    return static_cast<std::int64_t>(std::round(std::ldexp(w, static_cast<int>(frac_bits))));
}

inline PackedWeights pack(std::span<const double> weights, const PackingConfig& config, std::size_t plaintext_bits) {
    config.validate();
    PackedWeights out;
    out.count = weights.size();
    out.config = config;
    out.slots_per_integer = slots_per_integer(config, plaintext_bits);

    const auto limit = static_cast<std::int64_t>(config.shift);
    std::vector<std::uint64_t> fields(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double w = weights[i];
        const double scaled = std::ldexp(std::fabs(w), static_cast<int>(config.frac_bits));
        if (!std::isfinite(w) || scaled >= static_cast<double>(limit))
            fail(ErrorKind::WeightOutOfRange, "weight " + std::to_string(i) + " outside the packable range", i);
        const std::int64_t q = quantize(w, config.frac_bits);
        if (q >= limit || q <= -limit)
            fail(ErrorKind::WeightOutOfRange, "weight " + std::to_string(i) + " outside the packable range", i);
        fields[i] = static_cast<std::uint64_t>(q + limit);
    }

    for (std::size_t base = 0; base < fields.size(); base += out.slots_per_integer) {
        const std::size_t end = std::min(fields.size(), base + out.slots_per_integer);
        BigInt acc = 0;
        for (std::size_t i = end; i-- > base;) {
            acc <<= config.slot_bits;
            acc += static_cast<unsigned long>(fields[i]);
        }
        out.integers.push_back(std::move(acc));
    }
    return out;
}

/// Slot-wise plaintext sum, the cleartext counterpart of multiplying Paillier
/// ciphertexts.
inline PackedWeights add(const PackedWeights& a, const PackedWeights& b) {
    if (a.count != b.count || a.slots_per_integer != b.slots_per_integer || !(a.config == b.config))
        fail(ErrorKind::FormatError, "packed vectors have different shapes");
    PackedWeights out = a;
    for (std::size_t i = 0; i < out.integers.size(); ++i) out.integers[i] += b.integers[i];
    return out;
}

/// Raw slot fields of a packed sum of `addends` vectors, checked against the
/// largest value such a sum can hold.
inline std::vector<std::uint64_t> unpack_fields(const PackedWeights& packed, unsigned addends) {
    const auto& config = packed.config;
    if (addends == 0 || addends > config.max_addends)
        fail(ErrorKind::OverflowDetected, "addend count " + std::to_string(addends) + " exceeds max_addends " +
                                              std::to_string(config.max_addends));
    const std::uint64_t bound = static_cast<std::uint64_t>(addends) * (2 * config.shift - 1);
    const std::size_t expected_ints =
        (packed.count + packed.slots_per_integer - 1) / std::max<std::size_t>(packed.slots_per_integer, 1);
    if (packed.integers.size() != expected_ints) fail(ErrorKind::FormatError, "packed integer count mismatch");

    std::vector<std::uint64_t> fields;
    fields.reserve(packed.count);
    BigInt field;
    for (std::size_t k = 0; k < packed.integers.size(); ++k) {
        BigInt rest = packed.integers[k];
        const std::size_t slots = std::min(packed.slots_per_integer, packed.count - k * packed.slots_per_integer);
        for (std::size_t s = 0; s < slots; ++s) {
            mpz_fdiv_r_2exp(field.get_mpz_t(), rest.get_mpz_t(), config.slot_bits);
            rest >>= config.slot_bits;
            const std::uint64_t f = field.get_ui();
            if (f > bound) fail(ErrorKind::OverflowDetected, "slot field exceeds the bound for this addend count", fields.size());
            fields.push_back(f);
        }
        if (rest != 0) fail(ErrorKind::OverflowDetected, "carry beyond the last slot");
    }
    return fields;
}

/// Decodes the average of the `addends` packed vectors summed into `packed`.
/// The division by the addend count happens here, after decryption.
inline std::vector<double> unpack_sum(const PackedWeights& packed, unsigned addends) {
    const auto fields = unpack_fields(packed, addends);
    const auto& config = packed.config;
    const auto offset = static_cast<std::int64_t>(addends) * static_cast<std::int64_t>(config.shift);
    const double denom = std::ldexp(static_cast<double>(addends), static_cast<int>(config.frac_bits));
    std::vector<double> out(fields.size());
    for (std::size_t i = 0; i < fields.size(); ++i)
        out[i] = static_cast<double>(static_cast<std::int64_t>(fields[i]) - offset) / denom;
    return out;
}

inline std::vector<double> unpack(const PackedWeights& packed) { return unpack_sum(packed, 1); }

inline nlohmann::json to_json(const PackingConfig& c) {
    return {{"frac_bits", c.frac_bits}, {"slot_bits", c.slot_bits}, {"shift", c.shift}, {"max_addends", c.max_addends}};
}

inline PackingConfig config_from_json(const nlohmann::json& j) {
    PackingConfig c;
    c.frac_bits = json_number<unsigned>(j, "frac_bits");
    c.slot_bits = json_number<unsigned>(j, "slot_bits");
    c.shift = json_number<std::uint64_t>(j, "shift");
    c.max_addends = json_number<unsigned>(j, "max_addends");
    c.validate();
    return c;
}

}  // namespace hegemony::packing

#endif  // HEGEMONY_PACKING_HPP
