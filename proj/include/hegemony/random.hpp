#ifndef HEGEMONY_RANDOM_HPP
#define HEGEMONY_RANDOM_HPP

#include <sys/random.h>

#include <array>
#include <cerrno>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>

namespace hegemony {

/// Source of randomness injected into every sampling operation.
///
/// The default instance draws from the kernel CSPRNG (getrandom). A seeded
/// instance is a deterministic Mersenne-Twister stream meant for tests and
/// reproducible demos only; it is not cryptographically secure. Instances are
/// not thread-safe; give each thread its own.
class RandomSource {
public:
    RandomSource() = default;
    explicit RandomSource(std::uint64_t seed) : seeded_(std::mt19937_64(seed)) {}

    static RandomSource secure() { return RandomSource(); }
    static RandomSource seeded(std::uint64_t seed) { return RandomSource(seed); }

    bool is_seeded() const noexcept { return seeded_.has_value(); }

    std::uint64_t next_u64() {
        if (seeded_) return (*seeded_)();
        if (pos_ == buffer_.size()) refill();
        return buffer_[pos_++];
    }

    /// Uniform in [0, bound) without modulo bias. bound must be > 0.
    std::uint64_t uniform(std::uint64_t bound) {
        if (bound == 0) throw std::invalid_argument("uniform: bound must be positive");
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % bound;
    }

    double uniform_real() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform_real(double lo, double hi) { return lo + (hi - lo) * uniform_real(); }

    double normal(double sigma) {
        // Box-Muller; the spare value is discarded to keep the stream position simple.
        double u1 = uniform_real();
        while (u1 <= 0.0) u1 = uniform_real();
        const double u2 = uniform_real();
        return sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    /// Derive an independent child stream, e.g. one per worker thread.
    RandomSource fork() {
        if (seeded_) return RandomSource(next_u64());
        return RandomSource();
    }

private:
    void refill() {
        auto* bytes = reinterpret_cast<unsigned char*>(buffer_.data());
        std::size_t need = sizeof(buffer_);
        while (need > 0) {
            const ssize_t got = getrandom(bytes, need, 0);
            if (got < 0) {
                if (errno == EINTR) continue;
                throw std::runtime_error("getrandom failed");
            }
            bytes += got;
            need -= static_cast<std::size_t>(got);
        }
        pos_ = 0;
    }

    std::optional<std::mt19937_64> seeded_;
    std::array<std::uint64_t, 64> buffer_{};
    std::size_t pos_ = 64;
};

}  // namespace hegemony

#endif  // HEGEMONY_RANDOM_HPP
