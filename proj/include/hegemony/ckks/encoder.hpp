#ifndef HEGEMONY_CKKS_ENCODER_HPP
#define HEGEMONY_CKKS_ENCODER_HPP

// Canonical-embedding encoder. Slot j holds m(zeta^(5^j)) / scale with
// zeta = exp(i pi / N), so X -> X^(5^k) rotates slots left by k. The
// transform is the special FFT over the rotation group of 5.

#include <cmath>
#include <complex>
#include <cstdint>
#include <span>
#include <vector>

#include "hegemony/errors.hpp"

namespace hegemony::ckks {

class Encoder {
public:
    using cd = std::complex<double>;

    explicit Encoder(std::size_t n) : n_(n), slots_(n / 2), m_(2 * n) {
        rot_group_.resize(slots_);
        std::size_t five = 1;
        for (std::size_t j = 0; j < slots_; ++j) {
            rot_group_[j] = five;
            five = five * 5 % m_;
        }
        ksi_.resize(m_ + 1);
        for (std::size_t k = 0; k <= m_; ++k) {
            const double a = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(m_);
            ksi_[k] = {std::cos(a), std::sin(a)};
        }
    }

    std::size_t slot_count() const { return slots_; }

    /// Integer coefficients of round(scale * embedding^-1(values)). Values
    /// past the end are zero. Raises ScaleOverflow when a coefficient would
    /// not fit below 2^limit_bits.
    std::vector<std::int64_t> encode(std::span<const double> values, double scale, int limit_bits = 62) const {
        if (values.size() > slots_) fail(ErrorKind::TooManyValues, "more values than slots");
        std::vector<cd> u(slots_, cd(0.0, 0.0));
        for (std::size_t i = 0; i < values.size(); ++i) u[i] = values[i];
        special_fft_inv(u);
        const double limit = std::ldexp(1.0, limit_bits);
        std::vector<std::int64_t> coeffs(n_);
        for (std::size_t i = 0; i < slots_; ++i) {
            const double re = std::round(u[i].real() * scale);
            const double im = std::round(u[i].imag() * scale);
            if (!(std::fabs(re) < limit) || !(std::fabs(im) < limit))
                fail(ErrorKind::ScaleOverflow, "value too large for the encoding scale");
            coeffs[i] = static_cast<std::int64_t>(re);
            coeffs[i + slots_] = static_cast<std::int64_t>(im);
        }
        return coeffs;
    }

    std::vector<double> decode(std::span<const double> coeffs, double scale) const {
        std::vector<cd> u(slots_);
        for (std::size_t i = 0; i < slots_; ++i) u[i] = cd(coeffs[i] / scale, coeffs[i + slots_] / scale);
        special_fft(u);
        std::vector<double> out(slots_);
        for (std::size_t i = 0; i < slots_; ++i) out[i] = u[i].real();
        return out;
    }

    void special_fft(std::vector<cd>& v) const {
        const std::size_t size = v.size();
        bit_reverse_permute(v);
        for (std::size_t len = 2; len <= size; len <<= 1) {
            const std::size_t lenh = len >> 1, lenq = len << 2, gap = m_ / lenq;
            for (std::size_t i = 0; i < size; i += len) {
                for (std::size_t j = 0; j < lenh; ++j) {
                    const std::size_t idx = (rot_group_[j] % lenq) * gap;
                    const cd u = v[i + j];
                    const cd w = v[i + j + lenh] * ksi_[idx];
                    v[i + j] = u + w;
                    v[i + j + lenh] = u - w;
                }
            }
        }
    }

    void special_fft_inv(std::vector<cd>& v) const {
        const std::size_t size = v.size();
        for (std::size_t len = size; len >= 2; len >>= 1) {
            const std::size_t lenh = len >> 1, lenq = len << 2, gap = m_ / lenq;
            for (std::size_t i = 0; i < size; i += len) {
                for (std::size_t j = 0; j < lenh; ++j) {
                    const std::size_t idx = (lenq - (rot_group_[j] % lenq)) * gap;
                    const cd u = v[i + j] + v[i + j + lenh];
                    const cd w = (v[i + j] - v[i + j + lenh]) * ksi_[idx];
                    v[i + j] = u;
                    v[i + j + lenh] = w;
                }
            }
        }
        bit_reverse_permute(v);
        for (auto& x : v) x /= static_cast<double>(size);
    }

private:
    static void bit_reverse_permute(std::vector<cd>& v) {
        const std::size_t n = v.size();
        for (std::size_t i = 1, j = 0; i < n; ++i) {
            std::size_t bit = n >> 1;
            for (; j & bit; bit >>= 1) j ^= bit;
            j ^= bit;
            if (i < j) std::swap(v[i], v[j]);
        }
    }

    std::size_t n_, slots_, m_;
    std::vector<std::size_t> rot_group_;
    std::vector<cd> ksi_;
};

}  // namespace hegemony::ckks

#endif  // HEGEMONY_CKKS_ENCODER_HPP
