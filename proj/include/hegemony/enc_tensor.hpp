#ifndef HEGEMONY_ENC_TENSOR_HPP
#define HEGEMONY_ENC_TENSOR_HPP

// Encrypted tensor kernels written against the HeBackend contract:
// diagonal-order matrix-vector product, row-encoded convolution through
// Toeplitz matrices, square activation, rotate-and-add global average pooling
// and the dense layer that absorbs pooling's deferred scale and mask.

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hegemony/he/backend.hpp"
#include "hegemony/parallel.hpp"
#include "hegemony/tensor.hpp"

namespace hegemony::tensor {

/// rows[i][j] = A[j, (j + i) mod size] of the zero-padded square matrix.
struct DiagMatrix {
    std::vector<std::vector<double>> rows;
    std::size_t orig_rows = 0;
    std::size_t orig_cols = 0;

    std::size_t size() const { return rows.size(); }
};

inline DiagMatrix diagonalize(const Matrix& a, std::size_t min_size = 0) {
    const std::size_t r = a.size();
    const std::size_t c = r ? a[0].size() : 0;
    for (const auto& row : a)
        if (row.size() != c) fail(ErrorKind::GeometryMismatch, "ragged matrix");
    const std::size_t size = std::max({r, c, min_size});
    DiagMatrix d{std::vector<std::vector<double>>(size, std::vector<double>(size, 0.0)), r, c};
    for (std::size_t i = 0; i < size; ++i)
        for (std::size_t j = 0; j < r; ++j) {
            const std::size_t col = (j + i) % size;
            if (col < c) d.rows[i][j] = a[j][col];
        }
    return d;
}

/// Row r holds `filter_row` starting at column r*stride.
inline Matrix toeplitz_from_filter(const std::vector<double>& filter_row, std::size_t in_width, std::size_t stride,
                                   std::size_t column_offset = 0, std::size_t total_cols = 0) {
    if (filter_row.empty() || in_width < filter_row.size() || stride == 0)
        fail(ErrorKind::GeometryMismatch, "filter wider than the input row");
    const std::size_t out_width = (in_width - filter_row.size()) / stride + 1;
    const std::size_t cols = std::max(total_cols, column_offset + in_width);
    Matrix m(out_width, std::vector<double>(cols, 0.0));
    for (std::size_t r = 0; r < out_width; ++r)
        for (std::size_t t = 0; t < filter_row.size(); ++t) m[r][column_offset + r * stride + t] = filter_row[t];
    return m;
}

/// One filter row for one output channel, all input channels at once: the
/// input row holds channel c at slots [c*width, (c+1)*width), so each input
/// channel contributes its own Toeplitz block at column offset c*width.
/// `slice(t, c)` is the filter weight at column t, input channel c.
template <class Slice>
Matrix widened_toeplitz(Slice slice, std::size_t kernel_width, std::size_t in_channels, std::size_t in_width,
                        std::size_t stride) {
    const std::size_t cols = in_width * in_channels;
    Matrix out;
    for (std::size_t c = 0; c < in_channels; ++c) {
        std::vector<double> row(kernel_width);
        for (std::size_t t = 0; t < kernel_width; ++t) row[t] = slice(t, c);
        const Matrix block = toeplitz_from_filter(row, in_width, stride, c * in_width, cols);
        if (out.empty()) {
            out = block;
            continue;
        }
        for (std::size_t r = 0; r < out.size(); ++r)
            for (std::size_t k = 0; k < cols; ++k) out[r][k] += block[r][k];
    }
    return out;
}

/// Diagonal matrix encoded for one ciphertext level: only nonzero diagonals
/// are kept, each tied to the rotation step that feeds it.
template <he::HeBackend B>
struct EncodedMatrix {
    std::size_t size = 0;
    std::size_t rows = 0;
    std::size_t level = 0;
    bool wraps = false;             // some product reads past slot size-1
    std::vector<long> steps;        // diagonal indices with a nonzero entry
    std::vector<typename B::Plain> plains;
    std::set<std::size_t> reads;    // slots of the (doubled) input that are read
};

template <he::HeBackend B>
EncodedMatrix<B> encode_matrix(const B& backend, const DiagMatrix& d, std::size_t level) {
    EncodedMatrix<B> em;
    em.size = d.size();
    em.rows = d.orig_rows;
    em.level = level;
    if (em.size > backend.slot_count()) fail(ErrorKind::GeometryMismatch, "matrix larger than the slot count");
    for (std::size_t i = 0; i < em.size; ++i) {
        const auto& diag = d.rows[i];
        bool any = false;
        for (std::size_t j = 0; j < em.size; ++j) {
            if (diag[j] == 0.0) continue;
            any = true;
            em.reads.insert(j + i);
            if (j + i >= em.size) em.wraps = true;
        }
        if (!any) continue;
        em.steps.push_back(static_cast<long>(i));
        em.plains.push_back(backend.encode_plain(diag, level));
    }
    return em;
}

/// Whether products of `em` with `x` only see valid data. Without wrap every
/// read slot must be valid. With wrap the input is doubled as
/// d = x + rot(x, -size): a read at s < size also picks up x[s - size], a
/// read at s >= size picks up x[s], and both must be zero.
inline bool layout_admits(const he::SlotLayout& x, const std::set<std::size_t>& reads, std::size_t size,
                          bool wraps, std::size_t slots) {
    for (std::size_t s : reads) {
        const std::size_t col = s % size;
        if (!x.valid.contains(col)) return false;
        if (!wraps) continue;
        if (s >= slots) return false;
        if (s < size) {
            if (x.support.contains((s + slots - size) % slots)) return false;
        } else if (x.support.contains(s)) {
            return false;
        }
    }
    return true;
}

template <he::HeBackend B>
typename B::Vector apply_encoded(const B& backend, const EncodedMatrix<B>& em, const typename B::Vector& x) {
    using V = typename B::Vector;
    if (em.steps.empty()) {
        // All-zero matrix: multiply by zero to keep the level ledger uniform.
        const std::vector<double> zero(1, 0.0);
        V out = backend.mul_plain(x, zero);
        out.layout.valid = he::IntervalSet::range(0, em.rows);
        return out;
    }
    if (!layout_admits(x.layout, em.reads, em.size, em.wraps, backend.slot_count()))
        fail(ErrorKind::LayoutMismatch, "input layout would let garbage or wrapped slots into the product");
    const V doubled = em.wraps ? backend.add(x, backend.rotate(x, -static_cast<long>(em.size))) : x;
    const auto rots = backend.rotate_many(doubled, em.steps);
    std::vector<std::pair<const V*, const typename B::Plain*>> terms;
    terms.reserve(rots.size());
    for (std::size_t t = 0; t < rots.size(); ++t) terms.emplace_back(&rots[t], &em.plains[t]);
    V out = backend.dot_plain(terms);
    out.layout.valid = he::IntervalSet::range(0, em.rows);
    return out;
}

/// b = sum_i A_diag[i] * rot(x, i), one level. The input must sit in the
/// leading slots; wrapped reads use the doubling b + rot(b, -size).
template <he::HeBackend B>
typename B::Vector matvec(const B& backend, const DiagMatrix& a, const typename B::Vector& x) {
    he::require_level(x.level, "matvec");
    return apply_encoded(backend, encode_matrix(backend, a, x.level), x);
}

/// One ciphertext per image row; channel c of row y lives at slots
/// [c*channel_stride, c*channel_stride + width).
template <class V>
struct EncImage {
    std::vector<V> rows;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::size_t channel_stride = 0;
};

/// Row y of an (H, W, C) tensor as slot values: channel c, column x at c*W + x.
inline std::vector<double> image_row(const Tensor& img, std::size_t y) {
    const std::size_t w = img.dim(1), c = img.dim(2);
    std::vector<double> row(w * c);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t x = 0; x < w; ++x) row[ch * w + x] = img(y, x, ch);
    return row;
}

template <he::HeBackend B>
EncImage<typename B::Vector> encrypt_image(const B& backend, const Tensor& img) {
    if (img.rank() != 3) fail(ErrorKind::GeometryMismatch, "image must have shape (H, W, C)");
    if (img.dim(1) * img.dim(2) > backend.slot_count())
        fail(ErrorKind::GeometryMismatch, "image row " + std::to_string(img.dim(1) * img.dim(2)) +
                                              " does not fit in " + std::to_string(backend.slot_count()) + " slots");
    EncImage<typename B::Vector> out{{}, img.dim(0), img.dim(1), img.dim(2), img.dim(1)};
    for (std::size_t y = 0; y < img.dim(0); ++y) out.rows.push_back(backend.encrypt_vec(image_row(img, y)));
    return out;
}

/// Inverse of encrypt_image, reading only each row's leading width*channels slots.
template <he::HeBackend B>
Tensor decrypt_image(const B& backend, const EncImage<typename B::Vector>& img) {
    Tensor out({img.height, img.width, img.channels});
    for (std::size_t y = 0; y < img.height; ++y) {
        const auto d = backend.decrypt_vec(img.rows[y]);
        for (std::size_t c = 0; c < img.channels; ++c)
            for (std::size_t x = 0; x < img.width; ++x) out(y, x, c) = d[c * img.channel_stride + x];
    }
    return out;
}

/// weights has shape (kh, kw, in_channels, out_channels).
struct ConvFilters {
    Tensor weights;
    std::size_t stride = 1;
    std::vector<double> bias;

    std::size_t kernel_height() const { return weights.dim(0); }
    std::size_t kernel_width() const { return weights.dim(1); }
    std::size_t in_channels() const { return weights.dim(2); }
    std::size_t out_channels() const { return weights.dim(3); }
};

inline std::size_t conv_out(std::size_t in, std::size_t kernel, std::size_t stride) {
    if (kernel > in || stride == 0) fail(ErrorKind::GeometryMismatch, "filter larger than image");
    return (in - kernel) / stride + 1;
}

template <he::HeBackend B>
EncImage<typename B::Vector> conv2d(const B& backend, const ConvFilters& f, const EncImage<typename B::Vector>& img) {
    using V = typename B::Vector;
    if (f.weights.rank() != 4) fail(ErrorKind::GeometryMismatch, "conv weights must have rank 4");
    if (f.in_channels() != img.channels)
        fail(ErrorKind::GeometryMismatch, "filter expects " + std::to_string(f.in_channels()) + " input channels, image has " +
                                              std::to_string(img.channels));
    if (img.channel_stride != img.width) fail(ErrorKind::GeometryMismatch, "channel blocks must be contiguous");
    if (img.rows.size() != img.height || img.rows.empty()) fail(ErrorKind::GeometryMismatch, "row count mismatch");
    const std::size_t kh = f.kernel_height(), kw = f.kernel_width(), cout = f.out_channels(), s = f.stride;
    const std::size_t out_h = conv_out(img.height, kh, s);
    const std::size_t out_w = conv_out(img.width, kw, s);
    const std::size_t slots = backend.slot_count();
    if (img.width * img.channels > slots || out_w * cout > slots)
        fail(ErrorKind::GeometryMismatch, "row does not fit in one ciphertext");
    if (!f.bias.empty() && f.bias.size() != cout) fail(ErrorKind::GeometryMismatch, "bias length mismatch");

    std::size_t level = img.rows[0].level;
    for (const auto& r : img.rows) level = std::min(level, r.level);
    he::require_level(level, "conv2d");

    // Encoded Toeplitz diagonals per (filter row j, output channel k).
    std::vector<std::vector<EncodedMatrix<B>>> enc(kh);
    std::set<long> step_set;
    bool wraps = false;
    std::size_t size = 0;
    for (std::size_t j = 0; j < kh; ++j)
        for (std::size_t k = 0; k < cout; ++k) {
            const Matrix t = widened_toeplitz([&](std::size_t col, std::size_t c) { return f.weights(j, col, c, k); },
                                              kw, img.channels, img.width, s);
            enc[j].push_back(encode_matrix(backend, diagonalize(t), level));
            const auto& em = enc[j].back();
            step_set.insert(em.steps.begin(), em.steps.end());
            wraps = wraps || em.wraps;
            size = em.size;
        }
    const std::vector<long> steps(step_set.begin(), step_set.end());
    std::map<long, std::size_t> step_pos;
    for (std::size_t p = 0; p < steps.size(); ++p) step_pos[steps[p]] = p;

    for (std::size_t j = 0; j < kh; ++j)
        for (const auto& em : enc[j])
            for (std::size_t y = 0; y < img.height; ++y)
                if (!layout_admits(img.rows[y].layout, em.reads, em.size, em.wraps, slots))
                    fail(ErrorKind::LayoutMismatch, "conv2d input row layout mismatch");

    // Rotations of each input row are computed once (hoisted) and dropped
    // when no later output row needs them.
    std::map<std::size_t, std::vector<V>> rotated;
    auto ensure_rows = [&](std::size_t first) {
        while (!rotated.empty() && rotated.begin()->first < first) rotated.erase(rotated.begin());
        for (std::size_t y = first; y < first + kh; ++y) {
            if (rotated.count(y)) continue;
            const V& x = img.rows[y];
            const V doubled = wraps ? backend.add(x, backend.rotate(x, -static_cast<long>(size))) : x;
            rotated.emplace(y, backend.rotate_many(doubled, steps));
        }
    };

    std::vector<double> bias_row;
    if (!f.bias.empty()) {
        bias_row.assign(out_w * cout, 0.0);
        for (std::size_t k = 0; k < cout; ++k)
            for (std::size_t x = 0; x < out_w; ++x) bias_row[k * out_w + x] = f.bias[k];
    }

    EncImage<V> out{{}, out_h, out_w, cout, out_w};
    for (std::size_t i = 0; i < out_h; ++i) {
        ensure_rows(i * s);
        std::vector<V> channel(cout);
        parallel_for(cout, [&](std::size_t k) {
            std::vector<std::pair<const V*, const typename B::Plain*>> terms;
            for (std::size_t j = 0; j < kh; ++j) {
                const auto& rots = rotated.at(i * s + j);
                const auto& em = enc[j][k];
                for (std::size_t t = 0; t < em.steps.size(); ++t)
                    terms.emplace_back(&rots[step_pos.at(em.steps[t])], &em.plains[t]);
            }
            V acc = terms.empty() ? backend.mul_plain(img.rows[i * s], std::vector<double>(1, 0.0))
                                  : backend.dot_plain(terms);
            if (k > 0) acc = backend.rotate(acc, -static_cast<long>(out_w * k));
            channel[k] = std::move(acc);
        });
        V row = std::move(channel[0]);
        for (std::size_t k = 1; k < cout; ++k) row = backend.add(row, channel[k]);
        if (!bias_row.empty()) row = backend.add_plain(row, bias_row);
        row.layout.valid = he::IntervalSet::range(0, out_w * cout);
        out.rows.push_back(std::move(row));
    }
    return out;
}

template <he::HeBackend B>
EncImage<typename B::Vector> square_activation(const B& backend, const EncImage<typename B::Vector>& img) {
    EncImage<typename B::Vector> out = img;
    for (auto& r : out.rows) r = backend.square(r);
    return out;
}

/// Channel sums land at slot c*width; everything else is garbage. No level
/// is consumed. The 1/(H*W) divisor and the mask are left to the next
/// plaintext multiplication.
template <he::HeBackend B>
typename B::Vector global_avg_pool(const B& backend, const EncImage<typename B::Vector>& img) {
    using V = typename B::Vector;
    if (img.rows.empty()) fail(ErrorKind::GeometryMismatch, "global_avg_pool needs at least one row");
    V sum = img.rows[0];
    for (std::size_t y = 1; y < img.rows.size(); ++y) sum = backend.add(sum, img.rows[y]);
    V out = sum;
    if (img.width > 1) {
        std::vector<long> steps;
        for (std::size_t t = 1; t < img.width; ++t) steps.push_back(static_cast<long>(t));
        for (const auto& r : backend.rotate_many(sum, steps)) out = backend.add(out, r);
    }
    std::vector<std::size_t> bases;
    for (std::size_t c = 0; c < img.channels; ++c) bases.push_back(c * img.channel_stride);
    out.layout.valid = he::IntervalSet::points(bases);
    out.layout.pending_scale = sum.layout.pending_scale / static_cast<double>(img.height * img.width);
    out.layout.pending_mask = true;
    return out;
}

/// Dense layer whose plaintext matrix absorbs x's pending scale and zeroes
/// every column that is not a valid slot. Feature f is the f-th valid slot.
template <he::HeBackend B>
typename B::Vector dense_with_fold(const B& backend, const Matrix& w, const std::vector<double>& bias,
                                   const typename B::Vector& x) {
    he::require_level(x.level, "dense");
    const auto features = x.layout.valid.slots();
    const std::size_t out_dim = w.size();
    if (out_dim == 0) fail(ErrorKind::GeometryMismatch, "dense layer has no outputs");
    for (const auto& row : w)
        if (row.size() != features.size())
            fail(ErrorKind::GeometryMismatch, "dense expects " + std::to_string(row.size()) + " features, input has " +
                                                  std::to_string(features.size()));
    if (!bias.empty() && bias.size() != out_dim) fail(ErrorKind::GeometryMismatch, "bias length mismatch");

    const std::size_t cols = features.empty() ? 1 : features.back() + 1;
    Matrix folded(out_dim, std::vector<double>(cols, 0.0));
    for (std::size_t r = 0; r < out_dim; ++r)
        for (std::size_t f = 0; f < features.size(); ++f) folded[r][features[f]] = w[r][f] * x.layout.pending_scale;

    // Smallest padded size whose doubling keeps garbage out of the product.
    // Entry (r, c) sits on diagonal (c - r) mod size and reads slot r + that.
    const std::size_t slots = backend.slot_count();
    std::optional<std::size_t> chosen;
    for (std::size_t size = std::max(out_dim, cols); size <= slots; ++size) {
        std::set<std::size_t> reads;
        bool wraps = false;
        for (std::size_t r = 0; r < out_dim; ++r)
            for (std::size_t c : features) {
                if (folded[r][c] == 0.0) continue;
                const std::size_t s = r + (c + size - r) % size;
                reads.insert(s);
                wraps = wraps || s >= size;
            }
        if (layout_admits(x.layout, reads, size, wraps, slots)) {
            chosen = size;
            break;
        }
    }
    if (!chosen) fail(ErrorKind::LayoutMismatch, "no padding keeps pooled garbage out of the dense product");

    auto y = apply_encoded(backend, encode_matrix(backend, diagonalize(folded, *chosen), x.level), x);
    y.layout.pending_scale = 1.0;
    if (!bias.empty()) y = backend.add_plain(y, bias);
    y.layout = he::SlotLayout::prefix(out_dim);
    return y;
}

}  // namespace hegemony::tensor

#endif  // HEGEMONY_ENC_TENSOR_HPP
