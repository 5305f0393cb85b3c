#ifndef HEGEMONY_MODEL_HPP
#define HEGEMONY_MODEL_HPP

// Network description, plaintext reference inference, encrypted inference
// over any HE backend, weight files and image loading.

#include <array>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "hegemony/enc_tensor.hpp"
#include "hegemony/he/simulator.hpp"
#include "hegemony/random.hpp"

namespace hegemony::model {

using tensor::ConvFilters;

struct Conv {
    ConvFilters filters;
};
struct SquareAct {};
struct GlobalAvgPool {};
struct Dense {
    Matrix weights;  // (outputs, inputs)
    std::vector<double> bias;
};
using Layer = std::variant<Conv, SquareAct, GlobalAvgPool, Dense>;

inline std::string layer_name(const Layer& l) {
    return std::visit(
        [](const auto& x) -> std::string {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, Conv>) return "conv";
            else if constexpr (std::is_same_v<T, SquareAct>) return "square";
            else if constexpr (std::is_same_v<T, GlobalAvgPool>) return "gap";
            else return "dense";
        },
        l);
}

/// Activation shape between layers. A pooled or dense output is a flat
/// vector; an image with one row also feeds a dense layer, its features in
/// slot order (channel-major, then column).
struct Shape {
    std::size_t height = 0, width = 0, channels = 0;
    bool flat = false;

    std::size_t features() const { return flat ? channels : height * width * channels; }
    std::string str() const {
        if (flat) return "(" + std::to_string(channels) + ")";
        return "(" + std::to_string(height) + "," + std::to_string(width) + "," + std::to_string(channels) + ")";
    }
};

struct ModelSpec {
    std::array<std::size_t, 3> input_shape{};  // (H, W, C)
    std::vector<Layer> layers;

    /// Shape after each layer; throws GeometryMismatch on the first break.
    std::vector<Shape> shapes() const {
        Shape s{input_shape[0], input_shape[1], input_shape[2], false};
        if (s.height == 0 || s.width == 0 || s.channels == 0) fail(ErrorKind::GeometryMismatch, "empty input shape");
        std::vector<Shape> out;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto where = " at layer " + std::to_string(i);
            if (const auto* c = std::get_if<Conv>(&layers[i])) {
                const auto& f = c->filters;
                if (s.flat) fail(ErrorKind::GeometryMismatch, "conv after flattening" + where, i);
                if (f.weights.rank() != 4) fail(ErrorKind::GeometryMismatch, "conv weights need rank 4" + where, i);
                if (f.in_channels() != s.channels)
                    fail(ErrorKind::GeometryMismatch,
                         "conv expects " + std::to_string(f.in_channels()) + " channels, got " + s.str() + where, i);
                if (f.kernel_height() > s.height || f.kernel_width() > s.width || f.stride == 0)
                    fail(ErrorKind::GeometryMismatch, "filter larger than activation " + s.str() + where, i);
                if (!f.bias.empty() && f.bias.size() != f.out_channels())
                    fail(ErrorKind::GeometryMismatch, "conv bias length" + where, i);
                s = {tensor::conv_out(s.height, f.kernel_height(), f.stride),
                     tensor::conv_out(s.width, f.kernel_width(), f.stride), f.out_channels(), false};
            } else if (std::holds_alternative<GlobalAvgPool>(layers[i])) {
                if (s.flat) fail(ErrorKind::GeometryMismatch, "pooling a flat vector" + where, i);
                s = {1, 1, s.channels, true};
            } else if (const auto* d = std::get_if<Dense>(&layers[i])) {
                if (!s.flat && s.height != 1)
                    fail(ErrorKind::GeometryMismatch, "dense needs a flat or single-row input, got " + s.str() + where, i);
                if (d->weights.empty()) fail(ErrorKind::GeometryMismatch, "dense with no outputs" + where, i);
                for (const auto& row : d->weights)
                    if (row.size() != s.features())
                        fail(ErrorKind::GeometryMismatch,
                             "dense expects " + std::to_string(row.size()) + " inputs, got " + s.str() + where, i);
                if (!d->bias.empty() && d->bias.size() != d->weights.size())
                    fail(ErrorKind::GeometryMismatch, "dense bias length" + where, i);
                s = {1, 1, d->weights.size(), true};
            }
            out.push_back(s);
        }
        return out;
    }

    void validate() const {
        const auto s = shapes();
        if (s.empty() || !std::holds_alternative<Dense>(layers.back()))
            fail(ErrorKind::GeometryMismatch, "the last layer must be dense");
    }

    std::size_t classes() const { return std::get<Dense>(layers.back()).weights.size(); }
    std::size_t conv_layers() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += std::holds_alternative<Conv>(l);
        return n;
    }
};

/// One level per conv, square and dense; pooling is free.
inline std::size_t depth_required(const ModelSpec& spec) {
    std::size_t d = 0;
    for (const auto& l : spec.layers) d += std::holds_alternative<GlobalAvgPool>(l) ? 0 : 1;
    return d;
}

// ---------------------------------------------------------------- plaintext

/// Reference forward pass: valid convolution, x^2, spatial mean, affine head.
inline std::vector<double> infer_plain(const ModelSpec& spec, const Tensor& image) {
    spec.validate();
    if (image.shape != std::vector<std::size_t>(spec.input_shape.begin(), spec.input_shape.end()))
        fail(ErrorKind::GeometryMismatch, "image shape " + image.shape_string() + " does not match the model input");
    Tensor x = image;
    std::vector<double> v;
    bool flat = false;
    for (const auto& layer : spec.layers) {
        if (const auto* c = std::get_if<Conv>(&layer)) {
            const auto& f = c->filters;
            const std::size_t kh = f.kernel_height(), kw = f.kernel_width(), s = f.stride;
            const std::size_t oh = (x.dim(0) - kh) / s + 1, ow = (x.dim(1) - kw) / s + 1;
            Tensor y({oh, ow, f.out_channels()});
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t o = 0; o < ow; ++o)
                    for (std::size_t k = 0; k < f.out_channels(); ++k) {
                        double acc = f.bias.empty() ? 0.0 : f.bias[k];
                        for (std::size_t j = 0; j < kh; ++j)
                            for (std::size_t t = 0; t < kw; ++t)
                                for (std::size_t ch = 0; ch < f.in_channels(); ++ch)
                                    acc += x(i * s + j, o * s + t, ch) * f.weights(j, t, ch, k);
                        y(i, o, k) = acc;
                    }
            x = std::move(y);
        } else if (std::holds_alternative<SquareAct>(layer)) {
            if (flat)
                for (auto& e : v) e *= e;
            else
                for (auto& e : x.data) e *= e;
        } else if (std::holds_alternative<GlobalAvgPool>(layer)) {
            v.assign(x.dim(2), 0.0);
            for (std::size_t i = 0; i < x.dim(0); ++i)
                for (std::size_t j = 0; j < x.dim(1); ++j)
                    for (std::size_t k = 0; k < x.dim(2); ++k) v[k] += x(i, j, k);
            for (auto& e : v) e /= static_cast<double>(x.dim(0) * x.dim(1));
            flat = true;
        } else {
            const auto& d = std::get<Dense>(layer);
            if (!flat) {
                v.clear();
                for (std::size_t k = 0; k < x.dim(2); ++k)
                    for (std::size_t j = 0; j < x.dim(1); ++j) v.push_back(x(0, j, k));
                flat = true;
            }
            std::vector<double> y(d.weights.size());
            for (std::size_t r = 0; r < y.size(); ++r) {
                double acc = d.bias.empty() ? 0.0 : d.bias[r];
                for (std::size_t c = 0; c < v.size(); ++c) acc += d.weights[r][c] * v[c];
                y[r] = acc;
            }
            v = std::move(y);
        }
    }
    return v;
}

// ---------------------------------------------------------------- encrypted

template <he::HeBackend B>
tensor::EncImage<typename B::Vector> encode_image_rows(const Tensor& image, const B& backend) {
    return tensor::encrypt_image(backend, image);
}

/// Per-layer wall time and level, filled in when a trace is requested.
struct LayerTrace {
    std::string name;
    double seconds = 0;
    std::size_t level_after = 0;
};

/// Chains the kernels along the layer list. Needs only evaluation keys. A
/// BudgetExhausted error carries the index of the layer that ran out.
template <he::HeBackend B>
typename B::Vector infer_encrypted(const ModelSpec& spec, const tensor::EncImage<typename B::Vector>& image,
                                   const B& backend, std::vector<LayerTrace>* trace = nullptr) {
    using V = typename B::Vector;
    spec.validate();
    if (image.height != spec.input_shape[0] || image.width != spec.input_shape[1] ||
        image.channels != spec.input_shape[2])
        fail(ErrorKind::GeometryMismatch, "encrypted image geometry does not match the model input");
    tensor::EncImage<V> img = image;
    std::optional<V> vec;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto start = std::chrono::steady_clock::now();
        const auto& layer = spec.layers[i];
        try {
            if (const auto* c = std::get_if<Conv>(&layer)) {
                img = tensor::conv2d(backend, c->filters, img);
            } else if (std::holds_alternative<SquareAct>(layer)) {
                if (vec) {
                    he::require_level(vec->level, "square");
                    vec = backend.square(*vec);
                } else {
                    img = tensor::square_activation(backend, img);
                }
            } else if (std::holds_alternative<GlobalAvgPool>(layer)) {
                vec = tensor::global_avg_pool(backend, img);
            } else {
                const auto& d = std::get<Dense>(layer);
                if (!vec) vec = img.rows.at(0);
                vec = tensor::dense_with_fold(backend, d.weights, d.bias, *vec);
            }
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::BudgetExhausted)
                fail(ErrorKind::BudgetExhausted,
                     "layer " + std::to_string(i) + " (" + layer_name(layer) + "): no multiplicative level left", i);
            throw;
        }
        if (trace) {
            const std::size_t level = vec ? vec->level : img.rows.at(0).level;
            trace->push_back({layer_name(layer),
                              std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), level});
        }
    }
    return *vec;
}

/// Rotation steps the encrypted pass needs, found by a dry run on the
/// simulator with the real weights (zero diagonals need no key).
inline std::vector<long> rotation_steps(const ModelSpec& spec, std::size_t slot_count) {
    he::Simulator sim(slot_count, depth_required(spec));
    const Tensor zero(std::vector<std::size_t>(spec.input_shape.begin(), spec.input_shape.end()));
    infer_encrypted(spec, encode_image_rows(zero, sim), sim);
    return sim.rotation_log();
}

// ---------------------------------------------------------------- weights

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) fail(ErrorKind::FormatError, "truncated weights file");
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}
inline void put_f32(std::ostream& os, double v) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(os, bits);
}
inline double get_f32(std::istream& is) {
    const std::uint32_t bits = get_u32(is);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}
inline void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_str(std::istream& is) {
    const auto n = get_u32(is);
    if (n > 4096) fail(ErrorKind::FormatError, "implausible name length in weights file");
    std::string s(n, '\0');
    if (!is.read(s.data(), n)) fail(ErrorKind::FormatError, "truncated weights file");
    return s;
}

struct NamedTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> data;
};

inline void put_tensor(std::ostream& os, const std::string& name, const std::vector<std::size_t>& shape,
                       const std::vector<double>& data) {
    put_str(os, name);
    put_u32(os, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put_u32(os, static_cast<std::uint32_t>(d));
    for (double v : data) put_f32(os, v);
}
inline NamedTensor get_tensor(std::istream& is) {
    NamedTensor t;
    t.name = get_str(is);
    const auto rank = get_u32(is);
    if (rank > 8) fail(ErrorKind::FormatError, "implausible tensor rank");
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        t.shape.push_back(get_u32(is));
        count *= t.shape.back();
    }
    if (count > (std::size_t{1} << 28)) fail(ErrorKind::FormatError, "implausible tensor size");
    t.data.resize(count);
    for (auto& v : t.data) v = get_f32(is);
    return t;
}

inline Matrix to_matrix(const NamedTensor& t) {
    if (t.shape.size() != 2) fail(ErrorKind::GeometryMismatch, "dense weight must have rank 2");
    Matrix m(t.shape[0], std::vector<double>(t.shape[1]));
    for (std::size_t r = 0; r < t.shape[0]; ++r)
        for (std::size_t c = 0; c < t.shape[1]; ++c) m[r][c] = t.data[r * t.shape[1] + c];
    return m;
}

enum LayerTag : std::uint32_t { kConv = 1, kSquare = 2, kPool = 3, kDense = 4 };

}  // namespace detail

inline constexpr char kWeightsMagic[4] = {'H', 'E', 'W', '1'};

/// "HEW1", input (H, W, C), layer count, then per layer a tag and its named
/// tensors ("weight", "bias") as little-endian float32 with shape headers.
/// Values are stored as float32, so saving is exact only for
/// float-representable weights.
inline void save_weights(std::ostream& os, const ModelSpec& spec) {
    spec.validate();
    os.write(kWeightsMagic, 4);
    for (auto d : spec.input_shape) detail::put_u32(os, static_cast<std::uint32_t>(d));
    detail::put_u32(os, static_cast<std::uint32_t>(spec.layers.size()));
    for (const auto& layer : spec.layers) {
        if (const auto* c = std::get_if<Conv>(&layer)) {
            detail::put_u32(os, detail::kConv);
            detail::put_u32(os, static_cast<std::uint32_t>(c->filters.stride));
            detail::put_u32(os, 2);
            detail::put_tensor(os, "weight", c->filters.weights.shape, c->filters.weights.data);
            detail::put_tensor(os, "bias", {c->filters.bias.size()}, c->filters.bias);
        } else if (std::holds_alternative<SquareAct>(layer)) {
            detail::put_u32(os, detail::kSquare);
        } else if (std::holds_alternative<GlobalAvgPool>(layer)) {
            detail::put_u32(os, detail::kPool);
        } else {
            const auto& d = std::get<Dense>(layer);
            detail::put_u32(os, detail::kDense);
            detail::put_u32(os, 2);
            std::vector<double> flat;
            for (const auto& row : d.weights) flat.insert(flat.end(), row.begin(), row.end());
            detail::put_tensor(os, "weight", {d.weights.size(), d.weights[0].size()}, flat);
            detail::put_tensor(os, "bias", {d.bias.size()}, d.bias);
        }
    }
}

inline ModelSpec load_weights(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kWeightsMagic, 4) != 0)
        fail(ErrorKind::FormatError, "not a HEW1 weights file");
    ModelSpec spec;
    for (auto& d : spec.input_shape) d = detail::get_u32(is);
    const auto count = detail::get_u32(is);
    if (count > 1024) fail(ErrorKind::FormatError, "implausible layer count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto tag = detail::get_u32(is);
        auto read_pair = [&](std::size_t rank) {
            if (detail::get_u32(is) != 2) fail(ErrorKind::FormatError, "layer " + std::to_string(i) + ": expected 2 tensors");
            auto w = detail::get_tensor(is);
            auto b = detail::get_tensor(is);
            if (w.name != "weight" || b.name != "bias") fail(ErrorKind::FormatError, "unexpected tensor names");
            if (w.shape.size() != rank || b.shape.size() != 1)
                fail(ErrorKind::GeometryMismatch, "layer " + std::to_string(i) + ": tensor rank mismatch", i);
            return std::pair{std::move(w), std::move(b)};
        };
        switch (tag) {
            case detail::kConv: {
                const auto stride = detail::get_u32(is);
                auto [w, b] = read_pair(4);
                Tensor t(w.shape);
                t.data = std::move(w.data);
                spec.layers.push_back(Conv{{std::move(t), stride, std::move(b.data)}});
                break;
            }
            case detail::kSquare: spec.layers.push_back(SquareAct{}); break;
            case detail::kPool: spec.layers.push_back(GlobalAvgPool{}); break;
            case detail::kDense: {
                auto [w, b] = read_pair(2);
                spec.layers.push_back(Dense{detail::to_matrix(w), std::move(b.data)});
                break;
            }
            default: fail(ErrorKind::FormatError, "unknown layer tag " + std::to_string(tag));
        }
    }
    spec.validate();
    return spec;
}

inline void save_weights(const std::string& path, const ModelSpec& spec) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorKind::FormatError, "cannot write " + path);
    save_weights(os, spec);
}

inline ModelSpec load_weights(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorKind::FormatError, "cannot open " + path);
    return load_weights(is);
}

// ---------------------------------------------------------------- images

/// CSV: one image row per line, W*C comma-separated floats per line in
/// (column, channel) order. Values are taken as given.
inline Tensor load_csv_image(std::istream& is, std::size_t channels = 1) {
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(is, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(cell, &used));
                if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(cell);
            } catch (const std::logic_error&) {
                fail(ErrorKind::FormatError, "bad CSV value '" + cell + "'");
            }
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) fail(ErrorKind::FormatError, "empty CSV image");
    const std::size_t wc = rows[0].size();
    if (channels == 0 || wc % channels != 0) fail(ErrorKind::GeometryMismatch, "CSV row length not a multiple of channels");
    Tensor t({rows.size(), wc / channels, channels});
    for (std::size_t y = 0; y < rows.size(); ++y) {
        if (rows[y].size() != wc) fail(ErrorKind::FormatError, "ragged CSV image");
        std::copy(rows[y].begin(), rows[y].end(), t.data.begin() + static_cast<std::ptrdiff_t>(y * wc));
    }
    return t;
}

/// Binary 8-bit PGM (P5), scaled to [0, 1].
inline Tensor load_pgm_image(std::istream& is) {
    auto token = [&]() {
        std::string tok;
        char ch;
        while (is.get(ch)) {
            if (ch == '#') {
                std::string rest;
                std::getline(is, rest);
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(ch))) {
                if (!tok.empty()) break;
                continue;
            }
            tok.push_back(ch);
        }
        return tok;
    };
    if (token() != "P5") fail(ErrorKind::FormatError, "not a binary PGM (P5)");
    std::size_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoul(token());
        h = std::stoul(token());
        maxval = std::stoul(token());
    } catch (const std::logic_error&) {
        fail(ErrorKind::FormatError, "bad PGM header");
    }
    if (w == 0 || h == 0 || maxval == 0 || maxval > 255) fail(ErrorKind::FormatError, "only 8-bit PGM is supported");
    std::vector<unsigned char> px(w * h);
    if (!is.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size())))
        fail(ErrorKind::FormatError, "truncated PGM pixel data");
    Tensor t({h, w, 1});
    for (std::size_t i = 0; i < px.size(); ++i) t.data[i] = px[i] / static_cast<double>(maxval);
    return t;
}

inline Tensor load_image(const std::string& path, std::size_t channels = 1) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorKind::FormatError, "cannot open " + path);
    const bool pgm = path.size() >= 4 && path.compare(path.size() - 4, 4, ".pgm") == 0;
    return pgm ? load_pgm_image(is) : load_csv_image(is, channels);
}

// ---------------------------------------------------------------- generators

struct RandomSpecOptions {
    std::size_t size = 32;       // square input side
    std::size_t in_channels = 1;
    std::size_t conv_layers = 2;
    std::size_t channels = 4;    // output channels of every conv
    std::size_t kernel = 5;
    std::size_t stride = 0;      // 0 picks the largest of 4, 2, 1 that fits
    std::size_t classes = 2;
};

/// Largest stride in {4, 2, 1} that leaves every conv output at least one
/// pixel wide.
inline std::size_t fitting_stride(std::size_t size, std::size_t kernel, std::size_t convs) {
    for (std::size_t s : {4, 2, 1}) {
        std::size_t x = size;
        bool ok = true;
        for (std::size_t i = 0; i < convs && ok; ++i) {
            if (x < kernel) ok = false;
            else x = (x - kernel) / s + 1;
        }
        if (ok) return s;
    }
    fail(ErrorKind::GeometryMismatch, "no stride fits " + std::to_string(convs) + " convolutions on " +
                                          std::to_string(size) + " pixels");
}

/// conv, square repeated, then GAP and one dense head. Weights are uniform
/// in +-1/sqrt(fan_in), rounded to float32 so weight files are exact.
inline ModelSpec random_spec(const RandomSpecOptions& o, std::uint64_t seed) {
    auto rng = RandomSource::seeded(seed);
    auto draw = [&](double bound) { return static_cast<double>(static_cast<float>(rng.uniform_real(-bound, bound))); };
    const std::size_t stride = o.stride ? o.stride : fitting_stride(o.size, o.kernel, o.conv_layers);
    ModelSpec spec;
    spec.input_shape = {o.size, o.size, o.in_channels};
    std::size_t cin = o.in_channels;
    for (std::size_t i = 0; i < o.conv_layers; ++i) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(o.kernel * o.kernel * cin));
        Tensor w({o.kernel, o.kernel, cin, o.channels});
        for (auto& v : w.data) v = draw(bound);
        std::vector<double> b(o.channels);
        for (auto& v : b) v = draw(0.1);
        spec.layers.push_back(Conv{{std::move(w), stride, std::move(b)}});
        spec.layers.push_back(SquareAct{});
        cin = o.channels;
    }
    spec.layers.push_back(GlobalAvgPool{});
    Matrix w(o.classes, std::vector<double>(cin));
    for (auto& row : w)
        for (auto& v : row) v = draw(1.0 / std::sqrt(static_cast<double>(cin)));
    std::vector<double> b(o.classes);
    for (auto& v : b) v = draw(0.1);
    spec.layers.push_back(Dense{std::move(w), std::move(b)});
    spec.validate();
    return spec;
}

inline Tensor random_image(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
    auto rng = RandomSource::seeded(seed);
    Tensor t({h, w, c});
    for (auto& v : t.data) v = rng.uniform_real();
    return t;
}

}  // namespace hegemony::model

#endif  // HEGEMONY_MODEL_HPP
