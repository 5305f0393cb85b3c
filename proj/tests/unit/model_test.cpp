#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hegemony/ckks/ckks.hpp"
#include "hegemony/model.hpp"

using namespace hegemony;
using namespace hegemony::model;

namespace {

template <class F>
const Error* caught(F&& f) {
    static thread_local std::optional<Error> last;
    try {
        f();
    } catch (const Error& e) {
        last = e;
        return &*last;
    }
    return nullptr;
}

// Second forward pass written independently: every conv becomes an explicit
// im2col matrix product, pooling a dot with a ones vector.
std::vector<double> im2col_forward(const ModelSpec& spec, const Tensor& image) {
    std::vector<std::vector<std::vector<double>>> act(image.dim(2));  // [c][y][x]
    for (std::size_t c = 0; c < image.dim(2); ++c) {
        act[c].assign(image.dim(0), std::vector<double>(image.dim(1)));
        for (std::size_t y = 0; y < image.dim(0); ++y)
            for (std::size_t x = 0; x < image.dim(1); ++x) act[c][y][x] = image(y, x, c);
    }
    std::vector<double> flat;
    for (const auto& layer : spec.layers) {
        if (const auto* conv = std::get_if<Conv>(&layer)) {
            const auto& f = conv->filters;
            const std::size_t h = act[0].size(), w = act[0][0].size();
            const std::size_t oh = (h - f.kernel_height()) / f.stride + 1, ow = (w - f.kernel_width()) / f.stride + 1;
            // patches[p][q]: p = output pixel, q = (c, j, t)
            std::vector<std::vector<double>> patches;
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t o = 0; o < ow; ++o) {
                    std::vector<double> patch;
                    for (std::size_t c = 0; c < act.size(); ++c)
                        for (std::size_t j = 0; j < f.kernel_height(); ++j)
                            for (std::size_t t = 0; t < f.kernel_width(); ++t)
                                patch.push_back(act[c][i * f.stride + j][o * f.stride + t]);
                    patches.push_back(std::move(patch));
                }
            std::vector<std::vector<std::vector<double>>> next(f.out_channels());
            for (std::size_t k = 0; k < f.out_channels(); ++k) {
                std::vector<double> kernel;
                for (std::size_t c = 0; c < act.size(); ++c)
                    for (std::size_t j = 0; j < f.kernel_height(); ++j)
                        for (std::size_t t = 0; t < f.kernel_width(); ++t) kernel.push_back(f.weights(j, t, c, k));
                next[k].assign(oh, std::vector<double>(ow));
                for (std::size_t p = 0; p < patches.size(); ++p) {
                    double dot = 0;
                    for (std::size_t q = 0; q < kernel.size(); ++q) dot += patches[p][q] * kernel[q];
                    next[k][p / ow][p % ow] = dot + (f.bias.empty() ? 0.0 : f.bias[k]);
                }
            }
            act = std::move(next);
        } else if (std::holds_alternative<SquareAct>(layer)) {
            if (!flat.empty()) {
                for (auto& v : flat) v = v * v;
            } else {
                for (auto& ch : act)
                    for (auto& row : ch)
                        for (auto& v : row) v = v * v;
            }
        } else if (std::holds_alternative<GlobalAvgPool>(layer)) {
            flat.clear();
            for (const auto& ch : act) {
                double s = 0;
                std::size_t n = 0;
                for (const auto& row : ch)
                    for (double v : row) s += v * 1.0, ++n;
                flat.push_back(s / double(n));
            }
        } else {
            const auto& d = std::get<Dense>(layer);
            if (flat.empty())
                for (const auto& ch : act) flat.insert(flat.end(), ch[0].begin(), ch[0].end());
            std::vector<double> y;
            for (std::size_t r = 0; r < d.weights.size(); ++r) {
                double s = d.bias.empty() ? 0.0 : d.bias[r];
                for (std::size_t c = 0; c < flat.size(); ++c) s += d.weights[r][c] * flat[c];
                y.push_back(s);
            }
            flat = std::move(y);
        }
    }
    return flat;
}

std::size_t argmax(const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

ModelSpec spec_with(std::size_t convs, std::size_t size = 32, std::uint64_t seed = 1) {
    RandomSpecOptions o;
    o.size = size;
    o.conv_layers = convs;
    return random_spec(o, seed);
}

}  // namespace

TEST(InferPlain, ZeroWeightsGiveBias) {
    auto spec = spec_with(2);
    for (auto& l : spec.layers) {
        if (auto* c = std::get_if<Conv>(&l)) {
            std::fill(c->filters.weights.data.begin(), c->filters.weights.data.end(), 0.0);
            std::fill(c->filters.bias.begin(), c->filters.bias.end(), 0.0);
        }
        if (auto* d = std::get_if<Dense>(&l))
            for (auto& row : d->weights) std::fill(row.begin(), row.end(), 0.0);
    }
    const auto logits = infer_plain(spec, random_image(32, 32, 1, 3));
    EXPECT_EQ(logits, std::get<Dense>(spec.layers.back()).bias);
}

TEST(InferPlain, SingleDenseByHand) {
    ModelSpec spec{{1, 1, 1}, {Dense{{{2.0}, {-3.0}}, {0.5, 1.0}}}};
    const auto logits = infer_plain(spec, Tensor({1, 1, 1}, 4.0));
    EXPECT_EQ(logits, (std::vector<double>{8.5, -11.0}));
}

TEST(InferPlain, MatchesIndependentIm2col) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        RandomSpecOptions o;
        o.conv_layers = 2;
        o.in_channels = 1 + seed % 3;
        o.channels = 2 + seed % 4;
        o.classes = 2 + seed % 5;
        const auto spec = random_spec(o, seed);
        const auto img = random_image(32, 32, o.in_channels, seed + 100);
        const auto a = infer_plain(spec, img);
        const auto b = im2col_forward(spec, img);
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
    }
}

TEST(InferPlain, RejectsWrongImageShape) {
    const auto* e = caught([] { infer_plain(spec_with(2), random_image(31, 32, 1, 1)); });
    ASSERT_NE(e, nullptr);
    EXPECT_EQ(e->kind(), ErrorKind::GeometryMismatch);
}

TEST(Geometry, StrideSelection) {
    EXPECT_EQ(fitting_stride(32, 5, 2), 4u);  // 32 -> 7 -> 1
    EXPECT_EQ(fitting_stride(32, 5, 3), 2u);  // 32 -> 14 -> 5 -> 1
    EXPECT_EQ(fitting_stride(112, 5, 3), 4u);  // 112 -> 27 -> 6 -> 1
    const auto shapes = spec_with(3).shapes();
    EXPECT_EQ(shapes[0].height, 14u);
    EXPECT_EQ(shapes[2].height, 5u);
    EXPECT_EQ(shapes[4].height, 1u);
}

TEST(Geometry, MismatchedLayersRejected) {
    auto spec = spec_with(2);
    std::get<Dense>(spec.layers.back()).weights[0].push_back(1.0);
    const auto* e = caught([&] { spec.validate(); });
    ASSERT_NE(e, nullptr);
    EXPECT_EQ(e->kind(), ErrorKind::GeometryMismatch);
    EXPECT_EQ(e->index(), spec.layers.size() - 1);
    ModelSpec no_head{{4, 4, 1}, {GlobalAvgPool{}}};
    EXPECT_NE(caught([&] { no_head.validate(); }), nullptr);
}

TEST(Depth, KnownNetworks) {
    EXPECT_EQ(depth_required(spec_with(2)), 5u);
    EXPECT_EQ(depth_required(spec_with(3)), 7u);
    EXPECT_EQ(depth_required(ModelSpec{{1, 1, 3}, {Dense{{{1, 2, 3}}, {0}}}}), 1u);
}

TEST(Depth, MatchesSimulatorLedgerOnRandomLayerLists) {
    auto rng = RandomSource::seeded(5);
    for (int trial = 0; trial < 40; ++trial) {
        ModelSpec spec;
        const std::size_t size = 8 + rng.uniform(9), cin = 1 + rng.uniform(2);
        spec.input_shape = {size, size, cin};
        std::size_t h = size, c = cin;
        const std::size_t convs = rng.uniform(3);
        for (std::size_t i = 0; i < convs && h >= 2; ++i) {
            const std::size_t k = 1 + rng.uniform(std::min<std::size_t>(h, 3));
            const std::size_t cout = 1 + rng.uniform(3), stride = 1 + rng.uniform(2);
            Tensor w({k, k, c, cout});
            for (auto& v : w.data) v = rng.uniform_real(-1, 1);
            spec.layers.push_back(Conv{{std::move(w), stride, std::vector<double>(cout, 0.25)}});
            h = (h - k) / stride + 1;
            c = cout;
            if (rng.uniform(2)) spec.layers.push_back(SquareAct{});
        }
        spec.layers.push_back(GlobalAvgPool{});
        const std::size_t heads = 1 + rng.uniform(2);
        for (std::size_t i = 0; i < heads; ++i) {
            const std::size_t out = 1 + rng.uniform(4);
            Matrix w(out, std::vector<double>(c));
            for (auto& row : w)
                for (auto& v : row) v = rng.uniform_real(-1, 1);
            spec.layers.push_back(Dense{std::move(w), std::vector<double>(out, 0.5)});
            c = out;
            if (i + 1 < heads && rng.uniform(2)) spec.layers.push_back(SquareAct{});
        }
        const std::size_t depth = depth_required(spec);
        he::Simulator sim(1024, depth);
        const auto img = random_image(size, size, cin, trial);
        const auto out = infer_encrypted(spec, encode_image_rows(img, sim), sim);
        EXPECT_EQ(out.level, 0u) << "trial " << trial;
        const auto want = infer_plain(spec, img);
        const auto got = sim.decrypt_vec(out);
        for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-9 * (1 + std::fabs(want[i])));
    }
}

TEST(InferEncrypted, SimulatorMatchesPlain) {
    for (std::size_t convs : {2, 3}) {
        const auto spec = spec_with(convs);
        he::Simulator sim(4096, depth_required(spec));
        const auto img = random_image(32, 32, 1, 9);
        const auto enc = encode_image_rows(img, sim);
        EXPECT_EQ(enc.rows.size(), 32u);
        std::vector<LayerTrace> trace;
        const auto out = infer_encrypted(spec, enc, sim, &trace);
        EXPECT_EQ(trace.size(), spec.layers.size());
        EXPECT_EQ(out.level, 0u);
        const auto want = infer_plain(spec, img);
        const auto got = sim.decrypt_vec(out);
        for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
    }
}

TEST(InferEncrypted, ThreeConvAtBudgetFiveStopsAtSixthLayer) {
    const auto spec = spec_with(3);
    he::Simulator sim(4096, 5);
    const auto* e = caught([&] { infer_encrypted(spec, encode_image_rows(random_image(32, 32, 1, 2), sim), sim); });
    ASSERT_NE(e, nullptr);
    EXPECT_EQ(e->kind(), ErrorKind::BudgetExhausted);
    // conv, square, conv, square, conv use the five levels; the third square fails.
    EXPECT_EQ(e->index(), 5u);
}

TEST(InferEncrypted, ChannelsShareRowCiphertexts) {
    RandomSpecOptions o;
    o.in_channels = 3;
    const auto spec = random_spec(o, 4);
    he::Simulator sim(4096, 5);
    const auto img = random_image(32, 32, 3, 4);
    const auto enc = encode_image_rows(img, sim);
    EXPECT_EQ(enc.rows.size(), 32u);
    EXPECT_EQ(enc.channel_stride, 32u);
    const auto got = sim.decrypt_vec(infer_encrypted(spec, enc, sim));
    const auto want = infer_plain(spec, img);
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(Weights, RoundtripIsBitExact) {
    for (std::size_t convs : {2, 3}) {
        const auto spec = spec_with(convs, 32, 7 + convs);
        std::stringstream a, b;
        save_weights(a, spec);
        const auto loaded = load_weights(a);
        save_weights(b, loaded);
        EXPECT_EQ(a.str(), b.str());
        const auto img = random_image(32, 32, 1, 1);
        EXPECT_EQ(infer_plain(spec, img), infer_plain(loaded, img));
    }
}

TEST(Weights, ShapeMismatchAndBadMagicRejected) {
    std::stringstream ss;
    save_weights(ss, spec_with(2));
    std::string bytes = ss.str();
    bytes[4 + 8] = 2;  // input channels 1 -> 2
    std::stringstream bad(bytes);
    const auto* e = caught([&] { load_weights(bad); });
    ASSERT_NE(e, nullptr);
    EXPECT_EQ(e->kind(), ErrorKind::GeometryMismatch);

    std::stringstream magic("HEW2....");
    e = caught([&] { load_weights(magic); });
    ASSERT_NE(e, nullptr);
    EXPECT_EQ(e->kind(), ErrorKind::FormatError);

    std::stringstream truncated(ss.str().substr(0, 40));
    e = caught([&] { load_weights(truncated); });
    ASSERT_NE(e, nullptr);
    EXPECT_EQ(e->kind(), ErrorKind::FormatError);
}

TEST(Images, CsvAndPgm) {
    std::stringstream csv("0.5, 1\n0.25,0\n");
    const auto t = load_csv_image(csv);
    EXPECT_EQ(t.shape, (std::vector<std::size_t>{2, 2, 1}));
    EXPECT_EQ(t.data, (std::vector<double>{0.5, 1, 0.25, 0}));

    std::stringstream rgb("1,2,3,4,5,6\n");
    const auto c = load_csv_image(rgb, 3);
    EXPECT_EQ(c.shape, (std::vector<std::size_t>{1, 2, 3}));
    EXPECT_EQ(c(0, 1, 0), 4.0);

    std::stringstream ragged("1,2\n3\n");
    EXPECT_NE(caught([&] { load_csv_image(ragged); }), nullptr);

    std::string pgm = "P5\n# comment\n3 2\n255\n";
    for (unsigned char px : {0, 51, 255, 102, 204, 153}) pgm.push_back(static_cast<char>(px));
    std::stringstream ps(pgm);
    const auto p = load_pgm_image(ps);
    EXPECT_EQ(p.shape, (std::vector<std::size_t>{2, 3, 1}));
    EXPECT_DOUBLE_EQ(p(0, 1, 0), 0.2);
    EXPECT_DOUBLE_EQ(p(0, 2, 0), 1.0);
    EXPECT_DOUBLE_EQ(p(1, 0, 0), 0.4);
    std::stringstream p2("P2\n1 1\n255\n0");
    EXPECT_NE(caught([&] { load_pgm_image(p2); }), nullptr);
}

TEST(InferEncrypted, CkksMatchesOracleAndNeedsNoSecret) {
    const auto spec = spec_with(2, 32, 21);
    auto ctx = std::make_shared<const ckks::CkksContext>(ckks::CkksParams{});
    auto rng = RandomSource::seeded(22);
    const auto keys = ckks::generate_keys(*ctx, rotation_steps(spec, ctx->params().slot_count()), rng);
    const ckks::CkksBackend client(ctx, keys, RandomSource::seeded(23));
    const ckks::CkksBackend server(ctx, keys.pub, keys.eval, RandomSource::seeded(24));
    EXPECT_FALSE(server.can_decrypt());
    const auto img = random_image(32, 32, 1, 25);
    const auto out = infer_encrypted(spec, encode_image_rows(img, client), server);
    const auto want = infer_plain(spec, img);
    const auto got = client.decrypt_vec(out);
    double scale = 0;
    for (double v : want) scale = std::max(scale, std::fabs(v));
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_LE(std::fabs(got[i] - want[i]), 1e-2 * scale);
    EXPECT_EQ(argmax(std::vector<double>(got.begin(), got.begin() + want.size())), argmax(want));
}
