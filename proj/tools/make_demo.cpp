// Regenerates the bundled demo model and input under data/.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "hegemony/model.hpp"

int main(int argc, char** argv) {
    using namespace hegemony;
    const std::filesystem::path dir = argc > 1 ? argv[1] : "data";
    std::filesystem::create_directories(dir);
    const Tensor img = model::random_image(32, 32, 1, 7);
    // First seed whose two logits are well separated on the demo input, so
    // the argmax is stable under CKKS noise.
    auto separated = [&](const model::RandomSpecOptions& o, std::uint64_t seed) {
        for (;; ++seed) {
            auto spec = model::random_spec(o, seed);
            const auto y = model::infer_plain(spec, img);
            if (std::fabs(y[0] - y[1]) > 0.25 * std::max(std::fabs(y[0]), std::fabs(y[1]))) return spec;
        }
    };
    model::RandomSpecOptions two;
    model::save_weights((dir / "demo_2conv.hew").string(), separated(two, 2024));
    model::RandomSpecOptions three;
    three.conv_layers = 3;
    model::save_weights((dir / "demo_3conv.hew").string(), separated(three, 2025));

    std::ofstream csv(dir / "demo_input.csv");
    csv.precision(6);
    for (std::size_t y = 0; y < 32; ++y) {
        for (std::size_t x = 0; x < 32; ++x) csv << (x ? "," : "") << img(y, x, 0);
        csv << "\n";
    }
    std::cout << "wrote demo_2conv.hew, demo_3conv.hew and demo_input.csv to " << dir.string() << "\n";
}
