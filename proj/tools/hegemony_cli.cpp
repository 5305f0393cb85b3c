// Command-line front end. Exit codes: 0 success, 1 other failure, 2 usage,
// 3 cryptographic failure, 4 multiplicative budget exhausted. Failures print
// one line "error: <Kind>: <message>" on stderr (a JSON object with --json).

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "hegemony/ckks/serialize.hpp"
#include "hegemony/fed/simulation.hpp"
#include "hegemony/model.hpp"
#include "hegemony/parallel.hpp"
#include "hegemony/verify.hpp"

using namespace hegemony;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
    bool json_out = false;
    std::optional<std::uint64_t> seed;
    std::size_t threads = 0;
};

Globals g;

RandomSource make_rng(std::uint64_t salt, const char* purpose = nullptr) {
    if (!g.seed) return RandomSource::secure();
    if (purpose) std::cerr << "warning: " << purpose << " is seeded and not cryptographically secure\n";
    return RandomSource::seeded(fed::derive_seed(*g.seed, salt));
}

int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::BudgetExhausted: return 4;
        case ErrorKind::NotInvertible:
        case ErrorKind::MessageOutOfRange:
        case ErrorKind::InvalidCiphertext:
        case ErrorKind::KeyMismatch:
        case ErrorKind::IncompleteShareSet:
        case ErrorKind::CombineFailed:
        case ErrorKind::OverflowDetected:
        case ErrorKind::RoundAbort: return 3;
        default: return 1;
    }
}

void emit(const json& j, const std::string& text) {
    if (g.json_out) std::cout << j.dump() << "\n";
    else std::cout << text;
}

std::ifstream open_in(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) fail(ErrorKind::FormatError, "cannot open " + p.string());
    return in;
}

std::ofstream open_out(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) fail(ErrorKind::FormatError, "cannot write " + p.string());
    return out;
}

json read_json(const fs::path& p) {
    auto in = open_in(p);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::FormatError, p.string() + ": " + e.what());
    }
}

void write_json(const fs::path& p, const json& j) { open_out(p) << j.dump(2) << "\n"; }

// ---------------------------------------------------------------- CKKS key directory
//
// params.json, public.key, eval.key (server side) and secret.key (client only).

std::shared_ptr<const ckks::CkksContext> load_context(const fs::path& dir) {
    if (!fs::is_directory(dir)) fail(ErrorKind::FormatError, "key directory " + dir.string() + " does not exist");
    return std::make_shared<const ckks::CkksContext>(ckks::CkksParams::from_json(read_json(dir / "params.json")));
}

ckks::CkksBackend load_server(const fs::path& dir, RandomSource rng) {
    auto ctx = load_context(dir);
    auto pin = open_in(dir / "public.key");
    auto ein = open_in(dir / "eval.key");
    auto pub = ckks::read_public_key(pin, *ctx);
    auto eval = std::make_shared<const ckks::EvalKeys>(ckks::read_eval_keys(ein, *ctx));
    return ckks::CkksBackend(ctx, std::move(pub), std::move(eval), std::move(rng));
}

ckks::CkksBackend load_encryptor(const fs::path& dir, RandomSource rng) {
    auto ctx = load_context(dir);
    auto pin = open_in(dir / "public.key");
    return ckks::CkksBackend(ctx, ckks::read_public_key(pin, *ctx), std::make_shared<const ckks::EvalKeys>(),
                             std::move(rng));
}

ckks::CkksBackend load_decryptor(const fs::path& dir) {
    auto ctx = load_context(dir);
    auto sin = open_in(dir / "secret.key");
    auto pin = open_in(dir / "public.key");
    ckks::KeyBundle keys;
    keys.secret = ckks::read_secret_key(sin, *ctx);
    keys.pub = ckks::read_public_key(pin, *ctx);
    keys.eval = std::make_shared<const ckks::EvalKeys>();
    return ckks::CkksBackend(ctx, keys, RandomSource::secure());
}

// ---------------------------------------------------------------- encrypted files
//
// Encrypted image: "HEI1" | u32 height | u32 width | u32 channels | u32 rows | rows as ciphertexts.
// Encrypted result: "HER1" | u32 classes | one ciphertext.
// Simulator results are JSON: {"backend": "sim", "classes": n, "slots": [...]}.

void put_u32(std::ostream& os, std::uint32_t v) { ckks::io::put<std::uint32_t>(os, v); }
std::uint32_t get_u32(std::istream& is) { return ckks::io::get<std::uint32_t>(is); }

void write_enc_image(const fs::path& p, const ckks::CkksContext& ctx,
                     const tensor::EncImage<ckks::CkksBackend::Vector>& img) {
    auto out = open_out(p);
    ckks::io::put_magic(out, "HEI1");
    for (auto v : {img.height, img.width, img.channels, img.rows.size()}) put_u32(out, static_cast<std::uint32_t>(v));
    for (const auto& r : img.rows) ckks::write_ciphertext(out, ctx, r);
}

bool has_magic(const fs::path& p, const char* magic) {
    std::ifstream in(p, std::ios::binary);
    char buf[4] = {};
    in.read(buf, 4);
    return in && std::equal(buf, buf + 4, magic);
}

tensor::EncImage<ckks::CkksBackend::Vector> read_enc_image(const fs::path& p, const ckks::CkksContext& ctx) {
    auto in = open_in(p);
    ckks::io::expect_magic(in, "HEI1");
    tensor::EncImage<ckks::CkksBackend::Vector> img;
    img.height = get_u32(in);
    img.width = get_u32(in);
    img.channels = get_u32(in);
    img.channel_stride = img.width;
    const auto rows = get_u32(in);
    if (rows != img.height) fail(ErrorKind::FormatError, "row count disagrees with image height");
    for (std::uint32_t i = 0; i < rows; ++i) img.rows.push_back(ckks::read_ciphertext(in, ctx));
    return img;
}

Tensor load_input(const std::string& path, std::size_t channels) {
    if (!fs::exists(path)) fail(ErrorKind::FormatError, "input " + path + " does not exist");
    return model::load_image(path, channels);
}

json trace_json(const std::vector<model::LayerTrace>& trace) {
    json a = json::array();
    for (const auto& t : trace) a.push_back({{"layer", t.name}, {"seconds", t.seconds}, {"level_after", t.level_after}});
    return a;
}

std::string trace_text(const std::vector<model::LayerTrace>& trace) {
    std::ostringstream s;
    for (std::size_t i = 0; i < trace.size(); ++i)
        s << "  layer " << i << " " << trace[i].name << ": " << trace[i].seconds << " s, level " << trace[i].level_after
          << "\n";
    return s.str();
}

json transcript_json(const fed::AggregationTranscript& t) {
    json a = json::array();
    for (const auto& r : t.records()) a.push_back(r);
    return a;
}

std::function<std::vector<double>(std::uint32_t, std::uint64_t, const std::vector<double>&)>
provider_for(const std::string& weights_dir, const fed::FedConfig& cfg) {
    if (weights_dir.empty()) return fed::stub_provider(cfg);
    if (!fs::is_directory(weights_dir)) fail(ErrorKind::FormatError, "weights directory " + weights_dir + " does not exist");
    return fed::replay_provider(weights_dir);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Homomorphic inference and federated averaging toolkit"};
    app.require_subcommand(1);
    app.add_flag("--json", g.json_out, "machine-readable output");
    app.add_option("--seed", g.seed, "seed every random choice (not secure)");
    app.add_option("--threads", g.threads, "worker threads (default: HEGEMONY_THREADS or all cores)");

    // keygen
    auto* keygen = app.add_subcommand("keygen", "CKKS keys with the rotations a model needs");
    std::string kg_weights, kg_out;
    std::size_t kg_levels = 0, kg_degree = 8192;
    keygen->add_option("--weights", kg_weights, "model weights file")->required();
    keygen->add_option("--out", kg_out, "key directory")->required();
    keygen->add_option("--levels", kg_levels, "chain length (default: model depth)");
    keygen->add_option("--ring-degree", kg_degree, "ring degree N");

    // ceremony
    auto* ceremony = app.add_subcommand("ceremony", "threshold Paillier keys for K clients");
    std::uint32_t cer_clients = 3;
    std::size_t cer_bits = 512;
    std::string cer_out;
    ceremony->add_option("--clients", cer_clients, "share holders")->check(CLI::Range(2u, 1000u));
    ceremony->add_option("--key-bits", cer_bits, "bits of n");
    ceremony->add_option("--out", cer_out, "output directory")->required();

    // encrypt-image
    auto* encimg = app.add_subcommand("encrypt-image", "encrypt an image row by row under the public key");
    std::string ei_input, ei_keys, ei_out;
    std::size_t ei_channels = 1;
    encimg->add_option("--input", ei_input, "CSV or PGM image")->required();
    encimg->add_option("--keys", ei_keys, "key directory")->required();
    encimg->add_option("--out", ei_out, "encrypted image file")->required();
    encimg->add_option("--channels", ei_channels, "channels per CSV pixel");

    // infer
    auto* infer = app.add_subcommand("infer", "evaluate a model on an encrypted input (no secret key)");
    std::string in_weights, in_input, in_keys, in_out, in_backend = "ckks";
    std::size_t in_channels = 1;
    infer->add_option("--weights", in_weights, "model weights file")->required();
    infer->add_option("--input", in_input, "encrypted image, or a CSV/PGM image to encrypt first")->required();
    infer->add_option("--keys", in_keys, "key directory (ckks)");
    infer->add_option("--backend", in_backend, "sim or ckks")->check(CLI::IsMember({"sim", "ckks"}));
    infer->add_option("--out", in_out, "result file")->required();
    infer->add_option("--channels", in_channels, "channels per CSV pixel");

    // decrypt-result
    auto* decres = app.add_subcommand("decrypt-result", "recover logits with the secret key");
    std::string dr_input, dr_keys;
    decres->add_option("--input", dr_input, "result file from infer")->required();
    decres->add_option("--keys", dr_keys, "key directory holding secret.key");

    // fed-server / fed-client / fed-sim share most of the configuration
    fed::FedConfig fc;
    std::string fed_weights_dir, fed_transcript;
    double timeout_s = 60;
    auto add_fed_opts = [&](CLI::App* c, bool keys) {
        c->add_option("--clients", fc.clients, "K")->check(CLI::Range(2u, 100000u));
        c->add_option("--rounds", fc.rounds, "T");
        c->add_option("--fraction", fc.client_fraction, "C, share of clients per round");
        c->add_option("--weight-count", fc.weight_count, "weights per client");
        c->add_option("--epochs", fc.local_epochs, "E for the update stub");
        c->add_option("--batches", fc.batches_per_round, "B for the update stub");
        c->add_option("--learning-rate", fc.learning_rate, "eta for the update stub");
        c->add_option("--max-addends", fc.packing.max_addends, "packing headroom");
        c->add_option("--timeout", timeout_s, "per-phase timeout in seconds");
        c->add_option("--transcript", fed_transcript, "write transcript JSON lines here");
        if (keys) c->add_option("--key-bits", fc.key_bits, "bits of n");
    };
    auto* fedserver = app.add_subcommand("fed-server", "aggregation server over TCP");
    std::string fs_address = "127.0.0.1:7070", fs_pubkey;
    fedserver->add_option("--address", fs_address, "host:port to listen on");
    fedserver->add_option("--public-key", fs_pubkey, "public_key.json from ceremony")->required();
    add_fed_opts(fedserver, false);

    auto* fedclient = app.add_subcommand("fed-client", "federated client over TCP");
    std::string fcl_address = "127.0.0.1:7070", fcl_share;
    fedclient->add_option("--address", fcl_address, "server host:port");
    fedclient->add_option("--share", fcl_share, "share file from ceremony")->required();
    fedclient->add_option("--weights-dir", fed_weights_dir, "replay client<c>_round<t>.csv updates");
    fedclient->add_option("--timeout", timeout_s, "per-message timeout in seconds");

    auto* fedsim = app.add_subcommand("fed-sim", "whole federation in one process");
    fedsim->add_option("--weights-dir", fed_weights_dir, "replay client<c>_round<t>.csv updates");
    add_fed_opts(fedsim, true);

    // bench
    auto* bench = app.add_subcommand("bench", "time encrypted inference of random models");
    std::vector<std::size_t> b_layers{2, 3};
    std::size_t b_size = 32, b_channels = 4;
    std::string b_backend = "ckks";
    bench->add_option("--layers", b_layers, "conv layer counts, e.g. --layers 2 3")->check(CLI::IsMember({2, 3}));
    bench->add_option("--size", b_size, "input side")->check(CLI::IsMember({32, 112}));
    bench->add_option("--channels", b_channels, "channels per conv");
    bench->add_option("--backend", b_backend, "ckks")->check(CLI::IsMember({"ckks"}));

    // verify
    auto* verify = app.add_subcommand("verify", "run the acceptance suites");
    std::string v_suite = "all";
    verify->add_option("--suite", v_suite, "paillier, threshold, kernels, ckks, fedavg or all")
        ->check(CLI::IsMember({"paillier", "threshold", "kernels", "ckks", "fedavg", "all"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "error: Usage: " << e.what() << "\n";
        return 2;
    }

    try {
        if (g.threads) set_thread_count(g.threads);
        fc.phase_timeout = fed::Millis(static_cast<long long>(timeout_s * 1000));
        fc.seeded = g.seed.has_value();
        fc.seed = g.seed ? *g.seed : RandomSource::secure().next_u64();

        if (*keygen) {
            const auto spec = model::load_weights(kg_weights);
            ckks::CkksParams p;
            p.ring_degree = kg_degree;
            p.levels = kg_levels ? kg_levels : model::depth_required(spec);
            const ckks::CkksContext ctx(p);
            auto rng = make_rng(0x6e, "CKKS key generation");
            const auto steps = model::rotation_steps(spec, p.slot_count());
            const auto keys = ckks::generate_keys(ctx, steps, rng);
            const fs::path dir = kg_out;
            write_json(dir / "params.json", p.to_json());
            {
                auto o = open_out(dir / "secret.key");
                ckks::write_secret_key(o, ctx, keys.secret);
            }
            {
                auto o = open_out(dir / "public.key");
                ckks::write_public_key(o, ctx, keys.pub);
            }
            {
                auto o = open_out(dir / "eval.key");
                ckks::write_eval_keys(o, ctx, *keys.eval);
            }
            emit({{"keys", dir.string()}, {"levels", p.levels}, {"galois_keys", keys.eval->galois.size()}},
                 "wrote keys to " + dir.string() + " (" + std::to_string(p.levels) + " levels, " +
                     std::to_string(keys.eval->galois.size()) + " rotation keys)\n");
        } else if (*ceremony) {
            if (cer_bits % 2 || cer_bits < 64) fail(ErrorKind::FormatError, "key bits must be even and at least 64");
            auto rng = make_rng(0xce, "threshold key generation");
            const auto c = threshold::ceremony_keygen(cer_bits / 2, cer_clients, rng);
            const fs::path dir = cer_out;
            write_json(dir / "public_key.json", threshold::to_json(c.public_key));
            for (const auto& s : c.shares)
                write_json(dir / ("share" + std::to_string(s.index) + ".json"), threshold::to_json(s));
            emit({{"ceremony_id", c.public_key.ceremony_id}, {"clients", cer_clients}, {"dir", dir.string()}},
                 "ceremony " + c.public_key.ceremony_id + ": public_key.json and " + std::to_string(cer_clients) +
                     " shares in " + dir.string() + "\n");
        } else if (*encimg) {
            const auto b = load_encryptor(ei_keys, make_rng(0xe1));
            const auto img = load_input(ei_input, ei_channels);
            write_enc_image(ei_out, b.context(), model::encode_image_rows(img, b));
            emit({{"out", ei_out}, {"shape", img.shape}}, "encrypted " + img.shape_string() + " image to " + ei_out + "\n");
        } else if (*infer) {
            const auto spec = model::load_weights(in_weights);
            std::vector<model::LayerTrace> trace;
            json report;
            if (in_backend == "sim") {
                if (has_magic(in_input, "HEI1")) fail(ErrorKind::FormatError, "the sim backend takes a plaintext image");
                he::Simulator sim(ckks::CkksParams{}.slot_count(), model::depth_required(spec));
                const auto y = model::infer_encrypted(spec, model::encode_image_rows(load_input(in_input, in_channels), sim),
                                                      sim, &trace);
                write_json(in_out, {{"backend", "sim"}, {"classes", spec.classes()}, {"slots", sim.decrypt_vec(y)}});
            } else {
                if (in_keys.empty()) fail(ErrorKind::FormatError, "--keys is required for the ckks backend");
                const auto server = load_server(in_keys, make_rng(0x1f));
                const auto img = has_magic(in_input, "HEI1") ? read_enc_image(in_input, server.context())
                                                             : model::encode_image_rows(load_input(in_input, in_channels), server);
                const auto y = model::infer_encrypted(spec, img, server, &trace);
                auto out = open_out(in_out);
                ckks::io::put_magic(out, "HER1");
                put_u32(out, static_cast<std::uint32_t>(spec.classes()));
                ckks::write_ciphertext(out, server.context(), y);
            }
            double total = 0;
            for (const auto& t : trace) total += t.seconds;
            emit({{"backend", in_backend}, {"out", in_out}, {"layers", trace_json(trace)}, {"total_seconds", total}},
                 "wrote encrypted result to " + in_out + "\n" + trace_text(trace) + "  total: " + std::to_string(total) +
                     " s\n");
        } else if (*decres) {
            std::vector<double> logits;
            std::ifstream probe(dr_input);
            if (!probe) fail(ErrorKind::FormatError, "cannot open " + dr_input);
            if (probe.peek() == '{') {
                const auto j = read_json(dr_input);
                const auto classes = json_number<std::size_t>(j, "classes");
                const auto slots = json_field(j, "slots").get<std::vector<double>>();
                logits.assign(slots.begin(), slots.begin() + static_cast<long>(std::min(classes, slots.size())));
            } else {
                if (dr_keys.empty()) fail(ErrorKind::FormatError, "--keys is required for a ckks result");
                const auto b = load_decryptor(dr_keys);
                auto in = open_in(dr_input);
                ckks::io::expect_magic(in, "HER1");
                const auto classes = get_u32(in);
                const auto d = b.decrypt_vec(ckks::read_ciphertext(in, b.context()));
                logits.assign(d.begin(), d.begin() + classes);
            }
            const auto arg = std::max_element(logits.begin(), logits.end()) - logits.begin();
            std::ostringstream s;
            s << std::setprecision(10) << "logits:";
            for (double v : logits) s << " " << v;
            s << "\nclass: " << arg << "\n";
            emit({{"logits", logits}, {"class", arg}}, s.str());
        } else if (*fedserver) {
            const auto pk = threshold::public_key_from_json(read_json(fs_pubkey));
            fc.key_bits = mpz_sizeinbase(pk.n.get_mpz_t(), 2);
            if (fc.key_bits % 2) ++fc.key_bits;
            const auto t = fed::serve(fs_address, pk, fc);
            if (!fed_transcript.empty()) open_out(fed_transcript) << t.json_lines();
            emit(transcript_json(t), t.json_lines());
            if (t.aborted()) fail(ErrorKind::RoundAbort, t.rounds.back().cause + ": " + t.rounds.back().detail);
        } else if (*fedclient) {
            const auto timeout = fed::Millis(static_cast<long long>(timeout_s * 1000));
            // Without recorded updates the client runs the stub under the
            // session's config, which arrives with the public key.
            const auto provider = fed_weights_dir.empty() ? fed::UpdateProvider{} : provider_for(fed_weights_dir, fc);
            const auto r = fed::connect(fcl_address, fcl_share, provider, timeout);
            json j = {{"client", r.id}, {"status", r.status}, {"rounds", r.averages.size()}, {"checksums", r.checksums}};
            if (r.status != "ok") j["cause"] = r.cause;
            emit(j, "client " + std::to_string(r.id) + ": " + r.status + " after " + std::to_string(r.averages.size()) +
                        " rounds\n");
            if (r.status != "ok") fail(ErrorKind::RoundAbort, r.cause + ": " + r.detail);
        } else if (*fedsim) {
            const auto r = fed::run_simulation(fc, provider_for(fed_weights_dir, fc));
            if (!fed_transcript.empty()) open_out(fed_transcript) << r.transcript.json_lines();
            // The transcript is JSON lines in both output modes.
            std::cout << json{{"type", "ceremony"}, {"seconds", r.ceremony_seconds}}.dump() << "\n"
                      << r.transcript.json_lines();
            if (r.transcript.aborted())
                fail(ErrorKind::RoundAbort, r.transcript.rounds.back().cause + ": " + r.transcript.rounds.back().detail);
        } else if (*bench) {
            const std::uint64_t seed = g.seed.value_or(1);
            std::vector<verify::BenchResult> results;
            json all = json::array();
            for (auto layers : b_layers) {
                model::RandomSpecOptions o;
                o.size = b_size;
                o.conv_layers = layers;
                o.channels = b_channels;
                const auto spec = model::random_spec(o, fed::derive_seed(seed, layers));
                results.push_back(verify::bench_ckks(spec, seed));
                const auto& r = results.back();
                all.push_back({{"conv_layers", layers},
                               {"size", b_size},
                               {"levels", r.levels_used},
                               {"keygen_seconds", r.keygen_seconds},
                               {"encrypt_seconds", r.encrypt_seconds},
                               {"inference_seconds", r.infer_seconds},
                               {"layers", trace_json(r.layers)},
                               {"logits", r.logits},
                               {"plain_logits", r.plain_logits}});
                if (!g.json_out)
                    std::cout << layers << "-conv, " << b_size << "x" << b_size << ", " << r.levels_used << " levels\n"
                              << trace_text(r.layers) << "  keygen " << r.keygen_seconds << " s, encrypt "
                              << r.encrypt_seconds << " s, inference " << r.infer_seconds << " s\n";
            }
            bool monotone = true;
            for (std::size_t i = 0; i < results.size(); ++i)
                for (std::size_t j = 0; j < results.size(); ++j)
                    if (results[i].conv_layers < results[j].conv_layers)
                        monotone = monotone && results[i].infer_seconds < results[j].infer_seconds;
            if (g.json_out) std::cout << json{{"runs", all}, {"deeper_is_slower", monotone}}.dump() << "\n";
            else if (results.size() > 1)
                std::cout << "deeper model slower: " << (monotone ? "yes" : "NO") << "\n";
            if (!monotone) {
                std::cerr << "error: BenchRelation: a deeper model ran faster than a shallower one\n";
                return 1;
            }
        } else if (*verify) {
            verify::Options opt;
            opt.seed = g.seed.value_or(1);
            const auto results = verify::run_suite(verify::suite_criteria(v_suite), opt, g.json_out ? nullptr : &std::cout);
            int failed = 0;
            json rows = json::array();
            for (const auto& r : results) {
                failed += !r.pass;
                rows.push_back({{"criterion", r.id}, {"name", r.name}, {"pass", r.pass}, {"detail", r.detail},
                                {"seconds", r.seconds}});
            }
            if (g.json_out) std::cout << json{{"suite", v_suite}, {"results", rows}, {"failed", failed}}.dump() << "\n";
            else std::cout << results.size() - failed << "/" << results.size() << " passed\n";
            if (failed) {
                std::cerr << "error: VerifyFailed: " << failed << " criteria failed\n";
                return 1;
            }
        }
    } catch (const Error& e) {
        if (g.json_out)
            std::cerr << json{{"error", std::string(to_string(e.kind()))}, {"message", e.what()}}.dump() << "\n";
        else std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: Internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
