#ifndef HEGEMONY_CKKS_SERIALIZE_HPP
#define HEGEMONY_CKKS_SERIALIZE_HPP

// Binary formats, little-endian throughout.
//
// Ciphertext: "HCT1" | u32 version | u64 params hash | u32 level | u8 domain
// (1 = evaluation form) | f64 scale | u32 slot count | c1 residues | c2
// residues | u32 layout length | layout JSON.
// Key files share a header "HKY1" | u32 version | u64 params hash | u8 kind.

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "hegemony/ckks/ckks.hpp"

namespace hegemony::ckks {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

namespace io {

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) fail(ErrorKind::FormatError, "truncated input");
    return v;
}

inline void put_magic(std::ostream& os, const char* magic) { os.write(magic, 4); }

inline void expect_magic(std::istream& is, const char* magic) {
    char buf[4];
    is.read(buf, 4);
    if (!is || std::memcmp(buf, magic, 4) != 0)
        fail(ErrorKind::FormatError, std::string("bad magic, expected ") + std::string(magic, 4));
}

inline void put_poly(std::ostream& os, const RnsPoly& p) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.k));
    os.write(reinterpret_cast<const char*>(p.data.data()), static_cast<std::streamsize>(p.data.size() * 8));
}

inline RnsPoly get_poly(std::istream& is, std::size_t n, std::size_t max_rows) {
    const auto k = get<std::uint32_t>(is);
    if (k == 0 || k > max_rows) fail(ErrorKind::FormatError, "residue count out of range");
    RnsPoly p(n, k);
    is.read(reinterpret_cast<char*>(p.data.data()), static_cast<std::streamsize>(p.data.size() * 8));
    if (!is) fail(ErrorKind::FormatError, "truncated residues");
    return p;
}

inline void put_string(std::ostream& os, const std::string& s) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
    const auto len = get<std::uint32_t>(is);
    if (len > (1u << 28)) fail(ErrorKind::FormatError, "string too long");
    std::string s(len, '\0');
    is.read(s.data(), len);
    if (!is) fail(ErrorKind::FormatError, "truncated string");
    return s;
}

}  // namespace io

constexpr std::uint32_t kFormatVersion = 1;

inline void write_ciphertext(std::ostream& os, const CkksContext& ctx, const CkksBackend::Vector& v) {
    const auto& ct = *v.payload.ct;
    io::put_magic(os, "HCT1");
    io::put<std::uint32_t>(os, kFormatVersion);
    io::put<std::uint64_t>(os, ctx.hash());
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(v.level));
    io::put<std::uint8_t>(os, 1);
    io::put<double>(os, ct.scale);
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(v.slot_count));
    io::put_poly(os, ct.c1);
    io::put_poly(os, ct.c2);
    io::put_string(os, v.layout.to_json().dump());
}

inline CkksBackend::Vector read_ciphertext(std::istream& is, const CkksContext& ctx) {
    io::expect_magic(is, "HCT1");
    if (io::get<std::uint32_t>(is) != kFormatVersion) fail(ErrorKind::FormatError, "unsupported ciphertext version");
    if (io::get<std::uint64_t>(is) != ctx.hash()) fail(ErrorKind::KeyMismatch, "ciphertext made under other parameters");
    const auto level = io::get<std::uint32_t>(is);
    if (level > ctx.max_level()) fail(ErrorKind::FormatError, "level out of range");
    if (io::get<std::uint8_t>(is) != 1) fail(ErrorKind::FormatError, "only evaluation-form ciphertexts are supported");
    auto ct = std::make_shared<CtData>();
    ct->scale = io::get<double>(is);
    const auto slots = io::get<std::uint32_t>(is);
    if (slots != ctx.n() / 2) fail(ErrorKind::FormatError, "slot count mismatch");
    ct->c1 = io::get_poly(is, ctx.n(), level + 1);
    ct->c2 = io::get_poly(is, ctx.n(), level + 1);
    if (ct->c1.k != level + 1 || ct->c2.k != level + 1) fail(ErrorKind::FormatError, "residue count disagrees with level");
    auto layout = he::SlotLayout::from_json(nlohmann::json::parse(io::get_string(is)));
    return {{std::move(ct)}, slots, level, std::move(layout)};
}

enum class KeyKind : std::uint8_t { Secret = 1, Public = 2, Evaluation = 3 };

inline void write_key_header(std::ostream& os, const CkksContext& ctx, KeyKind kind) {
    io::put_magic(os, "HKY1");
    io::put<std::uint32_t>(os, kFormatVersion);
    io::put<std::uint64_t>(os, ctx.hash());
    io::put<std::uint8_t>(os, static_cast<std::uint8_t>(kind));
}

inline void read_key_header(std::istream& is, const CkksContext& ctx, KeyKind kind) {
    io::expect_magic(is, "HKY1");
    if (io::get<std::uint32_t>(is) != kFormatVersion) fail(ErrorKind::FormatError, "unsupported key version");
    if (io::get<std::uint64_t>(is) != ctx.hash()) fail(ErrorKind::KeyMismatch, "key made under other parameters");
    if (io::get<std::uint8_t>(is) != static_cast<std::uint8_t>(kind)) fail(ErrorKind::FormatError, "wrong key kind");
}

inline void write_secret_key(std::ostream& os, const CkksContext& ctx, const SecretKey& sk) {
    write_key_header(os, ctx, KeyKind::Secret);
    io::put_poly(os, sk.s);
}

inline SecretKey read_secret_key(std::istream& is, const CkksContext& ctx) {
    read_key_header(is, ctx, KeyKind::Secret);
    return {io::get_poly(is, ctx.n(), ctx.max_level() + 2)};
}

inline void write_public_key(std::ostream& os, const CkksContext& ctx, const PublicKey& pk) {
    write_key_header(os, ctx, KeyKind::Public);
    io::put_poly(os, pk.a);
    io::put_poly(os, pk.b);
}

inline PublicKey read_public_key(std::istream& is, const CkksContext& ctx) {
    read_key_header(is, ctx, KeyKind::Public);
    PublicKey pk;
    pk.a = io::get_poly(is, ctx.n(), ctx.max_level() + 1);
    pk.b = io::get_poly(is, ctx.n(), ctx.max_level() + 1);
    return pk;
}

namespace detail {
inline void put_switch_key(std::ostream& os, const SwitchKey& k) {
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(k.a.size()));
    for (std::size_t i = 0; i < k.a.size(); ++i) {
        io::put_poly(os, k.a[i]);
        io::put_poly(os, k.b[i]);
    }
}
inline SwitchKey get_switch_key(std::istream& is, const CkksContext& ctx) {
    const auto digits = io::get<std::uint32_t>(is);
    if (digits != ctx.max_level() + 1) fail(ErrorKind::FormatError, "switching key digit count mismatch");
    SwitchKey k;
    for (std::uint32_t i = 0; i < digits; ++i) {
        k.a.push_back(io::get_poly(is, ctx.n(), ctx.max_level() + 2));
        k.b.push_back(io::get_poly(is, ctx.n(), ctx.max_level() + 2));
    }
    return k;
}
}  // namespace detail

inline void write_eval_keys(std::ostream& os, const CkksContext& ctx, const EvalKeys& ek) {
    write_key_header(os, ctx, KeyKind::Evaluation);
    detail::put_switch_key(os, ek.relin);
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(ek.galois.size()));
    for (const auto& [g, k] : ek.galois) {
        io::put<std::uint64_t>(os, g);
        detail::put_switch_key(os, k);
    }
}

inline EvalKeys read_eval_keys(std::istream& is, const CkksContext& ctx) {
    read_key_header(is, ctx, KeyKind::Evaluation);
    EvalKeys ek;
    ek.relin = detail::get_switch_key(is, ctx);
    const auto count = io::get<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto g = io::get<std::uint64_t>(is);
        ek.galois.emplace(g, detail::get_switch_key(is, ctx));
    }
    return ek;
}

}  // namespace hegemony::ckks

#endif  // HEGEMONY_CKKS_SERIALIZE_HPP
