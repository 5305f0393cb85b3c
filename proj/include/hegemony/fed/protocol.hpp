#ifndef HEGEMONY_FED_PROTOCOL_HPP
#define HEGEMONY_FED_PROTOCOL_HPP

// Wire messages of the federated averaging protocol. Every message is a JSON
// object {"v", "kind", "round", "sender", "body"}; on a stream it is framed
// by a 4-byte big-endian length.
//
// Round 0 is setup: clients send Hello, the server answers with
// PublicKeyBroadcast, and the dealer hands each client its ShareDelivery.
// Round t >= 1: the server sends Hello{selected} as the round invitation,
// selected clients reply ModelUpload, the server sends AggregateBroadcast,
// every client replies PartialDecryption, the server relays the full set as
// one PartialDecryption bundle, and every client replies RoundComplete with
// its checksum. A final RoundComplete from the server ends the session.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "hegemony/json.hpp"
#include "hegemony/numtheory.hpp"

namespace hegemony::fed {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::uint32_t kServerId = 0;
inline constexpr std::uint32_t kDealerId = 0xffffffffu;

enum class MessageKind {
    Hello,
    PublicKeyBroadcast,
    ShareDelivery,
    ModelUpload,
    AggregateBroadcast,
    PartialDecryption,
    RoundComplete,
};

inline std::string_view to_string(MessageKind k) {
    switch (k) {
        case MessageKind::Hello: return "Hello";
        case MessageKind::PublicKeyBroadcast: return "PublicKeyBroadcast";
        case MessageKind::ShareDelivery: return "ShareDelivery";
        case MessageKind::ModelUpload: return "ModelUpload";
        case MessageKind::AggregateBroadcast: return "AggregateBroadcast";
        case MessageKind::PartialDecryption: return "PartialDecryption";
        case MessageKind::RoundComplete: return "RoundComplete";
    }
    return "?";
}

inline MessageKind kind_from_string(std::string_view s) {
    for (auto k : {MessageKind::Hello, MessageKind::PublicKeyBroadcast, MessageKind::ShareDelivery,
                   MessageKind::ModelUpload, MessageKind::AggregateBroadcast, MessageKind::PartialDecryption,
                   MessageKind::RoundComplete})
        if (to_string(k) == s) return k;
    fail(ErrorKind::ProtocolError, "unknown message kind '" + std::string(s) + "'");
}

struct RoundMessage {
    MessageKind kind = MessageKind::Hello;
    std::uint64_t round = 0;
    std::uint32_t sender = 0;
    nlohmann::json body = nlohmann::json::object();

    nlohmann::json to_json() const {
        return {{"v", kProtocolVersion}, {"kind", to_string(kind)}, {"round", round}, {"sender", sender},
                {"body", body.is_null() ? nlohmann::json::object() : body}};
    }

    static RoundMessage from_json(const nlohmann::json& j) {
        if (json_number<int>(j, "v") != kProtocolVersion)
            fail(ErrorKind::ProtocolError, "protocol version mismatch: got " + json_field(j, "v").dump() + ", expected " +
                                               std::to_string(kProtocolVersion));
        RoundMessage m;
        m.kind = kind_from_string(json_string(j, "kind"));
        m.round = json_number<std::uint64_t>(j, "round");
        m.sender = json_number<std::uint32_t>(j, "sender");
        m.body = json_field(j, "body");
        if (!m.body.is_object()) fail(ErrorKind::FormatError, "message body must be an object");
        return m;
    }
};

inline std::vector<std::string> hex_list(const std::vector<BigInt>& values) {
    std::vector<std::string> out;
    out.reserve(values.size());
    for (const auto& v : values) out.push_back(to_hex(v));
    return out;
}

inline std::vector<BigInt> bigints_from_json(const nlohmann::json& j) {
    if (!j.is_array()) fail(ErrorKind::FormatError, "expected an array of hex integers");
    std::vector<BigInt> out;
    out.reserve(j.size());
    for (const auto& x : j) {
        if (!x.is_string()) fail(ErrorKind::FormatError, "expected a hex string");
        out.push_back(from_hex(x.get<std::string>()));
    }
    return out;
}

/// 4-byte big-endian length, then the JSON text.
inline std::string encode_frame(const RoundMessage& m) {
    const std::string text = m.to_json().dump();
    const auto n = static_cast<std::uint32_t>(text.size());
    std::string out;
    out.reserve(4 + text.size());
    out.push_back(static_cast<char>(n >> 24));
    out.push_back(static_cast<char>(n >> 16));
    out.push_back(static_cast<char>(n >> 8));
    out.push_back(static_cast<char>(n));
    return out + text;
}

inline std::uint32_t frame_length(const unsigned char* header) {
    return std::uint32_t(header[0]) << 24 | std::uint32_t(header[1]) << 16 | std::uint32_t(header[2]) << 8 |
           std::uint32_t(header[3]);
}

inline RoundMessage decode_frame_body(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::FormatError, std::string("malformed message: ") + e.what());
    }
    return RoundMessage::from_json(j);
}

}  // namespace hegemony::fed

#endif  // HEGEMONY_FED_PROTOCOL_HPP
