#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "graffl/matrix.hpp"

namespace graffl {

// Frame layout: [u32 big-endian payload length][u8 tag][payload: JSON, UTF-8].
// The length counts payload bytes only (the tag byte is not included).

enum class FrameTag : std::uint8_t {
    Hello = 0,
    ProposalBatch = 1,
    DiscrepancyReport = 2,
    Terminate = 3,
};

struct Hello {
    std::uint32_t site_id = 0;
    std::size_t n_j = 0;
    std::size_t dim = 0;

    friend bool operator==(const Hello&, const Hello&) = default;
};

struct ProposalBatch {
    std::size_t iteration = 0;
    Matrix rows;  // possibly 0 rows on a short final iteration

    friend bool operator==(const ProposalBatch&, const ProposalBatch&) = default;
};

/// Iteration id and scalar discrepancies; nothing else crosses the site boundary.
struct DiscrepancyReport {
    std::size_t iteration = 0;
    Vector values;

    friend bool operator==(const DiscrepancyReport&, const DiscrepancyReport&) = default;
};

struct Terminate {
    friend bool operator==(const Terminate&, const Terminate&) = default;
};

using WireMessage = std::variant<Hello, ProposalBatch, DiscrepancyReport, Terminate>;

/// The only messages a site is allowed to emit.
using SiteMessage = std::variant<Hello, DiscrepancyReport>;

using Frame = std::vector<std::uint8_t>;

inline constexpr std::size_t kFrameHeaderSize = 5;
inline constexpr std::size_t kMaxPayloadSize = std::size_t{1} << 30;

Frame encode_frame(const WireMessage& msg);
Frame encode_frame(const SiteMessage& msg);

/// Parses exactly one frame. Throws ProtocolViolation on an unknown tag, a
/// length mismatch, or a payload that does not match the tag's schema
/// (exact key set, in declared order, with the right value types).
WireMessage decode_frame(std::span<const std::uint8_t> frame);

/// decode_frame restricted to the site -> coordinator grammar {Hello, DiscrepancyReport}.
SiteMessage decode_site_frame(std::span<const std::uint8_t> frame);

/// Splits a captured byte stream into frames. Throws ProtocolViolation on a
/// truncated trailing frame.
std::vector<Frame> split_frames(std::span<const std::uint8_t> bytes);

/// Parses a full capture of site -> coordinator traffic against the site grammar.
std::vector<SiteMessage> parse_site_capture(std::span<const std::uint8_t> bytes);

/// Payload length from a 5-byte header.
std::size_t frame_payload_length(std::span<const std::uint8_t> header);

}  // namespace graffl
