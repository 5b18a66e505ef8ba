#include "graffl/wire.hpp"

#include <string>

#include <json.hpp>

#include "graffl/error.hpp"

namespace graffl {

namespace {

using ojson = nlohmann::ordered_json;

[[noreturn]] void violation(const std::string& what) { throw Error(ErrorCode::ProtocolViolation, what); }

Frame assemble(FrameTag tag, const ojson& payload) {
    const std::string text = payload.dump();
    if (text.size() > kMaxPayloadSize) violation("payload too large");
    const auto len = static_cast<std::uint32_t>(text.size());
    Frame frame;
    frame.reserve(kFrameHeaderSize + text.size());
    frame.push_back(static_cast<std::uint8_t>(len >> 24));
    frame.push_back(static_cast<std::uint8_t>(len >> 16));
    frame.push_back(static_cast<std::uint8_t>(len >> 8));
    frame.push_back(static_cast<std::uint8_t>(len));
    frame.push_back(static_cast<std::uint8_t>(tag));
    frame.insert(frame.end(), text.begin(), text.end());
    return frame;
}

ojson payload_of(const Hello& m) {
    ojson j;
    j["site_id"] = m.site_id;
    j["n_j"] = m.n_j;
    j["dim"] = m.dim;
    return j;
}

ojson payload_of(const ProposalBatch& m) {
    ojson j;
    j["iteration"] = m.iteration;
    auto rows = ojson::array();
    for (std::size_t i = 0; i < m.rows.rows(); ++i) {
        const auto r = m.rows.row(i);
        rows.push_back(std::vector<double>(r.begin(), r.end()));
    }
    j["rows"] = std::move(rows);
    return j;
}

ojson payload_of(const DiscrepancyReport& m) {
    ojson j;
    j["iteration"] = m.iteration;
    j["values"] = m.values;
    return j;
}

ojson payload_of(const Terminate&) { return ojson::object(); }

FrameTag tag_of(const Hello&) { return FrameTag::Hello; }
FrameTag tag_of(const ProposalBatch&) { return FrameTag::ProposalBatch; }
FrameTag tag_of(const DiscrepancyReport&) { return FrameTag::DiscrepancyReport; }
FrameTag tag_of(const Terminate&) { return FrameTag::Terminate; }

void expect_keys(const ojson& j, std::initializer_list<const char*> keys) {
    if (!j.is_object() || j.size() != keys.size()) violation("payload has unexpected keys");
    auto it = j.begin();
    for (const char* key : keys) {
        if (it.key() != key) violation(std::string("expected key '") + key + "', found '" + it.key() + "'");
        ++it;
    }
}

std::size_t as_count(const ojson& v, const char* what) {
    if (!v.is_number_unsigned()) violation(std::string(what) + " must be a non-negative integer");
    return v.get<std::size_t>();
}

double as_real(const ojson& v) {
    if (!v.is_number()) violation("expected a number");
    return v.get<double>();
}

WireMessage parse_payload(FrameTag tag, const ojson& j) {
    switch (tag) {
        case FrameTag::Hello: {
            expect_keys(j, {"site_id", "n_j", "dim"});
            const std::size_t id = as_count(j["site_id"], "site_id");
            if (id > UINT32_MAX) violation("site_id out of range");
            return Hello{static_cast<std::uint32_t>(id), as_count(j["n_j"], "n_j"), as_count(j["dim"], "dim")};
        }
        case FrameTag::ProposalBatch: {
            expect_keys(j, {"iteration", "rows"});
            const auto& rows = j["rows"];
            if (!rows.is_array()) violation("rows must be an array");
            std::vector<Vector> parsed;
            std::size_t cols = 0;
            for (const auto& r : rows) {
                if (!r.is_array()) violation("each row must be an array");
                Vector row;
                for (const auto& v : r) row.push_back(as_real(v));
                if (!parsed.empty() && row.size() != cols) violation("ragged proposal rows");
                cols = row.size();
                parsed.push_back(std::move(row));
            }
            return ProposalBatch{as_count(j["iteration"], "iteration"), Matrix::from_rows(parsed, cols)};
        }
        case FrameTag::DiscrepancyReport: {
            expect_keys(j, {"iteration", "values"});
            const auto& values = j["values"];
            if (!values.is_array()) violation("values must be an array");
            Vector parsed;
            for (const auto& v : values) parsed.push_back(as_real(v));
            return DiscrepancyReport{as_count(j["iteration"], "iteration"), std::move(parsed)};
        }
        case FrameTag::Terminate:
            expect_keys(j, {});
            return Terminate{};
    }
    violation("unknown frame tag " + std::to_string(static_cast<int>(tag)));
}

}  // namespace

std::size_t frame_payload_length(std::span<const std::uint8_t> header) {
    if (header.size() < 4) violation("short frame header");
    return (std::size_t{header[0]} << 24) | (std::size_t{header[1]} << 16) | (std::size_t{header[2]} << 8) |
           std::size_t{header[3]};
}

Frame encode_frame(const WireMessage& msg) {
    return std::visit([](const auto& m) { return assemble(tag_of(m), payload_of(m)); }, msg);
}

Frame encode_frame(const SiteMessage& msg) {
    return std::visit([](const auto& m) { return assemble(tag_of(m), payload_of(m)); }, msg);
}

WireMessage decode_frame(std::span<const std::uint8_t> frame) {
    if (frame.size() < kFrameHeaderSize) violation("frame shorter than its header");
    const std::size_t len = frame_payload_length(frame);
    if (frame.size() != kFrameHeaderSize + len) violation("frame length field does not match frame size");
    const std::uint8_t raw_tag = frame[4];
    if (raw_tag > static_cast<std::uint8_t>(FrameTag::Terminate)) {
        violation("unknown frame tag " + std::to_string(raw_tag));
    }
    const auto payload = frame.subspan(kFrameHeaderSize);
    ojson j;
    try {
        j = ojson::parse(payload.begin(), payload.end());
    } catch (const nlohmann::json::exception& e) {
        violation(std::string("payload is not JSON: ") + e.what());
    }
    try {
        return parse_payload(static_cast<FrameTag>(raw_tag), j);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ProtocolViolation) throw;
        violation(e.what());
    }
}

SiteMessage decode_site_frame(std::span<const std::uint8_t> frame) {
    WireMessage msg = decode_frame(frame);
    if (auto* h = std::get_if<Hello>(&msg)) return *h;
    if (auto* r = std::get_if<DiscrepancyReport>(&msg)) return std::move(*r);
    violation("site emitted a frame outside {Hello, DiscrepancyReport}");
}

std::vector<Frame> split_frames(std::span<const std::uint8_t> bytes) {
    std::vector<Frame> frames;
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        if (bytes.size() - pos < kFrameHeaderSize) violation("truncated frame header");
        const std::size_t len = frame_payload_length(bytes.subspan(pos, 4));
        if (bytes.size() - pos < kFrameHeaderSize + len) violation("truncated frame payload");
        const auto chunk = bytes.subspan(pos, kFrameHeaderSize + len);
        frames.emplace_back(chunk.begin(), chunk.end());
        pos += kFrameHeaderSize + len;
    }
    return frames;
}

std::vector<SiteMessage> parse_site_capture(std::span<const std::uint8_t> bytes) {
    std::vector<SiteMessage> out;
    for (const auto& f : split_frames(bytes)) out.push_back(decode_site_frame(f));
    return out;
}

}  // namespace graffl
