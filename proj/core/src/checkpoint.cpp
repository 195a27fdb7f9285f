#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "mtriage/aggregator.hpp"
#include "mtriage/errors.hpp"
#include "mtriage/little_endian.hpp"

namespace mtriage {

namespace {
constexpr std::uint8_t kMagic[4] = {'A', 'G', 'G', 'R'};
}

// Layout: "AGGR" | u16 version | u32 config_len | config JSON | u32 n_tensors |
// n_tensors x {u16 name_len, name, u8 rank, rank x u32 dim, float32 data}.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    nlohmann::json header = {{"aggregator", ckpt.params.config().to_json()},
                             {"metadata", ckpt.metadata}};
    const auto text = header.dump();

    le::Writer w;
    w.bytes(kMagic, 4);
    w.u16(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(text.size()));
    w.bytes(text.data(), text.size());
    const auto& tensors = ckpt.params.tensors();
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        w.u16(static_cast<std::uint16_t>(t.name.size()));
        w.bytes(t.name.data(), t.name.size());
        w.u8(static_cast<std::uint8_t>(t.shape.size()));
        for (auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
        for (float v : t.data) w.f32(v);
    }
    return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 6 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError("checkpoint: bad magic");
    }
    le::Reader r(bytes.subspan(4));
    const auto version = r.u16();
    if (version != kCheckpointVersion) {
        throw FormatError(fmt::format("checkpoint: unsupported version {}", version));
    }
    const auto header_bytes = r.bytes(r.u32());
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_bytes.begin(), header_bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: bad config block: ") + e.what());
    }
    if (!header.contains("aggregator")) throw FormatError("checkpoint: config block lacks 'aggregator'");

    Checkpoint ckpt;
    ckpt.params = AggregatorParams<float>(AggregatorConfig::from_json(header["aggregator"]));
    ckpt.metadata = header.value("metadata", nlohmann::json::object());

    auto& tensors = ckpt.params.tensors();
    const auto count = r.u32();
    if (count != tensors.size()) {
        throw FormatError(fmt::format("checkpoint: {} tensors, config implies {}", count, tensors.size()));
    }
    for (auto& t : tensors) {
        const auto name_bytes = r.bytes(r.u16());
        const std::string name(name_bytes.begin(), name_bytes.end());
        if (name != t.name) {
            throw FormatError(fmt::format("checkpoint: expected tensor '{}', found '{}'", t.name, name));
        }
        const auto rank = r.u8();
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = r.u32();
        if (shape != t.shape) throw FormatError("checkpoint: shape mismatch for '" + name + "'");
        for (auto& v : t.data) v = r.f32();
    }
    if (r.remaining() != 0) throw LengthError("checkpoint: trailing bytes");
    if (!ckpt.params.all_finite()) throw ValidationError("checkpoint: non-finite parameters");
    return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

} // namespace mtriage
