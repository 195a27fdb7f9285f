#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "mtriage/dataset.hpp"
#include "mtriage/errors.hpp"
#include "mtriage/little_endian.hpp"

namespace fs = std::filesystem;

namespace mtriage {

namespace {

constexpr std::uint8_t kMagic[4] = {'F', 'B', 'A', 'G'};
constexpr std::size_t kHeaderBytes = 4 + 2 + 4 + 4;

std::size_t record_bytes(std::size_t dim) {
    return 4 + 4 + 2 + 2 + 4 * dim;
}

} // namespace

std::vector<std::uint8_t> encode_feature_bag(const FeatureBag& bag) {
    if (bag.vectors.size() != bag.n_tiles() * bag.dim) {
        throw ValidationError("feature bag: vector storage does not match n_tiles * dim");
    }
    le::Writer w;
    w.bytes(kMagic, 4);
    w.u16(kFeatureBagVersion);
    w.u32(static_cast<std::uint32_t>(bag.n_tiles()));
    w.u32(static_cast<std::uint32_t>(bag.dim));
    for (std::size_t i = 0; i < bag.n_tiles(); ++i) {
        const auto& t = bag.tiles[i];
        w.u32(t.grid_x);
        w.u32(t.grid_y);
        w.u16(t.section_id);
        w.u16(0);
        for (float v : bag.row(i)) w.f32(v);
    }
    return w.take();
}

FeatureBag decode_feature_bag(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kHeaderBytes) throw LengthError("feature bag: truncated header");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("feature bag: bad magic");
    le::Reader r(bytes.subspan(4));
    const auto version = r.u16();
    if (version != kFeatureBagVersion) {
        throw FormatError(fmt::format("feature bag: unsupported version {}", version));
    }
    const std::size_t n = r.u32();
    const std::size_t dim = r.u32();
    if (dim == 0) throw FormatError("feature bag: dim must be positive");
    if (bytes.size() - kHeaderBytes != n * record_bytes(dim)) {
        throw LengthError(fmt::format("feature bag: payload is {} bytes, expected {}",
                                      bytes.size() - kHeaderBytes, n * record_bytes(dim)));
    }

    FeatureBag bag;
    bag.dim = dim;
    bag.slide_ids = {""};
    bag.tiles.resize(n);
    bag.vectors.resize(n * dim);
    for (std::size_t i = 0; i < n; ++i) {
        auto& t = bag.tiles[i];
        t.grid_x = r.u32();
        t.grid_y = r.u32();
        t.section_id = r.u16();
        r.u16();  // reserved
        for (auto& v : bag.row(i)) {
            v = r.f32();
            if (!std::isfinite(v)) {
                throw ValidationError(fmt::format("feature bag: non-finite value in tile {}", i));
            }
        }
    }
    return bag;
}

void write_feature_bag(const FeatureBag& bag, const fs::path& path) {
    const auto bytes = encode_feature_bag(bag);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

FeatureBag read_feature_bag(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open feature file: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return decode_feature_bag(bytes);
}

FeatureBag load_case_bag(const CaseRecord& record) {
    FeatureBag bag;
    bag.case_id = record.case_id;
    for (const auto& slide : record.slides) {
        const auto slide_index = static_cast<std::uint32_t>(bag.slide_ids.size());
        bag.slide_ids.push_back(slide.slide_id);
        std::size_t listed = 0;
        for (const auto& cs : slide.cross_sections) listed += cs.tile_indices.size();
        if (listed == 0) continue;

        const auto file = read_feature_bag(slide.feature_file);
        if (bag.dim == 0) bag.dim = file.dim;
        if (file.dim != bag.dim) {
            throw ValidationError(fmt::format("case '{}': slide '{}' has dim {}, expected {}",
                                              record.case_id, slide.slide_id, file.dim, bag.dim));
        }
        for (const auto& cs : slide.cross_sections) {
            for (auto index : cs.tile_indices) {
                if (index >= file.n_tiles()) {
                    throw ValidationError(fmt::format(
                        "case '{}': slide '{}' tile index {} out of range ({} tiles)",
                        record.case_id, slide.slide_id, index, file.n_tiles()));
                }
                auto meta = file.tiles[index];
                if (meta.section_id != cs.section_id) {
                    throw ValidationError(fmt::format(
                        "case '{}': slide '{}' tile {} belongs to section {}, manifest says {}",
                        record.case_id, slide.slide_id, index, meta.section_id, cs.section_id));
                }
                meta.slide = slide_index;
                bag.tiles.push_back(meta);
                const auto row = file.row(index);
                bag.vectors.insert(bag.vectors.end(), row.begin(), row.end());
            }
        }
    }
    validate_bag(bag);
    return bag;
}

} // namespace mtriage
