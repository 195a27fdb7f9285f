#include <cstring>
#include <fstream>

#include <png.h>

#include <fmt/format.h>

#include "mtriage/csv.hpp"
#include "mtriage/errors.hpp"
#include "mtriage/tessellation.hpp"

namespace fs = std::filesystem;

namespace mtriage {

GrayImage read_gray_png(const fs::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        const std::string msg = image.message;
        png_image_free(&image);
        if (!fs::exists(path)) throw IoError("cannot open PNG: " + path.string());
        throw FormatError(fmt::format("PNG {}: {}", path.string(), msg));
    }
    image.format = PNG_FORMAT_GRAY;
    GrayImage out;
    out.width = image.width;
    out.height = image.height;
    out.pixels.resize(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw FormatError(fmt::format("PNG {}: {}", path.string(), msg));
    }
    return out;
}

void write_gray_png(const GrayImage& img, const fs::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = img.width;
    image.height = img.height;
    image.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
        throw IoError(fmt::format("cannot write PNG {}: {}", path.string(), image.message));
    }
}

SegmentationMap read_mask_png(const fs::path& path, double mask_magnification) {
    const auto img = read_gray_png(path);
    SegmentationMap map(img.width, img.height, mask_magnification);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        switch (img.pixels[i]) {
        case 0: break;
        case 1: map.tissue[i] = 1; break;
        case 2: map.pen[i] = 1; break;
        default:
            throw FormatError(fmt::format("mask {}: invalid label value {} (expected 0, 1 or 2)",
                                          path.string(), img.pixels[i]));
        }
    }
    map.validate();
    return map;
}

void write_mask_png(const SegmentationMap& map, const fs::path& path) {
    map.validate();
    GrayImage img{map.width, map.height, std::vector<std::uint8_t>(map.tissue.size(), 0)};
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        if (map.pen[i]) {
            img.pixels[i] = 2;
        } else if (map.tissue[i]) {
            img.pixels[i] = 1;
        }
    }
    write_gray_png(img, path);
    csv::write_text(fs::path(path.string() + ".hdr"),
                    fmt::format("mask_magnification={}\n", csv::format_number(map.mask_magnification)));
}

std::optional<double> read_mask_sidecar(const fs::path& mask_path) {
    const fs::path sidecar(mask_path.string() + ".hdr");
    if (!fs::exists(sidecar)) return std::nullopt;
    const auto text = csv::read_text(sidecar);
    std::optional<double> magnification;
    for (const auto& raw : csv::split(text, '\n')) {
        std::string line = raw;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("mask header: expected key=value: " + line);
        const auto key = line.substr(0, eq);
        if (key == "mask_magnification") {
            magnification = csv::parse_double(line.substr(eq + 1), "mask_magnification");
        }
    }
    if (!magnification) throw ParseError("mask header lacks mask_magnification: " + sidecar.string());
    return magnification;
}

} // namespace mtriage
