#include <cmath>
#include <fstream>
#include <unordered_set>

#include <fmt/format.h>

#include "mtriage/csv.hpp"
#include "mtriage/dataset.hpp"
#include "mtriage/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mtriage {

std::string to_string(Label label) {
    return label == Label::High ? "high" : "low";
}

Label parse_label(const std::string& text) {
    if (text == "high" || text == "1") return Label::High;
    if (text == "low" || text == "0") return Label::Low;
    throw ParseError("invalid label '" + text + "' (expected low|high)");
}

void validate_bag(const FeatureBag& bag) {
    if (bag.n_tiles() == 0) {
        throw ValidationError(fmt::format("bag '{}' has no tiles", bag.case_id));
    }
    if (bag.dim == 0 || bag.vectors.size() != bag.n_tiles() * bag.dim) {
        throw ValidationError(fmt::format("bag '{}' has inconsistent vector storage", bag.case_id));
    }
    for (float v : bag.vectors) {
        if (!std::isfinite(v)) {
            throw ValidationError(fmt::format("bag '{}' contains non-finite values", bag.case_id));
        }
    }
    for (const auto& t : bag.tiles) {
        if (t.slide >= bag.slide_ids.size()) {
            throw ValidationError(fmt::format("bag '{}' has a tile with unknown slide", bag.case_id));
        }
    }
}

namespace {

[[noreturn]] void field_error(const std::string& case_id, const std::string& field,
                              const std::string& detail) {
    throw ParseError(fmt::format("manifest case '{}': field '{}': {}",
                                 case_id.empty() ? "<unknown>" : case_id, field, detail));
}

const json& require(const json& obj, const char* key, const std::string& case_id) {
    if (!obj.is_object() || !obj.contains(key)) field_error(case_id, key, "missing");
    return obj.at(key);
}

std::string require_string(const json& obj, const char* key, const std::string& case_id) {
    const auto& v = require(obj, key, case_id);
    if (!v.is_string() || v.get_ref<const std::string&>().empty()) {
        field_error(case_id, key, "expected non-empty string");
    }
    return v.get<std::string>();
}

SlideRecord parse_slide(const json& js, const std::string& case_id, const fs::path& base_dir) {
    SlideRecord slide;
    slide.slide_id = require_string(js, "slide_id", case_id);
    fs::path feature = require_string(js, "feature_file", case_id);
    slide.feature_file = feature.is_relative() && !base_dir.empty() ? base_dir / feature : feature;

    const auto& sections = require(js, "sections", case_id);
    if (!sections.is_array()) field_error(case_id, "sections", "expected array");
    std::unordered_set<std::uint32_t> seen_sections;
    std::unordered_set<std::uint32_t> seen_tiles;
    for (const auto& sj : sections) {
        const auto& id = require(sj, "section_id", case_id);
        if (!id.is_number_unsigned() || id.get<std::uint64_t>() > 0xFFFF) {
            field_error(case_id, "section_id", "expected integer in [0, 65535]");
        }
        CrossSection section;
        section.section_id = id.get<std::uint16_t>();
        if (!seen_sections.insert(section.section_id).second) {
            field_error(case_id, "section_id",
                        fmt::format("duplicate section {} in slide '{}'", section.section_id,
                                    slide.slide_id));
        }
        const auto& tiles = require(sj, "tile_indices", case_id);
        if (!tiles.is_array()) field_error(case_id, "tile_indices", "expected array");
        for (const auto& t : tiles) {
            if (!t.is_number_unsigned() || t.get<std::uint64_t>() > 0xFFFFFFFFull) {
                field_error(case_id, "tile_indices", "expected non-negative integer");
            }
            const auto index = t.get<std::uint32_t>();
            if (!seen_tiles.insert(index).second) {
                field_error(case_id, "tile_indices",
                            fmt::format("tile {} listed in more than one section of slide '{}'",
                                        index, slide.slide_id));
            }
            section.tile_indices.push_back(index);
        }
        slide.cross_sections.push_back(std::move(section));
    }
    return slide;
}

} // namespace

std::vector<CaseRecord> parse_manifest(const json& doc, const fs::path& base_dir) {
    if (!doc.is_object()) throw ParseError("manifest: top level must be an object");
    if (!doc.contains("version") || !doc["version"].is_number_integer() ||
        doc["version"].get<int>() != kManifestVersion) {
        throw FormatError("manifest: unsupported or missing version (expected 1)");
    }
    if (!doc.contains("cases") || !doc["cases"].is_array()) {
        throw ParseError("manifest: 'cases' must be an array");
    }

    std::vector<CaseRecord> cases;
    std::unordered_set<std::string> ids;
    for (const auto& cj : doc["cases"]) {
        std::string case_id;
        if (cj.is_object() && cj.contains("case_id") && cj["case_id"].is_string()) {
            case_id = cj["case_id"].get<std::string>();
        }
        CaseRecord record;
        record.case_id = require_string(cj, "case_id", case_id);
        record.patient_id = require_string(cj, "patient_id", case_id);
        const auto label = require_string(cj, "label", case_id);
        if (label != "low" && label != "high") field_error(case_id, "label", "expected low|high");
        record.label = parse_label(label);

        const auto& tags = require(cj, "tags", case_id);
        if (!tags.is_array()) field_error(case_id, "tags", "expected array of strings");
        for (const auto& t : tags) {
            if (!t.is_string()) field_error(case_id, "tags", "expected array of strings");
            record.partition_tags.insert(t.get<std::string>());
        }

        const auto& slides = require(cj, "slides", case_id);
        if (!slides.is_array() || slides.empty()) {
            field_error(case_id, "slides", "expected non-empty array");
        }
        std::unordered_set<std::string> slide_ids;
        for (const auto& sj : slides) {
            auto slide = parse_slide(sj, case_id, base_dir);
            if (!slide_ids.insert(slide.slide_id).second) {
                field_error(case_id, "slide_id", "duplicate slide '" + slide.slide_id + "'");
            }
            record.slides.push_back(std::move(slide));
        }

        if (!ids.insert(record.case_id).second) {
            throw ValidationError("manifest: duplicate case_id '" + record.case_id + "'");
        }
        cases.push_back(std::move(record));
    }
    return cases;
}

std::vector<CaseRecord> load_manifest(const fs::path& path) {
    const auto text = csv::read_text(path);
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError("manifest " + path.string() + ": " + e.what());
    }
    return parse_manifest(doc, path.parent_path());
}

json manifest_to_json(const std::vector<CaseRecord>& cases, const fs::path& base_dir) {
    json out_cases = json::array();
    for (const auto& c : cases) {
        json slides = json::array();
        for (const auto& s : c.slides) {
            json sections = json::array();
            for (const auto& cs : s.cross_sections) {
                sections.push_back({{"section_id", cs.section_id}, {"tile_indices", cs.tile_indices}});
            }
            fs::path file = s.feature_file;
            if (!base_dir.empty()) {
                auto rel = file.lexically_relative(base_dir);
                if (!rel.empty() && *rel.begin() != "..") file = rel;
            }
            slides.push_back({{"slide_id", s.slide_id},
                              {"feature_file", file.generic_string()},
                              {"sections", std::move(sections)}});
        }
        out_cases.push_back({{"case_id", c.case_id},
                             {"patient_id", c.patient_id},
                             {"label", to_string(c.label)},
                             {"tags", json(c.partition_tags)},
                             {"slides", std::move(slides)}});
    }
    return {{"version", kManifestVersion}, {"cases", std::move(out_cases)}};
}

void write_manifest(const std::vector<CaseRecord>& cases, const fs::path& path,
                    const json& run_config) {
    auto doc = manifest_to_json(cases, path.parent_path());
    if (!run_config.is_null()) doc["run_config"] = run_config;
    csv::write_text(path, doc.dump(1) + "\n");
}

} // namespace mtriage
