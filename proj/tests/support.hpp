#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "mtriage/dataset.hpp"
#include "mtriage/random.hpp"

namespace mtriage::testing {

/// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("mtriage_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// Gaussian bag on one slide; tile i is in section i % n_sections.
inline FeatureBag random_bag(Rng& rng, std::size_t n_tiles, std::size_t dim, int n_sections = 1) {
    FeatureBag bag;
    bag.case_id = "case";
    bag.dim = dim;
    bag.slide_ids = {"slide"};
    bag.vectors.resize(n_tiles * dim);
    for (auto& v : bag.vectors) v = static_cast<float>(standard_normal(rng));
    for (std::size_t i = 0; i < n_tiles; ++i) {
        bag.tiles.push_back({0, static_cast<std::uint16_t>(i % static_cast<std::size_t>(n_sections)),
                             static_cast<std::uint32_t>(i), 0});
    }
    return bag;
}

inline CaseRecord make_case(const std::string& case_id, const std::string& patient_id, Label label,
                            std::set<std::string> tags = {}) {
    CaseRecord c;
    c.case_id = case_id;
    c.patient_id = patient_id;
    c.label = label;
    c.partition_tags = std::move(tags);
    SlideRecord s;
    s.slide_id = case_id + "-S0";
    s.feature_file = case_id + ".fbag";
    s.cross_sections = {{0, {0}}};
    c.slides.push_back(s);
    return c;
}

} // namespace mtriage::testing
