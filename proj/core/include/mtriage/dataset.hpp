#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mtriage {

enum class Label : std::uint8_t { Low = 0, High = 1 };

std::string to_string(Label label);
Label parse_label(const std::string& text);

struct CrossSection {
    std::uint16_t section_id = 0;
    std::vector<std::uint32_t> tile_indices;

    bool operator==(const CrossSection&) const = default;
};

struct SlideRecord {
    std::string slide_id;
    std::vector<CrossSection> cross_sections;
    std::filesystem::path feature_file;

    bool operator==(const SlideRecord&) const = default;
};

struct CaseRecord {
    std::string case_id;
    std::string patient_id;
    Label label = Label::Low;
    std::set<std::string> partition_tags;
    std::vector<SlideRecord> slides;

    bool has_tag(const std::string& tag) const { return partition_tags.count(tag) != 0; }
    bool operator==(const CaseRecord&) const = default;
};

inline constexpr const char* kOutOfDistributionTag = "out_of_distribution";
inline constexpr const char* kInDistributionTag = "in_distribution";

struct TileMeta {
    std::uint32_t slide = 0;  // index into FeatureBag::slide_ids
    std::uint16_t section_id = 0;
    std::uint32_t grid_x = 0;
    std::uint32_t grid_y = 0;

    bool operator==(const TileMeta&) const = default;
};

/// One specimen's tile feature vectors, row-major [n_tiles x dim].
struct FeatureBag {
    std::string case_id;
    std::size_t dim = 0;
    std::vector<float> vectors;
    std::vector<TileMeta> tiles;
    std::vector<std::string> slide_ids;

    std::size_t n_tiles() const { return tiles.size(); }
    std::span<const float> row(std::size_t i) const {
        return {vectors.data() + i * dim, dim};
    }
    std::span<float> row(std::size_t i) { return {vectors.data() + i * dim, dim}; }

    bool operator==(const FeatureBag&) const = default;
};

/// Throws ValidationError unless n_tiles >= 1, every value finite and the
/// vector buffer matches n_tiles * dim.
void validate_bag(const FeatureBag& bag);

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

inline constexpr int kManifestVersion = 1;

/// Strict: any malformed record rejects the whole document. Relative
/// feature_file paths are resolved against the manifest's directory.
std::vector<CaseRecord> load_manifest(const std::filesystem::path& path);
std::vector<CaseRecord> parse_manifest(const nlohmann::json& doc,
                                       const std::filesystem::path& base_dir = {});

/// Feature paths are written relative to `base_dir` when they live under it.
nlohmann::json manifest_to_json(const std::vector<CaseRecord>& cases,
                                const std::filesystem::path& base_dir = {});
void write_manifest(const std::vector<CaseRecord>& cases, const std::filesystem::path& path,
                    const nlohmann::json& run_config = nullptr);

// ---------------------------------------------------------------------------
// Feature-bag files
// ---------------------------------------------------------------------------

inline constexpr std::uint16_t kFeatureBagVersion = 1;

std::vector<std::uint8_t> encode_feature_bag(const FeatureBag& bag);
/// Slide and case identity are not part of the on-disk format; the decoded
/// bag has every tile pointing at a single unnamed slide.
FeatureBag decode_feature_bag(std::span<const std::uint8_t> bytes);

void write_feature_bag(const FeatureBag& bag, const std::filesystem::path& path);
FeatureBag read_feature_bag(const std::filesystem::path& path);

/// Assembles the case's bag from the tiles its cross-sections reference,
/// across all slides, in manifest order.
FeatureBag load_case_bag(const CaseRecord& record);

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

enum class SplitSet : std::uint8_t { Development, Test };

struct PatientAssignment {
    SplitSet set = SplitSet::Development;
    std::optional<int> fold;

    bool operator==(const PatientAssignment&) const = default;
};

struct SplitAssignment {
    std::map<std::string, PatientAssignment> patients;

    bool operator==(const SplitAssignment&) const = default;

    std::vector<std::string> patients_in(SplitSet set) const;
    /// Cases whose patient is in `set` (and in `fold`, when given).
    std::vector<CaseRecord> select(const std::vector<CaseRecord>& cases, SplitSet set,
                                   std::optional<int> fold = std::nullopt) const;
};

/// Patient-level split. Patients with any out-of-distribution case always go
/// to Test. With `stratify`, high-bearing and low-only patients are split
/// separately.
SplitAssignment split_patients(const std::vector<CaseRecord>& cases, double test_fraction,
                               std::uint64_t seed, bool stratify = false);

/// Assigns every Development patient of `split` to one of k folds,
/// stratified by patient-level label.
SplitAssignment assign_folds(const std::vector<CaseRecord>& cases, SplitAssignment split,
                             int k, std::uint64_t seed);

void write_split_csv(const SplitAssignment& split, const std::filesystem::path& path,
                     const nlohmann::json& run_config = nullptr);
SplitAssignment read_split_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic cohort
// ---------------------------------------------------------------------------

struct SyntheticConfig {
    int n_patients = 200;
    int max_cases_per_patient = 3;  // uniform on [1, max]
    double prevalence_high = 0.134;
    int bag_size_min = 1;           // log-uniform on [min, max]
    int bag_size_max = 1024;
    int max_slides_per_case = 2;    // uniform on [1, max]
    int max_sections_per_slide = 3; // uniform on [1, max]
    double signal_fraction = 0.2;
    double class_separation = 2.0;  // in units of the background sigma
    int feature_dim = 192;
    double ood_fraction = 0.0;      // fraction of patients tagged out_of_distribution
    std::uint64_t seed = 0;

    void validate() const;
};

struct SyntheticCase {
    CaseRecord record;
    FeatureBag bag;
    double oracle_score = 0.0;
    std::vector<bool> signal;  // per tile of `bag`
};

struct SyntheticCohort {
    std::vector<SyntheticCase> cases;
    std::vector<float> direction;  // unit signal direction

    std::vector<CaseRecord> records() const;
};

/// In-memory generation. Feature files are assigned paths under
/// `feature_dir` but nothing is written.
SyntheticCohort generate_synthetic(const SyntheticConfig& config,
                                   const std::filesystem::path& feature_dir = "features");

/// Writes manifest.json, features/<slide>.fbag and oracle.csv under `out_dir`.
void write_synthetic(const SyntheticCohort& cohort, const std::filesystem::path& out_dir,
                     const nlohmann::json& run_config = nullptr);

/// Posterior log-odds of high complexity under the generator's model: isotropic unit
/// Gaussian background, signal tiles shifted by `separation` along `direction`,
/// exactly `n_signal(n)` signal tiles in a high bag.
double bayes_oracle_score(const FeatureBag& bag, std::span<const float> direction,
                          const SyntheticConfig& config);
std::size_t n_signal_tiles(std::size_t n_tiles, double signal_fraction);

struct OracleRow {
    std::string case_id;
    double oracle_score = 0.0;
    Label label = Label::Low;
};
void write_oracle_csv(const std::vector<OracleRow>& rows, const std::filesystem::path& path,
                      const nlohmann::json& run_config = nullptr);

} // namespace mtriage
