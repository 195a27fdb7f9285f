#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtriage/aggregator.hpp"
#include "mtriage/dataset.hpp"
#include "mtriage/training.hpp"

namespace mtriage::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;

/// Flat key=value settings from a config file plus flag overrides. Echoed
/// into every artifact a subcommand writes.
struct RunConfig {
    std::string subcommand;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> settings;
    std::map<std::string, std::string> inputs;

    /// Stage-keyed seed derived from the global seed.
    std::uint64_t stage_seed(std::string_view stage) const;
    nlohmann::json to_json() const;

    std::optional<std::string> get(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
};

/// Parses `key = value` lines; '#' starts a comment. Unknown keys are
/// rejected with ValidationError.
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> load_config_file(const std::filesystem::path& path);

AggregatorConfig aggregator_config_from(const RunConfig& rc);
TrainConfig train_config_from(const RunConfig& rc);
SyntheticConfig synthetic_config_from(const RunConfig& rc);

struct PredictionRow {
    std::string case_id;
    double prob_high = 0.0;
    Label label = Label::Low;
    std::set<std::string> tags;
    std::vector<double> members;
};

/// Ensemble prediction for every case, in manifest order.
std::vector<PredictionRow> predict(const std::vector<CaseRecord>& cases, const std::vector<Checkpoint>& checkpoints);
std::string predictions_csv(const std::vector<PredictionRow>& rows, bool with_members,
                            const nlohmann::json& run_config = nullptr);

struct AttentionRow {
    std::string slide_id;
    std::uint32_t grid_x = 0;
    std::uint32_t grid_y = 0;
    std::uint16_t section_id = 0;
    double weight = 0.0;
};

/// Per-tile attention weights for one case; throws LookupError for an
/// unknown case id.
std::vector<AttentionRow> attention(const std::string& case_id, const std::vector<CaseRecord>& cases,
                                    const Checkpoint& checkpoint);
std::string attention_csv(const std::vector<AttentionRow>& rows, const nlohmann::json& run_config = nullptr);

/// Entry point: returns 0 on success, 1 on validation/argument errors and 2
/// on I/O errors. Diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

} // namespace mtriage::cli
