#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "mtriage/csv.hpp"
#include "mtriage/dataset.hpp"
#include "mtriage/errors.hpp"
#include "mtriage/random.hpp"

namespace mtriage {

namespace {

struct PatientInfo {
    bool high = false;
    bool ood = false;
};

std::map<std::string, PatientInfo> patient_info(const std::vector<CaseRecord>& cases) {
    std::map<std::string, PatientInfo> info;
    for (const auto& c : cases) {
        auto& p = info[c.patient_id];
        p.high = p.high || c.label == Label::High;
        p.ood = p.ood || c.has_tag(kOutOfDistributionTag);
    }
    return info;
}

} // namespace

std::vector<std::string> SplitAssignment::patients_in(SplitSet set) const {
    std::vector<std::string> out;
    for (const auto& [id, a] : patients) {
        if (a.set == set) out.push_back(id);
    }
    return out;
}

std::vector<CaseRecord> SplitAssignment::select(const std::vector<CaseRecord>& cases, SplitSet set,
                                                std::optional<int> fold) const {
    std::vector<CaseRecord> out;
    for (const auto& c : cases) {
        auto it = patients.find(c.patient_id);
        if (it == patients.end()) {
            throw LookupError("split has no entry for patient '" + c.patient_id + "'");
        }
        if (it->second.set != set) continue;
        if (fold && it->second.fold != fold) continue;
        out.push_back(c);
    }
    return out;
}

SplitAssignment split_patients(const std::vector<CaseRecord>& cases, double test_fraction,
                               std::uint64_t seed, bool stratify) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw ArgumentError("test_fraction must be in (0, 1)");
    }
    const auto info = patient_info(cases);
    const auto n = static_cast<long long>(info.size());
    if (n < 2) throw SizeError("split_patients needs at least 2 patients");

    SplitAssignment split;
    std::vector<std::string> forced;
    std::vector<std::string> high_pool;
    std::vector<std::string> low_pool;
    for (const auto& [id, p] : info) {
        if (p.ood) {
            forced.push_back(id);
        } else if (stratify && p.high) {
            high_pool.push_back(id);
        } else {
            low_pool.push_back(id);
        }
    }
    if (static_cast<long long>(forced.size()) >= n) {
        throw SizeError("every patient is out-of-distribution; development set would be empty");
    }

    const long long n_test = std::clamp<long long>(std::llround(test_fraction * double(n)), 1, n - 1);
    long long extra = std::max<long long>(0, n_test - static_cast<long long>(forced.size()));

    auto rng = make_rng(derive_seed(seed, "split_patients"));
    for (const auto& id : forced) split.patients[id] = {SplitSet::Test, std::nullopt};

    auto take = [&](std::vector<std::string>& pool, long long count) {
        shuffle(pool.begin(), pool.end(), rng);
        for (std::size_t i = 0; i < pool.size(); ++i) {
            const bool test = static_cast<long long>(i) < count;
            split.patients[pool[i]] = {test ? SplitSet::Test : SplitSet::Development, std::nullopt};
        }
    };

    if (stratify) {
        const auto pool_total = static_cast<double>(high_pool.size() + low_pool.size());
        long long high_take = pool_total > 0
            ? std::llround(double(extra) * double(high_pool.size()) / pool_total) : 0;
        high_take = std::min<long long>(high_take, static_cast<long long>(high_pool.size()));
        take(high_pool, high_take);
        take(low_pool, std::min<long long>(extra - high_take, static_cast<long long>(low_pool.size())));
    } else {
        take(low_pool, std::min<long long>(extra, static_cast<long long>(low_pool.size())));
    }
    return split;
}

SplitAssignment assign_folds(const std::vector<CaseRecord>& cases, SplitAssignment split, int k,
                             std::uint64_t seed) {
    if (k < 2) throw ArgumentError("assign_folds needs k >= 2");
    const auto info = patient_info(cases);

    std::vector<std::string> high;
    std::vector<std::string> low;
    for (auto& [id, a] : split.patients) {
        if (a.set != SplitSet::Development) continue;
        auto it = info.find(id);
        const bool is_high = it != info.end() && it->second.high;
        (is_high ? high : low).push_back(id);
    }
    if (static_cast<long long>(high.size() + low.size()) < k) {
        throw SizeError(fmt::format("cannot form {} folds from {} development patients", k,
                                    high.size() + low.size()));
    }

    auto rng = make_rng(derive_seed(seed, "assign_folds"));
    shuffle(high.begin(), high.end(), rng);
    shuffle(low.begin(), low.end(), rng);

    // Dealing high-bearing patients first, then low-only ones, round-robin
    // keeps both fold sizes and per-fold class balance within one patient.
    int next = 0;
    for (const auto* group : {&high, &low}) {
        for (const auto& id : *group) {
            split.patients[id].fold = next;
            next = (next + 1) % k;
        }
    }
    return split;
}

void write_split_csv(const SplitAssignment& split, const std::filesystem::path& path,
                     const nlohmann::json& run_config) {
    std::string out;
    if (!run_config.is_null()) out += csv::run_config_line(run_config);
    out += "patient_id,set,fold\n";
    for (const auto& [id, a] : split.patients) {
        out += fmt::format("{},{},{}\n", id, a.set == SplitSet::Test ? "test" : "development",
                           a.fold.value_or(-1));
    }
    csv::write_text(path, out);
}

SplitAssignment read_split_csv(const std::filesystem::path& path) {
    const auto table = csv::read(path);
    const auto c_id = table.column("patient_id");
    const auto c_set = table.column("set");
    const auto c_fold = table.column("fold");
    SplitAssignment split;
    for (const auto& row : table.rows) {
        PatientAssignment a;
        if (row[c_set] == "test") {
            a.set = SplitSet::Test;
        } else if (row[c_set] == "development") {
            a.set = SplitSet::Development;
        } else {
            throw ParseError("split: invalid set '" + row[c_set] + "'");
        }
        const auto fold = csv::parse_int(row[c_fold], "fold");
        if (fold >= 0) a.fold = static_cast<int>(fold);
        if (!split.patients.emplace(row[c_id], a).second) {
            throw ValidationError("split: duplicate patient '" + row[c_id] + "'");
        }
    }
    return split;
}

} // namespace mtriage
