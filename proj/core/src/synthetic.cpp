#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "mtriage/csv.hpp"
#include "mtriage/dataset.hpp"
#include "mtriage/errors.hpp"
#include "mtriage/random.hpp"

namespace fs = std::filesystem;

namespace mtriage {

void SyntheticConfig::validate() const {
    if (n_patients < 1) throw ConfigError("synthetic: n_patients must be >= 1");
    if (max_cases_per_patient < 1) throw ConfigError("synthetic: max_cases_per_patient must be >= 1");
    if (!(prevalence_high > 0.0 && prevalence_high < 1.0)) {
        throw ConfigError("synthetic: prevalence_high must be in (0, 1)");
    }
    if (bag_size_min < 1 || bag_size_max < bag_size_min) {
        throw ConfigError("synthetic: need 1 <= bag_size_min <= bag_size_max");
    }
    if (max_slides_per_case < 1 || max_sections_per_slide < 1) {
        throw ConfigError("synthetic: slide/section counts must be >= 1");
    }
    if (!(signal_fraction >= 0.0 && signal_fraction <= 1.0)) {
        throw ConfigError("synthetic: signal_fraction must be in [0, 1]");
    }
    if (!(class_separation >= 0.0) || !std::isfinite(class_separation)) {
        throw ConfigError("synthetic: class_separation must be finite and >= 0");
    }
    if (feature_dim < 1) throw ConfigError("synthetic: feature_dim must be >= 1");
    if (!(ood_fraction >= 0.0 && ood_fraction < 1.0)) {
        throw ConfigError("synthetic: ood_fraction must be in [0, 1)");
    }
}

std::size_t n_signal_tiles(std::size_t n_tiles, double signal_fraction) {
    const auto k = static_cast<std::size_t>(std::llround(signal_fraction * double(n_tiles)));
    return std::clamp<std::size_t>(k, 1, n_tiles);
}

std::vector<CaseRecord> SyntheticCohort::records() const {
    std::vector<CaseRecord> out;
    out.reserve(cases.size());
    for (const auto& c : cases) out.push_back(c.record);
    return out;
}

namespace {

double log_add(double a, double b) {
    if (a == -INFINITY) return b;
    if (b == -INFINITY) return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

std::vector<float> signal_direction(const SyntheticConfig& config) {
    auto rng = make_rng(derive_seed(config.seed, "synthetic/direction"));
    std::vector<double> u(static_cast<std::size_t>(config.feature_dim));
    double norm = 0.0;
    do {
        norm = 0.0;
        for (auto& x : u) {
            x = standard_normal(rng);
            norm += x * x;
        }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    std::vector<float> out(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) out[i] = static_cast<float>(u[i] / norm);
    return out;
}

int uniform_int(Rng& rng, int lo, int hi) {
    return lo + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(hi - lo + 1)));
}

} // namespace

double bayes_oracle_score(const FeatureBag& bag, std::span<const float> direction,
                          const SyntheticConfig& config) {
    const double prior_log_odds = std::log(config.prevalence_high / (1.0 - config.prevalence_high));
    const double s = config.class_separation;
    if (s == 0.0) return prior_log_odds;

    const std::size_t n = bag.n_tiles();
    const std::size_t k = n_signal_tiles(n, config.signal_fraction);

    // log e_k(w) with w_i = exp(s z_i - s^2/2), by the elementary symmetric
    // polynomial recurrence carried in log space.
    std::vector<double> log_e(k + 1, -INFINITY);
    log_e[0] = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double z = 0.0;
        const auto row = bag.row(i);
        for (std::size_t d = 0; d < bag.dim; ++d) z += double(row[d]) * double(direction[d]);
        const double log_w = s * z - 0.5 * s * s;
        const std::size_t top = std::min(k, i + 1);
        for (std::size_t j = top; j >= 1; --j) log_e[j] = log_add(log_e[j], log_e[j - 1] + log_w);
    }
    const double log_binom = std::lgamma(double(n) + 1) - std::lgamma(double(k) + 1) -
                             std::lgamma(double(n - k) + 1);
    return log_e[k] - log_binom + prior_log_odds;
}

SyntheticCohort generate_synthetic(const SyntheticConfig& config, const fs::path& feature_dir) {
    config.validate();
    const auto direction = signal_direction(config);
    auto rng = make_rng(derive_seed(config.seed, "synthetic/cohort"));
    const auto dim = static_cast<std::size_t>(config.feature_dim);
    const double log_lo = std::log(double(config.bag_size_min));
    const double log_hi = std::log(double(config.bag_size_max) + 1.0);

    SyntheticCohort cohort;
    for (int p = 0; p < config.n_patients; ++p) {
        const auto patient_id = fmt::format("P{:05d}", p);
        const bool ood = bernoulli(rng, config.ood_fraction);
        const int n_cases = uniform_int(rng, 1, config.max_cases_per_patient);
        for (int c = 0; c < n_cases; ++c) {
            SyntheticCase sc;
            auto& rec = sc.record;
            rec.case_id = fmt::format("{}-C{}", patient_id, c);
            rec.patient_id = patient_id;
            rec.label = bernoulli(rng, config.prevalence_high) ? Label::High : Label::Low;
            rec.partition_tags.insert(ood ? kOutOfDistributionTag : kInDistributionTag);
            rec.partition_tags.insert(bernoulli(rng, 0.5) ? "scanner:A" : "scanner:B");

            const auto n_tiles = std::clamp<std::size_t>(
                static_cast<std::size_t>(std::exp(log_lo + (log_hi - log_lo) * uniform01(rng))),
                static_cast<std::size_t>(config.bag_size_min),
                static_cast<std::size_t>(config.bag_size_max));

            // Distribute tiles over slides, then over cross-sections per slide.
            const int n_slides = uniform_int(rng, 1, config.max_slides_per_case);
            std::vector<std::vector<std::size_t>> per_section_counts(static_cast<std::size_t>(n_slides));
            for (auto& counts : per_section_counts) {
                counts.assign(static_cast<std::size_t>(uniform_int(rng, 1, config.max_sections_per_slide)), 0);
            }
            for (std::size_t t = 0; t < n_tiles; ++t) {
                auto& counts = per_section_counts[uniform_index(rng, per_section_counts.size())];
                ++counts[uniform_index(rng, counts.size())];
            }

            auto& bag = sc.bag;
            bag.case_id = rec.case_id;
            bag.dim = dim;
            for (std::size_t s = 0; s < per_section_counts.size(); ++s) {
                SlideRecord slide;
                slide.slide_id = fmt::format("{}-S{}", rec.case_id, s);
                slide.feature_file = feature_dir / (slide.slide_id + ".fbag");
                const auto slide_index = static_cast<std::uint32_t>(bag.slide_ids.size());
                bag.slide_ids.push_back(slide.slide_id);

                std::size_t slide_tiles = 0;
                for (auto n : per_section_counts[s]) slide_tiles += n;
                const auto width = static_cast<std::uint32_t>(
                    std::max<double>(1.0, std::ceil(std::sqrt(double(slide_tiles)))));

                std::uint32_t index = 0;
                for (std::size_t sec = 0; sec < per_section_counts[s].size(); ++sec) {
                    if (per_section_counts[s][sec] == 0) continue;
                    CrossSection cs;
                    cs.section_id = static_cast<std::uint16_t>(sec);
                    for (std::size_t j = 0; j < per_section_counts[s][sec]; ++j, ++index) {
                        cs.tile_indices.push_back(index);
                        bag.tiles.push_back({slide_index, cs.section_id, index % width, index / width});
                    }
                    slide.cross_sections.push_back(std::move(cs));
                }
                rec.slides.push_back(std::move(slide));
            }

            sc.signal.assign(n_tiles, false);
            if (rec.label == Label::High) {
                std::vector<std::size_t> order(n_tiles);
                std::iota(order.begin(), order.end(), 0);
                shuffle(order.begin(), order.end(), rng);
                const auto k = n_signal_tiles(n_tiles, config.signal_fraction);
                for (std::size_t i = 0; i < k; ++i) sc.signal[order[i]] = true;
            }

            bag.vectors.resize(n_tiles * dim);
            for (std::size_t t = 0; t < n_tiles; ++t) {
                auto row = bag.row(t);
                for (std::size_t d = 0; d < dim; ++d) {
                    double v = standard_normal(rng);
                    if (sc.signal[t]) v += config.class_separation * double(direction[d]);
                    row[d] = static_cast<float>(v);
                }
            }
            sc.oracle_score = bayes_oracle_score(bag, direction, config);
            cohort.cases.push_back(std::move(sc));
        }
    }
    cohort.direction = direction;
    return cohort;
}

void write_oracle_csv(const std::vector<OracleRow>& rows, const fs::path& path,
                      const nlohmann::json& run_config) {
    std::string out;
    if (!run_config.is_null()) out += csv::run_config_line(run_config);
    out += "case_id,oracle_score,label\n";
    for (const auto& r : rows) {
        out += fmt::format("{},{},{}\n", r.case_id, csv::format_number(r.oracle_score),
                           to_string(r.label));
    }
    csv::write_text(path, out);
}

void write_synthetic(const SyntheticCohort& cohort, const fs::path& out_dir,
                     const nlohmann::json& run_config) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    std::vector<OracleRow> oracle;
    for (const auto& sc : cohort.cases) {
        // Split the case bag back into one file per slide.
        for (std::size_t s = 0; s < sc.record.slides.size(); ++s) {
            const auto& slide = sc.record.slides[s];
            FeatureBag file;
            file.dim = sc.bag.dim;
            file.slide_ids = {slide.slide_id};
            for (std::size_t t = 0; t < sc.bag.n_tiles(); ++t) {
                if (sc.bag.tiles[t].slide != s) continue;
                auto meta = sc.bag.tiles[t];
                meta.slide = 0;
                file.tiles.push_back(meta);
                const auto row = sc.bag.row(t);
                file.vectors.insert(file.vectors.end(), row.begin(), row.end());
            }
            fs::create_directories(slide.feature_file.parent_path(), ec);
            write_feature_bag(file, slide.feature_file);
        }
        oracle.push_back({sc.record.case_id, sc.oracle_score, sc.record.label});
    }
    write_manifest(cohort.records(), out_dir / "manifest.json", run_config);
    write_oracle_csv(oracle, out_dir / "oracle.csv", run_config);
}

} // namespace mtriage
