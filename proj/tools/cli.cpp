#include "cli.hpp"

#include <algorithm>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "mtriage/csv.hpp"
#include "mtriage/errors.hpp"
#include "mtriage/evaluation.hpp"
#include "mtriage/tessellation.hpp"
#include "mtriage/triage_sim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mtriage::cli {

namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        // aggregator
        "feature_dim", "model_dim", "n_layers", "n_heads", "mlp_ratio", "attention_dropout_p",
        // training
        "total_iterations", "accumulation_steps", "base_lr", "lr_halving_period", "validation_period",
        "weight_decay", "section_dropout_p",
        // splitting
        "test_fraction", "folds", "stratify_split",
        // synthetic cohort
        "n_patients", "max_cases_per_patient", "prevalence_high", "bag_size_min", "bag_size_max",
        "max_slides_per_case", "max_sections_per_slide", "signal_fraction", "class_separation",
        "ood_fraction",
        // global
        "seed", "threads"};
    return keys;
}

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    s = s.substr(first, last - first + 1);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return s;
}

json format_versions() {
    return {{"manifest", kManifestVersion},
            {"feature_bag", kFeatureBagVersion},
            {"checkpoint", kCheckpointVersion}};
}

} // namespace

std::uint64_t RunConfig::stage_seed(std::string_view stage) const {
    return derive_seed(seed, stage);
}

json RunConfig::to_json() const {
    return {{"subcommand", subcommand}, {"seed", seed},       {"settings", settings},
            {"inputs", inputs},         {"formats", format_versions()}};
}

std::optional<std::string> RunConfig::get(const std::string& key) const {
    auto it = settings.find(key);
    if (it == settings.end()) return std::nullopt;
    return it->second;
}

double RunConfig::get_double(const std::string& key, double fallback) const {
    auto v = get(key);
    return v ? csv::parse_double(*v, key) : fallback;
}

long long RunConfig::get_int(const std::string& key, long long fallback) const {
    auto v = get(key);
    return v ? csv::parse_int(*v, key) : fallback;
}

bool RunConfig::get_bool(const std::string& key, bool fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw ValidationError(fmt::format("setting '{}': expected true|false, got '{}'", key, *v));
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
    std::map<std::string, std::string> out;
    int line_no = 0;
    for (auto line : csv::split(text, '\n')) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError(fmt::format("config line {}: expected key = value", line_no));
        }
        const auto key = trim(line.substr(0, eq));
        if (!known_keys().count(key)) {
            throw ValidationError(fmt::format("config line {}: unknown key '{}'", line_no, key));
        }
        out[key] = trim(line.substr(eq + 1));
    }
    return out;
}

std::map<std::string, std::string> load_config_file(const fs::path& path) {
    return parse_config_text(csv::read_text(path));
}

AggregatorConfig aggregator_config_from(const RunConfig& rc) {
    AggregatorConfig c;
    c.feature_dim = static_cast<int>(rc.get_int("feature_dim", c.feature_dim));
    c.model_dim = static_cast<int>(rc.get_int("model_dim", c.model_dim));
    c.n_layers = static_cast<int>(rc.get_int("n_layers", c.n_layers));
    c.n_heads = static_cast<int>(rc.get_int("n_heads", c.n_heads));
    c.mlp_ratio = static_cast<int>(rc.get_int("mlp_ratio", c.mlp_ratio));
    c.attention_dropout_p = rc.get_double("attention_dropout_p", c.attention_dropout_p);
    c.validate();
    return c;
}

TrainConfig train_config_from(const RunConfig& rc) {
    TrainConfig c;
    c.total_iterations = rc.get_int("total_iterations", c.total_iterations);
    c.accumulation_steps = rc.get_int("accumulation_steps", c.accumulation_steps);
    c.base_lr = rc.get_double("base_lr", c.base_lr);
    c.lr_halving_period = rc.get_int("lr_halving_period", c.lr_halving_period);
    c.validation_period = rc.get_int("validation_period", c.validation_period);
    c.weight_decay = rc.get_double("weight_decay", c.weight_decay);
    c.section_dropout_p = rc.get_double("section_dropout_p", c.section_dropout_p);
    c.seed = rc.stage_seed("train");
    c.validate();
    return c;
}

SyntheticConfig synthetic_config_from(const RunConfig& rc) {
    SyntheticConfig c;
    c.n_patients = static_cast<int>(rc.get_int("n_patients", c.n_patients));
    c.max_cases_per_patient = static_cast<int>(rc.get_int("max_cases_per_patient", c.max_cases_per_patient));
    c.prevalence_high = rc.get_double("prevalence_high", c.prevalence_high);
    c.bag_size_min = static_cast<int>(rc.get_int("bag_size_min", c.bag_size_min));
    c.bag_size_max = static_cast<int>(rc.get_int("bag_size_max", c.bag_size_max));
    c.max_slides_per_case = static_cast<int>(rc.get_int("max_slides_per_case", c.max_slides_per_case));
    c.max_sections_per_slide = static_cast<int>(rc.get_int("max_sections_per_slide", c.max_sections_per_slide));
    c.signal_fraction = rc.get_double("signal_fraction", c.signal_fraction);
    c.class_separation = rc.get_double("class_separation", c.class_separation);
    c.feature_dim = static_cast<int>(rc.get_int("feature_dim", c.feature_dim));
    c.ood_fraction = rc.get_double("ood_fraction", c.ood_fraction);
    c.seed = rc.stage_seed("synth");
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// predict / attention
// ---------------------------------------------------------------------------

std::vector<PredictionRow> predict(const std::vector<CaseRecord>& cases, const std::vector<Checkpoint>& checkpoints) {
    if (checkpoints.empty()) throw ArgumentError("predict: no checkpoints given");
    std::vector<AggregatorParams<float>> members;
    for (const auto& c : checkpoints) {
        if (!(c.params.config() == checkpoints.front().params.config())) {
            throw ValidationError("predict: checkpoints have different aggregator configs");
        }
        members.push_back(c.params);
    }
    std::vector<PredictionRow> rows;
    rows.reserve(cases.size());
    for (const auto& c : cases) {
        const auto bag = load_case_bag(c);
        PredictionRow row{c.case_id, 0.0, c.label, c.partition_tags, {}};
        for (const auto& m : members) row.members.push_back(forward(m, bag).prob_high);
        row.prob_high = member_mean(row.members);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string predictions_csv(const std::vector<PredictionRow>& rows, bool with_members, const json& run_config) {
    std::string out;
    if (!run_config.is_null()) out += csv::run_config_line(run_config);
    out += "case_id,prob_high,label,tags";
    const std::size_t n_members = rows.empty() ? 0 : rows.front().members.size();
    if (with_members) {
        for (std::size_t m = 0; m < n_members; ++m) out += fmt::format(",member_{}", m);
    }
    out += '\n';
    for (const auto& r : rows) {
        std::string tags;
        for (const auto& t : r.tags) tags += (tags.empty() ? "" : ";") + t;
        out += fmt::format("{},{},{},{}", r.case_id, csv::format_number(r.prob_high), to_string(r.label), tags);
        if (with_members) {
            for (double m : r.members) out += "," + csv::format_number(m);
        }
        out += '\n';
    }
    return out;
}

std::vector<AttentionRow> attention(const std::string& case_id, const std::vector<CaseRecord>& cases,
                                    const Checkpoint& checkpoint) {
    auto it = std::find_if(cases.begin(), cases.end(), [&](const CaseRecord& c) { return c.case_id == case_id; });
    if (it == cases.end()) throw LookupError("unknown case_id '" + case_id + "'");
    const auto bag = load_case_bag(*it);
    const auto weights = attention_weights(checkpoint.params, bag);
    std::vector<AttentionRow> rows;
    for (std::size_t i = 0; i < bag.n_tiles(); ++i) {
        const auto& t = bag.tiles[i];
        rows.push_back({bag.slide_ids[t.slide], t.grid_x, t.grid_y, t.section_id, weights[i]});
    }
    return rows;
}

std::string attention_csv(const std::vector<AttentionRow>& rows, const json& run_config) {
    std::string out;
    if (!run_config.is_null()) out += csv::run_config_line(run_config);
    out += "slide_id,grid_x,grid_y,section_id,weight\n";
    for (const auto& r : rows) {
        out += fmt::format("{},{},{},{},{}\n", r.slide_id, r.grid_x, r.grid_y, r.section_id,
                           csv::format_number(r.weight));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

namespace {

struct Common {
    std::string config_file;
    std::uint64_t seed = 0;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& common, bool with_config = true) {
    if (with_config) {
        cmd->add_option("--config", common.config_file, "key=value settings file");
        cmd->add_option("--set", common.overrides, "override one setting, key=value (repeatable)");
    }
    cmd->add_option("--seed", common.seed, "global seed; stages derive their own streams");
}

RunConfig make_run_config(const std::string& subcommand, const Common& common) {
    RunConfig rc;
    rc.subcommand = subcommand;
    if (!common.config_file.empty()) {
        rc.settings = load_config_file(common.config_file);
        rc.inputs["config"] = common.config_file;
    }
    for (const auto& o : common.overrides) {
        for (auto& [k, v] : parse_config_text(o)) rc.settings[k] = v;
    }
    rc.seed = common.seed;
    if (auto s = rc.get("seed"); s && common.seed == 0) {
        rc.seed = static_cast<std::uint64_t>(csv::parse_int(*s, "seed"));
    }
    rc.settings.erase("seed");
    return rc;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void ensure_parent(const fs::path& file) {
    if (file.has_parent_path()) ensure_dir(file.parent_path());
}

SplitAssignment split_for(const std::vector<CaseRecord>& cases, const RunConfig& rc, const std::string& split_file) {
    if (!split_file.empty()) return read_split_csv(split_file);
    auto split = split_patients(cases, rc.get_double("test_fraction", 0.2), rc.stage_seed("split"),
                                rc.get_bool("stratify_split", false));
    return assign_folds(cases, std::move(split), static_cast<int>(rc.get_int("folds", 5)), rc.stage_seed("folds"));
}

std::vector<Checkpoint> load_checkpoints(const std::vector<std::string>& paths) {
    std::vector<fs::path> files;
    for (const auto& p : paths) {
        if (fs::is_directory(p)) {
            std::vector<fs::path> found;
            for (const auto& entry : fs::directory_iterator(p)) {
                if (entry.path().extension() == ".ckpt") found.push_back(entry.path());
            }
            std::sort(found.begin(), found.end());
            files.insert(files.end(), found.begin(), found.end());
        } else {
            files.emplace_back(p);
        }
    }
    if (files.empty()) throw ArgumentError("no checkpoints found");
    std::vector<Checkpoint> out;
    for (const auto& f : files) out.push_back(read_checkpoint(f));
    return out;
}

std::string sanitize(std::string name) {
    for (auto& c : name) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') c = '_';
    }
    return name;
}

std::pair<std::uint64_t, std::uint64_t> parse_extent(const std::string& text) {
    const auto x = text.find_first_of("xX");
    if (x == std::string::npos) throw ValidationError("--extent must look like WxH");
    const auto w = csv::parse_int(text.substr(0, x), "extent width");
    const auto h = csv::parse_int(text.substr(x + 1), "extent height");
    if (w <= 0 || h <= 0) throw ValidationError("--extent must be positive");
    return {static_cast<std::uint64_t>(w), static_cast<std::uint64_t>(h)};
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"melanocytic lesion triage pipeline", "mtriage"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "expand help for every subcommand");

    // synth
    Common synth_common;
    std::string synth_out;
    auto* synth = app.add_subcommand("synth", "generate a synthetic cohort (manifest, feature files, oracle scores)");
    add_common(synth, synth_common);
    synth->add_option("--out", synth_out, "output directory")->required();

    // tessellate
    Common tess_common;
    std::string tess_mask, tess_image, tess_extent, tess_out, tess_slide = "slide";
    int tess_threshold = 200;
    std::uint32_t tess_tile = 4096;
    double tess_min_cov = 0.05, tess_target_mag = 20.0, tess_mask_mag = 1.25;
    auto* tess = app.add_subcommand("tessellate", "plan the tile grid of one slide from its mask");
    add_common(tess, tess_common, false);
    auto* mask_opt = tess->add_option("--mask", tess_mask, "label PNG (0 background, 1 tissue, 2 pen)");
    auto* image_opt = tess->add_option("--image", tess_image, "grayscale PNG, segmented by --threshold");
    mask_opt->excludes(image_opt);
    tess->add_option("--threshold", tess_threshold, "tissue where intensity < threshold (with --image)");
    tess->add_option("--extent", tess_extent, "slide extent at target magnification, WxH")->required();
    tess->add_option("--tile-size", tess_tile, "tile edge in pixels at target magnification");
    tess->add_option("--min-coverage", tess_min_cov, "minimum tissue fraction");
    tess->add_option("--target-magnification", tess_target_mag);
    tess->add_option("--mask-magnification", tess_mask_mag, "used when the mask has no .hdr sidecar");
    tess->add_option("--slide-id", tess_slide);
    tess->add_option("--out", tess_out, "tile plan CSV")->required();

    // train
    Common train_common;
    std::string train_manifest, train_out, train_history, train_split;
    int train_fold_id = 0;
    auto* train = app.add_subcommand("train", "train one fold's model");
    add_common(train, train_common);
    train->add_option("--manifest", train_manifest)->required();
    train->add_option("--fold", train_fold_id, "validation fold id")->required();
    train->add_option("--out", train_out, "checkpoint path")->required();
    train->add_option("--history", train_history, "history CSV (default <out>.history.csv)");
    train->add_option("--split", train_split, "split CSV; computed from the manifest when absent");

    // train-ensemble
    Common ens_common;
    std::string ens_manifest, ens_out, ens_split;
    int ens_threads = 1;
    auto* ens = app.add_subcommand("train-ensemble", "train one model per fold");
    add_common(ens, ens_common);
    ens->add_option("--manifest", ens_manifest)->required();
    ens->add_option("--out", ens_out, "output directory")->required();
    ens->add_option("--split", ens_split, "split CSV; computed from the manifest when absent");
    ens->add_option("--threads", ens_threads, "folds trained concurrently");

    // predict
    Common pred_common;
    std::string pred_manifest, pred_out, pred_split, pred_set = "all";
    std::vector<std::string> pred_ckpts;
    bool pred_members = false;
    auto* pred = app.add_subcommand("predict", "ensemble predictions for every case of a manifest");
    add_common(pred, pred_common, false);
    pred->add_option("--manifest", pred_manifest)->required();
    pred->add_option("--checkpoints", pred_ckpts, "checkpoint files or directories")->required();
    pred->add_option("--out", pred_out, "predictions CSV")->required();
    pred->add_option("--split", pred_split, "split CSV used with --set");
    pred->add_option("--set", pred_set, "all|test|development")->check(CLI::IsMember({"all", "test", "development"}));
    pred->add_flag("--members", pred_members, "add one column per ensemble member");

    // evaluate
    Common eval_common;
    std::string eval_predictions, eval_out, eval_sens = "0.95,0.98,0.99";
    int eval_bootstrap = 10000, eval_bins = 10, eval_threads = 1;
    std::vector<std::string> eval_partitions;
    auto* eval = app.add_subcommand("evaluate", "metric suite with stratified bootstrap CIs");
    add_common(eval, eval_common, false);
    eval->add_option("--predictions", eval_predictions)->required();
    eval->add_option("--bootstrap", eval_bootstrap, "bootstrap replicates");
    eval->add_option("--bins", eval_bins, "calibration bins");
    eval->add_option("--sensitivities", eval_sens, "comma-separated target sensitivities");
    eval->add_option("--partition", eval_partitions, "also report the subset carrying this tag");
    eval->add_option("--threads", eval_threads);
    eval->add_option("--out", eval_out, "output directory")->required();

    // simulate
    Common sim_common;
    std::string sim_predictions, sim_out, sim_iter_csv;
    SimConfig sim_config;
    auto* sim = app.add_subcommand("simulate", "random vs triage-ranked case assignment");
    add_common(sim, sim_common, false);
    sim->add_option("--predictions", sim_predictions)->required();
    sim->add_option("--iterations", sim_config.iterations);
    sim->add_option("--pathologists", sim_config.n_pathologists);
    sim->add_option("--experts", sim_config.n_experts);
    sim->add_option("--per-pathologist", sim_config.cases_per_pathologist);
    sim->add_option("--threads", sim_config.threads);
    sim->add_option("--out", sim_out, "report JSON")->required();
    sim->add_option("--iterations-csv", sim_iter_csv, "per-iteration counts (default <out stem>.iterations.csv)");

    // attention
    Common att_common;
    std::string att_case, att_manifest, att_ckpt, att_out;
    auto* att = app.add_subcommand("attention", "per-tile attention weights of one case");
    add_common(att, att_common, false);
    att->add_option("--case", att_case)->required();
    att->add_option("--manifest", att_manifest)->required();
    att->add_option("--checkpoint", att_ckpt)->required();
    att->add_option("--out", att_out, "attention CSV")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        // Subcommand --help lands here as well.
        if (e.get_exit_code() == 0) {
            for (auto* sub : app.get_subcommands()) out << sub->help();
            if (app.get_subcommands().empty()) out << app.help();
            return kExitOk;
        }
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitValidation;
    }

    try {
        if (synth->parsed()) {
            auto rc = make_run_config("synth", synth_common);
            const auto config = synthetic_config_from(rc);
            const fs::path dir = synth_out;
            ensure_dir(dir);
            const auto cohort = generate_synthetic(config, dir / "features");
            write_synthetic(cohort, dir, rc.to_json());
            out << fmt::format("synth: {} cases written to {}\n", cohort.cases.size(), dir.string());
        } else if (tess->parsed()) {
            RunConfig rc{"tessellate", tess_common.seed, {}, {}};
            SegmentationMap map;
            if (!tess_mask.empty()) {
                const auto magnification = read_mask_sidecar(tess_mask).value_or(tess_mask_mag);
                map = read_mask_png(tess_mask, magnification);
                rc.inputs["mask"] = tess_mask;
            } else if (!tess_image.empty()) {
                const auto img = read_gray_png(tess_image);
                map = threshold_segment(img.pixels, img.width, img.height, tess_threshold, tess_mask_mag);
                rc.inputs["image"] = tess_image;
                rc.settings["threshold"] = std::to_string(tess_threshold);
            } else {
                throw ArgumentError("tessellate needs --mask or --image");
            }
            const auto [w, h] = parse_extent(tess_extent);
            TileParams params;
            params.tile_size = tess_tile;
            params.target_magnification = tess_target_mag;
            params.min_coverage = Ratio::from_decimal(tess_min_cov);
            rc.settings["extent"] = tess_extent;
            rc.settings["tile_size"] = std::to_string(tess_tile);
            rc.settings["min_coverage"] = csv::format_number(tess_min_cov);
            rc.settings["target_magnification"] = csv::format_number(tess_target_mag);
            rc.settings["mask_magnification"] = csv::format_number(map.mask_magnification);
            const auto plan = tessellate(map, {w, h}, params, tess_slide);
            ensure_parent(tess_out);
            write_tile_plan(plan, tess_out, rc.to_json());
            out << fmt::format("tessellate: {} tiles, {} included\n", plan.tiles.size(),
                               plan.count(TileStatus::Included));
        } else if (train->parsed()) {
            auto rc = make_run_config("train", train_common);
            rc.inputs["manifest"] = train_manifest;
            rc.settings["fold"] = std::to_string(train_fold_id);
            const auto cases = load_manifest(train_manifest);
            const auto agg = aggregator_config_from(rc);
            const auto tc = train_config_from(rc);
            const auto split = split_for(cases, rc, train_split);
            const auto data = load_folded_cases(cases, split, static_cast<int>(rc.get_int("folds", 5)));
            const auto result = train_fold(data, train_fold_id, agg, tc);
            ensure_parent(train_out);
            write_checkpoint(make_checkpoint(result, tc, rc.to_json()), train_out);
            csv::write_text(train_history.empty() ? train_out + ".history.csv" : train_history,
                            result.history.to_csv(rc.to_json()));
            if (train_split.empty()) write_split_csv(split, fs::path(train_out).parent_path() / "split.csv", rc.to_json());
            out << fmt::format("train: fold {} best validation loss {}\n", train_fold_id,
                               result.best_validation_loss ? csv::format_number(*result.best_validation_loss) : "n/a");
        } else if (ens->parsed()) {
            auto rc = make_run_config("train-ensemble", ens_common);
            rc.inputs["manifest"] = ens_manifest;
            const auto cases = load_manifest(ens_manifest);
            const auto agg = aggregator_config_from(rc);
            const auto tc = train_config_from(rc);
            const auto split = split_for(cases, rc, ens_split);
            const auto data = load_folded_cases(cases, split, static_cast<int>(rc.get_int("folds", 5)));
            const auto results = train_ensemble(data, agg, tc, ens_threads);
            const fs::path dir = ens_out;
            ensure_dir(dir);
            write_split_csv(split, dir / "split.csv", rc.to_json());
            for (const auto& r : results) {
                write_checkpoint(make_checkpoint(r, tc, rc.to_json()), dir / fmt::format("fold_{}.ckpt", r.validation_fold));
                csv::write_text(dir / fmt::format("history_fold_{}.csv", r.validation_fold), r.history.to_csv(rc.to_json()));
                out << fmt::format("train-ensemble: fold {} best validation loss {}\n", r.validation_fold,
                                   r.best_validation_loss ? csv::format_number(*r.best_validation_loss) : "n/a");
            }
        } else if (pred->parsed()) {
            RunConfig rc{"predict", pred_common.seed, {{"set", pred_set}}, {{"manifest", pred_manifest}}};
            auto cases = load_manifest(pred_manifest);
            if (pred_set != "all") {
                if (pred_split.empty()) throw ArgumentError("--set needs --split");
                rc.inputs["split"] = pred_split;
                cases = read_split_csv(pred_split)
                            .select(cases, pred_set == "test" ? SplitSet::Test : SplitSet::Development);
            }
            for (std::size_t i = 0; i < pred_ckpts.size(); ++i) rc.inputs[fmt::format("checkpoint_{}", i)] = pred_ckpts[i];
            const auto rows = predict(cases, load_checkpoints(pred_ckpts));
            ensure_parent(pred_out);
            csv::write_text(pred_out, predictions_csv(rows, pred_members, rc.to_json()));
            out << fmt::format("predict: {} cases\n", rows.size());
        } else if (eval->parsed()) {
            EvaluationConfig config;
            config.bootstrap = eval_bootstrap;
            config.seed = derive_seed(eval_common.seed, "evaluate");
            config.bins = eval_bins;
            config.threads = eval_threads;
            config.sensitivities.clear();
            for (const auto& s : csv::split(eval_sens)) config.sensitivities.push_back(csv::parse_double(s, "sensitivity"));
            RunConfig rc{"evaluate", eval_common.seed, {}, {{"predictions", eval_predictions}}};
            rc.settings["bootstrap"] = std::to_string(eval_bootstrap);
            rc.settings["bins"] = std::to_string(eval_bins);
            rc.settings["sensitivities"] = eval_sens;

            const auto set = read_predictions_csv(eval_predictions);
            const fs::path dir = eval_out;
            ensure_dir(dir);
            json partitions = json::array();
            std::vector<std::string> tags{""};
            tags.insert(tags.end(), eval_partitions.begin(), eval_partitions.end());
            for (const auto& tag : tags) {
                const auto report = evaluate_partition(set, tag, config);
                partitions.push_back(report.to_json());
                const auto stem = sanitize(report.partition);
                csv::write_text(dir / ("roc_" + stem + ".csv"), curve_csv(report.roc, "fpr", "tpr"));
                csv::write_text(dir / ("pr_" + stem + ".csv"), curve_csv(report.pr, "recall", "precision"));
                csv::write_text(dir / ("calibration_" + stem + ".csv"), calibration_csv(report.calibration));
                out << fmt::format("evaluate[{}]: n={} AUROC {:.4f} [{:.4f}, {:.4f}] AUPRC {:.4f} ECE {:.4f}\n",
                                   report.partition, report.n, report.auroc.point_estimate, report.auroc.lower,
                                   report.auroc.upper, report.auprc.point_estimate, report.ece.point_estimate);
            }
            json doc = {{"run_config", rc.to_json()}, {"config", config.to_json()}, {"partitions", std::move(partitions)}};
            csv::write_text(dir / "report.json", doc.dump(1) + "\n");
        } else if (sim->parsed()) {
            sim_config.cases_per_iteration = sim_config.n_pathologists * sim_config.cases_per_pathologist;
            sim_config.seed = derive_seed(sim_common.seed, "simulate");
            RunConfig rc{"simulate", sim_common.seed, {}, {{"predictions", sim_predictions}}};
            const auto sim_json = sim_config.to_json();
            for (const auto& [k, v] : sim_json.items()) rc.settings[k] = v.dump();

            const auto set = read_predictions_csv(sim_predictions);
            std::vector<PoolCase> pool;
            for (std::size_t i = 0; i < set.size(); ++i) pool.push_back({set.scores[i], set.labels[i] == 1});
            const auto report = simulate(pool, sim_config);
            ensure_parent(sim_out);
            json doc = report.to_json();
            doc["run_config"] = rc.to_json();
            csv::write_text(sim_out, doc.dump(1) + "\n");
            const fs::path iter_csv = sim_iter_csv.empty()
                ? fs::path(sim_out).replace_extension(".iterations.csv") : fs::path(sim_iter_csv);
            csv::write_text(iter_csv, csv::run_config_line(rc.to_json()) + report.iterations_csv());
            out << fmt::format("simulate: baseline {:.2f}/pathologist, triage expert {:.2f}, general {:.2f}, "
                               "prevented {:.2f} [{}, {}]\n",
                               report.baseline.per_general.mean, report.triage.per_expert.mean,
                               report.triage.per_general.mean, report.prevented.mean, report.prevented.lower,
                               report.prevented.upper);
        } else if (att->parsed()) {
            RunConfig rc{"attention", att_common.seed, {{"case", att_case}},
                         {{"manifest", att_manifest}, {"checkpoint", att_ckpt}}};
            const auto rows = attention(att_case, load_manifest(att_manifest), read_checkpoint(att_ckpt));
            ensure_parent(att_out);
            csv::write_text(att_out, attention_csv(rows, rc.to_json()));
            out << fmt::format("attention: {} tiles\n", rows.size());
        }
    } catch (const IoError& e) {
        err << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return kExitOk;
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

} // namespace mtriage::cli
