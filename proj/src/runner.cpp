#include "runner.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "rng.hpp"
#include "runio.hpp"
#include "synthgen.hpp"
#include "trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace comodal {

namespace {

std::string out_root() {
    const char* env = std::getenv(kOutRootEnvVar);
    return env && *env ? env : "comodal_out";
}

std::string resolve_run_dir(const std::string& configured, const std::string& command,
                            const std::string& run_id) {
    if (configured.empty()) return out_root() + "/" + command + "-" + run_id;
    fs::path p(configured);
    if (p.is_relative() && std::getenv(kOutRootEnvVar)) return out_root() + "/" + configured;
    return configured;
}

void verify_artifacts(const std::string& dir, const RunManifest& manifest) {
    std::vector<std::string> missing;
    for (const auto& [name, rel] : manifest.artifacts)
        if (!fs::exists(fs::path(dir) / rel)) missing.push_back(name + " (" + rel + ")");
    if (!missing.empty()) {
        std::string all;
        for (const auto& m : missing) all += (all.empty() ? "" : ", ") + m;
        fail(ErrorCode::runtime, "run did not produce all declared artifacts: " + all);
    }
}

uint64_t entropy_seed() {
    std::random_device rd;
    return (static_cast<uint64_t>(rd()) << 32) ^ rd();
}

DatasetSplit load_dataset(const TrainConfig& cfg) {
    require(!cfg.data.dir.empty(), ErrorCode::config,
            "config error at data.dir: dataset directory not set");
    DatasetSplit split = load_split_dir(cfg.data.dir);
    require(split.labeled.front().mask_a->num_classes == cfg.model.num_classes,
            ErrorCode::config, "dataset num_classes does not match model.num_classes");
    require(split.labeled.front().vol_a.shape == cfg.model.input_shape, ErrorCode::config,
            "dataset grid shape does not match model.input_shape");
    return split;
}

std::string misalignment_text(const MisalignmentSpec& m) {
    if (!m.enabled) return "off";
    std::ostringstream os;
    os << "on (max " << m.max_rotation_deg << " deg, " << m.max_translation_vox << " vox)";
    return os.str();
}

}  // namespace

RunOutcome cmd_generate_data(const std::string& config_path, const ConfigOverrides& overrides) {
    TrainConfig cfg = load_config_file(config_path);
    apply_overrides(cfg, overrides, /*seed_targets_data=*/true);
    if (!cfg.train.deterministic && !overrides.seed) cfg.data.seed = entropy_seed();
    std::string dir = overrides.out_dir ? *overrides.out_dir : cfg.data.dir;
    require(!dir.empty(), ErrorCode::config,
            "generate-data needs data.dir in the config or --out");

    std::string started = utc_timestamp_now();
    const int n_total = cfg.data.n_train + cfg.data.n_val + cfg.data.n_test;
    std::vector<BimodalSample> samples =
        generate_dataset(cfg.data.phantom, cfg.data.appearance_a, cfg.data.appearance_b,
                         cfg.data.misalignment, cfg.data.paired, n_total, cfg.data.seed);
    DatasetSplit split = make_split(samples, cfg.train.labeled_fraction,
                                    Rng::mix(cfg.data.seed, 0x5B117), cfg.data.n_val,
                                    cfg.data.n_test);
    save_split_dir(split, dir);

    RunManifest manifest;
    manifest.command = "generate-data";
    manifest.seed = cfg.data.seed;
    manifest.config_snapshot = config_to_json(cfg);
    manifest.run_id = make_run_id(manifest.config_snapshot, cfg.data.seed);
    manifest.started_utc = started;
    manifest.finished_utc = utc_timestamp_now();
    manifest.artifacts["split_manifest"] = "split.json";
    write_run_manifest(dir, manifest);
    verify_artifacts(dir, manifest);

    std::ostringstream os;
    os << "dataset written to " << dir << "\n"
       << "paired=" << (cfg.data.paired ? "true" : "false") << ", N=" << split.labeled.size()
       << " labeled, M=" << split.unlabeled.size() << " unlabeled, val=" << split.val.size()
       << ", test=" << split.test.size() << "\n"
       << "misalignment: " << misalignment_text(cfg.data.misalignment) << "\n";
    return {dir, dir + "/manifest.json", os.str()};
}

RunOutcome cmd_train(const std::string& config_path, const ConfigOverrides& overrides) {
    TrainConfig cfg = load_config_file(config_path);
    apply_overrides(cfg, overrides, /*seed_targets_data=*/false);
    if (!cfg.train.deterministic && !overrides.seed) cfg.train.seed = entropy_seed();

    DatasetSplit data = load_dataset(cfg);
    json snapshot = config_to_json(cfg);
    std::string run_id = make_run_id(snapshot, cfg.train.seed);
    std::string dir = resolve_run_dir(cfg.out_dir, "train", run_id);
    std::string started = utc_timestamp_now();

    TrainResult result = train(cfg, data, dir);

    std::vector<ChartSeries> series(3);
    series[0].name = "modality a";
    series[1].name = "modality b";
    series[2].name = "mean";
    for (const ValPoint& p : result.val_curve) {
        series[0].points.emplace_back(p.epoch, p.dice_a);
        series[1].points.emplace_back(p.epoch, p.dice_b);
        series[2].points.emplace_back(p.epoch, p.mean_dice);
    }
    write_line_chart_svg(dir + "/val_curve.svg", "Validation Dice vs epoch", "epoch", "mean Dice",
                         series);

    RunManifest manifest;
    manifest.command = "train";
    manifest.seed = cfg.train.seed;
    manifest.config_snapshot = snapshot;
    manifest.run_id = run_id;
    manifest.started_utc = started;
    manifest.finished_utc = utc_timestamp_now();
    manifest.artifacts["training_log_csv"] = "training_log.csv";
    manifest.artifacts["val_curve_csv"] = "val_curve.csv";
    manifest.artifacts["val_curve_svg"] = "val_curve.svg";
    manifest.artifacts["checkpoint_best"] = "best.ckpt";
    manifest.artifacts["checkpoint_last"] = "last.ckpt";
    write_run_manifest(dir, manifest);
    verify_artifacts(dir, manifest);

    std::ostringstream os;
    os << "run " << run_id << ": trained " << result.epochs_run << " epochs ("
       << result.steps_run << " steps)\n";
    if (!result.history.empty())
        os << "final total loss " << format_double(result.history.back().total) << "\n";
    if (!result.val_curve.empty())
        os << "best val mean Dice " << format_double(result.best_val_dice) << " at epoch "
           << result.best_epoch << "\n";
    os << "artifacts in " << dir << "\n";
    return {dir, dir + "/manifest.json", os.str()};
}

RunOutcome cmd_evaluate(const std::string& config_path, const std::string& checkpoint_path,
                        const std::string& split_name, const ConfigOverrides& overrides) {
    TrainConfig cfg = load_config_file(config_path);
    apply_overrides(cfg, overrides, /*seed_targets_data=*/false);
    DatasetSplit data = load_split_dir(cfg.data.dir);

    LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
    require(ckpt.model->config().num_classes == data.labeled.front().mask_a->num_classes,
            ErrorCode::config,
            "checkpoint class count does not match the dataset (" +
                std::to_string(ckpt.model->config().num_classes) + " vs " +
                std::to_string(data.labeled.front().mask_a->num_classes) + ")");
    require(ckpt.model->config().input_shape == data.labeled.front().vol_a.shape,
            ErrorCode::config, "checkpoint input shape does not match the dataset");

    const std::vector<BimodalSample>* split = nullptr;
    if (split_name == "val")
        split = &data.val;
    else if (split_name == "test")
        split = &data.test;
    else if (split_name == "labeled" || split_name == "train")
        split = &data.labeled;
    else
        fail(ErrorCode::invalid_argument,
             "unknown split \"" + split_name + "\" (expected val|test|labeled)");
    require(!split->empty(), ErrorCode::invalid_argument, "split " + split_name + " is empty");

    json snapshot = config_to_json(cfg);
    snapshot["evaluate"] = json{{"checkpoint", checkpoint_path}, {"split", split_name}};
    std::string run_id = make_run_id(snapshot, cfg.train.seed);
    std::string dir = resolve_run_dir(overrides.out_dir ? *overrides.out_dir : "", "evaluate",
                                      run_id);
    std::string started = utc_timestamp_now();

    SplitEvalReport report = evaluate_split(model_predictor(*ckpt.model), *split);
    fs::create_directories(dir);
    write_eval_csv(dir + "/eval.csv", report);

    const int num_fg = ckpt.model->config().num_classes - 1;
    std::vector<BarGroup> groups;
    for (int k = 0; k < num_fg; ++k)
        groups.push_back(BarGroup{"class " + std::to_string(k + 1),
                                  {report.per_modality[0].class_mean_dice[static_cast<size_t>(k)],
                                   report.per_modality[1].class_mean_dice[static_cast<size_t>(k)]}});
    write_grouped_bar_chart_svg(dir + "/per_class_dice.svg",
                                "Per-class Dice (" + split_name + " split)",
                                {"modality a", "modality b"}, groups);

    RunManifest manifest;
    manifest.command = "evaluate";
    manifest.seed = cfg.train.seed;
    manifest.config_snapshot = snapshot;
    manifest.run_id = run_id;
    manifest.started_utc = started;
    manifest.finished_utc = utc_timestamp_now();
    manifest.artifacts["eval_csv"] = "eval.csv";
    manifest.artifacts["per_class_dice_svg"] = "per_class_dice.svg";
    write_run_manifest(dir, manifest);
    verify_artifacts(dir, manifest);

    std::string summary = "evaluated " + std::to_string(split->size()) + " samples of split " +
                          split_name + "\n" + eval_summary_text(report) + "artifacts in " + dir +
                          "\n";
    return {dir, dir + "/manifest.json", summary};
}

RunOutcome cmd_ablate(const std::string& config_path, const ConfigOverrides& overrides) {
    TrainConfig cfg = load_config_file(config_path);
    apply_overrides(cfg, overrides, /*seed_targets_data=*/false);
    if (!cfg.train.deterministic && !overrides.seed) cfg.train.seed = entropy_seed();
    DatasetSplit data = load_dataset(cfg);

    json snapshot = config_to_json(cfg);
    snapshot["ablate"] = true;
    std::string run_id = make_run_id(snapshot, cfg.train.seed);
    std::string dir = resolve_run_dir(cfg.out_dir, "ablate", run_id);
    std::string started = utc_timestamp_now();

    AblationTable table = run_ablation(cfg, data, dir);
    write_ablation_csv(dir + "/ablation.csv", table);
    std::string text = ablation_table_text(table);
    {
        std::ofstream out(dir + "/ablation.txt", std::ios::trunc);
        if (!out) fail(ErrorCode::io, dir + "/ablation.txt: cannot open for writing");
        out << text;
    }

    RunManifest manifest;
    manifest.command = "ablate";
    manifest.seed = cfg.train.seed;
    manifest.config_snapshot = snapshot;
    manifest.run_id = run_id;
    manifest.started_utc = started;
    manifest.finished_utc = utc_timestamp_now();
    manifest.artifacts["ablation_csv"] = "ablation.csv";
    manifest.artifacts["ablation_txt"] = "ablation.txt";
    write_run_manifest(dir, manifest);
    verify_artifacts(dir, manifest);

    return {dir, dir + "/manifest.json", text + "artifacts in " + dir + "\n"};
}

namespace {

struct EvalCsvSummary {
    double dice_a{0}, dice_b{0}, assd_a{0}, assd_b{0}, dice_all{0}, assd_all{0};
    bool assd_a_def{false}, assd_b_def{false}, assd_all_def{false};
};

EvalCsvSummary read_eval_summary(const std::string& csv_path) {
    std::ifstream in(csv_path);
    if (!in) fail(ErrorCode::not_found, csv_path + ": cannot open evaluation CSV");
    EvalCsvSummary s;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() < 6 || cells[0] != "summary") continue;
        double dice = std::stod(cells[4]);
        bool assd_def = !cells[5].empty();
        double assd = assd_def ? std::stod(cells[5]) : 0.0;
        if (cells[2] == "a") {
            s.dice_a = dice;
            s.assd_a = assd;
            s.assd_a_def = assd_def;
        } else if (cells[2] == "b") {
            s.dice_b = dice;
            s.assd_b = assd;
            s.assd_b_def = assd_def;
        } else {
            s.dice_all = dice;
            s.assd_all = assd;
            s.assd_all_def = assd_def;
        }
    }
    return s;
}

}  // namespace

RunOutcome cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    require(!run_dirs.empty(), ErrorCode::invalid_argument, "report: no run directories given");
    std::vector<std::string> missing;
    std::vector<std::pair<RunManifest, EvalCsvSummary>> rows;
    for (const auto& dirname : run_dirs) {
        if (!fs::exists(fs::path(dirname) / "manifest.json")) {
            missing.push_back(dirname);
            continue;
        }
        RunManifest m = read_run_manifest(dirname);
        auto it = m.artifacts.find("eval_csv");
        if (it == m.artifacts.end()) {
            missing.push_back(dirname + " (no eval_csv artifact)");
            continue;
        }
        rows.emplace_back(m, read_eval_summary(dirname + "/" + it->second));
    }
    if (!missing.empty()) {
        std::string all;
        for (const auto& m : missing) all += (all.empty() ? "" : ", ") + m;
        fail(ErrorCode::not_found, "report: missing run manifests or artifacts: " + all);
    }

    std::string dir = out_dir.empty() ? out_root() + "/report" : out_dir;
    fs::create_directories(dir);
    std::string started = utc_timestamp_now();
    {
        std::ofstream out(dir + "/report.csv", std::ios::trunc);
        if (!out) fail(ErrorCode::io, dir + "/report.csv: cannot open for writing");
        out << "run_id,run_dir,dice_a,dice_b,assd_a,assd_b,overall_dice,overall_assd\n";
        for (size_t i = 0; i < rows.size(); ++i) {
            const auto& [m, s] = rows[i];
            out << m.run_id << "," << run_dirs[i] << "," << format_double(s.dice_a) << ","
                << format_double(s.dice_b) << ","
                << (s.assd_a_def ? format_double(s.assd_a) : "") << ","
                << (s.assd_b_def ? format_double(s.assd_b) : "") << ","
                << format_double(s.dice_all) << ","
                << (s.assd_all_def ? format_double(s.assd_all) : "") << "\n";
        }
    }
    std::ostringstream text;
    text << "run          | Dice a | Dice b | overall Dice\n";
    text << "-------------+--------+--------+-------------\n";
    for (const auto& [m, s] : rows) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%-12s | %6.4f | %6.4f | %6.4f\n", m.run_id.c_str(),
                      s.dice_a, s.dice_b, s.dice_all);
        text << buf;
    }
    {
        std::ofstream out(dir + "/report.txt", std::ios::trunc);
        if (!out) fail(ErrorCode::io, dir + "/report.txt: cannot open for writing");
        out << text.str();
    }

    RunManifest manifest;
    manifest.command = "report";
    manifest.seed = 0;
    manifest.config_snapshot = json{{"runs", run_dirs}};
    manifest.run_id = make_run_id(manifest.config_snapshot, 0);
    manifest.started_utc = started;
    manifest.finished_utc = utc_timestamp_now();
    manifest.artifacts["report_csv"] = "report.csv";
    manifest.artifacts["report_txt"] = "report.txt";
    write_run_manifest(dir, manifest);
    verify_artifacts(dir, manifest);

    return {dir, dir + "/manifest.json", text.str() + "artifacts in " + dir + "\n"};
}

}  // namespace comodal
