#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "losses.hpp"
#include "trainer.hpp"

namespace comodal {

// Round-trip-exact float formatting (%.17g) so CSV re-reads and checksum
// comparisons are deterministic.
std::string format_double(double v);

// training_log.csv schema: step,epoch,sup,csc,cac,alpha,beta,total
void write_training_log_csv(const std::string& path, const std::vector<LossBreakdown>& history);
std::vector<LossBreakdown> read_training_log_csv(const std::string& path);

// val_curve.csv schema: epoch,dice_a,dice_b,mean_dice
void write_val_curve_csv(const std::string& path, const std::vector<ValPoint>& curve);

// eval.csv: one "sample" row per (sample, modality, class), then
// "class_summary" rows per (modality, class) and "summary" rows per modality
// plus one overall row. Columns:
//   row_type,sample_id,modality,class,dice,assd_mm,assd_defined
void write_eval_csv(const std::string& path, const SplitEvalReport& report);
std::string eval_summary_text(const SplitEvalReport& report);

// ablation.csv: row,name,modality_specific_encoder,cmc_strategy,ccl_module,
//               dice_a,dice_b,assd_a,assd_b
void write_ablation_csv(const std::string& path, const AblationTable& table);
std::string ablation_table_text(const AblationTable& table);

// ---- figures (static SVG) --------------------------------------------------

struct ChartSeries {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::string& x_label, const std::string& y_label,
                          const std::vector<ChartSeries>& series);

struct BarGroup {
    std::string label;                // e.g. class name
    std::vector<double> values;       // one per series
};

void write_grouped_bar_chart_svg(const std::string& path, const std::string& title,
                                 const std::vector<std::string>& series_names,
                                 const std::vector<BarGroup>& groups);

// ---- run manifests -----------------------------------------------------------

struct RunManifest {
    std::string run_id;
    std::string command;
    uint64_t seed{0};
    nlohmann::json config_snapshot;
    std::string started_utc;
    std::string finished_utc;
    std::map<std::string, std::string> artifacts;  // name -> path (relative to run dir)
};

std::string make_run_id(const nlohmann::json& config_snapshot, uint64_t seed);
std::string utc_timestamp_now();

// Written to <dir>/manifest.json via a temp file + rename.
void write_run_manifest(const std::string& dir, const RunManifest& manifest);
RunManifest read_run_manifest(const std::string& dir);

}  // namespace comodal
