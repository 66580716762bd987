#pragma once

#include <functional>
#include <string>
#include <vector>

#include "config.hpp"
#include "dataset.hpp"
#include "losses.hpp"
#include "metrics.hpp"
#include "model.hpp"

namespace comodal {

class AdamOptimizer {
public:
    explicit AdamOptimizer(double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                           double eps = 1e-8);

    void attach(const ParamStore& params);  // allocates moment buffers
    void step(ParamStore& params);

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }
    int64_t steps_taken() const { return t_; }

    const std::vector<Tensor>& moments_m() const { return m_; }
    const std::vector<Tensor>& moments_v() const { return v_; }
    void restore_state(std::vector<Tensor> m, std::vector<Tensor> v, int64_t t);

private:
    double lr_, beta1_, beta2_, eps_;
    int64_t t_{0};
    std::vector<Tensor> m_, v_;
};

// One semi-supervised optimization step: supervised loss on the labeled
// batch, CSC on DS features of labeled (and, unless restricted, unlabeled)
// pairs, CAC on the unlabeled predictions, a single Adam update on the
// ramp-weighted total. Throws before any parameter mutation on bad input,
// and with the offending batch ids on a non-finite loss.
LossBreakdown train_step(SegModel& model, AdamOptimizer& opt,
                         const std::vector<const BimodalSample*>& labeled,
                         const std::vector<const BimodalSample*>& unlabeled, int epoch,
                         const TrainConfig& cfg, int64_t step_index);

struct ValPoint {
    int epoch{0};
    double dice_a{0.0};
    double dice_b{0.0};
    double mean_dice{0.0};
};

struct TrainResult {
    std::vector<LossBreakdown> history;
    std::vector<ValPoint> val_curve;
    double best_val_dice{0.0};
    int best_epoch{0};
    std::vector<Tensor> best_params;  // parameter snapshot at the best val point
    int epochs_run{0};
    int64_t steps_run{0};
    std::string best_checkpoint_path;  // empty when no artifact dir was given
    std::string last_checkpoint_path;
};

// Full training loop. artifact_dir may be empty (no files written); otherwise
// training_log.csv, val_curve.csv and best/last checkpoints land there.
// stop_after_epoch > 0 interrupts the run after that epoch while keeping the
// configured t_max for the ramp schedule, so it can be resumed later.
TrainResult train(const TrainConfig& cfg, const DatasetSplit& data,
                  const std::string& artifact_dir = "", int stop_after_epoch = 0);

// Continues a run whose last checkpoint (with trainer state) was saved by
// train(). Deterministic mode reproduces the uninterrupted loss trajectory.
TrainResult resume_training(const TrainConfig& cfg, const DatasetSplit& data,
                            const std::string& checkpoint_path,
                            const std::string& artifact_dir = "");

// ---- evaluation -----------------------------------------------------------

using PredictFn = std::function<std::pair<Tensor, Tensor>(const BimodalSample&)>;

// Normalizes the sample's volumes and runs the model; returns logits values.
PredictFn model_predictor(const SegModel& model);

struct ModalitySummary {
    std::vector<double> class_mean_dice;          // per class 1..K-1
    std::vector<double> class_mean_assd;          // defined entries only
    std::vector<int> class_assd_count;            // how many samples defined it
    double mean_dice{0.0};
    double mean_assd{0.0};
    bool assd_defined{false};
};

struct SplitEvalReport {
    std::vector<EvalRecord> records;  // one per (sample, modality)
    std::array<ModalitySummary, 2> per_modality;
    double overall_mean_dice{0.0};
    double overall_mean_assd{0.0};
    bool overall_assd_defined{false};
};

SplitEvalReport evaluate_split(const PredictFn& predict,
                               const std::vector<BimodalSample>& samples);

// ---- ablation ---------------------------------------------------------------

struct AblationRow {
    std::string name;
    AblationFlags flags;
    double dice_a{0.0}, dice_b{0.0};
    double assd_a{0.0}, assd_b{0.0};
    bool assd_a_defined{false}, assd_b_defined{false};
};

struct AblationTable {
    std::vector<AblationRow> rows;  // baseline, +encoder, +cmc, +ccl
};

// Trains the four cumulative configurations on the same split and evaluates
// each on the test split with its best-validation parameters.
AblationTable run_ablation(const TrainConfig& base_cfg, const DatasetSplit& data,
                           const std::string& artifact_root = "",
                           const std::function<void(const std::string&)>& progress = {});

}  // namespace comodal
