#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "losses.hpp"
#include "model.hpp"
#include "synthgen.hpp"

namespace comodal {

// Table-2-style cumulative ablation toggles. Baseline is all three off:
// one shared encoder, no MIA/fusion/CSC, no CAC.
struct AblationFlags {
    bool modality_specific_encoder{false};
    bool cmc_strategy{false};  // CSC loss + MIA modules + fusion layer
    bool ccl_module{false};    // CAC loss on unlabeled data
};

struct LossOptions {
    SupervisedMode supervised_mode{SupervisedMode::symmetric};
    ContrastiveDenominator contrastive_denominator{ContrastiveDenominator::literal};
    bool csc_labeled_only{false};
};

struct DataConfig {
    std::string dir;  // dataset directory written by generate-data
    bool paired{true};
    int n_train{40};
    int n_val{4};
    int n_test{4};
    uint64_t seed{1234};
    PhantomSpec phantom;
    ModalityAppearance appearance_a;
    ModalityAppearance appearance_b;
    MisalignmentSpec misalignment;
};

struct TrainOptions {
    int epochs{24};
    int batch_size_labeled{2};
    int batch_size_unlabeled{2};
    double learning_rate{1e-3};
    uint64_t seed{1};
    double labeled_fraction{0.1};
    bool deterministic{true};
    int eval_every{4};
    AblationFlags ablation;
    LossOptions loss;
    double ramp_base_weight{0.1};
    double ramp_steepness{5.0};
};

struct TrainConfig {
    ModelConfig model;
    DataConfig data;
    TrainOptions train;
    std::string out_dir;

    void validate() const;
};

// Strict schema: unknown keys, missing keys and wrong types are all rejected
// with the offending JSON path in the message.
TrainConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const TrainConfig& cfg);
TrainConfig load_config_file(const std::string& path);

// Flag-level overrides (CLI / C API). Ablation presets: baseline, encoder,
// cmc, full.
struct ConfigOverrides {
    std::optional<uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<bool> deterministic;
    std::optional<double> labeled_fraction;
    std::optional<std::string> ablation_preset;
};

void apply_ablation_preset(TrainConfig& cfg, const std::string& preset);
void apply_overrides(TrainConfig& cfg, const ConfigOverrides& o, bool seed_targets_data);

const char* supervised_mode_name(SupervisedMode m);
const char* contrastive_denominator_name(ContrastiveDenominator d);

}  // namespace comodal
