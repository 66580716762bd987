#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "volume.hpp"

namespace comodal {

struct ModelConfig {
    int patch_size{8};       // cube edge p; power of two
    int embed_dim{32};       // C
    int num_blocks{4};       // L
    int num_heads{4};        // h, divides C
    int adapter_dim{8};      // bottleneck width r < C
    int num_classes{3};      // K
    std::array<int, 3> input_shape{32, 32, 32};  // divisible by p
    // Widths per decoder stage: entry projection then one entry per x2
    // upsampling stage; length must be log2(p) + 1.
    std::vector<int> decoder_channels{32, 16, 8, 4};
    int mlp_ratio{4};
    bool adapters_enabled{true};
    bool mia_enabled{true};
    bool decoder_skip{false};  // concat per-modality DS features into the decoder input

    void validate() const;
    std::array<int, 3> token_grid() const;
    int num_tokens() const;
    int upsample_stages() const;
};

// Named parameter registry. Every parameter is initialized from a stream
// derived from (seed, name), so the presence of one module never shifts the
// initialization of another.
class ParamStore {
public:
    explicit ParamStore(uint64_t seed) : seed_(seed) {}

    enum class Init { zeros, ones, xavier, he_conv, normal_002 };

    NodePtr add(const std::string& name, std::vector<int> dims, Init init);
    NodePtr find(const std::string& name) const;
    const std::vector<std::pair<std::string, NodePtr>>& items() const { return items_; }
    void zero_grads();

private:
    uint64_t seed_;
    std::vector<std::pair<std::string, NodePtr>> items_;
};

struct ModelOutputs {
    NodePtr logits_a;
    NodePtr logits_b;
    NodePtr f_ds_a;
    NodePtr f_ds_b;
};

// The full network: per-modality ViT encoders with adapter bottlenecks,
// channel-attention MIA modules, a concat+1x1x1 fusion layer and two
// upsampling decoders. Ablation structure is fixed at construction:
// modality_specific_encoder=false shares one encoder across modalities;
// with_cmc=false drops MIA/fusion and feeds each decoder its own modality's
// features.
class SegModel {
public:
    SegModel(const ModelConfig& cfg, bool modality_specific_encoder, bool with_cmc, uint64_t seed);
    ~SegModel();
    SegModel(SegModel&&) noexcept;
    SegModel& operator=(SegModel&&) noexcept;
    SegModel(const SegModel&) = delete;
    SegModel& operator=(const SegModel&) = delete;

    // Volumes must be normalized and match cfg.input_shape.
    ModelOutputs forward(const Volume& vol_a, const Volume& vol_b) const;

    // Component-level entry points (forward() is their composition).
    Tensor embed_tokens(const Volume& vol, Modality which) const;  // [N, C] post pos-enc
    NodePtr encode(const Volume& vol, Modality which) const;       // DS features [C,D',H',W']
    NodePtr mia_forward(const NodePtr& f, Modality which) const;   // requires with_cmc
    NodePtr fuse(const NodePtr& f_a, const NodePtr& f_b) const;    // requires with_cmc
    NodePtr decode(const NodePtr& features, Modality which) const;

    const ModelConfig& config() const { return cfg_; }
    bool modality_specific_encoder() const { return modality_specific_; }
    bool with_cmc() const { return with_cmc_; }
    uint64_t init_seed() const { return seed_; }

    ParamStore& params() { return *params_; }
    const ParamStore& params() const { return *params_; }

    // Deep copy / restore of all parameter values (for best-checkpoint
    // retention without touching disk).
    std::vector<Tensor> snapshot_params() const;
    void restore_params(const std::vector<Tensor>& snapshot);

private:
    struct Impl;
    ModelConfig cfg_;
    bool modality_specific_{true};
    bool with_cmc_{true};
    uint64_t seed_{0};
    std::unique_ptr<ParamStore> params_;
    std::unique_ptr<Impl> impl_;
};

// Checkpoint archive: "CMCK" magic, JSON header (model config, flags, named
// tensor index, optional trainer state) followed by raw float64 payloads.
struct TrainerCheckpointState {
    int epoch{0};
    int64_t step{0};
    int64_t adam_t{0};
    double best_val_dice{0.0};
    std::vector<Tensor> adam_m;
    std::vector<Tensor> adam_v;
};

void save_checkpoint(const std::string& path, const SegModel& model,
                     const TrainerCheckpointState* trainer_state = nullptr);

struct LoadedCheckpoint {
    std::unique_ptr<SegModel> model;
    std::optional<TrainerCheckpointState> trainer_state;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace comodal
