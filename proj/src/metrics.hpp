#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "tensor.hpp"
#include "volume.hpp"

namespace comodal {

// Hard-mask Dice overlap 2|P∩G| / (|P|+|G|) for one class; both-empty pairs
// score 1.0 by convention.
double dice_score(const LabelMask& pred, const LabelMask& gt, int k);

// Voxels of class k with at least one 6-neighbour of a different class;
// volume-border voxels of class k count as surface.
std::vector<std::array<int, 3>> extract_surface(const LabelMask& mask, int k);

enum class AssdStatus {
    ok,
    both_empty,         // class absent from both masks: "undefined", excluded from means
    missing_structure,  // class present in exactly one mask
};

struct AssdResult {
    AssdStatus status{AssdStatus::both_empty};
    double mm{0.0};  // valid only when status == ok

    bool defined() const { return status == AssdStatus::ok; }
};

// Average symmetric surface distance in millimetres, Euclidean between voxel
// centres under the given spacing. missing_structure results carry the
// configured penalty when penalty_mm is set, otherwise stay undefined.
AssdResult assd(const LabelMask& pred, const LabelMask& gt, int k,
                const std::array<double, 3>& spacing_mm,
                std::optional<double> penalty_mm = std::nullopt);

// Per-sample, per-modality evaluation record.
struct EvalRecord {
    std::string sample_id;
    Modality modality{Modality::A};
    std::vector<double> per_class_dice;     // classes 1..K-1
    std::vector<AssdResult> per_class_assd;  // classes 1..K-1
    double mean_dice{0.0};
    double mean_assd_mm{0.0};
    bool mean_assd_defined{false};
};

// Channel argmax of a [K,D,H,W] logits tensor.
LabelMask argmax_mask(const Tensor& logits, int num_classes);

EvalRecord evaluate_logits(const Tensor& logits, const LabelMask& gt,
                           const std::array<double, 3>& spacing_mm, const std::string& sample_id,
                           Modality modality);

// Both modalities of a labeled sample; errors on unlabeled samples.
std::pair<EvalRecord, EvalRecord> evaluate_sample(const Tensor& logits_a, const Tensor& logits_b,
                                                  const BimodalSample& sample);

}  // namespace comodal
