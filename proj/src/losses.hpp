#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "autodiff.hpp"
#include "volume.hpp"

namespace comodal {

// Exponential ramp weights on the two consistency terms:
//   alpha(t) = base * exp(-steepness * (1 - t/t_max))   (ramp-up)
//   beta(t)  = base * exp(-steepness * t/t_max)         (ramp-down)
// Both are evaluated through one helper so alpha(t) == beta(t_max - t)
// holds bit-exactly.
std::pair<double, double> ramp_weights(int t, int t_max, double base_weight = 0.1,
                                       double steepness = 5.0);

struct RampSchedule {
    double base_weight{0.1};
    double steepness{5.0};
    int t{0};
    int t_max{1};

    void validate() const;
    double alpha() const { return ramp_weights(t, t_max, base_weight, steepness).first; }
    double beta() const { return ramp_weights(t, t_max, base_weight, steepness).second; }
};

struct LossBreakdown {
    int64_t step{0};
    int epoch{0};
    double sup{0.0};
    double csc{0.0};
    double cac{0.0};
    double alpha{0.0};
    double beta{0.0};
    double total{0.0};
};

// total = sup + alpha * csc + beta * cac. Rejects non-finite components.
LossBreakdown total_loss(double sup, double csc, double cac, int t, int t_max,
                         double base_weight = 0.1, double steepness = 5.0);

// The printed equations normalize each positive pair by the sum of the
// exponentiated same-index similarities ("literal"); "full" swaps in the
// standard InfoNCE denominator with cross-index pairs as negatives.
enum class ContrastiveDenominator { literal, full };

// "literal" reproduces the printed supervised objective (CE on modality a,
// Dice on modality b); "symmetric" averages CE+Dice over both modalities.
enum class SupervisedMode { symmetric, literal };

// Plain cosine similarity with zero-norm guard: u.v / (max(|u|,eps) * max(|v|,eps)).
double cosine_similarity(const std::vector<double>& u, const std::vector<double>& v);

// ---- differentiable losses (autodiff nodes) -------------------------------

// Per-channel cosine similarities between two [C, ...] feature maps, each
// channel flattened over its spatial dims. Returns a [C] node.
NodePtr channel_cosine(const NodePtr& f_a, const NodePtr& f_b);

// sum_i -log(exp(s_i) / sum_j exp(s_j)) over same-index similarities,
// i.e. n * logsumexp(s) - sum(s). Exactly zero for a single element.
NodePtr contrastive_scalars(const std::vector<NodePtr>& sims);

// Channel-wise semantic consistency between the two encoders' feature maps.
NodePtr csc_loss(const NodePtr& f_a, const NodePtr& f_b,
                 ContrastiveDenominator denom = ContrastiveDenominator::literal);

// Mean over voxels of -log softmax(logits)[true class]; logits [K,D,H,W].
NodePtr cross_entropy_loss(const NodePtr& logits, const LabelMask& mask);

// 1 - mean over foreground classes of (2 sum(p*y)+eps)/(sum(p)+sum(y)+eps);
// probs must already lie on the simplex over K.
NodePtr soft_dice_loss(const NodePtr& probs, const LabelMask& mask);

// Soft Dice overlap between two probability maps with squared-norm
// denominators, mean over foreground classes; differentiable in both.
NodePtr dice_similarity(const NodePtr& p, const NodePtr& q);

// Contrastive anatomical consistency over a batch of unlabeled prediction
// pairs (softmaxed decoder outputs).
NodePtr cac_loss(const std::vector<NodePtr>& preds_a, const std::vector<NodePtr>& preds_b,
                 ContrastiveDenominator denom = ContrastiveDenominator::literal);

NodePtr supervised_loss(const NodePtr& logits_a, const LabelMask& mask_a, const NodePtr& logits_b,
                        const LabelMask& mask_b, SupervisedMode mode = SupervisedMode::symmetric);

}  // namespace comodal
