#include "metrics.hpp"

#include <cmath>
#include <limits>

namespace comodal {

namespace {

void check_pair(const LabelMask& pred, const LabelMask& gt, int k, const char* op) {
    require(pred.shape == gt.shape, ErrorCode::shape_mismatch,
            std::string(op) + ": mask shapes differ");
    int kmax = std::max(pred.num_classes, gt.num_classes);
    require(k >= 1 && k < kmax, ErrorCode::invalid_argument,
            std::string(op) + ": class id " + std::to_string(k) + " outside [1, K-1]");
}

}  // namespace

double dice_score(const LabelMask& pred, const LabelMask& gt, int k) {
    check_pair(pred, gt, k, "dice_score");
    int64_t p = 0, g = 0, inter = 0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        bool in_p = pred.data[i] == k;
        bool in_g = gt.data[i] == k;
        p += in_p;
        g += in_g;
        inter += in_p && in_g;
    }
    if (p + g == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

std::vector<std::array<int, 3>> extract_surface(const LabelMask& mask, int k) {
    std::vector<std::array<int, 3>> surface;
    const int D = mask.shape[0], H = mask.shape[1], W = mask.shape[2];
    static constexpr int kNeighbours[6][3] = {{-1, 0, 0}, {1, 0, 0},  {0, -1, 0},
                                              {0, 1, 0},  {0, 0, -1}, {0, 0, 1}};
    for (int d = 0; d < D; ++d)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                if (mask.at(d, h, w) != k) continue;
                bool boundary = false;
                for (const auto& n : kNeighbours) {
                    int dd = d + n[0], hh = h + n[1], ww = w + n[2];
                    if (dd < 0 || dd >= D || hh < 0 || hh >= H || ww < 0 || ww >= W) {
                        boundary = true;  // volume border counts as surface
                        break;
                    }
                    if (mask.at(dd, hh, ww) != k) {
                        boundary = true;
                        break;
                    }
                }
                if (boundary) surface.push_back({d, h, w});
            }
    return surface;
}

namespace {

// Sum over points of min distance to the other surface, in mm.
double directed_distance_sum(const std::vector<std::array<int, 3>>& from,
                             const std::vector<std::array<int, 3>>& to,
                             const std::array<double, 3>& spacing) {
    double total = 0.0;
    for (const auto& p : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : to) {
            double dd = (p[0] - q[0]) * spacing[0];
            double dh = (p[1] - q[1]) * spacing[1];
            double dw = (p[2] - q[2]) * spacing[2];
            double dist2 = dd * dd + dh * dh + dw * dw;
            if (dist2 < best) best = dist2;
        }
        total += std::sqrt(best);
    }
    return total;
}

}  // namespace

AssdResult assd(const LabelMask& pred, const LabelMask& gt, int k,
                const std::array<double, 3>& spacing_mm, std::optional<double> penalty_mm) {
    check_pair(pred, gt, k, "assd");
    for (double s : spacing_mm)
        require(s > 0.0, ErrorCode::invalid_argument, "assd: spacing must be positive");
    std::vector<std::array<int, 3>> sp = extract_surface(pred, k);
    std::vector<std::array<int, 3>> sg = extract_surface(gt, k);
    if (sp.empty() && sg.empty()) return {AssdStatus::both_empty, 0.0};
    if (sp.empty() || sg.empty()) {
        if (penalty_mm) return {AssdStatus::ok, *penalty_mm};
        return {AssdStatus::missing_structure, 0.0};
    }
    double total = directed_distance_sum(sp, sg, spacing_mm) +
                   directed_distance_sum(sg, sp, spacing_mm);
    return {AssdStatus::ok, total / static_cast<double>(sp.size() + sg.size())};
}

LabelMask argmax_mask(const Tensor& logits, int num_classes) {
    require(logits.rank() == 4 && logits.dim(0) == num_classes, ErrorCode::shape_mismatch,
            "argmax_mask: logits must be [K,D,H,W] with K = num_classes");
    LabelMask out = LabelMask::zeros({logits.dim(1), logits.dim(2), logits.dim(3)}, num_classes);
    const int64_t s = out.numel();
    const double* X = logits.data();
    for (int64_t i = 0; i < s; ++i) {
        int best = 0;
        double bv = X[i];
        for (int ch = 1; ch < num_classes; ++ch) {
            double v = X[ch * s + i];
            if (v > bv) {
                bv = v;
                best = ch;
            }
        }
        out.data[static_cast<size_t>(i)] = static_cast<int16_t>(best);
    }
    return out;
}

EvalRecord evaluate_logits(const Tensor& logits, const LabelMask& gt,
                           const std::array<double, 3>& spacing_mm, const std::string& sample_id,
                           Modality modality) {
    LabelMask pred = argmax_mask(logits, gt.num_classes);
    EvalRecord rec;
    rec.sample_id = sample_id;
    rec.modality = modality;
    double dice_sum = 0.0, assd_sum = 0.0;
    int assd_defined = 0;
    for (int k = 1; k < gt.num_classes; ++k) {
        rec.per_class_dice.push_back(dice_score(pred, gt, k));
        dice_sum += rec.per_class_dice.back();
        AssdResult r = assd(pred, gt, k, spacing_mm);
        rec.per_class_assd.push_back(r);
        if (r.defined()) {
            assd_sum += r.mm;
            ++assd_defined;
        }
    }
    rec.mean_dice = dice_sum / static_cast<double>(gt.num_classes - 1);
    rec.mean_assd_defined = assd_defined > 0;
    rec.mean_assd_mm = assd_defined > 0 ? assd_sum / assd_defined : 0.0;
    return rec;
}

std::pair<EvalRecord, EvalRecord> evaluate_sample(const Tensor& logits_a, const Tensor& logits_b,
                                                  const BimodalSample& sample) {
    require(sample.labeled(), ErrorCode::invalid_argument,
            "evaluate_sample: sample " + sample.id + " has no ground-truth masks");
    return {evaluate_logits(logits_a, *sample.mask_a, sample.vol_a.spacing, sample.id, Modality::A),
            evaluate_logits(logits_b, *sample.mask_b, sample.vol_b.spacing, sample.id, Modality::B)};
}

}  // namespace comodal
