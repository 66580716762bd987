// Test-only reference implementations. Everything here recomputes expected
// values with plain scalar loops, independent of the autodiff/metric code
// paths under test.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "autodiff.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "volume.hpp"

namespace oracle {

using comodal::LabelMask;
using comodal::NodePtr;
using comodal::Rng;
using comodal::Tensor;

inline double cosine(const std::vector<double>& u, const std::vector<double>& v,
                     double eps = 1e-8) {
    double dot = 0, nu = 0, nv = 0;
    for (size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    return dot / (std::max(std::sqrt(nu), eps) * std::max(std::sqrt(nv), eps));
}

// Direct transcription of the printed contrastive sum: for each index the
// positive similarity over the sum of exponentiated same-index similarities.
inline double contrastive_literal(const std::vector<double>& sims) {
    if (sims.size() == 1) return 0.0;
    double denom = 0;
    for (double s : sims) denom += std::exp(s);
    double loss = 0;
    for (double s : sims) loss += -std::log(std::exp(s) / denom);
    return loss;
}

inline double csc_literal(const std::vector<double>& fa, const std::vector<double>& fb, int C) {
    const size_t S = fa.size() / static_cast<size_t>(C);
    std::vector<double> sims;
    for (int c = 0; c < C; ++c) {
        std::vector<double> u(fa.begin() + c * S, fa.begin() + (c + 1) * S);
        std::vector<double> v(fb.begin() + c * S, fb.begin() + (c + 1) * S);
        sims.push_back(cosine(u, v));
    }
    return contrastive_literal(sims);
}

inline double csc_full(const std::vector<double>& fa, const std::vector<double>& fb, int C) {
    const size_t S = fa.size() / static_cast<size_t>(C);
    double loss = 0;
    for (int i = 0; i < C; ++i) {
        std::vector<double> u(fa.begin() + i * S, fa.begin() + (i + 1) * S);
        double denom = 0, pos = 0;
        for (int j = 0; j < C; ++j) {
            std::vector<double> v(fb.begin() + j * S, fb.begin() + (j + 1) * S);
            double s = cosine(u, v);
            denom += std::exp(s);
            if (i == j) pos = s;
        }
        loss += -std::log(std::exp(pos) / denom);
    }
    return loss;
}

inline double cross_entropy(const std::vector<double>& logits, const std::vector<int>& labels,
                            int K) {
    const size_t S = labels.size();
    double total = 0;
    for (size_t v = 0; v < S; ++v) {
        double denom = 0;
        for (int k = 0; k < K; ++k) denom += std::exp(logits[k * S + v]);
        total += -std::log(std::exp(logits[static_cast<size_t>(labels[v]) * S + v]) / denom);
    }
    return total / static_cast<double>(S);
}

inline double soft_dice(const std::vector<double>& probs, const std::vector<int>& labels, int K,
                        double eps = 1e-5) {
    const size_t S = labels.size();
    double mean = 0;
    for (int k = 1; k < K; ++k) {
        double inter = 0, psum = 0, ysum = 0;
        for (size_t v = 0; v < S; ++v) {
            double y = labels[v] == k ? 1.0 : 0.0;
            inter += probs[k * S + v] * y;
            psum += probs[k * S + v];
            ysum += y;
        }
        mean += (2 * inter + eps) / (psum + ysum + eps);
    }
    return 1.0 - mean / (K - 1);
}

inline double dice_similarity(const std::vector<double>& p, const std::vector<double>& q, int K,
                              double eps = 1e-5) {
    const size_t S = p.size() / static_cast<size_t>(K);
    double mean = 0;
    for (int k = 1; k < K; ++k) {
        double inter = 0, pp = 0, qq = 0;
        for (size_t v = 0; v < S; ++v) {
            inter += p[k * S + v] * q[k * S + v];
            pp += p[k * S + v] * p[k * S + v];
            qq += q[k * S + v] * q[k * S + v];
        }
        mean += (2 * inter + eps) / (pp + qq + eps);
    }
    return mean / (K - 1);
}

inline double cac_literal(const std::vector<std::vector<double>>& preds_a,
                          const std::vector<std::vector<double>>& preds_b, int K) {
    std::vector<double> sims;
    for (size_t j = 0; j < preds_a.size(); ++j)
        sims.push_back(dice_similarity(preds_a[j], preds_b[j], K));
    return contrastive_literal(sims);
}

inline double cac_full(const std::vector<std::vector<double>>& preds_a,
                       const std::vector<std::vector<double>>& preds_b, int K) {
    const size_t M = preds_a.size();
    double loss = 0;
    for (size_t i = 0; i < M; ++i) {
        double denom = 0, pos = 0;
        for (size_t j = 0; j < M; ++j) {
            double s = dice_similarity(preds_a[i], preds_b[j], K);
            denom += std::exp(s);
            if (i == j) pos = s;
        }
        loss += -std::log(std::exp(pos) / denom);
    }
    return loss;
}

// ---- finite differences -----------------------------------------------------

struct GradCheck {
    double max_rel_err{0.0};
    int checked{0};
};

// build() must create a fresh graph from the given leaves every call.
inline GradCheck finite_diff_check(
    std::vector<Tensor> inputs,
    const std::function<NodePtr(const std::vector<NodePtr>&)>& build, double h = 1e-3) {
    std::vector<NodePtr> leaves;
    for (auto& t : inputs) leaves.push_back(comodal::leaf(t, true));
    NodePtr root = build(leaves);
    comodal::backward(root);

    auto eval = [&](const std::vector<Tensor>& xs) {
        std::vector<NodePtr> consts;
        for (const auto& t : xs) consts.push_back(comodal::leaf(t, false));
        return build(consts)->value[0];
    };

    GradCheck res;
    for (size_t i = 0; i < inputs.size(); ++i) {
        leaves[i]->ensure_grad();
        for (int64_t e = 0; e < inputs[i].numel(); ++e) {
            std::vector<Tensor> plus = inputs, minus = inputs;
            plus[i][e] += h;
            minus[i][e] -= h;
            double fd = (eval(plus) - eval(minus)) / (2 * h);
            double ad = leaves[i]->grad[e];
            double rel = std::fabs(ad - fd) / std::max({std::fabs(ad), std::fabs(fd), 1e-8});
            res.max_rel_err = std::max(res.max_rel_err, rel);
            ++res.checked;
        }
    }
    return res;
}

// ---- metrics oracles ---------------------------------------------------------

// Independent surface detection: count same-class 6-neighbours and compare
// with the number of in-grid neighbours.
inline std::vector<std::array<int, 3>> surface_points(const LabelMask& m, int k) {
    std::vector<std::array<int, 3>> pts;
    for (int d = 0; d < m.shape[0]; ++d)
        for (int h = 0; h < m.shape[1]; ++h)
            for (int w = 0; w < m.shape[2]; ++w) {
                if (m.at(d, h, w) != k) continue;
                int in_grid = 0, same = 0;
                const int off[6][3] = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                                       {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};
                for (const auto& o : off) {
                    int dd = d + o[0], hh = h + o[1], ww = w + o[2];
                    if (dd < 0 || dd >= m.shape[0] || hh < 0 || hh >= m.shape[1] || ww < 0 ||
                        ww >= m.shape[2])
                        continue;
                    ++in_grid;
                    if (m.at(dd, hh, ww) == k) ++same;
                }
                if (in_grid < 6 || same < in_grid) pts.push_back({d, h, w});
            }
    return pts;
}

// Exhaustive all-pairs average symmetric surface distance; -1 when undefined.
inline double assd_all_pairs(const LabelMask& pred, const LabelMask& gt, int k,
                             const std::array<double, 3>& sp) {
    auto a = surface_points(pred, k);
    auto b = surface_points(gt, k);
    if (a.empty() || b.empty()) return -1.0;
    double sum = 0;
    for (const auto& p : a) {
        double best = 1e300;
        for (const auto& q : b) {
            double d0 = (p[0] - q[0]) * sp[0], d1 = (p[1] - q[1]) * sp[1],
                   d2 = (p[2] - q[2]) * sp[2];
            best = std::min(best, std::sqrt(d0 * d0 + d1 * d1 + d2 * d2));
        }
        sum += best;
    }
    for (const auto& q : b) {
        double best = 1e300;
        for (const auto& p : a) {
            double d0 = (p[0] - q[0]) * sp[0], d1 = (p[1] - q[1]) * sp[1],
                   d2 = (p[2] - q[2]) * sp[2];
            best = std::min(best, std::sqrt(d0 * d0 + d1 * d1 + d2 * d2));
        }
        sum += best;
    }
    return sum / static_cast<double>(a.size() + b.size());
}

// Voxel-centre membership count of an axis-aligned ellipsoid over the grid.
inline int64_t ellipsoid_voxel_count(const std::array<int, 3>& grid,
                                     const std::array<double, 3>& center,
                                     const std::array<double, 3>& semi) {
    int64_t n = 0;
    for (int d = 0; d < grid[0]; ++d)
        for (int h = 0; h < grid[1]; ++h)
            for (int w = 0; w < grid[2]; ++w) {
                double a = (d - center[0]) / semi[0];
                double b = (h - center[1]) / semi[1];
                double c = (w - center[2]) / semi[2];
                if (a * a + b * b + c * c <= 1.0) ++n;
            }
    return n;
}

// Nearest-neighbour rigid resample of a mask under the forward affine
// (output voxel looked up at A^-1 x), reimplemented with explicit inverse.
inline LabelMask nn_resample(const LabelMask& mask, const std::array<double, 16>& affine) {
    LabelMask out = LabelMask::zeros(mask.shape, mask.num_classes);
    double r[9], t[3];
    for (int i = 0; i < 3; ++i) {
        t[i] = affine[i * 4 + 3];
        for (int j = 0; j < 3; ++j) r[i * 3 + j] = affine[i * 4 + j];
    }
    for (int d = 0; d < mask.shape[0]; ++d)
        for (int h = 0; h < mask.shape[1]; ++h)
            for (int w = 0; w < mask.shape[2]; ++w) {
                double q[3] = {d - t[0], h - t[1], w - t[2]};
                double src[3] = {r[0] * q[0] + r[3] * q[1] + r[6] * q[2],
                                 r[1] * q[0] + r[4] * q[1] + r[7] * q[2],
                                 r[2] * q[0] + r[5] * q[1] + r[8] * q[2]};
                int dn = static_cast<int>(std::llround(src[0]));
                int hn = static_cast<int>(std::llround(src[1]));
                int wn = static_cast<int>(std::llround(src[2]));
                if (dn >= 0 && dn < mask.shape[0] && hn >= 0 && hn < mask.shape[1] && wn >= 0 &&
                    wn < mask.shape[2])
                    out.at(d, h, w) = mask.at(dn, hn, wn);
            }
    return out;
}

inline Tensor random_tensor(std::vector<int> dims, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(dims));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, scale);
    return t;
}

inline Tensor random_simplex(std::vector<int> dims, Rng& rng) {
    Tensor t(std::move(dims));
    const int K = t.dim(0);
    const int64_t S = t.numel() / K;
    for (int64_t v = 0; v < S; ++v) {
        double sum = 0;
        for (int k = 0; k < K; ++k) {
            double e = std::exp(rng.normal(0.0, 1.0));
            t[k * S + v] = e;
            sum += e;
        }
        for (int k = 0; k < K; ++k) t[k * S + v] /= sum;
    }
    return t;
}

inline LabelMask random_mask(std::array<int, 3> shape, int K, Rng& rng) {
    LabelMask m = LabelMask::zeros(shape, K);
    for (auto& v : m.data) v = static_cast<int16_t>(rng.uniform_int(0, K - 1));
    return m;
}

}  // namespace oracle
