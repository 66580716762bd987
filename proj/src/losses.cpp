#include "losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace comodal {

namespace {

constexpr double kCosineEps = 1e-8;
constexpr double kDiceEps = 1e-5;

double logsumexp(const std::vector<double>& s) {
    double mx = s[0];
    for (double v : s) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : s) sum += std::exp(v - mx);
    return mx + std::log(sum);
}

std::vector<double> softmax_vec(const std::vector<double>& s) {
    double mx = s[0];
    for (double v : s) mx = std::max(mx, v);
    std::vector<double> y(s.size());
    double sum = 0.0;
    for (size_t i = 0; i < s.size(); ++i) {
        y[i] = std::exp(s[i] - mx);
        sum += y[i];
    }
    for (double& v : y) v /= sum;
    return y;
}

NodePtr make_node(Tensor value, std::vector<NodePtr> inputs, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->inputs = std::move(inputs);
    for (const auto& in : n->inputs)
        if (in->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backward_op = std::move(bw);
    return n;
}

void check_probs_vs_mask(const NodePtr& t, const LabelMask& mask, const char* op) {
    require(t->value.rank() == 4, ErrorCode::shape_mismatch,
            std::string(op) + " expects a [K,D,H,W] tensor");
    require(t->value.dim(0) == mask.num_classes && t->value.dim(1) == mask.shape[0] &&
                t->value.dim(2) == mask.shape[1] && t->value.dim(3) == mask.shape[2],
            ErrorCode::shape_mismatch,
            std::string(op) + ": tensor " + t->value.shape_string() + " does not match mask");
}

}  // namespace

std::pair<double, double> ramp_weights(int t, int t_max, double base_weight, double steepness) {
    require(t_max >= 1, ErrorCode::invalid_argument, "ramp_weights: t_max must be >= 1");
    require(t >= 0 && t <= t_max, ErrorCode::invalid_argument,
            "ramp_weights: t must lie in [0, t_max]");
    auto ramp_up = [base_weight, steepness, t_max](int s) {
        return base_weight * std::exp(-steepness * (1.0 - static_cast<double>(s) / t_max));
    };
    return {ramp_up(t), ramp_up(t_max - t)};
}

void RampSchedule::validate() const {
    require(base_weight > 0.0 && steepness >= 0.0, ErrorCode::invalid_argument,
            "ramp schedule needs base_weight > 0 and steepness >= 0");
    (void)ramp_weights(t, t_max, base_weight, steepness);
}

LossBreakdown total_loss(double sup, double csc, double cac, int t, int t_max, double base_weight,
                         double steepness) {
    require(std::isfinite(sup) && std::isfinite(csc) && std::isfinite(cac), ErrorCode::numeric,
            "total_loss: non-finite loss component");
    auto [alpha, beta] = ramp_weights(t, t_max, base_weight, steepness);
    LossBreakdown b;
    b.sup = sup;
    b.csc = csc;
    b.cac = cac;
    b.alpha = alpha;
    b.beta = beta;
    b.total = sup + alpha * csc + beta * cac;
    return b;
}

double cosine_similarity(const std::vector<double>& u, const std::vector<double>& v) {
    require(u.size() == v.size(), ErrorCode::shape_mismatch,
            "cosine_similarity: vector lengths differ");
    require(!u.empty(), ErrorCode::invalid_argument, "cosine_similarity: empty vectors");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    return dot / (std::max(std::sqrt(nu), kCosineEps) * std::max(std::sqrt(nv), kCosineEps));
}

NodePtr channel_cosine(const NodePtr& f_a, const NodePtr& f_b) {
    require(f_a->value.rank() >= 2, ErrorCode::shape_mismatch,
            "channel_cosine expects [C, ...] tensors");
    require(f_a->value.same_shape(f_b->value), ErrorCode::shape_mismatch,
            "channel_cosine: feature shapes differ (" + f_a->value.shape_string() + " vs " +
                f_b->value.shape_string() + ")");
    const int c = f_a->value.dim(0);
    const int64_t s = f_a->value.numel() / c;
    Tensor out({c});
    // Saved for backward: norms (clamped), raw-norm flags and similarities.
    std::vector<double> nu(c), nv(c), sim(c);
    std::vector<char> u_live(c), v_live(c);
    const double* A = f_a->value.data();
    const double* B = f_b->value.data();
    for (int ch = 0; ch < c; ++ch) {
        const double* u = A + ch * s;
        const double* v = B + ch * s;
        double dot = 0.0, uu = 0.0, vv = 0.0;
        for (int64_t i = 0; i < s; ++i) {
            dot += u[i] * v[i];
            uu += u[i] * u[i];
            vv += v[i] * v[i];
        }
        double run = std::sqrt(uu), rvn = std::sqrt(vv);
        u_live[ch] = run > kCosineEps;
        v_live[ch] = rvn > kCosineEps;
        nu[ch] = std::max(run, kCosineEps);
        nv[ch] = std::max(rvn, kCosineEps);
        sim[ch] = dot / (nu[ch] * nv[ch]);
        out[ch] = sim[ch];
    }
    return make_node(std::move(out), {f_a, f_b},
                     [c, s, nu = std::move(nu), nv = std::move(nv), sim = std::move(sim),
                      u_live = std::move(u_live), v_live = std::move(v_live)](Node& self) {
                         const double* A = self.inputs[0]->value.data();
                         const double* B = self.inputs[1]->value.data();
                         for (int ch = 0; ch < c; ++ch) {
                             double g = self.grad[ch];
                             if (g == 0.0) continue;
                             double inv_nunv = 1.0 / (nu[ch] * nv[ch]);
                             const double* u = A + ch * s;
                             const double* v = B + ch * s;
                             if (self.inputs[0]->requires_grad) {
                                 self.inputs[0]->ensure_grad();
                                 double* gu = self.inputs[0]->grad.data() + ch * s;
                                 double su = u_live[ch] ? sim[ch] / (nu[ch] * nu[ch]) : 0.0;
                                 for (int64_t i = 0; i < s; ++i)
                                     gu[i] += g * (v[i] * inv_nunv - su * u[i]);
                             }
                             if (self.inputs[1]->requires_grad) {
                                 self.inputs[1]->ensure_grad();
                                 double* gv = self.inputs[1]->grad.data() + ch * s;
                                 double sv = v_live[ch] ? sim[ch] / (nv[ch] * nv[ch]) : 0.0;
                                 for (int64_t i = 0; i < s; ++i)
                                     gv[i] += g * (u[i] * inv_nunv - sv * v[i]);
                             }
                         }
                     });
}

NodePtr contrastive_scalars(const std::vector<NodePtr>& sims) {
    require(!sims.empty(), ErrorCode::invalid_argument, "contrastive_scalars: empty batch");
    const size_t n = sims.size();
    std::vector<double> s(n);
    for (size_t i = 0; i < n; ++i) s[i] = sims[i]->scalar();
    double value = n == 1 ? 0.0 : static_cast<double>(n) * logsumexp(s) -
                                      std::accumulate(s.begin(), s.end(), 0.0);
    return make_node(Tensor::scalar(value), sims, [s = std::move(s)](Node& self) {
        const double dn = static_cast<double>(s.size());
        std::vector<double> sm = softmax_vec(s);
        for (size_t i = 0; i < s.size(); ++i) {
            if (!self.inputs[i]->requires_grad) continue;
            self.inputs[i]->ensure_grad();
            self.inputs[i]->grad[0] += self.grad[0] * (dn * sm[i] - 1.0);
        }
    });
}

namespace {

// Vector version of the same contrastive reduction, over a [C] node.
NodePtr contrastive_vector(const NodePtr& sims) {
    require(sims->value.rank() == 1, ErrorCode::shape_mismatch,
            "contrastive_vector expects a rank-1 node");
    const int c = sims->value.dim(0);
    std::vector<double> s(sims->value.data(), sims->value.data() + c);
    double value = c == 1 ? 0.0 : static_cast<double>(c) * logsumexp(s) -
                                      std::accumulate(s.begin(), s.end(), 0.0);
    return make_node(Tensor::scalar(value), {sims}, [s = std::move(s)](Node& self) {
        if (!self.inputs[0]->requires_grad) return;
        self.inputs[0]->ensure_grad();
        const double dn = static_cast<double>(s.size());
        std::vector<double> sm = softmax_vec(s);
        for (size_t i = 0; i < s.size(); ++i)
            self.inputs[0]->grad[static_cast<int64_t>(i)] +=
                self.grad[0] * (dn * sm[i] - 1.0);
    });
}

// Full C x C cosine matrix between channels of two feature maps.
NodePtr channel_cosine_matrix(const NodePtr& f_a, const NodePtr& f_b) {
    const int c = f_a->value.dim(0);
    const int64_t s = f_a->value.numel() / c;
    Tensor out({c, c});
    std::vector<double> nu(c), nv(c);
    std::vector<char> u_live(c), v_live(c);
    const double* A = f_a->value.data();
    const double* B = f_b->value.data();
    for (int i = 0; i < c; ++i) {
        double uu = 0.0, vv = 0.0;
        for (int64_t t = 0; t < s; ++t) {
            uu += A[i * s + t] * A[i * s + t];
            vv += B[i * s + t] * B[i * s + t];
        }
        double run = std::sqrt(uu), rvn = std::sqrt(vv);
        u_live[i] = run > kCosineEps;
        v_live[i] = rvn > kCosineEps;
        nu[i] = std::max(run, kCosineEps);
        nv[i] = std::max(rvn, kCosineEps);
    }
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < c; ++j) {
            double dot = 0.0;
            for (int64_t t = 0; t < s; ++t) dot += A[i * s + t] * B[j * s + t];
            out[i * c + j] = dot / (nu[i] * nv[j]);
        }
    return make_node(std::move(out), {f_a, f_b},
                     [c, s, nu = std::move(nu), nv = std::move(nv), u_live = std::move(u_live),
                      v_live = std::move(v_live)](Node& self) {
                         const double* A = self.inputs[0]->value.data();
                         const double* B = self.inputs[1]->value.data();
                         for (int i = 0; i < c; ++i)
                             for (int j = 0; j < c; ++j) {
                                 double g = self.grad[i * c + j];
                                 if (g == 0.0) continue;
                                 double sim = self.value[i * c + j];
                                 double inv = 1.0 / (nu[i] * nv[j]);
                                 if (self.inputs[0]->requires_grad) {
                                     self.inputs[0]->ensure_grad();
                                     double* gu = self.inputs[0]->grad.data() + i * s;
                                     const double* u = A + i * s;
                                     const double* v = B + j * s;
                                     double su = u_live[i] ? sim / (nu[i] * nu[i]) : 0.0;
                                     for (int64_t t = 0; t < s; ++t)
                                         gu[t] += g * (v[t] * inv - su * u[t]);
                                 }
                                 if (self.inputs[1]->requires_grad) {
                                     self.inputs[1]->ensure_grad();
                                     double* gv = self.inputs[1]->grad.data() + j * s;
                                     const double* u = A + i * s;
                                     const double* v = B + j * s;
                                     double sv = v_live[j] ? sim / (nv[j] * nv[j]) : 0.0;
                                     for (int64_t t = 0; t < s; ++t)
                                         gv[t] += g * (u[t] * inv - sv * v[t]);
                                 }
                             }
                     });
}

// sum_i [logsumexp(row_i) - S[i,i]] over a square similarity matrix node.
NodePtr infonce_rows(const NodePtr& sim_matrix) {
    const int c = sim_matrix->value.dim(0);
    require(sim_matrix->value.rank() == 2 && sim_matrix->value.dim(1) == c,
            ErrorCode::shape_mismatch, "infonce_rows expects a square matrix");
    double value = 0.0;
    for (int i = 0; i < c; ++i) {
        std::vector<double> row(sim_matrix->value.data() + i * c,
                                sim_matrix->value.data() + (i + 1) * c);
        value += logsumexp(row) - row[static_cast<size_t>(i)];
    }
    return make_node(Tensor::scalar(value), {sim_matrix}, [c](Node& self) {
        if (!self.inputs[0]->requires_grad) return;
        self.inputs[0]->ensure_grad();
        const Tensor& sim = self.inputs[0]->value;
        for (int i = 0; i < c; ++i) {
            std::vector<double> row(sim.data() + i * c, sim.data() + (i + 1) * c);
            std::vector<double> sm = softmax_vec(row);
            for (int j = 0; j < c; ++j) {
                double d = sm[static_cast<size_t>(j)] - (i == j ? 1.0 : 0.0);
                self.inputs[0]->grad[i * c + j] += self.grad[0] * d;
            }
        }
    });
}

std::vector<double> scalar_values(const std::vector<NodePtr>& nodes) {
    std::vector<double> out(nodes.size());
    for (size_t i = 0; i < nodes.size(); ++i) out[i] = nodes[i]->scalar();
    return out;
}

// Literal/full contrastive reduction over an M x M grid of scalar nodes.
NodePtr infonce_scalar_grid(const std::vector<NodePtr>& sims, int m) {
    require(static_cast<int>(sims.size()) == m * m, ErrorCode::invalid_argument,
            "infonce_scalar_grid: need m*m similarities");
    std::vector<double> s = scalar_values(sims);
    double value = 0.0;
    for (int i = 0; i < m; ++i) {
        std::vector<double> row(s.begin() + i * m, s.begin() + (i + 1) * m);
        value += logsumexp(row) - row[static_cast<size_t>(i)];
    }
    return make_node(Tensor::scalar(value), sims, [m, s = std::move(s)](Node& self) {
        for (int i = 0; i < m; ++i) {
            std::vector<double> row(s.begin() + i * m, s.begin() + (i + 1) * m);
            std::vector<double> sm = softmax_vec(row);
            for (int j = 0; j < m; ++j) {
                size_t idx = static_cast<size_t>(i) * m + j;
                if (!self.inputs[idx]->requires_grad) continue;
                self.inputs[idx]->ensure_grad();
                self.inputs[idx]->grad[0] +=
                    self.grad[0] * (sm[static_cast<size_t>(j)] - (i == j ? 1.0 : 0.0));
            }
        }
    });
}

}  // namespace

NodePtr csc_loss(const NodePtr& f_a, const NodePtr& f_b, ContrastiveDenominator denom) {
    if (denom == ContrastiveDenominator::literal)
        return contrastive_vector(channel_cosine(f_a, f_b));
    return infonce_rows(channel_cosine_matrix(f_a, f_b));
}

NodePtr cross_entropy_loss(const NodePtr& logits, const LabelMask& mask) {
    check_probs_vs_mask(logits, mask, "cross_entropy_loss");
    const int kc = mask.num_classes;
    const int64_t s = mask.numel();
    Tensor probs({logits->value.dim(0), logits->value.dim(1), logits->value.dim(2),
                  logits->value.dim(3)});
    const double* X = logits->value.data();
    double* P = probs.data();
    double nll = 0.0;
    for (int64_t i = 0; i < s; ++i) {
        double mx = X[i];
        for (int ch = 1; ch < kc; ++ch) mx = std::max(mx, X[ch * s + i]);
        double sum = 0.0;
        for (int ch = 0; ch < kc; ++ch) {
            double e = std::exp(X[ch * s + i] - mx);
            P[ch * s + i] = e;
            sum += e;
        }
        double inv = 1.0 / sum;
        for (int ch = 0; ch < kc; ++ch) P[ch * s + i] *= inv;
        nll -= std::log(std::max(P[mask.data[i] * s + i], 1e-300));
    }
    nll /= static_cast<double>(s);
    std::vector<int16_t> labels = mask.data;
    return make_node(Tensor::scalar(nll), {logits},
                     [kc, s, probs = std::move(probs), labels = std::move(labels)](Node& self) {
                         if (!self.inputs[0]->requires_grad) return;
                         self.inputs[0]->ensure_grad();
                         double* g = self.inputs[0]->grad.data();
                         const double scale = self.grad[0] / static_cast<double>(s);
                         for (int64_t i = 0; i < s; ++i) {
                             for (int ch = 0; ch < kc; ++ch) {
                                 double delta = probs[ch * s + i] -
                                                (labels[static_cast<size_t>(i)] == ch ? 1.0 : 0.0);
                                 g[ch * s + i] += scale * delta;
                             }
                         }
                     });
}

NodePtr soft_dice_loss(const NodePtr& probs, const LabelMask& mask) {
    check_probs_vs_mask(probs, mask, "soft_dice_loss");
    const int kc = mask.num_classes;
    const int64_t s = mask.numel();
    require(kc >= 2, ErrorCode::invalid_argument, "soft_dice_loss needs at least one foreground class");
    const double* P = probs->value.data();
    std::vector<double> num(kc, 0.0), den(kc, 0.0);
    for (int ch = 1; ch < kc; ++ch) {
        double inter = 0.0, psum = 0.0;
        int64_t ysum = 0;
        for (int64_t i = 0; i < s; ++i) {
            double y = mask.data[i] == ch ? 1.0 : 0.0;
            inter += P[ch * s + i] * y;
            psum += P[ch * s + i];
            if (mask.data[i] == ch) ++ysum;
        }
        num[ch] = 2.0 * inter + kDiceEps;
        den[ch] = psum + static_cast<double>(ysum) + kDiceEps;
    }
    double mean_dice = 0.0;
    for (int ch = 1; ch < kc; ++ch) mean_dice += num[ch] / den[ch];
    mean_dice /= (kc - 1);
    std::vector<int16_t> labels = mask.data;
    return make_node(
        Tensor::scalar(1.0 - mean_dice), {probs},
        [kc, s, num = std::move(num), den = std::move(den), labels = std::move(labels)](Node& self) {
            if (!self.inputs[0]->requires_grad) return;
            self.inputs[0]->ensure_grad();
            double* g = self.inputs[0]->grad.data();
            const double scale = -self.grad[0] / static_cast<double>(kc - 1);
            for (int ch = 1; ch < kc; ++ch) {
                double inv_den = 1.0 / den[ch];
                double num_over_den2 = num[ch] * inv_den * inv_den;
                for (int64_t i = 0; i < s; ++i) {
                    double y = labels[static_cast<size_t>(i)] == ch ? 1.0 : 0.0;
                    g[ch * s + i] += scale * (2.0 * y * inv_den - num_over_den2);
                }
            }
        });
}

NodePtr dice_similarity(const NodePtr& p, const NodePtr& q) {
    require(p->value.same_shape(q->value), ErrorCode::shape_mismatch,
            "dice_similarity: shapes differ");
    require(p->value.rank() == 4, ErrorCode::shape_mismatch, "dice_similarity expects [K,D,H,W]");
    const int kc = p->value.dim(0);
    require(kc >= 2, ErrorCode::invalid_argument, "dice_similarity needs at least one foreground class");
    const int64_t s = p->value.numel() / kc;
    const double* P = p->value.data();
    const double* Q = q->value.data();
    std::vector<double> num(kc, 0.0), den(kc, 0.0);
    for (int ch = 1; ch < kc; ++ch) {
        double inter = 0.0, pp = 0.0, qq = 0.0;
        for (int64_t i = 0; i < s; ++i) {
            inter += P[ch * s + i] * Q[ch * s + i];
            pp += P[ch * s + i] * P[ch * s + i];
            qq += Q[ch * s + i] * Q[ch * s + i];
        }
        num[ch] = 2.0 * inter + kDiceEps;
        den[ch] = pp + qq + kDiceEps;
    }
    double mean_sim = 0.0;
    for (int ch = 1; ch < kc; ++ch) mean_sim += num[ch] / den[ch];
    mean_sim /= (kc - 1);
    return make_node(
        Tensor::scalar(mean_sim), {p, q},
        [kc, s, num = std::move(num), den = std::move(den)](Node& self) {
            const double* P = self.inputs[0]->value.data();
            const double* Q = self.inputs[1]->value.data();
            const double scale = self.grad[0] / static_cast<double>(kc - 1);
            for (int ch = 1; ch < kc; ++ch) {
                double inv_den = 1.0 / den[ch];
                double ratio = num[ch] * inv_den * inv_den;
                if (self.inputs[0]->requires_grad) {
                    self.inputs[0]->ensure_grad();
                    double* g = self.inputs[0]->grad.data();
                    for (int64_t i = 0; i < s; ++i)
                        g[ch * s + i] +=
                            scale * (2.0 * Q[ch * s + i] * inv_den - 2.0 * P[ch * s + i] * ratio);
                }
                if (self.inputs[1]->requires_grad) {
                    self.inputs[1]->ensure_grad();
                    double* g = self.inputs[1]->grad.data();
                    for (int64_t i = 0; i < s; ++i)
                        g[ch * s + i] +=
                            scale * (2.0 * P[ch * s + i] * inv_den - 2.0 * Q[ch * s + i] * ratio);
                }
            }
        });
}

NodePtr cac_loss(const std::vector<NodePtr>& preds_a, const std::vector<NodePtr>& preds_b,
                 ContrastiveDenominator denom) {
    require(preds_a.size() == preds_b.size(), ErrorCode::invalid_argument,
            "cac_loss: prediction batch lengths differ");
    require(!preds_a.empty(), ErrorCode::invalid_argument, "cac_loss: empty batch");
    const int m = static_cast<int>(preds_a.size());
    if (denom == ContrastiveDenominator::literal) {
        std::vector<NodePtr> sims;
        sims.reserve(preds_a.size());
        for (int j = 0; j < m; ++j) sims.push_back(dice_similarity(preds_a[j], preds_b[j]));
        return contrastive_scalars(sims);
    }
    std::vector<NodePtr> sims;
    sims.reserve(static_cast<size_t>(m) * m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) sims.push_back(dice_similarity(preds_a[i], preds_b[j]));
    return infonce_scalar_grid(sims, m);
}

NodePtr supervised_loss(const NodePtr& logits_a, const LabelMask& mask_a, const NodePtr& logits_b,
                        const LabelMask& mask_b, SupervisedMode mode) {
    if (mode == SupervisedMode::literal) {
        NodePtr ce_a = cross_entropy_loss(logits_a, mask_a);
        NodePtr dice_b = soft_dice_loss(softmax_channels(logits_b), mask_b);
        return add(ce_a, dice_b);
    }
    NodePtr ce_a = cross_entropy_loss(logits_a, mask_a);
    NodePtr dice_a = soft_dice_loss(softmax_channels(logits_a), mask_a);
    NodePtr ce_b = cross_entropy_loss(logits_b, mask_b);
    NodePtr dice_b = soft_dice_loss(softmax_channels(logits_b), mask_b);
    return scale(add_scalars({ce_a, dice_a, ce_b, dice_b}), 0.5);
}

}  // namespace comodal
