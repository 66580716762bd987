#include <doctest.h>

#include "losses.hpp"
#include "oracles.hpp"

using namespace comodal;

namespace {

std::vector<double> tensor_values(const Tensor& t) {
    return std::vector<double>(t.data(), t.data() + t.numel());
}

std::vector<int> mask_labels(const LabelMask& m) {
    return std::vector<int>(m.data.begin(), m.data.end());
}

Tensor one_hot(const LabelMask& m) {
    Tensor t({m.num_classes, m.shape[0], m.shape[1], m.shape[2]});
    const int64_t s = m.numel();
    for (int64_t i = 0; i < s; ++i) t[m.data[static_cast<size_t>(i)] * s + i] = 1.0;
    return t;
}

Tensor big_margin_logits(const LabelMask& m, double margin) {
    Tensor t({m.num_classes, m.shape[0], m.shape[1], m.shape[2]});
    const int64_t s = m.numel();
    for (int64_t i = 0; i < s; ++i) t[m.data[static_cast<size_t>(i)] * s + i] = margin;
    return t;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("cosine_similarity basics") {
    CHECK(cosine_similarity({1, 2, 3}, {1, 2, 3}) == doctest::Approx(1.0));
    CHECK(cosine_similarity({1, 0}, {0, 1}) == doctest::Approx(0.0));
    CHECK(cosine_similarity({1, 2}, {-1, -2}) == doctest::Approx(-1.0));
    CHECK(cosine_similarity({0, 0}, {0, 0}) == 0.0);
    CHECK(cosine_similarity({0, 0}, {3, 4}) == 0.0);
    CHECK_THROWS_AS(cosine_similarity({1, 2}, {1, 2, 3}), Error);
}

TEST_CASE("csc_loss analytic values") {
    Rng rng(7);
    SUBCASE("identical features with C=4 give 4 ln 4") {
        Tensor f = oracle::random_tensor({4, 2, 2, 2}, rng);
        NodePtr loss = csc_loss(leaf(f, true), leaf(f, true));
        CHECK(loss->scalar() == doctest::Approx(4.0 * std::log(4.0)).epsilon(1e-9));
        CHECK(loss->scalar() == doctest::Approx(5.5452).epsilon(1e-4));
    }
    SUBCASE("single channel returns exactly zero") {
        Tensor f = oracle::random_tensor({1, 2, 2, 2}, rng);
        Tensor g = oracle::random_tensor({1, 2, 2, 2}, rng);
        CHECK(csc_loss(leaf(f, true), leaf(g, true))->scalar() == 0.0);
    }
    SUBCASE("random features match the scalar oracle") {
        for (int trial = 0; trial < 10; ++trial) {
            Tensor fa = oracle::random_tensor({2, 2, 2, 2}, rng);
            Tensor fb = oracle::random_tensor({2, 2, 2, 2}, rng);
            double got = csc_loss(leaf(fa, true), leaf(fb, true))->scalar();
            double want = oracle::csc_literal(tensor_values(fa), tensor_values(fb), 2);
            CHECK(got == doctest::Approx(want).epsilon(1e-6));
        }
    }
    SUBCASE("full denominator variant matches its oracle") {
        for (int trial = 0; trial < 10; ++trial) {
            Tensor fa = oracle::random_tensor({3, 2, 2, 2}, rng);
            Tensor fb = oracle::random_tensor({3, 2, 2, 2}, rng);
            double got = csc_loss(leaf(fa, true), leaf(fb, true),
                                  ContrastiveDenominator::full)->scalar();
            double want = oracle::csc_full(tensor_values(fa), tensor_values(fb), 3);
            CHECK(got == doctest::Approx(want).epsilon(1e-6));
        }
    }
    SUBCASE("channel-wise scale invariance") {
        Tensor fa = oracle::random_tensor({3, 2, 2, 2}, rng);
        Tensor fb = oracle::random_tensor({3, 2, 2, 2}, rng);
        double base = csc_loss(leaf(fa, true), leaf(fb, true))->scalar();
        for (double lambda : {0.25, 3.0, 117.0}) {
            Tensor scaled = fa;
            for (int64_t i = 0; i < scaled.numel(); ++i) scaled[i] *= lambda;
            CHECK(csc_loss(leaf(scaled, true), leaf(fb, true))->scalar() ==
                  doctest::Approx(base).epsilon(1e-9));
        }
    }
    SUBCASE("shape mismatch is rejected") {
        Tensor fa = oracle::random_tensor({2, 2, 2, 2}, rng);
        Tensor fb = oracle::random_tensor({2, 2, 2, 4}, rng);
        CHECK_THROWS_AS(csc_loss(leaf(fa, true), leaf(fb, true)), Error);
    }
}

TEST_CASE("cross_entropy_loss") {
    Rng rng(11);
    LabelMask mask = oracle::random_mask({4, 4, 4}, 3, rng);
    SUBCASE("huge-margin correct logits give ~0") {
        NodePtr loss = cross_entropy_loss(leaf(big_margin_logits(mask, 100.0), true), mask);
        CHECK(loss->scalar() < 1e-10);
    }
    SUBCASE("uniform logits give ln K") {
        Tensor logits({3, 4, 4, 4});
        NodePtr loss = cross_entropy_loss(leaf(logits, true), mask);
        CHECK(loss->scalar() == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    }
    SUBCASE("random logits match the scalar oracle") {
        for (int trial = 0; trial < 10; ++trial) {
            Tensor logits = oracle::random_tensor({3, 4, 4, 4}, rng);
            double got = cross_entropy_loss(leaf(logits, true), mask)->scalar();
            double want = oracle::cross_entropy(tensor_values(logits), mask_labels(mask), 3);
            CHECK(got == doctest::Approx(want).epsilon(1e-6));
        }
    }
    SUBCASE("shape mismatch is rejected") {
        Tensor logits({3, 4, 4, 2});
        CHECK_THROWS_AS(cross_entropy_loss(leaf(logits, true), mask), Error);
    }
}

TEST_CASE("soft_dice_loss") {
    Rng rng(13);
    LabelMask mask = oracle::random_mask({4, 4, 4}, 2, rng);
    SUBCASE("one-hot probs equal to the mask give near-zero loss") {
        NodePtr loss = soft_dice_loss(leaf(one_hot(mask), true), mask);
        CHECK(loss->scalar() < 1e-4);
    }
    SUBCASE("zero foreground probability gives loss ~ 1") {
        Tensor probs({2, 4, 4, 4});
        const int64_t s = mask.numel();
        for (int64_t i = 0; i < s; ++i) probs[i] = 1.0;  // all mass on background
        REQUIRE(mask.class_count(1) > 0);
        NodePtr loss = soft_dice_loss(leaf(probs, true), mask);
        CHECK(loss->scalar() == doctest::Approx(1.0).epsilon(1e-3));
    }
    SUBCASE("random probs match the scalar oracle") {
        for (int trial = 0; trial < 10; ++trial) {
            Tensor probs = oracle::random_simplex({2, 4, 4, 4}, rng);
            double got = soft_dice_loss(leaf(probs, true), mask)->scalar();
            double want = oracle::soft_dice(tensor_values(probs), mask_labels(mask), 2);
            CHECK(got == doctest::Approx(want).epsilon(1e-6));
        }
    }
}

TEST_CASE("supervised_loss modes") {
    Rng rng(17);
    LabelMask mask_a = oracle::random_mask({4, 4, 4}, 3, rng);
    LabelMask mask_b = oracle::random_mask({4, 4, 4}, 3, rng);
    SUBCASE("perfect predictions give near-zero loss in both modes") {
        Tensor la = big_margin_logits(mask_a, 100.0), lb = big_margin_logits(mask_b, 100.0);
        for (auto mode : {SupervisedMode::symmetric, SupervisedMode::literal}) {
            NodePtr loss =
                supervised_loss(leaf(la, true), mask_a, leaf(lb, true), mask_b, mode);
            CHECK(loss->scalar() < 1e-4);
        }
    }
    SUBCASE("literal mode reproduces CE(a) + Dice(b) exactly as printed") {
        Tensor la({3, 4, 4, 4});  // uniform logits
        Tensor lb = oracle::random_tensor({3, 4, 4, 4}, rng);
        double got = supervised_loss(leaf(la, true), mask_a, leaf(lb, true), mask_b,
                                     SupervisedMode::literal)->scalar();
        // Oracle: softmax then soft dice on modality b, ln 3 for modality a.
        Tensor probs_b = lb;
        const int64_t s = mask_b.numel();
        for (int64_t v = 0; v < s; ++v) {
            double denom = 0;
            for (int k = 0; k < 3; ++k) denom += std::exp(lb[k * s + v]);
            for (int k = 0; k < 3; ++k) probs_b[k * s + v] = std::exp(lb[k * s + v]) / denom;
        }
        double want = std::log(3.0) +
                      oracle::soft_dice(tensor_values(probs_b), mask_labels(mask_b), 3);
        CHECK(got == doctest::Approx(want).epsilon(1e-6));
    }
    SUBCASE("symmetric mode equals the mean of per-modality CE+Dice") {
        Tensor la = oracle::random_tensor({3, 4, 4, 4}, rng);
        Tensor lb = oracle::random_tensor({3, 4, 4, 4}, rng);
        double got = supervised_loss(leaf(la, true), mask_a, leaf(lb, true), mask_b,
                                     SupervisedMode::symmetric)->scalar();
        double ce_a = cross_entropy_loss(leaf(la, true), mask_a)->scalar();
        double ce_b = cross_entropy_loss(leaf(lb, true), mask_b)->scalar();
        double di_a = soft_dice_loss(softmax_channels(leaf(la, true)), mask_a)->scalar();
        double di_b = soft_dice_loss(softmax_channels(leaf(lb, true)), mask_b)->scalar();
        CHECK(got == doctest::Approx(0.5 * (ce_a + di_a + ce_b + di_b)).epsilon(1e-12));
    }
}

TEST_CASE("dice_similarity") {
    Rng rng(19);
    LabelMask mask = oracle::random_mask({4, 4, 4}, 2, rng);
    SUBCASE("identical one-hot maps give ~1") {
        Tensor p = one_hot(mask);
        CHECK(dice_similarity(leaf(p, true), leaf(p, true))->scalar() ==
              doctest::Approx(1.0).epsilon(1e-4));
    }
    SUBCASE("disjoint foregrounds give ~0") {
        LabelMask m1 = LabelMask::zeros({4, 4, 4}, 2);
        LabelMask m2 = LabelMask::zeros({4, 4, 4}, 2);
        m1.data[0] = 1;
        m2.data[1] = 1;
        CHECK(dice_similarity(leaf(one_hot(m1), true), leaf(one_hot(m2), true))->scalar() <
              1e-3);
    }
    SUBCASE("random pairs match the scalar oracle") {
        for (int trial = 0; trial < 10; ++trial) {
            Tensor p = oracle::random_simplex({2, 4, 4, 4}, rng);
            Tensor q = oracle::random_simplex({2, 4, 4, 4}, rng);
            double got = dice_similarity(leaf(p, true), leaf(q, true))->scalar();
            double want = oracle::dice_similarity(tensor_values(p), tensor_values(q), 2);
            CHECK(got == doctest::Approx(want).epsilon(1e-6));
        }
    }
}

TEST_CASE("cac_loss") {
    Rng rng(23);
    auto batch = [&](int m) {
        std::vector<NodePtr> nodes;
        for (int i = 0; i < m; ++i)
            nodes.push_back(leaf(oracle::random_simplex({2, 4, 4, 4}, rng), true));
        return nodes;
    };
    SUBCASE("identical batches of M=2 give 2 ln 2") {
        auto preds = batch(2);
        NodePtr loss = cac_loss(preds, preds);
        CHECK(loss->scalar() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));
        CHECK(loss->scalar() == doctest::Approx(1.3863).epsilon(1e-4));
    }
    SUBCASE("M=1 returns exactly zero") {
        auto a = batch(1);
        auto b = batch(1);
        CHECK(cac_loss(a, b)->scalar() == 0.0);
    }
    SUBCASE("random batch M=3 matches the scalar oracle") {
        auto a = batch(3);
        auto b = batch(3);
        std::vector<std::vector<double>> av, bv;
        for (const auto& n : a) av.push_back(tensor_values(n->value));
        for (const auto& n : b) bv.push_back(tensor_values(n->value));
        CHECK(cac_loss(a, b)->scalar() ==
              doctest::Approx(oracle::cac_literal(av, bv, 2)).epsilon(1e-6));
        CHECK(cac_loss(a, b, ContrastiveDenominator::full)->scalar() ==
              doctest::Approx(oracle::cac_full(av, bv, 2)).epsilon(1e-6));
    }
    SUBCASE("permuting both batches identically leaves the loss unchanged") {
        auto a = batch(4);
        auto b = batch(4);
        double base = cac_loss(a, b)->scalar();
        std::vector<NodePtr> ap{a[2], a[0], a[3], a[1]}, bp{b[2], b[0], b[3], b[1]};
        CHECK(cac_loss(ap, bp)->scalar() == doctest::Approx(base).epsilon(1e-12));
    }
    SUBCASE("batch length mismatch is rejected") {
        auto a = batch(2);
        auto b = batch(3);
        CHECK_THROWS_AS(cac_loss(a, b), Error);
    }
}

TEST_CASE("ramp_weights") {
    SUBCASE("endpoint and midpoint values") {
        auto [a0, b0] = ramp_weights(0, 100);
        CHECK(a0 == doctest::Approx(6.7379e-4).epsilon(1e-4));
        CHECK(b0 == doctest::Approx(0.1).epsilon(1e-12));
        auto [a1, b1] = ramp_weights(100, 100);
        CHECK(a1 == doctest::Approx(0.1).epsilon(1e-12));
        CHECK(b1 == doctest::Approx(6.7379e-4).epsilon(1e-4));
        auto [ah, bh] = ramp_weights(50, 100);
        CHECK(ah == doctest::Approx(8.2085e-3).epsilon(1e-4));
        CHECK(bh == doctest::Approx(8.2085e-3).epsilon(1e-4));
        CHECK(ah == bh);
    }
    SUBCASE("alpha(t) == beta(t_max - t) bitwise") {
        for (int t = 0; t <= 37; ++t) {
            auto [alpha, beta] = ramp_weights(t, 37);
            auto [alpha_m, beta_m] = ramp_weights(37 - t, 37);
            CHECK(alpha == beta_m);
            CHECK(beta == alpha_m);
        }
    }
    SUBCASE("monotonicity and range") {
        double prev_a = 0.0, prev_b = 1.0;
        for (int t = 0; t <= 20; ++t) {
            auto [alpha, beta] = ramp_weights(t, 20);
            CHECK(alpha > 0.0);
            CHECK(alpha <= 0.1);
            CHECK(beta > 0.0);
            CHECK(beta <= 0.1);
            CHECK(alpha >= prev_a);
            CHECK(beta <= prev_b);
            prev_a = alpha;
            prev_b = beta;
        }
    }
    SUBCASE("t outside [0, t_max] is rejected") {
        CHECK_THROWS_AS(ramp_weights(-1, 10), Error);
        CHECK_THROWS_AS(ramp_weights(11, 10), Error);
        CHECK_THROWS_AS(ramp_weights(0, 0), Error);
    }
}

TEST_CASE("total_loss") {
    SUBCASE("pure supervised total") {
        for (int t : {0, 3, 10}) CHECK(total_loss(1.0, 0.0, 0.0, t, 10).total == 1.0);
    }
    SUBCASE("consistency terms at t = t_max") {
        LossBreakdown b = total_loss(0.0, 1.0, 1.0, 10, 10);
        CHECK(b.total == doctest::Approx(0.1 + 0.1 * std::exp(-5.0)).epsilon(1e-9));
        CHECK(b.total == doctest::Approx(0.10067).epsilon(1e-3));
    }
    SUBCASE("mixed components at the midpoint") {
        LossBreakdown b = total_loss(2.0, 3.0, 5.0, 5, 10);
        CHECK(b.total == doctest::Approx(2.0 + 8.2085e-3 * 8.0).epsilon(1e-4));
        CHECK(b.total == doctest::Approx(2.06567).epsilon(1e-4));
    }
    SUBCASE("decomposition identity holds over random inputs") {
        Rng rng(29);
        for (int i = 0; i < 200; ++i) {
            double sup = rng.normal(0, 2), csc = rng.normal(0, 2), cac = rng.normal(0, 2);
            int tmax = 1 + static_cast<int>(rng.uniform_int(0, 40));
            int t = static_cast<int>(rng.uniform_int(0, tmax));
            LossBreakdown b = total_loss(sup, csc, cac, t, tmax);
            CHECK(std::fabs(b.total - (b.sup + b.alpha * b.csc + b.beta * b.cac)) < 1e-6);
        }
    }
    SUBCASE("non-finite components are rejected") {
        CHECK_THROWS_AS(total_loss(std::nan(""), 0, 0, 1, 10), Error);
        CHECK_THROWS_AS(total_loss(0, HUGE_VAL, 0, 1, 10), Error);
    }
}

TEST_CASE("gradients of all five losses match finite differences") {
    Rng rng(31);
    double worst = 0.0;
    SUBCASE("csc_loss literal and full") {
        for (auto denom : {ContrastiveDenominator::literal, ContrastiveDenominator::full}) {
            auto res = oracle::finite_diff_check(
                {oracle::random_tensor({2, 2, 2, 2}, rng), oracle::random_tensor({2, 2, 2, 2}, rng)},
                [denom](const std::vector<NodePtr>& xs) {
                    return csc_loss(xs[0], xs[1], denom);
                });
            CHECK(res.max_rel_err < 1e-3);
        }
    }
    SUBCASE("cross_entropy_loss") {
        LabelMask mask = oracle::random_mask({2, 2, 2}, 3, rng);
        auto res = oracle::finite_diff_check({oracle::random_tensor({3, 2, 2, 2}, rng)},
                                             [&mask](const std::vector<NodePtr>& xs) {
                                                 return cross_entropy_loss(xs[0], mask);
                                             });
        CHECK(res.max_rel_err < 1e-3);
    }
    SUBCASE("soft_dice_loss through softmax") {
        LabelMask mask = oracle::random_mask({2, 2, 2}, 2, rng);
        auto res = oracle::finite_diff_check({oracle::random_tensor({2, 2, 2, 2}, rng)},
                                             [&mask](const std::vector<NodePtr>& xs) {
                                                 return soft_dice_loss(softmax_channels(xs[0]),
                                                                       mask);
                                             });
        CHECK(res.max_rel_err < 1e-3);
    }
    SUBCASE("dice_similarity in both arguments") {
        auto res = oracle::finite_diff_check(
            {oracle::random_simplex({2, 2, 2, 2}, rng), oracle::random_simplex({2, 2, 2, 2}, rng)},
            [](const std::vector<NodePtr>& xs) { return dice_similarity(xs[0], xs[1]); });
        CHECK(res.max_rel_err < 1e-3);
    }
    SUBCASE("cac_loss over a batch") {
        for (auto denom : {ContrastiveDenominator::literal, ContrastiveDenominator::full}) {
            auto res = oracle::finite_diff_check(
                {oracle::random_simplex({2, 2, 2, 1}, rng),
                 oracle::random_simplex({2, 2, 2, 1}, rng),
                 oracle::random_simplex({2, 2, 2, 1}, rng),
                 oracle::random_simplex({2, 2, 2, 1}, rng)},
                [denom](const std::vector<NodePtr>& xs) {
                    return cac_loss({xs[0], xs[1]}, {xs[2], xs[3]}, denom);
                });
            CHECK(res.max_rel_err < 1e-3);
        }
    }
    (void)worst;
}

}  // TEST_SUITE
