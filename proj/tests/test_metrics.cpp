#include <doctest.h>

#include "metrics.hpp"
#include "oracles.hpp"

using namespace comodal;

TEST_SUITE("metrics") {

TEST_CASE("dice_score") {
    SUBCASE("identical nonempty masks give 1") {
        Rng rng(3);
        LabelMask m = oracle::random_mask({6, 6, 6}, 3, rng);
        CHECK(dice_score(m, m, 1) == 1.0);
        CHECK(dice_score(m, m, 2) == 1.0);
    }
    SUBCASE("|P|=|G|=4 with overlap 2 gives 0.5") {
        LabelMask p = LabelMask::zeros({4, 4, 4}, 2);
        LabelMask g = LabelMask::zeros({4, 4, 4}, 2);
        for (int i = 0; i < 4; ++i) p.data[static_cast<size_t>(i)] = 1;       // voxels 0..3
        for (int i = 2; i < 6; ++i) g.data[static_cast<size_t>(i)] = 1;      // voxels 2..5
        CHECK(dice_score(p, g, 1) == doctest::Approx(0.5));
    }
    SUBCASE("both empty gives 1 by convention") {
        LabelMask p = LabelMask::zeros({4, 4, 4}, 3);
        LabelMask g = LabelMask::zeros({4, 4, 4}, 3);
        CHECK(dice_score(p, g, 2) == 1.0);
    }
    SUBCASE("symmetry and range") {
        Rng rng(5);
        for (int trial = 0; trial < 20; ++trial) {
            LabelMask p = oracle::random_mask({5, 5, 5}, 3, rng);
            LabelMask g = oracle::random_mask({5, 5, 5}, 3, rng);
            for (int k = 1; k < 3; ++k) {
                double d = dice_score(p, g, k);
                CHECK(d == dice_score(g, p, k));
                CHECK(d >= 0.0);
                CHECK(d <= 1.0);
            }
        }
    }
    SUBCASE("shape mismatch and bad class are rejected") {
        LabelMask p = LabelMask::zeros({4, 4, 4}, 2);
        LabelMask g = LabelMask::zeros({4, 4, 2}, 2);
        CHECK_THROWS_AS(dice_score(p, g, 1), Error);
        CHECK_THROWS_AS(dice_score(p, p, 0), Error);
        CHECK_THROWS_AS(dice_score(p, p, 2), Error);
    }
}

TEST_CASE("extract_surface") {
    SUBCASE("single voxel is its own surface") {
        LabelMask m = LabelMask::zeros({5, 5, 5}, 2);
        m.at(2, 2, 2) = 1;
        auto s = extract_surface(m, 1);
        REQUIRE(s.size() == 1);
        CHECK(s[0] == std::array<int, 3>{2, 2, 2});
    }
    SUBCASE("solid 3x3x3 cube has 26 surface voxels") {
        LabelMask m = LabelMask::zeros({7, 7, 7}, 2);
        for (int d = 2; d <= 4; ++d)
            for (int h = 2; h <= 4; ++h)
                for (int w = 2; w <= 4; ++w) m.at(d, h, w) = 1;
        CHECK(extract_surface(m, 1).size() == 26);
    }
    SUBCASE("empty class gives an empty surface") {
        LabelMask m = LabelMask::zeros({4, 4, 4}, 2);
        CHECK(extract_surface(m, 1).empty());
    }
    SUBCASE("volume-border voxels count as surface") {
        LabelMask m = LabelMask::zeros({3, 3, 3}, 2);
        for (auto& v : m.data) v = 1;  // class fills the grid; all faces touch the border
        CHECK(extract_surface(m, 1).size() == 26);  // all but the centre voxel
    }
}

TEST_CASE("assd") {
    SUBCASE("identical masks give exactly zero") {
        Rng rng(7);
        LabelMask m = oracle::random_mask({6, 6, 6}, 2, rng);
        AssdResult r = assd(m, m, 1, {1, 1, 1});
        REQUIRE(r.defined());
        CHECK(r.mm == 0.0);
    }
    SUBCASE("two single voxels three apart give 3 mm") {
        LabelMask p = LabelMask::zeros({8, 8, 8}, 2);
        LabelMask g = LabelMask::zeros({8, 8, 8}, 2);
        p.at(2, 4, 4) = 1;
        g.at(5, 4, 4) = 1;
        AssdResult r = assd(p, g, 1, {1, 1, 1});
        REQUIRE(r.defined());
        CHECK(r.mm == doctest::Approx(3.0).epsilon(1e-12));
    }
    SUBCASE("random 8^3 masks match the exhaustive all-pairs oracle") {
        Rng rng(11);
        for (int trial = 0; trial < 25; ++trial) {
            LabelMask p = oracle::random_mask({8, 8, 8}, 2, rng);
            LabelMask g = oracle::random_mask({8, 8, 8}, 2, rng);
            std::array<double, 3> sp{0.7, 1.3, 2.1};
            AssdResult r = assd(p, g, 1, sp);
            double want = oracle::assd_all_pairs(p, g, 1, sp);
            REQUIRE(r.defined());
            CHECK(std::fabs(r.mm - want) < 1e-9);
            // symmetry
            AssdResult rr = assd(g, p, 1, sp);
            CHECK(rr.mm == doctest::Approx(r.mm).epsilon(1e-15));
        }
    }
    SUBCASE("doubling the spacing doubles the distance exactly") {
        Rng rng(13);
        LabelMask p = oracle::random_mask({8, 8, 8}, 2, rng);
        LabelMask g = oracle::random_mask({8, 8, 8}, 2, rng);
        AssdResult r1 = assd(p, g, 1, {1, 1, 1});
        AssdResult r2 = assd(p, g, 1, {2, 2, 2});
        REQUIRE(r1.defined());
        REQUIRE(r2.defined());
        CHECK(r2.mm == 2.0 * r1.mm);
    }
    SUBCASE("empty-class handling") {
        LabelMask p = LabelMask::zeros({4, 4, 4}, 2);
        LabelMask g = LabelMask::zeros({4, 4, 4}, 2);
        CHECK(assd(p, g, 1, {1, 1, 1}).status == AssdStatus::both_empty);
        g.at(1, 1, 1) = 1;
        CHECK(assd(p, g, 1, {1, 1, 1}).status == AssdStatus::missing_structure);
        // configurable penalty fallback
        AssdResult r = assd(p, g, 1, {1, 1, 1}, 25.0);
        REQUIRE(r.defined());
        CHECK(r.mm == 25.0);
    }
}

TEST_CASE("evaluate_logits and evaluate_sample") {
    Rng rng(17);
    LabelMask gt = oracle::random_mask({6, 6, 6}, 3, rng);
    Tensor logits({3, 6, 6, 6});
    const int64_t s = gt.numel();
    for (int64_t i = 0; i < s; ++i) logits[gt.data[static_cast<size_t>(i)] * s + i] = 50.0;

    SUBCASE("one-hot logits equal to ground truth give Dice 1 and ASSD 0") {
        EvalRecord rec = evaluate_logits(logits, gt, {1, 1, 1}, "x", Modality::A);
        REQUIRE(rec.per_class_dice.size() == 2);  // K=3 -> two foreground entries
        for (double d : rec.per_class_dice) CHECK(d == 1.0);
        for (const auto& a : rec.per_class_assd) {
            REQUIRE(a.defined());
            CHECK(a.mm == 0.0);
        }
        CHECK(rec.mean_dice == 1.0);
        CHECK(rec.mean_assd_mm == 0.0);
    }
    SUBCASE("record means agree with independent recomputation") {
        Tensor noisy = oracle::random_tensor({3, 6, 6, 6}, rng);
        EvalRecord rec = evaluate_logits(noisy, gt, {1, 1, 1}, "x", Modality::B);
        double dice_sum = 0;
        for (double d : rec.per_class_dice) dice_sum += d;
        CHECK(rec.mean_dice == doctest::Approx(dice_sum / 2.0).epsilon(1e-12));
        double assd_sum = 0;
        int n = 0;
        for (const auto& a : rec.per_class_assd)
            if (a.defined()) {
                assd_sum += a.mm;
                ++n;
            }
        if (n > 0) CHECK(rec.mean_assd_mm == doctest::Approx(assd_sum / n).epsilon(1e-12));
    }
    SUBCASE("unlabeled samples are rejected") {
        BimodalSample sample;
        sample.id = "u";
        sample.vol_a = Volume::zeros({6, 6, 6});
        sample.vol_b = Volume::zeros({6, 6, 6});
        CHECK_THROWS_AS(evaluate_sample(logits, logits, sample), Error);
    }
}

}  // TEST_SUITE
