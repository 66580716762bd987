#include <doctest.h>

#include <map>

#include "oracles.hpp"
#include "synthgen.hpp"

using namespace comodal;

namespace {

PhantomSpec small_spec(uint64_t seed = 1) {
    PhantomSpec spec;
    spec.grid_shape = {32, 32, 32};
    spec.num_classes = 3;
    spec.organs_per_class = 2;
    spec.size_range = {3.0, 6.0};
    spec.seed = seed;
    return spec;
}

ModalityAppearance clean_appearance(std::vector<double> intensities) {
    ModalityAppearance a;
    a.class_intensity = std::move(intensities);
    a.noise_sigma = 0.0;
    a.bias_field_amplitude = 0.0;
    a.contrast_gamma = 1.0;
    return a;
}

}  // namespace

TEST_SUITE("synthgen") {

TEST_CASE("rasterized ellipsoid matches brute-force voxel enumeration") {
    LabelMask mask = LabelMask::zeros({32, 32, 32}, 2);
    std::array<double, 3> center{16, 16, 16}, semi{4, 4, 4};
    rasterize_ellipsoid(mask, center, semi, 1);
    int64_t expected = oracle::ellipsoid_voxel_count({32, 32, 32}, center, semi);
    CHECK(mask.class_count(1) == expected);
    CHECK(expected > 0);

    // Off-centre, anisotropic case against the same oracle.
    LabelMask mask2 = LabelMask::zeros({20, 24, 28}, 2);
    std::array<double, 3> c2{7.5, 12.25, 20.0}, s2{3.0, 5.5, 4.25};
    rasterize_ellipsoid(mask2, c2, s2, 1);
    CHECK(mask2.class_count(1) == oracle::ellipsoid_voxel_count({20, 24, 28}, c2, s2));
}

TEST_CASE("make_anatomy is deterministic and covers every class") {
    PhantomSpec spec = small_spec(77);
    LabelMask m1 = make_anatomy(spec);
    LabelMask m2 = make_anatomy(spec);
    CHECK(m1.data == m2.data);
    for (int k = 1; k < spec.num_classes; ++k) CHECK(m1.class_count(k) >= 1);

    PhantomSpec other = spec;
    other.seed = 78;
    CHECK(make_anatomy(other).data != m1.data);
}

TEST_CASE("oversized ellipsoids are rejected") {
    PhantomSpec spec = small_spec();
    spec.size_range = {20.0, 25.0};  // cannot fit a 32-grid half-extent
    CHECK_THROWS_AS(make_anatomy(spec), Error);
}

TEST_CASE("degenerate rendering is piecewise-constant at class intensities") {
    PhantomSpec spec = small_spec(3);
    spec.num_classes = 2;
    LabelMask mask = make_anatomy(spec);
    Volume vol = render_modality(mask, clean_appearance({0.0, 1.0}), 5);
    for (int64_t i = 0; i < mask.numel(); ++i)
        CHECK(vol.data[static_cast<size_t>(i)] ==
              (mask.data[static_cast<size_t>(i)] == 1 ? 1.0f : 0.0f));
}

TEST_CASE("per-class mean intensity follows each appearance table") {
    PhantomSpec spec = small_spec(9);
    LabelMask mask = make_anatomy(spec);
    ModalityAppearance app_a = clean_appearance({0.1, 0.5, 0.9});
    app_a.noise_sigma = 0.05;
    ModalityAppearance app_b = clean_appearance({0.9, 0.2, 0.6});
    app_b.noise_sigma = 0.05;
    Volume va = render_modality(mask, app_a, 100);
    Volume vb = render_modality(mask, app_b, 200);

    for (int k = 0; k < 3; ++k) {
        double sum_a = 0, sum_b = 0;
        int64_t n = 0;
        for (int64_t i = 0; i < mask.numel(); ++i) {
            if (mask.data[static_cast<size_t>(i)] != k) continue;
            sum_a += va.data[static_cast<size_t>(i)];
            sum_b += vb.data[static_cast<size_t>(i)];
            ++n;
        }
        REQUIRE(n > 0);
        // Noise sigma 0.05 over >= hundreds of voxels: means land well within 0.05.
        CHECK(std::fabs(sum_a / n - app_a.class_intensity[static_cast<size_t>(k)]) < 0.05);
        CHECK(std::fabs(sum_b / n - app_b.class_intensity[static_cast<size_t>(k)]) < 0.05);
    }
}

TEST_CASE("rendering is deterministic per seed") {
    PhantomSpec spec = small_spec(4);
    LabelMask mask = make_anatomy(spec);
    ModalityAppearance app = clean_appearance({0.0, 0.5, 1.0});
    app.noise_sigma = 0.2;
    app.bias_field_amplitude = 0.3;
    Volume v1 = render_modality(mask, app, 31);
    Volume v2 = render_modality(mask, app, 31);
    CHECK(v1.data == v2.data);
    CHECK(render_modality(mask, app, 32).data != v1.data);
}

TEST_CASE("zero-corruption rendering identifies the class at every voxel") {
    PhantomSpec spec = small_spec(6);
    LabelMask mask = make_anatomy(spec);
    ModalityAppearance app = clean_appearance({0.0, 0.4, 1.0});  // injective table
    Volume vol = render_modality(mask, app, 1);
    std::map<float, int> inverse;
    for (int k = 0; k < 3; ++k)
        inverse[static_cast<float>(app.class_intensity[static_cast<size_t>(k)])] = k;
    for (int64_t i = 0; i < mask.numel(); ++i)
        CHECK(inverse.at(vol.data[static_cast<size_t>(i)]) == mask.data[static_cast<size_t>(i)]);
}

TEST_CASE("disabled misalignment is the identity") {
    PhantomSpec spec = small_spec(8);
    LabelMask mask = make_anatomy(spec);
    Volume vol = render_modality(mask, clean_appearance({0.0, 0.5, 1.0}), 2);
    MisalignmentSpec mis;
    mis.enabled = false;
    RigidResample out = apply_misalignment(vol, mask, mis, 9);
    CHECK(out.vol.data == vol.data);
    CHECK(out.mask.data == mask.data);
    CHECK(out.affine == identity_affine());
}

TEST_CASE("integer translation shifts the mask exactly (interior)") {
    PhantomSpec spec = small_spec(12);
    LabelMask mask = make_anatomy(spec);
    Volume vol = render_modality(mask, clean_appearance({0.0, 0.5, 1.0}), 2);
    std::array<double, 16> affine = identity_affine();
    affine[3] = 2.0;   // +2 voxels along d
    affine[7] = -1.0;  // -1 voxel along h
    RigidResample out = resample_rigid(vol, mask, affine);
    for (int d = 0; d < 32; ++d)
        for (int h = 0; h < 32; ++h)
            for (int w = 0; w < 32; ++w) {
                int sd = d - 2, sh = h + 1;
                if (sd < 0 || sd >= 32 || sh < 0 || sh >= 32) continue;
                CHECK(out.mask.at(d, h, w) == mask.at(sd, sh, w));
            }
}

TEST_CASE("sampled rigid transform matches the brute-force resampler") {
    PhantomSpec spec = small_spec(21);
    LabelMask mask = make_anatomy(spec);
    Volume vol = render_modality(mask, clean_appearance({0.0, 0.5, 1.0}), 2);
    MisalignmentSpec mis;
    mis.enabled = true;
    mis.max_rotation_deg = 10.0;
    mis.max_translation_vox = 3.0;
    RigidResample out = apply_misalignment(vol, mask, mis, 5);

    CHECK(out.vol.shape == vol.shape);
    CHECK(out.vol.spacing == vol.spacing);
    CHECK(out.affine != identity_affine());

    LabelMask expected = oracle::nn_resample(mask, out.affine);
    CHECK(out.mask.data == expected.data);

    // Per-class voxel counts survive the resampling within tolerance.
    for (int k = 1; k < spec.num_classes; ++k) {
        double before = static_cast<double>(mask.class_count(k));
        double after = static_cast<double>(out.mask.class_count(k));
        CHECK(std::fabs(after - before) / before < 0.15);
    }
}

TEST_CASE("generate_dataset paired/unpaired semantics") {
    PhantomSpec spec = small_spec(0);
    ModalityAppearance app_a = clean_appearance({0.0, 0.5, 1.0});
    ModalityAppearance app_b = clean_appearance({1.0, 0.3, 0.7});
    MisalignmentSpec mis;

    SUBCASE("paired without misalignment shares the anatomy") {
        auto samples = generate_dataset(spec, app_a, app_b, mis, true, 4, 11);
        for (const auto& s : samples) {
            CHECK(s.paired);
            CHECK(s.mask_a->data == s.mask_b->data);
            CHECK(!s.misalignment.has_value());
        }
    }
    SUBCASE("unpaired anatomy differs for at least one sample") {
        auto samples = generate_dataset(spec, app_a, app_b, mis, false, 4, 11);
        bool any_differ = false;
        for (const auto& s : samples) any_differ |= s.mask_a->data != s.mask_b->data;
        CHECK(any_differ);
    }
    SUBCASE("ids and reproducibility") {
        auto s1 = generate_dataset(spec, app_a, app_b, mis, true, 40, 19);
        auto s2 = generate_dataset(spec, app_a, app_b, mis, true, 40, 19);
        REQUIRE(s1.size() == 40);
        CHECK(s1.front().id == "s000");
        CHECK(s1.back().id == "s039");
        for (size_t i = 0; i < s1.size(); ++i) {
            CHECK(s1[i].vol_a.data == s2[i].vol_a.data);
            CHECK(s1[i].vol_b.data == s2[i].vol_b.data);
        }
    }
    SUBCASE("misalignment applies to modality b only") {
        mis.enabled = true;
        mis.max_rotation_deg = 10.0;
        mis.max_translation_vox = 3.0;
        auto plain = generate_dataset(spec, app_a, app_b, mis, true, 2, 23);
        MisalignmentSpec off;
        auto reference = generate_dataset(spec, app_a, app_b, off, true, 2, 23);
        for (size_t i = 0; i < plain.size(); ++i) {
            CHECK(plain[i].vol_a.data == reference[i].vol_a.data);
            CHECK(plain[i].vol_b.data != reference[i].vol_b.data);
            CHECK(plain[i].misalignment.has_value());
        }
    }
}

}  // TEST_SUITE
