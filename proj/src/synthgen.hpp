#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "dataset.hpp"
#include "volume.hpp"

namespace comodal {

// Anatomy layout of a synthetic phantom: axis-aligned ellipsoids per class
// rasterized into a label grid, later classes overwriting earlier ones.
struct PhantomSpec {
    std::array<int, 3> grid_shape{32, 32, 32};
    int num_classes{3};  // background + num_classes-1 structures
    int organs_per_class{2};
    std::array<double, 2> size_range{4.0, 9.0};  // ellipsoid semi-axes in voxels
    uint64_t seed{0};

    void validate() const;
};

// How one modality renders the shared anatomy: per-class mean intensities,
// gamma contrast, multiplicative low-order bias field and additive Gaussian
// noise.
struct ModalityAppearance {
    std::vector<double> class_intensity;  // length K
    double noise_sigma{0.0};
    double bias_field_amplitude{0.0};
    double contrast_gamma{1.0};

    void validate(int num_classes) const;
};

struct MisalignmentSpec {
    double max_rotation_deg{0.0};
    double max_translation_vox{0.0};
    bool enabled{false};

    void validate() const;
};

// Voxel-center membership test against an axis-aligned ellipsoid; voxels
// inside are set to cls.
void rasterize_ellipsoid(LabelMask& mask, const std::array<double, 3>& center,
                         const std::array<double, 3>& semi_axes, int cls);

// Deterministic for a fixed seed. Guarantees every class in [1, K-1] keeps at
// least one voxel after overwrites, retrying placement a bounded number of
// times before failing with the class named.
LabelMask make_anatomy(const PhantomSpec& spec);

// intensity(v) = gamma(class_intensity[mask(v)]) * bias(v) + noise(v).
// With sigma = 0, amplitude = 0 and gamma = 1 the output is exactly
// piecewise-constant at the class intensities.
Volume render_modality(const LabelMask& mask, const ModalityAppearance& appearance, uint64_t seed,
                       Modality tag = Modality::A);

struct RigidResample {
    Volume vol;
    LabelMask mask;
    std::array<double, 16> affine;  // maps input voxel coords to output coords
};

// Resamples vol (trilinear) and mask (nearest) under one rigid transform
// about the grid centre; out-of-range samples read as background/zero.
RigidResample resample_rigid(const Volume& vol, const LabelMask& mask,
                             const std::array<double, 16>& affine);

// Samples a rigid transform within the spec bounds and applies it. A disabled
// spec returns the inputs unchanged with an identity affine.
RigidResample apply_misalignment(const Volume& vol, const LabelMask& mask,
                                 const MisalignmentSpec& spec, uint64_t seed);

std::array<double, 16> identity_affine();

// Paired mode renders both modalities from one anatomy per sample; unpaired
// mode draws an independent anatomy for modality b. Misalignment, when
// enabled, is applied to modality b only. Sample ids are "s000", "s001", ...
std::vector<BimodalSample> generate_dataset(const PhantomSpec& spec, const ModalityAppearance& app_a,
                                            const ModalityAppearance& app_b,
                                            const MisalignmentSpec& mis, bool paired, int n_samples,
                                            uint64_t seed);

}  // namespace comodal
