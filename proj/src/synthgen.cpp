#include "synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "rng.hpp"

namespace comodal {

namespace {
constexpr int kPlacementAttempts = 64;
constexpr double kDegToRad = M_PI / 180.0;
}  // namespace

void PhantomSpec::validate() const {
    for (int i = 0; i < 3; ++i)
        require(grid_shape[i] >= 2, ErrorCode::invalid_argument,
                "phantom grid dimension must be >= 2");
    require(num_classes >= 2, ErrorCode::invalid_argument,
            "phantom needs background plus at least one structure class");
    require(organs_per_class >= 1, ErrorCode::invalid_argument, "organs_per_class must be >= 1");
    require(size_range[0] > 0.0 && size_range[1] >= size_range[0], ErrorCode::invalid_argument,
            "size_range must satisfy 0 < min <= max");
    int min_dim = std::min({grid_shape[0], grid_shape[1], grid_shape[2]});
    require(size_range[0] <= (min_dim - 1) / 2.0, ErrorCode::invalid_argument,
            "minimum ellipsoid semi-axis does not fit inside the grid");
}

void ModalityAppearance::validate(int num_classes) const {
    require(static_cast<int>(class_intensity.size()) == num_classes, ErrorCode::invalid_argument,
            "class_intensity length must equal num_classes");
    require(noise_sigma >= 0.0, ErrorCode::invalid_argument, "noise_sigma must be >= 0");
    require(bias_field_amplitude >= 0.0, ErrorCode::invalid_argument,
            "bias_field_amplitude must be >= 0");
    require(contrast_gamma > 0.0, ErrorCode::invalid_argument, "contrast_gamma must be > 0");
}

void MisalignmentSpec::validate() const {
    require(max_rotation_deg >= 0.0 && max_translation_vox >= 0.0, ErrorCode::invalid_argument,
            "misalignment magnitudes must be >= 0");
}

void rasterize_ellipsoid(LabelMask& mask, const std::array<double, 3>& center,
                         const std::array<double, 3>& semi_axes, int cls) {
    require(cls >= 0 && cls < mask.num_classes, ErrorCode::invalid_argument,
            "ellipsoid class id outside [0, K-1]");
    for (int i = 0; i < 3; ++i)
        require(semi_axes[i] > 0.0, ErrorCode::invalid_argument, "ellipsoid semi-axes must be > 0");
    int d_lo = std::max(0, static_cast<int>(std::floor(center[0] - semi_axes[0])));
    int d_hi = std::min(mask.shape[0] - 1, static_cast<int>(std::ceil(center[0] + semi_axes[0])));
    int h_lo = std::max(0, static_cast<int>(std::floor(center[1] - semi_axes[1])));
    int h_hi = std::min(mask.shape[1] - 1, static_cast<int>(std::ceil(center[1] + semi_axes[1])));
    int w_lo = std::max(0, static_cast<int>(std::floor(center[2] - semi_axes[2])));
    int w_hi = std::min(mask.shape[2] - 1, static_cast<int>(std::ceil(center[2] + semi_axes[2])));
    for (int d = d_lo; d <= d_hi; ++d)
        for (int h = h_lo; h <= h_hi; ++h)
            for (int w = w_lo; w <= w_hi; ++w) {
                double dd = (d - center[0]) / semi_axes[0];
                double dh = (h - center[1]) / semi_axes[1];
                double dw = (w - center[2]) / semi_axes[2];
                if (dd * dd + dh * dh + dw * dw <= 1.0)
                    mask.at(d, h, w) = static_cast<int16_t>(cls);
            }
}

LabelMask make_anatomy(const PhantomSpec& spec) {
    spec.validate();
    Rng rng(Rng::mix(spec.seed, 0xA11A));
    int starved_class = 0;
    for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
        LabelMask mask = LabelMask::zeros(spec.grid_shape, spec.num_classes);
        // Classes drawn in increasing order; overlaps resolve last-writer-wins.
        for (int cls = 1; cls < spec.num_classes; ++cls) {
            for (int organ = 0; organ < spec.organs_per_class; ++organ) {
                std::array<double, 3> semi, center;
                for (int i = 0; i < 3; ++i) {
                    double max_fit = (spec.grid_shape[i] - 1) / 2.0;
                    double hi = std::min(spec.size_range[1], max_fit);
                    require(spec.size_range[0] <= hi, ErrorCode::invalid_argument,
                            "ellipsoid for class " + std::to_string(cls) +
                                " cannot fit inside the grid along axis " + std::to_string(i));
                    semi[i] = rng.uniform(spec.size_range[0], hi);
                    center[i] = rng.uniform(semi[i], spec.grid_shape[i] - 1 - semi[i]);
                }
                rasterize_ellipsoid(mask, center, semi, cls);
            }
        }
        starved_class = 0;
        for (int cls = 1; cls < spec.num_classes && starved_class == 0; ++cls)
            if (mask.class_count(cls) < 1) starved_class = cls;
        if (starved_class == 0) return mask;
    }
    // Only reachable when later classes keep burying an earlier one.
    fail(ErrorCode::runtime, "anatomy placement failed for class " +
                                 std::to_string(starved_class) + " after " +
                                 std::to_string(kPlacementAttempts) + " attempts");
}

Volume render_modality(const LabelMask& mask, const ModalityAppearance& appearance, uint64_t seed,
                       Modality tag) {
    mask.validate();
    appearance.validate(mask.num_classes);

    std::vector<double> levels(appearance.class_intensity.size());
    for (size_t k = 0; k < levels.size(); ++k) {
        double base = std::max(0.0, appearance.class_intensity[k]);
        levels[k] = appearance.contrast_gamma == 1.0
                        ? appearance.class_intensity[k]
                        : std::pow(base, appearance.contrast_gamma);
    }

    Volume out = Volume::zeros(mask.shape, {1.0, 1.0, 1.0}, tag);

    // Low-order polynomial bias field in [-amp, amp], multiplied as 1 + p.
    std::array<double, 9> coeff{};
    bool with_bias = appearance.bias_field_amplitude > 0.0;
    if (with_bias) {
        Rng bias_rng(Rng::mix(seed, 0xB1A5));
        double max_abs = 0.0;
        for (auto& c : coeff) c = bias_rng.uniform(-1.0, 1.0);
        for (int d = 0; d < mask.shape[0]; ++d)
            for (int h = 0; h < mask.shape[1]; ++h)
                for (int w = 0; w < mask.shape[2]; ++w) {
                    double u = mask.shape[0] > 1 ? 2.0 * d / (mask.shape[0] - 1) - 1.0 : 0.0;
                    double v = mask.shape[1] > 1 ? 2.0 * h / (mask.shape[1] - 1) - 1.0 : 0.0;
                    double x = mask.shape[2] > 1 ? 2.0 * w / (mask.shape[2] - 1) - 1.0 : 0.0;
                    double p = coeff[0] * u + coeff[1] * v + coeff[2] * x + coeff[3] * u * v +
                               coeff[4] * u * x + coeff[5] * v * x + coeff[6] * u * u +
                               coeff[7] * v * v + coeff[8] * x * x;
                    max_abs = std::max(max_abs, std::fabs(p));
                }
        if (max_abs > 0.0) {
            double scale = appearance.bias_field_amplitude / max_abs;
            for (auto& c : coeff) c *= scale;
        }
    }

    Rng noise_rng(Rng::mix(seed, 0x9015E));
    bool with_noise = appearance.noise_sigma > 0.0;
    int64_t idx = 0;
    for (int d = 0; d < mask.shape[0]; ++d)
        for (int h = 0; h < mask.shape[1]; ++h)
            for (int w = 0; w < mask.shape[2]; ++w, ++idx) {
                double value = levels[mask.data[idx]];
                if (with_bias) {
                    double u = mask.shape[0] > 1 ? 2.0 * d / (mask.shape[0] - 1) - 1.0 : 0.0;
                    double v = mask.shape[1] > 1 ? 2.0 * h / (mask.shape[1] - 1) - 1.0 : 0.0;
                    double x = mask.shape[2] > 1 ? 2.0 * w / (mask.shape[2] - 1) - 1.0 : 0.0;
                    double p = coeff[0] * u + coeff[1] * v + coeff[2] * x + coeff[3] * u * v +
                               coeff[4] * u * x + coeff[5] * v * x + coeff[6] * u * u +
                               coeff[7] * v * v + coeff[8] * x * x;
                    value *= 1.0 + p;
                }
                if (with_noise) value += noise_rng.normal(0.0, appearance.noise_sigma);
                out.data[idx] = static_cast<float>(value);
            }
    return out;
}

std::array<double, 16> identity_affine() {
    std::array<double, 16> m{};
    m[0] = m[5] = m[10] = m[15] = 1.0;
    return m;
}

namespace {

// Rigid inverse: A = [R | t] about origin => Ainv = [R^T | -R^T t].
std::array<double, 16> invert_rigid(const std::array<double, 16>& a) {
    std::array<double, 16> inv{};
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) inv[r * 4 + c] = a[c * 4 + r];
    for (int r = 0; r < 3; ++r) {
        double t = 0.0;
        for (int c = 0; c < 3; ++c) t += inv[r * 4 + c] * a[c * 4 + 3];
        inv[r * 4 + 3] = -t;
    }
    inv[15] = 1.0;
    return inv;
}

std::array<double, 3> apply_affine(const std::array<double, 16>& m,
                                   const std::array<double, 3>& p) {
    std::array<double, 3> q{};
    for (int r = 0; r < 3; ++r)
        q[r] = m[r * 4 + 0] * p[0] + m[r * 4 + 1] * p[1] + m[r * 4 + 2] * p[2] + m[r * 4 + 3];
    return q;
}

bool is_identity(const std::array<double, 16>& m) {
    return m == identity_affine();
}

}  // namespace

RigidResample resample_rigid(const Volume& vol, const LabelMask& mask,
                             const std::array<double, 16>& affine) {
    require(vol.shape == mask.shape, ErrorCode::shape_mismatch,
            "resample_rigid: volume and mask shapes differ");
    if (is_identity(affine)) return {vol, mask, affine};

    RigidResample out{Volume::zeros(vol.shape, vol.spacing, vol.modality),
                      LabelMask::zeros(mask.shape, mask.num_classes), affine};
    std::array<double, 16> inv = invert_rigid(affine);
    const int D = vol.shape[0], H = vol.shape[1], W = vol.shape[2];
    for (int d = 0; d < D; ++d)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                std::array<double, 3> src = apply_affine(
                    inv, {static_cast<double>(d), static_cast<double>(h), static_cast<double>(w)});
                // Trilinear intensity sample, zero outside the grid.
                int d0 = static_cast<int>(std::floor(src[0]));
                int h0 = static_cast<int>(std::floor(src[1]));
                int w0 = static_cast<int>(std::floor(src[2]));
                double fd = src[0] - d0, fh = src[1] - h0, fw = src[2] - w0;
                double acc = 0.0;
                for (int cd = 0; cd < 2; ++cd)
                    for (int ch = 0; ch < 2; ++ch)
                        for (int cw = 0; cw < 2; ++cw) {
                            int dd = d0 + cd, hh = h0 + ch, ww = w0 + cw;
                            if (dd < 0 || dd >= D || hh < 0 || hh >= H || ww < 0 || ww >= W)
                                continue;
                            double weight = (cd ? fd : 1.0 - fd) * (ch ? fh : 1.0 - fh) *
                                            (cw ? fw : 1.0 - fw);
                            acc += weight * vol.at(dd, hh, ww);
                        }
                out.vol.at(d, h, w) = static_cast<float>(acc);
                // Nearest-neighbour label sample, background outside the grid.
                int dn = static_cast<int>(std::llround(src[0]));
                int hn = static_cast<int>(std::llround(src[1]));
                int wn = static_cast<int>(std::llround(src[2]));
                if (dn >= 0 && dn < D && hn >= 0 && hn < H && wn >= 0 && wn < W)
                    out.mask.at(d, h, w) = mask.at(dn, hn, wn);
            }
    return out;
}

RigidResample apply_misalignment(const Volume& vol, const LabelMask& mask,
                                 const MisalignmentSpec& spec, uint64_t seed) {
    spec.validate();
    if (!spec.enabled) return {vol, mask, identity_affine()};

    Rng rng(Rng::mix(seed, 0x515A));
    double ax = rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg) * kDegToRad;
    double ay = rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg) * kDegToRad;
    double az = rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg) * kDegToRad;
    std::array<double, 3> t{rng.uniform(-spec.max_translation_vox, spec.max_translation_vox),
                            rng.uniform(-spec.max_translation_vox, spec.max_translation_vox),
                            rng.uniform(-spec.max_translation_vox, spec.max_translation_vox)};

    // R = Rz * Ry * Rx over (d, h, w) axes.
    double cx = std::cos(ax), sx = std::sin(ax);
    double cy = std::cos(ay), sy = std::sin(ay);
    double cz = std::cos(az), sz = std::sin(az);
    double rx[9] = {1, 0, 0, 0, cx, -sx, 0, sx, cx};
    double ry[9] = {cy, 0, sy, 0, 1, 0, -sy, 0, cy};
    double rz[9] = {cz, -sz, 0, sz, cz, 0, 0, 0, 1};
    auto mat3 = [](const double* a, const double* b, double* c) {
        for (int r = 0; r < 3; ++r)
            for (int col = 0; col < 3; ++col) {
                double s = 0.0;
                for (int k = 0; k < 3; ++k) s += a[r * 3 + k] * b[k * 3 + col];
                c[r * 3 + col] = s;
            }
    };
    double ryx[9], r[9];
    mat3(ry, rx, ryx);
    mat3(rz, ryx, r);

    // Rotate about the grid centre, then translate:
    //   A(p) = R (p - c) + c + t.
    std::array<double, 3> c{(vol.shape[0] - 1) / 2.0, (vol.shape[1] - 1) / 2.0,
                            (vol.shape[2] - 1) / 2.0};
    std::array<double, 16> affine{};
    for (int row = 0; row < 3; ++row) {
        for (int col = 0; col < 3; ++col) affine[row * 4 + col] = r[row * 3 + col];
        double shift = c[row] + t[row];
        for (int k = 0; k < 3; ++k) shift -= r[row * 3 + k] * c[k];
        affine[row * 4 + 3] = shift;
    }
    affine[15] = 1.0;
    return resample_rigid(vol, mask, affine);
}

std::vector<BimodalSample> generate_dataset(const PhantomSpec& spec, const ModalityAppearance& app_a,
                                            const ModalityAppearance& app_b,
                                            const MisalignmentSpec& mis, bool paired, int n_samples,
                                            uint64_t seed) {
    spec.validate();
    app_a.validate(spec.num_classes);
    app_b.validate(spec.num_classes);
    mis.validate();
    require(n_samples >= 1, ErrorCode::invalid_argument, "n_samples must be >= 1");

    std::vector<BimodalSample> samples;
    samples.reserve(static_cast<size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i) {
        uint64_t sample_seed = Rng::mix(seed, static_cast<uint64_t>(i));
        PhantomSpec spec_a = spec;
        spec_a.seed = Rng::mix(sample_seed, 1);
        LabelMask anatomy_a = make_anatomy(spec_a);
        LabelMask anatomy_b = anatomy_a;
        if (!paired) {
            PhantomSpec spec_b = spec;
            spec_b.seed = Rng::mix(sample_seed, 2);
            anatomy_b = make_anatomy(spec_b);
        }

        BimodalSample s;
        char buf[16];
        std::snprintf(buf, sizeof(buf), "s%03d", i);
        s.id = buf;
        s.paired = paired;
        s.vol_a = render_modality(anatomy_a, app_a, Rng::mix(sample_seed, 3), Modality::A);
        s.vol_b = render_modality(anatomy_b, app_b, Rng::mix(sample_seed, 4), Modality::B);
        s.mask_a = std::move(anatomy_a);
        if (mis.enabled) {
            RigidResample moved = apply_misalignment(s.vol_b, anatomy_b, mis, Rng::mix(sample_seed, 5));
            s.vol_b = std::move(moved.vol);
            s.mask_b = std::move(moved.mask);
            s.misalignment = moved.affine;
        } else {
            s.mask_b = std::move(anatomy_b);
        }
        s.validate();
        samples.push_back(std::move(s));
    }
    return samples;
}

}  // namespace comodal
