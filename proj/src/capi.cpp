#include "comodal/comodal.h"

#include <cstring>
#include <string>

#include "config.hpp"
#include "metrics.hpp"
#include "runner.hpp"
#include "volume.hpp"

using namespace comodal;

struct comodal_volume {
    Volume vol;
};

struct comodal_mask {
    LabelMask mask;
};

struct comodal_options {
    ConfigOverrides overrides;
};

struct comodal_run {
    RunOutcome outcome;
};

namespace {

thread_local std::string g_last_error;

comodal_status status_from_code(ErrorCode code) {
    return static_cast<comodal_status>(static_cast<int>(code));
}

template <typename Fn>
comodal_status guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return COMODAL_OK;
    } catch (const Error& e) {
        g_last_error = e.what();
        return status_from_code(e.code());
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return COMODAL_ERR_RUNTIME;
    }
}

comodal_status require_c(bool ok, const char* message) {
    if (ok) return COMODAL_OK;
    g_last_error = message;
    return COMODAL_ERR_INVALID_ARGUMENT;
}

}  // namespace

extern "C" {

const char* comodal_status_name(comodal_status status) {
    switch (status) {
        case COMODAL_OK: return "ok";
        case COMODAL_ERR_INVALID_ARGUMENT: return "invalid_argument";
        case COMODAL_ERR_IO: return "io";
        case COMODAL_ERR_FORMAT: return "format";
        case COMODAL_ERR_INVARIANT: return "invariant";
        case COMODAL_ERR_CONFIG: return "config";
        case COMODAL_ERR_SHAPE_MISMATCH: return "shape_mismatch";
        case COMODAL_ERR_NUMERIC: return "numeric";
        case COMODAL_ERR_NOT_FOUND: return "not_found";
        case COMODAL_ERR_RUNTIME: return "runtime";
    }
    return "unknown";
}

const char* comodal_last_error(void) { return g_last_error.c_str(); }

const char* comodal_version(void) { return "0.1.0"; }

/* ---- volumes -------------------------------------------------------------- */

comodal_status comodal_volume_create(const uint32_t dims[3], const double spacing_mm[3],
                                     const float* data, comodal_volume** out) {
    if (comodal_status s = require_c(dims && spacing_mm && out, "null argument")) return s;
    return guarded([&] {
        Volume v;
        for (int i = 0; i < 3; ++i) {
            v.shape[i] = static_cast<int>(dims[i]);
            v.spacing[i] = spacing_mm[i];
        }
        int64_t n = static_cast<int64_t>(dims[0]) * dims[1] * dims[2];
        if (data)
            v.data.assign(data, data + n);
        else
            v.data.assign(static_cast<size_t>(n), 0.0f);
        v.validate();
        *out = new comodal_volume{std::move(v)};
    });
}

comodal_status comodal_volume_load(const char* path, comodal_volume** out) {
    if (comodal_status s = require_c(path && out, "null argument")) return s;
    return guarded([&] { *out = new comodal_volume{load_volume(path)}; });
}

comodal_status comodal_volume_save(const comodal_volume* vol, const char* path) {
    if (comodal_status s = require_c(vol && path, "null argument")) return s;
    return guarded([&] { save_volume(vol->vol, path); });
}

comodal_status comodal_volume_dims(const comodal_volume* vol, uint32_t out_dims[3]) {
    if (comodal_status s = require_c(vol && out_dims, "null argument")) return s;
    for (int i = 0; i < 3; ++i) out_dims[i] = static_cast<uint32_t>(vol->vol.shape[i]);
    return COMODAL_OK;
}

comodal_status comodal_volume_spacing(const comodal_volume* vol, double out_spacing_mm[3]) {
    if (comodal_status s = require_c(vol && out_spacing_mm, "null argument")) return s;
    for (int i = 0; i < 3; ++i) out_spacing_mm[i] = vol->vol.spacing[i];
    return COMODAL_OK;
}

const float* comodal_volume_data(const comodal_volume* vol) {
    return vol ? vol->vol.data.data() : nullptr;
}

comodal_status comodal_volume_zscore(const comodal_volume* vol, comodal_volume** out) {
    if (comodal_status s = require_c(vol && out, "null argument")) return s;
    return guarded([&] { *out = new comodal_volume{zscore_normalize(vol->vol)}; });
}

void comodal_volume_free(comodal_volume* vol) { delete vol; }

/* ---- masks ------------------------------------------------------------------ */

comodal_status comodal_mask_create(const uint32_t dims[3], uint16_t num_classes,
                                   const int16_t* data, comodal_mask** out) {
    if (comodal_status s = require_c(dims && out, "null argument")) return s;
    return guarded([&] {
        LabelMask m;
        for (int i = 0; i < 3; ++i) m.shape[i] = static_cast<int>(dims[i]);
        m.num_classes = num_classes;
        int64_t n = static_cast<int64_t>(dims[0]) * dims[1] * dims[2];
        if (data)
            m.data.assign(data, data + n);
        else
            m.data.assign(static_cast<size_t>(n), 0);
        m.validate();
        *out = new comodal_mask{std::move(m)};
    });
}

comodal_status comodal_mask_load(const char* path, comodal_mask** out) {
    if (comodal_status s = require_c(path && out, "null argument")) return s;
    return guarded([&] { *out = new comodal_mask{load_mask(path)}; });
}

comodal_status comodal_mask_save(const comodal_mask* mask, const char* path) {
    if (comodal_status s = require_c(mask && path, "null argument")) return s;
    return guarded([&] { save_mask(mask->mask, path); });
}

comodal_status comodal_mask_dims(const comodal_mask* mask, uint32_t out_dims[3]) {
    if (comodal_status s = require_c(mask && out_dims, "null argument")) return s;
    for (int i = 0; i < 3; ++i) out_dims[i] = static_cast<uint32_t>(mask->mask.shape[i]);
    return COMODAL_OK;
}

comodal_status comodal_mask_num_classes(const comodal_mask* mask, uint16_t* out) {
    if (comodal_status s = require_c(mask && out, "null argument")) return s;
    *out = static_cast<uint16_t>(mask->mask.num_classes);
    return COMODAL_OK;
}

const int16_t* comodal_mask_data(const comodal_mask* mask) {
    return mask ? mask->mask.data.data() : nullptr;
}

void comodal_mask_free(comodal_mask* mask) { delete mask; }

/* ---- metrics ------------------------------------------------------------------ */

comodal_status comodal_dice_score(const comodal_mask* pred, const comodal_mask* gt, int class_id,
                                  double* out) {
    if (comodal_status s = require_c(pred && gt && out, "null argument")) return s;
    return guarded([&] { *out = dice_score(pred->mask, gt->mask, class_id); });
}

comodal_status comodal_assd(const comodal_mask* pred, const comodal_mask* gt, int class_id,
                            const double spacing_mm[3], double* out_mm, int* out_defined) {
    if (comodal_status s = require_c(pred && gt && spacing_mm && out_mm && out_defined,
                                     "null argument"))
        return s;
    return guarded([&] {
        AssdResult r = assd(pred->mask, gt->mask, class_id,
                            {spacing_mm[0], spacing_mm[1], spacing_mm[2]});
        *out_defined = r.defined() ? 1 : 0;
        *out_mm = r.defined() ? r.mm : 0.0;
    });
}

/* ---- options ---------------------------------------------------------------------- */

comodal_options* comodal_options_create(void) { return new comodal_options{}; }

void comodal_options_free(comodal_options* options) { delete options; }

void comodal_options_set_seed(comodal_options* options, uint64_t seed) {
    if (options) options->overrides.seed = seed;
}

void comodal_options_set_out_dir(comodal_options* options, const char* dir) {
    if (options && dir) options->overrides.out_dir = dir;
}

void comodal_options_set_deterministic(comodal_options* options, int deterministic) {
    if (options) options->overrides.deterministic = deterministic != 0;
}

void comodal_options_set_labeled_fraction(comodal_options* options, double fraction) {
    if (options) options->overrides.labeled_fraction = fraction;
}

comodal_status comodal_options_set_ablation(comodal_options* options, const char* preset) {
    if (comodal_status s = require_c(options && preset, "null argument")) return s;
    return guarded([&] {
        // Validate the preset eagerly so bad flags fail at parse time.
        TrainConfig probe;
        apply_ablation_preset(probe, preset);
        options->overrides.ablation_preset = preset;
    });
}

/* ---- runs --------------------------------------------------------------------------- */

namespace {

const ConfigOverrides& overrides_of(const comodal_options* options) {
    static const ConfigOverrides empty;
    return options ? options->overrides : empty;
}

}  // namespace

comodal_status comodal_generate_data(const char* config_path, const comodal_options* options,
                                     comodal_run** out) {
    if (comodal_status s = require_c(config_path && out, "null argument")) return s;
    return guarded([&] { *out = new comodal_run{cmd_generate_data(config_path,
                                                                  overrides_of(options))}; });
}

comodal_status comodal_train(const char* config_path, const comodal_options* options,
                             comodal_run** out) {
    if (comodal_status s = require_c(config_path && out, "null argument")) return s;
    return guarded([&] { *out = new comodal_run{cmd_train(config_path, overrides_of(options))}; });
}

comodal_status comodal_evaluate(const char* config_path, const char* checkpoint_path,
                                const char* split_name, const comodal_options* options,
                                comodal_run** out) {
    if (comodal_status s = require_c(config_path && checkpoint_path && split_name && out,
                                     "null argument"))
        return s;
    return guarded([&] {
        *out = new comodal_run{
            cmd_evaluate(config_path, checkpoint_path, split_name, overrides_of(options))};
    });
}

comodal_status comodal_ablate(const char* config_path, const comodal_options* options,
                              comodal_run** out) {
    if (comodal_status s = require_c(config_path && out, "null argument")) return s;
    return guarded([&] { *out = new comodal_run{cmd_ablate(config_path, overrides_of(options))}; });
}

comodal_status comodal_report(const char* const* run_dirs, size_t run_count, const char* out_dir,
                              comodal_run** out) {
    if (comodal_status s = require_c(run_dirs && out, "null argument")) return s;
    return guarded([&] {
        std::vector<std::string> dirs;
        for (size_t i = 0; i < run_count; ++i) {
            if (!run_dirs[i]) fail(ErrorCode::invalid_argument, "null run directory");
            dirs.emplace_back(run_dirs[i]);
        }
        *out = new comodal_run{cmd_report(dirs, out_dir ? out_dir : "")};
    });
}

const char* comodal_run_dir(const comodal_run* run) {
    return run ? run->outcome.run_dir.c_str() : nullptr;
}

const char* comodal_run_manifest_path(const comodal_run* run) {
    return run ? run->outcome.manifest_path.c_str() : nullptr;
}

const char* comodal_run_summary(const comodal_run* run) {
    return run ? run->outcome.summary.c_str() : nullptr;
}

void comodal_run_free(comodal_run* run) { delete run; }

}  // extern "C"
