/* comodal - semi-supervised bimodal 3-D segmentation toolkit.
 *
 * C interface to the comodal core. All functions return a comodal_status;
 * on failure comodal_last_error() carries a thread-local message. Objects
 * returned through out-parameters are owned by the caller and released with
 * the matching _free function.
 */
#ifndef COMODAL_H
#define COMODAL_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define COMODAL_API __declspec(dllexport)
#else
#define COMODAL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum comodal_status {
    COMODAL_OK = 0,
    COMODAL_ERR_INVALID_ARGUMENT = 1,
    COMODAL_ERR_IO = 2,
    COMODAL_ERR_FORMAT = 3,
    COMODAL_ERR_INVARIANT = 4,
    COMODAL_ERR_CONFIG = 5,
    COMODAL_ERR_SHAPE_MISMATCH = 6,
    COMODAL_ERR_NUMERIC = 7,
    COMODAL_ERR_NOT_FOUND = 8,
    COMODAL_ERR_RUNTIME = 9,
} comodal_status;

COMODAL_API const char* comodal_status_name(comodal_status status);

/* Message describing the most recent failure on this thread; empty string
 * when the last call succeeded. */
COMODAL_API const char* comodal_last_error(void);

COMODAL_API const char* comodal_version(void);

/* ---- volumes (CMCV real32 container) ---------------------------------- */

typedef struct comodal_volume comodal_volume;

/* data may be NULL for an all-zero volume; length must be dims[0]*dims[1]*dims[2]. */
COMODAL_API comodal_status comodal_volume_create(const uint32_t dims[3],
                                                 const double spacing_mm[3], const float* data,
                                                 comodal_volume** out);
COMODAL_API comodal_status comodal_volume_load(const char* path, comodal_volume** out);
COMODAL_API comodal_status comodal_volume_save(const comodal_volume* vol, const char* path);
COMODAL_API comodal_status comodal_volume_dims(const comodal_volume* vol, uint32_t out_dims[3]);
COMODAL_API comodal_status comodal_volume_spacing(const comodal_volume* vol,
                                                  double out_spacing_mm[3]);
/* Row-major (d, h, w) payload; valid until the volume is freed. */
COMODAL_API const float* comodal_volume_data(const comodal_volume* vol);
/* Per-volume z-score normalization into a new volume. */
COMODAL_API comodal_status comodal_volume_zscore(const comodal_volume* vol, comodal_volume** out);
COMODAL_API void comodal_volume_free(comodal_volume* vol);

/* ---- label masks (CMCV int16 container) -------------------------------- */

typedef struct comodal_mask comodal_mask;

COMODAL_API comodal_status comodal_mask_create(const uint32_t dims[3], uint16_t num_classes,
                                               const int16_t* data, comodal_mask** out);
COMODAL_API comodal_status comodal_mask_load(const char* path, comodal_mask** out);
COMODAL_API comodal_status comodal_mask_save(const comodal_mask* mask, const char* path);
COMODAL_API comodal_status comodal_mask_dims(const comodal_mask* mask, uint32_t out_dims[3]);
COMODAL_API comodal_status comodal_mask_num_classes(const comodal_mask* mask, uint16_t* out);
COMODAL_API const int16_t* comodal_mask_data(const comodal_mask* mask);
COMODAL_API void comodal_mask_free(comodal_mask* mask);

/* ---- metrics ------------------------------------------------------------ */

COMODAL_API comodal_status comodal_dice_score(const comodal_mask* pred, const comodal_mask* gt,
                                              int class_id, double* out);
/* out_defined is 0 when the class is absent from both or exactly one mask
 * (undefined / missing structure); out_mm is valid only when defined. */
COMODAL_API comodal_status comodal_assd(const comodal_mask* pred, const comodal_mask* gt,
                                        int class_id, const double spacing_mm[3], double* out_mm,
                                        int* out_defined);

/* ---- run options ---------------------------------------------------------- */

typedef struct comodal_options comodal_options;

COMODAL_API comodal_options* comodal_options_create(void);
COMODAL_API void comodal_options_free(comodal_options* options);
COMODAL_API void comodal_options_set_seed(comodal_options* options, uint64_t seed);
COMODAL_API void comodal_options_set_out_dir(comodal_options* options, const char* dir);
COMODAL_API void comodal_options_set_deterministic(comodal_options* options, int deterministic);
COMODAL_API void comodal_options_set_labeled_fraction(comodal_options* options, double fraction);
/* preset: "baseline", "encoder", "cmc" or "full". */
COMODAL_API comodal_status comodal_options_set_ablation(comodal_options* options,
                                                        const char* preset);

/* ---- runs ------------------------------------------------------------------ */

typedef struct comodal_run comodal_run;

/* options is optional everywhere (NULL = no overrides). */
COMODAL_API comodal_status comodal_generate_data(const char* config_path,
                                                 const comodal_options* options,
                                                 comodal_run** out);
COMODAL_API comodal_status comodal_train(const char* config_path, const comodal_options* options,
                                         comodal_run** out);
COMODAL_API comodal_status comodal_evaluate(const char* config_path, const char* checkpoint_path,
                                            const char* split_name,
                                            const comodal_options* options, comodal_run** out);
COMODAL_API comodal_status comodal_ablate(const char* config_path, const comodal_options* options,
                                          comodal_run** out);
COMODAL_API comodal_status comodal_report(const char* const* run_dirs, size_t run_count,
                                          const char* out_dir, comodal_run** out);

COMODAL_API const char* comodal_run_dir(const comodal_run* run);
COMODAL_API const char* comodal_run_manifest_path(const comodal_run* run);
COMODAL_API const char* comodal_run_summary(const comodal_run* run);
COMODAL_API void comodal_run_free(comodal_run* run);

#ifdef __cplusplus
}
#endif

#endif /* COMODAL_H */
