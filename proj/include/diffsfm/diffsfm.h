/* C interface to the diffsfm core: opaque handles + integer status codes.
 * Every entry point returns DSFM_OK (0) on success; on failure,
 * dsfm_last_error() holds a thread-local message until the next call.
 */
#ifndef DIFFSFM_H
#define DIFFSFM_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dsfm_status {
    DSFM_OK = 0,
    DSFM_ERR_ARG = 1,     /* bad arguments, config, files, math domain */
    DSFM_ERR_NUMERIC = 2  /* NaN/Inf surfaced or optimization aborted */
} dsfm_status;

const char* dsfm_version(void);
const char* dsfm_last_error(void);

/* ---- experiment configuration (opaque) ---- */

typedef struct dsfm_config dsfm_config;

dsfm_status dsfm_config_create(dsfm_config** out);
dsfm_status dsfm_config_load(const char* path, dsfm_config** out);
/* dotted_key like "optimizer.steps"; value is a JSON literal or a bare
 * string ("0.01", "true", "slanted_plane"). Unknown keys are rejected by
 * name. */
dsfm_status dsfm_config_set(dsfm_config* cfg, const char* dotted_key, const char* value);
/* Serialize into buf (NUL-terminated). *needed receives the full length
 * regardless of cap. */
dsfm_status dsfm_config_dump(const dsfm_config* cfg, char* buf, size_t cap, size_t* needed);
void dsfm_config_free(dsfm_config* cfg);

/* ---- pipeline commands ---- */

dsfm_status dsfm_synth(const dsfm_config* cfg, const char* out_dir);
/* ablation: "baseline" | "camera" | "camera+costvolume" */
dsfm_status dsfm_optimize(const dsfm_config* cfg, const char* data_dir, const char* out_dir,
                          const char* ablation);
/* pred2_dir may be NULL */
dsfm_status dsfm_eval(const dsfm_config* cfg, const char* pred_dir, const char* gt_dir, const char* out_dir,
                      const char* pred2_dir);
/* term: NULL or "all" | "data" | "rs" | "ax" | "es". Returns
 * DSFM_ERR_NUMERIC when any check fails; report is always written. */
dsfm_status dsfm_gradcheck(uint64_t seed, double tolerance, const char* term, int grid_size, char* report,
                           size_t cap, size_t* needed);

/* ---- direct evaluation entry points ---- */

/* Median-scale pred onto gt in place (valid: 0/1 bytes, may be NULL). */
dsfm_status dsfm_median_scale(double* pred, const double* gt, const uint8_t* valid, size_t n);
/* out[8] = abs_rel, sq_rel, rmse, rmse_log, delta1, delta2, delta3,
 * n_valid. Caller scales first. */
dsfm_status dsfm_depth_metrics(const double* pred, const double* gt, const uint8_t* valid, size_t n,
                               double cap, double out[8]);

#ifdef __cplusplus
}
#endif

#endif /* DIFFSFM_H */
