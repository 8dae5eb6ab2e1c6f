#ifndef PROBFUSE_H
#define PROBFUSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum PfMetaKind {
  PF_META_KIND_LOGISTIC = 0,
  PF_META_KIND_LINEAR_SVM = 1,
  PF_META_KIND_MLP = 2,
  PF_META_KIND_RANDOM_FOREST = 3,
} PfMetaKind;

typedef enum PfStatus {
  PF_STATUS_OK = 0,
  PF_STATUS_NULL_POINTER = 1,
  PF_STATUS_INVALID_INPUT = 2,
  PF_STATUS_RUNTIME = 3,
  PF_STATUS_PANIC = 4,
} PfStatus;

// Opaque aligned set of model probability matrices plus labels.
typedef struct PfBundle PfBundle;

// Opaque trained stacking meta-model.
typedef struct PfMetaModel PfMetaModel;

typedef struct PfMetrics {
  double accuracy;
  double macro_precision;
  double macro_recall;
  double macro_f1;
} PfMetrics;

typedef struct PfPowerSample {
  double timestamp_s;
  double cpu_w;
  double gpu_w;
  double ram_w;
} PfPowerSample;

typedef struct PfEnergy {
  double duration_s;
  double cpu_kwh;
  double gpu_kwh;
  double ram_kwh;
  double total_kwh;
} PfEnergy;

typedef struct PfEmissions {
  struct PfEnergy energy;
  double grid_intensity;
  double emissions_kg;
  double rate_kg_per_s;
} PfEmissions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Free with `pf_string_free`.
char *pf_last_error(void);

// # Safety
// `s` must be NULL or a string returned by this library, freed at most once.
void pf_string_free(char *s);

// Library version as a static NUL-terminated string.
const char *pf_version(void);

// Builds a bundle from `k` row-major `n x c` matrices laid out back to back and
// `n` labels. Samples are named `s0..`, classes `class0..`, models `model0..`.
//
// # Safety
// `probs` must point to `k * n * c` doubles, `labels` to `n` values, `out` to writable storage.
enum PfStatus pf_bundle_from_arrays(size_t k,
                                    size_t n,
                                    size_t c,
                                    const double *probs,
                                    const size_t *labels,
                                    struct PfBundle **out);

// Loads `k` probability files (CSV or JSON by extension), a label CSV and a class list.
//
// # Safety
// `model_paths` must point to `k` NUL-terminated strings; other strings must be NUL-terminated.
enum PfStatus pf_bundle_load(const char *const *model_paths,
                             size_t k,
                             const char *label_path,
                             const char *class_list_path,
                             struct PfBundle **out);

// # Safety
// `bundle` must be NULL or a handle from this library, freed at most once.
void pf_bundle_free(struct PfBundle *bundle);

// # Safety
// `bundle` must be a live handle; each out pointer may be NULL.
enum PfStatus pf_bundle_shape(const struct PfBundle *bundle, size_t *k, size_t *n, size_t *c);

// Simple (`weights == NULL`) or weighted averaging with argmax predictions.
//
// # Safety
// `weights` is NULL or `k` doubles; `out_probs` is NULL or `n * c` doubles; `out_labels` is NULL or `n` values.
enum PfStatus pf_average(const struct PfBundle *bundle,
                         const double *weights,
                         double *out_probs,
                         size_t *out_labels);

// Accuracy-maximizing simplex weights over the whole bundle.
//
// # Safety
// `out_weights` must hold `k` doubles; `out_accuracy` may be NULL.
enum PfStatus pf_optimize_weights(const struct PfBundle *bundle,
                                  double grid_step,
                                  size_t restarts,
                                  uint64_t seed,
                                  double *out_weights,
                                  double *out_accuracy);

// Accuracy and macro precision/recall/F1 of `pred` against `truth` (both `n` labels in `[0, c)`).
//
// # Safety
// `pred` and `truth` must hold `n` values; `out` must be writable.
enum PfStatus pf_metrics(size_t n,
                         size_t c,
                         const size_t *pred,
                         const size_t *truth,
                         struct PfMetrics *out);

// Trains a meta-model on the bundle's concatenated probabilities and labels.
// `kind` is a `PfMetaKind` value.
//
// # Safety
// `bundle` must be a live handle; `out` must be writable.
enum PfStatus pf_stack_train(const struct PfBundle *bundle,
                             uint32_t kind,
                             uint64_t seed,
                             struct PfMetaModel **out);

// Predicts with a meta-model; the bundle's labels are ignored.
//
// # Safety
// `out_probs` is NULL or `n * c` doubles; `out_labels` is NULL or `n` values.
enum PfStatus pf_stack_predict(const struct PfMetaModel *model,
                               const struct PfBundle *bundle,
                               double *out_probs,
                               size_t *out_labels);

// Serializes a meta-model; free the result with `pf_string_free`.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum PfStatus pf_meta_model_to_json(const struct PfMetaModel *model, char **out);

// # Safety
// `json` must be NUL-terminated; `out` must be writable.
enum PfStatus pf_meta_model_from_json(const char *json, struct PfMetaModel **out);

// # Safety
// `model` must be NULL or a handle from this library, freed at most once.
void pf_meta_model_free(struct PfMetaModel *model);

// Trapezoidal energy of a power trace over `[0, duration_s]`.
//
// # Safety
// `samples` must hold `len` entries; `out` must be writable.
enum PfStatus pf_integrate_energy(const struct PfPowerSample *samples,
                                  size_t len,
                                  double duration_s,
                                  struct PfEnergy *out);

// Emissions and emission rate for an energy breakdown at `grid_intensity` kgCO2eq/kWh.
//
// # Safety
// `energy` must be readable and `out` writable.
enum PfStatus pf_compute_emissions(const struct PfEnergy *energy,
                                   double grid_intensity,
                                   struct PfEmissions *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROBFUSE_H */
