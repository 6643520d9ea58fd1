#ifndef SDDROP_H
#define SDDROP_H

/* Generated by cbindgen from the sddrop-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every entry point.
 */
typedef enum SddropStatus {
  SddropStatus_Ok = 0,
  SddropStatus_NullPointer = 1,
  SddropStatus_InvalidUtf8 = 2,
  SddropStatus_InvalidArgument = 3,
  SddropStatus_ConfigError = 4,
  SddropStatus_RuntimeError = 5,
  SddropStatus_Panic = 6,
} SddropStatus;

/**
 * Opaque dataset handle.
 */
typedef struct SddropDataset SddropDataset;

/**
 * Opaque trained-model handle (architecture plus parameters).
 */
typedef struct SddropModel SddropModel;

/**
 * Detector metric bundle, all fields in [0, 1].
 */
typedef struct SddropOodMetrics {
  double fpr_at_95_tpr;
  double detection_error;
  double auroc;
  double aupr_in;
  double aupr_out;
} SddropOodMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sddrop_version(void);

/**
 * Copy the calling thread's last error message into `buf` (truncated to
 * `cap` - 1 bytes, always NUL-terminated when cap > 0). Returns the full
 * message length in bytes, excluding the NUL.
 */
uintptr_t sddrop_last_error(char *buf, uintptr_t cap);

/**
 * Generate the Gaussian-blob dataset.
 */
enum SddropStatus sddrop_dataset_blobs(uintptr_t n_per_class,
                                       uintptr_t num_classes,
                                       uintptr_t dim,
                                       double sigma,
                                       uint64_t seed,
                                       struct SddropDataset **out);

/**
 * Generate the interleaved-spiral dataset (2-D features).
 */
enum SddropStatus sddrop_dataset_spirals(uintptr_t n_per_class,
                                         uintptr_t num_classes,
                                         double noise,
                                         uint64_t seed,
                                         struct SddropDataset **out);

/**
 * Wrap caller-provided row-major features (`n x dim`) and labels.
 */
enum SddropStatus sddrop_dataset_from_arrays(const double *features,
                                             const uint32_t *labels,
                                             uintptr_t n,
                                             uintptr_t dim,
                                             uintptr_t num_classes,
                                             struct SddropDataset **out);

uintptr_t sddrop_dataset_len(const struct SddropDataset *dataset);

uintptr_t sddrop_dataset_dim(const struct SddropDataset *dataset);

void sddrop_dataset_free(struct SddropDataset *dataset);

/**
 * Train a model. `config_toml` may be NULL (all defaults) or a TOML string
 * in the run-config schema; `dataset` may be NULL to use the config's data
 * section.
 */
enum SddropStatus sddrop_train(const char *config_toml,
                               const struct SddropDataset *dataset,
                               struct SddropModel **out);

/**
 * Load a model from a checkpoint file.
 */
enum SddropStatus sddrop_model_load(const char *path, struct SddropModel **out);

/**
 * Save a model to a checkpoint file (bit-exact round trip).
 */
enum SddropStatus sddrop_model_save(const struct SddropModel *model, const char *path);

uintptr_t sddrop_model_num_classes(const struct SddropModel *model);

/**
 * Dropout-free accuracy of the model on a dataset.
 */
enum SddropStatus sddrop_model_accuracy(const struct SddropModel *model,
                                        const struct SddropDataset *dataset,
                                        double *out_accuracy);

/**
 * Logits for `rows` feature rows; `out_logits` must hold
 * `rows * num_classes` doubles.
 */
enum SddropStatus sddrop_model_predict(const struct SddropModel *model,
                                       const double *features,
                                       uintptr_t rows,
                                       uintptr_t dim,
                                       double *out_logits);

void sddrop_model_free(struct SddropModel *model);

/**
 * Expected calibration error over equal-width bins; `correct` entries are
 * 0 or 1.
 */
enum SddropStatus sddrop_metric_ece(const double *confidences,
                                    const uint8_t *correct,
                                    uintptr_t n,
                                    uintptr_t bins,
                                    double *out_ece);

/**
 * Detection metrics for in/out score lists (higher score = more
 * in-distribution).
 */
enum SddropStatus sddrop_metric_ood(const double *in_scores,
                                    uintptr_t n_in,
                                    const double *out_scores,
                                    uintptr_t n_out,
                                    struct SddropOodMetrics *out_metrics);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SDDROP_H */
