#ifndef CWTM_H
#define CWTM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CwtmStatus {
  CWTM_STATUS_OK = 0,
  CWTM_STATUS_NULL_ARGUMENT = 1,
  CWTM_STATUS_INVALID_ARGUMENT = 2,
  CWTM_STATUS_IO = 3,
  CWTM_STATUS_DATA = 4,
  CWTM_STATUS_NUMERIC = 5,
  CWTM_STATUS_BUFFER_TOO_SMALL = 6,
  CWTM_STATUS_PANIC = 7,
} CwtmStatus;

/**
 * Opaque model handle.
 */
typedef struct CwtmModel CwtmModel;

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *cwtm_last_error(void);

/**
 * Loads a checkpoint. `cache_path` may be null for toy-mode models.
 *
 * # Safety
 * String arguments must be null or nul-terminated; `out` must be a valid
 * pointer to write the handle to.
 */
enum CwtmStatus cwtm_model_load(const char *checkpoint_path,
                                const char *cache_path,
                                struct CwtmModel **out);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `handle` must come from [`cwtm_model_load`] and not be used afterwards.
 */
void cwtm_model_free(struct CwtmModel *handle);

/**
 * Number of topics, or 0 for a null handle.
 *
 * # Safety
 * `handle` must be null or a live handle.
 */
size_t cwtm_model_num_topics(const struct CwtmModel *handle);

/**
 * Width of the word embeddings the model consumes, or 0 for a null handle.
 *
 * # Safety
 * `handle` must be null or a live handle.
 */
size_t cwtm_model_dim(const struct CwtmModel *handle);

/**
 * Document-topic vector of a raw text (toy-mode models).
 *
 * # Safety
 * `text` must be nul-terminated; `theta_out` must hold `len` doubles.
 */
enum CwtmStatus cwtm_infer_text(const struct CwtmModel *handle,
                                const char *text,
                                double *theta_out,
                                size_t len);

/**
 * Document-topic vector from `n_words × dim` row-major word embeddings.
 *
 * # Safety
 * `embeddings` must hold `n_words * dim` doubles; `theta_out` must hold
 * `len` doubles.
 */
enum CwtmStatus cwtm_infer_embeddings(const struct CwtmModel *handle,
                                      const double *embeddings,
                                      size_t n_words,
                                      size_t dim,
                                      double *theta_out,
                                      size_t len);

/**
 * Information diffusion kernel of two points on the simplex.
 *
 * # Safety
 * `a` and `b` must hold `dim` doubles; `out` must be writable.
 */
enum CwtmStatus cwtm_idk_kernel(const double *a, const double *b, size_t dim, double *out);

/**
 * Unbiased MMD between two `m × dim` row-major batches of simplex points.
 *
 * # Safety
 * `q` and `p` must hold `m * dim` doubles; `out` must be writable.
 */
enum CwtmStatus cwtm_mmd_idk(const double *q, const double *p, size_t m, size_t dim, double *out);

/**
 * `m` seeded draws from a symmetric Dirichlet, written row-major.
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum CwtmStatus cwtm_sample_dirichlet(double alpha,
                                      size_t dim,
                                      size_t m,
                                      uint64_t seed,
                                      double *out,
                                      size_t len);

#endif  /* CWTM_H */
