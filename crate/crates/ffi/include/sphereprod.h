#ifndef SPHEREPROD_H
#define SPHEREPROD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every exported function.
 */
typedef enum {
  SP_STATUS_OK = 0,
  SP_STATUS_NULL_POINTER = 1,
  SP_STATUS_INVALID_ARGUMENT = 2,
  SP_STATUS_DOMAIN = 3,
  SP_STATUS_PARSE = 4,
  SP_STATUS_DIMENSION_MISMATCH = 5,
  SP_STATUS_IO = 6,
  SP_STATUS_DATA = 7,
  SP_STATUS_CHECKPOINT = 8,
  SP_STATUS_DIVERGENCE = 9,
  SP_STATUS_BUFFER_TOO_SMALL = 10,
  SP_STATUS_PANIC = 11,
} SpStatus;

/**
 * Parsed sphere composition.
 */
typedef struct SpComposition SpComposition;

/**
 * Trained VAE loaded from a checkpoint.
 */
typedef struct SpModel SpModel;

/**
 * Product of vMF distributions, one per shell.
 */
typedef struct SpProductVmf SpProductVmf;

/**
 * Seeded ChaCha8 random stream.
 */
typedef struct SpRng SpRng;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf`. `needed`
 * (nullable) receives the size including the terminating NUL. An empty
 * string means the last call succeeded.
 *
 * # Safety
 * `buf` must be writable for `len` bytes; `needed` must be null or valid.
 */
SpStatus sp_last_error_message(char *buf, size_t len, size_t *needed);

/**
 * `ln I_v(x)`.
 *
 * # Safety
 * `out` must be a valid pointer to a double.
 */
SpStatus sp_log_bessel_i(double v, double x, double *out);

/**
 * `I_{m/2}(κ) / I_{m/2-1}(κ)`.
 *
 * # Safety
 * `out` must be a valid pointer to a double.
 */
SpStatus sp_bessel_ratio(size_t m, double kappa, double *out);

/**
 * Log normalizer of the vMF on the unit sphere in `R^m`.
 *
 * # Safety
 * `out` must be a valid pointer to a double.
 */
SpStatus sp_vmf_log_normalizer(size_t m, double kappa, double *out);

/**
 * KL divergence from the vMF to the uniform distribution.
 *
 * # Safety
 * `out` must be a valid pointer to a double.
 */
SpStatus sp_vmf_kl_to_uniform(size_t m, double kappa, double *out);

/**
 * Derivative of [`sp_vmf_kl_to_uniform`] in `kappa`.
 *
 * # Safety
 * `out` must be a valid pointer to a double.
 */
SpStatus sp_vmf_kl_grad_kappa(size_t m, double kappa, double *out);

/**
 * Differential entropy of the vMF.
 *
 * # Safety
 * `out` must be a valid pointer to a double.
 */
SpStatus sp_vmf_entropy(size_t m, double kappa, double *out);

/**
 * # Safety
 * `out` must be a valid pointer; free the handle with [`sp_rng_free`].
 */
SpStatus sp_rng_new(uint64_t seed, SpRng **out);

/**
 * # Safety
 * `rng` must be null or a handle from [`sp_rng_new`] not yet freed.
 */
void sp_rng_free(SpRng *rng);

/**
 * Parses a composition such as `s10x9*3`.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
SpStatus sp_composition_parse(const char *text, SpComposition **out);

/**
 * # Safety
 * `spec` must be null or a live composition handle.
 */
void sp_composition_free(SpComposition *spec);

/**
 * Shell count, ambient dimension `Σ(k_i+1)` and degrees of freedom `Σ k_i`.
 * Any out pointer may be null.
 *
 * # Safety
 * `spec` must be a live composition handle.
 */
SpStatus sp_composition_info(const SpComposition *spec,
                             size_t *shells,
                             size_t *ambient_dim,
                             size_t *dof);

/**
 * Copies the sphere dimensions `k_i` into `dims` (length `len`, at least the
 * shell count).
 *
 * # Safety
 * `spec` must be a live handle and `dims` writable for `len` elements.
 */
SpStatus sp_composition_dims(const SpComposition *spec, size_t *dims, size_t len);

/**
 * Canonical text form, e.g. `s10x9*3`.
 *
 * # Safety
 * `spec` must be a live handle, `buf` writable for `len` bytes, `needed`
 * null or valid.
 */
SpStatus sp_composition_to_string(const SpComposition *spec, char *buf, size_t len, size_t *needed);

/**
 * Builds a product of vMFs. `mus` holds the unit mean directions of all
 * shells back to back (`ambient_dim` values); `kappas` one concentration per
 * shell.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `out` must be valid.
 */
SpStatus sp_product_vmf_new(const SpComposition *spec,
                            const double *mus,
                            size_t mus_len,
                            const double *kappas,
                            size_t kappas_len,
                            SpProductVmf **out);

/**
 * # Safety
 * `q` must be null or a live product-vMF handle.
 */
void sp_product_vmf_free(SpProductVmf *q);

/**
 * Draws one point into `z` (`len` must equal the ambient dimension).
 *
 * # Safety
 * Handles must be live; `z` writable for `len` doubles.
 */
SpStatus sp_product_vmf_sample(const SpProductVmf *q, SpRng *rng, double *z, size_t len);

/**
 * Log density of `z` under the product.
 *
 * # Safety
 * `q` must be live, `z` readable for `len` doubles, `out` valid.
 */
SpStatus sp_product_vmf_log_prob(const SpProductVmf *q, const double *z, size_t len, double *out);

/**
 * Total KL to the uniform product prior; `per_shell` (nullable) receives the
 * shell terms when `per_shell_len` covers every shell.
 *
 * # Safety
 * `q` must be live, `total` valid, `per_shell` null or writable.
 */
SpStatus sp_product_vmf_kl(const SpProductVmf *q,
                           double *total,
                           double *per_shell,
                           size_t per_shell_len);

/**
 * Loads a model checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` valid.
 */
SpStatus sp_model_load(const char *path, SpModel **out);

/**
 * # Safety
 * `model` must be null or a live model handle.
 */
void sp_model_free(SpModel *model);

/**
 * Image height and width, and a new handle to the model's composition
 * (free it with [`sp_composition_free`]). Out pointers may be null.
 *
 * # Safety
 * `model` must be live.
 */
SpStatus sp_model_info(const SpModel *model,
                       size_t *height,
                       size_t *width,
                       SpComposition **composition);

/**
 * Posterior parameters for `rows` images (row-major, `height*width` values
 * each). `mu` receives `rows * ambient_dim` values, `kappa` `rows * shells`.
 *
 * # Safety
 * `x` must hold `rows * height * width` doubles; `mu` and `kappa` must be
 * writable for their lengths.
 */
SpStatus sp_model_encode(const SpModel *model,
                         const double *x,
                         size_t rows,
                         double *mu,
                         size_t mu_len,
                         double *kappa,
                         size_t kappa_len);

/**
 * Pixel probabilities for `rows` latent points of `ambient_dim` values each.
 *
 * # Safety
 * `z` must hold `rows * ambient_dim` doubles and `probs` be writable for
 * `probs_len` doubles.
 */
SpStatus sp_model_decode(const SpModel *model,
                         const double *z,
                         size_t rows,
                         double *probs,
                         size_t probs_len);

/**
 * Single-sample ELBO, reconstruction and KL, averaged over `rows` binary
 * images. Out pointers may be null.
 *
 * # Safety
 * `x` must hold `rows * height * width` doubles; handles must be live.
 */
SpStatus sp_model_elbo(const SpModel *model,
                       const double *x,
                       size_t rows,
                       SpRng *rng,
                       double *elbo,
                       double *re,
                       double *kl);

/**
 * Importance-sampled `log p(x)` with `k` samples, averaged over rows.
 *
 * # Safety
 * `x` must hold `rows * height * width` doubles; handles and `out` valid.
 */
SpStatus sp_model_iwae(const SpModel *model,
                       const double *x,
                       size_t rows,
                       size_t k,
                       SpRng *rng,
                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPHEREPROD_H */
