#ifndef SBORA_H
#define SBORA_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Adapter kind codes, matching the checkpoint header.
 */
#define SBORA_KIND_LORA 1

#define SBORA_KIND_FA 2

#define SBORA_KIND_FB 3

/**
 * Result of every fallible call.
 */
typedef enum SboraStatus {
  SBORA_STATUS_OK = 0,
  SBORA_STATUS_NULL_POINTER = 1,
  SBORA_STATUS_INVALID_ARGUMENT = 2,
  SBORA_STATUS_INVALID_RANK = 3,
  SBORA_STATUS_DIMENSION_MISMATCH = 4,
  SBORA_STATUS_KIND_MISMATCH = 5,
  SBORA_STATUS_ORTHOGONALITY = 6,
  SBORA_STATUS_NUMERIC = 7,
  SBORA_STATUS_FORMAT = 8,
  SBORA_STATUS_IO = 9,
  SBORA_STATUS_PANIC = 10,
} SboraStatus;

/**
 * Opaque adapter layer over a 64-bit base weight.
 */
typedef struct SboraLayer SboraLayer;

/**
 * Opaque NF4-quantized matrix.
 */
typedef struct SboraQuantized SboraQuantized;

/**
 * Closed-form costs of one adapter configuration.
 */
typedef struct SboraCost {
  uint64_t trainable_params;
  uint64_t total_params;
  uint64_t gradient_values;
  uint64_t mults;
  uint64_t adds;
} SboraCost;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the calling thread's most recent failure, or null after a
 * success. The pointer stays valid until the next call on this thread.
 */
const char *sbora_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sbora_version(void);

/**
 * Creates a layer over a copy of `w0` (`d × k`).
 *
 * LoRA starts with uniform `A` and zero `B`, seeded by `seed`. SBoRA kinds
 * draw `r` basis indices from `seed` and start with a zero trainable
 * matrix.
 *
 * # Safety
 * `w0` must point to `d * k` doubles and `out` to writable storage.
 */
enum SboraStatus sbora_layer_new(uint32_t kind,
                                 size_t d,
                                 size_t k,
                                 size_t r,
                                 const double *w0,
                                 uint64_t seed,
                                 struct SboraLayer **out);

/**
 * Creates an SBoRA layer with explicit, strictly increasing basis indices.
 *
 * # Safety
 * `w0` must point to `d * k` doubles, `indices` to `r` values and `out` to
 * writable storage.
 */
enum SboraStatus sbora_layer_new_with_basis(uint32_t kind,
                                            size_t d,
                                            size_t k,
                                            const double *w0,
                                            const size_t *indices,
                                            size_t r,
                                            struct SboraLayer **out);

/**
 * Releases a layer. Null is ignored.
 *
 * # Safety
 * `layer` must come from this library and not be used afterwards.
 */
void sbora_layer_free(struct SboraLayer *layer);

/**
 * Writes the layer's kind code, `d`, `k` and `r`. Any output may be null.
 *
 * # Safety
 * Non-null outputs must be writable.
 */
enum SboraStatus sbora_layer_shape(const struct SboraLayer *layer,
                                   uint32_t *kind,
                                   size_t *d,
                                   size_t *k,
                                   size_t *r);

/**
 * Copies the basis indices of an SBoRA layer into `out` (`r` entries).
 *
 * # Safety
 * `out` must have room for `len` values.
 */
enum SboraStatus sbora_layer_basis(const struct SboraLayer *layer, size_t *out, size_t len);

/**
 * Overwrites trainable matrix `index` (LoRA: 0 = A, 1 = B; SBoRA: 0).
 *
 * # Safety
 * `data` must point to `len` doubles.
 */
enum SboraStatus sbora_layer_set_trainable(struct SboraLayer *layer,
                                           size_t index,
                                           const double *data,
                                           size_t len);

/**
 * Copies trainable matrix `index` into `out`.
 *
 * # Safety
 * `out` must have room for `len` doubles.
 */
enum SboraStatus sbora_layer_get_trainable(const struct SboraLayer *layer,
                                           size_t index,
                                           double *out,
                                           size_t len);

/**
 * `out = x·W0ᵀ + scale·x·ΔWᵀ` for a `batch × k` input.
 *
 * # Safety
 * `x` must hold `batch * k` doubles and `out` room for `batch * d`.
 */
enum SboraStatus sbora_layer_forward(const struct SboraLayer *layer,
                                     const double *x,
                                     size_t batch,
                                     double *out);

/**
 * Like [`sbora_layer_forward`], also reporting scalar multiplications and
 * additions.
 *
 * # Safety
 * As for [`sbora_layer_forward`]; `mults` and `adds` may be null.
 */
enum SboraStatus sbora_layer_forward_counted(const struct SboraLayer *layer,
                                             const double *x,
                                             size_t batch,
                                             double *out,
                                             uint64_t *mults,
                                             uint64_t *adds);

/**
 * Writes the merged weight `W0 + scale·ΔW` (`d × k`).
 *
 * # Safety
 * `out` must have room for `d * k` doubles.
 */
enum SboraStatus sbora_layer_merge(const struct SboraLayer *layer, double *out);

/**
 * Writes the dense `ΔW` (`d × k`), without the scale.
 *
 * # Safety
 * `out` must have room for `d * k` doubles.
 */
enum SboraStatus sbora_layer_delta(const struct SboraLayer *layer, double *out);

/**
 * Saves the base weight and the adapter as two SBORA1 checkpoints.
 *
 * # Safety
 * Both paths must be NUL-terminated UTF-8.
 */
enum SboraStatus sbora_layer_save(const struct SboraLayer *layer,
                                  const char *base_path,
                                  const char *adapter_path);

/**
 * Loads a layer from 64-bit base and adapter checkpoints. The scale is 1.
 *
 * # Safety
 * Both paths must be NUL-terminated UTF-8 and `out` writable.
 */
enum SboraStatus sbora_layer_load(const char *base_path,
                                  const char *adapter_path,
                                  struct SboraLayer **out);

/**
 * Closed-form parameter and operation counts.
 *
 * # Safety
 * `out` must be writable.
 */
enum SboraStatus sbora_analytic_cost(uint32_t kind,
                                     uint64_t d,
                                     uint64_t k,
                                     uint64_t r,
                                     struct SboraCost *out);

/**
 * Sets `*disjoint` to whether two index sets over `0..dim` share no index.
 *
 * # Safety
 * `a` and `b` must hold `a_len` and `b_len` values; `disjoint` writable.
 */
enum SboraStatus sbora_orthogonality_check(size_t dim,
                                           const size_t *a,
                                           size_t a_len,
                                           const size_t *b,
                                           size_t b_len,
                                           bool *disjoint);

/**
 * NF4-quantizes a `rows × cols` matrix in blocks of `block_size`.
 *
 * # Safety
 * `data` must hold `rows * cols` doubles and `out` be writable.
 */
enum SboraStatus sbora_quantize(const double *data,
                                size_t rows,
                                size_t cols,
                                size_t block_size,
                                struct SboraQuantized **out);

/**
 * Releases a quantized matrix. Null is ignored.
 *
 * # Safety
 * `q` must come from this library and not be used afterwards.
 */
void sbora_quantized_free(struct SboraQuantized *q);

/**
 * Writes the dequantized matrix (`rows × cols`).
 *
 * # Safety
 * `out` must have room for `len` doubles.
 */
enum SboraStatus sbora_quantized_dequantize(const struct SboraQuantized *q,
                                            double *out,
                                            size_t len);

/**
 * Saves a quantized matrix in the SBQ4NF format.
 *
 * # Safety
 * `path` must be NUL-terminated UTF-8.
 */
enum SboraStatus sbora_quantized_save(const struct SboraQuantized *q, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SBORA_H */
