/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef ELASTICA_H
#define ELASTICA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ElasticaStatus {
  ELASTICA_STATUS_OK = 0,
  ELASTICA_STATUS_NULL_POINTER = 1,
  ELASTICA_STATUS_INVALID_UTF8 = 2,
  ELASTICA_STATUS_BUFFER_TOO_SMALL = 3,
  ELASTICA_STATUS_EMPTY_DATASET = 10,
  ELASTICA_STATUS_INVALID_TOKEN = 11,
  ELASTICA_STATUS_UNTERMINATED = 12,
  ELASTICA_STATUS_DEPTH_MISMATCH = 13,
  ELASTICA_STATUS_SUPPORT_MISMATCH = 14,
  ELASTICA_STATUS_OUT_OF_MODEL = 15,
  ELASTICA_STATUS_INVALID_ARGUMENT = 16,
  ELASTICA_STATUS_PARSE_ERROR = 17,
  ELASTICA_STATUS_BLOB_ERROR = 18,
  ELASTICA_STATUS_OTHER = 98,
  ELASTICA_STATUS_PANIC = 99,
} ElasticaStatus;

/**
 * Which normalized rate [`elastica_gamma_mc`] estimates.
 */
typedef enum ElasticaComponent {
  ELASTICA_COMPONENT_PRETRAIN = 0,
  ELASTICA_COMPONENT_ALIGNMENT = 1,
} ElasticaComponent;

/**
 * Huffman code over a tree's leaves, with the tree it was built for.
 */
typedef struct ElasticaCode ElasticaCode;

/**
 * Pruned token tree.
 */
typedef struct ElasticaTree ElasticaTree;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *elastica_last_error(void);

/**
 * Library version, a static NUL-terminated string.
 */
const char *elastica_version(void);

/**
 * Builds the token tree of a dataset in the text format (one response per
 * line, optional ` x<count>`, `-` for the empty response) and prunes it at
 * `depth`.
 *
 * # Safety
 * `dataset` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ElasticaStatus elastica_tree_from_dataset(const char *dataset,
                                               uintptr_t depth,
                                               struct ElasticaTree **out);

/**
 * # Safety
 * `tree` must come from `elastica_tree_from_dataset` and not be freed twice.
 */
void elastica_tree_free(struct ElasticaTree *tree);

/**
 * # Safety
 * Pointers must be valid.
 */
enum ElasticaStatus elastica_tree_leaf_count(const struct ElasticaTree *tree, uintptr_t *out);

/**
 * Leaf entropy in bits.
 *
 * # Safety
 * Pointers must be valid.
 */
enum ElasticaStatus elastica_tree_entropy(const struct ElasticaTree *tree, double *out);

/**
 * Cross-entropy of `data` under `model`, in bits.
 *
 * # Safety
 * Pointers must be valid.
 */
enum ElasticaStatus elastica_cross_entropy(const struct ElasticaTree *data,
                                           const struct ElasticaTree *model,
                                           double *out);

/**
 * Cross-entropy minus `log2 M`, `M` the data tree's leaf count.
 *
 * # Safety
 * Pointers must be valid.
 */
enum ElasticaStatus elastica_normalized_rate(const struct ElasticaTree *data,
                                             const struct ElasticaTree *model,
                                             double *out);

/**
 * `ceil(len/d) * ceil(H)` bits for a response of `response_len` tokens.
 *
 * # Safety
 * Pointers must be valid.
 */
enum ElasticaStatus elastica_ideal_code_length(const struct ElasticaTree *tree,
                                               uintptr_t response_len,
                                               uint64_t *out);

/**
 * # Safety
 * Pointers must be valid.
 */
enum ElasticaStatus elastica_code_build(const struct ElasticaTree *tree, struct ElasticaCode **out);

/**
 * # Safety
 * `code` must come from `elastica_code_build` and not be freed twice.
 */
void elastica_code_free(struct ElasticaCode *code);

/**
 * Expected codeword length under the tree's own leaf distribution.
 *
 * # Safety
 * Pointers must be valid.
 */
enum ElasticaStatus elastica_code_expected_length(const struct ElasticaCode *code, double *out);

/**
 * Encodes a `'0'`/`'1'` response (empty string for the empty response) into
 * one blob in the on-disk blob format.
 *
 * # Safety
 * `response` must be NUL-terminated; `buf` must hold `cap` bytes.
 */
enum ElasticaStatus elastica_encode(const struct ElasticaCode *code,
                                    const char *response,
                                    uint8_t *buf,
                                    uintptr_t cap,
                                    uintptr_t *out_len);

/**
 * Decodes one blob into a NUL-terminated `'0'`/`'1'` string. `out_len`
 * receives the length including the terminator.
 *
 * # Safety
 * `blob` must hold `blob_len` bytes and `buf` must hold `cap` bytes.
 */
enum ElasticaStatus elastica_decode(const struct ElasticaCode *code,
                                    const uint8_t *blob,
                                    uintptr_t blob_len,
                                    char *buf,
                                    uintptr_t cap,
                                    uintptr_t *out_len);

/**
 * Monte-Carlo estimate of one normalized rate at `(k, l)` under the
 * unit-mean Pareto law with tail index `alpha` (`alpha <= 0` selects the
 * point mass `X = 1`).
 *
 * # Safety
 * Output pointers must be valid.
 */
enum ElasticaStatus elastica_gamma_mc(double k,
                                      double alpha,
                                      double l,
                                      uint64_t n_samples,
                                      uint64_t seed,
                                      enum ElasticaComponent component,
                                      double *out_mean,
                                      double *out_se);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ELASTICA_H */
