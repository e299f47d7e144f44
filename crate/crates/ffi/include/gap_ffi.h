#ifndef GAP_FFI_H
#define GAP_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GapStatus {
  GAP_STATUS_OK = 0,
  GAP_STATUS_NULL_POINTER = 1,
  GAP_STATUS_INVALID_UTF8 = 2,
  GAP_STATUS_PARSE = 3,
  GAP_STATUS_VALIDATION = 4,
  GAP_STATUS_MISSING_ARTIFACT = 5,
  GAP_STATUS_INVALID_ARGUMENT = 6,
  GAP_STATUS_PANIC = 7,
} GapStatus;

typedef struct GapAnonymizer GapAnonymizer;

typedef struct GapCorpus GapCorpus;

typedef struct GapExpansion GapExpansion;

/**
 * Character offsets of the three mentions in one variant.
 */
typedef struct GapOffsets {
  uintptr_t pronoun;
  uintptr_t a;
  uintptr_t b;
} GapOffsets;

/**
 * Probabilities for (A, B, Neither).
 */
typedef struct GapTriple {
  double a;
  double b;
  double neither;
} GapTriple;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *gap_last_error_message(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void gap_string_free(char *s);

/**
 * Parse a GAP TSV file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_corpus` a valid pointer.
 */
enum GapStatus gap_corpus_parse_file(const char *path, struct GapCorpus **out_corpus);

/**
 * Parse GAP TSV text held in memory.
 *
 * # Safety
 * `tsv` must be a NUL-terminated string; `out_corpus` a valid pointer.
 */
enum GapStatus gap_corpus_parse_str(const char *tsv, struct GapCorpus **out_corpus);

/**
 * # Safety
 * `corpus` must be a handle from `gap_corpus_parse_*`; `out_len` a valid pointer.
 */
enum GapStatus gap_corpus_len(const struct GapCorpus *corpus, uintptr_t *out_len);

/**
 * Example id at `index`, as a new string.
 *
 * # Safety
 * `corpus` must be a valid handle; `out_id` a valid pointer.
 */
enum GapStatus gap_corpus_id(const struct GapCorpus *corpus, uintptr_t index, char **out_id);

/**
 * # Safety
 * `corpus` must be null or a handle not yet freed.
 */
void gap_corpus_free(struct GapCorpus *corpus);

/**
 * Anonymizer with the four standard placeholder sets.
 *
 * # Safety
 * `out_anonymizer` must be a valid pointer.
 */
enum GapStatus gap_anonymizer_new(bool widen_cond1, struct GapAnonymizer **out_anonymizer);

/**
 * # Safety
 * `anonymizer` must be null or a handle not yet freed.
 */
void gap_anonymizer_free(struct GapAnonymizer *anonymizer);

/**
 * Expand the example at `index` into its original and anonymized variants.
 *
 * # Safety
 * Handles must be valid; `out_expansion` a valid pointer.
 */
enum GapStatus gap_expand(const struct GapAnonymizer *anonymizer,
                          const struct GapCorpus *corpus,
                          uintptr_t index,
                          struct GapExpansion **out_expansion);

/**
 * Number of usable variants, the original included.
 *
 * # Safety
 * `expansion` must be a valid handle; `out_len` a valid pointer.
 */
enum GapStatus gap_expansion_len(const struct GapExpansion *expansion, uintptr_t *out_len);

/**
 * Variant `index` as a JSON object, the same shape as one line of variants.jsonl.
 *
 * # Safety
 * `expansion` must be a valid handle; `out_json` a valid pointer.
 */
enum GapStatus gap_expansion_variant_json(const struct GapExpansion *expansion,
                                          uintptr_t index,
                                          char **out_json);

/**
 * # Safety
 * `expansion` must be a valid handle; `out_offsets` a valid pointer.
 */
enum GapStatus gap_expansion_offsets(const struct GapExpansion *expansion,
                                     uintptr_t index,
                                     struct GapOffsets *out_offsets);

/**
 * # Safety
 * `expansion` must be null or a handle not yet freed.
 */
void gap_expansion_free(struct GapExpansion *expansion);

/**
 * Skip-condition coverage of the whole corpus, as JSON.
 *
 * # Safety
 * Handles must be valid; `out_json` a valid pointer.
 */
enum GapStatus gap_coverage_json(const struct GapAnonymizer *anonymizer,
                                 const struct GapCorpus *corpus,
                                 char **out_json);

/**
 * Mean log loss; `labels` holds 0 (A), 1 (B) or 2 (Neither).
 *
 * # Safety
 * `preds` and `labels` must point to `n` elements; `out_loss` a valid pointer.
 */
enum GapStatus gap_log_loss(const struct GapTriple *preds,
                            const uint8_t *labels,
                            uintptr_t n,
                            double *out_loss);

/**
 * Floor each probability at `threshold`, in place.
 *
 * # Safety
 * `preds` must point to `n` elements.
 */
enum GapStatus gap_clip(struct GapTriple *preds, uintptr_t n, double threshold);

/**
 * Masculine over feminine log loss.
 *
 * # Safety
 * `out_ratio` must be a valid pointer.
 */
enum GapStatus gap_bias_ratio(double feminine, double masculine, double *out_ratio);

/**
 * Deterministic stub embedding of `surface`; `role` is 0 (A), 1 (B) or 2 (pronoun).
 *
 * # Safety
 * `surface` must be a NUL-terminated string; `out_vec` must hold `dim` floats.
 */
enum GapStatus gap_stub_vector(const char *surface,
                               uint8_t role,
                               int32_t layer,
                               uintptr_t dim,
                               uint64_t seed,
                               float *out_vec);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAP_FFI_H */
