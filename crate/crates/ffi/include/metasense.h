#ifndef METASENSE_H
#define METASENSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MsStatus {
  MS_STATUS_OK = 0,
  MS_STATUS_NULL_ARGUMENT = 1,
  MS_STATUS_INVALID_UTF8 = 2,
  MS_STATUS_IO = 3,
  MS_STATUS_PARSE = 4,
  MS_STATUS_UNKNOWN_SYNSET = 5,
  MS_STATUS_CONFIG = 6,
  MS_STATUS_DATA = 7,
  MS_STATUS_CONTRACT = 8,
  MS_STATUS_UNDEFINED_CORRELATION = 9,
  MS_STATUS_BUFFER_TOO_SMALL = 10,
  MS_STATUS_PANIC = 11,
  MS_STATUS_OTHER = 12,
} MsStatus;

typedef struct MsMapper MsMapper;

typedef struct MsModel MsModel;

typedef struct MsTaxonomy MsTaxonomy;

/**
 * A synset: part-of-speech tag (`n`, `v`, `a`, `r`) and database offset.
 */
typedef struct MsSynset {
  char pos;
  uint32_t offset;
} MsSynset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *ms_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ms_version(void);

/**
 * Loads a WordNet `dict` directory.
 *
 * # Safety
 * `dir` must be a valid C string and `out` a valid pointer.
 */
enum MsStatus ms_taxonomy_load(const char *dir, struct MsTaxonomy **out);

/**
 * # Safety
 * `t` must be null or a handle from [`ms_taxonomy_load`] not yet freed.
 */
void ms_taxonomy_free(struct MsTaxonomy *t);

/**
 * Number of synsets, excluding the virtual root.
 *
 * # Safety
 * `t` must be a live taxonomy handle and `out` a valid pointer.
 */
enum MsStatus ms_taxonomy_len(const struct MsTaxonomy *t, size_t *out);

/**
 * Resolves `lemma.pos.NN` or `pos:offset` to a synset.
 *
 * # Safety
 * `t` must be a live handle, `key` a valid C string, `out` a valid pointer.
 */
enum MsStatus ms_taxonomy_resolve(const struct MsTaxonomy *t,
                                  const char *key,
                                  struct MsSynset *out);

/**
 * Hypernym-path depth with the virtual root at depth 1.
 *
 * # Safety
 * `t` must be a live handle and `out` a valid pointer.
 */
enum MsStatus ms_taxonomy_depth(const struct MsTaxonomy *t, struct MsSynset s, uint32_t *out);

/**
 * # Safety
 * `t` must be a live handle and `out` a valid pointer.
 */
enum MsStatus ms_taxonomy_lcs(const struct MsTaxonomy *t,
                              struct MsSynset a,
                              struct MsSynset b,
                              struct MsSynset *out);

/**
 * # Safety
 * `t` must be a live handle and `out` a valid pointer.
 */
enum MsStatus ms_wu_palmer(const struct MsTaxonomy *t,
                           struct MsSynset a,
                           struct MsSynset b,
                           double *out);

/**
 * Builds a mapper over the shipped anchor table, or over the table at
 * `table_path` when it is not null. The taxonomy handle may be freed
 * afterwards.
 *
 * # Safety
 * `t` must be a live handle, `table_path` null or a valid C string, `out`
 * a valid pointer.
 */
enum MsStatus ms_mapper_new(const struct MsTaxonomy *t,
                            const char *table_path,
                            struct MsMapper **out);

/**
 * # Safety
 * `m` must be null or a handle from [`ms_mapper_new`] not yet freed.
 */
void ms_mapper_free(struct MsMapper *m);

/**
 * Writes the meta-sense code of a noun synset into `buf` (NUL-terminated)
 * and its path distance to the anchor into `distance` when not null.
 *
 * # Safety
 * `m` must be a live handle and `buf` valid for `buf_len` bytes.
 */
enum MsStatus ms_mapper_map(const struct MsMapper *m,
                            struct MsSynset s,
                            char *buf,
                            size_t buf_len,
                            uint32_t *distance);

/**
 * Loads an encoder checkpoint directory.
 *
 * # Safety
 * `dir` must be a valid C string and `out` a valid pointer.
 */
enum MsStatus ms_model_load(const char *dir, struct MsModel **out);

/**
 * # Safety
 * `m` must be null or a handle from [`ms_model_load`] not yet freed.
 */
void ms_model_free(struct MsModel *m);

/**
 * Hidden size of the model.
 *
 * # Safety
 * `m` must be a live handle and `out` a valid pointer.
 */
enum MsStatus ms_model_dim(const struct MsModel *m, size_t *out);

/**
 * Vocabulary id of `token`; fails with `Data` when it is unknown.
 *
 * # Safety
 * `m` must be a live handle, `token` a valid C string, `out` a valid pointer.
 */
enum MsStatus ms_model_token_id(const struct MsModel *m, const char *token, uint32_t *out);

/**
 * Final-layer hidden state at `position` of the sentence `ids[..n_ids]`,
 * written to `out[..out_len]`; `out_len` must equal the model dimension.
 *
 * # Safety
 * `m` must be a live handle, `ids` valid for `n_ids` reads and `out` valid
 * for `out_len` writes.
 */
enum MsStatus ms_model_encode(const struct MsModel *m,
                              const uint32_t *ids,
                              size_t n_ids,
                              size_t position,
                              double *out,
                              size_t out_len);

/**
 * Pearson correlation of `x[..n]` and `y[..n]` with a two-sided p-value.
 *
 * # Safety
 * `x` and `y` must be valid for `n` reads; `rho` and `p` valid pointers.
 */
enum MsStatus ms_pearson(const double *x, const double *y, size_t n, double *rho, double *p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* METASENSE_H */
