#ifndef MIEN_ASR_H
#define MIEN_ASR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum MienStatus {
  MIEN_STATUS_OK = 0,
  MIEN_STATUS_NULL_POINTER = 1,
  MIEN_STATUS_INVALID_UTF8 = 2,
  MIEN_STATUS_IO = 3,
  MIEN_STATUS_FORMAT = 4,
  MIEN_STATUS_INVALID_ARGUMENT = 5,
  /**
   * Output buffer too small; the required length was still written.
   */
  MIEN_STATUS_BUFFER_TOO_SMALL = 6,
  MIEN_STATUS_PANIC = 7,
} MienStatus;

typedef struct MienBpe MienBpe;

typedef struct MienDecoder MienDecoder;

typedef struct MienG2p MienG2p;

typedef struct MienInventory MienInventory;

typedef struct MienLm MienLm;

/**
 * Search parameters; see [`mien_decode_params_default`].
 */
typedef struct MienDecodeParams {
  size_t beam_size;
  double lm_weight;
  double word_insertion_penalty;
} MienDecodeParams;

/**
 * Edit counts of one scored pair.
 */
typedef struct MienScore {
  size_t substitutions;
  size_t deletions;
  size_t insertions;
  size_t reference_length;
  double rate;
} MienScore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; empty if none. Owned by the
 * library.
 */
const char *mien_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void mien_string_free(char *s);

/**
 * # Safety
 * Out-pointers must be valid for writes.
 */
enum MienStatus mien_inventory_builtin(struct MienInventory **out_inv);

/**
 * # Safety
 * `path` must be a valid C string and out-pointers valid for writes.
 */
enum MienStatus mien_inventory_load(const char *path, struct MienInventory **out_inv);

/**
 * # Safety
 * `inv` must be null or a live inventory handle.
 */
void mien_inventory_free(struct MienInventory *inv);

/**
 * Decompose a word; one `initial,medial,main,coda,tone` group per syllable,
 * space separated, `-` for empty slots.
 *
 * # Safety
 * Pointers must be valid; the out-pointer receives a string to free with
 * [`mien_string_free`].
 */
enum MienStatus mien_parse_word(const struct MienInventory *inv, const char *word, char **out_text);

/**
 * # Safety
 * Out-pointers must be valid for writes.
 */
enum MienStatus mien_g2p_builtin(struct MienG2p **out_table);

/**
 * # Safety
 * `path` must be a valid C string and out-pointers valid for writes.
 */
enum MienStatus mien_g2p_load(const char *path, struct MienG2p **out_table);

/**
 * # Safety
 * `table` must be null or a live G2P handle.
 */
void mien_g2p_free(struct MienG2p *table);

/**
 * Space-separated pronunciation of `word`.
 *
 * # Safety
 * Pointers must be valid; the out-pointer receives a string to free with
 * [`mien_string_free`].
 */
enum MienStatus mien_g2p(const struct MienG2p *table,
                         const struct MienInventory *inv,
                         const char *word,
                         char **out_pron);

/**
 * # Safety
 * `path` must be a valid C string and out-pointers valid for writes.
 */
enum MienStatus mien_lm_load(const char *path, struct MienLm **out_lm);

/**
 * Train on newline-separated sentences. `smoothing` is `kn`, `absolute` or
 * `mle`.
 *
 * # Safety
 * Strings must be valid C strings and out-pointers valid for writes.
 */
enum MienStatus mien_lm_train(const char *corpus,
                              size_t order,
                              const char *smoothing,
                              struct MienLm **out_lm);

/**
 * # Safety
 * `lm` must be a live handle and `path` a valid C string.
 */
enum MienStatus mien_lm_write(const struct MienLm *lm, const char *path);

/**
 * log10 probability of a whitespace-separated sentence with both markers.
 *
 * # Safety
 * Pointers must be valid.
 */
enum MienStatus mien_lm_sentence_log10(const struct MienLm *lm,
                                       const char *sentence,
                                       double *out_score);

/**
 * # Safety
 * `lm` must be null or a live handle.
 */
void mien_lm_free(struct MienLm *lm);

/**
 * # Safety
 * `path` must be a valid C string and out-pointers valid for writes.
 */
enum MienStatus mien_bpe_load(const char *path, struct MienBpe **out_bpe);

/**
 * # Safety
 * `bpe` must be null or a live handle.
 */
void mien_bpe_free(struct MienBpe *bpe);

/**
 * Encode text into `ids[0..cap]`. `len` always receives the full length.
 *
 * # Safety
 * `ids` must hold `cap` elements; other pointers must be valid.
 */
enum MienStatus mien_bpe_encode(const struct MienBpe *bpe,
                                const char *input,
                                uint32_t *ids,
                                size_t cap,
                                size_t *len);

/**
 * # Safety
 * `ids` must hold `len` elements; other pointers must be valid.
 */
enum MienStatus mien_bpe_decode(const struct MienBpe *bpe,
                                const uint32_t *ids,
                                size_t len,
                                char **out_text);

/**
 * Negative log-likelihood of `labels`; `INFINITY` when infeasible.
 *
 * # Safety
 * `logprobs` must hold `frames * vocab` values and `labels` `n_labels`.
 */
enum MienStatus mien_ctc_loss(const double *logprobs,
                              size_t frames,
                              size_t vocab,
                              const uint32_t *labels,
                              size_t n_labels,
                              double *out_loss);

/**
 * Loss and its gradient with respect to the pre-softmax logits, written to
 * `grad[0..frames*vocab]`.
 *
 * # Safety
 * `grad` must hold `frames * vocab` values; other buffers as for
 * [`mien_ctc_loss`].
 */
enum MienStatus mien_ctc_loss_grad(const double *logprobs,
                                   size_t frames,
                                   size_t vocab,
                                   const uint32_t *labels,
                                   size_t n_labels,
                                   double *out_loss,
                                   double *grad);

/**
 * Best-path decoding: argmax per frame, repeats merged, blanks removed.
 *
 * # Safety
 * `ids` must hold `cap` elements; other buffers as for [`mien_ctc_loss`].
 */
enum MienStatus mien_greedy_decode(const double *logprobs,
                                   size_t frames,
                                   size_t vocab,
                                   uint32_t *ids,
                                   size_t cap,
                                   size_t *len);

struct MienDecodeParams mien_decode_params_default(void);

/**
 * Lexicon-constrained phoneme decoder; the emission columns follow the
 * vocabulary file.
 *
 * # Safety
 * Paths must be valid C strings and out-pointers valid for writes.
 */
enum MienStatus mien_phoneme_decoder_new(const char *lexicon_path,
                                         const char *vocab_path,
                                         const char *lm_path,
                                         struct MienDecoder **out_dec);

/**
 * Subword decoder; the emission columns follow the BPE vocabulary.
 *
 * # Safety
 * Paths must be valid C strings and out-pointers valid for writes.
 */
enum MienStatus mien_subword_decoder_new(const char *bpe_path,
                                         const char *lm_path,
                                         struct MienDecoder **out_dec);

/**
 * # Safety
 * `dec` must be null or a live handle.
 */
void mien_decoder_free(struct MienDecoder *dec);

/**
 * Best hypothesis as space-separated words, plus its total score.
 *
 * # Safety
 * `logprobs` must hold `frames * vocab` values; `out_text` receives a string
 * to free with [`mien_string_free`]; `out_score` may be null.
 */
enum MienStatus mien_decode(const struct MienDecoder *dec,
                            const double *logprobs,
                            size_t frames,
                            size_t vocab,
                            struct MienDecodeParams params,
                            char **out_text,
                            double *out_score);

/**
 * Edit counts between whitespace-tokenized reference and hypothesis.
 *
 * # Safety
 * Strings must be valid C strings and out-pointers valid for writes.
 */
enum MienStatus mien_error_rate(const char *reference,
                                const char *hypothesis,
                                struct MienScore *out_score);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIEN_ASR_H */
