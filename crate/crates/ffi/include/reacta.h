#ifndef REACTA_H
#define REACTA_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ReactaStatus {
  REACTA_STATUS_OK = 0,
  REACTA_STATUS_NULL_ARGUMENT = 1,
  REACTA_STATUS_INVALID_UTF8 = 2,
  REACTA_STATUS_INVALID_ARGUMENT = 3,
  REACTA_STATUS_MISSING = 4,
  REACTA_STATUS_IO = 5,
  REACTA_STATUS_MALFORMED = 6,
  REACTA_STATUS_CONFIG = 7,
  REACTA_STATUS_INTERNAL = 8,
} ReactaStatus;

/**
 * One ranked list; track ids stay valid until the list is freed.
 */
typedef struct ReactaRecommendation ReactaRecommendation;

/**
 * A data directory plus one loaded model.
 */
typedef struct ReactaRecommender ReactaRecommender;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until
 * the next failing call on the same thread.
 */
const char *reacta_last_error(void);

/**
 * Library version as a static string.
 */
const char *reacta_version(void);

/**
 * Opens a built data directory and a trained run.
 *
 * `model` is one of `reacta-u`, `reacta-p`, `pisa-u`, `pisa-p`,
 * `actr-bpr`, `actr-repeat`; `run_dir` may be null for `actr-repeat`.
 * `decay` is the base-level decay (0.5 by default) and `session_gap` the
 * seconds between the last session and the predicted one (1800).
 *
 * # Safety
 * String arguments must be null or nul-terminated; `out` must be writable.
 */
enum ReactaStatus reacta_recommender_open(const char *data_dir,
                                          const char *run_dir,
                                          const char *model,
                                          double decay,
                                          int64_t session_gap,
                                          struct ReactaRecommender **out);

/**
 * Number of users known to the data directory; 0 for a null handle.
 *
 * # Safety
 * `rec` must be null or a live handle.
 */
size_t reacta_recommender_user_count(const struct ReactaRecommender *rec);

/**
 * Id of user `i`, or null when out of range; valid while `rec` lives.
 *
 * # Safety
 * `rec` must be null or a live handle.
 */
const char *reacta_recommender_user(const struct ReactaRecommender *rec, size_t i);

/**
 * Recommends the next session of `user` as a list of at most `k` tracks.
 *
 * # Safety
 * `rec` must be a live handle, `user` nul-terminated, `out` writable.
 */
enum ReactaStatus reacta_recommend(const struct ReactaRecommender *rec,
                                   const char *user,
                                   size_t k,
                                   struct ReactaRecommendation **out);

/**
 * # Safety
 * `list` must be null or a live list.
 */
size_t reacta_recommendation_len(const struct ReactaRecommendation *list);

/**
 * Track id at rank `i`, or null when out of range.
 *
 * # Safety
 * `list` must be null or a live list.
 */
const char *reacta_recommendation_track(const struct ReactaRecommendation *list, size_t i);

/**
 * Score at rank `i`, NaN when out of range.
 *
 * # Safety
 * `list` must be null or a live list.
 */
double reacta_recommendation_score(const struct ReactaRecommendation *list, size_t i);

/**
 * Whether the track at rank `i` was heard in the observed sessions.
 *
 * # Safety
 * `list` must be null or a live list.
 */
bool reacta_recommendation_repeated(const struct ReactaRecommendation *list, size_t i);

/**
 * # Safety
 * `list` must be null or a handle not yet freed.
 */
void reacta_recommendation_free(struct ReactaRecommendation *list);

/**
 * # Safety
 * `rec` must be null or a handle not yet freed.
 */
void reacta_recommender_free(struct ReactaRecommender *rec);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REACTA_H */
