#ifndef MP_H
#define MP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MpSide {
  MP_SIDE_LEFT = 0,
  MP_SIDE_RIGHT = 1,
} MpSide;

typedef enum MpStatus {
  MP_STATUS_OK = 0,
  MP_STATUS_NULL_ARGUMENT = 1,
  MP_STATUS_INVALID_UTF8 = 2,
  MP_STATUS_PARSE = 3,
  MP_STATUS_SCHEMA = 4,
  MP_STATUS_NOT_FOUND = 5,
  MP_STATUS_CONFLICT = 6,
  MP_STATUS_IO = 7,
  MP_STATUS_INVALID = 8,
  MP_STATUS_PANIC = 9,
} MpStatus;

/**
 * An open repository.
 */
typedef struct MpRepo MpRepo;

/**
 * The outcome of conflict detection between two branches.
 */
typedef struct MpReport MpReport;

/**
 * A reconciliation in progress between two branches.
 */
typedef struct MpSession MpSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Owned by the
 * library; valid until the next call on the same thread.
 */
const char *mp_last_error(void);

/**
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void mp_string_free(char *s);

/**
 * Create a repository at `root` from the CSV file at `csv_path`.
 *
 * # Safety
 * String arguments must be valid NUL-terminated strings; `out` must be writable.
 */
enum MpStatus mp_repo_init(const char *root,
                           const char *csv_path,
                           const char *table,
                           struct MpRepo **out);

/**
 * # Safety
 * `root` must be a valid NUL-terminated string; `out` must be writable.
 */
enum MpStatus mp_repo_open(const char *root, struct MpRepo **out);

/**
 * # Safety
 * `repo` must come from `mp_repo_open`/`mp_repo_init` or be null.
 */
void mp_repo_free(struct MpRepo *repo);

/**
 * Append one SQL statement to `branch`.
 *
 * # Safety
 * `repo` must be a live handle; strings must be valid NUL-terminated strings.
 */
enum MpStatus mp_repo_commit(struct MpRepo *repo, const char *branch, const char *statement);

/**
 * The current table of `branch` as CSV.
 *
 * # Safety
 * `repo` must be a live handle; `out` must be writable.
 */
enum MpStatus mp_repo_snapshot_csv(struct MpRepo *repo, const char *branch, char **out);

/**
 * Run conflict detection between the pending histories of two branches.
 *
 * # Safety
 * `repo` must be a live handle; `out` must be writable.
 */
enum MpStatus mp_detect(struct MpRepo *repo,
                        const char *left,
                        const char *right,
                        struct MpReport **out);

/**
 * # Safety
 * `report` must be a live handle.
 */
bool mp_report_auto_mergeable(const struct MpReport *report);

/**
 * Number of flagged rows; 0 for a null handle.
 *
 * # Safety
 * `report` must be a live handle or null.
 */
size_t mp_report_conflict_count(const struct MpReport *report);

/**
 * # Safety
 * `report` must be a live handle; `out` must be writable.
 */
enum MpStatus mp_report_json(const struct MpReport *report, char **out);

/**
 * # Safety
 * `report` must come from `mp_detect` or be null.
 */
void mp_report_free(struct MpReport *report);

/**
 * Begin reconciling `left` with `right`.
 *
 * # Safety
 * `repo` must be a live handle; `out` must be writable.
 */
enum MpStatus mp_session_start(struct MpRepo *repo,
                               const char *left,
                               const char *right,
                               struct MpSession **out);

/**
 * # Safety
 * `session` must be a live handle or null.
 */
bool mp_session_is_done(const struct MpSession *session);

/**
 * # Safety
 * `session` must be a live handle or null.
 */
size_t mp_session_questions(const struct MpSession *session);

/**
 * Current session state as JSON: either the pending prompt or the final order.
 *
 * # Safety
 * `session` must be a live handle; `out` must be writable.
 */
enum MpStatus mp_session_state_json(const struct MpSession *session, char **out);

/**
 * Say which of the two prompted modifications goes first.
 *
 * # Safety
 * `session` must be a live handle.
 */
enum MpStatus mp_session_answer(struct MpSession *session, enum MpSide first);

/**
 * Write the merged result of a finished session to `target`.
 *
 * # Safety
 * Both handles must be live; `target` must be a valid NUL-terminated string.
 */
enum MpStatus mp_session_finalize(struct MpRepo *repo,
                                  const struct MpSession *session,
                                  const char *target);

/**
 * # Safety
 * `session` must come from `mp_session_start` or be null.
 */
void mp_session_free(struct MpSession *session);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MP_H */
