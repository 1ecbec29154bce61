#ifndef TURNGATE_H
#define TURNGATE_H

/* Generated by cbindgen from the turngate-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes returned by every fallible call.
typedef enum TgStatus {
  TG_STATUS_OK = 0,
  TG_STATUS_NULL_ARGUMENT = 1,
  TG_STATUS_INVALID_UTF8 = 2,
  TG_STATUS_PARSE_ERROR = 3,
  TG_STATUS_UNKNOWN_AGENT = 4,
  TG_STATUS_INVALID_STATE = 5,
  TG_STATUS_BUFFER_TOO_SMALL = 6,
  TG_STATUS_RUNTIME_ERROR = 7,
} TgStatus;

// Participant roles.
typedef enum TgRole {
  TG_ROLE_USER = 0,
  TG_ROLE_BOT = 1,
} TgRole;

// Gate verdicts.
typedef enum TgVerdict {
  TG_VERDICT_ALLOW = 0,
  TG_VERDICT_DENY = 1,
} TgVerdict;

// Opaque conversation. Participants are registered first; the rule state
// starts on the first event or gate query and is fixed from then on.
typedef struct TgConversation TgConversation;

// Opaque parsed ruleset.
typedef struct TgRuleset TgRuleset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *tg_version(void);

// Copy the calling thread's last error message into `buf`. Returns the
// number of bytes the full message needs, including the terminator; the
// copy is truncated if `len` is smaller.
//
// # Safety
// `buf` must point to at least `len` writable bytes, or be null (size
// query).
size_t tg_last_error(char *buf, size_t len);

// Parse conversation-rules source into a ruleset handle, or null on error
// (see [`tg_last_error`]). Free with [`tg_ruleset_free`].
//
// # Safety
// `source` must be a valid NUL-terminated string.
struct TgRuleset *tg_ruleset_parse(const char *source);

// Number of norms in the ruleset.
//
// # Safety
// `rules` must be a live handle from [`tg_ruleset_parse`].
size_t tg_ruleset_norm_count(const struct TgRuleset *rules);

// Number of transitions in the ruleset.
//
// # Safety
// `rules` must be a live handle from [`tg_ruleset_parse`].
size_t tg_ruleset_transition_count(const struct TgRuleset *rules);

// # Safety
// `rules` must come from [`tg_ruleset_parse`] and not be freed twice.
void tg_ruleset_free(struct TgRuleset *rules);

// Create an empty conversation bound to a ruleset. Free with
// [`tg_conversation_free`].
//
// # Safety
// `rules` must be a live handle from [`tg_ruleset_parse`].
struct TgConversation *tg_conversation_new(const struct TgRuleset *rules);

// Register a participant. Must happen before the first event or gate call.
//
// # Safety
// `conv` must be a live handle; `name` a valid NUL-terminated string.
enum TgStatus tg_conversation_add_participant(struct TgConversation *conv,
                                              const char *name,
                                              enum TgRole role);

// Accept a message into the conversation: expires and activates norms and
// advances the phase state. `expected` may be null.
//
// # Safety
// `conv` and `rules` must be live handles; `sender` and `text` valid
// NUL-terminated strings; `expected` null or a valid string.
enum TgStatus tg_apply_event(struct TgConversation *conv,
                             const struct TgRuleset *rules,
                             const char *sender,
                             const char *text,
                             const char *expected);

// Gate an attempted message without mutating the conversation.
//
// On success writes the verdict to `verdict_out` and, when
// `justification_buf` is non-null, the deciding norm ids as a
// NUL-terminated JSON array (truncation yields
// [`TgStatus::BufferTooSmall`]).
//
// # Safety
// `conv` and `rules` must be live handles; `sender` and `text` valid
// NUL-terminated strings; `verdict_out` a valid pointer;
// `justification_buf` null or `justification_len` writable bytes.
enum TgStatus tg_gate(struct TgConversation *conv,
                      const struct TgRuleset *rules,
                      const char *sender,
                      const char *text,
                      enum TgVerdict *verdict_out,
                      char *justification_buf,
                      size_t justification_len);

// Reset the conversation to the ruleset's initial state, keeping the
// participant roster.
//
// # Safety
// `conv` and `rules` must be live handles.
enum TgStatus tg_conversation_reset(struct TgConversation *conv, const struct TgRuleset *rules);

// # Safety
// `conv` must come from [`tg_conversation_new`] and not be freed twice.
void tg_conversation_free(struct TgConversation *conv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TURNGATE_H */
