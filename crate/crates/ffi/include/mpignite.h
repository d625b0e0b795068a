/* C interface to the mpignite runtime. */

#ifndef MPIGNITE_H
#define MPIGNITE_H

/* Generated by cbindgen from the mpignite-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code returned by every fallible entry point.
enum MpigStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  MPIG_STATUS_OK = 0,
  MPIG_STATUS_NULL_POINTER = 1,
  MPIG_STATUS_INVALID_ARGUMENT = 2,
  MPIG_STATUS_INVALID_UTF8 = 3,
  MPIG_STATUS_TYPE_MISMATCH = 4,
  MPIG_STATUS_MALFORMED_PAYLOAD = 5,
  MPIG_STATUS_UNSUPPORTED_KIND = 6,
  MPIG_STATUS_INVALID_RANK = 7,
  MPIG_STATUS_INVALID_TAG = 8,
  MPIG_STATUS_RECEIVE_ABORTED = 9,
  MPIG_STATUS_SPLIT_PROTOCOL = 10,
  MPIG_STATUS_COLLECTIVE_ABORTED = 11,
  MPIG_STATUS_USAGE = 12,
  MPIG_STATUS_TRANSPORT_FAILURE = 13,
  MPIG_STATUS_ROUTING_ERROR = 14,
  MPIG_STATUS_APP_ERROR = 15,
  MPIG_STATUS_UNKNOWN_FUNCTION = 16,
  MPIG_STATUS_JOB_FAILED = 17,
  MPIG_STATUS_NO_WORKERS = 18,
  MPIG_STATUS_MASTER_ERROR = 19,
  MPIG_STATUS_WORKER_ERROR = 20,
  MPIG_STATUS_PANIC = 21,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum MpigStatus MpigStatus;
#else
typedef int32_t MpigStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

// Payload kind tags, matching the codec's one-byte wire tags.
enum MpigKind
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  MPIG_KIND_UNIT = 0,
  MPIG_KIND_I32 = 1,
  MPIG_KIND_I64 = 2,
  MPIG_KIND_F64 = 3,
  MPIG_KIND_BOOL = 4,
  MPIG_KIND_STR = 5,
  MPIG_KIND_BYTES = 6,
  MPIG_KIND_ARRAY_I32 = 17,
  MPIG_KIND_ARRAY_I64 = 18,
  MPIG_KIND_ARRAY_F64 = 19,
  MPIG_KIND_ARRAY_BOOL = 20,
  MPIG_KIND_ARRAY_STR = 21,
  MPIG_KIND_ARRAY_BYTES = 22,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum MpigKind MpigKind;
#else
typedef int32_t MpigKind;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

// An opaque communicator handle.
typedef struct MpigComm MpigComm;

// A running cluster master.
typedef struct MpigMaster MpigMaster;

// A name-keyed registry of parallel functions.
typedef struct MpigRegistry MpigRegistry;

// Per-rank results of one job, indexed by rank.
typedef struct MpigResults MpigResults;

// A pending asynchronous receive.
typedef struct MpigTicket MpigTicket;

// An owned typed value.
typedef struct MpigValue MpigValue;

// Completion callback for an asynchronous receive. Runs on a
// runtime-internal thread. On success `value` is owned by the callback;
// on failure it is NULL.
typedef void (*MpigTicketCallback)(MpigStatus status, struct MpigValue *value, void *user_data);

// A binary reduction: combine `a` and `b` (both borrowed) into an owned
// result. Returning NULL aborts the job.
typedef struct MpigValue *(*MpigReduceFn)(const struct MpigValue *a,
                                          const struct MpigValue *b,
                                          void *user_data);

// A parallel function body: called once per rank with a borrowed
// communicator. Return an owned value, or NULL to fail the rank (the
// thread's last error message, if any, becomes the diagnostic).
typedef struct MpigValue *(*MpigParallelFn)(struct MpigComm *comm, void *user_data);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Retrieve and clear the calling thread's last error message. Returns NULL
// when no error is recorded. Free the string with `mpig_string_free`.
char *mpig_last_error_message(void);

// Free a string returned by this library.
//
// # Safety
// `s` must be NULL or a pointer previously returned by an `mpig_` function
// documented to allocate a string, not yet freed.
void mpig_string_free(char *s);

struct MpigValue *mpig_value_unit(void);

struct MpigValue *mpig_value_i32(int32_t v);

struct MpigValue *mpig_value_i64(int64_t v);

struct MpigValue *mpig_value_f64(double v);

struct MpigValue *mpig_value_bool(bool v);

// Build a string value from NUL-terminated UTF-8. Returns NULL on invalid
// input.
//
// # Safety
// `s` must be NULL or a valid NUL-terminated string.
struct MpigValue *mpig_value_string(const char *s);

// # Safety
// `data` must point to `len` readable bytes (or `len` must be 0).
struct MpigValue *mpig_value_bytes(const uint8_t *data, size_t len);

// # Safety
// `data` must point to `len` readable elements (or `len` must be 0).
struct MpigValue *mpig_value_array_i32(const int32_t *data, size_t len);

// # Safety
// `data` must point to `len` readable elements (or `len` must be 0).
struct MpigValue *mpig_value_array_i64(const int64_t *data, size_t len);

// # Safety
// `data` must point to `len` readable elements (or `len` must be 0).
struct MpigValue *mpig_value_array_f64(const double *data, size_t len);

// # Safety
// `value` must be a live value handle or NULL; `out` must be writable.
MpigStatus mpig_value_kind(const struct MpigValue *value, MpigKind *out);

// # Safety
// `value` must be a live value handle or NULL; `out` must be writable.
MpigStatus mpig_value_get_i32(const struct MpigValue *value, int32_t *out);

// # Safety
// `value` must be a live value handle or NULL; `out` must be writable.
MpigStatus mpig_value_get_i64(const struct MpigValue *value, int64_t *out);

// # Safety
// `value` must be a live value handle or NULL; `out` must be writable.
MpigStatus mpig_value_get_f64(const struct MpigValue *value, double *out);

// # Safety
// `value` must be a live value handle or NULL; `out` must be writable.
MpigStatus mpig_value_get_bool(const struct MpigValue *value, bool *out);

// Copy a string value out as a freshly allocated C string (free with
// `mpig_string_free`).
//
// # Safety
// `value` must be a live value handle or NULL; `out` must be writable.
MpigStatus mpig_value_get_string(const struct MpigValue *value, char **out);

// Borrow the contents of a bytes value. The view is valid until the value
// is freed.
//
// # Safety
// `value` must be a live value handle or NULL; `data`/`len` must be
// writable.
MpigStatus mpig_value_get_bytes(const struct MpigValue *value, const uint8_t **data, size_t *len);

// Borrow an array value's elements. The view is valid until the value is
// freed.
//
// # Safety
// `value` must be a live value handle or NULL; `data`/`len` must be
// writable.
MpigStatus mpig_value_get_array_i32(const struct MpigValue *value,
                                    const int32_t **data,
                                    size_t *len);

// Borrow an array value's elements. The view is valid until the value is
// freed.
//
// # Safety
// `value` must be a live value handle or NULL; `data`/`len` must be
// writable.
MpigStatus mpig_value_get_array_i64(const struct MpigValue *value,
                                    const int64_t **data,
                                    size_t *len);

// Borrow an array value's elements. The view is valid until the value is
// freed.
//
// # Safety
// `value` must be a live value handle or NULL; `data`/`len` must be
// writable.
MpigStatus mpig_value_get_array_f64(const struct MpigValue *value,
                                    const double **data,
                                    size_t *len);

// # Safety
// `value` must be a live value handle or NULL.
struct MpigValue *mpig_value_clone(const struct MpigValue *value);

// # Safety
// `value` must be NULL or an owned value handle, not yet freed.
void mpig_value_free(struct MpigValue *value);

// # Safety
// `comm` must be a live communicator handle or NULL; `out` writable.
MpigStatus mpig_comm_rank(const struct MpigComm *comm, uint32_t *out);

// # Safety
// `comm` must be a live communicator handle or NULL; `out` writable.
MpigStatus mpig_comm_size(const struct MpigComm *comm, uint32_t *out);

// Send `value` (borrowed) to local rank `dst` with a non-negative tag.
// Never blocks awaiting the receiver.
//
// # Safety
// `comm` and `value` must be live handles or NULL.
MpigStatus mpig_comm_send(const struct MpigComm *comm,
                          uint32_t dst,
                          int32_t tag,
                          const struct MpigValue *value);

// Block until a message from `src` with `tag` arrives, decoded as `kind`.
//
// # Safety
// `comm` must be a live handle or NULL; `out` must be writable.
MpigStatus mpig_comm_receive(const struct MpigComm *comm,
                             uint32_t src,
                             int32_t tag,
                             MpigKind kind,
                             struct MpigValue **out);

// Post an asynchronous receive; the ticket completes when a matching
// message arrives. Free the ticket with `mpig_ticket_free`.
//
// # Safety
// `comm` must be a live handle or NULL; `out` must be writable.
MpigStatus mpig_comm_receive_async(const struct MpigComm *comm,
                                   uint32_t src,
                                   int32_t tag,
                                   MpigKind kind,
                                   struct MpigTicket **out);

// Block until the ticket completes and return the decoded value.
//
// # Safety
// `ticket` must be a live ticket handle or NULL; `out` must be writable.
MpigStatus mpig_ticket_await(const struct MpigTicket *ticket, struct MpigValue **out);

// # Safety
// `ticket` must be a live ticket handle or NULL; `out` writable.
MpigStatus mpig_ticket_is_complete(const struct MpigTicket *ticket, bool *out);

// Register a completion callback; it runs on a runtime-internal thread
// with the decoded value (owned by the callback).
//
// # Safety
// `ticket` must be a live ticket handle or NULL; `user_data` must remain
// valid until the callback has run.
MpigStatus mpig_ticket_on_complete(const struct MpigTicket *ticket,
                                   MpigTicketCallback callback,
                                   void *user_data);

// # Safety
// `ticket` must be NULL or an owned ticket handle, not yet freed.
void mpig_ticket_free(struct MpigTicket *ticket);

// Partition the communicator by color, ordering members by (key, parent
// rank). Writes NULL to `out` when `color` is -1 (opt out). Free the
// returned communicator with `mpig_comm_free`.
//
// # Safety
// `comm` must be a live handle or NULL; `out` must be writable.
MpigStatus mpig_comm_split(const struct MpigComm *comm,
                           int32_t color,
                           int32_t key,
                           struct MpigComm **out);

// Free a communicator returned by `mpig_comm_split`. Never call this on
// the communicator passed into a parallel function.
//
// # Safety
// `comm` must be NULL or an owned communicator handle, not yet freed.
void mpig_comm_free(struct MpigComm *comm);

// Collective broadcast: exactly the root passes a non-NULL `value`; every
// member receives the root's value decoded as `kind`.
//
// # Safety
// `comm` must be a live handle or NULL; `value` NULL or live; `out`
// writable.
MpigStatus mpig_comm_broadcast(const struct MpigComm *comm,
                               uint32_t root,
                               const struct MpigValue *value,
                               MpigKind kind,
                               struct MpigValue **out);

// Collective all-reduce: fold every member's value with `f` in local-rank
// order; every member receives the result.
//
// # Safety
// `comm` and `value` must be live handles or NULL; `out` writable;
// `user_data` must be safe to touch from the reducing rank's thread.
MpigStatus mpig_comm_allreduce(const struct MpigComm *comm,
                               const struct MpigValue *value,
                               MpigReduceFn f,
                               void *user_data,
                               struct MpigValue **out);

struct MpigRegistry *mpig_registry_new(void);

// Register `f` under `name`.
//
// # Safety
// `registry` must be a live registry handle; `name` a NUL-terminated
// string; `user_data` safe to share across rank threads.
MpigStatus mpig_registry_register(struct MpigRegistry *registry,
                                  const char *name,
                                  MpigParallelFn f,
                                  void *user_data);

// # Safety
// `registry` must be NULL or an owned registry handle, not yet freed.
void mpig_registry_free(struct MpigRegistry *registry);

// Execute a parallel function across `n` ranked logical processes in this
// process and collect the per-rank results.
//
// # Safety
// `f` must be callable from multiple threads; `user_data` must be safe to
// share across them; `out` must be writable.
MpigStatus mpig_run_local(MpigParallelFn f, void *user_data, uint32_t n, struct MpigResults **out);

// # Safety
// `results` must be a live results handle or NULL; `out` writable.
MpigStatus mpig_results_len(const struct MpigResults *results, size_t *out);

// Borrow the value at `rank`. The pointer is valid until the results
// handle is freed; use `mpig_value_clone` to keep it longer.
//
// # Safety
// `results` must be a live results handle or NULL; `out` writable.
MpigStatus mpig_results_get(const struct MpigResults *results,
                            size_t rank,
                            const struct MpigValue **out);

// # Safety
// `results` must be NULL or an owned results handle, not yet freed.
void mpig_results_free(struct MpigResults *results);

// Bind a master on `listen_addr` (e.g. "127.0.0.1:7077"; port 0 picks
// one) serving functions from `registry` (cloned; the handle stays owned
// by the caller).
//
// # Safety
// `listen_addr` must be a NUL-terminated string; `registry` a live
// handle; `out` writable.
MpigStatus mpig_master_bind(const char *listen_addr,
                            const struct MpigRegistry *registry,
                            struct MpigMaster **out);

// The master's bound address as "host:port" (free with
// `mpig_string_free`).
//
// # Safety
// `master` must be a live master handle or NULL; `out` writable.
MpigStatus mpig_master_addr(const struct MpigMaster *master, char **out);

// Block until `count` workers have registered or `timeout_ms` elapses.
//
// # Safety
// `master` must be a live master handle or NULL.
MpigStatus mpig_master_wait_for_workers(const struct MpigMaster *master,
                                        size_t count,
                                        uint64_t timeout_ms);

// Execute the registered function `name` across `n` ranks on the cluster.
// `routing` is 0 for peer-to-peer, 1 for master relay.
//
// # Safety
// `master` must be a live master handle; `name` a NUL-terminated string;
// `out` writable.
MpigStatus mpig_master_execute(const struct MpigMaster *master,
                               const char *name,
                               uint32_t n,
                               int32_t routing,
                               struct MpigResults **out);

// Shut the cluster down, releasing every worker, and free the handle.
//
// # Safety
// `master` must be NULL or an owned master handle, not yet freed.
MpigStatus mpig_master_shutdown(struct MpigMaster *master);

// Serve as a worker: register with the master, execute assigned ranks,
// and return when the master shuts the cluster down. Blocks the calling
// thread for the lifetime of the cluster.
//
// # Safety
// `master_addr` and `listen_addr` must be NUL-terminated strings;
// `registry` a live handle.
MpigStatus mpig_worker_run(const char *master_addr,
                           const char *listen_addr,
                           const struct MpigRegistry *registry);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MPIGNITE_H */
