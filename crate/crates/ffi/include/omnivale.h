#ifndef OMNIVALE_H
#define OMNIVALE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  OV_STATUS_OK = 0,
  OV_STATUS_NULL_ARGUMENT = 1,
  OV_STATUS_INVALID_UTF8 = 2,
  OV_STATUS_IO = 3,
  OV_STATUS_PARSE = 4,
  OV_STATUS_VALIDATION = 5,
  OV_STATUS_NOT_FOUND = 6,
  OV_STATUS_CONFLICT = 7,
  OV_STATUS_INTERNAL = 8,
} OvStatus;

// Loaded dataset manifest.
typedef struct OvManifest OvManifest;

// Review store over a manifest.
typedef struct OvReviewStore OvReviewStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Borrowed;
// valid until the next call on this thread.
const char *ov_last_error(void);

// Static, nul-terminated toolkit version.
const char *ov_version(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void ov_string_free(char *s);

// Reads and validates a manifest file.
//
// # Safety
// `path` must be a nul-terminated string; `out` must be writable.
OvStatus ov_manifest_read(const char *path, OvManifest **out);

// # Safety
// `m` must come from [`ov_manifest_read`] and not have been freed. Null is ignored.
void ov_manifest_free(OvManifest *m);

// # Safety
// `m` must be a live handle; `out` must be writable.
OvStatus ov_manifest_video_count(const OvManifest *m, size_t *out);

// Writes the manifest; nothing is written if it fails validation.
//
// # Safety
// `m` must be a live handle; `path` a nul-terminated string.
OvStatus ov_manifest_write(const OvManifest *m, const char *path);

// Replaces the omni events of every retained video with the fusion of its
// modal events.
//
// # Safety
// `m` must be a live handle.
OvStatus ov_manifest_fuse(OvManifest *m);

// Dataset statistics as a JSON object.
//
// # Safety
// `m` must be a live handle; `out` must be writable.
OvStatus ov_manifest_stats_json(const OvManifest *m, char **out);

// IoU of `[a_start, a_end)` and `[b_start, b_end)`.
//
// # Safety
// `out` must be writable.
OvStatus ov_iou(double a_start, double a_end, double b_start, double b_end, double *out);

// MRSD of `n` row-major vectors of length `dim`.
//
// # Safety
// `data` must point to `n * dim` doubles; `out` must be writable.
OvStatus ov_mrsd(const double *data, size_t n, size_t dim, double *out);

// Opens a review store over a manifest file. With a null `data_dir` the
// store is memory-only.
//
// # Safety
// `manifest_path` must be nul-terminated; `data_dir` null or
// nul-terminated; `out` writable.
OvStatus ov_review_open(const char *manifest_path,
                        const char *data_dir,
                        size_t snapshot_every,
                        OvReviewStore **out);

// # Safety
// `s` must come from [`ov_review_open`] and not have been freed. Null is ignored.
void ov_review_free(OvReviewStore *s);

// Submits one mutation given as JSON, e.g.
// `{"item_id":"vid:o0","base_revision":0,"action":"flag","reason":"..."}`.
// On success `out` (if non-null) receives the resulting item status as JSON.
//
// # Safety
// `s` must be a live handle; `mutation_json` nul-terminated; `out` null or writable.
OvStatus ov_review_submit(const OvReviewStore *s, const char *mutation_json, char **out);

// Writes the reviewed manifest to `path`.
//
// # Safety
// `s` must be a live handle; `path` nul-terminated.
OvStatus ov_review_export(const OvReviewStore *s, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OMNIVALE_H */
