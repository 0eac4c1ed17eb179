#ifndef ATTNLAB_ATTNLAB_H
#define ATTNLAB_ATTNLAB_H

/* C interface to attnlab. Objects are opaque handles owned by the caller and
 * released with the matching *_free function. Every call that can fail
 * returns an attnlab_status; the message of the last failure on the calling
 * thread is available from attnlab_last_error(). */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define ATTNLAB_API __declspec(dllexport)
#else
#define ATTNLAB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum attnlab_status {
  ATTNLAB_OK = 0,
  ATTNLAB_INVALID_ARGUMENT = 1,
  ATTNLAB_DIMENSION_MISMATCH = 2,
  ATTNLAB_NOT_FOUND = 3,
  ATTNLAB_IO_ERROR = 4,
  ATTNLAB_NUMERICAL_ERROR = 5,
  ATTNLAB_CONFIG_ERROR = 6,
  ATTNLAB_BUFFER_TOO_SMALL = 7,
  ATTNLAB_INTERNAL_ERROR = 8
} attnlab_status;

typedef struct attnlab_config attnlab_config;
typedef struct attnlab_report attnlab_report;
typedef struct attnlab_model attnlab_model;

ATTNLAB_API const char* attnlab_version(void);
ATTNLAB_API const char* attnlab_status_name(attnlab_status status);
/* Message of the most recent failure on this thread; "" if none. */
ATTNLAB_API const char* attnlab_last_error(void);

/* kind: "correlate", "intervene", "train-compare", "ablate", "report" or "gen-data". */
ATTNLAB_API attnlab_status attnlab_config_new(const char* kind, attnlab_config** out);
/* Reads a `key = value` file; unknown keys are rejected. */
ATTNLAB_API attnlab_status attnlab_config_load(const char* kind, const char* path, attnlab_config** out);
ATTNLAB_API attnlab_status attnlab_config_set(attnlab_config* config, const char* key, const char* value);
/* Copies the value of `key` with its terminator into `buffer`. `needed`, when
 * not NULL, receives the required size including the terminator. */
ATTNLAB_API attnlab_status attnlab_config_get(const attnlab_config* config, const char* key, char* buffer,
                                              size_t capacity, size_t* needed);
ATTNLAB_API void attnlab_config_free(attnlab_config* config);

/* Runs the configured experiment. Files are only written for gen-data and
 * checkpoint.save; use attnlab_report_write for the report itself. */
ATTNLAB_API attnlab_status attnlab_run(const attnlab_config* config, attnlab_report** out);

ATTNLAB_API attnlab_status attnlab_report_load(const char* path, attnlab_report** out);
/* Writes report.json, CSV tables and TSV plots into `directory`. */
ATTNLAB_API attnlab_status attnlab_report_write(const attnlab_report* report, const char* directory);
ATTNLAB_API attnlab_status attnlab_report_json(const attnlab_report* report, char* buffer, size_t capacity,
                                               size_t* needed);
ATTNLAB_API attnlab_status attnlab_report_scalar(const attnlab_report* report, const char* name, double* out);
ATTNLAB_API attnlab_status attnlab_report_table_rows(const attnlab_report* report, const char* table,
                                                     size_t* out);
ATTNLAB_API attnlab_status attnlab_report_wall_clock(const attnlab_report* report, double* seconds);
ATTNLAB_API void attnlab_report_free(attnlab_report* report);

ATTNLAB_API attnlab_status attnlab_model_load(const char* path, attnlab_model** out);
ATTNLAB_API attnlab_status attnlab_model_save(const attnlab_model* model, const char* path);
ATTNLAB_API attnlab_status attnlab_model_info(const attnlab_model* model, size_t* layers, size_t* heads_per_layer,
                                              size_t* parameters, uint64_t* step);
ATTNLAB_API void attnlab_model_free(attnlab_model* model);

/* Inclusive bin spans; IoU of [s1, e1 + 1) and [s2, e2 + 1). */
ATTNLAB_API attnlab_status attnlab_span_iou(size_t start1, size_t end1, size_t start2, size_t end2, double* out);
ATTNLAB_API attnlab_status attnlab_pearson(const double* xs, const double* ys, size_t n, double* r,
                                           double* p_value);
/* Hinge of one token: max(margin + max(neg) - min(pos), 0). */
ATTNLAB_API attnlab_status attnlab_token_loss(const double* pos, size_t n_pos, const double* neg, size_t n_neg,
                                              double margin, double* out);

#ifdef __cplusplus
}
#endif

#endif
