#ifndef RKHS_ODE_H
#define RKHS_ODE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of an FFI call.
typedef enum RkhsStatus {
  RKHS_STATUS_OK = 0,
  RKHS_STATUS_NULL_POINTER = 1,
  RKHS_STATUS_INVALID_ARGUMENT = 2,
  RKHS_STATUS_NUMERICAL = 3,
  RKHS_STATUS_IO = 4,
  RKHS_STATUS_BUFFER_TOO_SMALL = 5,
  RKHS_STATUS_PANIC = 6,
} RkhsStatus;

// Observations loaded from a dataset CSV.
typedef struct RkhsDataset RkhsDataset;

// A fitted or deserialized vector field.
typedef struct RkhsField RkhsField;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next FFI call on the same thread.
const char *rkhs_last_error(void);

// Library version as a static NUL-terminated string.
const char *rkhs_version(void);

// Load a `traj_id,t,y1..yd` CSV file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum RkhsStatus rkhs_dataset_load(const char *path, struct RkhsDataset **out);

// # Safety
// `ds` must be null or a handle from [`rkhs_dataset_load`], freed once.
void rkhs_dataset_free(struct RkhsDataset *ds);

// State dimension of a dataset (0 for a null handle).
//
// # Safety
// `ds` must be null or a live dataset handle.
size_t rkhs_dataset_dim(const struct RkhsDataset *ds);

// Number of trajectories in a dataset (0 for a null handle).
//
// # Safety
// `ds` must be null or a live dataset handle.
size_t rkhs_dataset_n_trajectories(const struct RkhsDataset *ds);

// Fit a vector field. `config_json` is a complete solver config, or null
// for the defaults. `threads` of 0 or 1 runs single-threaded.
//
// # Safety
// `ds` must be a live dataset handle, `config_json` null or NUL-terminated,
// `out` a valid pointer.
enum RkhsStatus rkhs_fit(const struct RkhsDataset *ds,
                         const char *config_json,
                         size_t threads,
                         struct RkhsField **out);

// Parse a field from the JSON written by `rkhs-ode fit`.
//
// # Safety
// `json` must be NUL-terminated and `out` a valid pointer.
enum RkhsStatus rkhs_field_from_json(const char *json, struct RkhsField **out);

// Serialize a field to JSON. The string must be released with
// [`rkhs_string_free`].
//
// # Safety
// `field` must be a live field handle and `out` a valid pointer.
enum RkhsStatus rkhs_field_to_json(const struct RkhsField *field, char **out);

// # Safety
// `s` must be null or a string returned by this library, freed once.
void rkhs_string_free(char *s);

// # Safety
// `field` must be null or a field handle, freed once.
void rkhs_field_free(struct RkhsField *field);

// State dimension of a field (0 for a null handle).
//
// # Safety
// `field` must be null or a live field handle.
size_t rkhs_field_dim(const struct RkhsField *field);

// Evaluate `f(t, x)` into `out` (length `dim`). `t` is ignored by
// autonomous fields.
//
// # Safety
// `x` and `out` must point to `dim` doubles.
enum RkhsStatus rkhs_field_eval(const struct RkhsField *field,
                                const double *x,
                                size_t dim,
                                double t,
                                double *out);

// Euler prediction from `x0` over `[t0, t0 + horizon]` with step `h`.
//
// Writes the row count to `n_rows` and, if `capacity` (in doubles) is
// large enough, `n_rows * (1 + dim)` values into `out` as rows
// `t, x_1 .. x_dim`. Pass `out = NULL` to query the size; a short buffer
// returns `RKHS_STATUS_BUFFER_TOO_SMALL` with `n_rows` set.
//
// # Safety
// `x0` must point to `dim` doubles, `out` to `capacity` doubles or be null,
// `n_rows` must be valid.
enum RkhsStatus rkhs_predict(const struct RkhsField *field,
                             const double *x0,
                             size_t dim,
                             double t0,
                             double horizon,
                             double h,
                             double *out,
                             size_t capacity,
                             size_t *n_rows);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RKHS_ODE_H */
