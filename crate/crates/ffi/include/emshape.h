#ifndef EMSHAPE_H
#define EMSHAPE_H

#include <stddef.h>

/**
 * Status codes returned by every fallible entry point.
 */
#define EMSHAPE_OK 0

/**
 * A check failed or a numerical routine reported an error.
 */
#define EMSHAPE_ERR_FAILED 1

/**
 * Bad arguments, unknown names or unreadable configuration.
 */
#define EMSHAPE_ERR_USAGE 2

/**
 * A required pointer was null.
 */
#define EMSHAPE_ERR_NULL 3

/**
 * Opaque solver context: configuration plus the discretized surface.
 */
typedef struct EmshapeContext EmshapeContext;

/**
 * Opaque solved transmission problem.
 */
typedef struct EmshapeSolution EmshapeSolution;

/**
 * Create a context with the desk-scale defaults.
 */
struct EmshapeContext *emshape_context_new_default(void);

/**
 * Create a context from a configuration file; null on error (see
 * `emshape_last_error`).
 *
 * # Safety
 * `path` must point to a valid NUL-terminated string.
 */
struct EmshapeContext *emshape_context_from_file(const char *path);

/**
 * # Safety
 * `ctx` must be a pointer previously returned by a context constructor,
 * not yet freed.
 */
void emshape_context_free(struct EmshapeContext *ctx);

/**
 * Solve the transmission problem at the configured deformation and scale.
 * Returns null on failure.
 *
 * # Safety
 * `ctx` must be a live context pointer.
 */
struct EmshapeSolution *emshape_solve(const struct EmshapeContext *ctx);

/**
 * # Safety
 * `sol` must be a pointer previously returned by `emshape_solve`.
 */
void emshape_solution_free(struct EmshapeSolution *sol);

/**
 * Condition estimate of the boundary operator behind a solution.
 *
 * # Safety
 * `sol` must be a live solution pointer.
 */
double emshape_solution_condition(const struct EmshapeSolution *sol);

/**
 * Far-field pattern of a solution at `n_dirs` unit directions. `dirs`
 * holds xyz triples; `out` receives interleaved re/im for the three
 * complex components per direction (6 doubles each).
 *
 * # Safety
 * `ctx` and `sol` must be live pointers; `dirs` must hold `3 * n_dirs`
 * doubles and `out` must have room for `6 * n_dirs`.
 */
int emshape_farfield(const struct EmshapeContext *ctx,
                     const struct EmshapeSolution *sol,
                     const double *dirs,
                     size_t n_dirs,
                     double *out);

/**
 * Run a verification suite; 0 when every check passes, 1 on check
 * failure, 2 on an unknown suite name.
 *
 * # Safety
 * `ctx` must be a live context pointer and `suite` a NUL-terminated name.
 */
int emshape_verify(const struct EmshapeContext *ctx, const char *suite);

/**
 * Copy the last error message into `buf` (truncated, always
 * NUL-terminated). Returns the full message length.
 *
 * # Safety
 * `buf` must have room for `len` bytes when non-null.
 */
size_t emshape_last_error(char *buf, size_t len);

#endif  /* EMSHAPE_H */
