/* C ABI for the qpate library: privacy accountant, Laplace vote
 * aggregation, and the variational-circuit simulator. */

#ifndef QPATE_H
#define QPATE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes mirrored from the library's error taxonomy.
 */
typedef enum {
  QpateStatus_Ok = 0,
  QpateStatus_NullPointer = 1,
  QpateStatus_Usage = 2,
  QpateStatus_Config = 3,
  QpateStatus_Format = 4,
  QpateStatus_Accounting = 5,
  QpateStatus_Io = 6,
  QpateStatus_Diverged = 7,
} QpateStatus;

/**
 * Opaque seeded Laplace noise stream with scale `1/gamma`.
 */
typedef struct QpateLaplace QpateLaplace;

/**
 * Opaque moments-accountant handle.
 */
typedef struct QpateLedger QpateLedger;

/**
 * Opaque variational-circuit handle.
 */
typedef struct QpateVqc QpateVqc;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread, or null when
 * every call so far succeeded. The pointer stays valid until the next
 * failing call on the same thread; do not free it.
 */
const char *qpate_last_error_message(void);

/**
 * Frees a string returned by this library.
 *
 * # Safety
 * `s` must have been returned by a `qpate_*` function and not freed before.
 */
void qpate_string_free(char *s);

/**
 * Creates a ledger for Laplace parameter `gamma` at failure probability
 * `delta`.
 */
QpateStatus qpate_ledger_new(double gamma, double delta, QpateLedger **out);

/**
 * Charges one label query to the ledger.
 */
QpateStatus qpate_ledger_record_query(QpateLedger *ledger);

/**
 * Certified epsilon for the query history so far.
 */
QpateStatus qpate_ledger_epsilon(const QpateLedger *ledger, double *out);

QpateStatus qpate_ledger_query_count(const QpateLedger *ledger, uint64_t *out);

/**
 * Human-readable accounting report; release it with `qpate_string_free`.
 */
QpateStatus qpate_ledger_report(const QpateLedger *ledger, char **out);

/**
 * Releases a ledger handle; a null pointer is ignored.
 *
 * # Safety
 * `ledger` must come from `qpate_ledger_new` and not be freed twice.
 */
void qpate_ledger_free(QpateLedger *ledger);

/**
 * Largest gamma whose certified epsilon over `queries` label queries stays
 * at or below `target_epsilon`.
 */
QpateStatus qpate_solve_gamma(double target_epsilon, uint64_t queries, double delta, double *out);

QpateStatus qpate_laplace_new(double gamma, uint64_t seed, QpateLaplace **out);

QpateStatus qpate_laplace_sample(QpateLaplace *noise, double *out);

/**
 * # Safety
 * `noise` must come from `qpate_laplace_new` and not be freed twice.
 */
void qpate_laplace_free(QpateLaplace *noise);

/**
 * Noisy argmax over a vote histogram: each count is perturbed with one draw
 * from the stream and the index of the maximum is written to `out`.
 */
QpateStatus qpate_noisy_argmax(const uint32_t *counts,
                               uintptr_t len,
                               QpateLaplace *noise,
                               uintptr_t *out);

/**
 * Builds a circuit block; `params` holds 3 * num_qubits * num_layers angles
 * as (phi, theta, omega) triples per qubit per layer.
 */
QpateStatus qpate_vqc_new(uintptr_t num_qubits,
                          uintptr_t num_layers,
                          const double *params,
                          uintptr_t params_len,
                          QpateVqc **out);

QpateStatus qpate_vqc_num_params(const QpateVqc *vqc, uintptr_t *out);

/**
 * Runs the circuit on an input feature vector; writes the two Pauli-Z
 * readout logits to `logits_out`.
 */
QpateStatus qpate_vqc_forward(const QpateVqc *vqc,
                              const double *input,
                              uintptr_t input_len,
                              double *logits_out);

/**
 * Parameter-shift gradient of `upstream . logits` with respect to every
 * circuit parameter; `grad_len` must equal the parameter count.
 */
QpateStatus qpate_vqc_param_grad(const QpateVqc *vqc,
                                 const double *input,
                                 uintptr_t input_len,
                                 const double *upstream,
                                 double *grad_out,
                                 uintptr_t grad_len);

/**
 * Shift-rule gradient of `upstream . logits` with respect to the input
 * features; `grad_len` must equal the input length.
 */
QpateStatus qpate_vqc_input_grad(const QpateVqc *vqc,
                                 const double *input,
                                 uintptr_t input_len,
                                 const double *upstream,
                                 double *grad_out,
                                 uintptr_t grad_len);

/**
 * # Safety
 * `vqc` must come from `qpate_vqc_new` and not be freed twice.
 */
void qpate_vqc_free(QpateVqc *vqc);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* QPATE_H */
