#ifndef ANONSCHED_H
#define ANONSCHED_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum AnonschedStatus {
  ANONSCHED_STATUS_OK = 0,
  ANONSCHED_STATUS_NULL_POINTER = 1,
  ANONSCHED_STATUS_INVALID_ARGUMENT = 2,
  ANONSCHED_STATUS_PARSE = 3,
  ANONSCHED_STATUS_INFEASIBLE = 4,
  ANONSCHED_STATUS_NOT_CONVERGED = 5,
  ANONSCHED_STATUS_IO = 6,
  ANONSCHED_STATUS_PANIC = 7,
} AnonschedStatus;

// Result of a bounded greedy match.
typedef struct AnonschedMatch AnonschedMatch;

// Topology plus session prior.
typedef struct AnonschedNetwork AnonschedNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next call into this library on the same thread.
const char *anonsched_last_error(void);

// Library version as a static string.
const char *anonsched_version(void);

// Loss fraction of bounded greedy matching between Poisson input of rate
// `c_s` and Poisson output of rate `c_b` with delay bound `delta`.
//
// # Safety
// `out_loss` must be valid for writes.
enum AnonschedStatus anonsched_loss_fraction(double c_s,
                                             double c_b,
                                             double delta,
                                             double *out_loss);

// Mean delay of relayed packets under strict delay `delta_star`.
//
// # Safety
// `out_delay` must be valid for writes.
enum AnonschedStatus anonsched_mean_delay(double delta_star,
                                          double c_s,
                                          double c_b,
                                          double *out_delay);

// Strict delay whose mean delay equals `mean_target`; writes infinity when
// FIFO relaying already meets the target.
//
// # Safety
// `out_delta` must be valid for writes.
enum AnonschedStatus anonsched_delta_star(double mean_target,
                                          double c_s,
                                          double c_b,
                                          double *out_delta);

// Bounded greedy match of sorted arrival epochs onto sorted departure
// epochs. The handle is released with [`anonsched_match_free`].
//
// # Safety
// `arrivals` and `departures` must hold `n_arrivals` and `n_departures`
// values; `out_match` must be valid for writes.
enum AnonschedStatus anonsched_bgm(const double *arrivals,
                                   size_t n_arrivals,
                                   const double *departures,
                                   size_t n_departures,
                                   double delta,
                                   struct AnonschedMatch **out_match);

// Number of relayed pairs, dropped arrivals and dummy departures.
//
// # Safety
// `m` must come from [`anonsched_bgm`]; out pointers may be null.
enum AnonschedStatus anonsched_match_counts(const struct AnonschedMatch *m,
                                            size_t *out_pairs,
                                            size_t *out_dropped,
                                            size_t *out_dummies);

// Copies up to `capacity` relayed pairs as interleaved
// `(arrival, departure)` epochs into `buf` (length `2 * capacity`).
//
// # Safety
// `m` must come from [`anonsched_bgm`]; `buf` must hold `2 * capacity`
// values.
enum AnonschedStatus anonsched_match_pairs(const struct AnonschedMatch *m,
                                           double *buf,
                                           size_t capacity,
                                           size_t *out_written);

// Fraction of arrivals dropped and mean delay of relayed packets (NaN when
// nothing was relayed).
//
// # Safety
// `m` must come from [`anonsched_bgm`]; out pointers may be null.
enum AnonschedStatus anonsched_match_stats(const struct AnonschedMatch *m,
                                           double *out_drop_fraction,
                                           double *out_mean_delay);

// # Safety
// `m` must be null or come from [`anonsched_bgm`] and not be freed twice.
void anonsched_match_free(struct AnonschedMatch *m);

// One of the built-in networks (`switching`, `single`) with every
// node at capacity `capacity`.
//
// # Safety
// `name` must be a NUL-terminated string; `out_network` valid for writes.
enum AnonschedStatus anonsched_network_builtin(const char *name,
                                               double capacity,
                                               struct AnonschedNetwork **out_network);

// Network parsed from the text config format.
//
// # Safety
// `text` must be a NUL-terminated string; `out_network` valid for writes.
enum AnonschedStatus anonsched_network_parse(const char *text,
                                             struct AnonschedNetwork **out_network);

// Number of sessions with a prior entry.
//
// # Safety
// `net` must come from this library; `out_count` valid for writes.
enum AnonschedStatus anonsched_network_session_count(const struct AnonschedNetwork *net,
                                                     size_t *out_count);

// Entropy of the session prior in bits.
//
// # Safety
// `net` must come from this library; `out_bits` valid for writes.
enum AnonschedStatus anonsched_network_entropy(const struct AnonschedNetwork *net,
                                               double *out_bits);

// Anonymity when every session keeps the relays named in `covert` covert.
//
// # Safety
// `net` must come from this library; `covert` must hold `n_covert`
// NUL-terminated strings; `out_alpha` valid for writes.
enum AnonschedStatus anonsched_network_anonymity(const struct AnonschedNetwork *net,
                                                 const char *const *covert,
                                                 size_t n_covert,
                                                 double *out_alpha);

// # Safety
// `net` must be null or come from this library and not be freed twice.
void anonsched_network_free(struct AnonschedNetwork *net);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ANONSCHED_H */
