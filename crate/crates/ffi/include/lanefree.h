#ifndef LANEFREE_H
#define LANEFREE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes; the non-zero values match the command-line exit codes.
typedef enum LfStatus {
  LF_STATUS_OK = 0,
  LF_STATUS_NULL_ARGUMENT = 1,
  LF_STATUS_INPUT_ERROR = 2,
  LF_STATUS_INFEASIBLE = 3,
  LF_STATUS_VALIDATION_FAILED = 4,
  LF_STATUS_INTERNAL = 5,
} LfStatus;

typedef enum LfRegime {
  LF_REGIME_LANE_FREE = 0,
  LF_REGIME_WEBSTER = 1,
  LF_REGIME_MAX_PRESSURE = 2,
} LfRegime;

typedef enum LfTerminalReason {
  LF_TERMINAL_REASON_INFEASIBLE_AT_NEXT = 0,
  LF_TERMINAL_REASON_THROUGHPUT_DECLINED = 1,
  LF_TERMINAL_REASON_BUDGET = 2,
} LfTerminalReason;

// A parsed scenario file.
typedef struct LfScenario LfScenario;

// A solved and validated crossing.
typedef struct LfSolution LfSolution;

// Capacity summary.
typedef struct LfCapacity {
  enum LfRegime regime;
  size_t n;
  // Seconds.
  double t;
  // Vehicles per hour.
  double c;
  enum LfTerminalReason terminal_reason;
} LfCapacity;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length in bytes.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t lf_last_error(char *buf, size_t len);

// `3600 n / t` vehicles per hour.
//
// # Safety
// `out` must be null or valid for writing.
enum LfStatus lf_capacity_measure(size_t n, double t, double *out);

// `v h_d / 3600`.
double lf_degree_of_utilization(double v, double h_d);

// Parses a scenario file given as a NUL-terminated JSON string.
//
// # Safety
// `json` must be null or a valid C string; `out` must be null or valid for writing.
enum LfStatus lf_scenario_from_json(const char *json, struct LfScenario **out);

// The default scenario (three vehicles, one turning left).
//
// # Safety
// `out` must be null or valid for writing.
enum LfStatus lf_scenario_template(struct LfScenario **out);

// # Safety
// `scenario` must be null or a handle from this library not yet freed.
void lf_scenario_free(struct LfScenario *scenario);

// Solves the scenario's listed vehicles as one crossing and validates the
// result. The solution handle is written even when validation fails.
//
// # Safety
// `scenario` must be a live handle; `out` must be null or valid for writing.
enum LfStatus lf_solve(const struct LfScenario *scenario, struct LfSolution **out);

// # Safety
// `solution` must be a live handle; `out` must be null or valid for writing.
enum LfStatus lf_solution_final_time(const struct LfSolution *solution, double *out);

// Smallest distance margin over all vehicle pairs in the dense validation,
// or NaN without a pair or a report.
//
// # Safety
// `solution` must be a live handle; `out` must be null or valid for writing.
enum LfStatus lf_solution_pair_margin(const struct LfSolution *solution, double *out);

// Number of vehicles in the solution (0 for a null handle).
//
// # Safety
// `solution` must be null or a live handle.
size_t lf_solution_vehicle_count(const struct LfSolution *solution);

// # Safety
// `solution` must be null or a handle from this library not yet freed.
void lf_solution_free(struct LfSolution *solution);

// Capacity of the scenario's family under `regime`.
//
// # Safety
// `scenario` must be a live handle; `out` must be null or valid for writing.
enum LfStatus lf_capacity(const struct LfScenario *scenario,
                          enum LfRegime regime,
                          struct LfCapacity *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LANEFREE_H */
