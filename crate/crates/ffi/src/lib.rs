//! C interface to the capacity library.
//!
//! Every function returns an [`LfStatus`]; results come back through out
//! pointers. Handles are opaque and must be released with their `_free`
//! function. After a failure, [`lf_last_error`] describes it on the calling
//! thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lanefree::capacity::{capacity_measure, degree_of_utilization, lanefree_capacity, signalized_capacity, CapacityError, TerminalReason};
use lanefree::config::ScenarioFile;
use lanefree::ocp::{solve_robust, OcpError, OcpSolution, OcpStatus, ScenarioError, ValidationReport};
use lanefree::signalized::{family_arrivals, Controller};

/// Status codes; the non-zero values match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LfStatus {
    Ok = 0,
    NullArgument = 1,
    InputError = 2,
    Infeasible = 3,
    ValidationFailed = 4,
    Internal = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LfRegime {
    LaneFree = 0,
    Webster = 1,
    MaxPressure = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LfTerminalReason {
    InfeasibleAtNext = 0,
    ThroughputDeclined = 1,
    Budget = 2,
}

/// Capacity summary.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LfCapacity {
    pub regime: LfRegime,
    pub n: usize,
    /// Seconds.
    pub t: f64,
    /// Vehicles per hour.
    pub c: f64,
    pub terminal_reason: LfTerminalReason,
}

/// A parsed scenario file.
pub struct LfScenario {
    file: ScenarioFile,
}

/// A solved and validated crossing.
pub struct LfSolution {
    solution: OcpSolution,
    report: Option<ValidationReport>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: LfStatus, message: impl std::fmt::Display) -> LfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = message.to_string());
    status
}

fn guard(f: impl FnOnce() -> LfStatus) -> LfStatus {
    LAST_ERROR.with(|e| e.borrow_mut().clear());
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(LfStatus::Internal, "internal panic"))
}

fn scenario_status(e: &ScenarioError) -> LfStatus {
    match e {
        ScenarioError::Overlap { .. } | ScenarioError::RoadOverlap { .. } => LfStatus::Infeasible,
        _ => LfStatus::InputError,
    }
}

fn capacity_status(e: &CapacityError) -> LfStatus {
    match e {
        CapacityError::Scenario { source, .. } => scenario_status(source),
        CapacityError::Solve {
            source: OcpError::Scenario(s), ..
        } => scenario_status(s),
        CapacityError::NothingPassed(_) => LfStatus::Infeasible,
        CapacityError::Grid | CapacityError::Simulation { .. } => LfStatus::InputError,
        _ => LfStatus::Internal,
    }
}

fn reason(r: TerminalReason) -> LfTerminalReason {
    match r {
        TerminalReason::InfeasibleAtNext => LfTerminalReason::InfeasibleAtNext,
        TerminalReason::ThroughputDeclined => LfTerminalReason::ThroughputDeclined,
        TerminalReason::Budget => LfTerminalReason::Budget,
    }
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lf_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            // SAFETY: the caller provides `len` writable bytes and n < len.
            unsafe {
                ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// `3600 n / t` vehicles per hour.
///
/// # Safety
/// `out` must be null or valid for writing.
#[no_mangle]
pub unsafe extern "C" fn lf_capacity_measure(n: usize, t: f64, out: *mut f64) -> LfStatus {
    guard(|| {
        if out.is_null() {
            return fail(LfStatus::NullArgument, "out is null");
        }
        match capacity_measure(n, t) {
            Ok(c) => {
                // SAFETY: checked non-null above.
                unsafe { *out = c };
                LfStatus::Ok
            }
            Err(e) => fail(LfStatus::InputError, e),
        }
    })
}

/// `v h_d / 3600`.
#[no_mangle]
pub extern "C" fn lf_degree_of_utilization(v: f64, h_d: f64) -> f64 {
    degree_of_utilization(v, h_d)
}

/// Parses a scenario file given as a NUL-terminated JSON string.
///
/// # Safety
/// `json` must be null or a valid C string; `out` must be null or valid for writing.
#[no_mangle]
pub unsafe extern "C" fn lf_scenario_from_json(json: *const c_char, out: *mut *mut LfScenario) -> LfStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return fail(LfStatus::NullArgument, "json or out is null");
        }
        // SAFETY: non-null and NUL-terminated per the contract.
        let text = match unsafe { CStr::from_ptr(json) }.to_str() {
            Ok(t) => t,
            Err(e) => return fail(LfStatus::InputError, e),
        };
        match ScenarioFile::parse(text) {
            Ok(file) => {
                // SAFETY: checked non-null above.
                unsafe { *out = Box::into_raw(Box::new(LfScenario { file })) };
                LfStatus::Ok
            }
            Err(e) => fail(LfStatus::InputError, e),
        }
    })
}

/// The default scenario (three vehicles, one turning left).
///
/// # Safety
/// `out` must be null or valid for writing.
#[no_mangle]
pub unsafe extern "C" fn lf_scenario_template(out: *mut *mut LfScenario) -> LfStatus {
    guard(|| {
        if out.is_null() {
            return fail(LfStatus::NullArgument, "out is null");
        }
        let file = ScenarioFile::template();
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(LfScenario { file })) };
        LfStatus::Ok
    })
}

/// # Safety
/// `scenario` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lf_scenario_free(scenario: *mut LfScenario) {
    if !scenario.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(scenario) });
    }
}

/// Solves the scenario's listed vehicles as one crossing and validates the
/// result. The solution handle is written even when validation fails.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be null or valid for writing.
#[no_mangle]
pub unsafe extern "C" fn lf_solve(scenario: *const LfScenario, out: *mut *mut LfSolution) -> LfStatus {
    guard(|| {
        if scenario.is_null() || out.is_null() {
            return fail(LfStatus::NullArgument, "scenario or out is null");
        }
        // SAFETY: live handle per the contract.
        let file = unsafe { &(*scenario).file };
        let scn = match file.crossing() {
            Ok(s) => s,
            Err(e) => return fail(scenario_status(&e), e),
        };
        let deadline = file.time_limit().map(|d| std::time::Instant::now() + d);
        let res = match solve_robust(&scn, &file.transcription(), None, &file.policy(), deadline) {
            Ok(r) => r,
            Err(OcpError::Scenario(e)) => return fail(scenario_status(&e), e),
            Err(e) => return fail(LfStatus::Internal, e),
        };
        let passed = res.passed();
        let status = res.solution.status;
        let messages = res.report.as_ref().map(|r| r.messages.join("; ")).unwrap_or_default();
        // SAFETY: checked non-null above.
        unsafe {
            *out = Box::into_raw(Box::new(LfSolution {
                solution: res.solution,
                report: res.report,
            }))
        };
        match status {
            _ if passed => LfStatus::Ok,
            OcpStatus::Infeasible => fail(LfStatus::Infeasible, "locally infeasible"),
            OcpStatus::Optimal => fail(LfStatus::ValidationFailed, messages),
            s => fail(LfStatus::ValidationFailed, format!("solver ended with status {s}")),
        }
    })
}

/// # Safety
/// `solution` must be a live handle; `out` must be null or valid for writing.
#[no_mangle]
pub unsafe extern "C" fn lf_solution_final_time(solution: *const LfSolution, out: *mut f64) -> LfStatus {
    guard(|| {
        if solution.is_null() || out.is_null() {
            return fail(LfStatus::NullArgument, "solution or out is null");
        }
        // SAFETY: both checked non-null; handle live per the contract.
        unsafe { *out = (*solution).solution.t_f };
        LfStatus::Ok
    })
}

/// Smallest distance margin over all vehicle pairs in the dense validation,
/// or NaN without a pair or a report.
///
/// # Safety
/// `solution` must be a live handle; `out` must be null or valid for writing.
#[no_mangle]
pub unsafe extern "C" fn lf_solution_pair_margin(solution: *const LfSolution, out: *mut f64) -> LfStatus {
    guard(|| {
        if solution.is_null() || out.is_null() {
            return fail(LfStatus::NullArgument, "solution or out is null");
        }
        // SAFETY: both checked non-null; handle live per the contract.
        unsafe {
            *out = (*solution)
                .report
                .as_ref()
                .and_then(|r| r.worst_pair_margin)
                .unwrap_or(f64::NAN)
        };
        LfStatus::Ok
    })
}

/// Number of vehicles in the solution (0 for a null handle).
///
/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lf_solution_vehicle_count(solution: *const LfSolution) -> usize {
    if solution.is_null() {
        return 0;
    }
    // SAFETY: live handle per the contract.
    unsafe { (*solution).solution.states.len() }
}

/// # Safety
/// `solution` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lf_solution_free(solution: *mut LfSolution) {
    if !solution.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(solution) });
    }
}

/// Capacity of the scenario's family under `regime`.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be null or valid for writing.
#[no_mangle]
pub unsafe extern "C" fn lf_capacity(scenario: *const LfScenario, regime: LfRegime, out: *mut LfCapacity) -> LfStatus {
    guard(|| {
        if scenario.is_null() || out.is_null() {
            return fail(LfStatus::NullArgument, "scenario or out is null");
        }
        // SAFETY: live handle per the contract.
        let file = unsafe { &(*scenario).file };
        let result = match regime {
            LfRegime::LaneFree => {
                let fam = file.family();
                lanefree_capacity(|n| fam.build(n), &file.transcription(), &file.lanefree_options()).map(|r| r.result)
            }
            LfRegime::Webster | LfRegime::MaxPressure => {
                let controller = if regime == LfRegime::Webster {
                    Controller::Webster
                } else {
                    Controller::MaxPressure
                };
                let grid = &file.signal.n_grid;
                let fam = file.signal_family(grid.last().copied().unwrap_or(1));
                signalized_capacity(|n| Ok(family_arrivals(&fam, n)), &file.sim_config(controller), grid)
            }
        };
        match result {
            Ok(r) => {
                // SAFETY: checked non-null above.
                unsafe {
                    *out = LfCapacity {
                        regime,
                        n: r.n,
                        t: r.t,
                        c: r.c,
                        terminal_reason: reason(r.terminal_reason),
                    }
                };
                LfStatus::Ok
            }
            Err(e) => fail(capacity_status(&e), e),
        }
    })
}
