//! Time-optimal lane-free crossing as a multiple-shooting NLP.
//!
//! All vehicles share one free final time `t_f`. Each trajectory is split
//! into `K` intervals of length `t_f / K`; states at the nodes and
//! piecewise-constant inputs are decision variables tied together by RK4
//! defect constraints. Collision avoidance is imposed at every node through
//! the dual form of the polytope distance, which adds a [`DualPair`] per
//! vehicle pair and per vehicle-road pair.

mod export;
mod guess;
mod transcription;
mod validate;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, DynamicsError, Limits, VehicleParams, VehicleState};
use crate::geometry::{
    distance_oracle, normalize_angle, vehicle_polytope, DualPair, GeometryError, Polytope, Pose, VehicleShape,
};
use crate::scenario::Movement;
use crate::solver::{self, IpmOptions, IterateInfo, ProblemError, SolveStatus};

pub use export::{write_summary_csv, write_trajectory_csv};
pub use guess::{initial_guess, scheduled_guess, seed_duals, warm_start, OcpGuess};
pub use transcription::{BlockKind, Transcription};
pub use validate::{validate_solution, ValidationReport, LIMIT_REL_TOL, VALIDATION_TOL};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario has no vehicles")]
    Empty,
    #[error("safety margins must be non-negative and finite (d_min {d_min}, d_rmin {d_rmin})")]
    InvalidMargin { d_min: f64, d_rmin: f64 },
    #[error("vehicle {vehicle}: {source}")]
    Vehicle {
        vehicle: usize,
        #[source]
        source: DynamicsError,
    },
    #[error("vehicle {vehicle}: initial speed {speed} m/s outside [{v_min}, {v_max}]")]
    InitialSpeed { vehicle: usize, speed: f64, v_min: f64, v_max: f64 },
    #[error("vehicles {i} and {j} are {distance:.3} m apart at the {when} pose, need {d_min} m")]
    Overlap {
        i: usize,
        j: usize,
        distance: f64,
        d_min: f64,
        when: &'static str,
    },
    #[error("vehicle {vehicle} is {distance:.3} m from road block {road} at the {when} pose, need {d_rmin} m")]
    RoadOverlap {
        vehicle: usize,
        road: usize,
        distance: f64,
        d_rmin: f64,
        when: &'static str,
    },
    #[error(transparent)]
    Geometry(GeometryError),
    #[error(transparent)]
    Dynamics(DynamicsError),
}

/// One vehicle of a crossing scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub shape: VehicleShape,
    pub params: VehicleParams,
    pub limits: Limits,
    pub start: VehicleState,
    pub goal: Pose,
    pub goal_speed: Option<f64>,
    #[serde(default)]
    pub movement: Option<Movement>,
}

impl VehicleSpec {
    pub fn start_pose(&self) -> Pose {
        Pose::new(self.start.x, self.start.y, self.start.theta)
    }
}

/// Vehicles, road blocks and safety margins of one crossing problem.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossingScenario {
    pub vehicles: Vec<VehicleSpec>,
    pub roads: Vec<Polytope>,
    pub d_min: f64,
    pub d_rmin: f64,
}

impl CrossingScenario {
    /// Checks that start and goal footprints respect the margins. Goal
    /// headings are unwrapped to lie within half a turn of the start heading.
    pub fn new(
        mut vehicles: Vec<VehicleSpec>,
        roads: Vec<Polytope>,
        d_min: f64,
        d_rmin: f64,
    ) -> Result<Self, ScenarioError> {
        if vehicles.is_empty() {
            return Err(ScenarioError::Empty);
        }
        if !(d_min >= 0.0 && d_min.is_finite() && d_rmin >= 0.0 && d_rmin.is_finite()) {
            return Err(ScenarioError::InvalidMargin { d_min, d_rmin });
        }
        for (i, v) in vehicles.iter_mut().enumerate() {
            v.limits
                .validate()
                .map_err(|source| ScenarioError::Vehicle { vehicle: i, source })?;
            let sp = v.start.v;
            if !(sp >= v.limits.v_min && sp <= v.limits.v_max) {
                return Err(ScenarioError::InitialSpeed {
                    vehicle: i,
                    speed: sp,
                    v_min: v.limits.v_min,
                    v_max: v.limits.v_max,
                });
            }
            v.goal.theta = v.start.theta + normalize_angle(v.goal.theta - v.start.theta);
        }
        let scn = Self {
            vehicles,
            roads,
            d_min,
            d_rmin,
        };
        let starts: Vec<Pose> = scn.vehicles.iter().map(|v| v.start_pose()).collect();
        let goals: Vec<Pose> = scn.vehicles.iter().map(|v| v.goal).collect();
        scn.check_poses(&starts, "initial")?;
        scn.check_poses(&goals, "final")?;
        Ok(scn)
    }

    fn check_poses(&self, poses: &[Pose], when: &'static str) -> Result<(), ScenarioError> {
        let polys: Vec<Polytope> = poses
            .iter()
            .zip(&self.vehicles)
            .map(|(p, v)| vehicle_polytope(p, &v.shape))
            .collect();
        for i in 0..polys.len() {
            for j in (i + 1)..polys.len() {
                let d = distance_oracle(&polys[i], &polys[j]);
                if d < self.d_min {
                    return Err(ScenarioError::Overlap {
                        i,
                        j,
                        distance: d,
                        d_min: self.d_min,
                        when,
                    });
                }
            }
            for (r, road) in self.roads.iter().enumerate() {
                let d = distance_oracle(&polys[i], road);
                if d < self.d_rmin {
                    return Err(ScenarioError::RoadOverlap {
                        vehicle: i,
                        road: r,
                        distance: d,
                        d_rmin: self.d_rmin,
                        when,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn n_vehicles(&self) -> usize {
        self.vehicles.len()
    }

    /// Unordered vehicle pairs in lexicographic order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let n = self.vehicles.len();
        (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect()
    }

    /// Shortest time any vehicle needs to cover its straight-line distance
    /// with full acceleration up to its speed limit; the largest over all
    /// vehicles.
    pub fn straight_line_bound(&self) -> f64 {
        self.vehicles
            .iter()
            .map(|v| {
                let d = (v.goal.x - v.start.x).hypot(v.goal.y - v.start.y);
                min_time_1d(d, v.start.v, v.limits.v_max, v.limits.a_max)
            })
            .fold(0.0, f64::max)
    }

    /// A scenario with only the given vehicles (in the given order).
    pub fn subset(&self, keep: &[usize]) -> Self {
        Self {
            vehicles: keep.iter().map(|&i| self.vehicles[i].clone()).collect(),
            roads: self.roads.clone(),
            d_min: self.d_min,
            d_rmin: self.d_rmin,
        }
    }
}

/// Minimum time to travel `d` from speed `v0` with acceleration `a` capped
/// at speed `vmax`, final speed free.
pub fn min_time_1d(d: f64, v0: f64, vmax: f64, a: f64) -> f64 {
    if d <= 0.0 {
        return 0.0;
    }
    let v0 = v0.min(vmax);
    let t_acc = (vmax - v0) / a;
    let d_acc = 0.5 * (v0 + vmax) * t_acc;
    if d_acc >= d {
        (-v0 + (v0 * v0 + 2.0 * a * d).sqrt()) / a
    } else {
        t_acc + (d - d_acc) / vmax
    }
}

/// Discretisation and solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranscriptionConfig {
    /// Number of shooting intervals `K`.
    pub intervals: usize,
    /// RK4 substeps per interval.
    pub substeps: usize,
    /// Explicit `(lower, upper)` bounds on `t_f`; derived from the scenario when absent.
    pub t_f_bounds: Option<(f64, f64)>,
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub max_iter: usize,
    /// Require each node's separating line to also separate the footprints
    /// at the next node, which rules out corner cutting between nodes.
    pub interval_certificates: bool,
}

impl Default for TranscriptionConfig {
    fn default() -> Self {
        Self {
            intervals: 40,
            substeps: 4,
            t_f_bounds: None,
            feasibility_tol: 1e-6,
            optimality_tol: 1e-8,
            max_iter: 3000,
            interval_certificates: true,
        }
    }
}

pub const T_F_MAX: f64 = 60.0;

impl TranscriptionConfig {
    pub fn validate(&self) -> Result<(), OcpError> {
        if self.intervals < 10 {
            return Err(OcpError::Config(format!("need at least 10 intervals, got {}", self.intervals)));
        }
        if self.substeps == 0 {
            return Err(OcpError::Config("substeps must be positive".into()));
        }
        if let Some((lo, hi)) = self.t_f_bounds {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(OcpError::Config(format!("bad t_f bounds ({lo}, {hi})")));
            }
        }
        if !(self.feasibility_tol > 0.0 && self.optimality_tol > 0.0) {
            return Err(OcpError::Config("tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(OcpError::Config("max_iter must be positive".into()));
        }
        Ok(())
    }

    pub fn t_f_bounds_for(&self, scn: &CrossingScenario) -> (f64, f64) {
        self.t_f_bounds
            .unwrap_or_else(|| ((0.5 * scn.straight_line_bound()).max(0.1), T_F_MAX))
    }

    pub fn with_intervals(&self, k: usize) -> Self {
        Self { intervals: k, ..*self }
    }

    pub fn ipm_options(&self) -> IpmOptions {
        IpmOptions {
            tol: self.optimality_tol,
            constr_viol_tol: self.feasibility_tol,
            max_iter: self.max_iter,
            ..IpmOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OcpError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("initial guess does not fit the transcription: {0}")]
    Guess(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcpStatus {
    Optimal,
    Infeasible,
    MaxIter,
    /// Stopped by the iteration callback (time or iteration budget).
    Aborted,
    /// Numerical breakdown, or convergence without the required feasibility.
    Failed,
}

impl std::fmt::Display for OcpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OcpStatus::Optimal => "optimal",
            OcpStatus::Infeasible => "infeasible",
            OcpStatus::MaxIter => "max_iter",
            OcpStatus::Aborted => "aborted",
            OcpStatus::Failed => "failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpSolution {
    pub status: OcpStatus,
    pub t_f: f64,
    pub intervals: usize,
    /// Per vehicle, `K + 1` node states.
    pub states: Vec<Vec<VehicleState>>,
    /// Per vehicle, `K` interval inputs.
    pub inputs: Vec<Vec<ControlInput>>,
    /// Per node, one certificate per vehicle pair (see [`CrossingScenario::pairs`]).
    pub pair_duals: Vec<Vec<DualPair>>,
    /// Per node, one certificate per (vehicle, road) with the road index fastest.
    pub road_duals: Vec<Vec<DualPair>>,
    pub objective: f64,
    pub iterations: usize,
    pub restorations: usize,
    pub constraint_violation: f64,
    pub solve_seconds: f64,
}

impl OcpSolution {
    pub fn dt(&self) -> f64 {
        self.t_f / self.intervals as f64
    }

    /// Time at which each vehicle first reaches its goal position within `tol` metres.
    pub fn completion_times(&self, scn: &CrossingScenario, tol: f64) -> Vec<f64> {
        let dt = self.dt();
        self.states
            .iter()
            .zip(&scn.vehicles)
            .map(|(traj, v)| {
                traj.iter()
                    .position(|s| (s.x - v.goal.x).hypot(s.y - v.goal.y) <= tol)
                    .map_or(self.t_f, |k| k as f64 * dt)
            })
            .collect()
    }
}

/// Builds the NLP for `scn` and solves it from `guess`. The callback sees
/// every iterate and may stop the solve by returning `false`.
pub fn solve(
    scn: &CrossingScenario,
    cfg: &TranscriptionConfig,
    guess: &OcpGuess,
    callback: Option<&mut dyn FnMut(&IterateInfo) -> bool>,
) -> Result<OcpSolution, OcpError> {
    cfg.validate()?;
    let nlp = Transcription::new(scn, cfg)?;
    let x0 = nlp.pack(guess)?;
    let started = Instant::now();
    let sol = solver::solve(&nlp, &x0, &cfg.ipm_options(), callback)?;
    let status = match sol.status {
        SolveStatus::Optimal | SolveStatus::Acceptable if sol.constraint_violation <= cfg.feasibility_tol => {
            OcpStatus::Optimal
        }
        SolveStatus::Optimal | SolveStatus::Acceptable | SolveStatus::NumericalFailure => OcpStatus::Failed,
        SolveStatus::Infeasible => OcpStatus::Infeasible,
        SolveStatus::MaxIterations => OcpStatus::MaxIter,
        SolveStatus::Aborted => OcpStatus::Aborted,
    };
    log::debug!(
        "ocp: {} vehicles, K={}, status {:?}, t_f {:.4}, {} iterations",
        scn.n_vehicles(),
        cfg.intervals,
        status,
        sol.x[0],
        sol.iterations
    );
    Ok(nlp.unpack(&sol.x, status, &sol, started.elapsed()))
}

/// Limits on the validated solve loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinePolicy {
    /// Oversampling factor of the validator.
    pub dense_factor: usize,
    /// How often `K` may be doubled after a validation failure.
    pub max_doublings: usize,
    /// Retry once with `K` doubled when the iteration limit is hit.
    pub retry_max_iter: bool,
}

impl Default for RefinePolicy {
    fn default() -> Self {
        Self {
            dense_factor: 10,
            max_doublings: 2,
            retry_max_iter: true,
        }
    }
}

/// Outcome of [`solve_validated`].
#[derive(Debug, Clone)]
pub struct ValidatedSolve {
    pub solution: OcpSolution,
    /// Present when the last solve reached `Optimal`.
    pub report: Option<ValidationReport>,
    /// `K` of every attempt, in order.
    pub attempts: Vec<usize>,
}

impl ValidatedSolve {
    pub fn passed(&self) -> bool {
        self.solution.status == OcpStatus::Optimal && self.report.as_ref().is_some_and(|r| r.passed)
    }
}

/// Solves, validates against the oracle on a dense grid and doubles `K`
/// while validation fails. A deadline, when given, aborts the current solve.
pub fn solve_validated(
    scn: &CrossingScenario,
    cfg: &TranscriptionConfig,
    guess: &OcpGuess,
    policy: &RefinePolicy,
    deadline: Option<Instant>,
) -> Result<ValidatedSolve, OcpError> {
    let mut cfg = *cfg;
    let mut guess = guess.resampled(cfg.intervals);
    let mut attempts = Vec::new();
    let mut doublings = 0;
    let mut retried = false;
    loop {
        attempts.push(cfg.intervals);
        let mut cb = |_: &IterateInfo| deadline.is_none_or(|d| Instant::now() < d);
        let sol = solve(scn, &cfg, &guess, Some(&mut cb))?;
        match sol.status {
            OcpStatus::Optimal => {
                let report = validate_solution(&sol, scn, policy.dense_factor);
                if report.passed || doublings >= policy.max_doublings {
                    return Ok(ValidatedSolve {
                        solution: sol,
                        report: Some(report),
                        attempts,
                    });
                }
                log::info!(
                    "validation failed at K={} (pair margin {:?}, road margin {:?}, {:?}); doubling K",
                    cfg.intervals,
                    report.worst_pair_margin,
                    report.worst_road_margin,
                    report.messages
                );
                doublings += 1;
                cfg = cfg.with_intervals(2 * cfg.intervals);
                guess = OcpGuess::from_solution(&sol).resampled(cfg.intervals);
            }
            OcpStatus::MaxIter if policy.retry_max_iter && !retried => {
                retried = true;
                cfg = cfg.with_intervals(2 * cfg.intervals);
                guess = guess.resampled(cfg.intervals);
            }
            _ => {
                return Ok(ValidatedSolve {
                    solution: sol,
                    report: None,
                    attempts,
                })
            }
        }
    }
}

/// Starting points tried in order by [`solve_robust`]: the warm start from
/// `prev` (when given), the straight-line guess, then the scheduled guess.
pub fn starting_points(scn: &CrossingScenario, cfg: &TranscriptionConfig, prev: Option<&OcpSolution>) -> Vec<OcpGuess> {
    let mut out = Vec::with_capacity(3);
    if let Some(p) = prev {
        out.push(warm_start(p, scn, cfg));
    }
    out.push(initial_guess(scn, cfg));
    out.push(scheduled_guess(scn, cfg, None));
    out
}

/// [`solve_validated`] from each of [`starting_points`] until one passes
/// validation. Returns the first passing result, or the last attempt.
pub fn solve_robust(
    scn: &CrossingScenario,
    cfg: &TranscriptionConfig,
    prev: Option<&OcpSolution>,
    policy: &RefinePolicy,
    deadline: Option<Instant>,
) -> Result<ValidatedSolve, OcpError> {
    let mut last = None;
    for (i, guess) in starting_points(scn, cfg, prev).into_iter().enumerate() {
        if i > 0 && deadline.is_some_and(|d| Instant::now() >= d) {
            break;
        }
        let out = solve_validated(scn, cfg, &guess, policy, deadline)?;
        if out.passed() {
            return Ok(out);
        }
        log::info!("start {i} ended {}; trying the next starting point", out.solution.status);
        last = Some(out);
    }
    Ok(last.expect("at least one starting point"))
}

#[cfg(test)]
mod tests;
