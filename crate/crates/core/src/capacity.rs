//! Capacity measures and the searches that produce them for both regimes.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ocp::{solve_robust, CrossingScenario, OcpError, OcpSolution, RefinePolicy, ScenarioError, TranscriptionConfig, ValidationReport};
use crate::signalized::{simulate, Arrival, SimConfig, SimError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CapacityError {
    #[error("crossing time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("scenario for N={n}: {source}")]
    Scenario { n: usize, source: ScenarioError },
    #[error("solve for N={n}: {source}")]
    Solve { n: usize, source: OcpError },
    #[error("simulation for N={n}: {source}")]
    Simulation { n: usize, source: SimError },
    #[error("no batch size passed (first failure at N={0})")]
    NothingPassed(usize),
    #[error("empty or unordered N grid")]
    Grid,
}

/// `3600 N / T` in veh/h.
pub fn capacity_measure(n: usize, t: f64) -> Result<f64, CapacityError> {
    if !(t > 0.0) {
        return Err(CapacityError::NonPositiveTime(t));
    }
    Ok(3600.0 * n as f64 / t)
}

/// Degree of utilisation `v h_d / 3600` of a flow `v` (veh/h) with departure headway `h_d`.
pub fn degree_of_utilization(v: f64, h_d: f64) -> f64 {
    v * h_d / 3600.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    LaneFree,
    Webster,
    MaxPressure,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::LaneFree => "lane_free",
            Regime::Webster => "webster",
            Regime::MaxPressure => "max_pressure",
        })
    }
}

impl From<crate::signalized::Controller> for Regime {
    fn from(c: crate::signalized::Controller) -> Self {
        match c {
            crate::signalized::Controller::Webster => Regime::Webster,
            crate::signalized::Controller::MaxPressure => Regime::MaxPressure,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    /// The next batch size was infeasible or failed validation.
    InfeasibleAtNext,
    ThroughputDeclined,
    /// The batch-size budget ran out first.
    Budget,
}

impl std::fmt::Display for TerminalReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TerminalReason::InfeasibleAtNext => "infeasible_at_next",
            TerminalReason::ThroughputDeclined => "throughput_declined",
            TerminalReason::Budget => "budget",
        })
    }
}

/// One sampled batch size. `t` is `None` when the batch did not complete.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub t: Option<f64>,
    pub throughput: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    pub regime: Regime,
    pub n: usize,
    pub t: f64,
    pub c: f64,
    pub curve: Vec<CurvePoint>,
    pub terminal_reason: TerminalReason,
}

impl CapacityResult {
    /// Writes the `N,T,throughput` curve.
    pub fn write_curve_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["N", "T", "throughput"])?;
        for p in &self.curve {
            w.write_record([
                p.n.to_string(),
                p.t.map_or_else(String::new, |t| format!("{t:.6}")),
                format!("{:.3}", p.throughput),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `regime,N,T,C,terminal_reason`.
    pub fn summary_line(&self) -> String {
        format!("{},{},{:.6},{:.3},{}", self.regime, self.n, self.t, self.c, self.terminal_reason)
    }
}

pub const SUMMARY_HEADER: &str = "regime,N,T,C,terminal_reason";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneFreeOptions {
    pub n_start: usize,
    /// Largest batch size tried.
    pub n_budget: usize,
    pub policy: RefinePolicy,
    pub deadline: Option<Instant>,
}

impl Default for LaneFreeOptions {
    fn default() -> Self {
        Self {
            n_start: 1,
            n_budget: 6,
            policy: RefinePolicy::default(),
            deadline: None,
        }
    }
}

/// Lane-free result with the validated solution at `N_max`.
#[derive(Debug, Clone)]
pub struct LaneFreeCapacity {
    pub result: CapacityResult,
    pub solution: OcpSolution,
    pub report: ValidationReport,
    /// Largest minus smallest validated `t_f` over the passing batch sizes.
    pub t_f_spread: f64,
}

/// Solves the family for `N = n_start, n_start + 1, …`, each from the previous
/// solution, until a batch fails to solve and validate or the budget ends.
pub fn lanefree_capacity<F>(family: F, cfg: &TranscriptionConfig, opts: &LaneFreeOptions) -> Result<LaneFreeCapacity, CapacityError>
where
    F: Fn(usize) -> Result<CrossingScenario, ScenarioError>,
{
    let mut curve = Vec::new();
    let mut best: Option<(usize, OcpSolution, ValidationReport)> = None;
    let mut reason = TerminalReason::Budget;
    for n in opts.n_start.max(1)..=opts.n_budget {
        let scn = family(n).map_err(|source| CapacityError::Scenario { n, source })?;
        let prev = best.as_ref().map(|b| &b.1);
        let out = solve_robust(&scn, cfg, prev, &opts.policy, opts.deadline).map_err(|source| CapacityError::Solve { n, source })?;
        let passed = out.passed();
        log::info!(
            "lane-free N={n}: {} t_f={:.4} validated={passed}",
            out.solution.status,
            out.solution.t_f
        );
        if !passed {
            curve.push(CurvePoint {
                n,
                t: None,
                throughput: 0.0,
            });
            reason = TerminalReason::InfeasibleAtNext;
            break;
        }
        let t = out.solution.t_f;
        curve.push(CurvePoint {
            n,
            t: Some(t),
            throughput: capacity_measure(n, t)?,
        });
        let report = out.report.expect("validated");
        best = Some((n, out.solution, report));
    }
    let Some((n, solution, report)) = best else {
        return Err(CapacityError::NothingPassed(opts.n_start.max(1)));
    };
    let times: Vec<f64> = curve.iter().filter_map(|p| p.t).collect();
    let spread = times.iter().copied().fold(f64::NEG_INFINITY, f64::max) - times.iter().copied().fold(f64::INFINITY, f64::min);
    let t = solution.t_f;
    Ok(LaneFreeCapacity {
        result: CapacityResult {
            regime: Regime::LaneFree,
            n,
            t,
            c: capacity_measure(n, t)?,
            curve,
            terminal_reason: reason,
        },
        solution,
        report,
        t_f_spread: spread,
    })
}

/// Relative drop that counts as a decline of the throughput curve.
pub const DECLINE_TOL: f64 = 0.02;

/// Peak of a throughput curve: its largest sample (lowest `N` on ties),
/// declared declined when two consecutive later samples are both more than
/// [`DECLINE_TOL`] below it. An incomplete batch is beyond capacity and
/// counts as a decline on its own.
pub fn throughput_peak(curve: &[CurvePoint]) -> Option<(usize, TerminalReason)> {
    let peak = curve
        .iter()
        .enumerate()
        .filter(|(_, p)| p.t.is_some())
        .fold(None, |best: Option<usize>, (i, p)| match best {
            Some(b) if curve[b].throughput >= p.throughput => Some(b),
            _ => Some(i),
        })?;
    let low = (1.0 - DECLINE_TOL) * curve[peak].throughput;
    let mut run = 0;
    for p in &curve[peak + 1..] {
        if p.t.is_none() {
            return Some((peak, TerminalReason::ThroughputDeclined));
        }
        run = if p.throughput < low { run + 1 } else { 0 };
        if run >= 2 {
            return Some((peak, TerminalReason::ThroughputDeclined));
        }
    }
    Some((peak, TerminalReason::Budget))
}

/// Simulates every batch size of `n_grid` (in parallel) and returns the
/// throughput peak.
pub fn signalized_capacity<F>(arrivals_for: F, cfg: &SimConfig, n_grid: &[usize]) -> Result<CapacityResult, CapacityError>
where
    F: Fn(usize) -> Result<Vec<Arrival>, SimError> + Sync,
{
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[1] <= w[0]) || n_grid[0] == 0 {
        return Err(CapacityError::Grid);
    }
    let curve: Vec<CurvePoint> = n_grid
        .par_iter()
        .map(|&n| {
            let arr = arrivals_for(n).map_err(|source| CapacityError::Simulation { n, source })?;
            let res = simulate(cfg, &arr).map_err(|source| CapacityError::Simulation { n, source })?;
            let t = res.t_batch.filter(|_| res.completed() && arr.len() == n);
            Ok(CurvePoint {
                n,
                t,
                throughput: t.map_or(Ok(0.0), |t| capacity_measure(n, t))?,
            })
        })
        .collect::<Result<_, CapacityError>>()?;
    let (peak, reason) = throughput_peak(&curve).ok_or(CapacityError::NothingPassed(n_grid[0]))?;
    let p = curve[peak];
    Ok(CapacityResult {
        regime: cfg.controller.into(),
        n: p.n,
        t: p.t.expect("complete"),
        c: p.throughput,
        curve,
        terminal_reason: reason,
    })
}
