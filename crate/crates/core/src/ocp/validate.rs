//! Dense re-simulation of a solution against the primal distance oracle.

use serde::{Deserialize, Serialize};

use super::{CrossingScenario, OcpSolution};
use crate::dynamics::{check_limits, step_rk4, Bound, ControlInput, Limits, VehicleState};
use crate::geometry::{distance_oracle, vehicle_polytope, Polytope, Pose};

/// Tolerance on distance margins and terminal errors.
pub const VALIDATION_TOL: f64 = 1e-3;
/// Tolerance on the admissible ranges between nodes, relative to each bound.
pub const LIMIT_REL_TOL: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub dense_factor: usize,
    pub samples: usize,
    /// Smallest `distance - d_min` over all pairs and dense samples.
    pub worst_pair_margin: Option<f64>,
    /// `(i, j, t)` where the worst pair margin occurs.
    pub worst_pair: Option<(usize, usize, f64)>,
    /// Smallest `distance - d_rmin` over all vehicles, roads and samples.
    pub worst_road_margin: Option<f64>,
    /// `(vehicle, road, t)` where the worst road margin occurs.
    pub worst_road: Option<(usize, usize, f64)>,
    /// Same margins evaluated at the shooting nodes only.
    pub node_pair_margin: Option<f64>,
    pub node_road_margin: Option<f64>,
    /// Largest excess over any admissible range relative to the bound (0 when none).
    pub worst_limit_excess: f64,
    pub terminal_position_error: f64,
    pub terminal_heading_error: f64,
    pub terminal_speed_error: f64,
    pub messages: Vec<String>,
}

fn relative_excess(s: &VehicleState, u: &ControlInput, lim: &Limits) -> f64 {
    check_limits(s, u, lim)
        .iter()
        .map(|v| {
            let bound = match v.bound {
                Bound::SpeedMin => lim.v_min,
                Bound::SpeedMax => lim.v_max,
                Bound::Acceleration => lim.a_max,
                Bound::Steering => lim.delta_max,
                Bound::YawRate => lim.r_max,
                Bound::Sideslip => lim.beta_max,
            };
            v.margin / bound
        })
        .fold(0.0, f64::max)
}

fn min_opt(a: Option<f64>, b: f64) -> Option<f64> {
    Some(a.map_or(b, |a| a.min(b)))
}

/// Re-integrates every vehicle from its start state with step `dt /
/// dense_factor` under the solution's piecewise-constant inputs and checks
/// distances, limits and terminal conditions at every sample.
pub fn validate_solution(sol: &OcpSolution, scn: &CrossingScenario, dense_factor: usize) -> ValidationReport {
    let dense_factor = dense_factor.max(1);
    let k = sol.intervals;
    let h = sol.dt() / dense_factor as f64;
    let nv = scn.n_vehicles();
    let mut messages = Vec::new();
    let mut limit_excess = 0.0f64;

    // dense trajectories
    let mut dense: Vec<Vec<VehicleState>> = Vec::with_capacity(nv);
    let mut integration_ok = true;
    for (v, spec) in scn.vehicles.iter().enumerate() {
        let mut traj = Vec::with_capacity(k * dense_factor + 1);
        let mut s = spec.start;
        traj.push(s);
        'outer: for node in 0..k {
            let u = sol.inputs[v][node];
            limit_excess = limit_excess.max(relative_excess(&s, &u, &spec.limits));
            for _ in 0..dense_factor {
                match step_rk4(&s, &u, &spec.params, h) {
                    Ok(next) if next.is_finite() => s = next,
                    Ok(_) => {
                        messages.push(format!("vehicle {v}: integration diverged on interval {node}"));
                        integration_ok = false;
                        break 'outer;
                    }
                    Err(e) => {
                        messages.push(format!("vehicle {v}: {e} on interval {node}"));
                        integration_ok = false;
                        break 'outer;
                    }
                }
                limit_excess = limit_excess.max(relative_excess(&s, &u, &spec.limits));
                traj.push(s);
            }
        }
        dense.push(traj);
    }

    let footprint = |v: usize, s: &VehicleState| vehicle_polytope(&Pose::new(s.x, s.y, s.theta), &scn.vehicles[v].shape);
    let mut worst_pair_margin = None;
    let mut worst_pair = None;
    let mut worst_road_margin = None;
    let mut worst_road = None;
    let mut node_pair_margin = None;
    let mut node_road_margin = None;
    let samples = dense.iter().map(Vec::len).min().unwrap_or(0);
    for idx in 0..samples {
        let t = idx as f64 * h;
        let polys: Vec<Polytope> = (0..nv).map(|v| footprint(v, &dense[v][idx])).collect();
        for i in 0..nv {
            for j in (i + 1)..nv {
                let m = distance_oracle(&polys[i], &polys[j]) - scn.d_min;
                if worst_pair_margin.is_none_or(|w| m < w) {
                    worst_pair_margin = Some(m);
                    worst_pair = Some((i, j, t));
                }
            }
            for (r, road) in scn.roads.iter().enumerate() {
                let m = distance_oracle(&polys[i], road) - scn.d_rmin;
                if worst_road_margin.is_none_or(|w| m < w) {
                    worst_road_margin = Some(m);
                    worst_road = Some((i, r, t));
                }
            }
        }
    }
    // node-only margins use the solution's own node states
    for node in 0..=k {
        let polys: Vec<Polytope> = (0..nv).map(|v| footprint(v, &sol.states[v][node])).collect();
        for i in 0..nv {
            for j in (i + 1)..nv {
                node_pair_margin = min_opt(node_pair_margin, distance_oracle(&polys[i], &polys[j]) - scn.d_min);
            }
            for road in &scn.roads {
                node_road_margin = min_opt(node_road_margin, distance_oracle(&polys[i], road) - scn.d_rmin);
            }
        }
    }

    let mut pos_err = 0.0f64;
    let mut head_err = 0.0f64;
    let mut speed_err = 0.0f64;
    for (v, spec) in scn.vehicles.iter().enumerate() {
        let Some(end) = dense[v].last().filter(|_| dense[v].len() == k * dense_factor + 1) else {
            pos_err = f64::INFINITY;
            continue;
        };
        pos_err = pos_err.max((end.x - spec.goal.x).hypot(end.y - spec.goal.y));
        head_err = head_err.max((end.theta - spec.goal.theta).abs());
        if let Some(vf) = spec.goal_speed {
            speed_err = speed_err.max((end.v - vf).abs());
        }
    }

    let tol = VALIDATION_TOL;
    if worst_pair_margin.is_some_and(|m| m < -tol) {
        let (i, j, t) = worst_pair.unwrap_or_default();
        messages.push(format!(
            "vehicles {i} and {j} closer than the margin by {:.4} m at t={t:.3} s",
            -worst_pair_margin.unwrap_or_default()
        ));
    }
    if worst_road_margin.is_some_and(|m| m < -tol) {
        let (v, r, t) = worst_road.unwrap_or_default();
        messages.push(format!(
            "vehicle {v} closer to road block {r} than the margin by {:.4} m at t={t:.3} s",
            -worst_road_margin.unwrap_or_default()
        ));
    }
    if limit_excess > LIMIT_REL_TOL {
        messages.push(format!("admissible range exceeded by {:.2}%", 100.0 * limit_excess));
    }
    if pos_err > tol || head_err > tol || speed_err > tol {
        messages.push(format!(
            "terminal error: position {pos_err:.2e} m, heading {head_err:.2e} rad, speed {speed_err:.2e} m/s"
        ));
    }
    let passed = integration_ok
        && worst_pair_margin.is_none_or(|m| m >= -tol)
        && worst_road_margin.is_none_or(|m| m >= -tol)
        && limit_excess <= LIMIT_REL_TOL
        && pos_err <= tol
        && head_err <= tol
        && speed_err <= tol;

    ValidationReport {
        passed,
        dense_factor,
        samples,
        worst_pair_margin,
        worst_pair,
        worst_road_margin,
        worst_road,
        node_pair_margin,
        node_road_margin,
        worst_limit_excess: limit_excess,
        terminal_position_error: pos_err,
        terminal_heading_error: head_err,
        terminal_speed_error: speed_err,
        messages,
    }
}
