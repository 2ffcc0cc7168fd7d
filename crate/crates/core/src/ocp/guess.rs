//! Starting points: straight-line interpolation, warm starts and resampling.

use serde::{Deserialize, Serialize};

use super::{CrossingScenario, OcpSolution, TranscriptionConfig};
use crate::dynamics::{ControlInput, VehicleState};
use crate::geometry::{seed_dual, vehicle_polytope, DualPair, Pose};

/// A point in the space of [`OcpSolution`] trajectories, used to start a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpGuess {
    pub t_f: f64,
    pub states: Vec<Vec<VehicleState>>,
    pub inputs: Vec<Vec<ControlInput>>,
    pub pair_duals: Vec<Vec<DualPair>>,
    pub road_duals: Vec<Vec<DualPair>>,
}

impl OcpGuess {
    pub fn from_solution(sol: &OcpSolution) -> Self {
        Self {
            t_f: sol.t_f,
            states: sol.states.clone(),
            inputs: sol.inputs.clone(),
            pair_duals: sol.pair_duals.clone(),
            road_duals: sol.road_duals.clone(),
        }
    }

    pub fn intervals(&self) -> usize {
        self.pair_duals.len().saturating_sub(1)
    }

    /// Same trajectories on `k` intervals: states and duals are interpolated
    /// linearly in normalised time, inputs are sampled at interval midpoints.
    pub fn resampled(&self, k: usize) -> Self {
        let k0 = self.intervals();
        if k0 == k {
            return self.clone();
        }
        let ratio = k0 as f64 / k as f64;
        let states = self
            .states
            .iter()
            .map(|traj| {
                (0..=k)
                    .map(|j| {
                        let (a, b, w) = bracket(j as f64 * ratio, k0);
                        let (sa, sb) = (traj[a].to_array(), traj[b].to_array());
                        VehicleState::from_array(std::array::from_fn(|i| (1.0 - w) * sa[i] + w * sb[i]))
                    })
                    .collect()
            })
            .collect();
        let inputs = self
            .inputs
            .iter()
            .map(|traj| {
                (0..k)
                    .map(|j| traj[(((j as f64 + 0.5) * ratio) as usize).min(k0 - 1)])
                    .collect()
            })
            .collect();
        let interp = |duals: &Vec<Vec<DualPair>>| -> Vec<Vec<DualPair>> {
            (0..=k)
                .map(|j| {
                    let (a, b, w) = bracket(j as f64 * ratio, k0);
                    duals[a].iter().zip(&duals[b]).map(|(da, db)| lerp_dual(da, db, w)).collect()
                })
                .collect()
        };
        Self {
            t_f: self.t_f,
            states,
            inputs,
            pair_duals: interp(&self.pair_duals),
            road_duals: interp(&self.road_duals),
        }
    }
}

fn bracket(tau: f64, k0: usize) -> (usize, usize, f64) {
    let a = (tau.floor() as usize).min(k0);
    let b = (a + 1).min(k0);
    (a, b, if a == b { 0.0 } else { tau - a as f64 })
}

fn lerp_dual(a: &DualPair, b: &DualPair, w: f64) -> DualPair {
    let mix = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (1.0 - w) * p + w * q).collect();
    DualPair {
        lambda_pq: mix(&a.lambda_pq, &b.lambda_pq),
        lambda_qp: mix(&a.lambda_qp, &b.lambda_qp),
        s: [(1.0 - w) * a.s[0] + w * b.s[0], (1.0 - w) * a.s[1] + w * b.s[1]],
    }
}

fn initial_t_f(scn: &CrossingScenario, cfg: &TranscriptionConfig) -> f64 {
    let (lo, hi) = cfg.t_f_bounds_for(scn);
    scn.vehicles
        .iter()
        .map(|v| (v.goal.x - v.start.x).hypot(v.goal.y - v.start.y) / v.start.v)
        .fold(0.0, f64::max)
        .clamp(lo, hi)
}

/// Pose interpolated from start to goal at constant initial speed, zero inputs.
fn straight_trajectory(scn: &CrossingScenario, v: usize, k: usize, t_f: f64) -> (Vec<VehicleState>, Vec<ControlInput>) {
    let spec = &scn.vehicles[v];
    let s0 = spec.start;
    let g = spec.goal;
    let yaw = ((g.theta - s0.theta) / t_f).clamp(-0.9 * spec.limits.r_max, 0.9 * spec.limits.r_max);
    let states = (0..=k)
        .map(|j| {
            if j == 0 {
                return s0;
            }
            let w = j as f64 / k as f64;
            VehicleState {
                r: yaw,
                beta: 0.0,
                v: s0.v,
                x: s0.x + w * (g.x - s0.x),
                y: s0.y + w * (g.y - s0.y),
                theta: s0.theta + w * (g.theta - s0.theta),
            }
        })
        .collect();
    (states, vec![ControlInput::default(); k])
}

/// Certificates from the oracle's separating direction for every node of
/// the given trajectories.
pub fn seed_duals(scn: &CrossingScenario, states: &[Vec<VehicleState>]) -> (Vec<Vec<DualPair>>, Vec<Vec<DualPair>>) {
    let nodes = states.first().map_or(0, Vec::len);
    let pairs = scn.pairs();
    let mut pair_duals = Vec::with_capacity(nodes);
    let mut road_duals = Vec::with_capacity(nodes);
    for k in 0..nodes {
        let polys: Vec<_> = states
            .iter()
            .zip(&scn.vehicles)
            .map(|(traj, v)| {
                let s = traj[k];
                vehicle_polytope(&Pose::new(s.x, s.y, s.theta), &v.shape)
            })
            .collect();
        pair_duals.push(pairs.iter().map(|&(i, j)| seed_dual(&polys[i], &polys[j])).collect());
        road_duals.push(
            polys
                .iter()
                .flat_map(|p| scn.roads.iter().map(move |r| seed_dual(p, r)))
                .collect(),
        );
    }
    (pair_duals, road_duals)
}

/// Straight-line initial guess: poses interpolate linearly from start to
/// goal at constant initial speed, inputs are zero and `t_f` is the longest
/// straight-line distance over initial speed, clamped to the `t_f` bounds.
pub fn initial_guess(scn: &CrossingScenario, cfg: &TranscriptionConfig) -> OcpGuess {
    let k = cfg.intervals;
    let t_f = initial_t_f(scn, cfg);
    let (states, inputs): (Vec<_>, Vec<_>) =
        (0..scn.n_vehicles()).map(|v| straight_trajectory(scn, v, k, t_f)).unzip();
    let (pair_duals, road_duals) = seed_duals(scn, &states);
    OcpGuess {
        t_f,
        states,
        inputs,
        pair_duals,
        road_duals,
    }
}

/// Guess for `scn` from the solution of a scenario holding its first
/// vehicles. Known trajectories and certificates are reused; new vehicles
/// get straight-line trajectories over the previous `t_f` and fresh seeds.
pub fn warm_start(prev: &OcpSolution, scn: &CrossingScenario, cfg: &TranscriptionConfig) -> OcpGuess {
    let k = cfg.intervals;
    let old = OcpGuess::from_solution(prev).resampled(k);
    let n_old = old.states.len().min(scn.n_vehicles());
    let (lo, hi) = cfg.t_f_bounds_for(scn);
    let t_f = old.t_f.clamp(lo, hi);
    let mut states = old.states[..n_old].to_vec();
    let mut inputs = old.inputs[..n_old].to_vec();
    for v in n_old..scn.n_vehicles() {
        let (s, u) = straight_trajectory(scn, v, k, t_f);
        states.push(s);
        inputs.push(u);
    }
    let (mut pair_duals, mut road_duals) = seed_duals(scn, &states);

    let n_prev = prev.states.len();
    let prev_pairs: Vec<(usize, usize)> =
        (0..n_prev).flat_map(|i| ((i + 1)..n_prev).map(move |j| (i, j))).collect();
    let nr = scn.roads.len();
    let prev_nr = old.road_duals.first().map_or(0, |d| d.len() / n_prev.max(1));
    for (b, &(i, j)) in scn.pairs().iter().enumerate() {
        if let Some(pb) = prev_pairs.iter().position(|&p| p == (i, j)) {
            for node in 0..=k {
                pair_duals[node][b] = old.pair_duals[node][pb].clone();
            }
        }
    }
    if prev_nr == nr {
        for v in 0..n_old {
            for r in 0..nr {
                for node in 0..=k {
                    road_duals[node][v * nr + r] = old.road_duals[node][v * nr + r].clone();
                }
            }
        }
    }
    OcpGuess {
        t_f,
        states,
        inputs,
        pair_duals,
        road_duals,
    }
}

/// Cubic Bézier from the start pose to the goal pose, tabulated by arc length.
struct PathTable {
    pts: Vec<[f64; 3]>,
    arc: Vec<f64>,
}

impl PathTable {
    fn new(start: &Pose, goal: &Pose) -> Self {
        let chord = (goal.x - start.x).hypot(goal.y - start.y);
        let turn = (goal.theta - start.theta).abs();
        let h = if turn < 1e-6 { chord / 3.0 } else { 0.4 * chord };
        let p0 = [start.x, start.y];
        let p1 = [start.x + h * start.theta.cos(), start.y + h * start.theta.sin()];
        let p2 = [goal.x - h * goal.theta.cos(), goal.y - h * goal.theta.sin()];
        let p3 = [goal.x, goal.y];
        let n = 400;
        let mut pts = Vec::with_capacity(n + 1);
        let mut arc = Vec::with_capacity(n + 1);
        let mut len = 0.0;
        for i in 0..=n {
            let t = i as f64 / n as f64;
            let c = [(1.0 - t).powi(3), 3.0 * (1.0 - t).powi(2) * t, 3.0 * (1.0 - t) * t * t, t.powi(3)];
            let x = c[0] * p0[0] + c[1] * p1[0] + c[2] * p2[0] + c[3] * p3[0];
            let y = c[0] * p0[1] + c[1] * p1[1] + c[2] * p2[1] + c[3] * p3[1];
            if let Some(prev) = pts.last() {
                let prev: &[f64; 3] = prev;
                len += (x - prev[0]).hypot(y - prev[1]);
            }
            // heading from the Bézier tangent, blended towards the end poses
            let d = [
                3.0 * (1.0 - t).powi(2) * (p1[0] - p0[0])
                    + 6.0 * (1.0 - t) * t * (p2[0] - p1[0])
                    + 3.0 * t * t * (p3[0] - p2[0]),
                3.0 * (1.0 - t).powi(2) * (p1[1] - p0[1])
                    + 6.0 * (1.0 - t) * t * (p2[1] - p1[1])
                    + 3.0 * t * t * (p3[1] - p2[1]),
            ];
            let theta = if d[0].hypot(d[1]) > 1e-9 {
                start.theta + crate::geometry::normalize_angle(d[1].atan2(d[0]) - start.theta)
            } else {
                start.theta + t * (goal.theta - start.theta)
            };
            pts.push([x, y, theta]);
            arc.push(len);
        }
        Self { pts, arc }
    }

    fn length(&self) -> f64 {
        *self.arc.last().unwrap_or(&0.0)
    }

    fn at(&self, s: f64) -> [f64; 3] {
        let s = s.clamp(0.0, self.length());
        let i = self.arc.partition_point(|&a| a < s).clamp(1, self.arc.len() - 1);
        let (a0, a1) = (self.arc[i - 1], self.arc[i]);
        let w = if a1 > a0 { (s - a0) / (a1 - a0) } else { 0.0 };
        let (p, q) = (self.pts[i - 1], self.pts[i]);
        std::array::from_fn(|c| (1.0 - w) * p[c] + w * q[c])
    }
}

/// Progress profiles `s(u) / L` on `u = t / t_f`, in order of preference.
const PROFILES: [fn(f64) -> f64; 7] = [
    |u| u,
    |u| 1.0 - (1.0 - u).powi(2),
    |u| u * u,
    |u| u.powf(1.5),
    |u| 1.0 - (1.0 - u).powi(3),
    |u| u.powi(3),
    |u| u.powi(4),
];

fn profile_trajectory(
    path: &PathTable,
    profile: fn(f64) -> f64,
    k: usize,
    t_f: f64,
    start: &VehicleState,
    lim: &crate::dynamics::Limits,
) -> (Vec<VehicleState>, Vec<ControlInput>) {
    let len = path.length();
    let dt = t_f / k as f64;
    let du = 1e-4;
    let mut states = Vec::with_capacity(k + 1);
    for j in 0..=k {
        if j == 0 {
            states.push(*start);
            continue;
        }
        let u = j as f64 / k as f64;
        let s = len * profile(u);
        let [x, y, theta] = path.at(s);
        let (u0, u1) = ((u - du).max(0.0), (u + du).min(1.0));
        let speed = len * (profile(u1) - profile(u0)) / ((u1 - u0) * t_f);
        let theta_ahead = path.at(len * profile(u1))[2];
        let theta_behind = path.at(len * profile(u0))[2];
        let yaw = (theta_ahead - theta_behind) / ((u1 - u0) * t_f);
        states.push(VehicleState {
            r: yaw.clamp(-0.9 * lim.r_max, 0.9 * lim.r_max),
            beta: 0.0,
            v: speed.clamp(lim.v_min + 0.1 * (lim.v_max - lim.v_min).min(1.0), 0.98 * lim.v_max),
            x,
            y,
            theta,
        });
    }
    let inputs = (0..k)
        .map(|j| ControlInput {
            a: ((states[j + 1].v - states[j].v) / dt).clamp(-0.95 * lim.a_max, 0.95 * lim.a_max),
            delta: 0.0,
        })
        .collect();
    (states, inputs)
}

fn footprints(scn: &CrossingScenario, v: usize, traj: &[VehicleState]) -> Vec<crate::geometry::Polytope> {
    traj.iter()
        .map(|s| vehicle_polytope(&Pose::new(s.x, s.y, s.theta), &scn.vehicles[v].shape))
        .collect()
}

/// Smallest clearance above the margin between a candidate and placed vehicles.
fn clearance(scn: &CrossingScenario, cand: &[crate::geometry::Polytope], placed: &[Vec<crate::geometry::Polytope>]) -> f64 {
    let mut worst = f64::INFINITY;
    for other in placed {
        for (a, b) in cand.iter().zip(other) {
            worst = worst.min(crate::geometry::distance_oracle(a, b) - scn.d_min);
        }
    }
    worst
}

/// Collision-aware guess: each vehicle follows a Bézier path from start to
/// goal; vehicles are placed in order, each choosing the progress profile
/// that keeps the most clearance to those already placed. Vehicles of
/// `base` keep their trajectories. The smallest `t_f` from a geometric
/// ladder that clears every vehicle is used.
pub fn scheduled_guess(scn: &CrossingScenario, cfg: &TranscriptionConfig, base: Option<&OcpSolution>) -> OcpGuess {
    const CLEAR: f64 = 0.3;
    let k = cfg.intervals;
    let (lo, hi) = cfg.t_f_bounds_for(scn);
    let paths: Vec<PathTable> = scn
        .vehicles
        .iter()
        .map(|v| PathTable::new(&v.start_pose(), &v.goal))
        .collect();
    let t_min = scn
        .vehicles
        .iter()
        .zip(&paths)
        .map(|(v, p)| super::min_time_1d(p.length(), v.start.v, v.limits.v_max, v.limits.a_max))
        .fold(lo, f64::max);
    let old = base.map(|b| OcpGuess::from_solution(b).resampled(k));
    let n_keep = old.as_ref().map_or(0, |o| o.states.len().min(scn.n_vehicles()));

    let mut best: Option<(f64, f64, Vec<Vec<VehicleState>>, Vec<Vec<ControlInput>>)> = None;
    let ladder: Vec<f64> = match &old {
        Some(o) => vec![o.t_f, 1.15 * o.t_f, 1.35 * o.t_f, 1.6 * o.t_f],
        None => vec![1.05, 1.2, 1.4, 1.7, 2.0, 2.5].into_iter().map(|f| f * t_min).collect(),
    };
    for t_f in ladder.into_iter().map(|t| t.clamp(lo, hi)) {
        let mut states: Vec<Vec<VehicleState>> = Vec::new();
        let mut inputs: Vec<Vec<ControlInput>> = Vec::new();
        let mut polys = Vec::new();
        let mut worst = f64::INFINITY;
        if let Some(o) = &old {
            let scale = o.t_f / t_f;
            for v in 0..n_keep {
                let traj: Vec<VehicleState> = o.states[v]
                    .iter()
                    .enumerate()
                    .map(|(j, s)| {
                        if j == 0 {
                            *s
                        } else {
                            VehicleState {
                                v: s.v * scale,
                                r: s.r * scale,
                                ..*s
                            }
                        }
                    })
                    .collect();
                polys.push(footprints(scn, v, &traj));
                states.push(traj);
                inputs.push(o.inputs[v].iter().map(|u| ControlInput { a: u.a * scale * scale, ..*u }).collect());
            }
        }
        for v in n_keep..scn.n_vehicles() {
            let spec = &scn.vehicles[v];
            let mut chosen = None;
            let mut fallback: Option<(f64, (Vec<VehicleState>, Vec<ControlInput>), Vec<_>)> = None;
            for prof in PROFILES {
                let cand = profile_trajectory(&paths[v], prof, k, t_f, &spec.start, &spec.limits);
                let fp = footprints(scn, v, &cand.0);
                let c = clearance(scn, &fp, &polys);
                if c >= CLEAR {
                    chosen = Some((c, cand, fp));
                    break;
                }
                if fallback.as_ref().is_none_or(|f| c > f.0) {
                    fallback = Some((c, cand, fp));
                }
            }
            let (c, (s, u), fp) = chosen.or(fallback).expect("at least one profile");
            worst = worst.min(c);
            states.push(s);
            inputs.push(u);
            polys.push(fp);
        }
        let done = worst >= 0.0;
        if best.as_ref().is_none_or(|b| worst > b.0) || done {
            best = Some((worst, t_f, states, inputs));
        }
        if done {
            break;
        }
    }
    let (_, t_f, states, inputs) = best.expect("non-empty ladder");
    let (pair_duals, road_duals) = seed_duals(scn, &states);
    OcpGuess {
        t_f,
        states,
        inputs,
        pair_duals,
        road_duals,
    }
}
