//! Variable and constraint layout of the multiple-shooting NLP.
//!
//! Variables: `t_f`, then per vehicle the interleaved sequence
//! `x_0 u_0 x_1 u_1 … x_K` (8 entries per interval, 6 for the last node),
//! then per node the dual blocks (pairs first, then vehicle-road blocks),
//! each laid out as `[lambda (4), mu (rows of Q), s (2)]`.
//!
//! Constraints: 6 defect rows per vehicle and interval, then 6 rows per node
//! and block:
//!
//! ```text
//! -b_P·lambda - b_Q·mu >= margin
//! A_Pᵀ lambda + s       = 0
//! A_Qᵀ mu     - s       = 0
//! s·s                  <= 1
//! ```

use std::time::Duration;

use nalgebra::{SVector, Vector2};
use num_dual::{hessian, Dual2SVec64};

use super::{CrossingScenario, OcpError, OcpGuess, OcpSolution, OcpStatus, TranscriptionConfig};
use crate::dynamics::{rk4_generic, rk4_with_sensitivity, ControlInput, VehicleState};
use crate::geometry::{cheapest_combination, vehicle_polytope, DualPair, Polytope, Pose, VehicleShape};
use crate::solver::{Nlp, Solution, INF_BOUND};

const NODE_STRIDE: usize = 8;
const VEHICLE_ROWS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Pair(usize, usize),
    Road { vehicle: usize, road: usize },
}

#[derive(Debug, Clone, Copy)]
enum Side {
    Vehicle(usize),
    Road(usize),
}

#[derive(Debug, Clone, Copy)]
struct Block {
    kind: BlockKind,
    p: usize,
    q: Side,
    q_rows: usize,
    margin: f64,
    /// offset inside the node's dual region
    offset: usize,
    /// offset inside the interval's certificate region
    sweep_offset: usize,
}

impl Block {
    fn size(&self) -> usize {
        VEHICLE_ROWS + self.q_rows + 2
    }

    fn sweep_size(&self) -> usize {
        match self.q {
            Side::Vehicle(_) => 2 * VEHICLE_ROWS,
            Side::Road(_) => VEHICLE_ROWS,
        }
    }
}

/// Support term `b·lambda` / `Aᵀ lambda` of one footprint.
#[derive(Debug, Clone, Copy)]
enum Term {
    Vehicle { v: usize, node: usize, lam: usize },
    Road { r: usize, lam: usize },
}

#[derive(Debug, Clone, Copy)]
enum Row {
    /// `-b_a·lambda_a - b_b·lambda_b`
    Dist { a: Term, b: Term },
    /// `(Aᵀ lambda)[comp] + sign · s[comp]`
    Residual { term: Term, comp: usize, s: usize, sign: f64 },
    /// `s·s`
    Norm { s: usize },
}

/// The transcribed problem; implements [`Nlp`].
pub struct Transcription<'a> {
    scn: &'a CrossingScenario,
    k: usize,
    substeps: usize,
    t_f_bounds: (f64, f64),
    veh_offset: Vec<usize>,
    blocks: Vec<Block>,
    node_dual_size: usize,
    dual_offset: usize,
    sweep_size: usize,
    sweep_offset: Option<usize>,
    n_vars: usize,
    n_defect_rows: usize,
    rows: Vec<Row>,
    row_bounds: Vec<(f64, f64)>,
    jac_struct: Vec<(usize, usize)>,
    hess_struct: Vec<(usize, usize)>,
}

/// Rows of a vehicle footprint: normal `k` at heading `theta`. The derivative
/// with respect to `theta` of normal `k` is normal `k + 1`.
fn normals(theta: f64) -> [[f64; 2]; 4] {
    let (s, c) = theta.sin_cos();
    [[c, s], [-s, c], [-c, -s], [s, -c]]
}

/// `(Σ lambda_j n_j, Σ lambda_j n_j')`.
fn weighted_normals(l: &[f64], n: &[[f64; 2]; 4]) -> ([f64; 2], [f64; 2]) {
    let mut sum = [0.0; 2];
    let mut dsum = [0.0; 2];
    for j in 0..VEHICLE_ROWS {
        for c in 0..2 {
            sum[c] += l[j] * n[j][c];
            dsum[c] += l[j] * n[(j + 1) % 4][c];
        }
    }
    (sum, dsum)
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

impl<'a> Transcription<'a> {
    pub fn new(scn: &'a CrossingScenario, cfg: &TranscriptionConfig) -> Result<Self, OcpError> {
        cfg.validate()?;
        let k = cfg.intervals;
        let nv = scn.n_vehicles();
        let veh_block = NODE_STRIDE * k + 6;
        let veh_offset: Vec<usize> = (0..nv).map(|v| 1 + v * veh_block).collect();
        let dual_offset = 1 + nv * veh_block;

        let mut blocks = Vec::new();
        let (mut offset, mut sweep) = (0, 0);
        let mut push = |kind, p, q, q_rows, margin| {
            let b = Block {
                kind,
                p,
                q,
                q_rows,
                margin,
                offset,
                sweep_offset: sweep,
            };
            offset += b.size();
            sweep += b.sweep_size();
            blocks.push(b);
        };
        for (i, j) in scn.pairs() {
            push(BlockKind::Pair(i, j), i, Side::Vehicle(j), VEHICLE_ROWS, scn.d_min);
        }
        for v in 0..nv {
            for (r, road) in scn.roads.iter().enumerate() {
                push(BlockKind::Road { vehicle: v, road: r }, v, Side::Road(r), road.rows(), scn.d_rmin);
            }
        }
        let node_dual_size = offset;
        let sweep_size = sweep;
        let sweep_base = dual_offset + (k + 1) * node_dual_size;
        let (sweep_offset, n_vars) = if cfg.interval_certificates && !blocks.is_empty() {
            (Some(sweep_base), sweep_base + k * sweep_size)
        } else {
            (None, sweep_base)
        };

        let mut t = Self {
            scn,
            k,
            substeps: cfg.substeps,
            t_f_bounds: cfg.t_f_bounds_for(scn),
            veh_offset,
            blocks,
            node_dual_size,
            dual_offset,
            sweep_size,
            sweep_offset,
            n_vars,
            n_defect_rows: 6 * nv * k,
            rows: Vec::new(),
            row_bounds: Vec::new(),
            jac_struct: Vec::new(),
            hess_struct: Vec::new(),
        };
        t.build_rows();
        let probe = t.probe_point();
        let mut js = Vec::new();
        t.jacobian_pass(&probe, &mut |r, c, _| js.push((r, c)));
        let y = vec![1.0; t.n_cons()];
        let mut hs = Vec::new();
        t.hessian_pass(&probe, &y, &mut |r, c, _| hs.push((r, c)));
        t.jac_struct = js;
        t.hess_struct = hs;
        Ok(t)
    }

    fn node_terms(&self, k: usize, b: usize) -> (Term, Term, usize) {
        let blk = &self.blocks[b];
        let d = self.dual_index(k, b);
        let p = Term::Vehicle {
            v: blk.p,
            node: k,
            lam: d,
        };
        let q = match blk.q {
            Side::Vehicle(v) => Term::Vehicle {
                v,
                node: k,
                lam: d + VEHICLE_ROWS,
            },
            Side::Road(r) => Term::Road {
                r,
                lam: d + VEHICLE_ROWS,
            },
        };
        (p, q, d + VEHICLE_ROWS + blk.q_rows)
    }

    fn build_rows(&mut self) {
        let mut rows = Vec::new();
        let mut bounds = Vec::new();
        for k in 0..=self.k {
            for b in 0..self.blocks.len() {
                let margin = self.blocks[b].margin;
                let (p, q, s) = self.node_terms(k, b);
                rows.push(Row::Dist { a: p, b: q });
                bounds.push((margin, INF_BOUND));
                for (term, sign) in [(p, 1.0), (q, -1.0)] {
                    for comp in 0..2 {
                        rows.push(Row::Residual { term, comp, s, sign });
                        bounds.push((0.0, 0.0));
                    }
                }
                rows.push(Row::Norm { s });
                bounds.push((-INF_BOUND, 1.0));
            }
        }
        // Interval certificates: the separating direction found at node k
        // must also separate both footprints at node k + 1 and the cross
        // combinations, so one line separates the footprints' hulls over the
        // whole interval.
        if let Some(base) = self.sweep_offset {
            for k in 0..self.k {
                for (b, blk) in self.blocks.iter().enumerate() {
                    let (p0, q0, s) = self.node_terms(k, b);
                    let off = base + k * self.sweep_size + blk.sweep_offset;
                    let p1 = Term::Vehicle {
                        v: blk.p,
                        node: k + 1,
                        lam: off,
                    };
                    match blk.q {
                        Side::Vehicle(v) => {
                            let q1 = Term::Vehicle {
                                v,
                                node: k + 1,
                                lam: off + VEHICLE_ROWS,
                            };
                            for (a, bb) in [(p1, q1), (p0, q1), (p1, q0)] {
                                rows.push(Row::Dist { a, b: bb });
                                bounds.push((blk.margin, INF_BOUND));
                            }
                            for (term, sign) in [(p1, 1.0), (q1, -1.0)] {
                                for comp in 0..2 {
                                    rows.push(Row::Residual { term, comp, s, sign });
                                    bounds.push((0.0, 0.0));
                                }
                            }
                        }
                        Side::Road(_) => {
                            rows.push(Row::Dist { a: p1, b: q0 });
                            bounds.push((blk.margin, INF_BOUND));
                            for comp in 0..2 {
                                rows.push(Row::Residual {
                                    term: p1,
                                    comp,
                                    s,
                                    sign: 1.0,
                                });
                                bounds.push((0.0, 0.0));
                            }
                        }
                    }
                }
            }
        }
        self.rows = rows;
        self.row_bounds = bounds;
    }

    pub fn intervals(&self) -> usize {
        self.k
    }

    pub fn t_f_bounds(&self) -> (f64, f64) {
        self.t_f_bounds
    }

    /// Index of the first state component of vehicle `v` at node `k`.
    pub fn state_index(&self, v: usize, k: usize) -> usize {
        self.veh_offset[v] + NODE_STRIDE * k
    }

    /// Index of the acceleration input of vehicle `v` on interval `k`.
    pub fn input_index(&self, v: usize, k: usize) -> usize {
        self.veh_offset[v] + NODE_STRIDE * k + 6
    }

    fn dual_index(&self, k: usize, b: usize) -> usize {
        self.dual_offset + k * self.node_dual_size + self.blocks[b].offset
    }

    pub fn block_kinds(&self) -> Vec<BlockKind> {
        self.blocks.iter().map(|b| b.kind).collect()
    }

    /// Number of dual blocks per node.
    pub fn blocks_per_node(&self) -> usize {
        self.blocks.len()
    }

    /// Dual variables per node.
    pub fn duals_per_node(&self) -> usize {
        self.node_dual_size
    }

    fn probe_point(&self) -> Vec<f64> {
        let mut x = vec![0.5; self.n_vars];
        x[0] = 1.0;
        for v in 0..self.scn.n_vehicles() {
            for k in 0..=self.k {
                x[self.state_index(v, k) + 2] = 5.0;
            }
        }
        x
    }

    fn pose(&self, x: &[f64], v: usize, k: usize) -> (usize, [f64; 2], f64) {
        let i = self.state_index(v, k) + 3;
        (i, [x[i], x[i + 1]], x[i + 2])
    }

    fn shape(&self, v: usize) -> &VehicleShape {
        &self.scn.vehicles[v].shape
    }

    fn road(&self, r: usize) -> &Polytope {
        &self.scn.roads[r]
    }

    fn jacobian_pass(&self, x: &[f64], emit: &mut dyn FnMut(usize, usize, f64)) {
        let kk = self.k as f64;
        let h = x[0] / kk;
        for (v, spec) in self.scn.vehicles.iter().enumerate() {
            for k in 0..self.k {
                let row = 6 * (v * self.k + k);
                let xi = self.state_index(v, k);
                let ui = self.input_index(v, k);
                let xs: [f64; 6] = std::array::from_fn(|i| x[xi + i]);
                let us = [x[ui], x[ui + 1]];
                let sens = rk4_with_sensitivity(&xs, &us, h, self.substeps, &spec.params);
                let xn = self.state_index(v, k + 1);
                for r in 0..6 {
                    emit(row + r, xn + r, 1.0);
                    for c in 0..6 {
                        emit(row + r, xi + c, -sens.d_state[(r, c)]);
                    }
                    for c in 0..2 {
                        emit(row + r, ui + c, -sens.d_input[(r, c)]);
                    }
                    emit(row + r, 0, -sens.d_step[r] / kk);
                }
            }
        }
        self.collision_jacobian(x, emit);
    }

    fn term_pose(&self, x: &[f64], v: usize, node: usize) -> (usize, [f64; 2], [[f64; 2]; 4]) {
        let (ip, p, theta) = self.pose(x, v, node);
        (ip, p, normals(theta))
    }

    /// `b·lambda` of a support term.
    fn term_value(&self, x: &[f64], t: Term) -> f64 {
        match t {
            Term::Vehicle { v, node, lam } => {
                let (_, p, n) = self.term_pose(x, v, node);
                let ext = self.shape(v).half_extents();
                (0..VEHICLE_ROWS).map(|j| x[lam + j] * (dot(n[j], p) + ext[j])).sum()
            }
            Term::Road { r, lam } => self.road(r).offsets().iter().enumerate().map(|(j, b)| x[lam + j] * b).sum(),
        }
    }

    /// Component `comp` of `Aᵀ lambda` of a support term.
    fn term_residual(&self, x: &[f64], t: Term, comp: usize) -> f64 {
        match t {
            Term::Vehicle { v, node, lam } => {
                let (_, _, n) = self.term_pose(x, v, node);
                (0..VEHICLE_ROWS).map(|j| x[lam + j] * n[j][comp]).sum()
            }
            Term::Road { r, lam } => self
                .road(r)
                .normals()
                .iter()
                .enumerate()
                .map(|(j, a)| x[lam + j] * a[comp])
                .sum(),
        }
    }

    /// Emits `coef · ∂(b·lambda)`.
    fn term_value_jacobian(&self, x: &[f64], t: Term, row: usize, coef: f64, emit: &mut dyn FnMut(usize, usize, f64)) {
        match t {
            Term::Vehicle { v, node, lam } => {
                let (ip, p, n) = self.term_pose(x, v, node);
                let ext = self.shape(v).half_extents();
                let (sum, dsum) = weighted_normals(&x[lam..lam + VEHICLE_ROWS], &n);
                emit(row, ip, coef * sum[0]);
                emit(row, ip + 1, coef * sum[1]);
                emit(row, ip + 2, coef * dot(dsum, p));
                for j in 0..VEHICLE_ROWS {
                    emit(row, lam + j, coef * (dot(n[j], p) + ext[j]));
                }
            }
            Term::Road { r, lam } => {
                for (j, b) in self.road(r).offsets().iter().enumerate() {
                    emit(row, lam + j, coef * b);
                }
            }
        }
    }

    fn term_residual_jacobian(&self, x: &[f64], t: Term, comp: usize, row: usize, emit: &mut dyn FnMut(usize, usize, f64)) {
        match t {
            Term::Vehicle { v, node, lam } => {
                let (ip, _, n) = self.term_pose(x, v, node);
                let (_, dsum) = weighted_normals(&x[lam..lam + VEHICLE_ROWS], &n);
                emit(row, ip + 2, dsum[comp]);
                for j in 0..VEHICLE_ROWS {
                    emit(row, lam + j, n[j][comp]);
                }
            }
            Term::Road { r, lam } => {
                for (j, a) in self.road(r).normals().iter().enumerate() {
                    emit(row, lam + j, a[comp]);
                }
            }
        }
    }

    /// Emits `w · ∇²(b·lambda)`; road terms are linear.
    fn term_value_hessian(&self, x: &[f64], t: Term, w: f64, put: &mut dyn FnMut(usize, usize, f64)) {
        if let Term::Vehicle { v, node, lam } = t {
            let (ip, p, n) = self.term_pose(x, v, node);
            let (sum, dsum) = weighted_normals(&x[lam..lam + VEHICLE_ROWS], &n);
            let it = ip + 2;
            put(ip, it, w * dsum[0]);
            put(ip + 1, it, w * dsum[1]);
            put(it, it, -w * dot(sum, p));
            for j in 0..VEHICLE_ROWS {
                put(ip, lam + j, w * n[j][0]);
                put(ip + 1, lam + j, w * n[j][1]);
                put(it, lam + j, w * dot(n[(j + 1) % 4], p));
            }
        }
    }

    fn term_residual_hessian(&self, x: &[f64], t: Term, comp: usize, w: f64, put: &mut dyn FnMut(usize, usize, f64)) {
        if let Term::Vehicle { v, node, lam } = t {
            let (ip, _, n) = self.term_pose(x, v, node);
            let (sum, _) = weighted_normals(&x[lam..lam + VEHICLE_ROWS], &n);
            let it = ip + 2;
            put(it, it, -w * sum[comp]);
            for j in 0..VEHICLE_ROWS {
                put(it, lam + j, w * n[(j + 1) % 4][comp]);
            }
        }
    }

    fn hessian_pass(&self, x: &[f64], y: &[f64], emit: &mut dyn FnMut(usize, usize, f64)) {
        let mut put = |i: usize, j: usize, v: f64| emit(i.max(j), i.min(j), v);
        let kk = self.k as f64;
        for (v, spec) in self.scn.vehicles.iter().enumerate() {
            for k in 0..self.k {
                let row = 6 * (v * self.k + k);
                let xi = self.state_index(v, k);
                let ui = self.input_index(v, k);
                let mut z = SVector::<f64, 9>::zeros();
                let mut glob = [0usize; 9];
                for i in 0..6 {
                    z[i] = x[xi + i];
                    glob[i] = xi + i;
                }
                for i in 0..2 {
                    z[6 + i] = x[ui + i];
                    glob[6 + i] = ui + i;
                }
                z[8] = x[0];
                glob[8] = 0;
                let w: [f64; 6] = std::array::from_fn(|r| y[row + r]);
                let params = &spec.params;
                let substeps = self.substeps;
                let (_, _, hm) = hessian(
                    |z: SVector<Dual2SVec64<9>, 9>| {
                        let xs: [Dual2SVec64<9>; 6] = std::array::from_fn(|i| z[i].clone());
                        let us = [z[6].clone(), z[7].clone()];
                        let h = z[8].clone() / kk;
                        let phi = rk4_generic(&xs, &us, h, substeps, params);
                        phi.into_iter()
                            .zip(w)
                            .fold(Dual2SVec64::<9>::from_re(0.0), |acc, (p, wi)| acc - p * wi)
                    },
                    &z,
                );
                for i in 0..9 {
                    for j in 0..=i {
                        put(glob[i], glob[j], hm[(i, j)]);
                    }
                }
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            let yi = y[self.n_defect_rows + i];
            match *row {
                Row::Dist { a, b } => {
                    self.term_value_hessian(x, a, -yi, &mut put);
                    self.term_value_hessian(x, b, -yi, &mut put);
                }
                Row::Residual { term, comp, .. } => self.term_residual_hessian(x, term, comp, yi, &mut put),
                Row::Norm { s } => {
                    put(s, s, 2.0 * yi);
                    put(s + 1, s + 1, 2.0 * yi);
                }
            }
        }
    }

    fn collision_jacobian(&self, x: &[f64], emit: &mut dyn FnMut(usize, usize, f64)) {
        for (i, row) in self.rows.iter().enumerate() {
            let r = self.n_defect_rows + i;
            match *row {
                Row::Dist { a, b } => {
                    self.term_value_jacobian(x, a, r, -1.0, emit);
                    self.term_value_jacobian(x, b, r, -1.0, emit);
                }
                Row::Residual { term, comp, s, sign } => {
                    self.term_residual_jacobian(x, term, comp, r, emit);
                    emit(r, s + comp, sign);
                }
                Row::Norm { s } => {
                    emit(r, s, 2.0 * x[s]);
                    emit(r, s + 1, 2.0 * x[s + 1]);
                }
            }
        }
    }

    fn collision_constraints(&self, x: &[f64], g: &mut [f64]) {
        for (i, row) in self.rows.iter().enumerate() {
            g[self.n_defect_rows + i] = match *row {
                Row::Dist { a, b } => -self.term_value(x, a) - self.term_value(x, b),
                Row::Residual { term, comp, s, sign } => self.term_residual(x, term, comp) + sign * x[s + comp],
                Row::Norm { s } => x[s] * x[s] + x[s + 1] * x[s + 1],
            };
        }
    }

    /// Decision vector for `guess`, which must match this transcription.
    pub fn pack(&self, guess: &OcpGuess) -> Result<Vec<f64>, OcpError> {
        let nv = self.scn.n_vehicles();
        let np = self.scn.pairs().len();
        let nr = self.scn.roads.len();
        let bad = |what: &str| Err(OcpError::Guess(what.to_string()));
        if guess.states.len() != nv || guess.inputs.len() != nv {
            return bad("vehicle count");
        }
        if guess.states.iter().any(|s| s.len() != self.k + 1) || guess.inputs.iter().any(|u| u.len() != self.k) {
            return bad("interval count");
        }
        if guess.pair_duals.len() != self.k + 1 || guess.road_duals.len() != self.k + 1 {
            return bad("dual node count");
        }
        if guess.pair_duals.iter().any(|d| d.len() != np) || guess.road_duals.iter().any(|d| d.len() != nv * nr) {
            return bad("dual block count");
        }
        let mut x = vec![0.0; self.n_vars];
        x[0] = guess.t_f;
        for v in 0..nv {
            for k in 0..=self.k {
                let i = self.state_index(v, k);
                x[i..i + 6].copy_from_slice(&guess.states[v][k].to_array());
                if k < self.k {
                    let u = guess.inputs[v][k];
                    x[i + 6] = u.a;
                    x[i + 7] = u.delta;
                }
            }
        }
        for k in 0..=self.k {
            for (b, blk) in self.blocks.iter().enumerate() {
                let dp = match blk.kind {
                    BlockKind::Pair(..) => &guess.pair_duals[k][b],
                    BlockKind::Road { vehicle, road } => &guess.road_duals[k][vehicle * nr + road],
                };
                if dp.lambda_pq.len() != VEHICLE_ROWS || dp.lambda_qp.len() != blk.q_rows {
                    return bad("dual block size");
                }
                let d = self.dual_index(k, b);
                x[d..d + VEHICLE_ROWS].copy_from_slice(&dp.lambda_pq);
                x[d + VEHICLE_ROWS..d + VEHICLE_ROWS + blk.q_rows].copy_from_slice(&dp.lambda_qp);
                x[d + VEHICLE_ROWS + blk.q_rows] = dp.s[0];
                x[d + VEHICLE_ROWS + blk.q_rows + 1] = dp.s[1];
            }
        }
        if let Some(base) = self.sweep_offset {
            self.seed_interval_certificates(guess, base, &mut x);
        }
        Ok(x)
    }

    /// Multipliers of the interval certificates for the node directions of `x`.
    fn seed_interval_certificates(&self, guess: &OcpGuess, base: usize, x: &mut [f64]) {
        let footprint = |v: usize, k: usize| {
            let s = guess.states[v][k];
            vehicle_polytope(&Pose::new(s.x, s.y, s.theta), self.shape(v))
        };
        for k in 0..self.k {
            let polys: Vec<Polytope> = (0..self.scn.n_vehicles()).map(|v| footprint(v, k + 1)).collect();
            for (b, blk) in self.blocks.iter().enumerate() {
                let (_, _, si) = self.node_terms(k, b);
                let s = Vector2::new(x[si], x[si + 1]);
                let off = base + k * self.sweep_size + blk.sweep_offset;
                if let Some((_, l)) = cheapest_combination(&polys[blk.p], &(-s)) {
                    x[off..off + VEHICLE_ROWS].copy_from_slice(&l);
                }
                if let Side::Vehicle(q) = blk.q {
                    if let Some((_, l)) = cheapest_combination(&polys[q], &s) {
                        x[off + VEHICLE_ROWS..off + 2 * VEHICLE_ROWS].copy_from_slice(&l);
                    }
                }
            }
        }
    }

    pub(super) fn unpack(&self, x: &[f64], status: OcpStatus, sol: &Solution, elapsed: Duration) -> OcpSolution {
        let nv = self.scn.n_vehicles();
        let np = self.scn.pairs().len();
        let mut states = Vec::with_capacity(nv);
        let mut inputs = Vec::with_capacity(nv);
        for v in 0..nv {
            let mut sv = Vec::with_capacity(self.k + 1);
            let mut uv = Vec::with_capacity(self.k);
            for k in 0..=self.k {
                let i = self.state_index(v, k);
                sv.push(VehicleState::from_array(std::array::from_fn(|c| x[i + c])));
                if k < self.k {
                    uv.push(ControlInput {
                        a: x[i + 6],
                        delta: x[i + 7],
                    });
                }
            }
            states.push(sv);
            inputs.push(uv);
        }
        let mut pair_duals = Vec::with_capacity(self.k + 1);
        let mut road_duals = Vec::with_capacity(self.k + 1);
        for k in 0..=self.k {
            let mut pd = Vec::with_capacity(np);
            let mut rd = Vec::with_capacity(self.blocks.len() - np);
            for (b, blk) in self.blocks.iter().enumerate() {
                let d = self.dual_index(k, b);
                let m = d + VEHICLE_ROWS;
                let s = m + blk.q_rows;
                let dp = DualPair {
                    lambda_pq: x[d..m].to_vec(),
                    lambda_qp: x[m..s].to_vec(),
                    s: [x[s], x[s + 1]],
                };
                match blk.kind {
                    BlockKind::Pair(..) => pd.push(dp),
                    BlockKind::Road { .. } => rd.push(dp),
                }
            }
            pair_duals.push(pd);
            road_duals.push(rd);
        }
        OcpSolution {
            status,
            t_f: x[0],
            intervals: self.k,
            states,
            inputs,
            pair_duals,
            road_duals,
            objective: sol.objective,
            iterations: sol.iterations,
            restorations: sol.restorations,
            constraint_violation: sol.constraint_violation,
            solve_seconds: elapsed.as_secs_f64(),
        }
    }
}

impl Nlp for Transcription<'_> {
    fn n_vars(&self) -> usize {
        self.n_vars
    }

    fn n_cons(&self) -> usize {
        self.n_defect_rows + self.rows.len()
    }

    fn var_bounds(&self, lower: &mut [f64], upper: &mut [f64]) {
        lower.fill(-INF_BOUND);
        upper.fill(INF_BOUND);
        lower[0] = self.t_f_bounds.0;
        upper[0] = self.t_f_bounds.1;
        for (v, spec) in self.scn.vehicles.iter().enumerate() {
            let lim = &spec.limits;
            for k in 0..=self.k {
                let i = self.state_index(v, k);
                if k == 0 {
                    let s = spec.start.to_array();
                    lower[i..i + 6].copy_from_slice(&s);
                    upper[i..i + 6].copy_from_slice(&s);
                } else {
                    let lo = [-lim.r_max, -lim.beta_max, lim.v_min];
                    let hi = [lim.r_max, lim.beta_max, lim.v_max];
                    lower[i..i + 3].copy_from_slice(&lo);
                    upper[i..i + 3].copy_from_slice(&hi);
                }
                if k == self.k {
                    let g = [spec.goal.x, spec.goal.y, spec.goal.theta];
                    lower[i + 3..i + 6].copy_from_slice(&g);
                    upper[i + 3..i + 6].copy_from_slice(&g);
                    if let Some(vf) = spec.goal_speed {
                        lower[i + 2] = vf;
                        upper[i + 2] = vf;
                    }
                } else {
                    lower[i + 6] = -lim.a_max;
                    upper[i + 6] = lim.a_max;
                    lower[i + 7] = -lim.delta_max;
                    upper[i + 7] = lim.delta_max;
                }
            }
        }
        for k in 0..=self.k {
            for b in 0..self.blocks.len() {
                let d = self.dual_index(k, b);
                let nl = VEHICLE_ROWS + self.blocks[b].q_rows;
                lower[d..d + nl].fill(0.0);
            }
        }
        if let Some(base) = self.sweep_offset {
            lower[base..].fill(0.0);
        }
    }

    fn con_bounds(&self, lower: &mut [f64], upper: &mut [f64]) {
        lower[..self.n_defect_rows].fill(0.0);
        upper[..self.n_defect_rows].fill(0.0);
        for (i, &(lo, hi)) in self.row_bounds.iter().enumerate() {
            lower[self.n_defect_rows + i] = lo;
            upper[self.n_defect_rows + i] = hi;
        }
    }

    fn objective(&self, x: &[f64]) -> Option<f64> {
        Some(x[0])
    }

    fn gradient(&self, _x: &[f64], grad: &mut [f64]) -> bool {
        grad.fill(0.0);
        grad[0] = 1.0;
        true
    }

    fn constraints(&self, x: &[f64], g: &mut [f64]) -> bool {
        let h = x[0] / self.k as f64;
        for (v, spec) in self.scn.vehicles.iter().enumerate() {
            for k in 0..self.k {
                let row = 6 * (v * self.k + k);
                let xi = self.state_index(v, k);
                let ui = self.input_index(v, k);
                let xs: [f64; 6] = std::array::from_fn(|i| x[xi + i]);
                let phi = rk4_generic(&xs, &[x[ui], x[ui + 1]], h, self.substeps, &spec.params);
                let xn = self.state_index(v, k + 1);
                for r in 0..6 {
                    g[row + r] = x[xn + r] - phi[r];
                }
            }
        }
        self.collision_constraints(x, g);
        g.iter().all(|v| v.is_finite())
    }

    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        self.jac_struct.clone()
    }

    fn jacobian_values(&self, x: &[f64], values: &mut [f64]) -> bool {
        let mut i = 0;
        self.jacobian_pass(x, &mut |_, _, v| {
            values[i] = v;
            i += 1;
        });
        debug_assert_eq!(i, values.len());
        values.iter().all(|v| v.is_finite())
    }

    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        self.hess_struct.clone()
    }

    fn hessian_values(&self, x: &[f64], _obj_factor: f64, lambda: &[f64], values: &mut [f64]) -> bool {
        let mut i = 0;
        self.hessian_pass(x, lambda, &mut |_, _, v| {
            values[i] = v;
            i += 1;
        });
        debug_assert_eq!(i, values.len());
        values.iter().all(|v| v.is_finite())
    }
}
