//! Primal-dual barrier method with a filter line search.
//!
//! Works on the equality-constrained internal form `min f(x)`, `c(x) = 0`,
//! `l <= x <= u`. Search directions come from the symmetric indefinite KKT
//! system, regularised until its inertia is `(n, m)`. Steps are accepted by
//! a filter on `(θ, φ)` with second-order corrections; when no acceptable step
//! exists the iteration switches to the restoration subproblem.

use serde::{Deserialize, Serialize};

use super::ldlt::{sym_matvec, LdltError, SparseLdlt};
use super::nlp::Problem;
use super::restoration::Restoration;

// barrier parameter update
const KAPPA_EPS: f64 = 10.0;
const KAPPA_MU: f64 = 0.2;
const THETA_MU: f64 = 1.5;
const TAU_MIN: f64 = 0.99;
const KAPPA_SIGMA: f64 = 1e10;
const KAPPA_D: f64 = 1e-5;
const S_MAX: f64 = 100.0;
// filter line search
const S_THETA: f64 = 1.1;
const S_PHI: f64 = 2.3;
const DELTA: f64 = 1.0;
const ETA_PHI: f64 = 1e-8;
const GAMMA_THETA: f64 = 1e-5;
const GAMMA_PHI: f64 = 1e-8;
const GAMMA_ALPHA: f64 = 0.05;
const MAX_SOC: usize = 4;
const KAPPA_SOC: f64 = 0.99;
// inertia correction
const DELTA_W_0: f64 = 1e-4;
const DELTA_W_MIN: f64 = 1e-20;
const DELTA_W_MAX: f64 = 1e40;
const KAPPA_W_MINUS: f64 = 1.0 / 3.0;
const KAPPA_W_PLUS: f64 = 8.0;
const KAPPA_W_PLUS_FIRST: f64 = 100.0;
const DELTA_C_BASE: f64 = 1e-8;
const KAPPA_C: f64 = 0.25;
// restoration
const RHO_RESTO: f64 = 1000.0;
const KAPPA_RESTO: f64 = 0.9;
const RESTO_STALL_ITERS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpmOptions {
    /// Scaled overall optimality tolerance.
    pub tol: f64,
    /// Bound on the (scaled) constraint violation at convergence.
    pub constr_viol_tol: f64,
    pub acceptable_tol: f64,
    pub acceptable_iter: usize,
    pub max_iter: usize,
    pub mu_init: f64,
    /// Relative push of the starting point into the interior of its bounds.
    pub bound_push: f64,
    /// Largest gradient entry tolerated before scaling a function down.
    pub max_gradient: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            constr_viol_tol: 1e-6,
            acceptable_tol: 1e-6,
            acceptable_iter: 15,
            max_iter: 3000,
            mu_init: 0.1,
            bound_push: 1e-2,
            max_gradient: 100.0,
        }
    }
}

/// Progress report passed to iteration callbacks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterateInfo {
    pub iter: usize,
    pub objective: f64,
    pub inf_pr: f64,
    pub inf_du: f64,
    pub mu: f64,
    pub alpha_pr: f64,
    pub alpha_du: f64,
    pub regularization: f64,
    pub restoration: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CoreStatus {
    Converged,
    Acceptable,
    MaxIter,
    Stopped,
    Infeasible,
    Numerical,
}

pub(crate) enum Flow {
    Continue,
    Stop,
}

/// Hooks into the iteration: progress reporting and early termination.
pub(crate) trait Control {
    fn after_iterate(&mut self, info: &IterateInfo, x: &[f64]) -> Flow;
    fn allow_restoration(&self) -> bool;
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum ZInit {
    Ones,
    MuOverSlack,
}

pub(crate) struct CoreResult {
    pub status: CoreStatus,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub zl: Vec<f64>,
    pub zu: Vec<f64>,
    pub iterations: usize,
    pub inf_pr: f64,
    pub inf_du: f64,
    pub restorations: usize,
}

struct Trial {
    x: Vec<f64>,
    f: f64,
    c: Vec<f64>,
    theta: f64,
    phi: f64,
}

struct Direction {
    dx: Vec<f64>,
    dy: Vec<f64>,
}

pub(crate) struct Ipm<'p> {
    p: &'p dyn Problem,
    opts: IpmOptions,
    n: usize,
    m: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    has_lo: Vec<bool>,
    has_hi: Vec<bool>,
    coords: Vec<(usize, usize)>,
    n_hess: usize,
    n_jac: usize,
    ldl: SparseLdlt,
    kkt_vals: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub zl: Vec<f64>,
    pub zu: Vec<f64>,
    mu: f64,
    f: f64,
    grad: Vec<f64>,
    c: Vec<f64>,
    jac: Vec<f64>,
    hess: Vec<f64>,
    filter: Vec<(f64, f64)>,
    theta_max: f64,
    theta_min: f64,
    delta_w_last: f64,
    delta_w: f64,
    iter: usize,
    restorations: usize,
    iter_budget: usize,
}

impl<'p> Ipm<'p> {
    pub fn new(p: &'p dyn Problem, x0: &[f64], opts: IpmOptions, z_init: ZInit) -> Result<Self, LdltError> {
        let n = p.n();
        let m = p.m();
        let lo = p.lower().to_vec();
        let hi = p.upper().to_vec();
        let has_lo: Vec<bool> = lo.iter().map(|v| v.is_finite()).collect();
        let has_hi: Vec<bool> = hi.iter().map(|v| v.is_finite()).collect();

        let mut coords: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        coords.extend(p.hess_structure().iter().map(|&(r, c)| (c.min(r), c.max(r))));
        coords.extend(p.jac_structure().iter().map(|&(r, c)| (c, n + r)));
        coords.extend((0..m).map(|r| (n + r, n + r)));
        let ldl = SparseLdlt::analyze(n + m, &coords)?;
        let n_hess = p.hess_structure().len();
        let n_jac = p.jac_structure().len();

        let mut x = x0.to_vec();
        for i in 0..n {
            let (l, u) = (lo[i], hi[i]);
            let push = |b: f64| {
                if opts.bound_push > 0.0 {
                    opts.bound_push * b.abs().max(1.0)
                } else {
                    1e-12 * b.abs().max(1.0)
                }
            };
            match (has_lo[i], has_hi[i]) {
                (true, true) => {
                    let pl = push(l).min(opts.bound_push.max(1e-12) * (u - l));
                    let pu = push(u).min(opts.bound_push.max(1e-12) * (u - l));
                    x[i] = x[i].clamp(l + pl, u - pu);
                    if !(x[i] > l && x[i] < u) {
                        x[i] = 0.5 * (l + u);
                    }
                }
                (true, false) => x[i] = x[i].max(l + push(l)),
                (false, true) => x[i] = x[i].min(u - push(u)),
                (false, false) => {}
            }
        }
        let mu = opts.mu_init;
        let mut zl = vec![0.0; n];
        let mut zu = vec![0.0; n];
        for i in 0..n {
            if has_lo[i] {
                zl[i] = match z_init {
                    ZInit::Ones => 1.0,
                    ZInit::MuOverSlack => mu / (x[i] - lo[i]),
                };
            }
            if has_hi[i] {
                zu[i] = match z_init {
                    ZInit::Ones => 1.0,
                    ZInit::MuOverSlack => mu / (hi[i] - x[i]),
                };
            }
        }
        Ok(Self {
            p,
            opts,
            n,
            m,
            lo,
            hi,
            has_lo,
            has_hi,
            kkt_vals: vec![0.0; coords.len()],
            coords,
            n_hess,
            n_jac,
            ldl,
            x,
            y: vec![0.0; m],
            zl,
            zu,
            mu,
            f: 0.0,
            grad: vec![0.0; n],
            c: vec![0.0; m],
            jac: vec![0.0; n_jac],
            hess: vec![0.0; n_hess],
            filter: Vec::new(),
            theta_max: 0.0,
            theta_min: 0.0,
            delta_w_last: 0.0,
            delta_w: 0.0,
            iter: 0,
            restorations: 0,
            iter_budget: opts.max_iter,
        })
    }

    fn eval_point(&mut self) -> bool {
        let Some(f) = self.p.objective(&self.x) else {
            return false;
        };
        self.f = f;
        self.p.gradient(&self.x, &mut self.grad)
            && self.p.constraints(&self.x, &mut self.c)
            && self.p.jac_values(&self.x, &mut self.jac)
    }

    fn eval_hessian(&mut self) -> bool {
        self.p.hess_values(&self.x, 1.0, &self.y, &mut self.hess)
    }

    fn theta(c: &[f64]) -> f64 {
        c.iter().map(|v| v.abs()).sum()
    }

    fn barrier(&self, x: &[f64], f: f64) -> f64 {
        let mut phi = f;
        for i in 0..self.n {
            match (self.has_lo[i], self.has_hi[i]) {
                (true, true) => {
                    phi -= self.mu * ((x[i] - self.lo[i]).ln() + (self.hi[i] - x[i]).ln());
                }
                (true, false) => {
                    let s = x[i] - self.lo[i];
                    phi += self.mu * (KAPPA_D * s - s.ln());
                }
                (false, true) => {
                    let s = self.hi[i] - x[i];
                    phi += self.mu * (KAPPA_D * s - s.ln());
                }
                (false, false) => {}
            }
        }
        if phi.is_nan() {
            f64::INFINITY
        } else {
            phi
        }
    }

    fn barrier_gradient(&self) -> Vec<f64> {
        let mut g = self.grad.clone();
        for i in 0..self.n {
            match (self.has_lo[i], self.has_hi[i]) {
                (true, true) => {
                    g[i] += -self.mu / (self.x[i] - self.lo[i]) + self.mu / (self.hi[i] - self.x[i]);
                }
                (true, false) => g[i] += self.mu * (KAPPA_D - 1.0 / (self.x[i] - self.lo[i])),
                (false, true) => g[i] += self.mu * (1.0 / (self.hi[i] - self.x[i]) - KAPPA_D),
                (false, false) => {}
            }
        }
        g
    }

    /// `Aᵀ y` for the current Jacobian.
    fn jac_t_mul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (k, &(r, c)) in self.p.jac_structure().iter().enumerate() {
            out[c] += self.jac[k] * y[r];
        }
        out
    }

    /// Scaled `(dual, primal, complementarity)` errors for barrier value `mu`.
    fn errors(&self, mu: f64) -> (f64, f64, f64) {
        let aty = self.jac_t_mul(&self.y);
        let mut dual = 0.0f64;
        let mut compl = 0.0f64;
        for i in 0..self.n {
            let r = self.grad[i] + aty[i] - self.zl[i] + self.zu[i];
            dual = dual.max(r.abs());
            if self.has_lo[i] {
                compl = compl.max(((self.x[i] - self.lo[i]) * self.zl[i] - mu).abs());
            }
            if self.has_hi[i] {
                compl = compl.max(((self.hi[i] - self.x[i]) * self.zu[i] - mu).abs());
            }
        }
        let primal = self.c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        (dual, primal, compl)
    }

    fn scaled_error(&self, mu: f64) -> f64 {
        let (dual, primal, compl) = self.errors(mu);
        let nz = (self.has_lo.iter().filter(|&&b| b).count() + self.has_hi.iter().filter(|&&b| b).count()).max(1);
        let z1: f64 = self.zl.iter().chain(&self.zu).map(|v| v.abs()).sum();
        let y1: f64 = self.y.iter().map(|v| v.abs()).sum();
        let s_d = ((y1 + z1) / (self.m + nz) as f64).max(S_MAX) / S_MAX;
        let s_c = (z1 / nz as f64).max(S_MAX) / S_MAX;
        (dual / s_d).max(primal).max(compl / s_c)
    }

    fn sigma(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let mut s = 0.0;
                if self.has_lo[i] {
                    s += self.zl[i] / (self.x[i] - self.lo[i]);
                }
                if self.has_hi[i] {
                    s += self.zu[i] / (self.hi[i] - self.x[i]);
                }
                s
            })
            .collect()
    }

    fn assemble(&mut self, diag_x: &[f64], hess_scale: f64, delta_w: f64, delta_c: f64) {
        let (n, nh, nj) = (self.n, self.n_hess, self.n_jac);
        for i in 0..n {
            self.kkt_vals[i] = diag_x[i] + delta_w;
        }
        for k in 0..nh {
            self.kkt_vals[n + k] = hess_scale * self.hess[k];
        }
        self.kkt_vals[n + nh..n + nh + nj].copy_from_slice(&self.jac);
        for r in 0..self.m {
            self.kkt_vals[n + nh + nj + r] = -delta_c;
        }
    }

    /// Solves with the current factorisation and iterative refinement.
    /// Returns the solution and its relative residual.
    fn solve_refined(&self, rhs: &[f64]) -> (Vec<f64>, f64) {
        let dim = self.n + self.m;
        let mut sol = rhs.to_vec();
        self.ldl.solve(&mut sol);
        let scale = 1.0 + rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut res_norm = f64::INFINITY;
        for _ in 0..5 {
            let ax = sym_matvec(dim, &self.coords, &self.kkt_vals, &sol);
            let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let rn = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            res_norm = rn / scale;
            if !rn.is_finite() || res_norm < 1e-12 {
                break;
            }
            self.ldl.solve(&mut r);
            sol.iter_mut().zip(&r).for_each(|(s, d)| *s += d);
        }
        (sol, res_norm)
    }

    /// Factorises the KKT matrix with regularisation until the inertia is
    /// correct, then solves for `rhs`.
    fn factor_and_solve(&mut self, rhs: &[f64]) -> Option<Vec<f64>> {
        let sigma = self.sigma();
        let mut dw = 0.0;
        let mut dc = 0.0;
        let mut first_increase = true;
        loop {
            self.assemble(&sigma, 1.0, dw, dc);
            let ok = match self.ldl.factor(&self.kkt_vals) {
                Ok(inertia) => inertia.positive == self.n && inertia.negative == self.m,
                Err(LdltError::SingularPivot(_)) => {
                    if dc == 0.0 && self.m > 0 {
                        dc = DELTA_C_BASE * self.mu.powf(KAPPA_C);
                        continue;
                    }
                    false
                }
                Err(_) => return None,
            };
            if ok {
                let (sol, res) = self.solve_refined(rhs);
                if res < 1e-8 && sol.iter().all(|v| v.is_finite()) {
                    if dw > 0.0 {
                        self.delta_w_last = dw;
                    }
                    self.delta_w = dw;
                    return Some(sol);
                }
            }
            if dw == 0.0 {
                dw = if self.delta_w_last == 0.0 {
                    DELTA_W_0
                } else {
                    (KAPPA_W_MINUS * self.delta_w_last).max(DELTA_W_MIN)
                };
            } else {
                dw *= if self.delta_w_last == 0.0 && first_increase {
                    KAPPA_W_PLUS_FIRST
                } else {
                    KAPPA_W_PLUS
                };
                first_increase = false;
            }
            if dw > DELTA_W_MAX {
                return None;
            }
        }
    }

    /// Least-squares estimate of the constraint multipliers.
    fn least_squares_y(&mut self) {
        if self.m == 0 {
            return;
        }
        let ones = vec![1.0; self.n];
        self.assemble(&ones, 0.0, 0.0, 1e-10);
        if self.ldl.factor(&self.kkt_vals).is_err() {
            self.y.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let mut rhs = vec![0.0; self.n + self.m];
        for i in 0..self.n {
            rhs[i] = -(self.grad[i] - self.zl[i] + self.zu[i]);
        }
        let (sol, _) = self.solve_refined(&rhs);
        let y = &sol[self.n..];
        if y.iter().all(|v| v.is_finite()) && y.iter().fold(0.0f64, |a, v| a.max(v.abs())) <= 1e3 {
            self.y.copy_from_slice(y);
        } else {
            self.y.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn fraction_to_boundary(&self, v: &[f64], dv: &[f64], tau: f64, lower: bool) -> f64 {
        let mut a = 1.0f64;
        for i in 0..self.n {
            if lower && self.has_lo[i] && dv[i] < 0.0 {
                a = a.min(-tau * (v[i] - self.lo[i]) / dv[i]);
            }
            if !lower && self.has_hi[i] && dv[i] > 0.0 {
                a = a.min(tau * (self.hi[i] - v[i]) / dv[i]);
            }
        }
        a
    }

    fn primal_step_max(&self, dx: &[f64], tau: f64) -> f64 {
        self.fraction_to_boundary(&self.x, dx, tau, true)
            .min(self.fraction_to_boundary(&self.x, dx, tau, false))
    }

    fn z_steps(&self, dx: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut dzl = vec![0.0; self.n];
        let mut dzu = vec![0.0; self.n];
        for i in 0..self.n {
            if self.has_lo[i] {
                let s = self.x[i] - self.lo[i];
                dzl[i] = self.mu / s - self.zl[i] - self.zl[i] / s * dx[i];
            }
            if self.has_hi[i] {
                let s = self.hi[i] - self.x[i];
                dzu[i] = self.mu / s - self.zu[i] + self.zu[i] / s * dx[i];
            }
        }
        (dzl, dzu)
    }

    fn dual_step_max(&self, dzl: &[f64], dzu: &[f64], tau: f64) -> f64 {
        let mut a = 1.0f64;
        for i in 0..self.n {
            if self.has_lo[i] && dzl[i] < 0.0 {
                a = a.min(-tau * self.zl[i] / dzl[i]);
            }
            if self.has_hi[i] && dzu[i] < 0.0 {
                a = a.min(-tau * self.zu[i] / dzu[i]);
            }
        }
        a
    }

    fn trial(&self, x: Vec<f64>) -> Option<Trial> {
        let f = self.p.objective(&x)?;
        let mut c = vec![0.0; self.m];
        if !self.p.constraints(&x, &mut c) {
            return None;
        }
        let theta = Self::theta(&c);
        let phi = self.barrier(&x, f);
        if !phi.is_finite() || !theta.is_finite() {
            return None;
        }
        Some(Trial { x, f, c, theta, phi })
    }

    fn filter_acceptable(&self, theta: f64, phi: f64) -> bool {
        self.filter.iter().all(|&(tf, pf)| theta < tf || phi < pf)
    }

    fn augment_filter(&mut self, theta: f64, phi: f64) {
        let (t, p) = ((1.0 - GAMMA_THETA) * theta, phi - GAMMA_PHI * theta);
        self.filter.retain(|&(tf, pf)| !(tf >= t && pf >= p));
        self.filter.push((t, p));
    }

    /// Acceptance test; returns `Some(f_type)` when the trial is accepted.
    fn acceptable(&self, t: &Trial, theta0: f64, phi0: f64, gphi_d: f64, alpha: f64) -> Option<bool> {
        if t.theta > self.theta_max || !self.filter_acceptable(t.theta, t.phi) {
            return None;
        }
        let switching = gphi_d < 0.0 && alpha * (-gphi_d).powf(S_PHI) > DELTA * theta0.powf(S_THETA);
        if theta0 <= self.theta_min && switching {
            let armijo = t.phi <= phi0 + ETA_PHI * alpha * gphi_d + 10.0 * f64::EPSILON * phi0.abs();
            return armijo.then_some(true);
        }
        let ok = t.theta <= (1.0 - GAMMA_THETA) * theta0 || t.phi <= phi0 - GAMMA_PHI * theta0;
        ok.then_some(false)
    }

    fn alpha_min(&self, theta0: f64, gphi_d: f64) -> f64 {
        if gphi_d < 0.0 {
            let mut a = GAMMA_THETA.min(GAMMA_PHI * theta0 / -gphi_d);
            if theta0 <= self.theta_min {
                a = a.min(DELTA * theta0.powf(S_THETA) / (-gphi_d).powf(S_PHI));
            }
            GAMMA_ALPHA * a
        } else {
            GAMMA_ALPHA * GAMMA_THETA
        }
    }

    fn info(&self, alpha_pr: f64, alpha_du: f64, restoration: bool) -> IterateInfo {
        let (dual, primal, _) = self.errors(self.mu);
        IterateInfo {
            iter: self.iter,
            objective: self.f,
            inf_pr: primal,
            inf_du: dual,
            mu: self.mu,
            alpha_pr,
            alpha_du,
            regularization: self.delta_w,
            restoration,
        }
    }

    fn result(&self, status: CoreStatus) -> CoreResult {
        let (dual, primal, _) = self.errors(0.0);
        CoreResult {
            status,
            x: self.x.clone(),
            y: self.y.clone(),
            zl: self.zl.clone(),
            zu: self.zu.clone(),
            iterations: self.iter,
            inf_pr: primal,
            inf_du: dual,
            restorations: self.restorations,
        }
    }

    fn mu_min(&self) -> f64 {
        self.opts.tol / 10.0
    }

    fn decrease_mu(&mut self) {
        let new = (KAPPA_MU * self.mu).min(self.mu.powf(THETA_MU)).max(self.mu_min());
        if new < self.mu {
            self.mu = new;
            self.filter.clear();
        }
    }

    fn converged(&self) -> bool {
        let (_, primal, _) = self.errors(0.0);
        self.scaled_error(0.0) <= self.opts.tol && primal <= self.opts.constr_viol_tol
    }

    pub fn run(mut self, ctl: &mut dyn Control, init_y: bool) -> CoreResult {
        if !self.eval_point() {
            return self.result(CoreStatus::Numerical);
        }
        if init_y {
            self.least_squares_y();
        }
        let theta0 = Self::theta(&self.c);
        self.theta_max = 1e4 * theta0.max(1.0);
        self.theta_min = 1e-4 * theta0.max(1.0);
        let mut acceptable_count = 0;
        let mut force_mu_decrease = false;

        loop {
            if !self.eval_hessian() {
                return self.result(CoreStatus::Numerical);
            }
            if self.converged() {
                return self.result(CoreStatus::Converged);
            }
            let (_, primal0, _) = self.errors(0.0);
            if self.scaled_error(0.0) <= self.opts.acceptable_tol && primal0 <= self.opts.constr_viol_tol.max(1e-6) {
                acceptable_count += 1;
                if acceptable_count >= self.opts.acceptable_iter {
                    return self.result(CoreStatus::Acceptable);
                }
            } else {
                acceptable_count = 0;
            }
            if self.iter >= self.iter_budget {
                return self.result(CoreStatus::MaxIter);
            }

            // monotone barrier update
            loop {
                let small = self.scaled_error(self.mu) <= KAPPA_EPS * self.mu;
                if (small || force_mu_decrease) && self.mu > self.mu_min() {
                    force_mu_decrease = false;
                    self.decrease_mu();
                } else {
                    break;
                }
            }
            force_mu_decrease = false;
            let tau = TAU_MIN.max(1.0 - self.mu);

            // search direction
            let gphi = self.barrier_gradient();
            let aty = self.jac_t_mul(&self.y);
            let mut rhs = vec![0.0; self.n + self.m];
            for i in 0..self.n {
                rhs[i] = -(gphi[i] + aty[i]);
            }
            for r in 0..self.m {
                rhs[self.n + r] = -self.c[r];
            }
            let Some(sol) = self.factor_and_solve(&rhs) else {
                return self.result(CoreStatus::Numerical);
            };
            let dir = Direction {
                dx: sol[..self.n].to_vec(),
                dy: sol[self.n..].to_vec(),
            };

            let theta0 = Self::theta(&self.c);
            let phi0 = self.barrier(&self.x, self.f);
            let gphi_d: f64 = gphi.iter().zip(&dir.dx).map(|(a, b)| a * b).sum();
            let alpha_max = self.primal_step_max(&dir.dx, tau);

            let tiny = dir
                .dx
                .iter()
                .zip(&self.x)
                .all(|(d, x)| d.abs() / (1.0 + x.abs()) < 10.0 * f64::EPSILON);

            let accepted: Option<(Trial, Direction, f64, bool)> = if tiny {
                let x_new: Vec<f64> = self.x.iter().zip(&dir.dx).map(|(x, d)| x + alpha_max * d).collect();
                force_mu_decrease = true;
                if self.mu <= self.mu_min() {
                    return self.result(if self.scaled_error(0.0) <= self.opts.acceptable_tol {
                        CoreStatus::Acceptable
                    } else {
                        CoreStatus::Numerical
                    });
                }
                self.trial(x_new).map(|t| (t, dir, alpha_max, true))
            } else {
                self.line_search(dir, tau, theta0, phi0, gphi_d, alpha_max, &rhs)
            };

            let Some((trial, dir, alpha, f_type)) = accepted else {
                if self.scaled_error(0.0) <= self.opts.acceptable_tol && theta0 <= self.opts.constr_viol_tol {
                    return self.result(CoreStatus::Acceptable);
                }
                if !ctl.allow_restoration() {
                    return self.result(CoreStatus::Infeasible);
                }
                self.augment_filter(theta0, phi0);
                match self.restore(ctl) {
                    Ok(()) => continue,
                    Err(status) => return self.result(status),
                }
            };
            if !f_type {
                self.augment_filter(theta0, phi0);
            }

            // accept
            let step: Vec<f64> = trial.x.iter().zip(&self.x).map(|(a, b)| (a - b) / alpha).collect();
            let (dzl, dzu) = self.z_steps(&step);
            let alpha_z = self.dual_step_max(&dzl, &dzu, tau);
            for r in 0..self.m {
                self.y[r] += alpha * dir.dy[r];
            }
            for i in 0..self.n {
                self.zl[i] += alpha_z * dzl[i];
                self.zu[i] += alpha_z * dzu[i];
            }
            self.x = trial.x;
            self.f = trial.f;
            self.c = trial.c;
            if !(self.p.gradient(&self.x, &mut self.grad) && self.p.jac_values(&self.x, &mut self.jac)) {
                return self.result(CoreStatus::Numerical);
            }
            for i in 0..self.n {
                if self.has_lo[i] {
                    let s = self.x[i] - self.lo[i];
                    self.zl[i] = self.zl[i].min(KAPPA_SIGMA * self.mu / s).max(self.mu / (KAPPA_SIGMA * s));
                }
                if self.has_hi[i] {
                    let s = self.hi[i] - self.x[i];
                    self.zu[i] = self.zu[i].min(KAPPA_SIGMA * self.mu / s).max(self.mu / (KAPPA_SIGMA * s));
                }
            }
            self.iter += 1;
            let info = self.info(alpha, alpha_z, false);
            if let Flow::Stop = ctl.after_iterate(&info, &self.x) {
                return self.result(CoreStatus::Stopped);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn line_search(
        &self,
        dir: Direction,
        tau: f64,
        theta0: f64,
        phi0: f64,
        gphi_d: f64,
        alpha_max: f64,
        rhs: &[f64],
    ) -> Option<(Trial, Direction, f64, bool)> {
        let alpha_min = self.alpha_min(theta0, gphi_d);
        let mut alpha = alpha_max;
        let mut first = true;
        loop {
            let x_t: Vec<f64> = self.x.iter().zip(&dir.dx).map(|(x, d)| x + alpha * d).collect();
            match self.trial(x_t) {
                Some(t) => {
                    if let Some(f_type) = self.acceptable(&t, theta0, phi0, gphi_d, alpha) {
                        return Some((t, dir, alpha, f_type));
                    }
                    if first && t.theta >= theta0 && self.m > 0 {
                        if let Some(found) = self.second_order_correction(&t, alpha, tau, theta0, phi0, gphi_d, rhs) {
                            return Some(found);
                        }
                    }
                }
                None => {}
            }
            first = false;
            alpha *= 0.5;
            if alpha < alpha_min {
                return None;
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn second_order_correction(
        &self,
        first_trial: &Trial,
        alpha: f64,
        tau: f64,
        theta0: f64,
        phi0: f64,
        gphi_d: f64,
        rhs: &[f64],
    ) -> Option<(Trial, Direction, f64, bool)> {
        let mut c_soc: Vec<f64> = self.c.iter().zip(&first_trial.c).map(|(a, b)| alpha * a + b).collect();
        let mut theta_old = theta0;
        for _ in 0..MAX_SOC {
            let mut r = rhs.to_vec();
            for k in 0..self.m {
                r[self.n + k] = -c_soc[k];
            }
            let (sol, res) = self.solve_refined(&r);
            if !(res < 1e-6) {
                return None;
            }
            let dx = sol[..self.n].to_vec();
            let a_soc = self.primal_step_max(&dx, tau);
            let x_t: Vec<f64> = self.x.iter().zip(&dx).map(|(x, d)| x + a_soc * d).collect();
            let t = self.trial(x_t)?;
            if let Some(f_type) = self.acceptable(&t, theta0, phi0, gphi_d, a_soc) {
                let dir = Direction {
                    dx,
                    dy: sol[self.n..].to_vec(),
                };
                return Some((t, dir, a_soc, f_type));
            }
            if t.theta > KAPPA_SOC * theta_old {
                return None;
            }
            theta_old = t.theta;
            c_soc = c_soc.iter().zip(&t.c).map(|(a, b)| a_soc * a + b).collect();
        }
        None
    }

    fn restore(&mut self, ctl: &mut dyn Control) -> Result<(), CoreStatus> {
        self.restorations += 1;
        let theta_start = Self::theta(&self.c);
        let c_inf = self.c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mu_r = self.mu.max(c_inf);
        let resto = Restoration::new(self.p, &self.x, RHO_RESTO, self.mu.sqrt());
        let z0 = resto.start(&self.c, mu_r);
        let opts = IpmOptions {
            mu_init: mu_r,
            bound_push: 0.0,
            max_iter: self.iter_budget.saturating_sub(self.iter),
            ..self.opts
        };
        let inner = match Ipm::new(&resto, &z0, opts, ZInit::MuOverSlack) {
            Ok(i) => i,
            Err(_) => return Err(CoreStatus::Numerical),
        };
        let mut rc = RestoControl {
            outer: self,
            outer_ctl: ctl,
            theta_start,
            best: theta_start,
            stall: 0,
            event: RestoEvent::Running,
        };
        let out = inner.run(&mut rc, false);
        let event = rc.event;
        self.iter += out.iterations;
        let n = self.n;
        let recovered = match (event, out.status) {
            (RestoEvent::Success, _) => true,
            (RestoEvent::Stalled, _) => false,
            (RestoEvent::UserStop, _) => return Err(CoreStatus::Stopped),
            (RestoEvent::Running, CoreStatus::Converged | CoreStatus::Acceptable) => {
                // the subproblem converged: feasible only if the violation vanished
                let mut c = vec![0.0; self.m];
                self.p.constraints(&out.x[..n], &mut c)
                    && c.iter().fold(0.0f64, |a, v| a.max(v.abs())) <= self.opts.constr_viol_tol
            }
            (RestoEvent::Running, CoreStatus::MaxIter) => return Err(CoreStatus::MaxIter),
            (RestoEvent::Running, _) => false,
        };
        if !recovered {
            return Err(CoreStatus::Infeasible);
        }
        self.x.copy_from_slice(&out.x[..n]);
        self.zl.copy_from_slice(&out.zl[..n]);
        self.zu.copy_from_slice(&out.zu[..n]);
        if !self.eval_point() {
            return Err(CoreStatus::Numerical);
        }
        self.least_squares_y();
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum RestoEvent {
    Running,
    Success,
    Stalled,
    UserStop,
}

struct RestoControl<'a, 'p> {
    outer: &'a Ipm<'p>,
    outer_ctl: &'a mut dyn Control,
    theta_start: f64,
    best: f64,
    stall: usize,
    event: RestoEvent,
}

impl Control for RestoControl<'_, '_> {
    fn after_iterate(&mut self, info: &IterateInfo, z: &[f64]) -> Flow {
        let outer = self.outer;
        let x = z[..outer.n].to_vec();
        let mut report = *info;
        report.restoration = true;
        report.iter += outer.iter;
        if let Flow::Stop = self.outer_ctl.after_iterate(&report, &x) {
            self.event = RestoEvent::UserStop;
            return Flow::Stop;
        }
        if let Some(t) = outer.trial(x) {
            if t.theta <= KAPPA_RESTO * self.theta_start
                && t.theta <= outer.theta_max
                && outer.filter_acceptable(t.theta, t.phi)
            {
                self.event = RestoEvent::Success;
                return Flow::Stop;
            }
            if t.theta < 0.99 * self.best {
                self.best = t.theta;
                self.stall = 0;
            } else {
                self.stall += 1;
                if self.stall >= RESTO_STALL_ITERS {
                    self.event = RestoEvent::Stalled;
                    return Flow::Stop;
                }
            }
        }
        Flow::Continue
    }

    fn allow_restoration(&self) -> bool {
        false
    }
}
