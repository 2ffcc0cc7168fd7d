//! Problem interfaces.
//!
//! [`Nlp`] is the user-facing description: `min f(x)` subject to
//! `gl <= g(x) <= gu` and `xl <= x <= xu`. The solver works on an internal
//! form with equality constraints only ([`Problem`]); [`Adapter`] maps one to
//! the other by dropping fixed variables, adding a slack per inequality row
//! and applying gradient-based scaling.

/// Bounds at or beyond this magnitude are treated as absent.
pub const INF_BOUND: f64 = 1e19;

/// Nonlinear program with sparse derivatives.
///
/// The Lagrangian Hessian follows the convention
/// `obj_factor * ∇²f + Σ lambda_i ∇²g_i`; only entries with `row >= col`
/// are reported. Evaluation routines return `false` (or `None`) when the
/// point is outside the domain of the model.
pub trait Nlp {
    fn n_vars(&self) -> usize;
    fn n_cons(&self) -> usize;
    fn var_bounds(&self, lower: &mut [f64], upper: &mut [f64]);
    fn con_bounds(&self, lower: &mut [f64], upper: &mut [f64]);
    fn objective(&self, x: &[f64]) -> Option<f64>;
    fn gradient(&self, x: &[f64], grad: &mut [f64]) -> bool;
    fn constraints(&self, x: &[f64], g: &mut [f64]) -> bool;
    fn jacobian_structure(&self) -> Vec<(usize, usize)>;
    fn jacobian_values(&self, x: &[f64], values: &mut [f64]) -> bool;
    fn hessian_structure(&self) -> Vec<(usize, usize)>;
    fn hessian_values(&self, x: &[f64], obj_factor: f64, lambda: &[f64], values: &mut [f64]) -> bool;
}

/// Equality-constrained form consumed by the interior-point iteration.
pub(crate) trait Problem {
    fn n(&self) -> usize;
    fn m(&self) -> usize;
    fn lower(&self) -> &[f64];
    fn upper(&self) -> &[f64];
    fn objective(&self, x: &[f64]) -> Option<f64>;
    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool;
    fn constraints(&self, x: &[f64], out: &mut [f64]) -> bool;
    fn jac_structure(&self) -> &[(usize, usize)];
    fn jac_values(&self, x: &[f64], out: &mut [f64]) -> bool;
    /// Lower-triangle entries `(row, col)` with `row >= col`.
    fn hess_structure(&self) -> &[(usize, usize)];
    fn hess_values(&self, x: &[f64], obj_factor: f64, y: &[f64], out: &mut [f64]) -> bool;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProblemError {
    #[error("variable {0} has lower bound above upper bound")]
    InconsistentVarBounds(usize),
    #[error("constraint {0} has lower bound above upper bound")]
    InconsistentConBounds(usize),
    #[error("constraint {0} has no finite bound")]
    UnboundedConstraint(usize),
    #[error("{what} entry ({row}, {col}) out of range")]
    BadStructure { what: &'static str, row: usize, col: usize },
    #[error("initial point has length {got}, expected {expected}")]
    InitialPoint { expected: usize, got: usize },
    #[error("model evaluation failed at the initial point")]
    InitialEvaluation,
}

pub(crate) struct Adapter<'a, P: Nlp + ?Sized> {
    pub nlp: &'a P,
    n_full: usize,
    m: usize,
    /// internal index -> full index, for free variables
    pub free: Vec<usize>,
    /// full values with fixed entries set
    pub base: Vec<f64>,
    /// per constraint row: `Some(k)` if slack `k` is attached
    pub slack_of: Vec<Option<usize>>,
    /// equality right-hand sides (unscaled)
    eq_rhs: Vec<f64>,
    pub obj_scale: f64,
    pub con_scale: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    jac_keep: Vec<usize>,
    jac_struct: Vec<(usize, usize)>,
    n_user_jac: usize,
    hess_keep: Vec<usize>,
    hess_struct: Vec<(usize, usize)>,
    n_user_hess: usize,
}

impl<'a, P: Nlp + ?Sized> Adapter<'a, P> {
    pub fn new(nlp: &'a P, x0: &[f64], max_gradient: f64) -> Result<Self, ProblemError> {
        let n = nlp.n_vars();
        let m = nlp.n_cons();
        if x0.len() != n {
            return Err(ProblemError::InitialPoint {
                expected: n,
                got: x0.len(),
            });
        }
        let (mut xl, mut xu) = (vec![0.0; n], vec![0.0; n]);
        nlp.var_bounds(&mut xl, &mut xu);
        let (mut gl, mut gu) = (vec![0.0; m], vec![0.0; m]);
        nlp.con_bounds(&mut gl, &mut gu);

        let mut base = x0.to_vec();
        let mut free = Vec::new();
        let mut full_to_int = vec![usize::MAX; n];
        for i in 0..n {
            if xl[i] > xu[i] {
                return Err(ProblemError::InconsistentVarBounds(i));
            }
            if xl[i] == xu[i] {
                base[i] = xl[i];
            } else {
                full_to_int[i] = free.len();
                free.push(i);
            }
        }
        let nf = free.len();
        let mut slack_of = vec![None; m];
        let mut eq_rhs = vec![0.0; m];
        let mut n_slack = 0;
        for r in 0..m {
            if gl[r] > gu[r] {
                return Err(ProblemError::InconsistentConBounds(r));
            }
            if gl[r] == gu[r] {
                eq_rhs[r] = gl[r];
            } else {
                if gl[r] <= -INF_BOUND && gu[r] >= INF_BOUND {
                    return Err(ProblemError::UnboundedConstraint(r));
                }
                slack_of[r] = Some(n_slack);
                n_slack += 1;
            }
        }

        let user_jac = nlp.jacobian_structure();
        let user_hess = nlp.hessian_structure();
        for &(r, c) in &user_jac {
            if r >= m || c >= n {
                return Err(ProblemError::BadStructure { what: "jacobian", row: r, col: c });
            }
        }
        for &(r, c) in &user_hess {
            if r >= n || c >= n || r < c {
                return Err(ProblemError::BadStructure { what: "hessian", row: r, col: c });
            }
        }

        // gradient-based scaling at the starting point
        let mut obj_scale = 1.0;
        let mut con_scale = vec![1.0; m];
        let mut g0 = vec![0.0; n];
        if !nlp.gradient(&base, &mut g0) {
            return Err(ProblemError::InitialEvaluation);
        }
        let gmax = free.iter().map(|&i| g0[i].abs()).fold(0.0, f64::max);
        if gmax > max_gradient {
            obj_scale = max_gradient / gmax;
        }
        let mut jv = vec![0.0; user_jac.len()];
        if !nlp.jacobian_values(&base, &mut jv) {
            return Err(ProblemError::InitialEvaluation);
        }
        let mut row_max = vec![0.0f64; m];
        for (k, &(r, c)) in user_jac.iter().enumerate() {
            if full_to_int[c] != usize::MAX {
                row_max[r] = row_max[r].max(jv[k].abs());
            }
        }
        for r in 0..m {
            if row_max[r] > max_gradient {
                con_scale[r] = max_gradient / row_max[r];
            }
        }

        let mut jac_keep = Vec::new();
        let mut jac_struct = Vec::new();
        for (k, &(r, c)) in user_jac.iter().enumerate() {
            if full_to_int[c] != usize::MAX {
                jac_keep.push(k);
                jac_struct.push((r, full_to_int[c]));
            }
        }
        for r in 0..m {
            if let Some(s) = slack_of[r] {
                jac_struct.push((r, nf + s));
            }
        }
        let mut hess_keep = Vec::new();
        let mut hess_struct = Vec::new();
        for (k, &(r, c)) in user_hess.iter().enumerate() {
            let (a, b) = (full_to_int[r], full_to_int[c]);
            if a != usize::MAX && b != usize::MAX {
                hess_keep.push(k);
                hess_struct.push((a.max(b), a.min(b)));
            }
        }

        let mut lower = Vec::with_capacity(nf + n_slack);
        let mut upper = Vec::with_capacity(nf + n_slack);
        for &i in &free {
            lower.push(if xl[i] <= -INF_BOUND { f64::NEG_INFINITY } else { xl[i] });
            upper.push(if xu[i] >= INF_BOUND { f64::INFINITY } else { xu[i] });
        }
        for r in 0..m {
            if slack_of[r].is_some() {
                let d = con_scale[r];
                lower.push(if gl[r] <= -INF_BOUND { f64::NEG_INFINITY } else { d * gl[r] });
                upper.push(if gu[r] >= INF_BOUND { f64::INFINITY } else { d * gu[r] });
            }
        }

        Ok(Self {
            nlp,
            n_full: n,
            m,
            free,
            base,
            slack_of,
            eq_rhs,
            obj_scale,
            con_scale,
            lower,
            upper,
            jac_keep,
            jac_struct,
            n_user_jac: user_jac.len(),
            hess_keep,
            hess_struct,
            n_user_hess: user_hess.len(),
        })
    }

    /// Full user vector from an internal iterate.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut full = self.base.clone();
        for (k, &i) in self.free.iter().enumerate() {
            full[i] = x[k];
        }
        full
    }

    /// Internal starting point: free entries of `x0`, slacks from `g(x0)`.
    pub fn initial_internal(&self, x0: &[f64]) -> Option<Vec<f64>> {
        let mut x: Vec<f64> = self.free.iter().map(|&i| x0[i]).collect();
        let mut g = vec![0.0; self.m];
        let full = self.expand(&x);
        if !self.nlp.constraints(&full, &mut g) {
            return None;
        }
        let nf = self.free.len();
        for r in 0..self.m {
            if let Some(s) = self.slack_of[r] {
                let v = self.con_scale[r] * g[r];
                x.push(v.clamp(self.lower[nf + s], self.upper[nf + s]));
            }
        }
        Some(x)
    }

    pub fn full_dim(&self) -> usize {
        self.n_full
    }
}

impl<P: Nlp + ?Sized> Problem for Adapter<'_, P> {
    fn n(&self) -> usize {
        self.lower.len()
    }

    fn m(&self) -> usize {
        self.m
    }

    fn lower(&self) -> &[f64] {
        &self.lower
    }

    fn upper(&self) -> &[f64] {
        &self.upper
    }

    fn objective(&self, x: &[f64]) -> Option<f64> {
        let f = self.nlp.objective(&self.expand(x))?;
        f.is_finite().then_some(self.obj_scale * f)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        let mut g = vec![0.0; self.n_full];
        if !self.nlp.gradient(&self.expand(x), &mut g) {
            return false;
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        for (k, &i) in self.free.iter().enumerate() {
            out[k] = self.obj_scale * g[i];
        }
        out.iter().all(|v| v.is_finite())
    }

    fn constraints(&self, x: &[f64], out: &mut [f64]) -> bool {
        let mut g = vec![0.0; self.m];
        if !self.nlp.constraints(&self.expand(x), &mut g) {
            return false;
        }
        let nf = self.free.len();
        for r in 0..self.m {
            out[r] = match self.slack_of[r] {
                Some(s) => self.con_scale[r] * g[r] - x[nf + s],
                None => self.con_scale[r] * (g[r] - self.eq_rhs[r]),
            };
        }
        out.iter().all(|v| v.is_finite())
    }

    fn jac_structure(&self) -> &[(usize, usize)] {
        &self.jac_struct
    }

    fn jac_values(&self, x: &[f64], out: &mut [f64]) -> bool {
        let mut v = vec![0.0; self.n_user_jac];
        if !self.nlp.jacobian_values(&self.expand(x), &mut v) {
            return false;
        }
        let kept = self.jac_keep.len();
        for (j, &k) in self.jac_keep.iter().enumerate() {
            out[j] = self.con_scale[self.jac_struct[j].0] * v[k];
        }
        out[kept..].iter_mut().for_each(|v| *v = -1.0);
        out.iter().all(|v| v.is_finite())
    }

    fn hess_structure(&self) -> &[(usize, usize)] {
        &self.hess_struct
    }

    fn hess_values(&self, x: &[f64], obj_factor: f64, y: &[f64], out: &mut [f64]) -> bool {
        let lambda: Vec<f64> = y.iter().zip(&self.con_scale).map(|(a, b)| a * b).collect();
        let mut v = vec![0.0; self.n_user_hess];
        if !self
            .nlp
            .hessian_values(&self.expand(x), obj_factor * self.obj_scale, &lambda, &mut v)
        {
            return false;
        }
        for (j, &k) in self.hess_keep.iter().enumerate() {
            out[j] = v[k];
        }
        out.iter().all(|v| v.is_finite())
    }
}
