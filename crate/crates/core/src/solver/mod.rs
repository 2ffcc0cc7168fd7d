//! Primal-dual interior-point solver for sparse nonlinear programs.

mod ipm;
pub mod ldlt;
mod nlp;
mod restoration;

use serde::{Deserialize, Serialize};

pub use ipm::{IpmOptions, IterateInfo};
pub use nlp::{Nlp, ProblemError, INF_BOUND};

use ipm::{Control, CoreStatus, Flow, Ipm, ZInit};
use nlp::Adapter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// Converged to the relaxed tolerances only.
    Acceptable,
    Infeasible,
    MaxIterations,
    /// Stopped by the iteration callback.
    Aborted,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_success(self) -> bool {
        matches!(self, Self::Optimal | Self::Acceptable)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Solution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Constraint multipliers, `∇f + Jᵀ lambda - z_lower + z_upper = 0`.
    pub lambda: Vec<f64>,
    pub z_lower: Vec<f64>,
    pub z_upper: Vec<f64>,
    pub iterations: usize,
    pub restorations: usize,
    /// Largest unscaled violation of constraint or variable bounds.
    pub constraint_violation: f64,
    /// Scaled stationarity residual of the internal problem at the final iterate.
    pub dual_infeasibility: f64,
    /// Scaled constraint residual of the internal problem at the final iterate.
    pub primal_infeasibility: f64,
}

struct MainControl<'a> {
    callback: Option<&'a mut dyn FnMut(&IterateInfo) -> bool>,
    obj_scale: f64,
}

impl Control for MainControl<'_> {
    fn after_iterate(&mut self, info: &IterateInfo, _x: &[f64]) -> Flow {
        match self.callback.as_mut() {
            Some(cb) => {
                let mut report = *info;
                if !info.restoration {
                    report.objective /= self.obj_scale;
                }
                if cb(&report) {
                    Flow::Continue
                } else {
                    Flow::Stop
                }
            }
            None => Flow::Continue,
        }
    }

    fn allow_restoration(&self) -> bool {
        true
    }
}

/// Solves `nlp` from the starting point `x0`.
///
/// The callback sees every accepted iterate (including restoration steps) and
/// stops the run by returning `false`.
pub fn solve<P: Nlp + ?Sized>(
    nlp: &P,
    x0: &[f64],
    opts: &IpmOptions,
    callback: Option<&mut dyn FnMut(&IterateInfo) -> bool>,
) -> Result<Solution, ProblemError> {
    let adapter = Adapter::new(nlp, x0, opts.max_gradient)?;
    let start = adapter.initial_internal(x0).ok_or(ProblemError::InitialEvaluation)?;
    let ipm = Ipm::new(&adapter, &start, *opts, ZInit::Ones).map_err(|_| ProblemError::InitialEvaluation)?;
    let mut ctl = MainControl {
        callback,
        obj_scale: adapter.obj_scale,
    };
    let out = ipm.run(&mut ctl, true);

    let status = match out.status {
        CoreStatus::Converged => SolveStatus::Optimal,
        CoreStatus::Acceptable => SolveStatus::Acceptable,
        CoreStatus::MaxIter => SolveStatus::MaxIterations,
        CoreStatus::Stopped => SolveStatus::Aborted,
        CoreStatus::Infeasible => SolveStatus::Infeasible,
        CoreStatus::Numerical => SolveStatus::NumericalFailure,
    };
    let x = adapter.expand(&out.x);
    let objective = nlp.objective(&x).unwrap_or(f64::NAN);
    let m = nlp.n_cons();
    let lambda: Vec<f64> = (0..m)
        .map(|r| out.y[r] * adapter.con_scale[r] / adapter.obj_scale)
        .collect();
    let n = adapter.full_dim();
    let mut z_lower = vec![0.0; n];
    let mut z_upper = vec![0.0; n];
    for (k, &i) in adapter.free.iter().enumerate() {
        z_lower[i] = out.zl[k] / adapter.obj_scale;
        z_upper[i] = out.zu[k] / adapter.obj_scale;
    }
    let constraint_violation = violation(nlp, &x);
    Ok(Solution {
        status,
        x,
        objective,
        lambda,
        z_lower,
        z_upper,
        iterations: out.iterations,
        restorations: out.restorations,
        constraint_violation,
        dual_infeasibility: out.inf_du,
        primal_infeasibility: out.inf_pr,
    })
}

/// Largest violation of the constraint and variable bounds at `x`.
pub fn violation<P: Nlp + ?Sized>(nlp: &P, x: &[f64]) -> f64 {
    let (n, m) = (nlp.n_vars(), nlp.n_cons());
    let (mut xl, mut xu) = (vec![0.0; n], vec![0.0; n]);
    nlp.var_bounds(&mut xl, &mut xu);
    let (mut gl, mut gu) = (vec![0.0; m], vec![0.0; m]);
    nlp.con_bounds(&mut gl, &mut gu);
    let mut g = vec![0.0; m];
    if !nlp.constraints(x, &mut g) {
        return f64::INFINITY;
    }
    let mut v = 0.0f64;
    for i in 0..n {
        v = v.max(xl[i] - x[i]).max(x[i] - xu[i]);
    }
    for r in 0..m {
        v = v.max(gl[r] - g[r]).max(g[r] - gu[r]);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Hock–Schittkowski problem 71.
    struct Hs071;

    impl Nlp for Hs071 {
        fn n_vars(&self) -> usize {
            4
        }
        fn n_cons(&self) -> usize {
            2
        }
        fn var_bounds(&self, l: &mut [f64], u: &mut [f64]) {
            l.fill(1.0);
            u.fill(5.0);
        }
        fn con_bounds(&self, l: &mut [f64], u: &mut [f64]) {
            l[0] = 25.0;
            u[0] = 2e19;
            l[1] = 40.0;
            u[1] = 40.0;
        }
        fn objective(&self, x: &[f64]) -> Option<f64> {
            Some(x[0] * x[3] * (x[0] + x[1] + x[2]) + x[2])
        }
        fn gradient(&self, x: &[f64], g: &mut [f64]) -> bool {
            g[0] = x[3] * (2.0 * x[0] + x[1] + x[2]);
            g[1] = x[0] * x[3];
            g[2] = x[0] * x[3] + 1.0;
            g[3] = x[0] * (x[0] + x[1] + x[2]);
            true
        }
        fn constraints(&self, x: &[f64], g: &mut [f64]) -> bool {
            g[0] = x[0] * x[1] * x[2] * x[3];
            g[1] = x.iter().map(|v| v * v).sum();
            true
        }
        fn jacobian_structure(&self) -> Vec<(usize, usize)> {
            (0..2).flat_map(|r| (0..4).map(move |c| (r, c))).collect()
        }
        fn jacobian_values(&self, x: &[f64], v: &mut [f64]) -> bool {
            v[0] = x[1] * x[2] * x[3];
            v[1] = x[0] * x[2] * x[3];
            v[2] = x[0] * x[1] * x[3];
            v[3] = x[0] * x[1] * x[2];
            for i in 0..4 {
                v[4 + i] = 2.0 * x[i];
            }
            true
        }
        fn hessian_structure(&self) -> Vec<(usize, usize)> {
            (0..4).flat_map(|r| (0..=r).map(move |c| (r, c))).collect()
        }
        fn hessian_values(&self, x: &[f64], s: f64, l: &[f64], v: &mut [f64]) -> bool {
            // order: (0,0) (1,0) (1,1) (2,0) (2,1) (2,2) (3,0) (3,1) (3,2) (3,3)
            v[0] = s * 2.0 * x[3] + l[1] * 2.0;
            v[1] = s * x[3] + l[0] * x[2] * x[3];
            v[2] = l[1] * 2.0;
            v[3] = s * x[3] + l[0] * x[1] * x[3];
            v[4] = l[0] * x[0] * x[3];
            v[5] = l[1] * 2.0;
            v[6] = s * (2.0 * x[0] + x[1] + x[2]) + l[0] * x[1] * x[2];
            v[7] = s * x[0] + l[0] * x[0] * x[2];
            v[8] = s * x[0] + l[0] * x[0] * x[1];
            v[9] = l[1] * 2.0;
            true
        }
    }

    struct Rosenbrock;

    impl Nlp for Rosenbrock {
        fn n_vars(&self) -> usize {
            2
        }
        fn n_cons(&self) -> usize {
            0
        }
        fn var_bounds(&self, l: &mut [f64], u: &mut [f64]) {
            l.fill(-2e19);
            u.fill(2e19);
        }
        fn con_bounds(&self, _: &mut [f64], _: &mut [f64]) {}
        fn objective(&self, x: &[f64]) -> Option<f64> {
            Some(100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2))
        }
        fn gradient(&self, x: &[f64], g: &mut [f64]) -> bool {
            g[0] = -400.0 * x[0] * (x[1] - x[0] * x[0]) - 2.0 * (1.0 - x[0]);
            g[1] = 200.0 * (x[1] - x[0] * x[0]);
            true
        }
        fn constraints(&self, _: &[f64], _: &mut [f64]) -> bool {
            true
        }
        fn jacobian_structure(&self) -> Vec<(usize, usize)> {
            vec![]
        }
        fn jacobian_values(&self, _: &[f64], _: &mut [f64]) -> bool {
            true
        }
        fn hessian_structure(&self) -> Vec<(usize, usize)> {
            vec![(0, 0), (1, 0), (1, 1)]
        }
        fn hessian_values(&self, x: &[f64], s: f64, _: &[f64], v: &mut [f64]) -> bool {
            v[0] = s * (1200.0 * x[0] * x[0] - 400.0 * x[1] + 2.0);
            v[1] = s * (-400.0 * x[0]);
            v[2] = s * 200.0;
            true
        }
    }

    /// `x² + y² <= 1` and `x + y >= 3`: no feasible point.
    struct Disjoint;

    impl Nlp for Disjoint {
        fn n_vars(&self) -> usize {
            2
        }
        fn n_cons(&self) -> usize {
            2
        }
        fn var_bounds(&self, l: &mut [f64], u: &mut [f64]) {
            l.fill(-10.0);
            u.fill(10.0);
        }
        fn con_bounds(&self, l: &mut [f64], u: &mut [f64]) {
            l[0] = -2e19;
            u[0] = 1.0;
            l[1] = 3.0;
            u[1] = 2e19;
        }
        fn objective(&self, x: &[f64]) -> Option<f64> {
            Some(x[0] + 2.0 * x[1])
        }
        fn gradient(&self, _: &[f64], g: &mut [f64]) -> bool {
            g[0] = 1.0;
            g[1] = 2.0;
            true
        }
        fn constraints(&self, x: &[f64], g: &mut [f64]) -> bool {
            g[0] = x[0] * x[0] + x[1] * x[1];
            g[1] = x[0] + x[1];
            true
        }
        fn jacobian_structure(&self) -> Vec<(usize, usize)> {
            vec![(0, 0), (0, 1), (1, 0), (1, 1)]
        }
        fn jacobian_values(&self, x: &[f64], v: &mut [f64]) -> bool {
            v[0] = 2.0 * x[0];
            v[1] = 2.0 * x[1];
            v[2] = 1.0;
            v[3] = 1.0;
            true
        }
        fn hessian_structure(&self) -> Vec<(usize, usize)> {
            vec![(0, 0), (1, 1)]
        }
        fn hessian_values(&self, _: &[f64], _: f64, l: &[f64], v: &mut [f64]) -> bool {
            v[0] = 2.0 * l[0];
            v[1] = 2.0 * l[0];
            true
        }
    }

    #[test]
    fn hs071_optimum() {
        let sol = solve(&Hs071, &[1.0, 5.0, 5.0, 1.0], &IpmOptions::default(), None).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(sol.objective, 17.014017, epsilon = 1e-5);
        let expect = [1.0, 4.742999, 3.821150, 1.379408];
        for i in 0..4 {
            assert_abs_diff_eq!(sol.x[i], expect[i], epsilon = 1e-5);
        }
        assert!(sol.constraint_violation < 1e-7);
        // stationarity with the reported multipliers
        let mut g = [0.0; 4];
        Hs071.gradient(&sol.x, &mut g);
        let mut j = [0.0; 8];
        Hs071.jacobian_values(&sol.x, &mut j);
        for i in 0..4 {
            let r = g[i] + j[i] * sol.lambda[0] + j[4 + i] * sol.lambda[1] - sol.z_lower[i] + sol.z_upper[i];
            assert!(r.abs() < 1e-5, "stationarity residual {r}");
        }
    }

    #[test]
    fn rosenbrock_unconstrained() {
        let sol = solve(&Rosenbrock, &[-1.2, 1.0], &IpmOptions::default(), None).unwrap();
        assert!(sol.status.is_success());
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.x[1], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn infeasible_problem_is_detected() {
        let sol = solve(&Disjoint, &[0.0, 0.0], &IpmOptions::default(), None).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn callback_can_abort() {
        let mut seen = 0;
        let mut cb = |_: &IterateInfo| {
            seen += 1;
            seen < 3
        };
        let sol = solve(&Hs071, &[1.0, 5.0, 5.0, 1.0], &IpmOptions::default(), Some(&mut cb)).unwrap();
        assert_eq!(sol.status, SolveStatus::Aborted);
        assert_eq!(seen, 3);
    }

    #[test]
    fn iteration_limit() {
        let opts = IpmOptions {
            max_iter: 2,
            ..Default::default()
        };
        let sol = solve(&Hs071, &[1.0, 5.0, 5.0, 1.0], &opts, None).unwrap();
        assert_eq!(sol.status, SolveStatus::MaxIterations);
    }

    #[test]
    fn bad_initial_point_length() {
        assert!(matches!(
            solve(&Hs071, &[1.0], &IpmOptions::default(), None),
            Err(ProblemError::InitialPoint { .. })
        ));
    }
}
