//! Feasibility restoration subproblem.
//!
//! ```text
//! min  rho * Σ (p + n) + zeta/2 * ||D (x - x_ref)||²
//! s.t. c(x) - p + n = 0,   p, n >= 0,   xl <= x <= xu
//! ```

use super::nlp::Problem;

pub(crate) struct Restoration<'a> {
    inner: &'a dyn Problem,
    pub x_ref: Vec<f64>,
    d2: Vec<f64>,
    pub rho: f64,
    pub zeta: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    jac: Vec<(usize, usize)>,
    hess: Vec<(usize, usize)>,
}

impl<'a> Restoration<'a> {
    pub fn new(inner: &'a dyn Problem, x_ref: &[f64], rho: f64, zeta: f64) -> Self {
        let n = inner.n();
        let m = inner.m();
        let d2 = x_ref
            .iter()
            .map(|v| {
                let d = (1.0 / v.abs().max(1e-12)).min(1.0);
                d * d
            })
            .collect();
        let mut lower = inner.lower().to_vec();
        let mut upper = inner.upper().to_vec();
        lower.extend(std::iter::repeat_n(0.0, 2 * m));
        upper.extend(std::iter::repeat_n(f64::INFINITY, 2 * m));
        let mut jac = inner.jac_structure().to_vec();
        for r in 0..m {
            jac.push((r, n + r));
            jac.push((r, n + m + r));
        }
        let mut hess = inner.hess_structure().to_vec();
        hess.extend((0..n).map(|i| (i, i)));
        Self {
            inner,
            x_ref: x_ref.to_vec(),
            d2,
            rho,
            zeta,
            lower,
            upper,
            jac,
            hess,
        }
    }

    /// Starting point `(x_ref, p, n)` with `p, n` minimising the barrier
    /// objective for fixed `x`.
    pub fn start(&self, c: &[f64], mu: f64) -> Vec<f64> {
        let m = c.len();
        let mut z = self.x_ref.clone();
        z.resize(self.x_ref.len() + 2 * m, 0.0);
        let n0 = self.x_ref.len();
        for (r, &ci) in c.iter().enumerate() {
            let a = (mu - self.rho * ci) / (2.0 * self.rho);
            let nn = a + (a * a + mu * ci / (2.0 * self.rho)).sqrt();
            let nn = nn.max(1e-12 * mu.max(1e-8));
            z[n0 + r] = ci + nn;
            z[n0 + m + r] = nn;
            if z[n0 + r] <= 0.0 {
                z[n0 + r] = nn;
                z[n0 + m + r] = nn - ci;
            }
        }
        z
    }
}

impl Problem for Restoration<'_> {
    fn n(&self) -> usize {
        self.lower.len()
    }

    fn m(&self) -> usize {
        self.inner.m()
    }

    fn lower(&self) -> &[f64] {
        &self.lower
    }

    fn upper(&self) -> &[f64] {
        &self.upper
    }

    fn objective(&self, z: &[f64]) -> Option<f64> {
        let n = self.x_ref.len();
        let pen: f64 = z[n..].iter().sum();
        let prox: f64 = (0..n)
            .map(|i| self.d2[i] * (z[i] - self.x_ref[i]).powi(2))
            .sum();
        Some(self.rho * pen + 0.5 * self.zeta * prox)
    }

    fn gradient(&self, z: &[f64], out: &mut [f64]) -> bool {
        let n = self.x_ref.len();
        for i in 0..n {
            out[i] = self.zeta * self.d2[i] * (z[i] - self.x_ref[i]);
        }
        out[n..].iter_mut().for_each(|v| *v = self.rho);
        true
    }

    fn constraints(&self, z: &[f64], out: &mut [f64]) -> bool {
        let n = self.x_ref.len();
        let m = self.inner.m();
        if !self.inner.constraints(&z[..n], out) {
            return false;
        }
        for r in 0..m {
            out[r] += z[n + m + r] - z[n + r];
        }
        true
    }

    fn jac_structure(&self) -> &[(usize, usize)] {
        &self.jac
    }

    fn jac_values(&self, z: &[f64], out: &mut [f64]) -> bool {
        let n = self.x_ref.len();
        let k = self.inner.jac_structure().len();
        if !self.inner.jac_values(&z[..n], &mut out[..k]) {
            return false;
        }
        for (j, v) in out[k..].iter_mut().enumerate() {
            *v = if j % 2 == 0 { -1.0 } else { 1.0 };
        }
        true
    }

    fn hess_structure(&self) -> &[(usize, usize)] {
        &self.hess
    }

    fn hess_values(&self, z: &[f64], obj_factor: f64, y: &[f64], out: &mut [f64]) -> bool {
        let n = self.x_ref.len();
        let k = self.inner.hess_structure().len();
        if !self.inner.hess_values(&z[..n], 0.0, y, &mut out[..k]) {
            return false;
        }
        for i in 0..n {
            out[k + i] = obj_factor * self.zeta * self.d2[i];
        }
        true
    }
}
