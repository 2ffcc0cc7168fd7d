//! Linear-lateral bicycle model with a longitudinal speed state.
//!
//! State `[r, beta, V, x, y, theta]`, input `[a, delta]`. The lateral channel
//! is linear with constant stability derivatives; the planar kinematics use
//! the heading only.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Speed floor guarding the `1/V` terms of the lateral equations.
pub const V_FLOOR: f64 = 0.5;

pub type StateVec = SVector<f64, 6>;
pub type StateJacobian = SMatrix<f64, 6, 6>;
pub type InputJacobian = SMatrix<f64, 6, 2>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynamicsError {
    #[error("speed {speed} m/s is below the model floor {floor} m/s")]
    SpeedBelowFloor { speed: f64, floor: f64 },
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("lateral dynamics unstable at {v_nom} m/s: eigenvalue real parts {eig_re:?}")]
    Unstable { v_nom: f64, eig_re: [f64; 2] },
    #[error("invalid vehicle parameter: {0}")]
    InvalidParameter(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub r: f64,
    pub beta: f64,
    pub v: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl VehicleState {
    pub fn to_array(&self) -> [f64; 6] {
        [self.r, self.beta, self.v, self.x, self.y, self.theta]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            r: a[0],
            beta: a[1],
            v: a[2],
            x: a[3],
            y: a[4],
            theta: a[5],
        }
    }

    pub fn to_vector(&self) -> StateVec {
        StateVec::from(self.to_array())
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub a: f64,
    pub delta: f64,
}

/// Physical quantities from which the stability derivatives are computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParams {
    pub mass_kg: f64,
    pub yaw_inertia_kg_m2: f64,
    pub cornering_front_n_per_rad: f64,
    pub cornering_rear_n_per_rad: f64,
    pub cg_to_front_m: f64,
    pub cg_to_rear_m: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            mass_kg: 1500.0,
            yaw_inertia_kg_m2: 2500.0,
            cornering_front_n_per_rad: 80_000.0,
            cornering_rear_n_per_rad: 80_000.0,
            cg_to_front_m: 1.2,
            cg_to_rear_m: 1.4,
        }
    }
}

/// Mass, yaw inertia and stability derivatives of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub m: f64,
    pub iz: f64,
    pub y_r: f64,
    pub y_beta: f64,
    pub y_delta: f64,
    pub n_r: f64,
    pub n_beta: f64,
    pub n_delta: f64,
    /// Speed at which stability was checked.
    pub v_nom: f64,
}

impl VehicleParams {
    /// Validates positivity and open-loop lateral stability at `v_nom`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        m: f64,
        iz: f64,
        y_r: f64,
        y_beta: f64,
        y_delta: f64,
        n_r: f64,
        n_beta: f64,
        n_delta: f64,
        v_nom: f64,
    ) -> Result<Self, DynamicsError> {
        if !(m > 0.0) {
            return Err(DynamicsError::InvalidParameter("mass must be positive"));
        }
        if !(iz > 0.0) {
            return Err(DynamicsError::InvalidParameter("yaw inertia must be positive"));
        }
        if !(v_nom >= V_FLOOR) {
            return Err(DynamicsError::SpeedBelowFloor {
                speed: v_nom,
                floor: V_FLOOR,
            });
        }
        let p = Self {
            m,
            iz,
            y_r,
            y_beta,
            y_delta,
            n_r,
            n_beta,
            n_delta,
            v_nom,
        };
        let eig_re = p.lateral_eigen_real_parts(v_nom);
        if eig_re.iter().any(|&e| e >= 0.0) {
            return Err(DynamicsError::Unstable { v_nom, eig_re });
        }
        Ok(p)
    }

    /// Real parts of the eigenvalues of the `(r, beta)` system at speed `v`.
    pub fn lateral_eigen_real_parts(&self, v: f64) -> [f64; 2] {
        let a11 = self.n_r / self.iz;
        let a12 = self.n_beta / self.iz;
        let a21 = self.y_r / (self.m * v) - 1.0;
        let a22 = self.y_beta / (self.m * v);
        let tr = a11 + a22;
        let det = a11 * a22 - a12 * a21;
        let disc = 0.25 * tr * tr - det;
        if disc >= 0.0 {
            let s = disc.sqrt();
            [0.5 * tr + s, 0.5 * tr - s]
        } else {
            [0.5 * tr, 0.5 * tr]
        }
    }
}

/// Stability derivatives of the linear single-track model, frozen at `v_nom`.
pub fn stability_derivatives(phys: &PhysicalParams, v_nom: f64) -> Result<VehicleParams, DynamicsError> {
    let PhysicalParams {
        mass_kg: m,
        yaw_inertia_kg_m2: iz,
        cornering_front_n_per_rad: cf,
        cornering_rear_n_per_rad: cr,
        cg_to_front_m: lf,
        cg_to_rear_m: lr,
    } = *phys;
    if !(cf > 0.0 && cr > 0.0) {
        return Err(DynamicsError::InvalidParameter("cornering stiffnesses must be positive"));
    }
    if !(lf > 0.0 && lr > 0.0) {
        return Err(DynamicsError::InvalidParameter("axle distances must be positive"));
    }
    if !(v_nom >= V_FLOOR) {
        return Err(DynamicsError::SpeedBelowFloor {
            speed: v_nom,
            floor: V_FLOOR,
        });
    }
    VehicleParams::new(
        m,
        iz,
        (lr * cr - lf * cf) / v_nom,
        -(cf + cr),
        cf,
        -(lf * lf * cf + lr * lr * cr) / v_nom,
        lr * cr - lf * cf,
        lf * cf,
        v_nom,
    )
}

/// Admissible ranges; magnitude bounds apply to `a`, `delta`, `r` and `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    pub v_min: f64,
    pub v_max: f64,
    pub a_max: f64,
    pub delta_max: f64,
    pub r_max: f64,
    pub beta_max: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            v_min: V_FLOOR,
            v_max: 25.0,
            a_max: 3.0,
            delta_max: 0.6,
            r_max: 1.0,
            beta_max: 0.2,
        }
    }
}

impl Limits {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let all = [self.v_max, self.a_max, self.delta_max, self.r_max, self.beta_max];
        if all.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(DynamicsError::InvalidParameter("all maxima must be positive and finite"));
        }
        if !(self.v_min > 0.0) {
            return Err(DynamicsError::InvalidParameter("v_min must be positive"));
        }
        if self.v_min > self.v_max {
            return Err(DynamicsError::InvalidParameter("v_min exceeds v_max"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bound {
    SpeedMin,
    SpeedMax,
    Acceleration,
    Steering,
    YawRate,
    Sideslip,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitViolation {
    pub bound: Bound,
    pub value: f64,
    /// How far past the bound the value lies (positive).
    pub margin: f64,
}

pub fn check_limits(s: &VehicleState, u: &ControlInput, lim: &Limits) -> Vec<LimitViolation> {
    let mut out = Vec::new();
    let mut upper = |bound, value: f64, max: f64| {
        if value > max {
            out.push(LimitViolation {
                bound,
                value,
                margin: value - max,
            });
        }
    };
    upper(Bound::SpeedMax, s.v, lim.v_max);
    upper(Bound::Acceleration, u.a.abs(), lim.a_max);
    upper(Bound::Steering, u.delta.abs(), lim.delta_max);
    upper(Bound::YawRate, s.r.abs(), lim.r_max);
    upper(Bound::Sideslip, s.beta.abs(), lim.beta_max);
    if s.v < lim.v_min {
        out.push(LimitViolation {
            bound: Bound::SpeedMin,
            value: s.v,
            margin: lim.v_min - s.v,
        });
    }
    out
}

/// Right-hand side of the model for any scalar type. No speed guard.
pub fn derivative_generic<T: Scalar>(x: &[T; 6], u: &[T; 2], p: &VehicleParams) -> [T; 6] {
    let [r, beta, v, _, _, theta] = x.clone();
    let [a, delta] = u.clone();
    let mv = v.clone() * p.m;
    let r_dot = r.clone() * (p.n_r / p.iz) + beta.clone() * (p.n_beta / p.iz) + delta.clone() * (p.n_delta / p.iz);
    let beta_dot = (r.clone() * p.y_r + beta * p.y_beta + delta * p.y_delta) / mv - r.clone();
    [
        r_dot,
        beta_dot,
        a,
        v.clone() * theta.cos(),
        v * theta.sin(),
        r,
    ]
}

fn guard(v: f64) -> Result<(), DynamicsError> {
    if v < V_FLOOR || !v.is_finite() {
        Err(DynamicsError::SpeedBelowFloor {
            speed: v,
            floor: V_FLOOR,
        })
    } else {
        Ok(())
    }
}

/// State rate at `(s, u)`.
pub fn derivative(s: &VehicleState, u: &ControlInput, p: &VehicleParams) -> Result<[f64; 6], DynamicsError> {
    guard(s.v)?;
    Ok(derivative_generic(&s.to_array(), &[u.a, u.delta], p))
}

/// Hand-derived Jacobians `(df/dx, df/du)`.
pub fn jacobian(x: &[f64; 6], u: &[f64; 2], p: &VehicleParams) -> (StateJacobian, InputJacobian) {
    let [r, beta, v, _, _, theta] = *x;
    let delta = u[1];
    let mv = p.m * v;
    let (st, ct) = theta.sin_cos();
    let mut a = StateJacobian::zeros();
    a[(0, 0)] = p.n_r / p.iz;
    a[(0, 1)] = p.n_beta / p.iz;
    a[(1, 0)] = p.y_r / mv - 1.0;
    a[(1, 1)] = p.y_beta / mv;
    a[(1, 2)] = -(p.y_r * r + p.y_beta * beta + p.y_delta * delta) / (mv * v);
    a[(3, 2)] = ct;
    a[(3, 5)] = -v * st;
    a[(4, 2)] = st;
    a[(4, 5)] = v * ct;
    a[(5, 0)] = 1.0;
    let mut b = InputJacobian::zeros();
    b[(0, 1)] = p.n_delta / p.iz;
    b[(1, 1)] = p.y_delta / mv;
    b[(2, 0)] = 1.0;
    (a, b)
}

/// `substeps` classical RK4 steps of size `h / substeps`, input held constant.
pub fn rk4_generic<T: Scalar>(x: &[T; 6], u: &[T; 2], h: T, substeps: usize, p: &VehicleParams) -> [T; 6] {
    let hs = h / substeps as f64;
    let mut state = x.clone();
    let axpy = |base: &[T; 6], k: &[T; 6], c: T| -> [T; 6] {
        std::array::from_fn(|i| base[i].clone() + k[i].clone() * c.clone())
    };
    for _ in 0..substeps {
        let k1 = derivative_generic(&state, u, p);
        let k2 = derivative_generic(&axpy(&state, &k1, hs.clone() * 0.5), u, p);
        let k3 = derivative_generic(&axpy(&state, &k2, hs.clone() * 0.5), u, p);
        let k4 = derivative_generic(&axpy(&state, &k3, hs.clone()), u, p);
        state = std::array::from_fn(|i| {
            state[i].clone()
                + (k1[i].clone() + k2[i].clone() * 2.0 + k3[i].clone() * 2.0 + k4[i].clone()) * (hs.clone() / 6.0)
        });
    }
    state
}

/// One RK4 step of length `dt`.
pub fn step_rk4(s: &VehicleState, u: &ControlInput, p: &VehicleParams, dt: f64) -> Result<VehicleState, DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::NonPositiveStep(dt));
    }
    let x = s.to_array();
    let uu = [u.a, u.delta];
    guard(x[2])?;
    let k1 = derivative_generic(&x, &uu, p);
    let x2: [f64; 6] = std::array::from_fn(|i| x[i] + 0.5 * dt * k1[i]);
    guard(x2[2])?;
    let k2 = derivative_generic(&x2, &uu, p);
    let x3: [f64; 6] = std::array::from_fn(|i| x[i] + 0.5 * dt * k2[i]);
    guard(x3[2])?;
    let k3 = derivative_generic(&x3, &uu, p);
    let x4: [f64; 6] = std::array::from_fn(|i| x[i] + dt * k3[i]);
    guard(x4[2])?;
    let k4 = derivative_generic(&x4, &uu, p);
    let out: [f64; 6] = std::array::from_fn(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    guard(out[2])?;
    Ok(VehicleState::from_array(out))
}

/// Sensitivities of a multi-substep RK4 map with respect to state, input and
/// total step length.
#[derive(Debug, Clone)]
pub struct StepSensitivity {
    pub next: [f64; 6],
    pub d_state: StateJacobian,
    pub d_input: InputJacobian,
    pub d_step: SVector<f64, 6>,
}

/// RK4 over `h` split into `substeps`, propagating first-order sensitivities
/// through the hand-coded model Jacobian.
pub fn rk4_with_sensitivity(
    x: &[f64; 6],
    u: &[f64; 2],
    h: f64,
    substeps: usize,
    p: &VehicleParams,
) -> StepSensitivity {
    type Sens = SMatrix<f64, 6, 9>;
    let hs = h / substeps as f64;
    // columns: 6 state, 2 input, 1 total step length
    let mut z = StateVec::from(*x);
    let mut dz = Sens::zeros();
    for i in 0..6 {
        dz[(i, i)] = 1.0;
    }
    let eval = |zz: &StateVec, dzz: &Sens| -> (StateVec, Sens) {
        let xs: [f64; 6] = (*zz).into();
        let k = StateVec::from(derivative_generic(&xs, u, p));
        let (a, b) = jacobian(&xs, u, p);
        let mut dk = a * dzz;
        for c in 0..2 {
            for r in 0..6 {
                dk[(r, 6 + c)] += b[(r, c)];
            }
        }
        (k, dk)
    };
    let dhs = 1.0 / substeps as f64; // d(hs)/dh
    for _ in 0..substeps {
        let (k1, dk1) = eval(&z, &dz);
        let z2 = z + k1 * (0.5 * hs);
        let mut dz2 = dz + dk1 * (0.5 * hs);
        add_col(&mut dz2, 8, &(k1 * (0.5 * dhs)));
        let (k2, dk2) = eval(&z2, &dz2);
        let z3 = z + k2 * (0.5 * hs);
        let mut dz3 = dz + dk2 * (0.5 * hs);
        add_col(&mut dz3, 8, &(k2 * (0.5 * dhs)));
        let (k3, dk3) = eval(&z3, &dz3);
        let z4 = z + k3 * hs;
        let mut dz4 = dz + dk3 * hs;
        add_col(&mut dz4, 8, &(k3 * dhs));
        let (k4, dk4) = eval(&z4, &dz4);
        let incr = k1 + k2 * 2.0 + k3 * 2.0 + k4;
        let dincr = dk1 + dk2 * 2.0 + dk3 * 2.0 + dk4;
        z += incr * (hs / 6.0);
        dz += dincr * (hs / 6.0);
        add_col(&mut dz, 8, &(incr * (dhs / 6.0)));
    }
    StepSensitivity {
        next: z.into(),
        d_state: dz.fixed_view::<6, 6>(0, 0).into_owned(),
        d_input: dz.fixed_view::<6, 2>(0, 6).into_owned(),
        d_step: dz.fixed_view::<6, 1>(0, 8).into_owned(),
    }
}

fn add_col(m: &mut SMatrix<f64, 6, 9>, col: usize, v: &StateVec) {
    for r in 0..6 {
        m[(r, col)] += v[r];
    }
}
