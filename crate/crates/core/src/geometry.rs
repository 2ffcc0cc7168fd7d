//! Planar convex polytopes for vehicle footprints and road boundary blocks.
//!
//! Every polytope is stored in half-space form `A x <= b` with unit row
//! normals, so the dual multipliers of the separation problem carry metres.
//! The module also hosts the brute-force distance oracle that every other
//! part of the crate treats as ground truth, and the evaluation of the dual
//! distance certificate used by the collision constraints.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::Scalar;

/// Tolerance used for point-in-half-space and degenerate-edge checks.
const GEOM_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("polytope needs at least 3 half-spaces, got {0}")]
    TooFewRows(usize),
    #[error("half-space {0} has a zero normal")]
    ZeroNormal(usize),
    #[error("half-space normals do not positively span the plane (unbounded set)")]
    Unbounded,
    #[error("polytope has an empty interior")]
    EmptyInterior,
    #[error("dual vector of length {got} does not match a polytope with {expected} rows")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("vehicle dimensions must be positive (length {length}, width {width})")]
    InvalidShape { length: f64, width: f64 },
    #[error("road geometry must be positive (lane length {lane_length}, lane width {lane_width}, lanes {lanes})")]
    InvalidRoad {
        lane_length: f64,
        lane_width: f64,
        lanes: usize,
    },
}

/// Wrap an angle to `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// Planar pose; `theta` is measured counter-clockwise from +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn heading(&self) -> Vector2<f64> {
        Vector2::new(self.theta.cos(), self.theta.sin())
    }
}

/// Rectangular vehicle envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleShape {
    pub length: f64,
    pub width: f64,
}

impl VehicleShape {
    pub fn new(length: f64, width: f64) -> Result<Self, GeometryError> {
        if !(length > 0.0 && width > 0.0 && length.is_finite() && width.is_finite()) {
            return Err(GeometryError::InvalidShape { length, width });
        }
        Ok(Self { length, width })
    }

    /// Half extents along the four body-frame normals (+x, +y, -x, -y).
    pub fn half_extents(&self) -> [f64; 4] {
        let (hl, hw) = (0.5 * self.length, 0.5 * self.width);
        [hl, hw, hl, hw]
    }
}

impl Default for VehicleShape {
    fn default() -> Self {
        Self {
            length: 4.5,
            width: 2.0,
        }
    }
}

/// Convex polygon `{ p : a_k . p <= b_k }` with unit normals `a_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    normals: Vec<Vector2<f64>>,
    offsets: Vec<f64>,
    vertices: Vec<Vector2<f64>>,
}

impl Polytope {
    /// Builds a polytope from raw rows, normalising each row to a unit normal.
    pub fn new(normals: Vec<Vector2<f64>>, offsets: Vec<f64>) -> Result<Self, GeometryError> {
        if normals.len() != offsets.len() {
            return Err(GeometryError::DimensionMismatch {
                expected: normals.len(),
                got: offsets.len(),
            });
        }
        if normals.len() < 3 {
            return Err(GeometryError::TooFewRows(normals.len()));
        }
        let mut a = Vec::with_capacity(normals.len());
        let mut b = Vec::with_capacity(normals.len());
        for (k, (n, off)) in normals.iter().zip(&offsets).enumerate() {
            let norm = n.norm();
            if !(norm > GEOM_EPS) || !norm.is_finite() {
                return Err(GeometryError::ZeroNormal(k));
            }
            a.push(n / norm);
            b.push(off / norm);
        }
        if !positively_spans(&a) {
            return Err(GeometryError::Unbounded);
        }
        let vertices = enumerate_vertices(&a, &b);
        if vertices.len() < 3 || polygon_area(&vertices) <= GEOM_EPS {
            return Err(GeometryError::EmptyInterior);
        }
        Ok(Self {
            normals: a,
            offsets: b,
            vertices,
        })
    }

    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
    pub fn axis_aligned_box(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self, GeometryError> {
        Self::new(
            vec![
                Vector2::new(1.0, 0.0),
                Vector2::new(0.0, 1.0),
                Vector2::new(-1.0, 0.0),
                Vector2::new(0.0, -1.0),
            ],
            vec![x1, y1, -x0, -y0],
        )
    }

    pub fn rows(&self) -> usize {
        self.normals.len()
    }

    pub fn normals(&self) -> &[Vector2<f64>] {
        &self.normals
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    /// Vertices in counter-clockwise order.
    pub fn vertices(&self) -> &[Vector2<f64>] {
        &self.vertices
    }

    pub fn centroid(&self) -> Vector2<f64> {
        self.vertices.iter().sum::<Vector2<f64>>() / self.vertices.len() as f64
    }

    pub fn contains(&self, p: &Vector2<f64>, tol: f64) -> bool {
        self.normals
            .iter()
            .zip(&self.offsets)
            .all(|(n, b)| n.dot(p) <= b + tol)
    }

    /// Applies the rigid motion `p -> R(angle) p + shift`.
    pub fn transformed(&self, angle: f64, shift: Vector2<f64>) -> Self {
        let (s, c) = angle.sin_cos();
        let rot = |v: &Vector2<f64>| Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y);
        let normals: Vec<_> = self.normals.iter().map(rot).collect();
        let offsets = normals
            .iter()
            .zip(&self.offsets)
            .map(|(n, b)| b + n.dot(&shift))
            .collect();
        let vertices = self.vertices.iter().map(|v| rot(v) + shift).collect();
        Self {
            normals,
            offsets,
            vertices,
        }
    }

    /// Support function `h(w) = max_{p in P} w . p`.
    pub fn support(&self, w: &Vector2<f64>) -> f64 {
        self.vertices
            .iter()
            .map(|v| w.dot(v))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn positively_spans(normals: &[Vector2<f64>]) -> bool {
    let mut angles: Vec<f64> = normals.iter().map(|n| n.y.atan2(n.x)).collect();
    angles.sort_by(|a, b| a.total_cmp(b));
    let mut max_gap: f64 = 0.0;
    for w in angles.windows(2) {
        max_gap = max_gap.max(w[1] - w[0]);
    }
    max_gap = max_gap.max(angles[0] + 2.0 * PI - angles[angles.len() - 1]);
    max_gap < PI - 1e-12
}

fn enumerate_vertices(a: &[Vector2<f64>], b: &[f64]) -> Vec<Vector2<f64>> {
    let mut pts: Vec<Vector2<f64>> = Vec::new();
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            let det = a[i].x * a[j].y - a[i].y * a[j].x;
            if det.abs() < 1e-12 {
                continue;
            }
            let p = Vector2::new(
                (b[i] * a[j].y - b[j] * a[i].y) / det,
                (a[i].x * b[j] - a[j].x * b[i]) / det,
            );
            let feasible = a
                .iter()
                .zip(b)
                .all(|(n, off)| n.dot(&p) <= off + 1e-9 * scale);
            if feasible && !pts.iter().any(|q| (q - p).norm() <= 1e-9 * scale) {
                pts.push(p);
            }
        }
    }
    if pts.is_empty() {
        return pts;
    }
    let c = pts.iter().sum::<Vector2<f64>>() / pts.len() as f64;
    pts.sort_by(|p, q| {
        let ap = (p.y - c.y).atan2(p.x - c.x);
        let aq = (q.y - c.y).atan2(q.x - c.x);
        ap.total_cmp(&aq)
    });
    pts
}

fn polygon_area(v: &[Vector2<f64>]) -> f64 {
    let n = v.len();
    0.5 * (0..n)
        .map(|i| {
            let (p, q) = (v[i], v[(i + 1) % n]);
            p.x * q.y - q.x * p.y
        })
        .sum::<f64>()
}

/// Footprint of a vehicle with the given pose and shape.
pub fn vehicle_polytope(pose: &Pose, shape: &VehicleShape) -> Polytope {
    let (normals, offsets) = vehicle_halfspaces(pose.x, pose.y, pose.theta, shape);
    let normals: Vec<_> = normals.iter().map(|n| Vector2::new(n[0], n[1])).collect();
    let offsets = offsets.to_vec();
    let heading = pose.heading();
    let lateral = Vector2::new(-heading.y, heading.x);
    let (hl, hw) = (0.5 * shape.length, 0.5 * shape.width);
    let c = pose.position();
    let vertices = vec![
        c + heading * hl - lateral * hw,
        c + heading * hl + lateral * hw,
        c - heading * hl + lateral * hw,
        c - heading * hl - lateral * hw,
    ];
    Polytope {
        normals,
        offsets,
        vertices,
    }
}

/// Half-space rows `(A(z), b(z))` of a vehicle footprint as functions of the
/// pose, generic so that the transcription can differentiate through them.
pub fn vehicle_halfspaces<T: Scalar>(
    x: T,
    y: T,
    theta: T,
    shape: &VehicleShape,
) -> ([[T; 2]; 4], [T; 4]) {
    let c = theta.cos();
    let s = theta.sin();
    let ext = shape.half_extents();
    let normals = [
        [c.clone(), s.clone()],
        [-s.clone(), c.clone()],
        [-c.clone(), -s.clone()],
        [s.clone(), -c.clone()],
    ];
    let offsets = [
        normals[0][0].clone() * x.clone() + normals[0][1].clone() * y.clone() + ext[0],
        normals[1][0].clone() * x.clone() + normals[1][1].clone() * y.clone() + ext[1],
        normals[2][0].clone() * x.clone() + normals[2][1].clone() * y.clone() + ext[2],
        normals[3][0].clone() * x + normals[3][1].clone() * y + ext[3],
    ];
    (normals, offsets)
}

/// Geometry of the four-legged intersection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectionGeometry {
    pub lane_length: f64,
    pub lane_width: f64,
    /// Lanes per road, counting both directions (one in plus one out is 2).
    pub lanes_per_road: usize,
}

impl Default for IntersectionGeometry {
    fn default() -> Self {
        Self {
            lane_length: 50.0,
            lane_width: 5.0,
            lanes_per_road: 2,
        }
    }
}

impl IntersectionGeometry {
    pub fn road_width(&self) -> f64 {
        self.lane_width * self.lanes_per_road as f64
    }

    /// Half side of the central conflict box.
    pub fn half_box(&self) -> f64 {
        0.5 * self.road_width()
    }

    /// Side of the square that bounds all four approaches.
    pub fn bounding_side(&self) -> f64 {
        2.0 * self.lane_length + self.road_width()
    }

    pub fn road_boundaries(&self) -> Result<Vec<Polytope>, GeometryError> {
        road_boundaries(self.lane_length, self.lane_width, self.lanes_per_road)
    }
}

/// The four corner blocks whose complement inside the bounding square is the
/// plus-shaped drivable area. Ordered NE, NW, SW, SE.
pub fn road_boundaries(
    lane_length: f64,
    lane_width: f64,
    lanes_per_road: usize,
) -> Result<Vec<Polytope>, GeometryError> {
    if !(lane_length > 0.0 && lane_width > 0.0 && lanes_per_road > 0) {
        return Err(GeometryError::InvalidRoad {
            lane_length,
            lane_width,
            lanes: lanes_per_road,
        });
    }
    let w = 0.5 * lane_width * lanes_per_road as f64;
    let far = w + lane_length;
    [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]
        .iter()
        .map(|&(sx, sy): &(f64, f64)| {
            let (x0, x1) = if sx > 0.0 { (w, far) } else { (-far, -w) };
            let (y0, y1) = if sy > 0.0 { (w, far) } else { (-far, -w) };
            Polytope::axis_aligned_box(x0, x1, y0, y1)
        })
        .collect()
}

fn point_segment(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> (f64, Vector2<f64>) {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 <= GEOM_EPS * GEOM_EPS {
        0.0
    } else {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    };
    let q = a + ab * t;
    ((p - q).norm(), q)
}

fn polygons_intersect(p: &[Vector2<f64>], q: &[Vector2<f64>]) -> bool {
    // Separating axis test over the edge normals of both convex polygons.
    for poly in [p, q] {
        let n = poly.len();
        for i in 0..n {
            let e = poly[(i + 1) % n] - poly[i];
            let axis = Vector2::new(e.y, -e.x);
            let (pmin, pmax) = project(p, &axis);
            let (qmin, qmax) = project(q, &axis);
            if pmax < qmin - GEOM_EPS || qmax < pmin - GEOM_EPS {
                return false;
            }
        }
    }
    true
}

fn project(poly: &[Vector2<f64>], axis: &Vector2<f64>) -> (f64, f64) {
    poly.iter().map(|v| v.dot(axis)).fold(
        (f64::INFINITY, f64::NEG_INFINITY),
        |(lo, hi), d| (lo.min(d), hi.max(d)),
    )
}

/// Closest points `(p, q)` with `p` in `P`, `q` in `Q`, or `None` when the sets
/// intersect.
pub fn closest_points(p: &Polytope, q: &Polytope) -> Option<(Vector2<f64>, Vector2<f64>)> {
    let (pv, qv) = (p.vertices(), q.vertices());
    if polygons_intersect(pv, qv) {
        return None;
    }
    let mut best = (f64::INFINITY, Vector2::zeros(), Vector2::zeros());
    // Vertex-vertex pairs are covered as segment end points; edge-edge minima
    // of disjoint convex polygons are always attained at a vertex of one edge.
    for i in 0..pv.len() {
        for j in 0..qv.len() {
            let (qa, qb) = (qv[j], qv[(j + 1) % qv.len()]);
            let (d, foot) = point_segment(&pv[i], &qa, &qb);
            if d < best.0 {
                best = (d, pv[i], foot);
            }
            let (pa, pb) = (pv[i], pv[(i + 1) % pv.len()]);
            let (d, foot) = point_segment(&qv[j], &pa, &pb);
            if d < best.0 {
                best = (d, foot, qv[j]);
            }
        }
    }
    Some((best.1, best.2))
}

/// Exact minimum Euclidean distance between two convex polygons; 0 when they
/// intersect.
pub fn distance_oracle(p: &Polytope, q: &Polytope) -> f64 {
    match closest_points(p, q) {
        Some((a, b)) => (a - b).norm(),
        None => 0.0,
    }
}

/// Dual certificate of the separation between a pair of polytopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPair {
    pub lambda_pq: Vec<f64>,
    pub lambda_qp: Vec<f64>,
    pub s: [f64; 2],
}

impl DualPair {
    pub fn zeros(rows_p: usize, rows_q: usize) -> Self {
        Self {
            lambda_pq: vec![0.0; rows_p],
            lambda_qp: vec![0.0; rows_q],
            s: [0.0; 2],
        }
    }

    /// True when all multipliers are non-negative and `|s| <= 1` (within `tol`).
    pub fn is_admissible(&self, tol: f64) -> bool {
        self.lambda_pq.iter().chain(&self.lambda_qp).all(|&l| l >= -tol)
            && (self.s[0].hypot(self.s[1])) <= 1.0 + tol
    }

    fn check(&self, p: &Polytope, q: &Polytope) -> Result<(), GeometryError> {
        if self.lambda_pq.len() != p.rows() {
            return Err(GeometryError::DimensionMismatch {
                expected: p.rows(),
                got: self.lambda_pq.len(),
            });
        }
        if self.lambda_qp.len() != q.rows() {
            return Err(GeometryError::DimensionMismatch {
                expected: q.rows(),
                got: self.lambda_qp.len(),
            });
        }
        Ok(())
    }
}

/// `-b_P . lambda_pq - b_Q . lambda_qp`; only a distance bound when the
/// residuals vanish.
pub fn dual_distance_value(p: &Polytope, q: &Polytope, d: &DualPair) -> Result<f64, GeometryError> {
    d.check(p, q)?;
    let vp: f64 = p.offsets().iter().zip(&d.lambda_pq).map(|(b, l)| b * l).sum();
    let vq: f64 = q.offsets().iter().zip(&d.lambda_qp).map(|(b, l)| b * l).sum();
    Ok(-vp - vq)
}

/// `(A_P^T lambda_pq + s, A_Q^T lambda_qp - s)`.
pub fn dual_residuals(
    p: &Polytope,
    q: &Polytope,
    d: &DualPair,
) -> Result<(Vector2<f64>, Vector2<f64>), GeometryError> {
    d.check(p, q)?;
    let s = Vector2::new(d.s[0], d.s[1]);
    let ap: Vector2<f64> = p
        .normals()
        .iter()
        .zip(&d.lambda_pq)
        .map(|(n, l)| n * *l)
        .sum();
    let aq: Vector2<f64> = q
        .normals()
        .iter()
        .zip(&d.lambda_qp)
        .map(|(n, l)| n * *l)
        .sum();
    Ok((ap + s, aq - s))
}

/// Cheapest non-negative combination `A^T lambda = w` measured by `b . lambda`.
///
/// The optimum of this small LP has at most two non-zero entries, so the
/// basic solutions over row pairs are enumerated. Returns `None` when `w` is
/// not in the cone of the normals (never the case for bounded polytopes).
pub fn cheapest_combination(poly: &Polytope, w: &Vector2<f64>) -> Option<(f64, Vec<f64>)> {
    let a = poly.normals();
    let b = poly.offsets();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |lam: Vec<f64>| {
        let cost: f64 = lam.iter().zip(b).map(|(l, bb)| l * bb).sum();
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, lam));
        }
    };
    if w.norm() <= GEOM_EPS {
        consider(vec![0.0; a.len()]);
    }
    for i in 0..a.len() {
        // single row, w parallel to a_i
        let t = a[i].dot(w);
        if t >= 0.0 && (a[i] * t - w).norm() <= 1e-12 * (1.0 + w.norm()) {
            let mut lam = vec![0.0; a.len()];
            lam[i] = t;
            consider(lam);
        }
        for j in (i + 1)..a.len() {
            let det = a[i].x * a[j].y - a[i].y * a[j].x;
            if det.abs() < 1e-12 {
                continue;
            }
            let li = (w.x * a[j].y - w.y * a[j].x) / det;
            let lj = (a[i].x * w.y - a[i].y * w.x) / det;
            if li >= -1e-14 && lj >= -1e-14 {
                let mut lam = vec![0.0; a.len()];
                lam[i] = li.max(0.0);
                lam[j] = lj.max(0.0);
                consider(lam);
            }
        }
    }
    best
}

/// Dual certificate for a fixed separating direction `s`
/// (`A_P^T lambda_pq = -s`, `A_Q^T lambda_qp = s`), choosing the multipliers
/// that maximise the certified distance.
pub fn dual_for_direction(p: &Polytope, q: &Polytope, s: Vector2<f64>) -> DualPair {
    let (_, lp) = cheapest_combination(p, &(-s)).unwrap_or((0.0, vec![0.0; p.rows()]));
    let (_, lq) = cheapest_combination(q, &s).unwrap_or((0.0, vec![0.0; q.rows()]));
    DualPair {
        lambda_pq: lp,
        lambda_qp: lq,
        s: [s.x, s.y],
    }
}

/// Seeds a dual certificate from the oracle's closest points. For
/// intersecting sets the direction between centroids is used instead, which
/// yields a feasible (but non-positive) certificate.
pub fn seed_dual(p: &Polytope, q: &Polytope) -> DualPair {
    let dir = match closest_points(p, q) {
        Some((a, b)) if (a - b).norm() > GEOM_EPS => (a - b).normalize(),
        _ => {
            let d = p.centroid() - q.centroid();
            if d.norm() > GEOM_EPS {
                d.normalize()
            } else {
                Vector2::new(1.0, 0.0)
            }
        }
    };
    // s points from Q towards P: A_P^T lambda = -s pushes against P's face
    // that looks at Q.
    dual_for_direction(p, q, dir)
}

/// Maximises the dual distance over all admissible certificates by a search
/// over the separating direction on the unit circle. Independent of
/// [`distance_oracle`]; used to cross-check strong duality.
pub fn max_dual_distance(p: &Polytope, q: &Polytope) -> (f64, DualPair) {
    let value = |phi: f64| {
        let s = Vector2::new(phi.cos(), phi.sin());
        let d = dual_for_direction(p, q, s);
        let v = dual_distance_value(p, q, &d).unwrap_or(f64::NEG_INFINITY);
        (v, d)
    };
    let samples = 720;
    let mut best_k = 0;
    let mut best_v = f64::NEG_INFINITY;
    for k in 0..samples {
        let (v, _) = value(2.0 * PI * k as f64 / samples as f64);
        if v > best_v {
            best_v = v;
            best_k = k;
        }
    }
    let step = 2.0 * PI / samples as f64;
    let (mut lo, mut hi) = (
        (best_k as f64 - 1.0) * step,
        (best_k as f64 + 1.0) * step,
    );
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (value(x1).0, value(x2).0);
    for _ in 0..200 {
        if hi - lo < 1e-13 {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = value(x2).0;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = value(x1).0;
        }
    }
    let (v, d) = value(0.5 * (lo + hi));
    // The zero certificate is always admissible.
    if v < 0.0 {
        return (0.0, DualPair::zeros(p.rows(), q.rows()));
    }
    (v, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_square(cx: f64, cy: f64) -> Polytope {
        Polytope::axis_aligned_box(cx - 0.5, cx + 0.5, cy - 0.5, cy + 0.5).unwrap()
    }

    fn has_vertex(p: &Polytope, x: f64, y: f64) -> bool {
        p.vertices()
            .iter()
            .any(|v| (v.x - x).abs() < 1e-9 && (v.y - y).abs() < 1e-9)
    }

    #[test]
    fn axis_aligned_vehicle() {
        let p = vehicle_polytope(&Pose::new(0.0, 0.0, 0.0), &VehicleShape::new(4.0, 2.0).unwrap());
        for (x, y) in [(2.0, 1.0), (-2.0, 1.0), (-2.0, -1.0), (2.0, -1.0)] {
            assert!(has_vertex(&p, x, y), "missing ({x}, {y})");
        }
    }

    #[test]
    fn rotated_vehicle_swaps_extents() {
        let p = vehicle_polytope(
            &Pose::new(0.0, 0.0, PI / 2.0),
            &VehicleShape::new(4.0, 2.0).unwrap(),
        );
        for (x, y) in [(1.0, 2.0), (-1.0, 2.0), (-1.0, -2.0), (1.0, -2.0)] {
            assert!(has_vertex(&p, x, y), "missing ({x}, {y})");
        }
    }

    #[test]
    fn general_pose_vertices_are_tight_on_two_rows() {
        let pose = Pose::new(5.0, 3.0, PI / 4.0);
        let p = vehicle_polytope(&pose, &VehicleShape::new(4.0, 2.0).unwrap());
        // independent vertex enumeration from the half-spaces
        let rebuilt = Polytope::new(p.normals().to_vec(), p.offsets().to_vec()).unwrap();
        assert_eq!(rebuilt.vertices().len(), 4);
        for v in rebuilt.vertices() {
            let tight = p
                .normals()
                .iter()
                .zip(p.offsets())
                .filter(|(n, b)| (n.dot(v) - *b).abs() < 1e-9)
                .count();
            assert_eq!(tight, 2);
            assert!(p.vertices().iter().any(|w| (w - v).norm() < 1e-9));
        }
        assert_abs_diff_eq!(p.centroid().x, 5.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.centroid().y, 3.0, epsilon = 1e-9);
    }

    #[test]
    fn road_blocks_desk_geometry() {
        let blocks = road_boundaries(50.0, 5.0, 2).unwrap();
        assert_eq!(blocks.len(), 4);
        for b in &blocks {
            let xs: Vec<f64> = b.vertices().iter().map(|v| v.x).collect();
            let ys: Vec<f64> = b.vertices().iter().map(|v| v.y).collect();
            let w = xs.iter().cloned().fold(f64::MIN, f64::max) - xs.iter().cloned().fold(f64::MAX, f64::min);
            let h = ys.iter().cloned().fold(f64::MIN, f64::max) - ys.iter().cloned().fold(f64::MAX, f64::min);
            assert_abs_diff_eq!(w, 50.0, epsilon = 1e-9);
            assert_abs_diff_eq!(h, 50.0, epsilon = 1e-9);
        }
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert!(distance_oracle(&blocks[i], &blocks[j]) >= 10.0 - 1e-9);
            }
        }
        let g = IntersectionGeometry::default();
        assert_abs_diff_eq!(g.road_width(), 10.0);
        assert_abs_diff_eq!(g.bounding_side(), 110.0);
        // the drivable cross: the centre and the lane centres are free
        for p in [Vector2::new(0.0, 0.0), Vector2::new(2.5, -40.0), Vector2::new(-40.0, 2.5)] {
            assert!(blocks.iter().all(|b| !b.contains(&p, 0.0)));
        }
    }

    #[test]
    fn road_blocks_scale() {
        let blocks = road_boundaries(10.0, 1.0, 2).unwrap();
        let ne = &blocks[0];
        assert!(has_vertex(ne, 1.0, 1.0));
        assert!(has_vertex(ne, 11.0, 11.0));
        assert_abs_diff_eq!(distance_oracle(&blocks[0], &blocks[1]), 2.0, epsilon = 1e-12);
        assert!(road_boundaries(0.0, 1.0, 2).is_err());
    }

    #[test]
    fn oracle_simple_cases() {
        assert_abs_diff_eq!(distance_oracle(&unit_square(0.0, 0.0), &unit_square(3.0, 0.0)), 2.0, epsilon = 1e-12);
        assert_eq!(distance_oracle(&unit_square(0.0, 0.0), &unit_square(0.5, 0.3)), 0.0);
    }

    #[test]
    fn oracle_rotated_square_matches_boundary_sampling() {
        let p = unit_square(0.0, 0.0);
        let q = unit_square(0.0, 0.0).transformed(PI / 4.0, Vector2::new(3.0, 3.0));
        let d = distance_oracle(&p, &q);
        // dense boundary sampling of both polygons
        let sample = |poly: &Polytope| {
            let v = poly.vertices();
            let mut pts = Vec::new();
            for i in 0..v.len() {
                let (a, b) = (v[i], v[(i + 1) % v.len()]);
                for k in 0..=400 {
                    pts.push(a + (b - a) * (k as f64 / 400.0));
                }
            }
            pts
        };
        let (sp, sq) = (sample(&p), sample(&q));
        let brute = sp
            .iter()
            .flat_map(|a| sq.iter().map(move |b| (a - b).norm()))
            .fold(f64::INFINITY, f64::min);
        // corner (0.5, 0.5) to the rotated square's facing edge x + y = 6 - sqrt(1/2)
        let expected = (6.0 - 0.5f64.sqrt() - 1.0) / 2.0f64.sqrt();
        assert!(d <= brute + 1e-12);
        assert!(brute - d < 1e-2);
        assert_abs_diff_eq!(d, expected, epsilon = 1e-9);
    }

    #[test]
    fn dual_value_and_residuals() {
        let p = unit_square(0.0, 0.0);
        let q = unit_square(3.0, 0.0);
        let zero = DualPair::zeros(4, 4);
        assert_eq!(dual_distance_value(&p, &q, &zero).unwrap(), 0.0);
        let (r1, r2) = dual_residuals(&p, &q, &zero).unwrap();
        assert_eq!(r1.norm() + r2.norm(), 0.0);

        // Optimal certificate: s points from Q to P, lambda on P's +x face and
        // Q's -x face.
        let opt = DualPair {
            lambda_pq: vec![1.0, 0.0, 0.0, 0.0],
            lambda_qp: vec![0.0, 0.0, 1.0, 0.0],
            s: [-1.0, 0.0],
        };
        assert_abs_diff_eq!(dual_distance_value(&p, &q, &opt).unwrap(), 2.0, epsilon = 1e-12);
        let (r1, r2) = dual_residuals(&p, &q, &opt).unwrap();
        assert!(r1.norm() < 1e-9 && r2.norm() < 1e-9);

        let bad = DualPair {
            lambda_pq: vec![0.3, 0.1, 0.0, 0.2],
            lambda_qp: vec![0.0; 4],
            s: [0.5, 0.5],
        };
        let (r1, _) = dual_residuals(&p, &q, &bad).unwrap();
        assert!(r1.norm() > 0.1);

        let wrong = DualPair::zeros(3, 4);
        assert!(matches!(
            dual_distance_value(&p, &q, &wrong),
            Err(GeometryError::DimensionMismatch { .. })
        ));
        assert!(dual_residuals(&p, &q, &wrong).is_err());
    }

    #[test]
    fn seeded_and_maximised_duals_certify_distance() {
        let p = unit_square(0.0, 0.0);
        let q = unit_square(3.0, 0.0);
        let seeded = seed_dual(&p, &q);
        let (r1, r2) = dual_residuals(&p, &q, &seeded).unwrap();
        assert!(r1.norm() < 1e-12 && r2.norm() < 1e-12);
        assert_abs_diff_eq!(dual_distance_value(&p, &q, &seeded).unwrap(), 2.0, epsilon = 1e-12);
        let (v, d) = max_dual_distance(&p, &q);
        assert_abs_diff_eq!(v, 2.0, epsilon = 1e-9);
        assert!(d.is_admissible(1e-12));
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            Polytope::new(vec![Vector2::new(1.0, 0.0), Vector2::new(0.0, 1.0), Vector2::new(-1.0, 0.0)], vec![1.0, 1.0, 1.0]),
            Err(GeometryError::Unbounded)
        ));
        assert!(matches!(
            Polytope::axis_aligned_box(1.0, 0.0, 0.0, 1.0),
            Err(GeometryError::EmptyInterior)
        ));
        assert!(VehicleShape::new(0.0, 1.0).is_err());
        assert_abs_diff_eq!(normalize_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_angle(-PI), PI, epsilon = 1e-12);
    }

    use proptest::prelude::*;

    fn rect() -> impl Strategy<Value = Polytope> {
        (-10.0..10.0f64, -10.0..10.0f64, -3.2..3.2f64, 1.0..6.0f64, 0.5..3.0f64).prop_map(|(x, y, th, l, w)| {
            vehicle_polytope(&Pose::new(x, y, th), &VehicleShape::new(l, w).unwrap())
        })
    }

    proptest! {
        #[test]
        fn weak_duality(p in rect(), q in rect(), phi in 0.0..6.3f64, scale in 0.0..1.0f64) {
            let d = dual_for_direction(&p, &q, Vector2::new(phi.cos(), phi.sin()) * scale);
            let (rp, rq) = dual_residuals(&p, &q, &d).unwrap();
            prop_assert!(rp.norm() < 1e-9 && rq.norm() < 1e-9);
            prop_assert!(d.is_admissible(1e-12));
            prop_assert!(dual_distance_value(&p, &q, &d).unwrap() <= distance_oracle(&p, &q) + 1e-9);
        }

        #[test]
        fn strong_duality_for_separated_pairs(p in rect(), q in rect()) {
            let dist = distance_oracle(&p, &q);
            prop_assume!(dist > 1e-3);
            let (v, _) = max_dual_distance(&p, &q);
            prop_assert!((v - dist).abs() < 1e-6, "{v} vs {dist}");
        }

        #[test]
        fn distance_is_invariant_under_rigid_motion(
            p in rect(), q in rect(), angle in -3.2..3.2f64, dx in -20.0..20.0f64, dy in -20.0..20.0f64,
        ) {
            let shift = Vector2::new(dx, dy);
            let moved = distance_oracle(&p.transformed(angle, shift), &q.transformed(angle, shift));
            prop_assert!((moved - distance_oracle(&p, &q)).abs() < 1e-9);
        }

        #[test]
        fn footprint_is_centred_on_pose(x in -50.0..50.0f64, y in -50.0..50.0f64, th in -3.2..3.2f64) {
            let p = vehicle_polytope(&Pose::new(x, y, th), &VehicleShape::default());
            prop_assert!((p.centroid() - Vector2::new(x, y)).norm() < 1e-9);
            prop_assert!(p.contains(&Vector2::new(x, y), 0.0));
        }
    }
}
