//! Approaches, movements and the scenario family shared by both regimes.
//!
//! Traffic keeps to the right. Vehicles are assigned to approaches
//! round-robin (S, W, N, E), queue behind each other on their incoming lane
//! and end queued on the outgoing lane of their destination, with the rear
//! edge clear of the central box.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::{stability_derivatives, Limits, PhysicalParams, VehicleState};
use crate::geometry::{IntersectionGeometry, Pose, VehicleShape};
use crate::ocp::{CrossingScenario, ScenarioError, VehicleSpec};

/// Side of the intersection a vehicle arrives from (or leaves towards).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    North,
    East,
    South,
    West,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Approach::North, Approach::East, Approach::South, Approach::West];
    /// Assignment order for the scenario family.
    pub const ROUND_ROBIN: [Approach; 4] = [Approach::South, Approach::West, Approach::North, Approach::East];

    pub fn index(self) -> usize {
        match self {
            Approach::North => 0,
            Approach::East => 1,
            Approach::South => 2,
            Approach::West => 3,
        }
    }

    /// Heading of a vehicle entering from this side.
    pub fn inbound_heading(self) -> f64 {
        match self {
            Approach::South => FRAC_PI_2,
            Approach::North => -FRAC_PI_2,
            Approach::West => 0.0,
            Approach::East => std::f64::consts::PI,
        }
    }

    /// Heading of a vehicle leaving towards this side.
    pub fn outbound_heading(self) -> f64 {
        match self {
            Approach::North => FRAC_PI_2,
            Approach::South => -FRAC_PI_2,
            Approach::East => 0.0,
            Approach::West => std::f64::consts::PI,
        }
    }

    pub fn is_north_south(self) -> bool {
        matches!(self, Approach::North | Approach::South)
    }

    pub fn destination(self, turn: Turn) -> Approach {
        use Approach::*;
        match (self, turn) {
            (South, Turn::Left) => West,
            (South, Turn::Through) => North,
            (South, Turn::Right) => East,
            (West, Turn::Left) => North,
            (West, Turn::Through) => East,
            (West, Turn::Right) => South,
            (North, Turn::Left) => East,
            (North, Turn::Through) => South,
            (North, Turn::Right) => West,
            (East, Turn::Left) => South,
            (East, Turn::Through) => West,
            (East, Turn::Right) => North,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Approach::North => "N",
            Approach::East => "E",
            Approach::South => "S",
            Approach::West => "W",
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Approach::North => "north",
            Approach::East => "east",
            Approach::South => "south",
            Approach::West => "west",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Turn {
    Left,
    Through,
    Right,
}

impl Turn {
    pub const ALL: [Turn; 3] = [Turn::Left, Turn::Through, Turn::Right];

    pub fn index(self) -> usize {
        match self {
            Turn::Left => 0,
            Turn::Through => 1,
            Turn::Right => 2,
        }
    }

    /// Heading change, positive counter-clockwise.
    pub fn heading_change(self) -> f64 {
        match self {
            Turn::Left => FRAC_PI_2,
            Turn::Through => 0.0,
            Turn::Right => -FRAC_PI_2,
        }
    }
}

impl fmt::Display for Turn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Turn::Left => "left",
            Turn::Through => "through",
            Turn::Right => "right",
        })
    }
}

/// An (approach, turn) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Movement {
    pub approach: Approach,
    pub turn: Turn,
}

impl Movement {
    pub fn new(approach: Approach, turn: Turn) -> Self {
        Self { approach, turn }
    }

    /// Dense index in `0..12`.
    pub fn index(self) -> usize {
        3 * self.approach.index() + self.turn.index()
    }

    pub fn all() -> impl Iterator<Item = Movement> {
        Approach::ALL
            .into_iter()
            .flat_map(|a| Turn::ALL.into_iter().map(move |t| Movement::new(a, t)))
    }
}

impl fmt::Display for Movement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.approach.short(), self.turn)
    }
}

/// One vehicle of a batch, as seen by both regimes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleRequest {
    pub approach: Approach,
    pub turn: Turn,
    pub v_init: f64,
}

/// Parameters shared by every member of the scenario family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyParams {
    pub geometry: IntersectionGeometry,
    pub shape: VehicleShape,
    pub physical: PhysicalParams,
    pub limits: Limits,
    pub d_min: f64,
    pub d_rmin: f64,
    /// Centre-to-centre spacing of queued vehicles.
    pub queue_spacing: f64,
    /// Gap between the front bumper of the first queued vehicle and the box.
    pub stop_gap: f64,
    /// Gap between the box and the rear bumper of the first departed vehicle.
    pub exit_gap: f64,
    pub v_init: f64,
    /// Explicit leading vehicles; the family continues round-robin after them.
    pub vehicles: Vec<VehicleRequest>,
}

impl Default for FamilyParams {
    fn default() -> Self {
        Self {
            geometry: IntersectionGeometry::default(),
            shape: VehicleShape::default(),
            physical: PhysicalParams::default(),
            limits: Limits::default(),
            d_min: 0.1,
            d_rmin: 0.1,
            queue_spacing: 7.5,
            stop_gap: 1.0,
            exit_gap: 0.5,
            v_init: 10.0,
            vehicles: Vec::new(),
        }
    }
}

impl FamilyParams {
    /// The first `n` vehicles of the family. Past the explicit list, vehicle
    /// `i` takes approach `i mod 4` in round-robin order; vehicle 0 turns
    /// left and the rest go straight, so every batch has a turn.
    pub fn requests(&self, n: usize) -> Vec<VehicleRequest> {
        (0..n)
            .map(|i| {
                self.vehicles.get(i).copied().unwrap_or(VehicleRequest {
                    approach: Approach::ROUND_ROBIN[i % 4],
                    turn: if i == 0 { Turn::Left } else { Turn::Through },
                    v_init: self.v_init,
                })
            })
            .collect()
    }

    /// The family with the first `n` vehicles listed explicitly: approaches
    /// round-robin, turns drawn from `turn_ratios` (left, through, right)
    /// with `seed`. When no vehicle turns, the first one turns left.
    pub fn with_random_turns(&self, n: usize, turn_ratios: [f64; 3], seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let total: f64 = turn_ratios.iter().sum();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut vehicles: Vec<VehicleRequest> = (0..n)
            .map(|i| {
                let pick = rng.random::<f64>() * total;
                let turn = if pick < turn_ratios[0] {
                    Turn::Left
                } else if pick < turn_ratios[0] + turn_ratios[1] {
                    Turn::Through
                } else {
                    Turn::Right
                };
                VehicleRequest {
                    approach: Approach::ROUND_ROBIN[i % 4],
                    turn,
                    v_init: self.v_init,
                }
            })
            .collect();
        if !vehicles.is_empty() && vehicles.iter().all(|r| r.turn == Turn::Through) {
            vehicles[0].turn = Turn::Left;
        }
        Self {
            vehicles,
            ..self.clone()
        }
    }

    /// Distance from the box to the front bumper of queue slot `q`.
    pub fn queue_position(&self, q: usize) -> f64 {
        self.stop_gap + q as f64 * self.queue_spacing
    }

    /// Start and goal poses for a batch, queued per incoming and outgoing lane.
    pub fn poses(&self, reqs: &[VehicleRequest]) -> Vec<(Pose, Pose)> {
        let hb = self.geometry.half_box();
        let lane = 0.5 * self.geometry.lane_width;
        let half_len = 0.5 * self.shape.length;
        let mut in_count = [0usize; 4];
        let mut out_count = [0usize; 4];
        reqs.iter()
            .map(|r| {
                let qi = in_count[r.approach.index()];
                in_count[r.approach.index()] += 1;
                let dist_in = hb + self.stop_gap + half_len + qi as f64 * self.queue_spacing;
                let start = inbound_pose(r.approach, dist_in, lane);
                let dest = r.approach.destination(r.turn);
                let qo = out_count[dest.index()];
                out_count[dest.index()] += 1;
                let dist_out = hb + self.exit_gap + half_len + qo as f64 * self.queue_spacing;
                let goal = outbound_pose(dest, dist_out, lane);
                (start, goal)
            })
            .collect()
    }

    pub fn build(&self, n: usize) -> Result<CrossingScenario, ScenarioError> {
        self.build_from(&self.requests(n))
    }

    pub fn build_from(&self, reqs: &[VehicleRequest]) -> Result<CrossingScenario, ScenarioError> {
        let roads = self.geometry.road_boundaries().map_err(ScenarioError::Geometry)?;
        let poses = self.poses(reqs);
        let mut vehicles = Vec::with_capacity(reqs.len());
        for (r, (start, goal)) in reqs.iter().zip(poses) {
            let params = stability_derivatives(&self.physical, r.v_init).map_err(ScenarioError::Dynamics)?;
            vehicles.push(VehicleSpec {
                shape: self.shape,
                params,
                limits: self.limits,
                start: VehicleState {
                    r: 0.0,
                    beta: 0.0,
                    v: r.v_init,
                    x: start.x,
                    y: start.y,
                    theta: start.theta,
                },
                goal,
                goal_speed: None,
                movement: Some(Movement::new(r.approach, r.turn)),
            });
        }
        CrossingScenario::new(vehicles, roads, self.d_min, self.d_rmin)
    }
}

/// Pose on the incoming lane of `from`, `dist` metres from the centre.
pub fn inbound_pose(from: Approach, dist: f64, lane_offset: f64) -> Pose {
    let (x, y) = match from {
        Approach::South => (lane_offset, -dist),
        Approach::North => (-lane_offset, dist),
        Approach::West => (-dist, -lane_offset),
        Approach::East => (dist, lane_offset),
    };
    Pose::new(x, y, from.inbound_heading())
}

/// Pose on the outgoing lane towards `to`, `dist` metres from the centre.
pub fn outbound_pose(to: Approach, dist: f64, lane_offset: f64) -> Pose {
    let (x, y) = match to {
        Approach::North => (lane_offset, dist),
        Approach::South => (-lane_offset, -dist),
        Approach::East => (dist, -lane_offset),
        Approach::West => (-dist, lane_offset),
    };
    Pose::new(x, y, to.outbound_heading())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn destinations_follow_right_hand_traffic() {
        for a in Approach::ALL {
            let left = a.destination(Turn::Left);
            let change = crate::geometry::normalize_angle(left.outbound_heading() - a.inbound_heading());
            assert_abs_diff_eq!(change, FRAC_PI_2, epsilon = 1e-12);
            let right = a.destination(Turn::Right);
            let change = crate::geometry::normalize_angle(right.outbound_heading() - a.inbound_heading());
            assert_abs_diff_eq!(change, -FRAC_PI_2, epsilon = 1e-12);
            assert_abs_diff_eq!(
                a.destination(Turn::Through).outbound_heading(),
                a.inbound_heading(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn movement_indices_are_dense() {
        let mut seen = [false; 12];
        for m in Movement::all() {
            assert!(!seen[m.index()]);
            seen[m.index()] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn family_layout() {
        let fam = FamilyParams::default();
        let reqs = fam.requests(6);
        assert_eq!(reqs[0].turn, Turn::Left);
        assert!(reqs[1..].iter().all(|r| r.turn == Turn::Through));
        assert_eq!(reqs[4].approach, Approach::South);
        let poses = fam.poses(&reqs);
        // first vehicle from the south: front bumper 1 m before the box
        assert_abs_diff_eq!(poses[0].0.x, 2.5);
        assert_abs_diff_eq!(poses[0].0.y, -8.25);
        // second vehicle from the south queues one spacing behind
        assert_abs_diff_eq!(poses[4].0.y, -15.75);
        // left turn from the south ends on the westbound lane
        assert_abs_diff_eq!(poses[0].1.x, -7.75);
        assert_abs_diff_eq!(poses[0].1.y, 2.5);
        // rear edge of each goal footprint clears the box
        for (_, g) in &poses {
            let centre = g.x.abs().max(g.y.abs());
            assert!(centre - 2.25 >= 5.0 + 0.5 - 1e-12);
        }
    }

    #[test]
    fn family_members_are_valid_scenarios() {
        let fam = FamilyParams::default();
        for n in 1..=8 {
            let scn = fam.build(n).unwrap();
            assert_eq!(scn.vehicles.len(), n);
            assert_eq!(scn.roads.len(), 4);
        }
    }
}
