//! Signalised intersection: phases, Webster and max-pressure controllers and
//! a single-lane-per-approach micro-simulator.

mod export;
mod pressure;
mod sim;
mod webster;

use serde::{Deserialize, Serialize};

use crate::scenario::{Approach, Movement, Turn};

pub use export::{write_queue_csv, write_vehicle_csv};
pub use pressure::max_pressure_phase;
pub use sim::{
    demand_arrivals, family_arrivals, max_discharge_rate, simulate, Arrival, Demand, SignalInterval, SignalStage,
    SimConfig, SimError, SimResult, VehicleRecord,
};
pub use webster::{webster_plan, PlanError, SignalPlan};

/// Human driver behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HvModel {
    /// Delay between green onset and a stopped head vehicle moving off.
    pub reaction_time: f64,
    /// Time gap between successive vehicles crossing any point of a queue in discharge.
    pub saturation_headway: f64,
    pub free_speed: f64,
    pub accel: f64,
    pub decel: f64,
    /// Smallest bumper-to-bumper gap ever allowed.
    pub min_gap: f64,
    pub length: f64,
}

impl Default for HvModel {
    fn default() -> Self {
        Self {
            reaction_time: 1.0,
            saturation_headway: 1.9,
            free_speed: 13.89,
            accel: 2.6,
            decel: 4.5,
            min_gap: 2.0,
            length: 4.5,
        }
    }
}

impl HvModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let all = [
            self.reaction_time,
            self.saturation_headway,
            self.free_speed,
            self.accel,
            self.decel,
            self.min_gap,
            self.length,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(SimError::Invalid("driver parameters must be positive and finite".into()));
        }
        Ok(())
    }

    /// Saturation flow of one lane in veh/h.
    pub fn saturation_flow(&self) -> f64 {
        3600.0 / self.saturation_headway
    }
}

/// Timing constants shared by both controllers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalParams {
    /// Amber plus all-red at the end of each phase.
    pub lost_time_per_phase: f64,
    /// Part of the lost time during which nobody may enter.
    pub all_red: f64,
    pub min_green: f64,
    /// Max-pressure decision period.
    pub control_period: f64,
    pub cycle_min: f64,
    pub cycle_max: f64,
    /// Window over which Webster measures flows.
    pub flow_window: f64,
}

impl Default for SignalParams {
    fn default() -> Self {
        Self {
            lost_time_per_phase: 2.5,
            all_red: 0.5,
            min_green: 5.0,
            control_period: 10.0,
            cycle_min: 15.0,
            cycle_max: 120.0,
            flow_window: 300.0,
        }
    }
}

impl SignalParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.lost_time_per_phase > 0.0
            && self.all_red >= 0.0
            && self.all_red < self.lost_time_per_phase
            && self.min_green > 0.0
            && self.control_period >= self.min_green
            && self.cycle_min > 0.0
            && self.cycle_max >= self.cycle_min
            && self.flow_window > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::Invalid("inconsistent signal timing parameters".into()))
        }
    }

    pub fn amber(&self) -> f64 {
        self.lost_time_per_phase - self.all_red
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    Webster,
    MaxPressure,
}

impl std::fmt::Display for Controller {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Controller::Webster => "webster",
            Controller::MaxPressure => "max_pressure",
        })
    }
}

/// Movements that receive green together.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalPhase {
    pub id: usize,
    pub movements: Vec<Movement>,
}

impl SignalPhase {
    pub fn contains(&self, m: Movement) -> bool {
        self.movements.contains(&m)
    }
}

/// NS through+right, NS left, EW through+right, EW left.
pub fn standard_phases() -> Vec<SignalPhase> {
    use Approach::*;
    let group = |a: [Approach; 2], turns: &[Turn]| -> Vec<Movement> {
        a.iter()
            .flat_map(|&ap| turns.iter().map(move |&t| Movement::new(ap, t)))
            .collect()
    };
    vec![
        SignalPhase {
            id: 0,
            movements: group([South, North], &[Turn::Through, Turn::Right]),
        },
        SignalPhase {
            id: 1,
            movements: group([South, North], &[Turn::Left]),
        },
        SignalPhase {
            id: 2,
            movements: group([West, East], &[Turn::Through, Turn::Right]),
        },
        SignalPhase {
            id: 3,
            movements: group([West, East], &[Turn::Left]),
        },
    ]
}

fn opposite(a: Approach, b: Approach) -> bool {
    a.is_north_south() == b.is_north_south() && a != b
}

/// Static conflict table for one incoming lane per approach. Movements from
/// one approach share a lane and never conflict; movements into the same
/// outgoing lane always do. Opposing movements cross only when exactly one
/// turns left; crossing streams from adjacent approaches conflict unless one
/// of them turns right.
pub fn conflicts(m1: Movement, m2: Movement) -> bool {
    if m1.approach == m2.approach {
        return false;
    }
    if m1.approach.destination(m1.turn) == m2.approach.destination(m2.turn) {
        return true;
    }
    if opposite(m1.approach, m2.approach) {
        (m1.turn == Turn::Left) != (m2.turn == Turn::Left)
    } else {
        m1.turn != Turn::Right && m2.turn != Turn::Right
    }
}

/// Checks that no phase holds a conflicting pair and every movement is served.
pub fn check_phases(phases: &[SignalPhase]) -> Result<(), SimError> {
    for p in phases {
        for (i, &a) in p.movements.iter().enumerate() {
            for &b in &p.movements[i + 1..] {
                if conflicts(a, b) {
                    return Err(SimError::Invalid(format!("phase {} holds conflicting {a} and {b}", p.id)));
                }
            }
        }
    }
    for m in Movement::all() {
        if !phases.iter().any(|p| p.contains(m)) {
            return Err(SimError::Invalid(format!("movement {m} is never served")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_phases_are_conflict_free_and_complete() {
        check_phases(&standard_phases()).unwrap();
    }

    #[test]
    fn conflict_table_cases() {
        use Approach::*;
        let m = Movement::new;
        assert!(conflicts(m(South, Turn::Left), m(North, Turn::Through)));
        assert!(!conflicts(m(South, Turn::Left), m(North, Turn::Left)));
        assert!(!conflicts(m(South, Turn::Through), m(North, Turn::Right)));
        assert!(conflicts(m(South, Turn::Through), m(West, Turn::Through)));
        assert!(conflicts(m(South, Turn::Right), m(West, Turn::Through)));
        assert!(!conflicts(m(South, Turn::Right), m(West, Turn::Left)));
        assert!(!conflicts(m(South, Turn::Left), m(South, Turn::Through)));
        for a in Movement::all() {
            for b in Movement::all() {
                assert_eq!(conflicts(a, b), conflicts(b, a), "{a} {b}");
            }
        }
    }

    #[test]
    fn phase_with_crossing_streams_is_rejected() {
        let bad = vec![SignalPhase {
            id: 0,
            movements: vec![
                Movement::new(Approach::South, Turn::Through),
                Movement::new(Approach::West, Turn::Through),
            ],
        }];
        assert!(check_phases(&bad).is_err());
    }
}
