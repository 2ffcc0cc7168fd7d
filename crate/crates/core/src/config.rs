//! JSON scenario files.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::capacity::LaneFreeOptions;
use crate::dynamics::{Limits, PhysicalParams};
use crate::geometry::{IntersectionGeometry, VehicleShape};
use crate::ocp::{CrossingScenario, RefinePolicy, ScenarioError, TranscriptionConfig};
use crate::scenario::{Approach, FamilyParams, Turn, VehicleRequest};
use crate::signalized::{Controller, Demand, HvModel, SignalParams, SimConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("{0}")]
    Invalid(String),
}

impl From<serde_json::Error> for ConfigError {
    fn from(e: serde_json::Error) -> Self {
        ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectionSection {
    pub lane_length_m: f64,
    pub lane_width_m: f64,
}

impl Default for IntersectionSection {
    fn default() -> Self {
        let g = IntersectionGeometry::default();
        Self {
            lane_length_m: g.lane_length,
            lane_width_m: g.lane_width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefaultsSection {
    pub shape: VehicleShape,
    pub physical: PhysicalParams,
    pub limits: Limits,
    /// Safety distance between vehicles.
    pub d_min: f64,
    /// Safety distance to the road boundary.
    pub d_rmin: f64,
    pub queue_spacing: f64,
    pub stop_gap: f64,
    pub exit_gap: f64,
    /// Initial speed of vehicles not listed explicitly.
    pub v_init: f64,
}

impl Default for DefaultsSection {
    fn default() -> Self {
        let f = FamilyParams::default();
        Self {
            shape: f.shape,
            physical: f.physical,
            limits: f.limits,
            d_min: f.d_min,
            d_rmin: f.d_rmin,
            queue_spacing: f.queue_spacing,
            stop_gap: f.stop_gap,
            exit_gap: f.exit_gap,
            v_init: f.v_init,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalSection {
    pub controller: Controller,
    pub demand: Demand,
    /// Draws the family's turns from `demand.turn_ratios` when set.
    pub seed: Option<u64>,
    pub hv: HvModel,
    pub timing: SignalParams,
    /// Batch sizes of the capacity search.
    pub n_grid: Vec<usize>,
    pub dt: f64,
    pub max_time: f64,
}

impl Default for SignalSection {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            controller: sim.controller,
            demand: Demand::default(),
            seed: None,
            hv: sim.hv,
            timing: sim.signal,
            n_grid: (1..=32).collect(),
            dt: sim.dt,
            max_time: sim.max_time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    /// Shooting intervals `K`.
    pub intervals: usize,
    pub substeps: usize,
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub max_iter: usize,
    pub dense_factor: usize,
    pub max_doublings: usize,
    /// Wall-clock budget per solve in seconds.
    pub time_limit_s: Option<f64>,
}

impl Default for SolverSection {
    fn default() -> Self {
        let c = TranscriptionConfig::default();
        let p = RefinePolicy::default();
        Self {
            intervals: c.intervals,
            substeps: c.substeps,
            feasibility_tol: c.feasibility_tol,
            optimality_tol: c.optimality_tol,
            max_iter: c.max_iter,
            dense_factor: p.dense_factor,
            max_doublings: p.max_doublings,
            time_limit_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CapacitySection {
    pub n_start: usize,
    pub n_max_budget: usize,
}

impl Default for CapacitySection {
    fn default() -> Self {
        Self {
            n_start: 1,
            n_max_budget: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    #[serde(default)]
    pub intersection: IntersectionSection,
    #[serde(default)]
    pub defaults: DefaultsSection,
    #[serde(default)]
    pub vehicles: Vec<VehicleRequest>,
    #[serde(default)]
    pub signal: SignalSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub capacity: CapacitySection,
}

impl ScenarioFile {
    /// The file `init` writes: three vehicles, one of them turning left.
    pub fn template() -> Self {
        let defaults = DefaultsSection::default();
        let v = defaults.v_init;
        Self {
            schema_version: SCHEMA_VERSION,
            intersection: IntersectionSection::default(),
            vehicles: vec![
                VehicleRequest {
                    approach: Approach::South,
                    turn: Turn::Left,
                    v_init: v,
                },
                VehicleRequest {
                    approach: Approach::West,
                    turn: Turn::Through,
                    v_init: v,
                },
                VehicleRequest {
                    approach: Approach::North,
                    turn: Turn::Through,
                    v_init: v,
                },
            ],
            defaults,
            signal: SignalSection::default(),
            solver: SolverSection::default(),
            capacity: CapacitySection::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serialisable");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema(self.schema_version));
        }
        let invalid = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.solver.intervals < 2 || self.solver.substeps == 0 || self.solver.max_iter == 0 || self.solver.dense_factor == 0 {
            return invalid("solver: intervals >= 2, substeps, max_iter and dense_factor >= 1");
        }
        if self.solver.time_limit_s.is_some_and(|t| !(t > 0.0)) {
            return invalid("solver: time_limit_s must be positive");
        }
        if self.capacity.n_start == 0 || self.capacity.n_max_budget < self.capacity.n_start {
            return invalid("capacity: need 1 <= n_start <= n_max_budget");
        }
        if self.signal.n_grid.is_empty() || self.signal.n_grid[0] == 0 || self.signal.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("signal: n_grid must be positive and strictly increasing");
        }
        self.sim_config(self.signal.controller)
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("signal: {e}")))?;
        self.signal.demand.validate().map_err(|e| ConfigError::Invalid(format!("signal: {e}")))?;
        self.family()
            .geometry
            .road_boundaries()
            .map_err(|e| ConfigError::Invalid(format!("intersection: {e}")))?;
        Ok(())
    }

    pub fn geometry(&self) -> IntersectionGeometry {
        IntersectionGeometry {
            lane_length: self.intersection.lane_length_m,
            lane_width: self.intersection.lane_width_m,
            ..IntersectionGeometry::default()
        }
    }

    /// The scenario family: the listed vehicles first, then round-robin.
    pub fn family(&self) -> FamilyParams {
        let d = &self.defaults;
        FamilyParams {
            geometry: self.geometry(),
            shape: d.shape,
            physical: d.physical,
            limits: d.limits,
            d_min: d.d_min,
            d_rmin: d.d_rmin,
            queue_spacing: d.queue_spacing,
            stop_gap: d.stop_gap,
            exit_gap: d.exit_gap,
            v_init: d.v_init,
            vehicles: self.vehicles.clone(),
        }
    }

    /// The family as the signalised runs see it, with seeded turns when a
    /// seed is set.
    pub fn signal_family(&self, n: usize) -> FamilyParams {
        let fam = self.family();
        match self.signal.seed {
            Some(seed) => fam.with_random_turns(n, self.signal.demand.turn_ratios, seed),
            None => fam,
        }
    }

    /// The listed vehicles as one crossing scenario.
    pub fn crossing(&self) -> Result<CrossingScenario, ScenarioError> {
        if self.vehicles.is_empty() {
            return Err(ScenarioError::Empty);
        }
        self.family().build(self.vehicles.len())
    }

    pub fn transcription(&self) -> TranscriptionConfig {
        TranscriptionConfig {
            intervals: self.solver.intervals,
            substeps: self.solver.substeps,
            feasibility_tol: self.solver.feasibility_tol,
            optimality_tol: self.solver.optimality_tol,
            max_iter: self.solver.max_iter,
            ..TranscriptionConfig::default()
        }
    }

    pub fn policy(&self) -> RefinePolicy {
        RefinePolicy {
            dense_factor: self.solver.dense_factor,
            max_doublings: self.solver.max_doublings,
            ..RefinePolicy::default()
        }
    }

    pub fn time_limit(&self) -> Option<Duration> {
        self.solver.time_limit_s.map(Duration::from_secs_f64)
    }

    pub fn lanefree_options(&self) -> LaneFreeOptions {
        LaneFreeOptions {
            n_start: self.capacity.n_start,
            n_budget: self.capacity.n_max_budget,
            policy: self.policy(),
            deadline: None,
        }
    }

    pub fn sim_config(&self, controller: Controller) -> SimConfig {
        SimConfig {
            geometry: self.geometry(),
            hv: self.signal.hv,
            signal: self.signal.timing,
            controller,
            v_max: self.defaults.limits.v_max,
            exit_gap: self.defaults.exit_gap,
            dt: self.signal.dt,
            max_time: self.signal.max_time,
            ..SimConfig::default()
        }
    }
}
