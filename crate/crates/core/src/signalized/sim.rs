//! Time-stepped simulation of one incoming lane per approach.
//!
//! Each vehicle moves along its route coordinate `s`, the position of its
//! front bumper measured from the stop line (the edge of the central box).
//! A follower may never be further along than its leader was one saturation
//! headway earlier, so every point of a lane, the stop line included, is
//! passed at most once per saturation headway. A hard bumper gap, bounded
//! acceleration and braking, signal compliance with an amber dilemma zone
//! and a reaction delay for vehicles starting from rest complete the model.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_phases, max_pressure_phase, standard_phases, webster_plan, Controller, HvModel, SignalParams, SignalPhase, SignalPlan};
use crate::geometry::IntersectionGeometry;
use crate::scenario::{Approach, FamilyParams, Movement, Turn};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation input: {0}")]
    Invalid(String),
}

/// A vehicle scheduled to appear at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub t: f64,
    pub movement: Movement,
    pub v_init: f64,
    /// Distance of the front bumper upstream of the stop line; `None`
    /// enters at the upstream end of the lane once there is room.
    pub position: Option<f64>,
}

/// Random arrivals: shifted exponential headways per approach, turns drawn
/// from `turn_ratios` (left, through, right).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Demand {
    /// veh/h, indexed by [`Approach::index`].
    pub per_approach: [f64; 4],
    pub turn_ratios: [f64; 3],
    pub v_init: f64,
    /// Smallest headway between arrivals on one approach.
    pub min_headway: f64,
}

impl Default for Demand {
    fn default() -> Self {
        Self {
            per_approach: [1200.0; 4],
            turn_ratios: [0.1, 0.8, 0.1],
            v_init: 10.0,
            min_headway: 1.0,
        }
    }
}

impl Demand {
    pub fn validate(&self) -> Result<(), SimError> {
        let rates_ok = self.per_approach.iter().all(|q| q.is_finite() && *q >= 0.0)
            && self.per_approach.iter().any(|q| *q > 0.0);
        let ratios_ok = self.turn_ratios.iter().all(|r| r.is_finite() && *r >= 0.0) && self.turn_ratios.iter().sum::<f64>() > 0.0;
        let headway_ok = self.min_headway >= 0.0
            && self.per_approach.iter().all(|&q| q == 0.0 || 3600.0 / q > self.min_headway);
        if rates_ok && ratios_ok && headway_ok && self.v_init >= 0.0 {
            Ok(())
        } else {
            Err(SimError::Invalid("demand needs positive rates, turn ratios and a feasible minimum headway".into()))
        }
    }
}

/// The first `n` arrivals of the seeded demand process, shifted so the first
/// one is at `t = 0`. Each approach draws from its own stream, so the batch
/// for `n + 1` extends the batch for `n`. When no vehicle of the batch turns,
/// the first one turns left.
pub fn demand_arrivals(d: &Demand, n: usize, seed: u64) -> Result<Vec<Arrival>, SimError> {
    d.validate()?;
    let total_ratio: f64 = d.turn_ratios.iter().sum();
    let mut all = Vec::new();
    for a in Approach::ALL {
        let q = d.per_approach[a.index()];
        if q <= 0.0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(a.index() as u64));
        let mean_extra = 3600.0 / q - d.min_headway;
        let mut t = 0.0;
        for k in 0..n {
            let u: f64 = rng.random();
            let gap = d.min_headway - mean_extra * (1.0 - u).ln();
            t += if k == 0 { gap - d.min_headway } else { gap };
            let pick = rng.random::<f64>() * total_ratio;
            let turn = if pick < d.turn_ratios[0] {
                Turn::Left
            } else if pick < d.turn_ratios[0] + d.turn_ratios[1] {
                Turn::Through
            } else {
                Turn::Right
            };
            all.push(Arrival {
                t,
                movement: Movement::new(a, turn),
                v_init: d.v_init,
                position: None,
            });
        }
    }
    all.sort_by(|x, y| x.t.total_cmp(&y.t).then(x.movement.cmp(&y.movement)));
    all.truncate(n);
    if let Some(t0) = all.first().map(|a| a.t) {
        for a in &mut all {
            a.t -= t0;
        }
    }
    if !all.is_empty() && all.iter().all(|a| a.movement.turn == Turn::Through) {
        all[0].movement.turn = Turn::Left;
    }
    Ok(all)
}

/// The scenario family as a signalised batch, everyone released at `t = 0`.
/// Vehicles whose queue slot fits on the approach of length `lane_length`
/// stand there; the rest are inserted at the lane entry at their initial
/// speed as soon as there is room.
pub fn family_arrivals(fam: &FamilyParams, n: usize) -> Vec<Arrival> {
    let mut in_count = [0usize; 4];
    fam.requests(n)
        .into_iter()
        .map(|r| {
            let q = in_count[r.approach.index()];
            in_count[r.approach.index()] += 1;
            let p = fam.queue_position(q);
            let stored = p + fam.shape.length <= fam.geometry.lane_length;
            Arrival {
                t: 0.0,
                movement: Movement::new(r.approach, r.turn),
                v_init: if stored { 0.0 } else { r.v_init },
                position: stored.then_some(p),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub geometry: IntersectionGeometry,
    pub hv: HvModel,
    pub signal: SignalParams,
    pub controller: Controller,
    /// Speed cap on top of the drivers' free speed.
    pub v_max: f64,
    /// A vehicle has crossed once its rear bumper is this far past the box.
    pub exit_gap: f64,
    pub dt: f64,
    pub max_time: f64,
    /// Time without any movement, with vehicles waiting, that counts as gridlock.
    pub gridlock_time: f64,
    /// Sampling period of the queue trace.
    pub trace_interval: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            geometry: IntersectionGeometry::default(),
            hv: HvModel::default(),
            signal: SignalParams::default(),
            controller: Controller::MaxPressure,
            v_max: 25.0,
            exit_gap: 0.5,
            dt: 0.1,
            max_time: 3600.0,
            gridlock_time: 300.0,
            trace_interval: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.hv.validate()?;
        self.signal.validate()?;
        let ok = self.v_max > 0.0
            && self.exit_gap >= 0.0
            && self.dt > 0.0
            && self.max_time > 0.0
            && self.gridlock_time > 0.0
            && self.trace_interval >= self.dt
            && self.geometry.lane_length > 0.0
            && self.geometry.lane_width > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::Invalid("non-positive speed cap, step, horizon or geometry".into()))
        }
    }

    /// Length of the path through the box.
    pub fn box_length(&self, m: Movement) -> f64 {
        let hb = self.geometry.half_box();
        let lane = 0.5 * self.geometry.lane_width;
        match m.turn {
            Turn::Through => 2.0 * hb,
            Turn::Right => FRAC_PI_2 * (hb - lane),
            Turn::Left => FRAC_PI_2 * (hb + lane),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalStage {
    Green,
    Amber,
    AllRed,
}

/// One stage of the signal timeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalInterval {
    pub start: f64,
    pub end: f64,
    pub phase: usize,
    pub stage: SignalStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub id: usize,
    pub movement: Movement,
    /// Scheduled arrival.
    pub spawn_t: f64,
    /// When the vehicle actually appeared on its lane.
    pub lane_t: Option<f64>,
    /// Front bumper crosses the stop line.
    pub enter_t: Option<f64>,
    /// Rear bumper clears the box by the exit gap.
    pub exit_t: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueSample {
    pub t: f64,
    pub movement: Movement,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub controller: Controller,
    pub vehicles: Vec<VehicleRecord>,
    pub signal_log: Vec<SignalInterval>,
    pub queue_trace: Vec<QueueSample>,
    /// First scheduled arrival to last exit; `None` unless everyone exited.
    pub t_batch: Option<f64>,
    /// `3600 N / t_batch`, zero without a complete batch.
    pub throughput: f64,
    pub gridlock: bool,
    pub end_time: f64,
}

impl SimResult {
    pub fn exited(&self) -> usize {
        self.vehicles.iter().filter(|v| v.exit_t.is_some()).count()
    }

    pub fn in_network(&self) -> usize {
        self.vehicles.len() - self.exited()
    }

    pub fn completed(&self) -> bool {
        !self.gridlock && self.t_batch.is_some()
    }
}

/// Headways are read to this resolution. Crossing times are interpolated
/// inside a step, which leaves sub-nanosecond noise on exact headways.
const HEADWAY_RESOLUTION: f64 = 1e-6;

/// Largest discharge rate (veh/h) of any movement, from the shortest time
/// between successive stop-line crossings of that movement.
pub fn max_discharge_rate(res: &SimResult) -> f64 {
    let mut worst = 0.0f64;
    for m in Movement::all() {
        let mut times: Vec<f64> = res
            .vehicles
            .iter()
            .filter(|v| v.movement == m)
            .filter_map(|v| v.enter_t)
            .collect();
        times.sort_by(f64::total_cmp);
        for w in times.windows(2) {
            let h = ((w[1] - w[0]) / HEADWAY_RESOLUTION).round() / (1.0 / HEADWAY_RESOLUTION);
            if h > 0.0 {
                worst = worst.max(3600.0 / h);
            } else {
                return f64::INFINITY;
            }
        }
    }
    worst
}

struct Vehicle {
    movement: Movement,
    leader: Option<usize>,
    active: bool,
    done: bool,
    s: f64,
    v: f64,
    /// Position at every step since appearing.
    hist: Vec<f64>,
    first_step: usize,
    v0: f64,
    exit_s: f64,
    exit_v: f64,
    last_step: usize,
}

impl Vehicle {
    /// Position at step `j`, extrapolated at constant speed outside the
    /// recorded window.
    fn pos_at(&self, j: isize, dt: f64) -> f64 {
        let first = self.first_step as isize;
        if j < first {
            return self.hist[0] - self.v0 * (first - j) as f64 * dt;
        }
        let idx = (j - first) as usize;
        match self.hist.get(idx) {
            Some(&s) => s,
            None => {
                let last = *self.hist.last().expect("recorded");
                let extra = (j - first) as f64 - (self.hist.len() - 1) as f64;
                last + self.exit_v * extra * dt
            }
        }
    }
}

/// Whether moving at `speed` for one step and braking fully afterwards keeps
/// the position below `bounds[m]` after `m + 1` steps. The last bound also
/// caps the stopping point, since the leader never goes back.
fn headway_feasible(s: f64, speed: f64, bounds: &[f64], decel: f64, dt: f64) -> bool {
    let mut pos = s + speed * dt;
    let mut v = speed;
    let last = bounds.len() - 1;
    for &b in &bounds[..last] {
        if pos > b + 1e-9 {
            return false;
        }
        v = (v - decel * dt).max(0.0);
        pos += v * dt;
    }
    // remaining braking distance under the step scheme
    let n = (v / (decel * dt)).floor();
    let tail = dt * (v * (n + 1.0) - decel * dt * n * (n + 1.0) / 2.0);
    pos - v * dt + tail.max(0.0) <= bounds[last] + 1e-9
}

struct Signal {
    phases: Vec<SignalPhase>,
    phase: usize,
    stage: SignalStage,
    stage_start: f64,
    stage_end: f64,
    green_onset: f64,
    /// Max-pressure choice waiting for the clearance to end.
    pending: Option<usize>,
    plan: Option<SignalPlan>,
    log: Vec<SignalInterval>,
}

impl Signal {
    fn status(&self, m: Movement) -> Option<SignalStage> {
        self.phases[self.phase].contains(m).then_some(self.stage)
    }

    fn close(&mut self, t: f64) {
        self.log.push(SignalInterval {
            start: self.stage_start,
            end: t,
            phase: self.phase,
            stage: self.stage,
        });
        self.stage_start = t;
    }
}

struct Counts {
    queue_in: [f64; 12],
    queue_out: [f64; 4],
}

fn webster_for(cfg: &SimConfig, phases: &[SignalPhase], arrivals: &[Arrival], t: f64) -> SignalPlan {
    let window = cfg.signal.flow_window;
    let mut q = [0.0f64; 12];
    for a in arrivals.iter().filter(|a| a.t <= t + 1e-9 && a.t > t - window) {
        q[a.movement.index()] += 3600.0 / window;
    }
    let sat = cfg.hv.saturation_flow();
    let mut ratios: Vec<f64> = phases
        .iter()
        .map(|p| {
            Approach::ALL
                .iter()
                .map(|&a| p.movements.iter().filter(|m| m.approach == a).map(|m| q[m.index()]).sum::<f64>() / sat)
                .fold(0.0, f64::max)
        })
        .collect();
    let y: f64 = ratios.iter().sum();
    if y >= 0.95 {
        // oversaturated: keep the proportions at the longest cycle
        for r in &mut ratios {
            *r *= 0.95 / y;
        }
    }
    let lost = cfg.signal.lost_time_per_phase * phases.len() as f64;
    webster_plan(&ratios, lost, (cfg.signal.cycle_min, cfg.signal.cycle_max), cfg.signal.min_green)
        .expect("ratios are scaled below one")
}

/// Runs the batch to completion (every vehicle exited), gridlock or
/// `cfg.max_time`. Deterministic in its inputs.
pub fn simulate(cfg: &SimConfig, arrivals: &[Arrival]) -> Result<SimResult, SimError> {
    cfg.validate()?;
    if arrivals.iter().any(|a| !(a.t.is_finite() && a.v_init.is_finite() && a.v_init >= 0.0)) {
        return Err(SimError::Invalid("arrival times and speeds must be finite and non-negative".into()));
    }
    let phases = standard_phases();
    check_phases(&phases)?;
    let hv = cfg.hv;
    let dt = cfg.dt;
    let lag = (hv.saturation_headway / dt).round() as isize;
    let cap = hv.free_speed.min(cfg.v_max);
    let entry_s = -cfg.geometry.lane_length;

    let mut order: Vec<usize> = (0..arrivals.len()).collect();
    order.sort_by(|&a, &b| arrivals[a].t.total_cmp(&arrivals[b].t).then(a.cmp(&b)));
    // lane order: explicit positions first (furthest downstream first), then by arrival time
    let mut lanes: Vec<Vec<usize>> = vec![Vec::new(); 4];
    let mut placed: Vec<usize> = order.iter().copied().filter(|&i| arrivals[i].position.is_some()).collect();
    placed.sort_by(|&a, &b| {
        arrivals[a]
            .position
            .unwrap_or(0.0)
            .total_cmp(&arrivals[b].position.unwrap_or(0.0))
            .then(a.cmp(&b))
    });
    for &i in placed.iter().chain(order.iter().filter(|&&i| arrivals[i].position.is_none())) {
        lanes[arrivals[i].movement.approach.index()].push(i);
    }
    let mut vehicles: Vec<Vehicle> = arrivals
        .iter()
        .map(|a| Vehicle {
            movement: a.movement,
            leader: None,
            active: false,
            done: false,
            s: 0.0,
            v: 0.0,
            hist: Vec::new(),
            first_step: 0,
            v0: a.v_init.min(cap),
            exit_s: cfg.box_length(a.movement) + cfg.exit_gap + hv.length,
            exit_v: 0.0,
            last_step: 0,
        })
        .collect();
    for lane in &lanes {
        for w in lane.windows(2) {
            vehicles[w[1]].leader = Some(w[0]);
        }
    }
    let mut records: Vec<VehicleRecord> = arrivals
        .iter()
        .enumerate()
        .map(|(id, a)| VehicleRecord {
            id,
            movement: a.movement,
            spawn_t: a.t,
            lane_t: None,
            enter_t: None,
            exit_t: None,
        })
        .collect();

    // Queues as max-pressure sees them: a shared lane discharges only
    // through the movement at its head, so the whole lane counts for it.
    let counts = |vehicles: &[Vehicle], t: f64| -> Counts {
        let mut c = Counts {
            queue_in: [0.0; 12],
            queue_out: [0.0; 4],
        };
        for lane in &lanes {
            let mut head = None;
            for &i in lane {
                let v = &vehicles[i];
                if v.done || arrivals[i].t > t + 1e-9 {
                    continue;
                }
                if v.active && v.s > 0.0 {
                    c.queue_out[v.movement.approach.destination(v.movement.turn).index()] += 1.0;
                    continue;
                }
                let m: Movement = *head.get_or_insert(v.movement);
                c.queue_in[m.index()] += 1.0;
            }
        }
        c
    };
    let waiting = |vehicles: &[Vehicle], t: f64| -> [usize; 12] {
        let mut q = [0usize; 12];
        for (i, v) in vehicles.iter().enumerate() {
            if !v.done && arrivals[i].t <= t + 1e-9 && (!v.active || v.s <= 0.0) {
                q[v.movement.index()] += 1;
            }
        }
        q
    };

    // signal start
    let mut signal = Signal {
        phases: phases.clone(),
        phase: 0,
        stage: SignalStage::Green,
        stage_start: 0.0,
        stage_end: 0.0,
        // standing drivers react to the first green like to any other
        green_onset: 0.0,
        pending: None,
        plan: None,
        log: Vec::new(),
    };
    let t_start = arrivals.iter().map(|a| a.t).fold(f64::INFINITY, f64::min).min(0.0);
    match cfg.controller {
        Controller::Webster => {
            let plan = webster_for(cfg, &phases, arrivals, t_start);
            signal.stage_end = t_start + plan.green[0];
            signal.plan = Some(plan);
        }
        Controller::MaxPressure => {
            let c = counts(&vehicles, t_start);
            signal.phase = max_pressure_phase(&c.queue_in, &c.queue_out, &phases);
            signal.stage_end = t_start + cfg.signal.control_period;
        }
    }
    signal.stage_start = t_start;
    signal.green_onset = t_start;

    let trace_every = (cfg.trace_interval / dt).round().max(1.0) as usize;
    let mut queue_trace = Vec::new();
    let mut remaining = arrivals.len();
    let mut last_motion = t_start;
    let mut gridlock = false;
    let max_steps = ((cfg.max_time - t_start) / dt).ceil() as usize;
    let mut step = 0usize;
    let mut t;
    let eps = 1e-9;

    while remaining > 0 && step < max_steps {
        t = t_start + step as f64 * dt;

        // signal transitions due at t
        while t >= signal.stage_end - eps {
            let now = signal.stage_end;
            match signal.stage {
                SignalStage::Green => {
                    let next = match cfg.controller {
                        Controller::Webster => None,
                        Controller::MaxPressure => {
                            let c = counts(&vehicles, now);
                            Some(max_pressure_phase(&c.queue_in, &c.queue_out, &phases))
                        }
                    };
                    if next == Some(signal.phase) {
                        signal.stage_end = now + cfg.signal.control_period;
                        continue;
                    }
                    signal.close(now);
                    signal.stage = SignalStage::Amber;
                    signal.stage_end = now + cfg.signal.amber();
                    signal.pending = next;
                }
                SignalStage::Amber => {
                    signal.close(now);
                    signal.stage = SignalStage::AllRed;
                    signal.stage_end = now + cfg.signal.all_red;
                }
                SignalStage::AllRed => {
                    signal.close(now);
                    let next = match cfg.controller {
                        Controller::Webster => (signal.phase + 1) % phases.len(),
                        Controller::MaxPressure => signal.pending.take().expect("chosen at the end of green"),
                    };
                    signal.phase = next;
                    signal.stage = SignalStage::Green;
                    signal.green_onset = now;
                    signal.stage_end = now
                        + match cfg.controller {
                            Controller::Webster => {
                                if next == 0 {
                                    signal.plan = Some(webster_for(cfg, &phases, arrivals, now));
                                }
                                signal.plan.as_ref().expect("plan").green[next]
                            }
                            Controller::MaxPressure => cfg.signal.control_period,
                        };
                }
            }
        }
        // appearances
        for &i in &order {
            let a = &arrivals[i];
            if vehicles[i].active || vehicles[i].done || a.t > t + eps {
                continue;
            }
            let s0 = a.position.map_or(entry_s, |p| -p);
            let leader = vehicles[i].leader;
            let room = match leader {
                None => true,
                Some(l) if vehicles[l].done => true,
                Some(l) if !vehicles[l].active => false,
                Some(l) => {
                    let lv = &vehicles[l];
                    let gap_ok = lv.s - hv.length - hv.min_gap >= s0 - eps;
                    let headway_ok = a.position.is_some() || lv.pos_at(step as isize - lag, dt) >= s0 - eps;
                    gap_ok && headway_ok
                }
            };
            if !room {
                continue;
            }
            // a driver who can see the red or a queue ahead has already slowed down
            let ahead = leader.is_some_and(|l| !vehicles[l].done && vehicles[l].s <= 0.0);
            let green = signal.status(a.movement) == Some(SignalStage::Green);
            let mut v0 = vehicles[i].v0;
            if ahead || !green {
                let leader_stop = leader.filter(|_| ahead).map_or(0.0, |l| vehicles[l].s - hv.length - hv.min_gap).min(0.0);
                v0 = v0.min((2.0 * hv.decel * (leader_stop - s0).max(0.0)).sqrt());
            }
            let veh = &mut vehicles[i];
            veh.active = true;
            veh.s = s0;
            veh.v = v0;
            veh.v0 = v0;
            veh.first_step = step;
            veh.hist.push(s0);
            records[i].lane_t = Some(t);
        }

        // motion, lane by lane from the head
        let mut moved = false;
        for lane in &lanes {
            for &i in lane {
                if !vehicles[i].active || vehicles[i].done {
                    continue;
                }
                let (s, v) = (vehicles[i].s, vehicles[i].v);
                let free = s + (v + hv.accel * dt).min(cap) * dt;
                let floor = s + (v - hv.decel * dt).max(0.0) * dt;
                let mut next = free;
                let mut hard = f64::INFINITY;
                if let Some(l) = vehicles[i].leader {
                    let lv = &vehicles[l];
                    if lv.active || lv.done {
                        // the bound for the next `lag` steps is the leader's known past
                        let bounds: Vec<f64> = (1..=lag + 1).map(|m| lv.pos_at(step as isize + m - lag, dt)).collect();
                        let reach = |speed: f64| headway_feasible(s, speed, &bounds, hv.decel, dt);
                        let (lo, hi) = ((floor - s) / dt, (free - s) / dt);
                        let speed = if reach(hi) {
                            hi
                        } else if !reach(lo) {
                            lo
                        } else {
                            let (mut a, mut b) = (lo, hi);
                            for _ in 0..40 {
                                let mid = 0.5 * (a + b);
                                if reach(mid) {
                                    a = mid;
                                } else {
                                    b = mid;
                                }
                            }
                            a
                        };
                        next = next.min(s + speed * dt);
                    }
                    if lv.active && !lv.done {
                        hard = hard.min(lv.s - hv.length - hv.min_gap);
                    }
                }
                if s <= 0.0 {
                    let must_stop = match signal.status(vehicles[i].movement) {
                        Some(SignalStage::Green) => v < 0.1 && t < signal.green_onset + hv.reaction_time - eps,
                        Some(SignalStage::Amber) => v * v / (2.0 * hv.decel) <= -s + 1e-6,
                        _ => true,
                    };
                    if must_stop {
                        let allowed = (2.0 * hv.decel * (-s)).sqrt();
                        next = next.min((s + allowed * dt).max(floor));
                        hard = hard.min(0.0);
                    }
                }
                let next = next.min(hard).max(s);
                let veh = &mut vehicles[i];
                if next - s > 1e-9 {
                    moved = true;
                }
                veh.v = (next - s) / dt;
                veh.s = next;
                veh.hist.push(next);
                veh.last_step = step + 1;
                let t_next = t + dt;
                if s <= 0.0 && next > 0.0 && records[i].enter_t.is_none() {
                    records[i].enter_t = Some(t + dt * (-s) / (next - s));
                }
                if next >= veh.exit_s {
                    let frac = if next > s { (veh.exit_s - s) / (next - s) } else { 1.0 };
                    records[i].exit_t = Some((t + dt * frac).min(t_next));
                    if records[i].enter_t.is_none() {
                        records[i].enter_t = Some(t + dt * frac);
                    }
                    veh.exit_v = veh.v;
                    veh.done = true;
                    veh.active = false;
                    remaining -= 1;
                }
            }
        }

        if step % trace_every == 0 {
            let q = waiting(&vehicles, t);
            for m in Movement::all() {
                queue_trace.push(QueueSample {
                    t,
                    movement: m,
                    len: q[m.index()],
                });
            }
        }
        debug_assert_eq!(
            vehicles.iter().filter(|v| v.done).count() + vehicles.iter().filter(|v| !v.done).count(),
            arrivals.len()
        );

        let waiting = vehicles.iter().any(|v| v.active && !v.done);
        if moved || !waiting {
            last_motion = t;
        } else if t - last_motion >= cfg.gridlock_time {
            gridlock = true;
            step += 1;
            break;
        }
        step += 1;
    }
    let end_time = t_start + step as f64 * dt;
    signal.close(end_time);

    let t_batch = if remaining == 0 && !arrivals.is_empty() {
        let last = records.iter().filter_map(|r| r.exit_t).fold(f64::NEG_INFINITY, f64::max);
        let first = arrivals.iter().map(|a| a.t).fold(f64::INFINITY, f64::min);
        Some(last - first)
    } else {
        None
    };
    let throughput = t_batch.map_or(0.0, |tb| if tb > 0.0 { 3600.0 * arrivals.len() as f64 / tb } else { 0.0 });
    Ok(SimResult {
        controller: cfg.controller,
        vehicles: records,
        signal_log: signal.log,
        queue_trace,
        t_batch,
        throughput,
        gridlock,
        end_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signalized::conflicts;

    fn cfg(controller: Controller) -> SimConfig {
        SimConfig {
            controller,
            ..SimConfig::default()
        }
    }

    fn through(a: Approach) -> Movement {
        Movement::new(a, Turn::Through)
    }

    #[test]
    fn empty_batch() {
        let res = simulate(&cfg(Controller::Webster), &[]).unwrap();
        assert!(res.vehicles.is_empty());
        assert_eq!(res.throughput, 0.0);
        assert!(res.t_batch.is_none());
    }

    #[test]
    fn single_vehicle_on_green_travels_at_free_speed() {
        let c = cfg(Controller::Webster);
        let v = c.hv.free_speed;
        let arr = [Arrival {
            t: 0.0,
            movement: through(Approach::South),
            v_init: v,
            position: None,
        }];
        let res = simulate(&c, &arr).unwrap();
        let dist = c.geometry.lane_length + c.box_length(arr[0].movement) + c.exit_gap + c.hv.length;
        let exit = res.vehicles[0].exit_t.unwrap();
        assert!((exit - dist / v).abs() <= c.dt, "{exit} vs {}", dist / v);
        assert!(res.vehicles[0].enter_t.unwrap() < exit);
    }

    #[test]
    fn saturated_queue_discharges_at_saturation_headway() {
        // max-pressure keeps the only busy phase green
        let c = cfg(Controller::MaxPressure);
        let arr: Vec<Arrival> = (0..12)
            .map(|k| Arrival {
                t: 0.0,
                movement: through(Approach::South),
                v_init: 0.0,
                position: Some(1.0 + 7.0 * k as f64),
            })
            .collect();
        let res = simulate(&c, &arr).unwrap();
        let mut entries: Vec<f64> = res.vehicles.iter().map(|v| v.enter_t.unwrap()).collect();
        entries.sort_by(f64::total_cmp);
        let heads: Vec<f64> = entries.windows(2).map(|w| w[1] - w[0]).collect();
        // start-up losses fade after the first vehicles
        for h in &heads[3..] {
            assert!((h - c.hv.saturation_headway).abs() <= 0.1, "{heads:?}");
        }
        assert!(heads.iter().all(|&h| h >= c.hv.saturation_headway - 1e-6));
        assert!(max_discharge_rate(&res) <= c.hv.saturation_flow() + 1e-6);
    }

    #[test]
    fn identical_inputs_give_identical_results() {
        let arr = demand_arrivals(&Demand::default(), 40, 7).unwrap();
        for ctl in [Controller::Webster, Controller::MaxPressure] {
            let a = simulate(&cfg(ctl), &arr).unwrap();
            let b = simulate(&cfg(ctl), &arr).unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(arr, demand_arrivals(&Demand::default(), 40, 7).unwrap());
        assert_ne!(arr, demand_arrivals(&Demand::default(), 40, 8).unwrap());
    }

    #[test]
    fn batches_are_nested_and_turn() {
        let d = Demand {
            turn_ratios: [0.0, 1.0, 0.0],
            ..Demand::default()
        };
        let big = demand_arrivals(&d, 20, 3).unwrap();
        let small = demand_arrivals(&d, 10, 3).unwrap();
        assert_eq!(small[1..], big[1..10]);
        assert_eq!(small[0].movement.turn, Turn::Left);
        assert_eq!(big[0].t, 0.0);
    }

    #[test]
    fn vehicles_are_conserved_when_cut_short() {
        let arr = demand_arrivals(&Demand::default(), 60, 1).unwrap();
        let c = SimConfig {
            max_time: 30.0,
            ..cfg(Controller::MaxPressure)
        };
        let res = simulate(&c, &arr).unwrap();
        assert_eq!(res.exited() + res.in_network(), arr.len());
        assert!(res.in_network() > 0);
        assert!(res.t_batch.is_none());
        for v in &res.vehicles {
            if let (Some(a), Some(b)) = (v.enter_t, v.exit_t) {
                assert!(b > a);
            }
        }
    }

    #[test]
    fn entries_respect_the_signal() {
        for ctl in [Controller::Webster, Controller::MaxPressure] {
            let arr = demand_arrivals(&Demand::default(), 60, 11).unwrap();
            let res = simulate(&cfg(ctl), &arr).unwrap();
            assert!(res.completed(), "{ctl}: gridlock {} exited {} end {}", res.gridlock, res.exited(), res.end_time);
            let phases = standard_phases();
            for v in &res.vehicles {
                let t = v.enter_t.unwrap();
                let stage = res
                    .signal_log
                    .iter()
                    .find(|s| s.start - 1e-6 <= t && t <= s.end + 1e-6 && phases[s.phase].contains(v.movement))
                    .map(|s| s.stage);
                assert!(
                    matches!(stage, Some(SignalStage::Green | SignalStage::Amber)),
                    "{ctl}: vehicle {} entered at {t} without right of way",
                    v.id
                );
            }
            // conflicting movements never share a green or amber
            for s in &res.signal_log {
                for a in &phases[s.phase].movements {
                    for b in &phases[s.phase].movements {
                        assert!(!conflicts(*a, *b));
                    }
                }
            }
            assert!(max_discharge_rate(&res) <= cfg(ctl).hv.saturation_flow() + 1e-6);
        }
    }

    #[test]
    fn signal_log_is_contiguous() {
        let arr = demand_arrivals(&Demand::default(), 30, 2).unwrap();
        let res = simulate(&cfg(Controller::Webster), &arr).unwrap();
        for w in res.signal_log.windows(2) {
            assert!((w[0].end - w[1].start).abs() < 1e-9);
        }
        let greens: Vec<usize> = res
            .signal_log
            .iter()
            .filter(|s| s.stage == SignalStage::Green)
            .map(|s| s.phase)
            .take(5)
            .collect();
        assert_eq!(greens, vec![0, 1, 2, 3, 0]);
    }

    #[test]
    fn family_fills_the_approaches_then_inserts() {
        let fam = FamilyParams::default();
        let arr = family_arrivals(&fam, 32);
        let stored = arr.iter().filter(|a| a.position.is_some()).count();
        assert_eq!(stored, 24);
        assert!(arr.iter().filter(|a| a.position.is_some()).all(|a| a.v_init == 0.0));
        assert!(arr.iter().filter(|a| a.position.is_none()).all(|a| a.v_init == fam.v_init));
        let res = simulate(&cfg(Controller::MaxPressure), &arr).unwrap();
        assert!(res.completed());
        assert!(max_discharge_rate(&res) <= 3600.0 / 1.9 + 1e-6);
    }

    #[test]
    fn seeded_family_is_reproducible_and_turns() {
        let fam = FamilyParams::default();
        let a = fam.with_random_turns(16, [0.1, 0.8, 0.1], 7);
        assert_eq!(a.requests(16), fam.with_random_turns(16, [0.1, 0.8, 0.1], 7).requests(16));
        assert!(a.requests(16).iter().any(|r| r.turn != Turn::Through));
        for (i, r) in a.requests(16).iter().enumerate() {
            assert_eq!(r.approach, Approach::ROUND_ROBIN[i % 4]);
        }
        let all_through = fam.with_random_turns(4, [0.0, 1.0, 0.0], 1);
        assert_eq!(all_through.requests(4)[0].turn, Turn::Left);
    }
}
