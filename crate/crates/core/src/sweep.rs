//! Sensitivity sweeps over speed and acceleration limits, quartic trend fits
//! and plateau detection.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::{capacity_measure, lanefree_capacity, signalized_capacity, LaneFreeOptions, Regime};
use crate::ocp::{solve_robust, validate_solution, OcpSolution, RefinePolicy, TranscriptionConfig};
use crate::scenario::FamilyParams;
use crate::signalized::{family_arrivals, Controller, SimConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SweepError {
    #[error("grid: {0}")]
    Grid(String),
    #[error("quartic fit needs at least 5 distinct abscissae, got {0}")]
    TooFewPoints(usize),
    #[error("fit data must be finite and of equal length")]
    BadData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub v_max: Vec<f64>,
    pub a_max: Vec<f64>,
    pub v_init: Vec<f64>,
    pub regimes: Vec<Regime>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            v_max: vec![10.0, 14.0, 18.0, 22.0, 26.0, 30.0],
            a_max: vec![2.0, 4.0],
            v_init: vec![5.0, 10.0],
            regimes: vec![Regime::LaneFree, Regime::Webster, Regime::MaxPressure],
        }
    }
}

impl SweepGrid {
    /// Value lists must be strictly increasing and admissible: positive
    /// limits and initial speeds inside `[v_min, min v_max]`.
    pub fn validate(&self, v_min: f64) -> Result<(), SweepError> {
        let increasing = |name: &str, xs: &[f64]| {
            if xs.is_empty() || xs.iter().any(|x| !x.is_finite()) || xs.windows(2).any(|w| w[1] <= w[0]) {
                Err(SweepError::Grid(format!("{name} values must be finite, non-empty and strictly increasing")))
            } else {
                Ok(())
            }
        };
        increasing("v_max", &self.v_max)?;
        increasing("a_max", &self.a_max)?;
        increasing("v_init", &self.v_init)?;
        if self.regimes.is_empty() {
            return Err(SweepError::Grid("no regime selected".into()));
        }
        if self.a_max[0] <= 0.0 || self.v_max[0] <= v_min {
            return Err(SweepError::Grid("limits must be positive and above the speed floor".into()));
        }
        if self.v_init[0] < v_min || self.v_init[self.v_init.len() - 1] > self.v_max[0] {
            return Err(SweepError::Grid(format!(
                "initial speeds must lie in [{v_min}, {}]",
                self.v_max[0]
            )));
        }
        Ok(())
    }

    pub fn points(&self) -> usize {
        self.v_max.len() * self.a_max.len() * self.v_init.len() * self.regimes.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    /// Batch size of every lane-free point.
    pub n: usize,
    /// Run the full lane-free `N_max` search at each point instead.
    pub full_search: bool,
    pub n_budget: usize,
    /// Batch sizes of the signalised capacity search.
    pub signal_grid: Vec<usize>,
    /// Draws the family's turns when set.
    pub seed: Option<u64>,
    pub turn_ratios: [f64; 3],
    pub policy: RefinePolicy,
    /// Wall-clock budget per lane-free point.
    pub point_budget: Option<Duration>,
    /// Keeps only the first points in grid order.
    pub max_points: Option<usize>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            n: 3,
            full_search: false,
            n_budget: 6,
            signal_grid: (1..=32).collect(),
            seed: None,
            turn_ratios: [0.1, 0.8, 0.1],
            policy: RefinePolicy::default(),
            point_budget: None,
            max_points: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub regime: Regime,
    pub v_init: f64,
    pub v_max: f64,
    pub a_max: f64,
    pub n: usize,
    /// Lane-free `t_f` or signalised batch time; `None` on a gap row.
    pub t: Option<f64>,
    pub c: Option<f64>,
    pub c_norm: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Rows of one `(regime, v_init, a_max)` series, ordered by `v_max`.
    pub fn series(&self, regime: Regime, v_init: f64, a_max: f64) -> Vec<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| r.regime == regime && r.v_init == v_init && r.a_max == a_max)
            .collect()
    }

    /// Distinct `(regime, v_init, a_max)` keys in table order.
    pub fn series_keys(&self) -> Vec<(Regime, f64, f64)> {
        let mut keys: Vec<(Regime, f64, f64)> = Vec::new();
        for r in &self.rows {
            let k = (r.regime, r.v_init, r.a_max);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["regime", "v_init", "v_max", "a_max", "N", "T", "C", "C_norm", "status"])?;
        let opt = |x: Option<f64>, prec: usize| x.map_or_else(String::new, |x| format!("{x:.prec$}"));
        for r in &self.rows {
            w.write_record([
                r.regime.to_string(),
                format!("{}", r.v_init),
                format!("{}", r.v_max),
                format!("{}", r.a_max),
                r.n.to_string(),
                opt(r.t, 6),
                opt(r.c, 3),
                opt(r.c_norm, 6),
                r.status.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Quartic fit of `C` against `v_max` and plateau onset of `T` for every
    /// series.
    pub fn fits(&self, rel_tol: f64) -> Vec<SeriesFit> {
        self.series_keys()
            .into_iter()
            .map(|(regime, v_init, a_max)| {
                let rows: Vec<&SweepRow> = self.series(regime, v_init, a_max).into_iter().filter(|r| r.c.is_some()).collect();
                let xs: Vec<f64> = rows.iter().map(|r| r.v_max).collect();
                let cs: Vec<f64> = rows.iter().filter_map(|r| r.c).collect();
                let curve: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.t.map(|t| (r.v_max, t))).collect();
                SeriesFit {
                    regime,
                    v_init,
                    a_max,
                    fit: fit_quartic(&xs, &cs).ok(),
                    plateau: detect_plateau(&curve, rel_tol),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarticFit {
    /// `c[k]` multiplies `x^k`.
    pub coefficients: [f64; 5],
    pub residual: f64,
}

impl QuarticFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesFit {
    pub regime: Regime,
    pub v_init: f64,
    pub a_max: f64,
    pub fit: Option<QuarticFit>,
    pub plateau: Option<f64>,
}

pub fn write_fit_csv<W: Write>(fits: &[SeriesFit], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["regime", "v_init", "a_max", "c0", "c1", "c2", "c3", "c4", "residual", "plateau_v_max"])?;
    for f in fits {
        let mut rec = vec![f.regime.to_string(), format!("{}", f.v_init), format!("{}", f.a_max)];
        match &f.fit {
            Some(q) => {
                rec.extend(q.coefficients.iter().map(|c| format!("{c:.9e}")));
                rec.push(format!("{:.6e}", q.residual));
            }
            None => rec.extend(std::iter::repeat_n(String::new(), 6)),
        }
        rec.push(f.plateau.map_or_else(String::new, |v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Least-squares degree-4 polynomial through `(xs, ys)` by Householder QR of
/// the column-scaled Vandermonde matrix.
pub fn fit_quartic(xs: &[f64], ys: &[f64]) -> Result<QuarticFit, SweepError> {
    if xs.len() != ys.len() || xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(SweepError::BadData);
    }
    let mut distinct = xs.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 5 {
        return Err(SweepError::TooFewPoints(distinct.len()));
    }
    let m = xs.len();
    let mut a = DMatrix::from_fn(m, 5, |i, k| xs[i].powi(k as i32));
    let scale: Vec<f64> = (0..5).map(|k| a.column(k).norm().max(f64::MIN_POSITIVE)).collect();
    for (k, s) in scale.iter().enumerate() {
        a.column_mut(k).unscale_mut(*s);
    }
    let b = DVector::from_column_slice(ys);
    let qr = a.clone().qr();
    let qtb = qr.q().transpose() * &b;
    let z = qr.r().solve_upper_triangular(&qtb).ok_or(SweepError::BadData)?;
    let residual = (&a * &z - &b).norm();
    let mut coefficients = [0.0; 5];
    for k in 0..5 {
        coefficients[k] = z[k] / scale[k];
    }
    Ok(QuarticFit { coefficients, residual })
}

/// Smallest `v_max` from which every successive relative change of `t_f` is
/// below `rel_tol`, with at least one change after it. `None` for fewer than
/// three points or when the curve never flattens.
pub fn detect_plateau(curve: &[(f64, f64)], rel_tol: f64) -> Option<f64> {
    if curve.len() < 3 {
        return None;
    }
    let flat: Vec<bool> = curve.windows(2).map(|w| ((w[1].1 - w[0].1) / w[0].1).abs() < rel_tol).collect();
    // onset i needs flat[i..] all true
    let mut onset = None;
    for i in (0..flat.len()).rev() {
        if !flat[i] {
            break;
        }
        onset = Some(curve[i].0);
    }
    onset
}

fn lane_free_family(base: &FamilyParams, opts: &SweepOptions, v_init: f64, v_max: f64, a_max: f64) -> FamilyParams {
    let mut fam = base.clone();
    fam.v_init = v_init;
    fam.limits.v_max = v_max;
    fam.limits.a_max = a_max;
    for v in &mut fam.vehicles {
        v.v_init = v_init;
    }
    if let Some(seed) = opts.seed {
        let n = opts.n.max(opts.n_budget).max(opts.signal_grid.last().copied().unwrap_or(0));
        fam = fam.with_random_turns(n, opts.turn_ratios, seed);
    }
    fam
}

fn gap(regime: Regime, v_init: f64, v_max: f64, a_max: f64, n: usize, status: String) -> SweepRow {
    SweepRow {
        regime,
        v_init,
        v_max,
        a_max,
        n,
        t: None,
        c: None,
        c_norm: None,
        status,
    }
}

/// Lane-free series of one `v_init`, solved in `(a_max, v_max)` order. Each
/// point starts from its solved neighbours at the next lower limits, whose
/// solutions stay feasible, and keeps the best validated result.
fn lane_free_series(
    base: &FamilyParams,
    grid: &SweepGrid,
    cfg: &TranscriptionConfig,
    opts: &SweepOptions,
    v_init: f64,
    keep: &dyn Fn(usize, usize) -> bool,
) -> Vec<SweepRow> {
    let mut solved: HashMap<(usize, usize), OcpSolution> = HashMap::new();
    let mut rows = Vec::new();
    for (ia, &a_max) in grid.a_max.iter().enumerate() {
        for (iv, &v_max) in grid.v_max.iter().enumerate() {
            if !keep(ia, iv) {
                continue;
            }
            let fam = lane_free_family(base, opts, v_init, v_max, a_max);
            let deadline = opts.point_budget.map(|d| Instant::now() + d);
            if opts.full_search {
                let lf = LaneFreeOptions {
                    n_start: 1,
                    n_budget: opts.n_budget,
                    policy: opts.policy,
                    deadline,
                };
                rows.push(match lanefree_capacity(|n| fam.build(n), cfg, &lf) {
                    Ok(res) => SweepRow {
                        regime: Regime::LaneFree,
                        v_init,
                        v_max,
                        a_max,
                        n: res.result.n,
                        t: Some(res.result.t),
                        c: Some(res.result.c),
                        c_norm: None,
                        status: res.result.terminal_reason.to_string(),
                    },
                    Err(e) => gap(Regime::LaneFree, v_init, v_max, a_max, 0, e.to_string()),
                });
                continue;
            }
            let scn = match fam.build(opts.n) {
                Ok(s) => s,
                Err(e) => {
                    rows.push(gap(Regime::LaneFree, v_init, v_max, a_max, opts.n, e.to_string()));
                    continue;
                }
            };
            let mut prevs: Vec<Option<&OcpSolution>> = [iv.checked_sub(1).map(|j| (ia, j)), ia.checked_sub(1).map(|j| (j, iv))]
                .into_iter()
                .flatten()
                .filter_map(|k| solved.get(&k))
                .map(Some)
                .collect();
            if prevs.is_empty() {
                prevs.push(None);
            }
            let mut best: Option<OcpSolution> = None;
            let mut inherited = false;
            let mut last_status = String::from("not solved");
            for prev in prevs.iter().copied() {
                match solve_robust(&scn, cfg, prev, &opts.policy, deadline) {
                    Ok(out) if out.passed() => {
                        if best.as_ref().is_none_or(|b| out.solution.t_f < b.t_f) {
                            best = Some(out.solution);
                        }
                    }
                    Ok(out) => {
                        last_status = match out.report {
                            Some(_) => "validation_failed".into(),
                            None => out.solution.status.to_string(),
                        }
                    }
                    Err(e) => last_status = e.to_string(),
                }
            }
            // Higher limits only relax the problem, so a neighbour's solution
            // stays feasible; keep it when the local solve ended up slower.
            for prev in prevs.into_iter().flatten() {
                if best.as_ref().is_none_or(|b| prev.t_f < b.t_f) && validate_solution(prev, &scn, opts.policy.dense_factor).passed {
                    best = Some(prev.clone());
                    inherited = true;
                }
            }
            rows.push(match best {
                Some(sol) => {
                    let t = sol.t_f;
                    solved.insert((ia, iv), sol);
                    SweepRow {
                        regime: Regime::LaneFree,
                        v_init,
                        v_max,
                        a_max,
                        n: opts.n,
                        t: Some(t),
                        c: capacity_measure(opts.n, t).ok(),
                        c_norm: None,
                        status: if inherited { "ok_neighbour" } else { "ok" }.into(),
                    }
                }
                None => gap(Regime::LaneFree, v_init, v_max, a_max, opts.n, last_status),
            });
        }
    }
    rows
}

fn signal_point(base: &FamilyParams, sim: &SimConfig, opts: &SweepOptions, regime: Regime, v_init: f64, v_max: f64, a_max: f64) -> SweepRow {
    let fam = lane_free_family(base, opts, v_init, v_max, a_max);
    let mut cfg = sim.clone();
    cfg.controller = match regime {
        Regime::Webster => Controller::Webster,
        _ => Controller::MaxPressure,
    };
    cfg.v_max = v_max;
    cfg.hv.accel = cfg.hv.accel.min(a_max);
    match signalized_capacity(|n| Ok(family_arrivals(&fam, n)), &cfg, &opts.signal_grid) {
        Ok(res) => SweepRow {
            regime,
            v_init,
            v_max,
            a_max,
            n: res.n,
            t: Some(res.t),
            c: Some(res.c),
            c_norm: None,
            status: res.terminal_reason.to_string(),
        },
        Err(e) => gap(regime, v_init, v_max, a_max, 0, e.to_string()),
    }
}

/// Runs every grid point. Lane-free series (one per `v_init`) and signalised
/// points run concurrently; rows come back in grid order (regime, `v_init`,
/// `a_max`, `v_max`). A failed point becomes a gap row.
pub fn run_sweep(
    grid: &SweepGrid,
    base: &FamilyParams,
    cfg: &TranscriptionConfig,
    sim: &SimConfig,
    opts: &SweepOptions,
) -> Result<SweepTable, SweepError> {
    grid.validate(base.limits.v_min)?;
    if opts.n == 0 || opts.signal_grid.is_empty() {
        return Err(SweepError::Grid("batch size and signal grid must be non-empty".into()));
    }
    enum Job {
        LaneFree(usize, f64),
        Signal(Regime, f64, f64, f64),
    }
    // grid order, truncated to the point budget
    let mut order = Vec::new();
    for &regime in &grid.regimes {
        for ii in 0..grid.v_init.len() {
            for ia in 0..grid.a_max.len() {
                for iv in 0..grid.v_max.len() {
                    order.push((regime, ii, ia, iv));
                }
            }
        }
    }
    order.truncate(opts.max_points.unwrap_or(usize::MAX));
    let mut jobs = Vec::new();
    for &(regime, ii, ia, iv) in &order {
        let v_init = grid.v_init[ii];
        if regime == Regime::LaneFree {
            if !jobs.iter().any(|j| matches!(j, Job::LaneFree(i, _) if *i == ii)) {
                jobs.push(Job::LaneFree(ii, v_init));
            }
        } else {
            jobs.push(Job::Signal(regime, v_init, grid.v_max[iv], grid.a_max[ia]));
        }
    }
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|job| match *job {
            Job::LaneFree(ii, v_init) => {
                let keep = |ia: usize, iv: usize| order.iter().any(|&(r, i, a, v)| r == Regime::LaneFree && i == ii && a == ia && v == iv);
                lane_free_series(base, grid, cfg, opts, v_init, &keep)
            }
            Job::Signal(regime, v_init, v_max, a_max) => vec![signal_point(base, sim, opts, regime, v_init, v_max, a_max)],
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let mut table = SweepTable { rows };
    normalize(&mut table);
    Ok(table)
}

/// `C / max C` over the table; only the first maximal row is exactly 1.
fn normalize(table: &mut SweepTable) {
    let Some((arg, max)) = table
        .rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.c.map(|c| (i, c)))
        .fold(None, |best: Option<(usize, f64)>, (i, c)| match best {
            Some((_, b)) if b >= c => best,
            _ => Some((i, c)),
        })
    else {
        return;
    };
    if max <= 0.0 {
        return;
    }
    let below_one = f64::from_bits(1.0f64.to_bits() - 1);
    for (i, r) in table.rows.iter_mut().enumerate() {
        r.c_norm = r.c.map(|c| if i == arg { 1.0 } else { (c / max).min(below_one) });
    }
}

/// Static plot of `T` against `v_max`, one polyline per series.
pub fn write_svg<W: Write>(table: &SweepTable, mut out: W) -> std::io::Result<()> {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 50.0;
    let pts: Vec<(f64, f64)> = table.rows.iter().filter_map(|r| r.t.map(|t| (r.v_max, t))).collect();
    let (x0, x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (y0, y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let span = |a: f64, b: f64| if b > a { b - a } else { 1.0 };
    let sx = |x: f64| PAD + (x - x0) / span(x0, x1) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / span(y0, y1) * (H - 2.0 * PAD);
    let colours = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    if !pts.is_empty() {
        let _ = writeln!(svg, r#"<text x="{}" y="{}">v_max [m/s] {x0} to {x1}</text>"#, W / 2.0 - 60.0, H - 15.0);
        let _ = writeln!(svg, r#"<text x="5" y="{}">T [s] {y0:.2} to {y1:.2}</text>"#, PAD - 20.0);
    }
    for (k, (regime, v_init, a_max)) in table.series_keys().into_iter().enumerate() {
        let line: Vec<String> = table
            .series(regime, v_init, a_max)
            .iter()
            .filter_map(|r| r.t.map(|t| format!("{:.1},{:.1}", sx(r.v_max), sy(t))))
            .collect();
        let colour = colours[k % colours.len()];
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{colour}" points="{}"/>"#, line.join(" "));
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{colour}">{regime} v_init={v_init} a_max={a_max}</text>"#,
            W - PAD - 200.0,
            PAD + 14.0 * k as f64
        );
    }
    svg.push_str("</svg>\n");
    out.write_all(svg.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quartic_is_recovered() {
        let xs: Vec<f64> = (0..8).map(|i| 10.0 + 3.0 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.powi(4)).collect();
        let f = fit_quartic(&xs, &ys).unwrap();
        assert!((f.coefficients[4] - 1.0).abs() < 1e-6);
        assert!(f.residual < 1e-8 * ys.iter().map(|y| y.abs()).fold(0.0, f64::max));
    }

    #[test]
    fn constant_data_fits_the_intercept() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let f = fit_quartic(&xs, &[7.0; 6]).unwrap();
        assert!((f.coefficients[0] - 7.0).abs() < 1e-8);
        for c in &f.coefficients[1..] {
            assert!(c.abs() < 1e-8);
        }
    }

    #[test]
    fn noisy_quartic_residual_tracks_the_noise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let sigma = 0.05;
        let xs: Vec<f64> = (0..200).map(|i| -1.0 + 2.0 * i as f64 / 199.0).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| {
                let noise: f64 = (0..12).map(|_| rng.random::<f64>()).sum::<f64>() - 6.0;
                1.0 - x + 0.5 * x * x * x * x + sigma * noise
            })
            .collect();
        let f = fit_quartic(&xs, &ys).unwrap();
        let rms = f.residual / (xs.len() as f64 - 5.0).sqrt();
        assert!((rms - sigma).abs() < 0.2 * sigma, "rms {rms}");
    }

    #[test]
    fn too_few_points() {
        assert_eq!(
            fit_quartic(&[1.0, 2.0, 3.0, 4.0, 4.0], &[0.0; 5]),
            Err(SweepError::TooFewPoints(4))
        );
    }

    #[test]
    fn plateau_examples() {
        let falling = [(10.0, 9.0), (14.0, 8.0), (18.0, 7.0), (22.0, 6.0)];
        assert_eq!(detect_plateau(&falling, 0.01), None);
        let flat = [(10.0, 9.0), (14.0, 8.0), (18.0, 7.0), (22.0, 6.99), (26.0, 6.985)];
        assert_eq!(detect_plateau(&flat, 0.01), Some(18.0));
        assert_eq!(detect_plateau(&flat[..2], 0.5), None);
    }

    #[test]
    fn grid_validation() {
        let g = SweepGrid::default();
        assert!(g.validate(0.5).is_ok());
        assert_eq!(g.points(), 72);
        let bad = SweepGrid {
            v_max: vec![10.0, 10.0],
            ..SweepGrid::default()
        };
        assert!(bad.validate(0.5).is_err());
        let too_fast = SweepGrid {
            v_init: vec![12.0],
            ..SweepGrid::default()
        };
        assert!(too_fast.validate(0.5).is_err());
    }

    fn row(c: Option<f64>) -> SweepRow {
        SweepRow {
            regime: Regime::Webster,
            v_init: 5.0,
            v_max: 10.0,
            a_max: 2.0,
            n: 1,
            t: c.map(|c| 3600.0 / c),
            c,
            c_norm: None,
            status: "ok".into(),
        }
    }

    #[test]
    fn normalisation_hits_one_once() {
        let mut t = SweepTable {
            rows: vec![row(Some(5.0)), row(Some(8.0)), row(None), row(Some(8.0)), row(Some(2.0))],
        };
        normalize(&mut t);
        let ones = t.rows.iter().filter(|r| r.c_norm == Some(1.0)).count();
        assert_eq!(ones, 1);
        assert_eq!(t.rows[1].c_norm, Some(1.0));
        assert!(t.rows[3].c_norm.unwrap() < 1.0 && t.rows[3].c_norm.unwrap() > 0.999_999);
        assert_eq!(t.rows[2].c_norm, None);
        assert!((t.rows[4].c_norm.unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn signal_only_sweep_has_one_row_per_point() {
        let grid = SweepGrid {
            v_max: vec![14.0],
            a_max: vec![3.0],
            v_init: vec![10.0],
            regimes: vec![Regime::Webster, Regime::MaxPressure],
        };
        let opts = SweepOptions {
            signal_grid: (1..=8).collect(),
            ..SweepOptions::default()
        };
        let t = run_sweep(&grid, &FamilyParams::default(), &TranscriptionConfig::default(), &SimConfig::default(), &opts).unwrap();
        assert_eq!(t.rows.len(), 2);
        let one = SweepOptions {
            max_points: Some(1),
            ..opts.clone()
        };
        let single = run_sweep(&grid, &FamilyParams::default(), &TranscriptionConfig::default(), &SimConfig::default(), &one).unwrap();
        assert_eq!(single.rows.len(), 1);
        assert_eq!(single.rows[0].regime, Regime::Webster);
        assert!(t.rows.iter().all(|r| r.c.is_some()));
        let mut a = Vec::new();
        let mut b = Vec::new();
        t.write_csv(&mut a).unwrap();
        run_sweep(&grid, &FamilyParams::default(), &TranscriptionConfig::default(), &SimConfig::default(), &opts)
            .unwrap()
            .write_csv(&mut b)
            .unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn quartics_are_reproduced(c in proptest::array::uniform5(-3.0..3.0f64), x0 in -5.0..5.0f64) {
            let xs: Vec<f64> = (0..7).map(|i| x0 + 0.7 * i as f64).collect();
            let p = QuarticFit { coefficients: c, residual: 0.0 };
            let ys: Vec<f64> = xs.iter().map(|&x| p.eval(x)).collect();
            let f = fit_quartic(&xs, &ys).unwrap();
            let scale = ys.iter().map(|y| y.abs()).fold(1.0, f64::max);
            prop_assert!(f.residual < 1e-8 * scale);
        }

        #[test]
        fn plateau_is_monotone_in_tolerance(ts in proptest::collection::vec(1.0..10.0f64, 3..10), tol in 0.001..0.5f64, extra in 0.0..0.5f64) {
            let curve: Vec<(f64, f64)> = ts.iter().enumerate().map(|(i, &t)| (10.0 + 4.0 * i as f64, t)).collect();
            let tight = detect_plateau(&curve, tol);
            let loose = detect_plateau(&curve, tol + extra);
            if let Some(t) = tight {
                prop_assert!(loose.is_some_and(|l| l <= t));
            }
        }
    }
}
