//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every criterion prints its `criterion N: PASS|FAIL` line; the process
//! fails when any criterion does.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use lanefree::capacity::{capacity_measure, lanefree_capacity, signalized_capacity, LaneFreeOptions, Regime, TerminalReason};
use lanefree::dynamics::{derivative_generic, jacobian, rk4_generic, stability_derivatives, Limits, PhysicalParams, VehicleState};
use lanefree::geometry::{
    distance_oracle, dual_distance_value, dual_for_direction, dual_residuals, max_dual_distance, vehicle_polytope, Pose,
    VehicleShape,
};
use lanefree::ocp::{initial_guess, solve, solve_robust, validate_solution, CrossingScenario, OcpStatus, RefinePolicy, TranscriptionConfig, VehicleSpec};
use lanefree::scenario::FamilyParams;
use lanefree::signalized::{family_arrivals, max_discharge_rate, simulate, Controller, SimConfig};
use lanefree::sweep::{detect_plateau, fit_quartic, run_sweep, SweepGrid, SweepOptions, SweepTable};
use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(id: u32, ok: bool, detail: String) {
    println!("criterion {id}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id}: {detail}");
}

fn main() -> ExitCode {
    let criteria: [(u32, fn()); 9] = [
        (1, criterion_1_formula_closure),
        (2, criterion_2_bang_bang),
        (3, criterion_3_three_vehicles_with_left_turn),
        (4, criterion_4_duality),
        (5, criterion_5_dynamics),
        (6, criterion_6_signalised),
        (7, criterion_7_lane_free_versus_signalised),
        (8, criterion_8_sensitivity),
        (9, criterion_9_fit_and_plateau),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (id, run) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        if catch_unwind(AssertUnwindSafe(run)).is_err() {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}

fn criterion_1_formula_closure() {
    let mut worst = 0.0f64;
    for c in [16543.0, 2726.0] {
        let t = 3600.0 * 21.0 / c;
        let back = capacity_measure(21, t).unwrap();
        worst = worst.max((back - c).abs());
    }
    verdict(1, worst <= 0.5, format!("largest round-trip error {worst:.2e} veh/h"));
}

fn criterion_2_bang_bang() {
    let started = Instant::now();
    let phys = PhysicalParams::default();
    let vehicle = VehicleSpec {
        shape: VehicleShape::default(),
        params: stability_derivatives(&phys, 10.0).unwrap(),
        limits: Limits {
            v_max: 25.0,
            a_max: 3.0,
            ..Limits::default()
        },
        start: VehicleState {
            r: 0.0,
            beta: 0.0,
            v: 10.0,
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        },
        goal: Pose::new(100.0, 0.0, 0.0),
        goal_speed: None,
        movement: None,
    };
    let scn = CrossingScenario::new(vec![vehicle], vec![], 0.1, 0.1).unwrap();
    let cfg = TranscriptionConfig::default();
    assert_eq!(cfg.intervals, 40);
    let sol = solve(&scn, &cfg, &initial_guess(&scn, &cfg), None).unwrap();
    let elapsed = started.elapsed();
    let err = (sol.t_f - 5.5).abs() / 5.5;
    let ok = sol.status == OcpStatus::Optimal && err <= 0.03 && elapsed < Duration::from_secs(60);
    verdict(
        2,
        ok,
        format!("status {}, t_f {:.4} s, error {:.2}%, {:.1} s", sol.status, sol.t_f, 100.0 * err, elapsed.as_secs_f64()),
    );
}

fn criterion_3_three_vehicles_with_left_turn() {
    let started = Instant::now();
    let scn = FamilyParams::default().build(3).unwrap();
    let out = solve_robust(&scn, &TranscriptionConfig::default(), None, &RefinePolicy::default(), None).unwrap();
    let report = validate_solution(&out.solution, &scn, 10);
    let elapsed = started.elapsed();
    let pair = report.worst_pair_margin.unwrap_or(f64::NEG_INFINITY);
    let road = report.worst_road_margin.unwrap_or(f64::NEG_INFINITY);
    let ok = out.solution.status == OcpStatus::Optimal && pair >= -1e-3 && road >= -1e-3 && elapsed < Duration::from_secs(600);
    verdict(
        3,
        ok,
        format!(
            "status {}, t_f {:.3} s, pair margin {pair:.2e}, road margin {road:.2e}, {:.1} s",
            out.solution.status,
            out.solution.t_f,
            elapsed.as_secs_f64()
        ),
    );
}

fn criterion_4_duality() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rect = |rng: &mut ChaCha8Rng| {
        let pose = Pose::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-3.2..3.2));
        let shape = VehicleShape::new(rng.random_range(1.0..6.0), rng.random_range(0.5..3.0)).unwrap();
        vehicle_polytope(&pose, &shape)
    };
    let (mut weak_violations, mut separated, mut worst_gap) = (0, 0, 0.0f64);
    for _ in 0..100 {
        let p = rect(&mut rng);
        let q = rect(&mut rng);
        let dist = distance_oracle(&p, &q);
        for _ in 0..10 {
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let s = Vector2::new(phi.cos(), phi.sin()) * rng.random_range(0.0..=1.0);
            let d = dual_for_direction(&p, &q, s);
            let (rp, rq) = dual_residuals(&p, &q, &d).unwrap();
            let value = dual_distance_value(&p, &q, &d).unwrap();
            if rp.norm() > 1e-9 || rq.norm() > 1e-9 || !d.is_admissible(1e-12) || value > dist + 1e-9 {
                weak_violations += 1;
            }
        }
        if dist > 1e-3 {
            separated += 1;
            let (v, _) = max_dual_distance(&p, &q);
            worst_gap = worst_gap.max((v - dist).abs());
        }
    }
    let elapsed = started.elapsed();
    let ok = weak_violations == 0 && worst_gap < 1e-6 && elapsed < Duration::from_secs(60);
    verdict(
        4,
        ok,
        format!(
            "{weak_violations} weak-duality violations, {separated} separated pairs, worst strong-duality gap {worst_gap:.2e}, {:.1} s",
            elapsed.as_secs_f64()
        ),
    );
}

fn criterion_5_dynamics() {
    let p = stability_derivatives(&PhysicalParams::default(), 10.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eps = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.2..0.2),
            rng.random_range(1.0..30.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(-3.2..3.2),
        ];
        let u = [rng.random_range(-3.0..3.0), rng.random_range(-0.6..0.6)];
        let (ja, jb) = jacobian(&x, &u, &p);
        for j in 0..8 {
            let (mut xp, mut up, mut xm, mut um) = (x, u, x, u);
            if j < 6 {
                xp[j] += eps;
                xm[j] -= eps;
            } else {
                up[j - 6] += eps;
                um[j - 6] -= eps;
            }
            let fp = derivative_generic(&xp, &up, &p);
            let fm = derivative_generic(&xm, &um, &p);
            for i in 0..6 {
                let fd = (fp[i] - fm[i]) / (2.0 * eps);
                let an = if j < 6 { ja[(i, j)] } else { jb[(i, j - 6)] };
                worst = worst.max((an - fd).abs() / (1.0 + an.abs()));
            }
        }
    }
    let x: [f64; 6] = [0.2, -0.03, 12.0, 0.0, 0.0, 0.3];
    let u: [f64; 2] = [1.5, 0.2];
    let reference = rk4_generic(&x, &u, 1.0, 4096, &p);
    let err = |n: usize| {
        let y = rk4_generic(&x, &u, 1.0, n, &p);
        (0..6).map(|i| (y[i] - reference[i]).powi(2)).sum::<f64>().sqrt()
    };
    let order = (err(8) / err(16)).log2();
    let ok = worst <= 1e-6 && order >= 3.8;
    verdict(5, ok, format!("worst relative Jacobian error {worst:.2e}, RK4 order {order:.3}"));
}

fn controller_config(controller: Controller) -> SimConfig {
    SimConfig {
        controller,
        ..SimConfig::default()
    }
}

fn criterion_6_signalised() {
    let started = Instant::now();
    let fam = FamilyParams::default();
    let grid: Vec<usize> = (1..=32).collect();
    let mut notes = Vec::new();
    let mut ok = true;
    let mut max_rate = 0.0f64;
    for controller in [Controller::Webster, Controller::MaxPressure] {
        let cfg = controller_config(controller);
        let res = signalized_capacity(|n| Ok(family_arrivals(&fam, n)), &cfg, &grid).unwrap();
        let peak = res.curve.iter().position(|p| p.n == res.n).unwrap();
        let confirmed = peak > 0 && res.terminal_reason == TerminalReason::ThroughputDeclined;
        ok &= confirmed;
        notes.push(format!("{controller} peak N={} C={:.0} {}", res.n, res.c, res.terminal_reason));
        for p in &res.curve {
            let sim = simulate(&cfg, &family_arrivals(&fam, p.n)).unwrap();
            max_rate = max_rate.max(max_discharge_rate(&sim));
        }
    }
    let cap = 3600.0 / 1.9;
    ok &= max_rate <= cap;
    notes.push(format!("max discharge {max_rate:.1} veh/h"));
    let mut wins = 0;
    for seed in 1..=5u64 {
        let seeded = fam.with_random_turns(32, [0.1, 0.8, 0.1], seed);
        let c = |controller| {
            signalized_capacity(|n| Ok(family_arrivals(&seeded, n)), &controller_config(controller), &grid)
                .unwrap()
                .c
        };
        if c(Controller::MaxPressure) >= c(Controller::Webster) {
            wins += 1;
        }
    }
    ok &= wins >= 3;
    notes.push(format!("max-pressure >= webster on {wins}/5 seeds"));
    let elapsed = started.elapsed();
    ok &= elapsed < Duration::from_secs(300);
    notes.push(format!("{:.1} s", elapsed.as_secs_f64()));
    verdict(6, ok, notes.join(", "));
}

fn criterion_7_lane_free_versus_signalised() {
    let started = Instant::now();
    let fam = FamilyParams::default();
    let opts = LaneFreeOptions {
        n_budget: 6,
        ..LaneFreeOptions::default()
    };
    let lf = lanefree_capacity(|n| fam.build(n), &TranscriptionConfig::default(), &opts).unwrap();
    let grid: Vec<usize> = (1..=6).collect();
    let mut ok = true;
    let mut notes = vec![format!("lane-free N={} C={:.0}", lf.result.n, lf.result.c)];
    for controller in [Controller::Webster, Controller::MaxPressure] {
        let res = signalized_capacity(|n| Ok(family_arrivals(&fam, n)), &controller_config(controller), &grid).unwrap();
        let ratio = lf.result.c / res.c;
        ok &= ratio > 2.0;
        notes.push(format!("{controller} C={:.0} ratio {ratio:.2}", res.c));
    }
    let elapsed = started.elapsed();
    ok &= elapsed < Duration::from_secs(1800);
    notes.push(format!("{:.1} s", elapsed.as_secs_f64()));
    verdict(7, ok, notes.join(", "));
}

struct SweepRun {
    table: SweepTable,
    elapsed: Duration,
}

/// The default sweep, shared by the sensitivity and plateau checks.
fn default_sweep() -> &'static SweepRun {
    static RUN: OnceLock<SweepRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let started = Instant::now();
        let table = run_sweep(
            &SweepGrid::default(),
            &FamilyParams::default(),
            &TranscriptionConfig::default(),
            &SimConfig::default(),
            &SweepOptions::default(),
        )
        .unwrap();
        SweepRun {
            table,
            elapsed: started.elapsed(),
        }
    })
}

const SLACK: f64 = 0.005;

fn criterion_8_sensitivity() {
    let run = default_sweep();
    let grid = SweepGrid::default();
    let table = &run.table;
    let mut failures = Vec::new();
    let value = |regime, v_init, a_max, v_max: f64| {
        table
            .series(regime, v_init, a_max)
            .into_iter()
            .find(|r| r.v_max == v_max)
            .and_then(|r| r.t.zip(r.c))
    };
    for &v_init in &grid.v_init {
        for &a_max in &grid.a_max {
            for w in grid.v_max.windows(2) {
                match (value(Regime::LaneFree, v_init, a_max, w[0]), value(Regime::LaneFree, v_init, a_max, w[1])) {
                    (Some((t0, _)), Some((t1, _))) if t1 <= t0 * (1.0 + SLACK) => {}
                    (a, b) => failures.push(format!(
                        "t_f v_init={v_init} a_max={a_max} v_max {}->{}: {:?} -> {:?}",
                        w[0],
                        w[1],
                        a.map(|x| x.0),
                        b.map(|x| x.0)
                    )),
                }
            }
        }
        for &v_max in &grid.v_max {
            for w in grid.a_max.windows(2) {
                match (value(Regime::LaneFree, v_init, w[0], v_max), value(Regime::LaneFree, v_init, w[1], v_max)) {
                    (Some((t0, _)), Some((t1, _))) if t1 <= t0 * (1.0 + SLACK) => {}
                    (a, b) => failures.push(format!(
                        "t_f v_init={v_init} v_max={v_max} a_max {}->{}: {:?} -> {:?}",
                        w[0],
                        w[1],
                        a.map(|x| x.0),
                        b.map(|x| x.0)
                    )),
                }
            }
        }
    }
    for &a_max in &grid.a_max {
        for &v_max in &grid.v_max {
            match (value(Regime::LaneFree, 5.0, a_max, v_max), value(Regime::LaneFree, 10.0, a_max, v_max)) {
                (Some((_, c5)), Some((_, c10))) if c10 <= c5 * (1.0 + SLACK) => {}
                (a, b) => failures.push(format!(
                    "C a_max={a_max} v_max={v_max} v_init 5->10: {:?} -> {:?}",
                    a.map(|x| x.1),
                    b.map(|x| x.1)
                )),
            }
        }
    }
    let mut spread = 0.0f64;
    for regime in [Regime::Webster, Regime::MaxPressure] {
        for &a_max in &grid.a_max {
            let cs: Vec<Option<f64>> = grid
                .v_init
                .iter()
                .flat_map(|&v| table.series(regime, v, a_max))
                .map(|r| r.c)
                .collect();
            if cs.iter().any(Option::is_none) || cs.is_empty() {
                failures.push(format!("{regime} a_max={a_max}: missing points"));
                continue;
            }
            let (lo, hi) = cs.iter().flatten().fold((f64::INFINITY, 0.0f64), |(lo, hi), &c| (lo.min(c), hi.max(c)));
            let rel = (hi - lo) / hi;
            spread = spread.max(rel);
            if rel >= 0.05 {
                failures.push(format!("{regime} a_max={a_max}: capacity varies {:.1}%", 100.0 * rel));
            }
        }
    }
    if run.elapsed >= Duration::from_secs(3600) {
        failures.push(format!("sweep took {:.0} s", run.elapsed.as_secs_f64()));
    }
    let detail = format!(
        "{} rows, signalised spread {:.1}%, sweep {:.0} s{}{}",
        table.rows.len(),
        100.0 * spread,
        run.elapsed.as_secs_f64(),
        if failures.is_empty() { "" } else { "; " },
        failures.join("; ")
    );
    verdict(8, failures.is_empty(), detail);
}

fn criterion_9_fit_and_plateau() {
    let coef = [3.0, -1.5, 0.25, -0.02, 0.0007];
    let xs: Vec<f64> = (0..8).map(|i| 10.0 + 3.0 * i as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|x| coef.iter().rev().fold(0.0, |acc, c| acc * x + c)).collect();
    let fit = fit_quartic(&xs, &ys).unwrap();
    let mut ok = fit.residual < 1e-8;
    let mut notes = vec![format!("quartic residual {:.2e}", fit.residual)];
    let run = default_sweep();
    for &a_max in &SweepGrid::default().a_max {
        let curve: Vec<(f64, f64)> = run
            .table
            .series(Regime::LaneFree, 10.0, a_max)
            .into_iter()
            .filter_map(|r| r.t.map(|t| (r.v_max, t)))
            .collect();
        let onset = detect_plateau(&curve, 0.01);
        ok &= onset.is_some_and(f64::is_finite);
        notes.push(format!("plateau at a_max={a_max}: {onset:?}"));
    }
    verdict(9, ok, notes.join(", "));
}
