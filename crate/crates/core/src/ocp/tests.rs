use super::*;
use crate::dynamics::{stability_derivatives, PhysicalParams};
use crate::geometry::IntersectionGeometry;
use crate::solver::Nlp;

fn vehicle(start: (f64, f64, f64), v0: f64, goal: (f64, f64, f64), limits: Limits) -> VehicleSpec {
    VehicleSpec {
        shape: VehicleShape::default(),
        params: stability_derivatives(&PhysicalParams::default(), v0).unwrap(),
        limits,
        start: VehicleState {
            r: 0.0,
            beta: 0.0,
            v: v0,
            x: start.0,
            y: start.1,
            theta: start.2,
        },
        goal: Pose::new(goal.0, goal.1, goal.2),
        goal_speed: None,
        movement: None,
    }
}

fn straight(v_max: f64) -> CrossingScenario {
    let lim = Limits {
        v_max,
        ..Limits::default()
    };
    CrossingScenario::new(vec![vehicle((0.0, 0.0, 0.0), 10.0, (100.0, 0.0, 0.0), lim)], vec![], 0.1, 0.1).unwrap()
}

fn two_crossing() -> CrossingScenario {
    let roads = IntersectionGeometry::default().road_boundaries().unwrap();
    let lim = Limits::default();
    CrossingScenario::new(
        vec![
            vehicle((2.5, -8.25, FRAC_PI_2), 10.0, (2.5, 7.75, FRAC_PI_2), lim),
            vehicle((-8.25, -2.5, 0.0), 10.0, (7.75, -2.5, 0.0), lim),
        ],
        roads,
        0.1,
        0.1,
    )
    .unwrap()
}

use std::f64::consts::FRAC_PI_2;

#[test]
fn variable_count_single_vehicle() {
    let scn = straight(25.0);
    let cfg = TranscriptionConfig::default();
    let k = cfg.intervals;
    let nlp = Transcription::new(&scn, &cfg).unwrap();
    assert_eq!(nlp.n_vars(), 6 * (k + 1) + 2 * k + 1);
    assert_eq!(nlp.blocks_per_node(), 0);
    assert_eq!(nlp.n_cons(), 6 * k);
}

#[test]
fn block_count_three_vehicles_four_roads() {
    let fam = crate::scenario::FamilyParams::default();
    let scn = fam.build(3).unwrap();
    let nlp = Transcription::new(&scn, &TranscriptionConfig::default()).unwrap();
    let kinds = nlp.block_kinds();
    let pairs = kinds.iter().filter(|k| matches!(k, BlockKind::Pair(..))).count();
    assert_eq!(pairs, 3);
    assert_eq!(kinds.len() - pairs, 12);
    assert_eq!(nlp.duals_per_node(), 15 * 10);
}

#[test]
fn pair_blocks_grow_quadratically() {
    let fam = crate::scenario::FamilyParams::default();
    for n in 1..=6 {
        let scn = fam.build(n).unwrap();
        let nlp = Transcription::new(&scn, &TranscriptionConfig::default()).unwrap();
        let pairs = nlp
            .block_kinds()
            .iter()
            .filter(|k| matches!(k, BlockKind::Pair(..)))
            .count();
        assert_eq!(pairs, n * (n - 1) / 2);
    }
}

#[test]
fn overlapping_start_is_rejected() {
    let lim = Limits::default();
    let err = CrossingScenario::new(
        vec![
            vehicle((0.0, 0.0, 0.0), 10.0, (50.0, 0.0, 0.0), lim),
            vehicle((3.0, 0.0, 0.0), 10.0, (50.0, 10.0, 0.0), lim),
        ],
        vec![],
        0.1,
        0.1,
    )
    .unwrap_err();
    assert!(matches!(err, ScenarioError::Overlap { i: 0, j: 1, when: "initial", .. }));
}

#[test]
fn bad_config_is_rejected() {
    let scn = straight(25.0);
    let cfg = TranscriptionConfig {
        intervals: 5,
        ..TranscriptionConfig::default()
    };
    assert!(matches!(Transcription::new(&scn, &cfg), Err(OcpError::Config(_))));
}

#[test]
fn guess_straight_line() {
    let scn = straight(25.0);
    let g = initial_guess(&scn, &TranscriptionConfig::default());
    assert!((g.t_f - 10.0).abs() < 1e-12);
    assert_eq!(g.states[0][20].x, 50.0);
    assert!(g.inputs[0].iter().all(|u| u.a == 0.0 && u.delta == 0.0));
}

#[test]
fn guess_degenerate_goal_hits_lower_bound() {
    let lim = Limits::default();
    let scn = CrossingScenario::new(vec![vehicle((0.0, 0.0, 0.0), 10.0, (0.0, 0.0, 0.0), lim)], vec![], 0.1, 0.1).unwrap();
    let cfg = TranscriptionConfig::default();
    let g = initial_guess(&scn, &cfg);
    assert_eq!(g.t_f, cfg.t_f_bounds_for(&scn).0);
}

#[test]
fn seeded_duals_satisfy_residuals() {
    let scn = two_crossing();
    let cfg = TranscriptionConfig::default();
    let g = initial_guess(&scn, &cfg);
    for k in 0..=cfg.intervals {
        let s0 = g.states[0][k];
        let s1 = g.states[1][k];
        let p = vehicle_polytope(&Pose::new(s0.x, s0.y, s0.theta), &scn.vehicles[0].shape);
        let q = vehicle_polytope(&Pose::new(s1.x, s1.y, s1.theta), &scn.vehicles[1].shape);
        if distance_oracle(&p, &q) <= 0.0 {
            continue;
        }
        let (rp, rq) = crate::geometry::dual_residuals(&p, &q, &g.pair_duals[k][0]).unwrap();
        assert!(rp.norm() <= 1e-6 && rq.norm() <= 1e-6, "node {k}");
    }
}

fn perturbed_point(nlp: &Transcription, guess: &OcpGuess, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut x = nlp.pack(guess).unwrap();
    for (i, v) in x.iter_mut().enumerate() {
        if i == 0 {
            continue;
        }
        *v += rng.random_range(-0.05..0.05);
    }
    for v in 0..guess.states.len() {
        for k in 0..=nlp.intervals() {
            let i = nlp.state_index(v, k) + 2;
            x[i] = x[i].max(2.0);
        }
    }
    x
}

#[test]
fn jacobian_matches_central_differences() {
    let scn = two_crossing();
    let cfg = TranscriptionConfig {
        intervals: 10,
        ..TranscriptionConfig::default()
    };
    let nlp = Transcription::new(&scn, &cfg).unwrap();
    let x = perturbed_point(&nlp, &initial_guess(&scn, &cfg), 3);
    let (n, m) = (nlp.n_vars(), nlp.n_cons());
    let js = nlp.jacobian_structure();
    let mut jv = vec![0.0; js.len()];
    assert!(nlp.jacobian_values(&x, &mut jv));
    let mut dense = vec![0.0; n * m];
    for (&(r, c), v) in js.iter().zip(&jv) {
        dense[r * n + c] += v;
    }
    let eps = 1e-6;
    let (mut gp, mut gm) = (vec![0.0; m], vec![0.0; m]);
    for c in 0..n {
        let mut xp = x.clone();
        xp[c] += eps;
        let mut xm = x.clone();
        xm[c] -= eps;
        nlp.constraints(&xp, &mut gp);
        nlp.constraints(&xm, &mut gm);
        for r in 0..m {
            let fd = (gp[r] - gm[r]) / (2.0 * eps);
            let an = dense[r * n + c];
            assert!((fd - an).abs() <= 1e-5 * (1.0 + an.abs()), "row {r} col {c}: {an} vs {fd}");
        }
    }
}

#[test]
fn hessian_matches_jacobian_differences() {
    use rand::{Rng, SeedableRng};
    let scn = two_crossing();
    let cfg = TranscriptionConfig {
        intervals: 10,
        ..TranscriptionConfig::default()
    };
    let nlp = Transcription::new(&scn, &cfg).unwrap();
    let x = perturbed_point(&nlp, &initial_guess(&scn, &cfg), 5);
    let (n, m) = (nlp.n_vars(), nlp.n_cons());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let y: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let hs = nlp.hessian_structure();
    let mut hv = vec![0.0; hs.len()];
    assert!(nlp.hessian_values(&x, 1.0, &y, &mut hv));
    let mut dense = vec![0.0; n * n];
    for (&(r, c), v) in hs.iter().zip(&hv) {
        dense[r * n + c] += v;
        if r != c {
            dense[c * n + r] += v;
        }
    }
    // gradient of yᵀg by the analytic Jacobian, differenced
    let js = nlp.jacobian_structure();
    let grad = |x: &[f64]| {
        let mut jv = vec![0.0; js.len()];
        nlp.jacobian_values(x, &mut jv);
        let mut g = vec![0.0; n];
        for (&(r, c), v) in js.iter().zip(&jv) {
            g[c] += y[r] * v;
        }
        g
    };
    let eps = 1e-6;
    for c in 0..n {
        let mut xp = x.clone();
        xp[c] += eps;
        let mut xm = x.clone();
        xm[c] -= eps;
        let (gp, gm) = (grad(&xp), grad(&xm));
        for r in 0..n {
            let fd = (gp[r] - gm[r]) / (2.0 * eps);
            let an = dense[r * n + c];
            assert!((fd - an).abs() <= 1e-5 * (1.0 + an.abs()), "entry ({r},{c}): {an} vs {fd}");
        }
    }
}

#[test]
fn straight_line_bang_bang() {
    let scn = straight(25.0);
    let cfg = TranscriptionConfig::default();
    let sol = solve(&scn, &cfg, &initial_guess(&scn, &cfg), None).unwrap();
    assert_eq!(sol.status, OcpStatus::Optimal);
    assert!((sol.t_f - 5.5).abs() <= 0.03 * 5.5, "t_f {}", sol.t_f);
    let report = validate_solution(&sol, &scn, 10);
    assert!(report.passed, "{:?}", report.messages);
    assert!(report.worst_pair_margin.is_none());
}

#[test]
fn straight_line_speed_capped() {
    let scn = straight(10.0);
    let cfg = TranscriptionConfig::default();
    let sol = solve(&scn, &cfg, &initial_guess(&scn, &cfg), None).unwrap();
    assert_eq!(sol.status, OcpStatus::Optimal);
    assert!((sol.t_f - 10.0).abs() <= 0.01 * 10.0, "t_f {}", sol.t_f);
}

#[test]
fn min_time_oracle() {
    assert!((min_time_1d(100.0, 10.0, 25.0, 3.0) - 5.5).abs() < 1e-12);
    assert!((min_time_1d(100.0, 10.0, 10.0, 3.0) - 10.0).abs() < 1e-12);
    // never reaches the cap: 10 t + 1.5 t² = 20
    let t = min_time_1d(20.0, 10.0, 25.0, 3.0);
    assert!((10.0 * t + 1.5 * t * t - 20.0).abs() < 1e-9);
}

fn solved(scn: &CrossingScenario, cfg: &TranscriptionConfig) -> OcpSolution {
    let sol = solve(scn, cfg, &initial_guess(scn, cfg), None).unwrap();
    assert_eq!(sol.status, OcpStatus::Optimal);
    sol
}

#[test]
fn head_on_swap_in_narrow_road() {
    let upper = Polytope::axis_aligned_box(-40.0, 40.0, 5.0, 8.0).unwrap();
    let lower = Polytope::axis_aligned_box(-40.0, 40.0, -8.0, -5.0).unwrap();
    let lim = Limits::default();
    let scn = CrossingScenario::new(
        vec![
            vehicle((-15.0, 0.3, 0.0), 10.0, (15.0, -0.3, 0.0), lim),
            vehicle((15.0, -0.3, std::f64::consts::PI), 10.0, (-15.0, 0.3, std::f64::consts::PI), lim),
        ],
        vec![upper, lower],
        0.1,
        0.1,
    )
    .unwrap();
    let cfg = TranscriptionConfig::default();
    let out = solve_robust(&scn, &cfg, None, &RefinePolicy::default(), None).unwrap();
    let report = out.report.as_ref().expect("optimal");
    assert!(out.passed(), "{:?}", report.messages);
    assert!(report.worst_pair_margin.unwrap() >= -1e-3);
    assert!(report.worst_road_margin.unwrap() >= -1e-3);
}

#[test]
fn inter_node_overlap_is_detected() {
    // two fast vehicles whose centres meet halfway between two nodes
    let lim = Limits {
        v_max: 30.0,
        ..Limits::default()
    };
    let v0 = 20.0;
    let scn = CrossingScenario::new(
        vec![
            vehicle((-5.0, 0.0, 0.0), v0, (95.0, 0.0, 0.0), lim),
            vehicle((0.0, -5.0, FRAC_PI_2), v0, (0.0, 95.0, FRAC_PI_2), lim),
        ],
        vec![],
        0.1,
        0.1,
    )
    .unwrap();
    let k = 10;
    let t_f = 5.0;
    let dt = t_f / k as f64;
    let inputs = vec![vec![ControlInput::default(); k]; 2];
    let states: Vec<Vec<VehicleState>> = scn
        .vehicles
        .iter()
        .map(|v| {
            let mut traj = vec![v.start];
            for _ in 0..k {
                let next = crate::dynamics::step_rk4(traj.last().unwrap(), &ControlInput::default(), &v.params, dt).unwrap();
                traj.push(next);
            }
            traj
        })
        .collect();
    let (pair_duals, road_duals) = seed_duals(&scn, &states);
    let sol = OcpSolution {
        status: OcpStatus::Optimal,
        t_f,
        intervals: k,
        states,
        inputs,
        pair_duals,
        road_duals,
        objective: t_f,
        iterations: 0,
        restorations: 0,
        constraint_violation: 0.0,
        solve_seconds: 0.0,
    };
    let report = validate_solution(&sol, &scn, 10);
    assert!(report.node_pair_margin.unwrap() > 0.5, "{report:?}");
    // the oracle reports zero for overlapping footprints
    assert!(report.worst_pair_margin.unwrap() <= -scn.d_min + 1e-9, "{report:?}");
    assert!(!report.passed);
}

#[test]
fn crossing_time_is_monotone_in_limits() {
    let base = two_crossing();
    let with = |f: &dyn Fn(&mut Limits)| {
        let mut scn = base.clone();
        for v in &mut scn.vehicles {
            f(&mut v.limits);
        }
        solved(&scn, &TranscriptionConfig::default()).t_f
    };
    let slow = with(&|l| l.a_max = 2.0);
    let fast = with(&|l| l.a_max = 4.0);
    assert!(fast <= slow * 1.005, "a_max: {fast} vs {slow}");
    let capped = with(&|l| l.v_max = 12.0);
    let free = with(&|l| l.v_max = 25.0);
    assert!(free <= capped * 1.005, "v_max: {free} vs {capped}");
}

#[test]
fn refining_the_grid_keeps_crossing_time() {
    let scn = two_crossing();
    let coarse = solved(&scn, &TranscriptionConfig::default());
    let fine = solved(&scn, &TranscriptionConfig::default().with_intervals(80));
    assert!((coarse.t_f - fine.t_f).abs() <= 0.02 * fine.t_f, "{} vs {}", coarse.t_f, fine.t_f);
}

#[test]
fn node_certificates_bracket_the_oracle() {
    let scn = two_crossing();
    let cfg = TranscriptionConfig::default();
    let sol = solved(&scn, &cfg);
    let report = validate_solution(&sol, &scn, 10);
    assert!(report.passed, "{:?}", report.messages);
    assert!(report.terminal_position_error < 1e-3);
    let tol = cfg.feasibility_tol;
    let poly = |v: usize, k: usize| {
        let s = sol.states[v][k];
        vehicle_polytope(&Pose::new(s.x, s.y, s.theta), &scn.vehicles[v].shape)
    };
    let nr = scn.roads.len();
    for k in 0..=cfg.intervals {
        for (b, &(i, j)) in scn.pairs().iter().enumerate() {
            let (p, q) = (poly(i, k), poly(j, k));
            let dual = crate::geometry::dual_distance_value(&p, &q, &sol.pair_duals[k][b]).unwrap();
            assert!(dual >= scn.d_min - tol, "node {k}: dual {dual}");
            assert!(dual <= distance_oracle(&p, &q) + 1e-6, "node {k}: weak duality");
        }
        for v in 0..scn.n_vehicles() {
            for (r, road) in scn.roads.iter().enumerate() {
                let p = poly(v, k);
                let dual = crate::geometry::dual_distance_value(&p, road, &sol.road_duals[k][v * nr + r]).unwrap();
                assert!(dual >= scn.d_rmin - tol, "node {k} road {r}: dual {dual}");
                assert!(dual <= distance_oracle(&p, road) + 1e-6);
            }
        }
    }
}
