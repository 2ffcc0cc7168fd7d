use std::ffi::CString;
use std::ptr;

use lanefree_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { lf_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn capacity_measure_and_errors() {
    let mut c = 0.0;
    assert_eq!(unsafe { lf_capacity_measure(21, 3600.0 * 21.0 / 2726.0, &mut c) }, LfStatus::Ok);
    assert!((c - 2726.0).abs() < 0.5);
    assert_eq!(unsafe { lf_capacity_measure(3, 0.0, &mut c) }, LfStatus::InputError);
    assert!(last_error().contains("positive"));
    assert_eq!(unsafe { lf_capacity_measure(3, 1.0, ptr::null_mut()) }, LfStatus::NullArgument);
    assert!((lf_degree_of_utilization(900.0, 2.0) - 0.5).abs() < 1e-12);
}

#[test]
fn malformed_json_is_an_input_error() {
    let json = CString::new("{\"schema_version\": 1,").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { lf_scenario_from_json(json.as_ptr(), &mut h) }, LfStatus::InputError);
    assert!(h.is_null());
    assert!(last_error().contains("line 1"));
}

#[test]
fn overlapping_vehicles_are_infeasible() {
    let json = CString::new(
        r#"{"schema_version": 1, "defaults": {"queue_spacing": 1.0},
            "vehicles": [{"approach": "south", "turn": "left", "v_init": 10},
                         {"approach": "south", "turn": "through", "v_init": 10}]}"#,
    )
    .unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { lf_scenario_from_json(json.as_ptr(), &mut h) }, LfStatus::Ok);
    let mut sol = ptr::null_mut();
    assert_eq!(unsafe { lf_solve(h, &mut sol) }, LfStatus::Infeasible);
    assert!(sol.is_null());
    assert!(last_error().contains("vehicles 0 and 1"));
    unsafe { lf_scenario_free(h) };
}

#[test]
fn signalised_capacity_through_handles() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { lf_scenario_template(&mut h) }, LfStatus::Ok);
    let mut out = LfCapacity {
        regime: LfRegime::LaneFree,
        n: 0,
        t: 0.0,
        c: 0.0,
        terminal_reason: LfTerminalReason::Budget,
    };
    for regime in [LfRegime::Webster, LfRegime::MaxPressure] {
        assert_eq!(unsafe { lf_capacity(h, regime, &mut out) }, LfStatus::Ok);
        assert_eq!(out.regime, regime);
        assert!(out.n > 0 && out.t > 0.0);
        assert!((out.c - 3600.0 * out.n as f64 / out.t).abs() < 1e-9 * out.c);
    }
    unsafe { lf_scenario_free(h) };
}

#[test]
fn single_vehicle_solve() {
    let json = CString::new(r#"{"schema_version": 1, "vehicles": [{"approach": "west", "turn": "through", "v_init": 10}]}"#).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { lf_scenario_from_json(json.as_ptr(), &mut h) }, LfStatus::Ok);
    let mut sol = ptr::null_mut();
    assert_eq!(unsafe { lf_solve(h, &mut sol) }, LfStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { lf_solution_vehicle_count(sol) }, 1);
    let mut t_f = 0.0;
    assert_eq!(unsafe { lf_solution_final_time(sol, &mut t_f) }, LfStatus::Ok);
    assert!(t_f > 0.0 && t_f < 10.0);
    let mut margin = 0.0;
    assert_eq!(unsafe { lf_solution_pair_margin(sol, &mut margin) }, LfStatus::Ok);
    assert!(margin.is_nan());
    unsafe {
        lf_solution_free(sol);
        lf_scenario_free(h);
        lf_solution_free(ptr::null_mut());
        lf_scenario_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_the_interface() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/lanefree.h")).unwrap();
    for name in ["lf_scenario_from_json", "lf_solve", "lf_capacity", "lf_last_error", "LF_STATUS_INFEASIBLE", "typedef struct LfScenario LfScenario"] {
        assert!(header.contains(name), "{name}");
    }
}
