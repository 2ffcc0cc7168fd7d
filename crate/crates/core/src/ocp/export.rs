use std::io::Write;

use super::{OcpSolution, ValidationReport};

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

/// One row per vehicle and node; the last node has no input.
pub fn write_trajectory_csv<W: Write>(sol: &OcpSolution, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["vehicle_id", "node", "t", "x", "y", "theta", "V", "r", "beta", "a", "delta"])?;
    let dt = sol.dt();
    for (v, traj) in sol.states.iter().enumerate() {
        for (k, s) in traj.iter().enumerate() {
            let (a, d) = sol
                .inputs
                .get(v)
                .and_then(|u| u.get(k))
                .map_or((String::new(), String::new()), |u| {
                    (format!("{:.6}", u.a), format!("{:.6}", u.delta))
                });
            w.write_record([
                v.to_string(),
                k.to_string(),
                format!("{:.6}", k as f64 * dt),
                format!("{:.6}", s.x),
                format!("{:.6}", s.y),
                format!("{:.6}", s.theta),
                format!("{:.6}", s.v),
                format!("{:.6}", s.r),
                format!("{:.6}", s.beta),
                a,
                d,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(sol: &OcpSolution, report: Option<&ValidationReport>, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["status", "t_f", "worst_pair_margin", "worst_road_margin", "validated"])?;
    w.write_record([
        sol.status.to_string(),
        format!("{:.6}", sol.t_f),
        fmt_opt(report.and_then(|r| r.worst_pair_margin)),
        fmt_opt(report.and_then(|r| r.worst_road_margin)),
        report.map_or("", |r| if r.passed { "true" } else { "false" }).to_string(),
    ])?;
    w.flush()?;
    Ok(())
}
