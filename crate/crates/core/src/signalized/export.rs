//! CSV output of simulation results.

use std::io::Write;

use super::SimResult;

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.3}"))
}

/// One row per vehicle: `vehicle_id, approach, turn, spawn_t, enter_t, exit_t`.
pub fn write_vehicle_csv<W: Write>(res: &SimResult, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["vehicle_id", "approach", "turn", "spawn_t", "enter_t", "exit_t"])?;
    for v in &res.vehicles {
        w.write_record([
            v.id.to_string(),
            v.movement.approach.to_string(),
            v.movement.turn.to_string(),
            format!("{:.3}", v.spawn_t),
            opt(v.enter_t),
            opt(v.exit_t),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per sample and movement: `t, movement, queue_len`.
pub fn write_queue_csv<W: Write>(res: &SimResult, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "movement", "queue_len"])?;
    for q in &res.queue_trace {
        w.write_record([format!("{:.1}", q.t), q.movement.to_string(), q.len.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
