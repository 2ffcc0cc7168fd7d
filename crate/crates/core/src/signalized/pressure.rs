//! Max-pressure phase selection.

use super::SignalPhase;
use crate::scenario::Movement;

/// Phase with the largest sum over its movements of incoming minus
/// downstream queue; ties go to the lowest phase id. `queues_in` is indexed
/// by [`Movement::index`], `queues_out` by the destination approach index.
pub fn max_pressure_phase(queues_in: &[f64; 12], queues_out: &[f64; 4], phases: &[SignalPhase]) -> usize {
    let pressure = |p: &SignalPhase| -> f64 {
        p.movements
            .iter()
            .map(|m: &Movement| queues_in[m.index()] - queues_out[m.approach.destination(m.turn).index()])
            .sum()
    };
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for p in phases {
        let v = pressure(p);
        if v > best.0 || (v == best.0 && p.id < best.1) {
            best = (v, p.id);
        }
    }
    best.1
}
