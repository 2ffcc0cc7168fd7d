//! Fixed-time plan from critical flow ratios.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalPlan {
    pub cycle: f64,
    pub green: Vec<f64>,
    pub lost_time: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("flow ratios sum to {0:.3}; the intersection is oversaturated")]
    Oversaturated(f64),
    #[error("invalid plan input: {0}")]
    Invalid(String),
}

/// Cycle `(1.5 L + 5) / (1 - Y)` clamped to `clamps`, effective green split in
/// proportion to the ratios (evenly when all are zero). Every phase gets at
/// least `min_green`; the cycle grows when the minimum greens do not fit.
pub fn webster_plan(ratios: &[f64], lost_time_total: f64, clamps: (f64, f64), min_green: f64) -> Result<SignalPlan, PlanError> {
    let n = ratios.len();
    if n == 0 || ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(PlanError::Invalid("need at least one finite non-negative ratio".into()));
    }
    if !(lost_time_total >= 0.0 && min_green >= 0.0 && clamps.0 > 0.0 && clamps.1 >= clamps.0) {
        return Err(PlanError::Invalid("bad lost time, minimum green or cycle clamps".into()));
    }
    let y: f64 = ratios.iter().sum();
    if y >= 1.0 {
        return Err(PlanError::Oversaturated(y));
    }
    let cycle = ((1.5 * lost_time_total + 5.0) / (1.0 - y)).clamp(clamps.0, clamps.1);
    let cycle = cycle.max(lost_time_total + n as f64 * min_green);
    let effective = cycle - lost_time_total;
    let weights: Vec<f64> = if y > 0.0 { ratios.to_vec() } else { vec![1.0; n] };

    // proportional split, pinning phases that fall below the minimum
    let mut pinned = vec![false; n];
    let mut green = vec![0.0; n];
    loop {
        let free_time = effective - min_green * pinned.iter().filter(|&&p| p).count() as f64;
        let free_weight: f64 = weights.iter().zip(&pinned).filter(|(_, &p)| !p).map(|(w, _)| w).sum();
        let mut changed = false;
        for i in 0..n {
            if pinned[i] {
                green[i] = min_green;
                continue;
            }
            green[i] = if free_weight > 0.0 {
                free_time * weights[i] / free_weight
            } else {
                free_time / pinned.iter().filter(|&&p| !p).count() as f64
            };
            if green[i] < min_green {
                pinned[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(SignalPlan {
        cycle,
        green,
        lost_time: vec![lost_time_total / n as f64; n],
    })
}
