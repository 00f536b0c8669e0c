use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stepsize sequence `a(n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepsizeSchedule {
    /// `a0 / (n + 1)^gamma`
    Power {
        a0: f64,
        gamma: f64,
    },
    Constant {
        a0: f64,
    },
    /// Explicit values; indices past the end repeat the last value.
    Custom {
        values: Vec<f64>,
    },
}

impl StepsizeSchedule {
    pub fn power(a0: f64, gamma: f64) -> Self {
        StepsizeSchedule::Power { a0, gamma }
    }

    pub fn constant(a0: f64) -> Self {
        StepsizeSchedule::Constant { a0 }
    }

    pub fn stepsize(&self, n: usize) -> f64 {
        match self {
            StepsizeSchedule::Power { a0, gamma } => a0 / ((n + 1) as f64).powf(*gamma),
            StepsizeSchedule::Constant { a0 } => *a0,
            StepsizeSchedule::Custom { values } => values[n.min(values.len() - 1)],
        }
    }

    pub(crate) fn check(&self, path: &str) -> Result<()> {
        let bad = |m: &str| Err(Error::config(path, m));
        match self {
            StepsizeSchedule::Power { a0, gamma } => {
                if !(*a0 > 0.0 && a0.is_finite()) {
                    return bad("a0 must be a positive finite number");
                }
                if !gamma.is_finite() {
                    return bad("gamma must be finite");
                }
            }
            StepsizeSchedule::Constant { a0 } => {
                if !(*a0 > 0.0 && a0.is_finite()) {
                    return bad("a0 must be a positive finite number");
                }
            }
            StepsizeSchedule::Custom { values } => {
                if values.is_empty() {
                    return bad("custom schedule needs at least one value");
                }
                if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return bad("custom stepsizes must be finite and non-negative");
                }
            }
        }
        Ok(())
    }
}

/// Partial sums and verdicts on `sum a(n) = inf`, `sum a(n)^2 < inf`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDiagnostics {
    pub horizon: usize,
    pub partial_sum: f64,
    pub partial_square_sum: f64,
    pub sum_diverges: bool,
    pub square_sum_finite: bool,
    /// Verdicts come from a fitted tail exponent rather than p-series rules.
    pub heuristic: bool,
}

impl ScheduleDiagnostics {
    pub fn conditions_hold(&self) -> bool {
        self.sum_diverges && self.square_sum_finite
    }

    /// Human-readable descriptions of violated conditions.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.sum_diverges {
            out.push("sum converges".to_string());
        }
        if !self.square_sum_finite {
            out.push("square-sum diverges".to_string());
        }
        out
    }
}

pub fn validate_schedule(schedule: &StepsizeSchedule, horizon: usize) -> ScheduleDiagnostics {
    let horizon = horizon.max(1);
    let (mut s, mut s2) = (0.0, 0.0);
    for n in 0..horizon {
        let a = schedule.stepsize(n);
        s += a;
        s2 += a * a;
    }
    let (sum_diverges, square_sum_finite, heuristic) = match schedule {
        // p-series: sum (n+1)^-p diverges iff p <= 1
        StepsizeSchedule::Power { gamma, .. } => (*gamma <= 1.0, 2.0 * gamma > 1.0, false),
        StepsizeSchedule::Constant { .. } => (true, false, false),
        StepsizeSchedule::Custom { values } => {
            let len = values.len().min(horizon);
            match tail_exponent(&values[..len]) {
                Some(p) => (p <= 1.0, 2.0 * p > 1.0, true),
                None => (false, true, true),
            }
        }
    };
    ScheduleDiagnostics {
        horizon,
        partial_sum: s,
        partial_square_sum: s2,
        sum_diverges,
        square_sum_finite,
        heuristic,
    }
}

/// Least-squares decay exponent of `log a(n)` against `log(n+1)` over the
/// second half of the positive values. `None` if the tail has no positive value.
fn tail_exponent(values: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = values
        .iter()
        .enumerate()
        .skip(values.len() / 2)
        .filter(|(_, a)| **a > 0.0)
        .map(|(n, a)| (((n + 1) as f64).ln(), a.ln()))
        .collect();
    if pts.is_empty() {
        return None;
    }
    if pts.len() == 1 {
        return Some(0.0);
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Some(0.0);
    }
    Some(-sxy / sxx)
}
