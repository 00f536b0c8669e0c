//! Sup-norm distance between interpolated iterates and inclusion solutions
//! over windows `[t(n), t(m(n))]`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::PiecewiseField;
use crate::inclusion::integrate_tracking_selection;
use crate::io::fmt_f64;
use crate::sa_engine::IterateTrace;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrackingReport {
    pub window_starts: Vec<usize>,
    pub start_times: Vec<f64>,
    pub window_length: f64,
    pub errors: Vec<f64>,
    /// Whether the run's noise had a Lebesgue density.
    pub noise_flag: bool,
}

impl TrackingReport {
    /// CSV with columns `window_index, n_start, t_start, T, error, noise_flag`.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "window_index",
            "n_start",
            "t_start",
            "T",
            "error",
            "noise_flag",
        ])
        .expect("in-memory write");
        for (i, ((n, t), e)) in self
            .window_starts
            .iter()
            .zip(&self.start_times)
            .zip(&self.errors)
            .enumerate()
        {
            w.write_record([
                i.to_string(),
                n.to_string(),
                fmt_f64(*t),
                fmt_f64(self.window_length),
                fmt_f64(*e),
                self.noise_flag.to_string(),
            ])
            .expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    /// Median of the first `k` window errors.
    pub fn head_median(&self, k: usize) -> f64 {
        median(&self.errors[..k.min(self.errors.len())])
    }

    /// Median of the last `k` window errors.
    pub fn tail_median(&self, k: usize) -> f64 {
        let n = self.errors.len();
        median(&self.errors[n - k.min(n)..])
    }
}

pub(crate) fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `max_{t in [t(n), t(m(n))]} |xbar(t) - y(t)|` with `y` the reference-biased
/// inclusion solution started at `x(n)`.
pub fn tracking_error(
    trace: &IterateTrace,
    field: &PiecewiseField,
    n: usize,
    horizon: f64,
    dt: f64,
) -> Result<f64> {
    let m = trace.window_index(n, horizon)?;
    let (t0, t1) = (trace.times()[n], trace.times()[m]);
    let reference = trace.window_trajectory(n, m)?;
    let solution = integrate_tracking_selection(field, &reference, (t0, t1), dt)?;
    solution.sup_distance(&reference, t0, t1)
}

/// Tracking errors on `n_windows` disjoint windows whose starts are spaced
/// evenly over `[0, t(N)]`.
pub fn tracking_profile(
    trace: &IterateTrace,
    field: &PiecewiseField,
    horizon: f64,
    n_windows: usize,
    dt: f64,
    noise_flag: bool,
) -> Result<TrackingReport> {
    if n_windows == 0 {
        return Err(Error::InvalidArgument("n_windows must be >= 1".into()));
    }
    let total = trace.final_time();
    let spacing = total / n_windows as f64;
    if !(spacing >= horizon) {
        return Err(Error::WindowExceedsTrace {
            start: 0,
            horizon: horizon * n_windows as f64,
        });
    }
    let times = trace.times();
    let mut report = TrackingReport {
        window_starts: Vec::with_capacity(n_windows),
        start_times: Vec::with_capacity(n_windows),
        window_length: horizon,
        errors: Vec::with_capacity(n_windows),
        noise_flag,
    };
    for i in 0..n_windows {
        let target = i as f64 * spacing;
        // last node at or before the target start
        let n = times.partition_point(|&t| t <= target).saturating_sub(1);
        report.window_starts.push(n);
        report.start_times.push(times[n]);
        report
            .errors
            .push(tracking_error(trace, field, n, horizon, dt)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sa_engine::{run_sa, NoiseModel, StepsizeSchedule};

    #[test]
    fn constant_trace_at_rest_point_has_zero_error() {
        let f = PiecewiseField::linear(1);
        let tr = run_sa(
            &f,
            &[0.0],
            &StepsizeSchedule::constant(0.01),
            &NoiseModel::zero(),
            300,
            0,
        )
        .unwrap();
        assert_eq!(tracking_error(&tr, &f, 0, 1.0, 1e-3).unwrap(), 0.0);
    }

    #[test]
    fn euler_iterates_stay_within_gronwall_bound() {
        let f = PiecewiseField::linear(1);
        let a = 1e-3;
        let tr = run_sa(
            &f,
            &[1.0],
            &StepsizeSchedule::constant(a),
            &NoiseModel::zero(),
            1500,
            0,
        )
        .unwrap();
        let err = tracking_error(&tr, &f, 0, 1.0, 1e-4).unwrap();
        assert!(err <= std::f64::consts::E * a * 1.0, "{err}");
        assert!(err <= 5e-3);
    }

    #[test]
    fn error_is_monotone_in_window_length() {
        let f = PiecewiseField::example1();
        let tr = run_sa(
            &f,
            &[0.0, 0.5],
            &StepsizeSchedule::power(1.0, 0.75),
            &NoiseModel::gaussian(0.1),
            5000,
            4,
        )
        .unwrap();
        let short = tracking_error(&tr, &f, 100, 0.5, 1e-3).unwrap();
        let long = tracking_error(&tr, &f, 100, 1.5, 1e-3).unwrap();
        assert!(short <= long);
    }

    #[test]
    fn time_shift_invariance_for_constant_steps() {
        let f = PiecewiseField::linear(1);
        let a = StepsizeSchedule::constant(0.01);
        let long = run_sa(&f, &[2.0], &a, &NoiseModel::zero(), 400, 0).unwrap();
        let k = 150;
        let shifted = run_sa(&f, long.state(k), &a, &NoiseModel::zero(), 400 - k, 0).unwrap();
        let e1 = tracking_error(&long, &f, k, 1.0, 1e-3).unwrap();
        let e0 = tracking_error(&shifted, &f, 0, 1.0, 1e-3).unwrap();
        assert!((e1 - e0).abs() <= 1e-12, "{e1} vs {e0}");
    }

    #[test]
    fn constant_drift_windows_are_identical() {
        let f = PiecewiseField::constant(vec![0.5, -1.0]);
        let tr = run_sa(
            &f,
            &[0.0, 0.0],
            &StepsizeSchedule::constant(0.05),
            &NoiseModel::zero(),
            1000,
            0,
        )
        .unwrap();
        let rep = tracking_profile(&tr, &f, 1.0, 5, 1e-2, false).unwrap();
        let first = rep.errors[0];
        assert!(rep.errors.iter().all(|e| (e - first).abs() <= 1e-12));
    }

    #[test]
    fn relay_noise_error_is_within_iterate_band() {
        let f = PiecewiseField::relay();
        let tr = run_sa(
            &f,
            &[0.3],
            &StepsizeSchedule::power(1.0, 0.75),
            &NoiseModel::gaussian(0.1),
            12_000,
            8,
        )
        .unwrap();
        let n = 10_000;
        let m = tr.window_index(n, 1.0).unwrap();
        let band = (n..=m).map(|k| tr.state(k)[0].abs()).fold(0.0, f64::max);
        let err = tracking_error(&tr, &f, n, 1.0, 1e-3).unwrap();
        assert!(err <= 5.0 * band, "{err} vs band {band}");
    }

    #[test]
    fn trapped_iterates_do_not_track_the_filippov_solution() {
        let f = PiecewiseField::spurious_equilibrium();
        let tr = run_sa(
            &f,
            &[0.0],
            &StepsizeSchedule::power(1.0, 0.75),
            &NoiseModel::zero(),
            20_000,
            0,
        )
        .unwrap();
        let rep = tracking_profile(&tr, &f, 1.0, 5, 1e-3, false).unwrap();
        assert!(rep.errors.iter().all(|e| *e >= 0.9), "{:?}", rep.errors);
    }

    #[test]
    fn profile_rejects_short_traces() {
        let f = PiecewiseField::linear(1);
        let tr = run_sa(
            &f,
            &[1.0],
            &StepsizeSchedule::constant(0.1),
            &NoiseModel::zero(),
            50,
            0,
        )
        .unwrap();
        assert!(matches!(
            tracking_profile(&tr, &f, 1.0, 10, 1e-2, false),
            Err(Error::WindowExceedsTrace { .. })
        ));
        assert!(matches!(
            tracking_error(&tr, &f, 45, 1.0, 1e-2),
            Err(Error::WindowExceedsTrace { .. })
        ));
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
