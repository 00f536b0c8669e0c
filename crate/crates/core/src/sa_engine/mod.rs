//! Robbins-Monro iteration `x(n+1) = x(n) + a(n) (h(x(n)) + M(n+1))`, its
//! algorithmic time scale and the piecewise-linear interpolation of iterates.

mod noise;
mod schedule;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use noise::{NoiseKind, NoiseModel};
pub use schedule::{validate_schedule, ScheduleDiagnostics, StepsizeSchedule};

use crate::error::{Error, Result};
use crate::fields::PiecewiseField;
use crate::io::{fmt_f64, parse_f64};
use crate::trajectory::Trajectory;
use crate::vector::norm;

pub const DEFAULT_BLOWUP_BOUND: f64 = 1e6;

/// Deterministic generator for one run.
pub fn rng_for_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Full record of an SA run. Vectors are stored row-major with stride `dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct IterateTrace {
    dim: usize,
    states: Vec<f64>,
    drifts: Vec<f64>,
    noises: Vec<f64>,
    steps: Vec<f64>,
    times: Vec<f64>,
    seed: u64,
    field_name: String,
}

impl IterateTrace {
    /// Assembles a trace from per-step vectors; `times` is rebuilt from `steps`.
    pub fn from_parts(
        states: Vec<Vec<f64>>,
        drifts: Vec<Vec<f64>>,
        noises: Vec<Vec<f64>>,
        steps: Vec<f64>,
        seed: u64,
        field_name: impl Into<String>,
    ) -> Result<Self> {
        let n = steps.len();
        if states.len() != n + 1 || drifts.len() != n || noises.len() != n {
            return Err(Error::InvalidArgument(format!(
                "inconsistent trace lengths: {} states, {} drifts, {} noises, {} steps",
                states.len(),
                drifts.len(),
                noises.len(),
                n
            )));
        }
        let dim = states[0].len();
        let flat = |rows: Vec<Vec<f64>>| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(rows.len() * dim);
            for r in rows {
                if r.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: r.len(),
                    });
                }
                out.extend(r);
            }
            Ok(out)
        };
        let mut times = Vec::with_capacity(n + 1);
        times.push(0.0);
        for a in &steps {
            times.push(times.last().unwrap() + a);
        }
        Ok(Self {
            dim,
            states: flat(states)?,
            drifts: flat(drifts)?,
            noises: flat(noises)?,
            steps,
            times,
            seed,
            field_name: field_name.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of steps `N`; there are `N + 1` states.
    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn field_name(&self) -> &str {
        &self.field_name
    }

    pub fn state(&self, n: usize) -> &[f64] {
        &self.states[n * self.dim..(n + 1) * self.dim]
    }

    /// Drift `z(n)` applied at step `n`.
    pub fn drift(&self, n: usize) -> &[f64] {
        &self.drifts[n * self.dim..(n + 1) * self.dim]
    }

    /// Noise `M(n+1)` applied at step `n`.
    pub fn noise(&self, n: usize) -> &[f64] {
        &self.noises[n * self.dim..(n + 1) * self.dim]
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.n_steps())
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("times non-empty")
    }

    /// `t(n) = sum_{m<n} a(m)`.
    pub fn algorithmic_time(&self, n: usize) -> Result<f64> {
        self.times.get(n).copied().ok_or(Error::IndexOutOfRange {
            index: n,
            len: self.times.len(),
        })
    }

    /// First step `n` at which the update does not reproduce `x(n+1)` bit for bit.
    pub fn replay_mismatch(&self) -> Option<usize> {
        (0..self.n_steps()).find(|&n| {
            let (x, z, m) = (self.state(n), self.drift(n), self.noise(n));
            let a = self.steps[n];
            let next = self.state(n + 1);
            (0..self.dim).any(|i| (x[i] + a * (z[i] + m[i])).to_bits() != next[i].to_bits())
        })
    }

    /// Interpolated iterate `xbar(t)`.
    pub fn interpolate(&self, t: f64) -> Result<Vec<f64>> {
        let hi = self.final_time();
        if !(t >= 0.0 && t <= hi) {
            return Err(Error::OutOfDomain { t, lo: 0.0, hi });
        }
        // last node with t(k) <= t
        let k = self.times.partition_point(|&s| s <= t) - 1;
        if self.times[k] == t || k == self.n_steps() {
            return Ok(self.state(k).to_vec());
        }
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let s = (t - t0) / (t1 - t0);
        Ok(self
            .state(k)
            .iter()
            .zip(self.state(k + 1))
            .map(|(a, b)| a + s * (b - a))
            .collect())
    }

    /// Smallest `k` with `t(k) >= t(n) + horizon`.
    pub fn window_index(&self, n: usize, horizon: f64) -> Result<usize> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "window length must be > 0, got {horizon}"
            )));
        }
        let start = self.algorithmic_time(n)?;
        let target = start + horizon;
        let k = n + self.times[n..].partition_point(|&s| s < target);
        if k > self.n_steps() {
            return Err(Error::WindowExceedsTrace { start: n, horizon });
        }
        Ok(k)
    }

    /// Interpolated iterates on `[t(n), t(m)]` as a trajectory.
    pub fn window_trajectory(&self, n: usize, m: usize) -> Result<Trajectory> {
        if m > self.n_steps() || n > m {
            return Err(Error::IndexOutOfRange {
                index: m,
                len: self.times.len(),
            });
        }
        // zero stepsizes repeat a node; keep the later one
        let mut times = Vec::with_capacity(m - n + 1);
        let mut points: Vec<Vec<f64>> = Vec::with_capacity(m - n + 1);
        for k in n..=m {
            if times.last() == Some(&self.times[k]) {
                *points.last_mut().unwrap() = self.state(k).to_vec();
            } else {
                times.push(self.times[k]);
                points.push(self.state(k).to_vec());
            }
        }
        Trajectory::from_points(times, points)
    }

    /// CSV with columns `n, t, x_*, z_*, M_*, a`; the final row has empty
    /// drift, noise and step cells.
    pub fn to_csv(&self) -> Vec<u8> {
        let d = self.dim;
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["n".to_string(), "t".to_string()];
        for prefix in ["x", "z", "M"] {
            header.extend((1..=d).map(|i| format!("{prefix}_{i}")));
        }
        header.push("a".into());
        w.write_record(&header).expect("in-memory write");
        let n_steps = self.n_steps();
        for n in 0..=n_steps {
            let mut row = Vec::with_capacity(3 + 3 * d);
            row.push(n.to_string());
            row.push(fmt_f64(self.times[n]));
            row.extend(self.state(n).iter().map(|v| fmt_f64(*v)));
            if n < n_steps {
                row.extend(self.drift(n).iter().map(|v| fmt_f64(*v)));
                row.extend(self.noise(n).iter().map(|v| fmt_f64(*v)));
                row.push(fmt_f64(self.steps[n]));
            } else {
                row.extend(std::iter::repeat_n(String::new(), 2 * d + 1));
            }
            w.write_record(&row).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    /// Parses the output of [`IterateTrace::to_csv`].
    pub fn from_csv(bytes: &[u8], seed: u64, field_name: &str, origin: &Path) -> Result<Self> {
        let bad = |message: String| Error::Csv {
            path: origin.to_path_buf(),
            message,
        };
        let mut r = csv::Reader::from_reader(bytes);
        let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
        if header.len() < 4 || (header.len() - 3) % 3 != 0 {
            return Err(bad(format!(
                "unexpected header with {} columns",
                header.len()
            )));
        }
        let d = (header.len() - 3) / 3;
        let (mut states, mut drifts, mut noises, mut steps) = (vec![], vec![], vec![], vec![]);
        let mut ended = false;
        for (row_no, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            if ended {
                return Err(bad(format!("row {row_no} follows the terminal row")));
            }
            let cell = |i: usize| -> Result<f64> {
                parse_f64(&rec[i])
                    .ok_or_else(|| bad(format!("row {row_no}, column {i}: `{}`", &rec[i])))
            };
            states.push((0..d).map(|i| cell(2 + i)).collect::<Result<Vec<_>>>()?);
            if rec[2 + d].trim().is_empty() {
                ended = true;
                continue;
            }
            drifts.push(
                (0..d)
                    .map(|i| cell(2 + d + i))
                    .collect::<Result<Vec<_>>>()?,
            );
            noises.push(
                (0..d)
                    .map(|i| cell(2 + 2 * d + i))
                    .collect::<Result<Vec<_>>>()?,
            );
            steps.push(cell(2 + 3 * d)?);
        }
        if states.is_empty() {
            return Err(Error::EmptyTrace);
        }
        IterateTrace::from_parts(states, drifts, noises, steps, seed, field_name)
    }
}

/// Knobs for [`run_sa_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaOptions {
    pub blowup_bound: f64,
}

impl Default for SaOptions {
    fn default() -> Self {
        Self {
            blowup_bound: DEFAULT_BLOWUP_BOUND,
        }
    }
}

pub fn run_sa(
    field: &PiecewiseField,
    x0: &[f64],
    schedule: &StepsizeSchedule,
    noise: &NoiseModel,
    n_steps: usize,
    seed: u64,
) -> Result<IterateTrace> {
    run_sa_with(
        field,
        x0,
        schedule,
        noise,
        n_steps,
        seed,
        &SaOptions::default(),
    )
}

/// Runs `n_steps` iterations with drift `z(n) = h(x(n))` and one RNG stream
/// seeded from `seed`.
pub fn run_sa_with(
    field: &PiecewiseField,
    x0: &[f64],
    schedule: &StepsizeSchedule,
    noise: &NoiseModel,
    n_steps: usize,
    seed: u64,
    options: &SaOptions,
) -> Result<IterateTrace> {
    let d = field.dimension();
    if x0.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x0.len(),
        });
    }
    if !crate::vector::is_finite(x0) {
        return Err(Error::InvalidArgument("x0 must be finite".into()));
    }
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be >= 1".into()));
    }
    let mut rng = rng_for_seed(seed);
    let mut states = Vec::with_capacity((n_steps + 1) * d);
    let mut drifts = Vec::with_capacity(n_steps * d);
    let mut noises = Vec::with_capacity(n_steps * d);
    let mut steps = Vec::with_capacity(n_steps);
    let mut times = Vec::with_capacity(n_steps + 1);
    states.extend_from_slice(x0);
    times.push(0.0);

    let mut next = vec![0.0; d];
    for n in 0..n_steps {
        let x = &states[n * d..(n + 1) * d];
        let z = field.evaluate(x)?;
        let m = noise.sample(x, &mut rng);
        let a = schedule.stepsize(n);
        for i in 0..d {
            next[i] = x[i] + a * (z[i] + m[i]);
        }
        let size = norm(&next);
        if !(size < options.blowup_bound) {
            return Err(Error::DivergedIterate {
                step: n + 1,
                norm: size,
                bound: options.blowup_bound,
            });
        }
        states.extend_from_slice(&next);
        drifts.extend(z);
        noises.extend(m);
        steps.push(a);
        times.push(times[n] + a);
    }
    Ok(IterateTrace {
        dim: d,
        states,
        drifts,
        noises,
        steps,
        times,
        seed,
        field_name: field.name().to_string(),
    })
}
