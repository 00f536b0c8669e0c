use std::fmt;

use crate::error::{Error, Result};
use crate::fields::SignPattern;

/// Dynamics active on the segment that starts at a node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Mode {
    Region(SignPattern),
    /// Sliding on the zero set of guard `k`.
    Sliding(usize),
    Corner,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Region(p) => write!(f, "{p}"),
            Mode::Sliding(k) => write!(f, "slide:{k}"),
            Mode::Corner => write!(f, "corner"),
        }
    }
}

/// Piecewise-linear path in R^d.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    points: Vec<Vec<f64>>,
    modes: Vec<Mode>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, points: Vec<Vec<f64>>, modes: Vec<Mode>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::EmptyTrace);
        }
        if times.len() != points.len() || times.len() != modes.len() {
            return Err(Error::InvalidArgument(format!(
                "trajectory has {} times, {} points, {} modes",
                times.len(),
                points.len(),
                modes.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "trajectory times must be strictly increasing".into(),
            ));
        }
        let d = points[0].len();
        if let Some(p) = points.iter().find(|p| p.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: p.len(),
            });
        }
        Ok(Self {
            times,
            points,
            modes,
        })
    }

    /// Path without mode information (every node tagged with the empty pattern).
    pub fn from_points(times: Vec<f64>, points: Vec<Vec<f64>>) -> Result<Self> {
        let modes = vec![Mode::Region(SignPattern::default()); times.len()];
        Self::new(times, points, modes)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }

    pub fn last_point(&self) -> &[f64] {
        self.points.last().expect("non-empty")
    }

    /// Linear interpolation; exact at the nodes.
    pub fn value_at(&self, t: f64) -> Result<Vec<f64>> {
        let (lo, hi) = (self.start_time(), self.end_time());
        if !(t >= lo && t <= hi) {
            return Err(Error::OutOfDomain { t, lo, hi });
        }
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            return Ok(self.points[0].clone());
        }
        let i = k - 1;
        if self.times[i] == t || i + 1 == self.times.len() {
            return Ok(self.points[i].clone());
        }
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let s = (t - t0) / (t1 - t0);
        Ok(self.points[i]
            .iter()
            .zip(&self.points[i + 1])
            .map(|(a, b)| a + s * (b - a))
            .collect())
    }

    /// Slope of segment `i` (between nodes `i` and `i+1`).
    pub fn segment_slope(&self, i: usize) -> Vec<f64> {
        let h = self.times[i + 1] - self.times[i];
        self.points[i]
            .iter()
            .zip(&self.points[i + 1])
            .map(|(a, b)| (b - a) / h)
            .collect()
    }

    /// Maximum pointwise distance to `other` over the union of both grids
    /// restricted to `[t0, t1]`.
    pub fn sup_distance(&self, other: &Trajectory, t0: f64, t1: f64) -> Result<f64> {
        let mut grid: Vec<f64> = self
            .times
            .iter()
            .chain(other.times.iter())
            .copied()
            .filter(|t| *t >= t0 && *t <= t1)
            .collect();
        grid.push(t0);
        grid.push(t1);
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let mut worst = 0.0_f64;
        for t in grid {
            let a = self.value_at(t)?;
            let b = other.value_at(t)?;
            worst = worst.max(crate::vector::distance(&a, &b));
        }
        Ok(worst)
    }

    /// CSV with columns `t, x_1..x_d, mode`.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("x_{i}")));
        header.push("mode".into());
        w.write_record(&header).expect("in-memory write");
        for ((t, p), m) in self.times.iter().zip(&self.points).zip(&self.modes) {
            let mut row = vec![crate::io::fmt_f64(*t)];
            row.extend(p.iter().map(|v| crate::io::fmt_f64(*v)));
            row.push(m.to_string());
            w.write_record(&row).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}
