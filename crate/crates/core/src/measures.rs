//! Occupation measures on state x velocity space and their diagnostics.
//!
//! The measure path puts a unit atom at `(x(n), z(n))` for
//! `t(n) <= t < t(n+1)`; its time average up to `t(n)` therefore has atoms
//! `(x(k), z(k))` with weights `a(k) / t(n)`. Limit points of the averages
//! annihilate `<grad f, z>` for smooth test functions `f` and are supported
//! on the graph of the Filippov map.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{PiecewiseField, DEFAULT_RADIUS_TOL};
use crate::io::fmt_f64;
use crate::sa_engine::IterateTrace;
use crate::tracking::median;
use crate::vector::{distance, dot, norm};

/// Atoms closer than this in every coordinate are merged.
pub const MERGE_TOL: f64 = 1e-15;

/// Axis-aligned box.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoxBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxBounds {
    /// Bounding box of `points`, widened by 10% of its extent on each side
    /// (0.1 in degenerate directions).
    fn padded<'a>(points: impl Iterator<Item = &'a [f64]>, d: usize) -> Self {
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for p in points {
            for j in 0..d {
                lo[j] = lo[j].min(p[j]);
                hi[j] = hi[j].max(p[j]);
            }
        }
        for j in 0..d {
            let width = hi[j] - lo[j];
            let pad = if width > 0.0 { 0.1 * width } else { 0.1 };
            lo[j] -= pad;
            hi[j] += pad;
        }
        BoxBounds { lo, hi }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    /// Half the diagonal.
    pub fn radius(&self) -> f64 {
        0.5 * distance(&self.lo, &self.hi)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub weight: f64,
}

/// Probability measure with finitely many atoms on `B x D`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    atoms: Vec<Atom>,
    box_b: BoxBounds,
    box_d: BoxBounds,
}

impl EmpiricalMeasure {
    /// Builds a measure from positive weights summing to one; duplicate atoms
    /// are merged.
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        let first = atoms.first().ok_or(Error::EmptyTrace)?;
        let d = first.x.len();
        if atoms.iter().any(|a| a.x.len() != d || a.z.len() != d) {
            return Err(Error::InvalidArgument("atoms of mixed dimension".into()));
        }
        if atoms.iter().any(|a| !(a.weight > 0.0)) {
            return Err(Error::InvalidArgument(
                "atom weights must be positive".into(),
            ));
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "weights sum to {total}, not 1"
            )));
        }
        let atoms = merge_duplicates(atoms);
        let box_b = BoxBounds::padded(atoms.iter().map(|a| a.x.as_slice()), d);
        let box_d = BoxBounds::padded(atoms.iter().map(|a| a.z.as_slice()), d);
        Ok(Self {
            atoms,
            box_b,
            box_d,
        })
    }

    /// Convex combination `sum_i c_i mu_i`.
    pub fn mixture(parts: &[(f64, &EmpiricalMeasure)]) -> Result<Self> {
        let atoms = parts
            .iter()
            .filter(|(c, _)| *c > 0.0)
            .flat_map(|(c, m)| {
                m.atoms.iter().map(move |a| Atom {
                    weight: c * a.weight,
                    ..a.clone()
                })
            })
            .collect();
        Self::new(atoms)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn box_b(&self) -> &BoxBounds {
        &self.box_b
    }

    pub fn box_d(&self) -> &BoxBounds {
        &self.box_d
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].x.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }
}

fn merge_duplicates(mut atoms: Vec<Atom>) -> Vec<Atom> {
    atoms.sort_by(|a, b| {
        a.x.iter()
            .chain(&a.z)
            .zip(b.x.iter().chain(&b.z))
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out: Vec<Atom> = Vec::with_capacity(atoms.len());
    for a in atoms {
        if let Some(last) = out.last_mut() {
            let same = last
                .x
                .iter()
                .chain(&last.z)
                .zip(a.x.iter().chain(&a.z))
                .all(|(u, v)| (u - v).abs() <= MERGE_TOL);
            if same {
                last.weight += a.weight;
                continue;
            }
        }
        out.push(a);
    }
    out
}

/// Time average of the occupation measure path over `[0, t(up_to_n)]`.
pub fn averaged_measure(trace: &IterateTrace, up_to_n: usize) -> Result<EmpiricalMeasure> {
    if up_to_n == 0 || trace.n_steps() == 0 {
        return Err(Error::EmptyTrace);
    }
    if up_to_n > trace.n_steps() {
        return Err(Error::IndexOutOfRange {
            index: up_to_n,
            len: trace.n_steps() + 1,
        });
    }
    let horizon = trace.times()[up_to_n];
    if !(horizon > 0.0) {
        return Err(Error::EmptyTrace);
    }
    let atoms = (0..up_to_n)
        .filter(|&k| trace.steps()[k] > 0.0)
        .map(|k| Atom {
            x: trace.state(k).to_vec(),
            z: trace.drift(k).to_vec(),
            weight: trace.steps()[k] / horizon,
        })
        .collect();
    EmpiricalMeasure::new(atoms)
}

/// Sup-norm bounds of a test function and its first and second derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MemberBounds {
    pub value: f64,
    /// Bound on the Euclidean norm of the gradient.
    pub gradient: f64,
    /// Bound on every second partial derivative.
    pub hessian: f64,
}

/// Gaussian-weighted monomials `x^beta exp(-|x|^2 / (2 sigma^2))`, `|beta| <= 2`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestFunctionFamily {
    dim: usize,
    sigma: f64,
    members: Vec<Vec<u32>>,
}

// sup over u of |d^k/du^k (u^b exp(-u^2/2))| for b, k in {0, 1, 2}
fn unit_sup(b: u32, k: u32) -> f64 {
    let e = |u2: f64| (-0.5 * u2).exp();
    match (b, k) {
        (0, 0) => 1.0,
        (0, 1) => e(1.0),
        (0, 2) => 1.0,
        (1, 0) => e(1.0),
        (1, 1) => 1.0,
        (1, 2) => {
            let u2 = 3.0 - 6.0_f64.sqrt();
            let u = u2.sqrt();
            (u * u2 - 3.0 * u).abs() * e(u2)
        }
        (2, 0) => 2.0 * e(2.0),
        (2, 1) => {
            let u2 = 0.5 * (5.0 - 17.0_f64.sqrt());
            let u = u2.sqrt();
            (2.0 * u - u * u2).abs() * e(u2)
        }
        (2, 2) => 2.0,
        _ => unreachable!("degree at most 2"),
    }
}

impl TestFunctionFamily {
    pub fn new(dim: usize, sigma: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be > 0, got {sigma}"
            )));
        }
        let mut members = vec![vec![0; dim]];
        for j in 0..dim {
            let mut b = vec![0; dim];
            b[j] = 1;
            members.push(b);
        }
        for j in 0..dim {
            for k in j..dim {
                let mut b = vec![0; dim];
                b[j] += 1;
                b[k] += 1;
                members.push(b);
            }
        }
        Ok(Self {
            dim,
            sigma,
            members,
        })
    }

    /// Family with `sigma` equal to the radius of `bounds`.
    pub fn for_box(bounds: &BoxBounds) -> Result<Self> {
        Self::new(bounds.lo.len(), bounds.radius().max(1e-6))
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn multi_index(&self, i: usize) -> &[u32] {
        &self.members[i]
    }

    fn factor(&self, b: u32, t: f64) -> (f64, f64) {
        let s2 = self.sigma * self.sigma;
        let g = (-0.5 * t * t / s2).exp();
        let tb = t.powi(b as i32);
        let value = tb * g;
        let deriv = if b == 0 {
            -t / s2 * g
        } else {
            (b as f64 * t.powi(b as i32 - 1) - tb * t / s2) * g
        };
        (value, deriv)
    }

    pub fn value(&self, i: usize, x: &[f64]) -> f64 {
        self.members[i]
            .iter()
            .zip(x)
            .map(|(b, t)| self.factor(*b, *t).0)
            .product()
    }

    pub fn gradient(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let parts: Vec<(f64, f64)> = self.members[i]
            .iter()
            .zip(x)
            .map(|(b, t)| self.factor(*b, *t))
            .collect();
        (0..self.dim)
            .map(|j| {
                parts
                    .iter()
                    .enumerate()
                    .map(|(k, (v, dv))| if k == j { *dv } else { *v })
                    .product()
            })
            .collect()
    }

    pub fn bounds(&self, i: usize) -> MemberBounds {
        let beta = &self.members[i];
        let s = self.sigma;
        // sup |d^k/dt^k (t^b exp(-t^2/(2 s^2)))| = s^(b-k) * unit_sup(b, k)
        let sup = |b: u32, k: u32| s.powi(b as i32 - k as i32) * unit_sup(b, k);
        let value: f64 = beta.iter().map(|b| sup(*b, 0)).product();
        let partial = |j: usize| -> f64 {
            beta.iter()
                .enumerate()
                .map(|(k, b)| sup(*b, (k == j) as u32))
                .product()
        };
        let gradient = (0..self.dim)
            .map(|j| partial(j).powi(2))
            .sum::<f64>()
            .sqrt();
        let mut hessian = 0.0_f64;
        for j in 0..self.dim {
            for l in 0..self.dim {
                let h: f64 = beta
                    .iter()
                    .enumerate()
                    .map(|(k, b)| {
                        let order = (k == j) as u32 + (k == l) as u32;
                        sup(*b, order)
                    })
                    .product();
                hessian = hessian.max(h);
            }
        }
        MemberBounds {
            value,
            gradient,
            hessian,
        }
    }
}

/// `sum_atoms w <grad f_i(x), z>` for every member.
pub fn stationarity_residual(measure: &EmpiricalMeasure, family: &TestFunctionFamily) -> Vec<f64> {
    (0..family.len())
        .map(|i| {
            measure
                .atoms()
                .iter()
                .map(|a| a.weight * dot(&family.gradient(i, &a.x), &a.z))
                .sum()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SupportFractions {
    pub eps: f64,
    pub filippov: f64,
    pub krasovskii: f64,
}

/// Weight of atoms with `z` within `eps` of `F_h(x)` (resp. `K_h(x)`).
pub fn graph_support_fraction(
    measure: &EmpiricalMeasure,
    field: &PiecewiseField,
    eps: f64,
) -> Result<SupportFractions> {
    Ok(graph_support_profile(measure, field, &[eps])?[0])
}

/// [`graph_support_fraction`] for several thresholds, computing each hull
/// distance once.
pub fn graph_support_profile(
    measure: &EmpiricalMeasure,
    field: &PiecewiseField,
    eps: &[f64],
) -> Result<Vec<SupportFractions>> {
    if let Some(e) = eps.iter().find(|e| !(**e > 0.0)) {
        return Err(Error::InvalidArgument(format!("eps must be > 0, got {e}")));
    }
    let distances = measure
        .atoms()
        .par_iter()
        .map(|a| {
            let f = field
                .filippov_map(&a.x, DEFAULT_RADIUS_TOL)?
                .distance(&a.z)?;
            let k = field
                .krasovskii_map(&a.x, DEFAULT_RADIUS_TOL)?
                .distance(&a.z)?;
            Ok((f, k))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(eps
        .iter()
        .map(|&e| {
            let (mut fil, mut kra) = (0.0, 0.0);
            for (a, (df, dk)) in measure.atoms().iter().zip(&distances) {
                if *df <= e {
                    fil += a.weight;
                }
                if *dk <= e {
                    kra += a.weight;
                }
            }
            SupportFractions {
                eps: e,
                filippov: fil,
                krasovskii: kra,
            }
        })
        .collect())
}

/// Support CSV with columns `eps, filippov_fraction, krasovskii_fraction`.
pub fn support_csv(rows: &[SupportFractions]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["eps", "filippov_fraction", "krasovskii_fraction"])
        .expect("in-memory write");
    for r in rows {
        w.write_record([fmt_f64(r.eps), fmt_f64(r.filippov), fmt_f64(r.krasovskii)])
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// How the velocity mass of atoms near a state splits among target velocities.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VelocitySplit {
    /// Weight of atoms with `|x - center| <= radius`.
    pub local_mass: f64,
    /// Fraction of the local mass with `z` within `spread` of each target.
    pub target_fractions: Vec<f64>,
    /// Mean velocity of the local atoms.
    pub barycenter: Vec<f64>,
}

pub fn velocity_split(
    measure: &EmpiricalMeasure,
    center: &[f64],
    radius: f64,
    targets: &[Vec<f64>],
    spread: f64,
) -> VelocitySplit {
    let d = measure.dim();
    let mut local = 0.0;
    let mut near = vec![0.0; targets.len()];
    let mut bary = vec![0.0; d];
    for a in measure.atoms() {
        if distance(&a.x, center) > radius {
            continue;
        }
        local += a.weight;
        for (j, z) in a.z.iter().enumerate() {
            bary[j] += a.weight * z;
        }
        for (slot, target) in near.iter_mut().zip(targets) {
            if distance(&a.z, target) <= spread {
                *slot += a.weight;
            }
        }
    }
    let scale = if local > 0.0 { 1.0 / local } else { f64::NAN };
    VelocitySplit {
        local_mass: local,
        target_fractions: near.into_iter().map(|v| v * scale).collect(),
        barycenter: bary.into_iter().map(|v| v * scale).collect(),
    }
}

/// Partial sums `xi_{i,j}(n) = sum_{m<n} a(m) d_j f_i(x(m)) M_j(m+1)` and the
/// quadratic-variation proxy `sum_{m<n} a(m)^2 |grad f_i(x(m))|^2 |M(m+1)|^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct MartingaleDiagnostic {
    dim: usize,
    /// Indexed by `member * dim + coordinate`; each has `N + 1` entries.
    paths: Vec<Vec<f64>>,
    /// Per member, cumulative; `N + 1` entries.
    quadratic_variation: Vec<Vec<f64>>,
}

impl MartingaleDiagnostic {
    pub fn path(&self, member: usize, coordinate: usize) -> &[f64] {
        &self.paths[member * self.dim + coordinate]
    }

    pub fn quadratic_variation(&self, member: usize) -> &[f64] {
        &self.quadratic_variation[member]
    }

    pub fn n_members(&self) -> usize {
        self.quadratic_variation.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `max_{n >= n0} |xi(n) - xi(n0)|`.
    pub fn tail_oscillation(&self, member: usize, coordinate: usize, n0: usize) -> f64 {
        let p = self.path(member, coordinate);
        let base = p[n0];
        p[n0..].iter().map(|v| (v - base).abs()).fold(0.0, f64::max)
    }

    /// Proxy increment from `n0` to the end.
    pub fn tail_quadratic_variation(&self, member: usize, n0: usize) -> f64 {
        let q = &self.quadratic_variation[member];
        q[q.len() - 1] - q[n0]
    }

    /// Whether every member and coordinate satisfies
    /// `osc(n0) <= factor * sqrt(tail QV)`.
    pub fn maximal_inequality_holds(&self, n0: usize, factor: f64) -> bool {
        (0..self.n_members()).all(|i| {
            let bound = factor * self.tail_quadratic_variation(i, n0).sqrt();
            (0..self.dim).all(|j| self.tail_oscillation(i, j, n0) <= bound)
        })
    }

    /// Summed proxy over all members.
    pub fn total_quadratic_variation(&self) -> Vec<f64> {
        let n = self.quadratic_variation[0].len();
        (0..n)
            .map(|k| self.quadratic_variation.iter().map(|q| q[k]).sum())
            .collect()
    }
}

pub fn martingale_diagnostic(
    trace: &IterateTrace,
    family: &TestFunctionFamily,
) -> MartingaleDiagnostic {
    let d = trace.dim();
    let n = trace.n_steps();
    let mut paths = vec![Vec::with_capacity(n + 1); family.len() * d];
    let mut qv = vec![Vec::with_capacity(n + 1); family.len()];
    paths.iter_mut().for_each(|p| p.push(0.0));
    qv.iter_mut().for_each(|q| q.push(0.0));
    for m in 0..n {
        let x = trace.state(m);
        let noise = trace.noise(m);
        let a = trace.steps()[m];
        let noise_sq = dot(noise, noise);
        for i in 0..family.len() {
            let grad = family.gradient(i, x);
            for j in 0..d {
                let p = &mut paths[i * d + j];
                let last = *p.last().expect("seeded");
                p.push(last + a * grad[j] * noise[j]);
            }
            let q = &mut qv[i];
            let last = *q.last().expect("seeded");
            q.push(last + a * a * norm(&grad).powi(2) * noise_sq);
        }
    }
    MartingaleDiagnostic {
        dim: d,
        paths,
        quadratic_variation: qv,
    }
}

/// Coefficient of determination of the least-squares line through `(k, values[k])`.
pub fn linear_fit_r_squared(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = values.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (k, y) in values.iter().enumerate() {
        let dx = k as f64 - mx;
        let dy = y - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if syy == 0.0 {
        return 1.0;
    }
    sxy * sxy / (sxx * syy)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayRow {
    pub checkpoint: usize,
    /// Median of `t(n)` over traces.
    pub time: f64,
    /// Median over traces of `max_i |residual_i|`.
    pub median_max_residual: f64,
    /// `C / t(n)` with `C` fitted at the first checkpoint.
    pub envelope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayTable {
    pub rows: Vec<DecayRow>,
    /// `per_trace[trace][checkpoint][member]` residuals.
    pub per_trace: Vec<Vec<Vec<f64>>>,
}

impl DecayTable {
    /// Residuals CSV for one trace: `checkpoint_n, t_n, member_index, residual, envelope`.
    pub fn residuals_csv(&self, trace_index: usize, traces: &[IterateTrace]) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "checkpoint_n",
            "t_n",
            "member_index",
            "residual",
            "envelope",
        ])
        .expect("in-memory write");
        let tr = &traces[trace_index];
        for (row, residuals) in self.rows.iter().zip(&self.per_trace[trace_index]) {
            let t_n = tr.times()[row.checkpoint];
            for (i, r) in residuals.iter().enumerate() {
                w.write_record([
                    row.checkpoint.to_string(),
                    fmt_f64(t_n),
                    i.to_string(),
                    fmt_f64(*r),
                    fmt_f64(row.envelope),
                ])
                .expect("in-memory write");
            }
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// Stationarity residuals of the averaged measures at each checkpoint.
pub fn residual_decay_study(
    traces: &[IterateTrace],
    family: &TestFunctionFamily,
    checkpoints: &[usize],
) -> Result<DecayTable> {
    if traces.is_empty() || checkpoints.is_empty() {
        return Err(Error::EmptyTrace);
    }
    if checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "checkpoints must be increasing".into(),
        ));
    }
    let per_trace = traces
        .iter()
        .map(|tr| {
            checkpoints
                .iter()
                .map(|&n| Ok(stationarity_residual(&averaged_measure(tr, n)?, family)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(checkpoints.len());
    for (c, &n) in checkpoints.iter().enumerate() {
        let maxes: Vec<f64> = per_trace
            .iter()
            .map(|r| r[c].iter().map(|v| v.abs()).fold(0.0, f64::max))
            .collect();
        let times: Vec<f64> = traces.iter().map(|tr| tr.times()[n]).collect();
        rows.push(DecayRow {
            checkpoint: n,
            time: median(&times),
            median_max_residual: median(&maxes),
            envelope: 0.0,
        });
    }
    let c = rows[0].median_max_residual * rows[0].time;
    for r in &mut rows {
        r.envelope = c / r.time;
    }
    Ok(DecayTable { rows, per_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sa_engine::{run_sa, NoiseModel, StepsizeSchedule};

    fn trace_with_steps(
        states: Vec<Vec<f64>>,
        drifts: Vec<Vec<f64>>,
        steps: Vec<f64>,
    ) -> IterateTrace {
        let n = steps.len();
        let d = states[0].len();
        IterateTrace::from_parts(states, drifts, vec![vec![0.0; d]; n], steps, 0, "t").unwrap()
    }

    #[test]
    fn weights_follow_stepsizes() {
        let tr = trace_with_steps(
            vec![vec![0.0], vec![1.0], vec![2.0], vec![4.0]],
            vec![vec![1.0], vec![1.0], vec![1.0]],
            vec![1.0, 1.0, 2.0],
        );
        let m = averaged_measure(&tr, 3).unwrap();
        let w: Vec<f64> = m.atoms().iter().map(|a| a.weight).collect();
        assert_eq!(w, vec![0.25, 0.25, 0.5]);

        let tr = trace_with_steps(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec![vec![2.0], vec![2.0]],
            vec![0.5, 0.5],
        );
        let m = averaged_measure(&tr, 2).unwrap();
        assert_eq!(m.atoms().len(), 2);
        assert!(m.atoms().iter().all(|a| a.weight == 0.5));
    }

    #[test]
    fn constant_trace_collapses_to_one_atom() {
        let f = PiecewiseField::linear(1);
        let tr = run_sa(
            &f,
            &[0.0],
            &StepsizeSchedule::power(1.0, 0.75),
            &NoiseModel::zero(),
            100,
            0,
        )
        .unwrap();
        let m = averaged_measure(&tr, 100).unwrap();
        assert_eq!(m.atoms().len(), 1);
        assert!((m.atoms()[0].weight - 1.0).abs() < 1e-12);
        assert_eq!(m.atoms()[0].z, vec![0.0]);
        let fam = TestFunctionFamily::new(1, 1.0).unwrap();
        assert!(stationarity_residual(&m, &fam).iter().all(|r| *r == 0.0));
    }

    #[test]
    fn atoms_lie_in_padded_boxes() {
        let tr = run_sa(
            &PiecewiseField::example1(),
            &[0.0, 0.2],
            &StepsizeSchedule::power(0.5, 0.75),
            &NoiseModel::gaussian(0.1),
            500,
            3,
        )
        .unwrap();
        let m = averaged_measure(&tr, 500).unwrap();
        assert!(m
            .atoms()
            .iter()
            .all(|a| m.box_b().contains(&a.x) && m.box_d().contains(&a.z)));
        assert!((m.total_weight() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn residual_examples() {
        let fam = TestFunctionFamily::new(1, 1.0).unwrap();
        let sym = EmpiricalMeasure::new(vec![
            Atom {
                x: vec![0.0],
                z: vec![1.0],
                weight: 0.5,
            },
            Atom {
                x: vec![0.0],
                z: vec![-1.0],
                weight: 0.5,
            },
        ])
        .unwrap();
        assert!(stationarity_residual(&sym, &fam)
            .iter()
            .all(|r| r.abs() < 1e-15));

        let unit = EmpiricalMeasure::new(vec![Atom {
            x: vec![0.0],
            z: vec![1.0],
            weight: 1.0,
        }])
        .unwrap();
        // member 1 is x * exp(-x^2/2), gradient 1 at the origin
        assert_eq!(fam.multi_index(1), &[1]);
        assert_eq!(stationarity_residual(&unit, &fam)[1], 1.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let fam = TestFunctionFamily::new(2, 0.7).unwrap();
        let x = [0.3, -0.45];
        let h = 1e-6;
        for i in 0..fam.len() {
            let g = fam.gradient(i, &x);
            for j in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[j] += h;
                xm[j] -= h;
                let fd = (fam.value(i, &xp) - fam.value(i, &xm)) / (2.0 * h);
                assert!(
                    (fd - g[j]).abs() < 1e-8,
                    "member {i} coord {j}: {fd} vs {}",
                    g[j]
                );
            }
        }
    }

    #[test]
    fn recorded_bounds_dominate_sampled_values() {
        let fam = TestFunctionFamily::new(2, 0.8).unwrap();
        let h = 1e-4;
        for i in 0..fam.len() {
            let b = fam.bounds(i);
            let (mut v, mut g, mut hs) = (0.0_f64, 0.0_f64, 0.0_f64);
            for p in 0..=80 {
                for q in 0..=80 {
                    let x = [-4.0 + 0.1 * p as f64, -4.0 + 0.1 * q as f64];
                    v = v.max(fam.value(i, &x).abs());
                    g = g.max(norm(&fam.gradient(i, &x)));
                    for j in 0..2 {
                        let mut xp = x;
                        xp[j] += h;
                        let dg: Vec<f64> = fam
                            .gradient(i, &xp)
                            .iter()
                            .zip(fam.gradient(i, &x))
                            .map(|(a, b)| (a - b) / h)
                            .collect();
                        hs = hs.max(dg.iter().fold(0.0, |m, d| m.max(d.abs())));
                    }
                }
            }
            assert!(
                v <= b.value * (1.0 + 1e-9),
                "member {i}: value {v} > {}",
                b.value
            );
            assert!(
                g <= b.gradient * (1.0 + 1e-9),
                "member {i}: grad {g} > {}",
                b.gradient
            );
            assert!(
                hs <= b.hessian * (1.0 + 1e-3),
                "member {i}: hess {hs} > {}",
                b.hessian
            );
        }
    }

    #[test]
    fn support_fractions_on_spurious_equilibrium() {
        let f = PiecewiseField::spurious_equilibrium();
        let m = EmpiricalMeasure::new(vec![Atom {
            x: vec![0.0],
            z: vec![0.0],
            weight: 1.0,
        }])
        .unwrap();
        let s = graph_support_fraction(&m, &f, 1e-6).unwrap();
        assert_eq!((s.krasovskii, s.filippov), (1.0, 0.0));
    }

    #[test]
    fn support_fraction_off_the_surfaces_is_one() {
        let f = PiecewiseField::example1();
        let tr = run_sa(
            &f,
            &[0.0, 0.4],
            &StepsizeSchedule::power(0.5, 0.75),
            &NoiseModel::gaussian(0.1),
            2000,
            1,
        )
        .unwrap();
        let m = averaged_measure(&tr, 2000).unwrap();
        assert!(m.atoms().iter().all(|a| a.x[1] != 0.0));
        assert!((graph_support_fraction(&m, &f, 1e-9).unwrap().filippov - 1.0).abs() < 1e-12);
    }

    #[test]
    fn atoms_far_from_graph_give_zero() {
        let f = PiecewiseField::relay();
        let m = EmpiricalMeasure::new(vec![
            Atom {
                x: vec![1.0],
                z: vec![3.0],
                weight: 0.5,
            },
            Atom {
                x: vec![-1.0],
                z: vec![-3.0],
                weight: 0.5,
            },
        ])
        .unwrap();
        let s = graph_support_fraction(&m, &f, 0.1).unwrap();
        assert_eq!((s.filippov, s.krasovskii), (0.0, 0.0));
    }

    #[test]
    fn zero_noise_martingale_is_flat() {
        let tr = run_sa(
            &PiecewiseField::relay(),
            &[0.5],
            &StepsizeSchedule::power(1.0, 0.75),
            &NoiseModel::zero(),
            500,
            0,
        )
        .unwrap();
        let fam = TestFunctionFamily::new(1, 1.0).unwrap();
        let diag = martingale_diagnostic(&tr, &fam);
        for i in 0..fam.len() {
            assert!(diag.path(i, 0).iter().all(|v| *v == 0.0));
            assert_eq!(diag.tail_oscillation(i, 0, 0), 0.0);
        }
    }

    #[test]
    fn r_squared_of_a_line_is_one() {
        let v: Vec<f64> = (0..100).map(|k| 3.0 * k as f64 + 1.0).collect();
        assert!((linear_fit_r_squared(&v) - 1.0).abs() < 1e-12);
        let v: Vec<f64> = (0..100).map(|k| ((k as f64) * 0.3).sin()).collect();
        assert!(linear_fit_r_squared(&v) < 0.5);
    }

    #[test]
    fn velocity_split_of_symmetric_atoms() {
        let m = EmpiricalMeasure::new(vec![
            Atom {
                x: vec![0.01],
                z: vec![-1.0],
                weight: 0.25,
            },
            Atom {
                x: vec![-0.01],
                z: vec![1.0],
                weight: 0.25,
            },
            Atom {
                x: vec![2.0],
                z: vec![-1.0],
                weight: 0.5,
            },
        ])
        .unwrap();
        let s = velocity_split(&m, &[0.0], 0.05, &[vec![-1.0], vec![1.0]], 0.5);
        assert_eq!(s.local_mass, 0.5);
        assert_eq!(s.target_fractions, vec![0.5, 0.5]);
        assert_eq!(s.barycenter, vec![0.0]);
    }

    #[test]
    fn decay_study_on_equilibrium_is_zero() {
        let f = PiecewiseField::linear(1);
        let tr = run_sa(
            &f,
            &[0.0],
            &StepsizeSchedule::power(1.0, 0.75),
            &NoiseModel::zero(),
            1000,
            0,
        )
        .unwrap();
        let fam = TestFunctionFamily::new(1, 1.0).unwrap();
        let table = residual_decay_study(&[tr], &fam, &[10, 100, 1000]).unwrap();
        assert!(table.rows.iter().all(|r| r.median_max_residual == 0.0));
        assert!(residual_decay_study(&[], &fam, &[1]).is_err());
    }
}
