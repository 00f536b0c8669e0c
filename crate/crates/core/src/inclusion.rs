//! Integration of `x' in F_h(x)` for piecewise-smooth fields.
//!
//! Inside a region the region's piece is advanced with the explicit midpoint
//! rule. Guard crossings are located by bisection and the switching surface
//! is classified from the normal components of the two adjacent pieces:
//! attracting surfaces produce a sliding motion with the tangent convex
//! combination, otherwise the trajectory crosses. At corners (two or more
//! guards vanishing) a single step is taken with the least-norm element of
//! the Filippov set before re-classifying.

use crate::error::{Error, Result};
use crate::fields::{PiecewiseField, Sign, SignPattern, DEFAULT_RADIUS_TOL};
use crate::trajectory::{Mode, Trajectory};
use crate::vector::{dot, norm, step};

pub const DEFAULT_SURFACE_TOL: f64 = 1e-10;
pub const DEFAULT_EVENT_TOL: f64 = 1e-12;
/// Sliding persists while the weight on the `+` piece stays inside this band.
pub const SLIDING_ALPHA_BAND: (f64, f64) = (0.001, 0.999);

/// Outcome of classifying a switching surface.
#[derive(Clone, Debug, PartialEq)]
pub enum SlidingDecision {
    /// Both pieces push toward the surface; `velocity = alpha f+ + (1-alpha) f-`.
    Sliding { alpha: f64, velocity: Vec<f64> },
    /// Both normal components share a strict sign; `toward` is the downstream side.
    Crossing { toward: Sign, velocity: Vec<f64> },
    /// One normal component vanishes; `side` is that piece's side.
    Tangent { side: Sign, velocity: Vec<f64> },
    /// Both pieces point away from the surface.
    Repelling,
}

/// Classifies the surface `g = 0` with normal `grad_g`, where `f_plus` is the
/// piece on `g > 0` and `f_minus` the piece on `g < 0`.
pub fn sliding_velocity(
    f_plus: &[f64],
    f_minus: &[f64],
    grad_g: &[f64],
) -> Result<SlidingDecision> {
    let gg = dot(grad_g, grad_g);
    if !(gg > 1e-28) {
        return Err(Error::DegenerateGeometry("guard gradient vanishes".into()));
    }
    let p = dot(grad_g, f_plus);
    let m = dot(grad_g, f_minus);
    let scale = gg.sqrt() * norm(f_plus).max(norm(f_minus)).max(f64::MIN_POSITIVE);
    let zero = |v: f64| v.abs() <= 1e-14 * scale;

    if zero(p) || zero(m) {
        let (side, velocity) = if zero(p) {
            (Sign::Plus, f_plus.to_vec())
        } else {
            (Sign::Minus, f_minus.to_vec())
        };
        return Ok(SlidingDecision::Tangent { side, velocity });
    }
    if p < 0.0 && m > 0.0 {
        let alpha = m / (m - p);
        let mut velocity: Vec<f64> = f_plus
            .iter()
            .zip(f_minus)
            .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
            .collect();
        let residual = dot(grad_g, &velocity) / gg;
        for (v, g) in velocity.iter_mut().zip(grad_g) {
            *v -= residual * g;
        }
        return Ok(SlidingDecision::Sliding { alpha, velocity });
    }
    if p > 0.0 && m > 0.0 {
        return Ok(SlidingDecision::Crossing {
            toward: Sign::Plus,
            velocity: f_plus.to_vec(),
        });
    }
    if p < 0.0 && m < 0.0 {
        return Ok(SlidingDecision::Crossing {
            toward: Sign::Minus,
            velocity: f_minus.to_vec(),
        });
    }
    Ok(SlidingDecision::Repelling)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InclusionOptions {
    /// Distance (in guard value) within which a point counts as on a surface.
    pub surface_tol: f64,
    /// Width of the final bisection bracket in time.
    pub event_tol: f64,
}

impl Default for InclusionOptions {
    fn default() -> Self {
        Self {
            surface_tol: DEFAULT_SURFACE_TOL,
            event_tol: DEFAULT_EVENT_TOL,
        }
    }
}

pub fn integrate_filippov(
    field: &PiecewiseField,
    x0: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    integrate_filippov_with(field, x0, t_end, dt, &InclusionOptions::default())
}

/// Canonical Filippov solution on `[0, t_end]` starting at `x0`.
pub fn integrate_filippov_with(
    field: &PiecewiseField,
    x0: &[f64],
    t_end: f64,
    dt: f64,
    opts: &InclusionOptions,
) -> Result<Trajectory> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "t_end must be > 0, got {t_end}"
        )));
    }
    if x0.len() != field.dimension() {
        return Err(Error::DimensionMismatch {
            expected: field.dimension(),
            got: x0.len(),
        });
    }
    if !crate::vector::is_finite(x0) {
        return Err(Error::InvalidArgument("x0 must be finite".into()));
    }
    Integrator {
        field,
        opts: *opts,
        dt,
        t_end,
    }
    .run(x0)
}

/// Sliding on guard `k` with the other guards' labels fixed by `base`.
#[derive(Clone, Debug)]
struct SlideState {
    guard: usize,
    base: SignPattern,
}

#[derive(Clone, Debug)]
enum State {
    Region(SignPattern),
    Slide(SlideState),
    Corner,
}

impl State {
    fn mode(&self) -> Mode {
        match self {
            State::Region(p) => Mode::Region(p.clone()),
            State::Slide(s) => Mode::Sliding(s.guard),
            State::Corner => Mode::Corner,
        }
    }
}

struct Integrator<'a> {
    field: &'a PiecewiseField,
    opts: InclusionOptions,
    dt: f64,
    t_end: f64,
}

enum StepOutcome {
    /// Advanced by `h` to `x`; the state is unchanged.
    Full(Vec<f64>),
    /// Stopped at an event after `s`; continue in the new state.
    Event { s: f64, x: Vec<f64>, next: State },
}

impl Integrator<'_> {
    fn run(&self, x0: &[f64]) -> Result<Trajectory> {
        let mut t = 0.0;
        let mut x = x0.to_vec();
        let mut state = self.classify(&x)?;
        let mut times = vec![0.0];
        let mut points = vec![x.clone()];
        let mut modes = vec![state.mode()];

        let max_iters = 10 * ((self.t_end / self.dt).ceil() as usize) + 10_000;
        let mut stalled = 0;
        for _ in 0..max_iters {
            let remaining = self.t_end - t;
            if remaining <= 1e-14 * self.t_end.max(1.0) {
                return Trajectory::new(times, points, modes);
            }
            let h = self.dt.min(remaining);
            let outcome = match &state {
                State::Region(p) => self.region_step(p, &x, h)?,
                State::Slide(s) => self.slide_step(s, &x, h)?,
                State::Corner => self.corner_step(&x, h)?,
            };
            let (s, x_new, next) = match outcome {
                StepOutcome::Full(x_new) => {
                    let next = match state {
                        State::Corner => self.classify(&x_new)?,
                        ref other => other.clone(),
                    };
                    (h, x_new, next)
                }
                StepOutcome::Event { s, x, next } => (s, x, next),
            };
            let t_new = if s == h { t + h } else { t + s };
            if t_new > t && s > self.opts.event_tol {
                t = t_new;
                x = x_new;
                times.push(t);
                points.push(x.clone());
                modes.push(next.mode());
                stalled = 0;
            } else {
                // zero-length event: only the mode changes
                x = x_new;
                stalled += 1;
                if stalled > 8 {
                    return Err(Error::StepTooLarge { t });
                }
                *modes.last_mut().expect("non-empty") = next.mode();
                *points.last_mut().expect("non-empty") = x.clone();
            }
            state = next;
        }
        Err(Error::StepTooLarge { t })
    }

    /// Mode for a point, using the sliding classification on a single active guard.
    fn classify(&self, x: &[f64]) -> Result<State> {
        let values = self.field.guard_values(x);
        let near: Vec<usize> = (0..values.len())
            .filter(|&k| values[k].abs() <= self.opts.surface_tol)
            .collect();
        let base = SignPattern(values.iter().map(|v| Sign::of(*v)).collect());
        match near.len() {
            0 => Ok(State::Region(base)),
            1 => {
                let k = near[0];
                let plus = base.with(k, Sign::Plus);
                let minus = base.with(k, Sign::Minus);
                match (self.field.piece(&plus), self.field.piece(&minus)) {
                    (Some(fp), Some(fm)) => {
                        let decision = sliding_velocity(
                            &fp.eval(x),
                            &fm.eval(x),
                            &self.field.guards()[k].gradient(x),
                        )?;
                        Ok(match decision {
                            SlidingDecision::Sliding { .. } => {
                                State::Slide(SlideState { guard: k, base })
                            }
                            SlidingDecision::Crossing { toward, .. } => {
                                State::Region(base.with(k, toward))
                            }
                            SlidingDecision::Tangent { side, .. } => {
                                State::Region(base.with(k, side))
                            }
                            SlidingDecision::Repelling => State::Region(plus),
                        })
                    }
                    (Some(_), None) => Ok(State::Region(plus)),
                    (None, Some(_)) => Ok(State::Region(minus)),
                    (None, None) => Err(Error::UnassignedPattern {
                        pattern: base.with(k, Sign::Zero).to_string(),
                    }),
                }
            }
            _ => Ok(State::Corner),
        }
    }

    /// Smallest signed margin `sign_k * g_k(x)` over the guards in `labels`
    /// (labels `0` are skipped), with the index attaining it.
    fn margin(&self, labels: &SignPattern, skip: Option<usize>, x: &[f64]) -> (f64, Option<usize>) {
        let mut best = (f64::INFINITY, None);
        for (k, (g, s)) in self.field.guards().iter().zip(&labels.0).enumerate() {
            if Some(k) == skip || *s == Sign::Zero {
                continue;
            }
            let sigma = if *s == Sign::Plus { 1.0 } else { -1.0 };
            let m = sigma * g.value(x);
            if m < best.0 {
                best = (m, Some(k));
            }
        }
        best
    }

    /// Locates the first time in `(0, h]` at which `margin` drops below
    /// `-surface_tol` along `path`, then projects onto the guard surface.
    fn locate_event<F>(
        &self,
        labels: &SignPattern,
        skip: Option<usize>,
        h: f64,
        path: F,
    ) -> Result<(f64, Vec<f64>)>
    where
        F: Fn(f64) -> Result<Vec<f64>>,
    {
        let threshold = -self.opts.surface_tol;
        let (mut lo, mut hi) = (0.0, h);
        let mut guard = None;
        for _ in 0..200 {
            if hi - lo <= self.opts.event_tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let (m, k) = self.margin(labels, skip, &path(mid)?);
            if m < threshold {
                hi = mid;
                guard = k;
            } else {
                lo = mid;
            }
        }
        if hi - lo > self.opts.event_tol {
            return Err(Error::StepTooLarge { t: hi });
        }
        let mut x = path(hi)?;
        let k = guard.or_else(|| self.margin(labels, skip, &x).1);
        if let Some(k) = k {
            self.project_onto(k, &mut x);
        }
        Ok((hi, x))
    }

    /// Newton projection of `x` onto `g_k = 0`.
    fn project_onto(&self, k: usize, x: &mut [f64]) {
        let g = &self.field.guards()[k];
        for _ in 0..3 {
            let v = g.value(x);
            if v == 0.0 {
                break;
            }
            let grad = g.gradient(x);
            let gg = dot(&grad, &grad);
            if gg == 0.0 {
                break;
            }
            for (xi, gi) in x.iter_mut().zip(&grad) {
                *xi -= v * gi / gg;
            }
        }
    }

    fn midpoint(&self, pattern: &SignPattern, x: &[f64], h: f64) -> Result<Vec<f64>> {
        let k1 = self.field.eval_piece(pattern, x)?;
        let xm = step(x, 0.5 * h, &k1);
        let k2 = self.field.eval_piece(pattern, &xm)?;
        Ok(step(x, h, &k2))
    }

    fn region_step(&self, pattern: &SignPattern, x: &[f64], h: f64) -> Result<StepOutcome> {
        let x_new = self.midpoint(pattern, x, h)?;
        let (m, _) = self.margin(pattern, None, &x_new);
        if m >= -self.opts.surface_tol {
            return Ok(StepOutcome::Full(x_new));
        }
        let (s, x_event) = self.locate_event(pattern, None, h, |s| self.midpoint(pattern, x, s))?;
        let next = self.classify(&x_event)?;
        Ok(StepOutcome::Event {
            s,
            x: x_event,
            next,
        })
    }

    fn slide_decision(&self, st: &SlideState, x: &[f64]) -> Result<SlidingDecision> {
        let fp = self
            .field
            .eval_piece(&st.base.with(st.guard, Sign::Plus), x)?;
        let fm = self
            .field
            .eval_piece(&st.base.with(st.guard, Sign::Minus), x)?;
        sliding_velocity(&fp, &fm, &self.field.guards()[st.guard].gradient(x))
    }

    fn slide_step(&self, st: &SlideState, x: &[f64], h: f64) -> Result<StepOutcome> {
        let velocity = |x: &[f64]| -> Result<Option<Vec<f64>>> {
            Ok(match self.slide_decision(st, x)? {
                SlidingDecision::Sliding { velocity, .. } => Some(velocity),
                _ => None,
            })
        };
        let Some(v1) = velocity(x)? else {
            return Ok(StepOutcome::Event {
                s: 0.0,
                x: x.to_vec(),
                next: self.exit_slide(st, x)?,
            });
        };
        let xm = step(x, 0.5 * h, &v1);
        let v2 = velocity(&xm)?.unwrap_or(v1);
        let path = |s: f64| -> Result<Vec<f64>> {
            let mut y = step(x, s, &v2);
            self.project_onto(st.guard, &mut y);
            Ok(y)
        };
        let x_new = path(h)?;

        let (m, _) = self.margin(&st.base, Some(st.guard), &x_new);
        if m < -self.opts.surface_tol {
            let (s, x_event) = self.locate_event(&st.base, Some(st.guard), h, path)?;
            let next = self.classify(&x_event)?;
            return Ok(StepOutcome::Event {
                s,
                x: x_event,
                next,
            });
        }
        match self.slide_decision(st, &x_new)? {
            SlidingDecision::Sliding { alpha, .. }
                if alpha >= SLIDING_ALPHA_BAND.0 && alpha <= SLIDING_ALPHA_BAND.1 =>
            {
                Ok(StepOutcome::Full(x_new))
            }
            _ => {
                let next = self.exit_slide(st, &x_new)?;
                Ok(StepOutcome::Event {
                    s: h,
                    x: x_new,
                    next,
                })
            }
        }
    }

    /// Region entered when sliding on `st.guard` ends at `x`.
    fn exit_slide(&self, st: &SlideState, x: &[f64]) -> Result<State> {
        let k = st.guard;
        let side = match self.slide_decision(st, x)? {
            SlidingDecision::Sliding { alpha, .. } => {
                if alpha < 0.5 {
                    Sign::Minus
                } else {
                    Sign::Plus
                }
            }
            SlidingDecision::Crossing { toward, .. } => toward,
            SlidingDecision::Tangent { side, .. } => side,
            SlidingDecision::Repelling => Sign::Plus,
        };
        Ok(State::Region(st.base.with(k, side)))
    }

    fn corner_step(&self, x: &[f64], h: f64) -> Result<StepOutcome> {
        let band = self.opts.surface_tol.max(DEFAULT_RADIUS_TOL);
        let v = self.field.filippov_map(x, band)?.least_norm_element();
        Ok(StepOutcome::Full(step(x, h, &v)))
    }
}

/// Approximate solution of `y' in F_h(y)` on `t_span` that starts on the
/// reference path and, at each step, picks the admissible velocity closest
/// to the reference's chord slope.
///
/// The Filippov set is taken over the guard band reachable within one step,
/// `h * max_k max_pieces |grad g_k . f|`, so that switching inside a step
/// is representable.
pub fn integrate_tracking_selection(
    field: &PiecewiseField,
    reference: &Trajectory,
    t_span: (f64, f64),
    dt: f64,
) -> Result<Trajectory> {
    let (t0, t1) = t_span;
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    if !(t1 > t0) {
        return Err(Error::InvalidArgument(format!(
            "empty time span [{t0}, {t1}]"
        )));
    }
    if reference.dim() != field.dimension() {
        return Err(Error::DimensionMismatch {
            expected: field.dimension(),
            got: reference.dim(),
        });
    }
    let mut y = reference.value_at(t0)?;
    let mut ref_prev = y.clone();
    let mut times = vec![t0];
    let mut points = vec![y.clone()];
    let mut modes = Vec::new();

    let mut t = t0;
    for t_next in selection_grid(reference, t0, t1, dt) {
        let h = t_next - t;
        let ref_next = reference.value_at(t_next)?;
        let chord: Vec<f64> = ref_prev
            .iter()
            .zip(&ref_next)
            .map(|(a, b)| (b - a) / h)
            .collect();
        let band = reachable_band(field, &y, h);
        let (v1, mode) = select(field, &y, band, &chord)?;
        let ym = step(&y, 0.5 * h, &v1);
        let (v2, _) = select(field, &ym, reachable_band(field, &ym, h), &chord)?;
        y = step(&y, h, &v2);
        modes.push(mode);
        times.push(t_next);
        points.push(y.clone());
        ref_prev = ref_next;
        t = t_next;
    }
    let last = modes
        .last()
        .cloned()
        .unwrap_or(Mode::Region(SignPattern::default()));
    modes.push(last);
    Trajectory::new(times, points, modes)
}

/// Uniform grid of spacing `dt` on `(t0, t1]` merged with the reference's
/// interior nodes, so that every step follows a single reference segment.
fn selection_grid(reference: &Trajectory, t0: f64, t1: f64, dt: f64) -> Vec<f64> {
    let n = ((t1 - t0) / dt).ceil().max(1.0) as usize;
    let mut grid: Vec<f64> = (1..n)
        .map(|i| t0 + i as f64 * dt)
        .filter(|t| *t < t1)
        .collect();
    grid.extend(
        reference
            .times()
            .iter()
            .copied()
            .filter(|t| *t > t0 && *t < t1),
    );
    grid.push(t1);
    grid.sort_by(f64::total_cmp);
    let min_gap = 1e-12 * (t1 - t0).max(t1.abs());
    let mut out: Vec<f64> = Vec::with_capacity(grid.len());
    let mut last = t0;
    for t in grid {
        if t - last > min_gap {
            out.push(t);
            last = t;
        }
    }
    if let Some(end) = out.last_mut() {
        *end = t1;
    }
    out
}

fn reachable_band(field: &PiecewiseField, y: &[f64], h: f64) -> f64 {
    let values = field.guard_values(y);
    let mut speed = 0.0_f64;
    for (k, g) in field.guards().iter().enumerate() {
        if values[k].abs() > 1e6 * h {
            continue;
        }
        let grad = g.gradient(y);
        let pattern = field.sign_pattern(y);
        for s in [Sign::Plus, Sign::Minus] {
            let mut p = pattern.clone();
            p.0[k] = s;
            for (j, label) in p.0.iter_mut().enumerate() {
                if *label == Sign::Zero && j != k {
                    *label = Sign::Plus;
                }
            }
            if let Some(piece) = field.piece(&p) {
                speed = speed.max(dot(&grad, &piece.eval(y)).abs());
            }
        }
    }
    (h * speed).max(DEFAULT_RADIUS_TOL)
}

fn select(
    field: &PiecewiseField,
    y: &[f64],
    band: f64,
    target: &[f64],
) -> Result<(Vec<f64>, Mode)> {
    let set = field.filippov_map(y, band)?;
    let v = set.project(target)?.point;
    let values = field.guard_values(y);
    let in_band: Vec<usize> = (0..values.len())
        .filter(|&k| values[k].abs() <= band)
        .collect();
    let mode = match in_band.len() {
        0 => Mode::Region(field.sign_pattern(y)),
        1 => Mode::Sliding(in_band[0]),
        _ => Mode::Corner,
    };
    Ok((v, mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hull::ConvexVelocitySet;

    #[test]
    fn example1_surface_is_attracting() {
        match sliding_velocity(&[1.0, -1.0], &[1.0, 1.0], &[0.0, 1.0]).unwrap() {
            SlidingDecision::Sliding { alpha, velocity } => {
                assert_eq!(alpha, 0.5);
                assert_eq!(velocity, vec![1.0, 0.0]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parallel_fields_cross() {
        assert_eq!(
            sliding_velocity(&[1.0, 1.0], &[1.0, 1.0], &[0.0, 1.0]).unwrap(),
            SlidingDecision::Crossing {
                toward: Sign::Plus,
                velocity: vec![1.0, 1.0]
            }
        );
        assert!(matches!(
            sliding_velocity(&[1.0, -1.0], &[1.0, -2.0], &[0.0, 1.0]).unwrap(),
            SlidingDecision::Crossing {
                toward: Sign::Minus,
                ..
            }
        ));
    }

    #[test]
    fn relay_sliding_velocity_is_zero() {
        match sliding_velocity(&[-1.0], &[1.0], &[1.0]).unwrap() {
            SlidingDecision::Sliding { alpha, velocity } => {
                assert_eq!(alpha, 0.5);
                assert_eq!(velocity, vec![0.0]);
            }
            other => panic!("{other:?}"),
        }
        // brute force: the only element of [-1, 1] with zero normal component
        let tangent: Vec<f64> = (0..=2000)
            .map(|i| -1.0 + i as f64 * 1e-3)
            .filter(|v| v.abs() < 1e-12)
            .collect();
        assert_eq!(tangent, vec![0.0]);
    }

    #[test]
    fn tangent_and_repelling() {
        assert!(matches!(
            sliding_velocity(&[1.0, 0.0], &[1.0, 1.0], &[0.0, 1.0]).unwrap(),
            SlidingDecision::Tangent {
                side: Sign::Plus,
                ..
            }
        ));
        assert_eq!(
            sliding_velocity(&[0.0, 1.0], &[0.0, -1.0], &[0.0, 1.0]).unwrap(),
            SlidingDecision::Repelling
        );
        assert!(matches!(
            sliding_velocity(&[1.0], &[1.0], &[0.0]),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn example1_slides_after_reaching_the_line() {
        let f = PiecewiseField::example1();
        let tr = integrate_filippov(&f, &[0.0, 1.0], 3.0, 1e-3).unwrap();
        let end = tr.last_point();
        assert!(
            (end[0] - 3.0).abs() < 1e-3 && end[1].abs() < 1e-3,
            "{end:?}"
        );
        let hit = tr
            .modes()
            .iter()
            .position(|m| *m == Mode::Sliding(0))
            .expect("enters sliding");
        assert!((tr.times()[hit] - 1.0).abs() < 1e-9);
        assert!((tr.points()[hit][0] - 1.0).abs() < 1e-9);
        for i in hit..tr.len() - 1 {
            let v = tr.segment_slope(i);
            assert!((v[0] - 1.0).abs() < 1e-9 && v[1].abs() < 1e-9);
        }
    }

    #[test]
    fn relay_reaches_and_holds_the_origin() {
        let tr = integrate_filippov(&PiecewiseField::relay(), &[0.5], 2.0, 1e-3).unwrap();
        assert!(tr.value_at(1.0).unwrap()[0].abs() < 1e-3);
        for (t, p) in tr.times().iter().zip(tr.points()) {
            if *t >= 0.5 + 1e-9 {
                assert!(p[0].abs() <= DEFAULT_SURFACE_TOL);
            }
        }
    }

    #[test]
    fn smooth_field_matches_exponential() {
        let tr = integrate_filippov(&PiecewiseField::linear(1), &[1.0], 1.0, 1e-3).unwrap();
        assert!((tr.last_point()[0] - (-1.0_f64).exp()).abs() < 1e-5);
        assert_eq!(tr.end_time(), 1.0);
    }

    #[test]
    fn crossing_surface_does_not_slide() {
        // x' = 1 everywhere, guard x: crossing from left to right
        let f: PiecewiseField = serde_json::from_str(
            r#"{"dimension":1,"guards":[{"kind":"coordinate","index":0}],
                "pieces":{"+":{"kind":"constant","value":[1.0]},"-":{"kind":"constant","value":[2.0]}}}"#,
        )
        .unwrap();
        let tr = integrate_filippov(&f, &[-1.0], 1.0, 1e-2).unwrap();
        // reaches 0 at t = 0.5, then moves at speed 1
        assert!((tr.last_point()[0] - 0.5).abs() < 1e-9);
        assert!(!tr.modes().iter().any(|m| matches!(m, Mode::Sliding(_))));
    }

    #[test]
    fn sliding_exits_when_one_side_turns_tangent() {
        // above: (1, -1); below: (1, 1 - x). Sliding on y = 0 until x = 1.
        let f: PiecewiseField = serde_json::from_str(
            r#"{"dimension":2,"guards":[{"kind":"coordinate","index":1}],
                "pieces":{"+":{"kind":"constant","value":[1.0,-1.0]},
                          "-":{"kind":"affine","matrix":[[0,0],[-1,0]],"offset":[1,1]}}}"#,
        )
        .unwrap();
        let tr = integrate_filippov(&f, &[0.0, 0.0], 2.0, 1e-3).unwrap();
        let end = tr.last_point();
        // after x = 1 the lower field points down: y(t) = -(t-1)^2/2 with x = t
        assert!((end[0] - 2.0).abs() < 1e-2, "{end:?}");
        assert!((end[1] + 0.5).abs() < 2e-2, "{end:?}");
    }

    #[test]
    fn corner_uses_least_norm_velocity() {
        let f: PiecewiseField = serde_json::from_str(
            r#"{"dimension":2,"guards":[{"kind":"coordinate","index":0},{"kind":"coordinate","index":1}],
                "pieces":{"++":{"kind":"constant","value":[-1,-1]},"+-":{"kind":"constant","value":[-1,1]},
                          "-+":{"kind":"constant","value":[1,-1]},"--":{"kind":"constant","value":[1,1]}}}"#,
        )
        .unwrap();
        let tr = integrate_filippov(&f, &[0.0, 0.0], 0.1, 1e-2).unwrap();
        assert!(norm(tr.last_point()) < 1e-12);
        assert!(tr.modes().contains(&Mode::Corner));
    }

    #[test]
    fn selection_reproduces_a_filippov_reference() {
        let f = PiecewiseField::example1();
        let reference = integrate_filippov(&f, &[0.0, 1.0], 3.0, 1e-3).unwrap();
        let sel = integrate_tracking_selection(&f, &reference, (0.0, 3.0), 7e-3).unwrap();
        assert!(sel.sup_distance(&reference, 0.0, 3.0).unwrap() < 1e-6);
    }

    #[test]
    fn selection_on_constant_reference_at_rest_point() {
        let f = PiecewiseField::linear(2);
        let reference = Trajectory::from_points(vec![0.0, 1.0], vec![vec![0.0, 0.0]; 2]).unwrap();
        let sel = integrate_tracking_selection(&f, &reference, (0.0, 1.0), 0.1).unwrap();
        assert!(sel.points().iter().all(|p| p == &vec![0.0, 0.0]));
    }

    #[test]
    fn selection_clamps_an_infeasible_slope() {
        let f = PiecewiseField::relay();
        let reference =
            Trajectory::from_points(vec![0.0, 2.0], vec![vec![0.0], vec![10.0]]).unwrap();
        let dt = 1e-3;
        let sel = integrate_tracking_selection(&f, &reference, (0.0, 2.0), dt).unwrap();
        // projection of 5 onto [-1, 1] keeps the selection within one step of 0
        for p in sel.points() {
            assert!(p[0].abs() <= 2.0 * dt + 1e-12);
        }
        let gap = |t: f64| reference.value_at(t).unwrap()[0] - sel.value_at(t).unwrap()[0];
        assert!((gap(2.0) - 2.0 * gap(1.0)).abs() < 4.0 * dt);
    }

    #[test]
    fn slopes_stay_in_the_filippov_set() {
        let f = PiecewiseField::example1();
        let dt = 1e-2;
        let tr = integrate_filippov(&f, &[0.0, 0.37], 2.0, dt).unwrap();
        for i in 0..tr.len() - 1 {
            let mid: Vec<f64> = tr.points()[i]
                .iter()
                .zip(&tr.points()[i + 1])
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            let set: ConvexVelocitySet = f.filippov_map(&mid, 1e-9).unwrap();
            assert!(set.distance(&tr.segment_slope(i)).unwrap() <= 10.0 * dt * 0.0 + 1e-9);
        }
    }
}
