//! Piecewise-smooth vector fields and their set-valued regularizations.
//!
//! A field is described by scalar guard functions `g_k` and one smooth piece
//! per full sign pattern of the guards. Patterns with a `0` label live on
//! guard zero sets (Lebesgue-null), and may carry explicit boundary values.
//!
//! The Filippov map at `x` is the hull of the pieces of all regions whose
//! closure meets the guard band around `x`; boundary values are ignored since
//! they are carried by null sets. The Krasovskii map adds the boundary values.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hull::ConvexVelocitySet;
use crate::vector::{dot, norm};

/// Default half-width of the guard band used to decide region adjacency.
pub const DEFAULT_RADIUS_TOL: f64 = 1e-9;

/// Label of one guard in a sign pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sign {
    Plus,
    Minus,
    Zero,
}

impl Sign {
    pub fn of(value: f64) -> Sign {
        if value > 0.0 {
            Sign::Plus
        } else if value < 0.0 {
            Sign::Minus
        } else {
            Sign::Zero
        }
    }

    fn as_char(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
            Sign::Zero => '0',
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
            Sign::Zero => Sign::Zero,
        }
    }
}

/// One label per guard. Ordered lexicographically with `+ < - < 0`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SignPattern(pub Vec<Sign>);

impl SignPattern {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// True when no guard is labeled `0`.
    pub fn is_full(&self) -> bool {
        !self.0.contains(&Sign::Zero)
    }

    pub fn with(&self, index: usize, sign: Sign) -> SignPattern {
        let mut p = self.clone();
        p.0[index] = sign;
        p
    }
}

impl fmt::Display for SignPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.0 {
            write!(f, "{}", s.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for SignPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '+' => Ok(Sign::Plus),
                '-' | '\u{2212}' => Ok(Sign::Minus),
                '0' => Ok(Sign::Zero),
                other => Err(Error::InvalidArgument(format!(
                    "bad sign label `{other}` in pattern `{s}`"
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .map(SignPattern)
    }
}

/// Smooth scalar switching function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Guard {
    /// `a . x + b`
    Affine { a: Vec<f64>, b: f64 },
    /// `x[index] - offset`
    Coordinate {
        index: usize,
        #[serde(default)]
        offset: f64,
    },
    /// `|x - center| - radius`
    Norm { center: Vec<f64>, radius: f64 },
}

impl Guard {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Guard::Affine { a, b } => dot(a, x) + b,
            Guard::Coordinate { index, offset } => x[*index] - offset,
            Guard::Norm { center, radius } => {
                let r: f64 = x
                    .iter()
                    .zip(center)
                    .map(|(xi, ci)| (xi - ci) * (xi - ci))
                    .sum();
                r.sqrt() - radius
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Guard::Affine { a, .. } => a.clone(),
            Guard::Coordinate { index, .. } => {
                let mut g = vec![0.0; x.len()];
                g[*index] = 1.0;
                g
            }
            Guard::Norm { center, .. } => {
                let diff: Vec<f64> = x.iter().zip(center).map(|(a, b)| a - b).collect();
                let r = norm(&diff);
                if r == 0.0 {
                    vec![0.0; x.len()]
                } else {
                    diff.iter().map(|v| v / r).collect()
                }
            }
        }
    }

    fn check(&self, d: usize, path: &str) -> Result<()> {
        let ok = match self {
            Guard::Affine { a, b } => {
                a.len() == d && b.is_finite() && a.iter().all(|v| v.is_finite())
            }
            Guard::Coordinate { index, offset } => *index < d && offset.is_finite(),
            Guard::Norm { center, radius } => {
                center.len() == d && *radius >= 0.0 && center.iter().all(|v| v.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(
                path,
                format!("guard does not fit dimension {d}"),
            ))
        }
    }
}

/// Smooth vector function used inside one region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Piece {
    Constant {
        value: Vec<f64>,
    },
    /// `matrix * x + offset`
    Affine {
        matrix: Vec<Vec<f64>>,
        offset: Vec<f64>,
    },
    /// Component `i`: `constant[i] + linear[i] . x + x^T quadratic[i] x`
    Quadratic {
        constant: Vec<f64>,
        linear: Vec<Vec<f64>>,
        quadratic: Vec<Vec<Vec<f64>>>,
    },
}

impl Piece {
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Piece::Constant { value } => value.clone(),
            Piece::Affine { matrix, offset } => matrix
                .iter()
                .zip(offset)
                .map(|(row, b)| dot(row, x) + b)
                .collect(),
            Piece::Quadratic {
                constant,
                linear,
                quadratic,
            } => constant
                .iter()
                .zip(linear)
                .zip(quadratic)
                .map(|((c, l), q)| {
                    let quad: f64 = q.iter().zip(x).map(|(row, xj)| xj * dot(row, x)).sum();
                    c + dot(l, x) + quad
                })
                .collect(),
        }
    }

    fn check(&self, d: usize, path: &str) -> Result<()> {
        let square = |m: &Vec<Vec<f64>>| m.len() == d && m.iter().all(|r| r.len() == d);
        let ok = match self {
            Piece::Constant { value } => value.len() == d,
            Piece::Affine { matrix, offset } => square(matrix) && offset.len() == d,
            Piece::Quadratic {
                constant,
                linear,
                quadratic,
            } => {
                constant.len() == d
                    && square(linear)
                    && quadratic.len() == d
                    && quadratic.iter().all(square)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(
                path,
                format!("piece does not fit dimension {d}"),
            ))
        }
    }
}

/// Serialized form of a [`PiecewiseField`]; patterns are strings like `"+-"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    #[serde(default = "default_field_name")]
    pub name: String,
    pub dimension: usize,
    #[serde(default)]
    pub guards: Vec<Guard>,
    pub pieces: BTreeMap<String, Piece>,
    #[serde(default)]
    pub boundary_values: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub lipschitz_bound: Option<f64>,
}

fn default_field_name() -> String {
    "inline".to_string()
}

/// Vector field on R^d that is smooth off the zero sets of its guards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FieldSpec", into = "FieldSpec")]
pub struct PiecewiseField {
    name: String,
    dimension: usize,
    guards: Vec<Guard>,
    pieces: BTreeMap<SignPattern, Piece>,
    boundary_values: BTreeMap<SignPattern, Vec<f64>>,
    lipschitz_bound: Option<f64>,
}

impl TryFrom<FieldSpec> for PiecewiseField {
    type Error = Error;

    fn try_from(spec: FieldSpec) -> Result<Self> {
        let d = spec.dimension;
        if d == 0 {
            return Err(Error::config("field.dimension", "must be positive"));
        }
        for (k, g) in spec.guards.iter().enumerate() {
            g.check(d, &format!("field.guards[{k}]"))?;
        }
        let n_guards = spec.guards.len();
        let parse = |key: &str, section: &str| -> Result<SignPattern> {
            let path = format!("field.{section}.{key}");
            let p: SignPattern = key
                .parse()
                .map_err(|e: Error| Error::config(&path, e.to_string()))?;
            if p.len() != n_guards {
                return Err(Error::config(
                    path,
                    format!(
                        "pattern has {} labels but there are {n_guards} guards",
                        p.len()
                    ),
                ));
            }
            Ok(p)
        };
        let mut pieces = BTreeMap::new();
        for (key, piece) in spec.pieces {
            let p = parse(&key, "pieces")?;
            if !p.is_full() {
                return Err(Error::config(
                    format!("field.pieces.{key}"),
                    "pieces must be keyed by full sign patterns (no `0`)",
                ));
            }
            piece.check(d, &format!("field.pieces.{key}"))?;
            pieces.insert(p, piece);
        }
        if pieces.is_empty() {
            return Err(Error::config(
                "field.pieces",
                "at least one piece is required",
            ));
        }
        let mut boundary_values = BTreeMap::new();
        for (key, value) in spec.boundary_values {
            let p = parse(&key, "boundary_values")?;
            if p.is_full() {
                return Err(Error::config(
                    format!("field.boundary_values.{key}"),
                    "boundary values must be keyed by patterns with at least one `0`",
                ));
            }
            if value.len() != d {
                return Err(Error::config(
                    format!("field.boundary_values.{key}"),
                    format!("expected {d} components"),
                ));
            }
            boundary_values.insert(p, value);
        }
        Ok(PiecewiseField {
            name: spec.name,
            dimension: d,
            guards: spec.guards,
            pieces,
            boundary_values,
            lipschitz_bound: spec.lipschitz_bound,
        })
    }
}

impl From<PiecewiseField> for FieldSpec {
    fn from(f: PiecewiseField) -> Self {
        FieldSpec {
            name: f.name,
            dimension: f.dimension,
            guards: f.guards,
            pieces: f
                .pieces
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            boundary_values: f
                .boundary_values
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            lipschitz_bound: f.lipschitz_bound,
        }
    }
}

/// Names accepted by [`PiecewiseField::builtin`].
pub const BUILTIN_FIELDS: &[&str] = &["example1", "relay", "spurious_equilibrium", "linear"];

impl PiecewiseField {
    pub fn from_spec(spec: FieldSpec) -> Result<Self> {
        spec.try_into()
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "example1" => Ok(Self::example1()),
            "relay" => Ok(Self::relay()),
            "spurious_equilibrium" => Ok(Self::spurious_equilibrium()),
            "linear" => Ok(Self::linear(1)),
            other => Err(Error::config(
                "field",
                format!(
                    "unknown builtin field `{other}` (known: {})",
                    BUILTIN_FIELDS.join(", ")
                ),
            )),
        }
    }

    /// Planar field `[1,-1]` above `y = 0`, `[1,1]` below, `[-1,0]` on the line.
    pub fn example1() -> Self {
        let spec = FieldSpec {
            name: "example1".into(),
            dimension: 2,
            guards: vec![Guard::Coordinate {
                index: 1,
                offset: 0.0,
            }],
            pieces: BTreeMap::from([
                (
                    "+".into(),
                    Piece::Constant {
                        value: vec![1.0, -1.0],
                    },
                ),
                (
                    "-".into(),
                    Piece::Constant {
                        value: vec![1.0, 1.0],
                    },
                ),
            ]),
            boundary_values: BTreeMap::from([("0".into(), vec![-1.0, 0.0])]),
            lipschitz_bound: Some(0.0),
        };
        spec.try_into().expect("builtin field is well formed")
    }

    /// `x' = -sign(x)` on the line.
    pub fn relay() -> Self {
        let spec = FieldSpec {
            name: "relay".into(),
            dimension: 1,
            guards: vec![Guard::Coordinate {
                index: 0,
                offset: 0.0,
            }],
            pieces: BTreeMap::from([
                ("+".into(), Piece::Constant { value: vec![-1.0] }),
                ("-".into(), Piece::Constant { value: vec![1.0] }),
            ]),
            boundary_values: BTreeMap::new(),
            lipschitz_bound: Some(0.0),
        };
        spec.try_into().expect("builtin field is well formed")
    }

    /// `h = 1` off the origin, `h(0) = 0`: a rest point only the Krasovskii map sees.
    pub fn spurious_equilibrium() -> Self {
        let spec = FieldSpec {
            name: "spurious_equilibrium".into(),
            dimension: 1,
            guards: vec![Guard::Coordinate {
                index: 0,
                offset: 0.0,
            }],
            pieces: BTreeMap::from([
                ("+".into(), Piece::Constant { value: vec![1.0] }),
                ("-".into(), Piece::Constant { value: vec![1.0] }),
            ]),
            boundary_values: BTreeMap::from([("0".into(), vec![0.0])]),
            lipschitz_bound: Some(0.0),
        };
        spec.try_into().expect("builtin field is well formed")
    }

    /// `h(x) = -x` in dimension `d`.
    pub fn linear(d: usize) -> Self {
        let matrix = (0..d)
            .map(|i| (0..d).map(|j| if i == j { -1.0 } else { 0.0 }).collect())
            .collect();
        let spec = FieldSpec {
            name: "linear".into(),
            dimension: d,
            guards: vec![],
            pieces: BTreeMap::from([(
                String::new(),
                Piece::Affine {
                    matrix,
                    offset: vec![0.0; d],
                },
            )]),
            boundary_values: BTreeMap::new(),
            lipschitz_bound: Some(1.0),
        };
        spec.try_into().expect("builtin field is well formed")
    }

    pub fn constant(value: Vec<f64>) -> Self {
        let spec = FieldSpec {
            name: "constant".into(),
            dimension: value.len(),
            guards: vec![],
            pieces: BTreeMap::from([(String::new(), Piece::Constant { value })]),
            boundary_values: BTreeMap::new(),
            lipschitz_bound: Some(0.0),
        };
        spec.try_into().expect("constant field is well formed")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn guards(&self) -> &[Guard] {
        &self.guards
    }

    pub fn lipschitz_bound(&self) -> Option<f64> {
        self.lipschitz_bound
    }

    pub fn has_boundary_values(&self) -> bool {
        !self.boundary_values.is_empty()
    }

    pub fn piece(&self, pattern: &SignPattern) -> Option<&Piece> {
        self.pieces.get(pattern)
    }

    pub fn boundary_value(&self, pattern: &SignPattern) -> Option<&[f64]> {
        self.boundary_values.get(pattern).map(Vec::as_slice)
    }

    /// Evaluates the piece assigned to `pattern` at `x`.
    pub fn eval_piece(&self, pattern: &SignPattern, x: &[f64]) -> Result<Vec<f64>> {
        self.pieces
            .get(pattern)
            .map(|p| p.eval(x))
            .ok_or_else(|| Error::UnassignedPattern {
                pattern: pattern.to_string(),
            })
    }

    pub fn guard_values(&self, x: &[f64]) -> Vec<f64> {
        self.guards.iter().map(|g| g.value(x)).collect()
    }

    /// Exact sign pattern of `x` (zero only when a guard vanishes exactly).
    pub fn sign_pattern(&self, x: &[f64]) -> SignPattern {
        SignPattern(self.guards.iter().map(|g| Sign::of(g.value(x))).collect())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                got: x.len(),
            });
        }
        if !crate::vector::is_finite(x) {
            return Err(Error::InvalidArgument(
                "state has non-finite components".into(),
            ));
        }
        Ok(())
    }

    /// Pointwise value `h(x)`.
    ///
    /// On a guard zero set the boundary value is used if one is assigned,
    /// otherwise the piece of the adjacent region whose pattern is
    /// lexicographically smallest.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let pattern = self.sign_pattern(x);
        if let Some(p) = self.pieces.get(&pattern) {
            return Ok(p.eval(x));
        }
        if let Some(v) = self.boundary_values.get(&pattern) {
            return Ok(v.clone());
        }
        if !pattern.is_full() {
            let free: Vec<bool> = pattern.0.iter().map(|s| *s == Sign::Zero).collect();
            if let Some(adj) = expand(&pattern, &free)
                .into_iter()
                .find(|p| self.pieces.contains_key(p))
            {
                return Ok(self.pieces[&adj].eval(x));
            }
        }
        Err(Error::UnassignedPattern {
            pattern: pattern.to_string(),
        })
    }

    /// Full patterns of the regions whose closure meets the guard band at `x`,
    /// in lexicographic order. Patterns without a piece are treated as empty
    /// regions, unless none of the candidates has one.
    pub fn adjacent_patterns(&self, x: &[f64], radius_tol: f64) -> Result<Vec<SignPattern>> {
        self.check_point(x)?;
        if !(radius_tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "radius_tol must be > 0, got {radius_tol}"
            )));
        }
        let values = self.guard_values(x);
        let free: Vec<bool> = values.iter().map(|v| v.abs() <= radius_tol).collect();
        let base = SignPattern(
            values
                .iter()
                .zip(&free)
                .map(|(v, f)| if *f { Sign::Zero } else { Sign::of(*v) })
                .collect(),
        );
        let found: Vec<SignPattern> = expand(&base, &free)
            .into_iter()
            .filter(|p| self.pieces.contains_key(p))
            .collect();
        if found.is_empty() {
            let mut shown = base.clone();
            for (s, f) in shown.0.iter_mut().zip(&free) {
                if *f {
                    *s = Sign::Zero;
                }
            }
            return Err(Error::UnassignedPattern {
                pattern: shown.to_string(),
            });
        }
        Ok(found)
    }

    /// Filippov regularization `F_h(x)`: hull of adjacent piece values,
    /// boundary values excluded.
    pub fn filippov_map(&self, x: &[f64], radius_tol: f64) -> Result<ConvexVelocitySet> {
        let patterns = self.adjacent_patterns(x, radius_tol)?;
        let mut set = ConvexVelocitySet::singleton(self.pieces[&patterns[0]].eval(x));
        for p in &patterns[1..] {
            set.push_unique(self.pieces[p].eval(x));
        }
        Ok(set)
    }

    /// Krasovskii regularization `K_h(x)`: the Filippov hull plus every
    /// boundary value assigned to a pattern within the guard band.
    pub fn krasovskii_map(&self, x: &[f64], radius_tol: f64) -> Result<ConvexVelocitySet> {
        let mut set = self.filippov_map(x, radius_tol)?;
        let values = self.guard_values(x);
        for (pattern, value) in &self.boundary_values {
            let within =
                pattern.0.iter().zip(&values).all(|(s, g)| {
                    g.abs() <= radius_tol || (*s != Sign::Zero && *s == Sign::of(*g))
                });
            if within {
                set.push_unique(value.clone());
            }
        }
        Ok(set)
    }

    /// Monte-Carlo estimate of the convolution of the field with the
    /// standard bump `exp(-1/(1-|u|^2))` scaled to the `delta`-ball.
    /// Draws that land exactly on a guard zero set are redrawn.
    pub fn mollify<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        delta: f64,
        samples: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.check_point(x)?;
        if !(delta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "delta must be > 0, got {delta}"
            )));
        }
        if samples == 0 {
            return Err(Error::InvalidArgument("samples must be >= 1".into()));
        }
        let d = self.dimension;
        let mut acc = vec![0.0; d];
        let mut y = vec![0.0; d];
        for _ in 0..samples {
            loop {
                let u = sample_bump(d, rng);
                for i in 0..d {
                    y[i] = x[i] + delta * u[i];
                }
                let pattern = self.sign_pattern(&y);
                if !pattern.is_full() {
                    continue;
                }
                let v = self.eval_piece(&pattern, &y)?;
                for (a, vi) in acc.iter_mut().zip(&v) {
                    *a += vi;
                }
                break;
            }
        }
        Ok(acc.into_iter().map(|a| a / samples as f64).collect())
    }
}

/// All full patterns obtained from `base` by choosing `+`/`-` at the free
/// positions, in lexicographic order.
fn expand(base: &SignPattern, free: &[bool]) -> Vec<SignPattern> {
    let mut out = vec![base.clone()];
    for (k, is_free) in free.iter().enumerate() {
        if !is_free {
            continue;
        }
        out = out
            .into_iter()
            .flat_map(|p| [p.with(k, Sign::Plus), p.with(k, Sign::Minus)])
            .collect();
    }
    out.sort();
    out
}

/// Draw from the normalized bump density on the unit ball by rejection
/// from the uniform distribution on the ball.
fn sample_bump<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let len = norm(&dir);
        if len == 0.0 {
            continue;
        }
        let r: f64 = rng.random::<f64>().powf(1.0 / d as f64);
        if r >= 1.0 {
            continue;
        }
        let accept = (1.0 - 1.0 / (1.0 - r * r)).exp();
        if rng.random::<f64>() < accept {
            return dir.into_iter().map(|v| v * r / len).collect();
        }
    }
}
