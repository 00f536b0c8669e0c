//! Finitely generated convex sets of velocities and nearest-point queries.
//!
//! Distances are computed with Wolfe's minimum-norm-point algorithm on the
//! vertex cloud shifted by the query point. The vertex list may contain
//! duplicates or interior points; only the hull matters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{dot, norm};

/// Default tolerance for hull membership.
pub const DEFAULT_HULL_TOL: f64 = 1e-9;

/// Convex hull of a finite, non-empty list of vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexVelocitySet {
    vertices: Vec<Vec<f64>>,
}

/// Nearest point of a hull to a query, with its convex weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub point: Vec<f64>,
    pub distance: f64,
    /// Weight per vertex (same order as [`ConvexVelocitySet::vertices`]).
    pub weights: Vec<f64>,
}

impl ConvexVelocitySet {
    pub fn new(vertices: Vec<Vec<f64>>) -> Result<Self> {
        let first = vertices.first().ok_or(Error::EmptySet)?;
        let d = first.len();
        for v in &vertices {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: v.len(),
                });
            }
        }
        Ok(Self { vertices })
    }

    pub fn singleton(v: Vec<f64>) -> Self {
        Self { vertices: vec![v] }
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    /// Adds a vertex unless an identical one is already present.
    pub(crate) fn push_unique(&mut self, v: Vec<f64>) {
        if !self.vertices.contains(&v) {
            self.vertices.push(v);
        }
    }

    pub fn project(&self, v: &[f64]) -> Result<Projection> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        let shifted: Vec<Vec<f64>> = self
            .vertices
            .iter()
            .map(|p| p.iter().zip(v).map(|(a, b)| a - b).collect())
            .collect();
        let weights = min_norm_weights(&shifted);
        let mut point = vec![0.0; self.dim()];
        let mut offset = vec![0.0; self.dim()];
        for ((w, p), q) in weights.iter().zip(&self.vertices).zip(&shifted) {
            if *w == 0.0 {
                continue;
            }
            for j in 0..point.len() {
                point[j] += w * p[j];
                offset[j] += w * q[j];
            }
        }
        Ok(Projection {
            point,
            distance: norm(&offset),
            weights,
        })
    }

    pub fn distance(&self, v: &[f64]) -> Result<f64> {
        Ok(self.project(v)?.distance)
    }

    pub fn contains(&self, v: &[f64], tol: f64) -> Result<bool> {
        if tol < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "hull tolerance must be >= 0, got {tol}"
            )));
        }
        Ok(self.distance(v)? <= tol)
    }

    /// Every vertex of `other` lies within `tol` of `self`.
    pub fn contains_set(&self, other: &ConvexVelocitySet, tol: f64) -> Result<bool> {
        for v in &other.vertices {
            if !self.contains(v, tol)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Set equality by mutual containment.
    pub fn equivalent(&self, other: &ConvexVelocitySet, tol: f64) -> Result<bool> {
        Ok(self.contains_set(other, tol)? && other.contains_set(self, tol)?)
    }

    /// The element of smallest Euclidean norm.
    pub fn least_norm_element(&self) -> Vec<f64> {
        let zero = vec![0.0; self.dim()];
        self.project(&zero)
            .expect("dimension checked at construction")
            .point
    }
}

/// Wolfe's algorithm: convex weights of the minimum-norm point in co(points).
fn min_norm_weights(points: &[Vec<f64>]) -> Vec<f64> {
    let m = points.len();
    let scale = points
        .iter()
        .map(|p| dot(p, p))
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let stop_tol = 1e-15 * scale;

    let start = (0..m)
        .min_by(|&i, &j| dot(&points[i], &points[i]).total_cmp(&dot(&points[j], &points[j])))
        .expect("non-empty");
    let mut active = vec![start];
    let mut lambda = vec![1.0];
    let mut x = points[start].clone();

    let max_major = 50 * (m + x.len() + 1);
    for _ in 0..max_major {
        let xx = dot(&x, &x);
        if xx == 0.0 {
            break;
        }
        let (j, xp) = (0..m)
            .map(|j| (j, dot(&x, &points[j])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty");
        if xx - xp <= stop_tol || active.contains(&j) {
            break;
        }
        active.push(j);
        lambda.push(0.0);

        loop {
            let mu = affine_min_norm(points, &active);
            if mu.iter().all(|&w| w > 1e-14) {
                lambda = mu;
                break;
            }
            let mut theta = 1.0_f64;
            for (l, u) in lambda.iter().zip(&mu) {
                if *u <= 1e-14 && l - u > 0.0 {
                    theta = theta.min(l / (l - u));
                }
            }
            for (l, u) in lambda.iter_mut().zip(&mu) {
                *l += theta * (u - *l);
            }
            let mut k = 0;
            while k < active.len() {
                if lambda[k] <= 1e-14 {
                    active.remove(k);
                    lambda.remove(k);
                } else {
                    k += 1;
                }
            }
            let total: f64 = lambda.iter().sum();
            lambda.iter_mut().for_each(|l| *l /= total);
            if active.len() <= 1 {
                break;
            }
        }
        x = combine(points, &active, &lambda);
    }

    let mut weights = vec![0.0; m];
    for (i, l) in active.iter().zip(&lambda) {
        weights[*i] += l;
    }
    weights
}

fn combine(points: &[Vec<f64>], active: &[usize], lambda: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; points[0].len()];
    for (i, l) in active.iter().zip(lambda) {
        for (xj, pj) in x.iter_mut().zip(&points[*i]) {
            *xj += l * pj;
        }
    }
    x
}

/// Affine weights of the minimum-norm point on the affine hull of `points[active]`.
fn affine_min_norm(points: &[Vec<f64>], active: &[usize]) -> Vec<f64> {
    let k = active.len();
    if k == 1 {
        return vec![1.0];
    }
    let d = points[0].len();
    let base = &points[active[0]];
    let diffs = DMatrix::from_fn(d, k - 1, |r, c| points[active[c + 1]][r] - base[r]);
    let rhs = DVector::from_iterator(d, base.iter().map(|b| -b));
    let svd = diffs.svd(true, true);
    let eps = 1e-13 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    let coeffs = svd
        .solve(&rhs, eps)
        .unwrap_or_else(|_| DVector::zeros(k - 1));
    let mut mu = Vec::with_capacity(k);
    mu.push(1.0 - coeffs.sum());
    mu.extend(coeffs.iter().copied());
    mu
}
