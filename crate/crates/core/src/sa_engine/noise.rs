use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Independent `N(0, scale^2)` coordinates.
    Gaussian,
    /// Uniform on the ball of radius `scale`.
    UniformBall,
    /// Independent `+-scale` coordinates.
    Rademacher,
    Zero,
}

/// State-independent martingale-difference noise `M(n+1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    #[serde(default)]
    pub scale: f64,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, scale: f64) -> Self {
        Self { kind, scale }
    }

    pub fn zero() -> Self {
        Self::new(NoiseKind::Zero, 0.0)
    }

    pub fn gaussian(scale: f64) -> Self {
        Self::new(NoiseKind::Gaussian, scale)
    }

    pub fn rademacher(scale: f64) -> Self {
        Self::new(NoiseKind::Rademacher, scale)
    }

    pub fn uniform_ball(scale: f64) -> Self {
        Self::new(NoiseKind::UniformBall, scale)
    }

    /// Whether the conditional law has a Lebesgue density.
    pub fn density_flag(&self) -> bool {
        matches!(self.kind, NoiseKind::Gaussian | NoiseKind::UniformBall) && self.scale > 0.0
    }

    /// Constant `K` in `E[|M|^2 | F_n] <= K (1 + |x|^2)`.
    pub fn second_moment_constant(&self, d: usize) -> f64 {
        match self.kind {
            NoiseKind::Zero => 0.0,
            _ => self.scale * self.scale * d as f64,
        }
    }

    pub(crate) fn check(&self, path: &str) -> Result<()> {
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(Error::config(path, "scale must be finite and >= 0"));
        }
        Ok(())
    }

    /// One draw at state `x`. Draws do not depend on `x`.
    pub fn sample<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        let d = x.len();
        let s = self.scale;
        match self.kind {
            NoiseKind::Zero => vec![0.0; d],
            NoiseKind::Gaussian => (0..d)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(rng);
                    s * g
                })
                .collect(),
            NoiseKind::Rademacher => (0..d)
                .map(|_| if rng.random::<bool>() { s } else { -s })
                .collect(),
            NoiseKind::UniformBall => {
                let dir: Vec<f64> = loop {
                    let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                    let len = crate::vector::norm(&g);
                    if len > 0.0 {
                        break g.into_iter().map(|v| v / len).collect();
                    }
                };
                let r = s * rng.random::<f64>().powf(1.0 / d as f64);
                dir.into_iter().map(|v| v * r).collect()
            }
        }
    }
}
