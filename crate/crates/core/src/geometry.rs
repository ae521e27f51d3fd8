//! Unified LOS/NLOS path-length model and the virtual-anchor embedding.
//!
//! The diffracting edge runs along the x axis at y = 0. An anchor at
//! `(x_k, y_k, z_k)` reaches a target at `(x, y, z)` over a path of length
//!
//! ```text
//! p_k = sqrt((x_k - x)^2 + (sqrt(y_k^2 + (z_k - z)^2) + y)^2)
//! ```
//!
//! which reduces to the in-plane Euclidean distance when `z_k = z`. Fixing
//! the target height `z0` turns every anchor into a virtual anchor
//! `[x_k, -r_perp,k(z0)]` in a 2D plane where the model is exactly Euclidean.
//!
//! All lengths are in meters.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Guard applied to `p_k` and `r_perp,k` wherever derivatives divide by them.
pub const SINGULARITY_GUARD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Anchor {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Target3D {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn from_xy(xy: Target2D, z: f64) -> Self {
        Self { x: xy.x, y: xy.y, z }
    }

    pub const fn xy(&self) -> Target2D {
        Target2D { x: self.x, y: self.y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Target3D) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target2D {
    pub x: f64,
    pub y: f64,
}

impl Target2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Target2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// An anchor mapped into the fixed-height virtual plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualAnchor {
    pub x: f64,
    /// Always `<= 0`; equals `-r_perp,k(z0)`.
    pub minus_r_perp: f64,
}

impl VirtualAnchor {
    pub fn r_perp(&self) -> f64 {
        -self.minus_r_perp
    }

    pub fn norm_sq(&self) -> f64 {
        self.x * self.x + self.minus_r_perp * self.minus_r_perp
    }

    /// Euclidean distance from a point in the virtual plane.
    pub fn distance(&self, p: &Target2D) -> f64 {
        (p.x - self.x).hypot(p.y - self.minus_r_perp)
    }
}

/// Per-anchor inverse noise variances `w_k = 1 / sigma_k^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights(Vec<f64>);

impl Weights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidParams(format!("weight {bad} is not positive and finite")));
        }
        Ok(Self(w))
    }

    pub fn from_sigmas(sigmas: &[f64]) -> Result<Self> {
        Self::new(sigmas.iter().map(|s| 1.0 / (s * s)).collect())
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn r_perp(anchor: &Anchor, z0: f64) -> f64 {
    anchor.y.hypot(anchor.z - z0)
}

pub fn path_length(anchor: &Anchor, target: &Target3D) -> f64 {
    let b = r_perp(anchor, target.z) + target.y;
    (anchor.x - target.x).hypot(b)
}

pub fn virtual_anchor(anchor: &Anchor, z0: f64) -> VirtualAnchor {
    VirtualAnchor { x: anchor.x, minus_r_perp: -r_perp(anchor, z0) }
}

pub fn virtual_anchors(anchors: &[Anchor], z0: f64) -> Vec<VirtualAnchor> {
    anchors.iter().map(|a| virtual_anchor(a, z0)).collect()
}

/// Weighted range-domain least-squares cost `sum_k w_k (p_k - r_k)^2`.
pub fn rls_cost_3d(anchors: &[Anchor], weights: &Weights, ranges: &[f64], target: &Target3D) -> Result<f64> {
    check_len(anchors.len(), weights.len())?;
    check_len(anchors.len(), ranges.len())?;
    Ok(anchors
        .iter()
        .zip(weights.as_slice())
        .zip(ranges)
        .map(|((a, w), r)| {
            let e = path_length(a, target) - r;
            w * e * e
        })
        .sum())
}

/// Path length and its gradient with respect to `(x, y, z)`.
pub(crate) fn path_gradient(anchor: &Anchor, target: &Target3D, index: usize) -> Result<(f64, [f64; 3])> {
    let rp = r_perp(anchor, target.z);
    let a = anchor.x - target.x;
    let b = rp + target.y;
    let p = a.hypot(b);
    if p <= SINGULARITY_GUARD || rp <= SINGULARITY_GUARD {
        return Err(Error::DegenerateGeometry { index });
    }
    Ok((p, [-a / p, b / p, -b * (anchor.z - target.z) / (p * rp)]))
}

/// K x 3 Jacobian of the path lengths; row k is the gradient of `p_k`.
pub fn jacobian_3d(anchors: &[Anchor], target: &Target3D) -> Result<DMatrix<f64>> {
    let mut jac = DMatrix::zeros(anchors.len(), 3);
    for (k, a) in anchors.iter().enumerate() {
        let (_, row) = path_gradient(a, target, k)?;
        for (c, v) in row.into_iter().enumerate() {
            jac[(k, c)] = v;
        }
    }
    Ok(jac)
}
