//! Fixed-height 2D estimators on the virtual-anchor plane.
//!
//! With the target height known, every anchor becomes a virtual anchor and
//! the path lengths are plain Euclidean distances. Three estimators are
//! provided:
//!
//! * [`solve_gtrs`]: the squared-range least-squares surrogate solved exactly
//!   as a generalized trust-region subproblem by bisection on the multiplier.
//! * [`solve_usr`]: the same surrogate with the consistency constraint
//!   dropped, solved as weighted linear least squares.
//! * [`solve_sdr`]: a semidefinite relaxation of the range-domain objective.

mod lifted;
mod sdr;

use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::geometry::{virtual_anchors, Anchor, Target2D, VirtualAnchor, Weights};

pub use lifted::{build_lifted, solve_gtrs, solve_gtrs_traced, solve_usr, Bracket, GtrsConfig, GtrsProblem, UsrSystem};
pub use sdr::{build_sdr, solve_sdr, SdrProblem};

/// Smallest `|r_k|` accepted by the squared-range weights `1 / (4 sigma^2 r^2)`.
pub const RANGE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Diagnostics2D {
    /// Multiplier at the GTRS root.
    pub lambda_star: Option<f64>,
    /// Bisection steps for GTRS, interior point iterations for SDR.
    pub iterations: usize,
    /// `lambda_2 / lambda_1` of the SDR solution matrix.
    pub sdp_rank_ratio: Option<f64>,
    /// Value of the objective the solver actually minimized.
    pub surrogate_objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate2D {
    pub x: f64,
    pub y: f64,
    /// Range-domain least-squares cost at the estimate.
    pub objective: f64,
    pub diagnostics: Diagnostics2D,
}

impl Estimate2D {
    pub fn point(&self) -> Target2D {
        Target2D::new(self.x, self.y)
    }
}

/// Measurements seen from one candidate height.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneData {
    pub anchors: Vec<VirtualAnchor>,
    pub ranges: Vec<f64>,
    /// `1 / sigma_k^2`.
    pub weights: Vec<f64>,
}

impl PlaneData {
    pub fn new(anchors: &[Anchor], z0: f64, ranges: &[f64], sigmas: &[f64]) -> Result<Self> {
        check_len(anchors.len(), ranges.len())?;
        check_len(anchors.len(), sigmas.len())?;
        if anchors.len() < 3 {
            return Err(Error::TooFewAnchors { needed: 3, found: anchors.len() });
        }
        if !z0.is_finite() || ranges.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidParams("non-finite height or range".into()));
        }
        let weights = Weights::from_sigmas(sigmas)?;
        Ok(Self { anchors: virtual_anchors(anchors, z0), ranges: ranges.to_vec(), weights: weights.as_slice().to_vec() })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn rls_cost(&self, p: &Target2D) -> f64 {
        self.anchors
            .iter()
            .zip(&self.ranges)
            .zip(&self.weights)
            .map(|((a, r), w)| {
                let e = a.distance(p) - r;
                w * e * e
            })
            .sum()
    }
}

/// Weighted range-domain least-squares cost at height `z0`.
pub fn rls_cost_2d(anchors: &[Anchor], z0: f64, weights: &Weights, ranges: &[f64], point: &Target2D) -> Result<f64> {
    check_len(anchors.len(), weights.len())?;
    check_len(anchors.len(), ranges.len())?;
    Ok(virtual_anchors(anchors, z0)
        .iter()
        .zip(weights.as_slice())
        .zip(ranges)
        .map(|((a, w), r)| {
            let e = a.distance(point) - r;
            w * e * e
        })
        .sum())
}

#[cfg(test)]
mod tests;
