use nalgebra::{SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::{path_gradient, path_length, Anchor, Target2D, Target3D, VirtualAnchor, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnConfig {
    /// Iterations run on every seed by the polish stage.
    pub polish_steps: usize,
    /// Iteration cap of the standalone runs.
    pub max_iters: usize,
    /// Standalone runs stop once a step is shorter than this, in meters.
    pub step_tol: f64,
    /// First Tikhonov shift tried on a failed factorization, relative to
    /// `trace(J^T W J)`. Escalates by 10x up to `jitter_max`.
    pub jitter_start: f64,
    pub jitter_max: f64,
    /// Halve a step until the cost does not increase.
    pub step_halving: bool,
    pub max_halvings: usize,
}

impl Default for GnConfig {
    fn default() -> Self {
        Self {
            polish_steps: 5,
            max_iters: 50,
            step_tol: 1e-9,
            jitter_start: 1e-12,
            jitter_max: 1e-6,
            step_halving: false,
            max_halvings: 8,
        }
    }
}

impl GnConfig {
    pub fn with_halving(self, on: bool) -> Self {
        Self { step_halving: on, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.polish_steps == 0 || self.max_iters == 0 {
            return Err(Error::InvalidParams("Gauss-Newton iteration counts must be at least 1".into()));
        }
        if !(self.step_tol >= 0.0 && self.jitter_start > 0.0 && self.jitter_max >= self.jitter_start) {
            return Err(Error::InvalidParams("invalid Gauss-Newton tolerances".into()));
        }
        Ok(())
    }
}

/// Solves `A d = g` for a symmetric positive semidefinite `A`, adding a
/// growing multiple of the identity when the plain factorization fails.
fn solve_normal<const D: usize>(
    a: &SMatrix<f64, D, D>,
    g: &SVector<f64, D>,
    cfg: &GnConfig,
) -> Result<SVector<f64, D>> {
    if let Some(ch) = a.cholesky() {
        return Ok(ch.solve(g));
    }
    let trace = a.trace();
    if !(trace.is_finite() && trace > 0.0) {
        return Err(Error::SingularNormalMatrix);
    }
    let mut shift = cfg.jitter_start;
    while shift <= cfg.jitter_max * (1.0 + 1e-9) {
        let shifted = a + SMatrix::<f64, D, D>::identity() * (shift * trace);
        if let Some(ch) = shifted.cholesky() {
            return Ok(ch.solve(g));
        }
        shift *= 10.0;
    }
    Err(Error::SingularNormalMatrix)
}

/// `J^T W J`, `J^T W (r - p)` and the cost at `x`.
fn linearize_3d(anchors: &[Anchor], w: &[f64], ranges: &[f64], x: &Target3D) -> Result<(nalgebra::Matrix3<f64>, Vector3<f64>, f64)> {
    let mut normal = nalgebra::Matrix3::zeros();
    let mut grad = Vector3::zeros();
    let mut cost = 0.0;
    for (k, ((a, wk), r)) in anchors.iter().zip(w).zip(ranges).enumerate() {
        let (p, row) = path_gradient(a, x, k)?;
        let j = Vector3::from(row);
        let e = r - p;
        normal += j * j.transpose() * *wk;
        grad += j * (wk * e);
        cost += wk * e * e;
    }
    Ok((normal, grad, cost))
}

fn linearize_2d(anchors: &[VirtualAnchor], w: &[f64], ranges: &[f64], x: &Target2D) -> Result<(nalgebra::Matrix2<f64>, Vector2<f64>, f64)> {
    let mut normal = nalgebra::Matrix2::zeros();
    let mut grad = Vector2::zeros();
    let mut cost = 0.0;
    for (k, ((a, wk), r)) in anchors.iter().zip(w).zip(ranges).enumerate() {
        let p = a.distance(x);
        if p <= crate::geometry::SINGULARITY_GUARD {
            return Err(Error::DegenerateGeometry { index: k });
        }
        let j = Vector2::new((x.x - a.x) / p, (x.y - a.minus_r_perp) / p);
        let e = r - p;
        normal += j * j.transpose() * *wk;
        grad += j * (wk * e);
        cost += wk * e * e;
    }
    Ok((normal, grad, cost))
}

/// Outcome of a Gauss-Newton run.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Run<const D: usize> {
    pub point: SVector<f64, D>,
    pub cost: f64,
    pub iterations: usize,
    /// Cost at the start and after every accepted iteration.
    pub costs: Vec<f64>,
}

/// Runs at most `iters` Gauss-Newton iterations. With `early_stop` the run
/// ends once a step is shorter than `cfg.step_tol`; with step halving it also
/// ends when no halved step keeps the cost from rising.
fn iterate<const D: usize, L, C>(
    linearize: L,
    cost_at: C,
    start: SVector<f64, D>,
    iters: usize,
    early_stop: bool,
    cfg: &GnConfig,
) -> Result<Run<D>>
where
    L: Fn(&SVector<f64, D>) -> Result<(SMatrix<f64, D, D>, SVector<f64, D>, f64)>,
    C: Fn(&SVector<f64, D>) -> f64,
{
    let mut x = start;
    let mut costs = Vec::with_capacity(iters + 1);
    let mut iterations = 0;
    for _ in 0..iters {
        let (normal, grad, cost) = linearize(&x)?;
        if costs.is_empty() {
            costs.push(cost);
        }
        let delta = solve_normal(&normal, &grad, cfg)?;
        if !delta.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalBreakdown("non-finite Gauss-Newton step".into()));
        }
        let (next, next_cost) = if cfg.step_halving {
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..=cfg.max_halvings {
                let cand = x + delta * t;
                let c = cost_at(&cand);
                if c <= cost {
                    accepted = Some((cand, c));
                    break;
                }
                t *= 0.5;
            }
            match accepted {
                Some(a) => a,
                None => break,
            }
        } else {
            let cand = x + delta;
            (cand, cost_at(&cand))
        };
        let step = (next - x).norm();
        x = next;
        costs.push(next_cost);
        iterations += 1;
        if early_stop && step < cfg.step_tol {
            break;
        }
    }
    let cost = cost_at(&x);
    if costs.is_empty() {
        costs.push(cost);
    }
    Ok(Run { point: x, cost, iterations, costs })
}

fn to_vec(t: &Target3D) -> Vector3<f64> {
    Vector3::new(t.x, t.y, t.z)
}

fn to_target(v: &Vector3<f64>) -> Target3D {
    Target3D::new(v.x, v.y, v.z)
}

fn check(anchors: &[Anchor], weights: &Weights, ranges: &[f64]) -> Result<()> {
    check_len(anchors.len(), weights.len())?;
    check_len(anchors.len(), ranges.len())
}

fn cost_3d(anchors: &[Anchor], w: &[f64], ranges: &[f64], v: &Vector3<f64>) -> f64 {
    let t = to_target(v);
    anchors
        .iter()
        .zip(w)
        .zip(ranges)
        .map(|((a, wk), r)| {
            let e = path_length(a, &t) - r;
            wk * e * e
        })
        .sum()
}

/// One Gauss-Newton update `x + (J^T W J)^-1 J^T W (r - p(x))`.
pub fn gn_step(anchors: &[Anchor], weights: &Weights, ranges: &[f64], x: &Target3D, cfg: &GnConfig) -> Result<Target3D> {
    check(anchors, weights, ranges)?;
    let (normal, grad, _) = linearize_3d(anchors, weights.as_slice(), ranges, x)?;
    let delta = solve_normal(&normal, &grad, cfg)?;
    if !delta.iter().all(|v| v.is_finite()) {
        return Err(Error::NumericalBreakdown("non-finite Gauss-Newton step".into()));
    }
    Ok(to_target(&(to_vec(x) + delta)))
}

pub(crate) fn run_3d(
    anchors: &[Anchor],
    weights: &Weights,
    ranges: &[f64],
    start: &Target3D,
    iters: usize,
    early_stop: bool,
    cfg: &GnConfig,
) -> Result<(Target3D, Run<3>)> {
    check(anchors, weights, ranges)?;
    let w = weights.as_slice();
    let run = iterate(
        |v| linearize_3d(anchors, w, ranges, &to_target(v)),
        |v| cost_3d(anchors, w, ranges, v),
        to_vec(start),
        iters,
        early_stop,
        cfg,
    )?;
    Ok((to_target(&run.point), run))
}

/// Gauss-Newton on the horizontal coordinates with the height held fixed.
pub(crate) fn run_2d(anchors: &[VirtualAnchor], w: &[f64], ranges: &[f64], start: &Target2D, cfg: &GnConfig) -> Result<Target2D> {
    let cost = |v: &Vector2<f64>| {
        let p = Target2D::new(v.x, v.y);
        anchors
            .iter()
            .zip(w)
            .zip(ranges)
            .map(|((a, wk), r)| {
                let e = a.distance(&p) - r;
                wk * e * e
            })
            .sum()
    };
    let run = iterate(
        |v| linearize_2d(anchors, w, ranges, &Target2D::new(v.x, v.y)),
        cost,
        Vector2::new(start.x, start.y),
        cfg.max_iters,
        true,
        cfg,
    )?;
    Ok(Target2D::new(run.point.x, run.point.y))
}
