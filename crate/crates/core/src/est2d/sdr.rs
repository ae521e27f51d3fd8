use nalgebra::{DMatrix, SymmetricEigen};

use super::{Diagnostics2D, Estimate2D, PlaneData};
use crate::error::{Error, Result};
use crate::geometry::{Anchor, Target2D};
use crate::sdp::{self, ConicProgram, SdpConfig, SdpStatus, SymSparse};

/// Semidefinite relaxation of the range-domain objective at a fixed height.
///
/// The lifted matrix `Z` is the Gram matrix of `[x, y, t_1 .. t_K, 1]`, where
/// `t_k` stands for the distance to virtual anchor `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdrProblem {
    pub plane: PlaneData,
    /// Pairwise virtual-anchor distances.
    pub distances: DMatrix<f64>,
}

pub fn build_sdr(anchors: &[Anchor], z0: f64, ranges: &[f64], sigmas: &[f64]) -> Result<SdrProblem> {
    let plane = PlaneData::new(anchors, z0, ranges, sigmas)?;
    let k = plane.len();
    let a = &plane.anchors;
    let distances = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            0.0
        } else {
            (a[i].x - a[j].x).hypot(a[i].minus_r_perp - a[j].minus_r_perp)
        }
    });
    Ok(SdrProblem { plane, distances })
}

impl SdrProblem {
    /// Matrix dimension `K + 3`.
    pub fn dim(&self) -> usize {
        self.plane.len() + 3
    }

    /// Conic program over the normalized matrix, in which every length is
    /// divided by `length_scale` and every weight by `weight_scale`.
    pub fn to_conic_scaled(&self, length_scale: f64, weight_scale: f64) -> ConicProgram {
        let k = self.plane.len();
        let n = k + 3;
        let one = n - 1;
        let t = |i: usize| i + 2;
        let mut p = ConicProgram::new(n);

        for i in 0..k {
            let w = self.plane.weights[i] / weight_scale;
            let r = self.plane.ranges[i] / length_scale;
            p.cost.add(t(i), t(i), w);
            p.cost.add(t(i), one, -w * r);
            p.offset += w * r * r;
        }

        p.equalities.push((SymSparse::new().with(one, one, 1.0), 1.0));
        for (i, a) in self.plane.anchors.iter().enumerate() {
            let (ax, ay) = (a.x / length_scale, a.minus_r_perp / length_scale);
            let row = SymSparse::new()
                .with(t(i), t(i), 1.0)
                .with(0, 0, -1.0)
                .with(1, 1, -1.0)
                .with(0, one, ax)
                .with(1, one, ay);
            p.equalities.push((row, ax * ax + ay * ay));
        }

        for i in 0..k {
            p.inequalities.push((SymSparse::new().with(t(i), one, -0.5), 0.0));
        }
        for i in 0..k {
            for j in (i + 1)..k {
                let d = self.distances[(i, j)] / length_scale;
                let spread = SymSparse::new().with(t(i), t(i), 1.0).with(t(j), t(j), 1.0).with(t(i), t(j), -1.0);
                p.inequalities.push((spread, d * d));
                let sum = SymSparse::new().with(t(i), one, -0.5).with(t(j), one, -0.5);
                p.inequalities.push((sum, -d));
            }
        }
        p
    }

    /// Conic program in the original units.
    pub fn to_conic(&self) -> ConicProgram {
        self.to_conic_scaled(1.0, 1.0)
    }

    /// Scales that bring lengths and weights to order one.
    pub fn normalization(&self) -> (f64, f64) {
        let length = self
            .plane
            .anchors
            .iter()
            .map(|a| a.norm_sq().sqrt())
            .chain(self.plane.ranges.iter().map(|r| r.abs()))
            .fold(1.0, f64::max);
        let weight = self.plane.weights.iter().copied().fold(f64::MIN_POSITIVE, f64::max);
        (length, weight)
    }
}

/// Solves the relaxation and reads `(x, y)` from the last column of `Z`.
pub fn solve_sdr(p: &SdrProblem, cfg: &SdpConfig) -> Result<Estimate2D> {
    let (ls, ws) = p.normalization();
    let program = p.to_conic_scaled(ls, ws);
    let sol = sdp::solve(&program, cfg)?;
    if sol.status != SdpStatus::Optimal {
        return Err(Error::SolverFailed(format!(
            "{:?} after {} iterations, residuals {:?}",
            sol.status, sol.iterations, sol.residuals
        )));
    }
    let n = p.dim();
    let one = n - 1;
    let z = DMatrix::from_fn(n, n, |i, j| {
        let si = if i == one { 1.0 } else { ls };
        let sj = if j == one { 1.0 } else { ls };
        sol.z[(i, j)] * si * sj
    });
    let mut eig: Vec<f64> = SymmetricEigen::new(z.clone()).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let rank_ratio = if eig[0] > 0.0 { eig[1].max(0.0) / eig[0] } else { f64::INFINITY };

    let point = Target2D::new(z[(0, one)], z[(1, one)]);
    Ok(Estimate2D {
        x: point.x,
        y: point.y,
        objective: p.plane.rls_cost(&point),
        diagnostics: Diagnostics2D {
            lambda_star: None,
            iterations: sol.iterations,
            sdp_rank_ratio: Some(rank_ratio),
            surrogate_objective: sol.primal_objective * ws * ls * ls,
        },
    })
}
