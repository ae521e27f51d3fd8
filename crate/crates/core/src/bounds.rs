//! Fisher information and position error bounds for known-height 2D and full
//! 3D localization under Gaussian range noise.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{check_len, Error, Result};
use crate::geometry::{path_gradient, virtual_anchor, Anchor, Target3D, SINGULARITY_GUARD};

/// Largest condition number for which the FIM is treated as invertible.
pub const MAX_FIM_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dim {
    /// Horizontal coordinates with the height known.
    Two,
    Three,
}

impl Dim {
    pub fn size(self) -> usize {
        match self {
            Dim::Two => 2,
            Dim::Three => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fim {
    pub dim: Dim,
    pub matrix: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peb {
    pub value: f64,
}

/// Gradient of every path length with respect to the estimated coordinates.
pub fn path_gradients(anchors: &[Anchor], target: &Target3D, dim: Dim) -> Result<Vec<Vec<f64>>> {
    anchors
        .iter()
        .enumerate()
        .map(|(k, a)| match dim {
            Dim::Two => {
                let va = virtual_anchor(a, target.z);
                let p = va.distance(&target.xy());
                if p <= SINGULARITY_GUARD {
                    return Err(Error::DegenerateGeometry { index: k });
                }
                Ok(vec![(target.x - va.x) / p, (target.y - va.minus_r_perp) / p])
            }
            Dim::Three => path_gradient(a, target, k).map(|(_, g)| g.to_vec()),
        })
        .collect()
}

/// `sum_k g_k g_k^T / sigma_k^2`.
pub fn fim(anchors: &[Anchor], sigmas: &[f64], target: &Target3D, dim: Dim) -> Result<Fim> {
    check_len(anchors.len(), sigmas.len())?;
    let d = dim.size();
    let mut matrix = DMatrix::zeros(d, d);
    for (g, s) in path_gradients(anchors, target, dim)?.iter().zip(sigmas) {
        let w = 1.0 / (s * s);
        for i in 0..d {
            for j in 0..d {
                matrix[(i, j)] += w * g[i] * g[j];
            }
        }
    }
    Ok(Fim { dim, matrix })
}

/// `sqrt(trace(FIM^-1))`.
pub fn peb(f: &Fim) -> Result<Peb> {
    let eig = SymmetricEigen::new(f.matrix.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min <= max / MAX_FIM_CONDITION {
        return Err(Error::SingularFim);
    }
    // trace of the inverse is the sum of reciprocal eigenvalues
    Ok(Peb { value: eig.eigenvalues.iter().map(|l| 1.0 / l).sum::<f64>().sqrt() })
}
