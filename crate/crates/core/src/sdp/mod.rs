//! Small dense semidefinite programs.
//!
//! Solves
//!
//! ```text
//! minimize    <C, Z> + offset
//! subject to  <A_i, Z>  = b_i
//!             <G_j, Z> <= h_j
//!             Z psd
//! ```
//!
//! with an infeasible-start primal-dual interior point method. Each inequality
//! gets a nonnegative scalar slack, so the cone is `S^n_+ x R^p_+`. Search
//! directions use Nesterov-Todd scaling with a Mehrotra predictor-corrector;
//! everything is dense. Meant for `n` up to a few dozen.

mod ipm;
mod triplet;

use nalgebra::DMatrix;

pub use ipm::solve;
pub use triplet::{read_triplets, write_triplets};

/// Symmetric sparse matrix stored as upper-triangle entries `(i, j, v)` with
/// `i <= j`; the matrix holds `v` at both `(i, j)` and `(j, i)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymSparse {
    entries: Vec<(usize, usize, f64)>,
}

impl SymSparse {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `v` at `(i, j)` and `(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) -> &mut Self {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        match self.entries.iter_mut().find(|e| e.0 == i && e.1 == j) {
            Some(e) => e.2 += v,
            None => self.entries.push((i, j, v)),
        }
        self
    }

    pub fn with(mut self, i: usize, j: usize, v: f64) -> Self {
        self.add(i, j, v);
        self
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn max_index(&self) -> Option<usize> {
        self.entries.iter().map(|e| e.1).max()
    }

    /// Frobenius inner product with a dense symmetric matrix.
    pub fn dot(&self, z: &DMatrix<f64>) -> f64 {
        self.entries
            .iter()
            .map(|&(i, j, v)| if i == j { v * z[(i, i)] } else { 2.0 * v * z[(i, j)] })
            .sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|&(i, j, v)| if i == j { v * v } else { 2.0 * v * v })
            .sum::<f64>()
            .sqrt()
    }

    /// Adds `scale * self` into a dense matrix.
    pub fn add_to_dense(&self, scale: f64, out: &mut DMatrix<f64>) {
        for &(i, j, v) in &self.entries {
            out[(i, j)] += scale * v;
            if i != j {
                out[(j, i)] += scale * v;
            }
        }
    }

    pub fn to_dense(&self, n: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(n, n);
        self.add_to_dense(1.0, &mut out);
        out
    }

    /// Both triangles, one entry per stored matrix element.
    pub(crate) fn full_entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(2 * self.entries.len());
        for &(i, j, v) in &self.entries {
            out.push((i, j, v));
            if i != j {
                out.push((j, i, v));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConicProgram {
    pub n: usize,
    pub cost: SymSparse,
    /// Constant added to the objective.
    pub offset: f64,
    /// `<A_i, Z> = b_i`.
    pub equalities: Vec<(SymSparse, f64)>,
    /// `<G_j, Z> <= h_j`.
    pub inequalities: Vec<(SymSparse, f64)>,
}

impl ConicProgram {
    pub fn new(n: usize) -> Self {
        Self { n, ..Default::default() }
    }

    pub fn objective(&self, z: &DMatrix<f64>) -> f64 {
        self.cost.dot(z) + self.offset
    }

    /// Largest scaled violation of the affine constraints at `z`:
    /// `|<A_i,Z> - b_i| / (1 + |b_i|)` and `max(0, <G_j,Z> - h_j) / (1 + |h_j|)`.
    pub fn max_violation(&self, z: &DMatrix<f64>) -> f64 {
        let eq = self.equalities.iter().map(|(a, b)| (a.dot(z) - b).abs() / (1.0 + b.abs()));
        let ineq = self.inequalities.iter().map(|(g, h)| (g.dot(z) - h).max(0.0) / (1.0 + h.abs()));
        eq.chain(ineq).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpConfig {
    /// A solution is reported optimal when every scaled residual is below this.
    pub tol: f64,
    /// Iterations continue until the residuals reach this (or progress
    /// stalls); values below `tol` buy extra accuracy on degenerate programs.
    pub target_tol: f64,
    pub max_iters: usize,
    /// Largest fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
}

impl SdpConfig {
    /// Keeps iterating well past the acceptance tolerance. Tight relaxations
    /// lack strict complementarity, so the iterate approaches the rank-one
    /// solution only like the square root of the gap.
    pub fn high_accuracy() -> Self {
        Self { target_tol: 1e-14, ..Self::default() }
    }
}

impl Default for SdpConfig {
    fn default() -> Self {
        Self { tol: 1e-7, target_tol: 1e-7, max_iters: 500, step_fraction: 0.98 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    MaxIters,
    Infeasible,
}

/// Scaled residuals: primal `max_i |r_i| / (1 + |b_i|)`, dual
/// `||C - A*(y) - S|| / (1 + ||C||)` and gap `max(|pobj - dobj|, <X,S>) / (1 + |pobj|)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub residuals: Residuals,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub z: DMatrix<f64>,
    /// Multipliers, equalities first then inequalities (nonpositive).
    pub y: Vec<f64>,
    pub status: SdpStatus,
    pub residuals: Residuals,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub log: Vec<IterationLog>,
}
