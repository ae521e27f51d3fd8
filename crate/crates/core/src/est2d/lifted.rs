use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, SymmetricEigen, Vector3};

use super::{Diagnostics2D, Estimate2D, PlaneData, RANGE_FLOOR};
use crate::error::{Error, Result};
use crate::geometry::{Anchor, Target2D};

/// Largest accepted condition number of the equilibrated normal matrix.
const MAX_NORMAL_CONDITION: f64 = 1e12;
/// Cap on bracket expansion steps.
const MAX_BRACKET_STEPS: usize = 200;

/// Squared-range surrogate `u^T M u + 2 m^T u + gamma` over the lifted point
/// `u = [x, y, x^2 + y^2]`, subject to `u1^2 + u2^2 - u3 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GtrsProblem {
    pub quad: Matrix3<f64>,
    pub lin: Vector3<f64>,
    pub constant: f64,
    pub plane: PlaneData,
}

/// Stacked rows `q_k^T`, right-hand sides `r_k^2 - c_k` and weights of the
/// unconstrained weighted linear least-squares form.
#[derive(Debug, Clone, PartialEq)]
pub struct UsrSystem {
    pub design: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub weights: DVector<f64>,
    pub plane: PlaneData,
}

/// Builds both lifted forms. Row `k` is `q_k = [-2 x_k, 2 r_perp,k, 1]` with
/// right-hand side `r_k^2 - |a_k|^2` and weight `1 / (4 sigma_k^2 r_k^2)`.
pub fn build_lifted(anchors: &[Anchor], z0: f64, ranges: &[f64], sigmas: &[f64]) -> Result<(GtrsProblem, UsrSystem)> {
    let plane = PlaneData::new(anchors, z0, ranges, sigmas)?;
    if let Some((index, &range)) = ranges.iter().enumerate().find(|(_, r)| r.abs() < RANGE_FLOOR) {
        return Err(Error::RangeUnderflow { index, range });
    }
    let k = plane.len();
    let mut design = DMatrix::zeros(k, 3);
    let mut rhs = DVector::zeros(k);
    let mut weights = DVector::zeros(k);
    let mut quad = Matrix3::zeros();
    let mut lin = Vector3::zeros();
    let mut constant = 0.0;
    for (i, a) in plane.anchors.iter().enumerate() {
        let q = Vector3::new(-2.0 * a.x, 2.0 * a.r_perp(), 1.0);
        let r = plane.ranges[i];
        let delta = r * r - a.norm_sq();
        let w = plane.weights[i] / (4.0 * r * r);
        design.row_mut(i).copy_from(&q.transpose());
        rhs[i] = delta;
        weights[i] = w;
        quad += q * q.transpose() * w;
        lin -= q * (w * delta);
        constant += w * delta * delta;
    }
    let gtrs = GtrsProblem { quad, lin, constant, plane: plane.clone() };
    Ok((gtrs, UsrSystem { design, rhs, weights, plane }))
}

fn lift(p: &Target2D) -> Vector3<f64> {
    Vector3::new(p.x, p.y, p.x * p.x + p.y * p.y)
}

impl GtrsProblem {
    pub fn cost(&self, u: &Vector3<f64>) -> f64 {
        u.dot(&(self.quad * u)) + 2.0 * self.lin.dot(u) + self.constant
    }

    /// Surrogate cost at the lifted image of a plane point.
    pub fn cost_at(&self, p: &Target2D) -> f64 {
        self.cost(&lift(p))
    }

    /// Bound on `|phi|` at which the bisection stops.
    pub fn root_tolerance(&self, cfg: &GtrsConfig) -> f64 {
        let length_sq = self.plane.anchors.iter().map(|a| a.norm_sq()).fold(0.0, f64::max);
        cfg.tol_scale * (1.0 + length_sq)
    }

    /// `u1^2 + u2^2 - u3`; zero exactly on lifted points.
    pub fn consistency(u: &Vector3<f64>) -> f64 {
        u.x * u.x + u.y * u.y - u.z
    }

    fn shifted(&self, lambda: f64) -> Matrix3<f64> {
        let mut a = self.quad;
        a[(0, 0)] += lambda;
        a[(1, 1)] += lambda;
        a
    }

    /// Stationary point `-(M + lambda H)^-1 (m + lambda h)`, or `None` when
    /// the shifted matrix is not positive definite.
    pub fn u_of(&self, lambda: f64) -> Option<Vector3<f64>> {
        let chol = self.shifted(lambda).cholesky()?;
        let rhs = -(self.lin + Vector3::new(0.0, 0.0, -0.5 * lambda));
        Some(chol.solve(&rhs))
    }

    /// Secular function `phi(lambda) = g(u(lambda))`, nonincreasing where defined.
    pub fn phi(&self, lambda: f64) -> Option<f64> {
        self.u_of(lambda).map(|u| Self::consistency(&u))
    }

    /// Infimum of the multipliers for which `M + lambda H` is positive definite.
    pub fn lambda_lower(&self) -> f64 {
        if let Some(chol) = self.quad.cholesky() {
            // M + lambda H > 0  iff  1 + lambda mu > 0 for the eigenvalues mu of
            // B^T B with B = L^-1 [e1 e2]
            let l = chol.l();
            let mut b = nalgebra::Matrix3x2::new(1.0, 0.0, 0.0, 1.0, 0.0, 0.0);
            if !l.solve_lower_triangular_mut(&mut b) {
                return self.lambda_lower_bisect();
            }
            let btb: Matrix2<f64> = b.transpose() * b;
            let mu = SymmetricEigen::new(btb).eigenvalues.max();
            return -1.0 / mu;
        }
        self.lambda_lower_bisect()
    }

    fn lambda_lower_bisect(&self) -> f64 {
        let scale = self.quad.abs().max().max(f64::MIN_POSITIVE);
        let mut hi = scale;
        let mut steps = 0;
        while self.shifted(hi).cholesky().is_none() && steps < MAX_BRACKET_STEPS {
            hi *= 2.0;
            steps += 1;
        }
        let mut lo = -scale;
        while self.shifted(lo).cholesky().is_some() && steps < 2 * MAX_BRACKET_STEPS {
            lo *= 2.0;
            steps += 1;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.shifted(mid).cholesky().is_some() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtrsConfig {
    /// Root tolerance on `|phi|` is `tol_scale * (1 + max_k |a_k|^2)` over the
    /// virtual anchors, so it does not depend on the weights.
    pub tol_scale: f64,
    pub max_iters: usize,
}

impl Default for GtrsConfig {
    fn default() -> Self {
        Self { tol_scale: 1e-10, max_iters: 200 }
    }
}

/// Bracket `[lower, upper]` held at one step, with `phi(lower) >= 0 >= phi(upper)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lower: f64,
    pub upper: f64,
    pub phi_lower: f64,
    pub phi_upper: f64,
}

fn finish(p: &GtrsProblem, u: Vector3<f64>, lambda: f64, iterations: usize) -> Estimate2D {
    let point = Target2D::new(u.x, u.y);
    Estimate2D {
        x: u.x,
        y: u.y,
        objective: p.plane.rls_cost(&point),
        diagnostics: Diagnostics2D {
            lambda_star: Some(lambda),
            iterations,
            sdp_rank_ratio: None,
            surrogate_objective: p.cost(&u),
        },
    }
}

pub fn solve_gtrs(p: &GtrsProblem, cfg: &GtrsConfig) -> Result<Estimate2D> {
    solve_gtrs_traced(p, cfg).map(|(e, _)| e)
}

/// [`solve_gtrs`] that also returns every bracket maintained by the bisection.
pub fn solve_gtrs_traced(p: &GtrsProblem, cfg: &GtrsConfig) -> Result<(Estimate2D, Vec<Bracket>)> {
    let tol = p.root_tolerance(cfg);
    let lambda_lower = p.lambda_lower();
    if !lambda_lower.is_finite() {
        return Err(Error::BracketNotFound);
    }
    let start = 0f64.max(lambda_lower + 1e-8 * (1.0 + lambda_lower.abs()));
    let eval = |lambda: f64| p.u_of(lambda).map(|u| (u, GtrsProblem::consistency(&u)));

    let (mut lo, mut hi);
    let (mut phi_lo, mut phi_hi);
    let (u0, phi0) = eval(start).ok_or(Error::BracketNotFound)?;
    if phi0.abs() <= tol {
        return Ok((finish(p, u0, start, 0), Vec::new()));
    }
    if phi0 > 0.0 {
        (lo, phi_lo) = (start, phi0);
        let mut step = 1.0;
        let mut found = None;
        for _ in 0..MAX_BRACKET_STEPS {
            let cand = start + step;
            if let Some((u, phi)) = eval(cand) {
                if phi.abs() <= tol {
                    return Ok((finish(p, u, cand, 0), Vec::new()));
                }
                if phi < 0.0 {
                    found = Some((cand, phi));
                    break;
                }
                (lo, phi_lo) = (cand, phi);
            }
            step *= 2.0;
        }
        (hi, phi_hi) = found.ok_or(Error::BracketNotFound)?;
    } else {
        (hi, phi_hi) = (start, phi0);
        let mut found = None;
        let mut gap = start - lambda_lower;
        for _ in 0..MAX_BRACKET_STEPS {
            gap *= 0.5;
            let cand = lambda_lower + gap;
            if cand <= lambda_lower || cand >= hi {
                break;
            }
            if let Some((u, phi)) = eval(cand) {
                if phi.abs() <= tol {
                    return Ok((finish(p, u, cand, 0), Vec::new()));
                }
                if phi > 0.0 {
                    found = Some((cand, phi));
                    break;
                }
                (hi, phi_hi) = (cand, phi);
            }
        }
        (lo, phi_lo) = found.ok_or(Error::BracketNotFound)?;
    }

    let mut trace = vec![Bracket { lower: lo, upper: hi, phi_lower: phi_lo, phi_upper: phi_hi }];
    for iter in 1..=cfg.max_iters {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // bracket collapsed to adjacent floats: keep the better endpoint
            let lambda = if phi_lo.abs() <= phi_hi.abs() { lo } else { hi };
            let u = p.u_of(lambda).ok_or(Error::BracketNotFound)?;
            return Ok((finish(p, u, lambda, iter), trace));
        }
        let (u, phi) = eval(mid).ok_or_else(|| Error::NumericalBreakdown("lost definiteness inside the bracket".into()))?;
        if phi.abs() <= tol {
            return Ok((finish(p, u, mid, iter), trace));
        }
        if phi > 0.0 {
            (lo, phi_lo) = (mid, phi);
        } else {
            (hi, phi_hi) = (mid, phi);
        }
        trace.push(Bracket { lower: lo, upper: hi, phi_lower: phi_lo, phi_upper: phi_hi });
    }
    Err(Error::MaxIters(cfg.max_iters))
}

pub fn solve_usr(s: &UsrSystem) -> Result<Estimate2D> {
    let mut weighted = s.design.clone();
    for (mut row, w) in weighted.row_iter_mut().zip(s.weights.iter()) {
        row *= *w;
    }
    let normal = s.design.transpose() * &weighted;
    let rhs = weighted.transpose() * &s.rhs;

    // condition test on the Jacobi-equilibrated matrix, so column units do not matter
    let d = normal.diagonal().map(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 });
    if d.iter().any(|v| *v == 0.0) {
        return Err(Error::SingularNormalMatrix);
    }
    let equilibrated = DMatrix::from_fn(3, 3, |i, j| normal[(i, j)] * d[i] * d[j]);
    let eig = SymmetricEigen::new(equilibrated).eigenvalues;
    if !(eig.min() > eig.max() / MAX_NORMAL_CONDITION) {
        return Err(Error::SingularNormalMatrix);
    }
    let u = normal.cholesky().ok_or(Error::SingularNormalMatrix)?.solve(&rhs);
    let point = Target2D::new(u[0], u[1]);
    let residual = &s.rhs - &s.design * &u;
    let surrogate = residual.iter().zip(s.weights.iter()).map(|(e, w)| w * e * e).sum();
    Ok(Estimate2D {
        x: u[0],
        y: u[1],
        objective: s.plane.rls_cost(&point),
        diagnostics: Diagnostics2D { lambda_star: None, iterations: 0, sdp_rank_ratio: None, surrogate_objective: surrogate },
    })
}
