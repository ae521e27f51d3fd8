use nalgebra::{DMatrix, DVector};

use super::{ConicProgram, ConicSolution, IterationLog, Residuals, SdpConfig, SdpStatus, SymSparse};
use crate::error::{Error, Result};

const MAX_DIM: usize = 64;
const MAX_CONSTRAINTS: usize = 5000;
/// Multipliers or primal traces beyond this are taken as divergence.
const DIVERGENCE: f64 = 1e12;
const REFINEMENT_STEPS: usize = 2;

struct Data<'a> {
    n: usize,
    neq: usize,
    nineq: usize,
    rows: Vec<&'a SymSparse>,
    full: Vec<Vec<(usize, usize, f64)>>,
    b: DVector<f64>,
    c: DMatrix<f64>,
    c_norm: f64,
}

impl<'a> Data<'a> {
    fn new(p: &'a ConicProgram) -> Self {
        let rows: Vec<&SymSparse> = p.equalities.iter().chain(&p.inequalities).map(|(a, _)| a).collect();
        let b = DVector::from_iterator(rows.len(), p.equalities.iter().chain(&p.inequalities).map(|(_, b)| *b));
        Data {
            n: p.n,
            neq: p.equalities.len(),
            nineq: p.inequalities.len(),
            full: rows.iter().map(|a| a.full_entries()).collect(),
            rows,
            b,
            c: p.cost.to_dense(p.n),
            c_norm: p.cost.frobenius_norm(),
        }
    }

    fn m(&self) -> usize {
        self.rows.len()
    }

    /// `A(X)` for every row, slacks excluded.
    fn apply(&self, x: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(self.m(), self.rows.iter().map(|a| a.dot(x)))
    }

    fn adjoint(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for (a, yi) in self.rows.iter().zip(y.iter()) {
            a.add_to_dense(*yi, &mut out);
        }
        out
    }

    /// Schur complement `M_ij = <A_j, W A_i W> + [i = j inequality] x_j / s_j`.
    fn schur(&self, w: &DMatrix<f64>, lp_ratio: &DVector<f64>) -> DMatrix<f64> {
        let m = self.m();
        let n = self.n;
        let wv = w.as_slice();
        let mut out = DMatrix::zeros(m, m);
        let mut wawt = vec![0.0; n * n];
        for i in 0..m {
            wawt.iter_mut().for_each(|v| *v = 0.0);
            for &(r, s, u) in &self.full[i] {
                let wr = &wv[r * n..(r + 1) * n];
                for (b, &wsb) in wv[s * n..(s + 1) * n].iter().enumerate() {
                    let f = u * wsb;
                    for (o, x) in wawt[b * n..(b + 1) * n].iter_mut().zip(wr) {
                        *o += f * x;
                    }
                }
            }
            for j in i..m {
                let acc: f64 = self.full[j].iter().map(|&(p, q, v)| v * wawt[q * n + p]).sum();
                out[(i, j)] = acc;
                out[(j, i)] = acc;
            }
        }
        for (k, d) in lp_ratio.iter().enumerate() {
            out[(self.neq + k, self.neq + k)] += d;
        }
        out
    }
}

struct Iterate {
    x: DMatrix<f64>,
    x_lp: DVector<f64>,
    y: DVector<f64>,
    s: DMatrix<f64>,
    s_lp: DVector<f64>,
}

/// Iterate of smallest worst-case residual seen so far.
struct Best {
    worst: f64,
    z: DMatrix<f64>,
    y: DVector<f64>,
    residuals: Residuals,
    pobj: f64,
    dobj: f64,
}

struct Direction {
    x: DMatrix<f64>,
    x_lp: DVector<f64>,
    y: DVector<f64>,
    s: DMatrix<f64>,
    s_lp: DVector<f64>,
    /// `G^-1 dX G^-T` and `G^T dS G`.
    x_scaled: DMatrix<f64>,
    s_scaled: DMatrix<f64>,
}

/// Nesterov-Todd scaling `W = G G^T` with `G^-1 X G^-T = G^T S G = diag(d)`.
struct NtScaling {
    g: DMatrix<f64>,
    g_t: DMatrix<f64>,
    w: DMatrix<f64>,
    d: DVector<f64>,
}

fn nt_scaling(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<NtScaling> {
    let lx = x.clone().cholesky()?.l();
    let ls = s.clone().cholesky()?.l();
    let svd = mul(&ls.transpose(), &lx).svd(true, true);
    let v = svd.v_t?.transpose();
    let d = svd.singular_values;
    if d.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return None;
    }
    let mut g = mul(&lx, &v);
    for (k, dk) in d.iter().enumerate() {
        g.column_mut(k).scale_mut(1.0 / dk.sqrt());
    }
    let w = mul(&g, &g.transpose());
    Some(NtScaling { g_t: g.transpose(), g, w, d })
}

/// Plain product for the small dense blocks handled here, where a blocked
/// gemm spends more time packing than multiplying.
fn mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = a.shape();
    let m = b.ncols();
    debug_assert_eq!(k, b.nrows());
    let (av, bv) = (a.as_slice(), b.as_slice());
    let mut out = vec![0.0; n * m];
    for j in 0..m {
        let col = &mut out[j * n..(j + 1) * n];
        for p in 0..k {
            let f = bv[j * k + p];
            if f != 0.0 {
                for (o, x) in col.iter_mut().zip(&av[p * n..(p + 1) * n]) {
                    *o += x * f;
                }
            }
        }
    }
    DMatrix::from_vec(n, m, out)
}

/// `G M G^T`, symmetrized.
fn congruence(g: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = mul(&mul(g, m), &g.transpose());
    symmetrize(&mut out);
    out
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Largest `alpha` keeping `diag(d) + alpha * dm` positive semidefinite.
fn max_step_psd(d: &DVector<f64>, dm: &DMatrix<f64>) -> f64 {
    let n = d.len();
    let mut t = dm.clone();
    for i in 0..n {
        for j in 0..n {
            t[(i, j)] /= (d[i] * d[j]).sqrt();
        }
    }
    symmetrize(&mut t);
    let lmin = t.symmetric_eigenvalues().min();
    if lmin < 0.0 {
        -1.0 / lmin
    } else {
        f64::INFINITY
    }
}

fn max_step_lp(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

fn factor_schur(mut m: DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut shift = 0.0;
    for _ in 0..8 {
        if let Some(ch) = m.clone().cholesky() {
            return Some(ch);
        }
        let next = if shift == 0.0 { 1e-14 * scale } else { shift * 100.0 };
        for i in 0..m.nrows() {
            m[(i, i)] += next - shift;
        }
        shift = next;
    }
    None
}

struct Newton<'a> {
    data: &'a Data<'a>,
    it: &'a Iterate,
    nt: &'a NtScaling,
    schur: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    rp: DVector<f64>,
    rd: DMatrix<f64>,
    rd_lp: DVector<f64>,
    lp_ratio: DVector<f64>,
    /// Largest scaled primal defect accepted from the Schur complement path.
    defect_tol: f64,
}

impl Newton<'_> {
    fn solve(&self, rc_scaled: &DMatrix<f64>, rc_lp: &DVector<f64>) -> Direction {
        let dir = self.direction(rc_scaled, rc_lp);
        if self.primal_defect(&dir) <= self.defect_tol {
            return dir;
        }
        match self.direction_augmented(rc_scaled, rc_lp) {
            Some(aug) if self.primal_defect(&aug) < self.primal_defect(&dir) => aug,
            _ => dir,
        }
    }

    fn primal_defect(&self, dir: &Direction) -> f64 {
        let data = self.data;
        let mut defect = &self.rp - data.apply(&dir.x);
        for k in 0..data.nineq {
            defect[data.neq + k] -= dir.x_lp[k];
        }
        defect.iter().zip(data.b.iter()).map(|(r, b)| r.abs() / (1.0 + b.abs())).fold(0.0, f64::max)
    }

    /// Solves the linearized system for a complementarity right-hand side
    /// given in scaled form: `dX~ + dS~ = rc_scaled` with `dX = G dX~ G^T`
    /// and `dS = G^-T dS~ G^-1`, plus `dx + (x/s) ds = rc_lp`.
    fn direction(&self, rc_scaled: &DMatrix<f64>, rc_lp: &DVector<f64>) -> Direction {
        let data = self.data;
        let g = &self.nt.g;
        let w = &self.nt.w;
        let t = congruence(g, rc_scaled) - mul(&mul(w, &self.rd), w);
        let mut rhs = &self.rp - data.apply(&t);
        for k in 0..data.nineq {
            rhs[data.neq + k] -= rc_lp[k] - self.lp_ratio[k] * self.rd_lp[k];
        }
        let dy = self.schur.solve(&rhs);
        let ds = &self.rd - data.adjoint(&dy);
        let mut ds_scaled = congruence(&self.nt.g_t, &ds);
        let mut dx_scaled = rc_scaled - &ds_scaled;
        let ds_lp = DVector::from_fn(data.nineq, |k, _| self.rd_lp[k] - dy[data.neq + k]);
        let dx_lp = DVector::from_fn(data.nineq, |k, _| rc_lp[k] - self.lp_ratio[k] * ds_lp[k]);
        let mut dir = Direction {
            x: DMatrix::zeros(0, 0),
            x_lp: dx_lp,
            y: dy,
            s: ds,
            s_lp: ds_lp,
            x_scaled: DMatrix::zeros(0, 0),
            s_scaled: DMatrix::zeros(0, 0),
        };

        // refinement: the correction keeps the dual and complementarity rows
        // exact while shrinking the primal defect left by rounding
        for step in 0..=REFINEMENT_STEPS {
            let dx = congruence(g, &dx_scaled);
            if step == REFINEMENT_STEPS {
                dir.x = dx;
                break;
            }
            let mut defect = &self.rp - data.apply(&dx);
            for k in 0..data.nineq {
                defect[data.neq + k] -= dir.x_lp[k];
            }
            let dy_fix = self.schur.solve(&defect);
            let as_fix = data.adjoint(&dy_fix);
            let fix_scaled = congruence(&self.nt.g_t, &as_fix);
            dir.y += &dy_fix;
            dir.s -= &as_fix;
            ds_scaled -= &fix_scaled;
            dx_scaled += &fix_scaled;
            for k in 0..data.nineq {
                let v = dy_fix[data.neq + k];
                dir.s_lp[k] -= v;
                dir.x_lp[k] += self.lp_ratio[k] * v;
            }
        }
        dir.x_scaled = dx_scaled;
        dir.s_scaled = ds_scaled;
        dir
    }

    /// Same direction from the augmented system in the scaled primal
    /// variable and the multipliers. Slower than the Schur complement but its
    /// conditioning is roughly the square root, which matters once the
    /// scaling `W` is nearly singular.
    fn direction_augmented(&self, rc_scaled: &DMatrix<f64>, rc_lp: &DVector<f64>) -> Option<Direction> {
        let data = self.data;
        let n = data.n;
        let m = data.m();
        let g = &self.nt.g;
        let g_t = &self.nt.g_t;
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|j| (0..=j).map(move |i| (i, j))).collect();
        let nv = pairs.len();
        let svec = |a: &DMatrix<f64>| {
            DVector::from_iterator(
                nv,
                pairs.iter().map(|&(i, j)| if i == j { a[(i, i)] } else { std::f64::consts::SQRT_2 * a[(i, j)] }),
            )
        };
        let mut kkt = DMatrix::zeros(nv + m, nv + m);
        for i in 0..nv {
            kkt[(i, i)] = 1.0;
        }
        for (r, a) in data.rows.iter().enumerate() {
            let col = svec(&congruence(g_t, &a.to_dense(n)));
            for (i, v) in col.iter().enumerate() {
                kkt[(i, nv + r)] = -v;
                kkt[(nv + r, i)] = *v;
            }
        }
        for k in 0..data.nineq {
            kkt[(nv + data.neq + k, nv + data.neq + k)] = self.lp_ratio[k];
        }
        let mut rhs = DVector::zeros(nv + m);
        rhs.rows_mut(0, nv).copy_from(&svec(&(rc_scaled - congruence(g_t, &self.rd))));
        let mut rp = self.rp.clone();
        for k in 0..data.nineq {
            rp[data.neq + k] -= rc_lp[k] - self.lp_ratio[k] * self.rd_lp[k];
        }
        rhs.rows_mut(nv, m).copy_from(&rp);
        let lu = kkt.clone().lu();
        let mut sol = lu.solve(&rhs)?;
        for _ in 0..REFINEMENT_STEPS {
            let defect = &rhs - &kkt * &sol;
            sol += lu.solve(&defect)?;
        }

        let mut dx_scaled = DMatrix::zeros(n, n);
        for (&(i, j), v) in pairs.iter().zip(sol.rows(0, nv).iter()) {
            let v = if i == j { *v } else { v / std::f64::consts::SQRT_2 };
            dx_scaled[(i, j)] = v;
            dx_scaled[(j, i)] = v;
        }
        let dy = sol.rows(nv, m).into_owned();
        let ds = &self.rd - data.adjoint(&dy);
        let ds_scaled = rc_scaled - &dx_scaled;
        let ds_lp = DVector::from_fn(data.nineq, |k, _| self.rd_lp[k] - dy[data.neq + k]);
        let dx_lp = DVector::from_fn(data.nineq, |k, _| rc_lp[k] - self.lp_ratio[k] * ds_lp[k]);
        Some(Direction {
            x: congruence(g, &dx_scaled),
            x_lp: dx_lp,
            y: dy,
            s: ds,
            s_lp: ds_lp,
            x_scaled: dx_scaled,
            s_scaled: ds_scaled,
        })
    }

    fn step_lengths(&self, dir: &Direction) -> (f64, f64) {
        let d = &self.nt.d;
        let ap = max_step_psd(d, &dir.x_scaled).min(max_step_lp(&self.it.x_lp, &dir.x_lp));
        let ad = max_step_psd(d, &dir.s_scaled).min(max_step_lp(&self.it.s_lp, &dir.s_lp));
        (ap, ad)
    }
}

fn validate(p: &ConicProgram) -> Result<()> {
    if p.n == 0 || p.n > MAX_DIM {
        return Err(Error::InvalidParams(format!("matrix dimension {} outside 1..={MAX_DIM}", p.n)));
    }
    let count = p.equalities.len() + p.inequalities.len();
    if count > MAX_CONSTRAINTS {
        return Err(Error::InvalidParams(format!("{count} constraints exceed the limit of {MAX_CONSTRAINTS}")));
    }
    let all = std::iter::once((&p.cost, 0.0)).chain(p.equalities.iter().chain(&p.inequalities).map(|(a, b)| (a, *b)));
    for (a, b) in all {
        if a.max_index().is_some_and(|i| i >= p.n) {
            return Err(Error::InvalidParams("constraint index outside the matrix".into()));
        }
        if !b.is_finite() || a.entries().iter().any(|e| !e.2.is_finite()) {
            return Err(Error::InvalidParams("non-finite program data".into()));
        }
    }
    if !p.offset.is_finite() {
        return Err(Error::InvalidParams("non-finite objective offset".into()));
    }
    Ok(())
}

/// Runs the interior point method. Returns `Err` only for malformed input;
/// non-convergence is reported through the status together with the iterate
/// of smallest residual.
pub fn solve(p: &ConicProgram, cfg: &SdpConfig) -> Result<ConicSolution> {
    validate(p)?;
    let data = Data::new(p);
    let n = data.n;
    let m = data.m();
    let np = data.nineq;
    let cone_dim = (n + np) as f64;

    let row_ratio = data
        .rows
        .iter()
        .zip(data.b.iter())
        .map(|(a, b)| (1.0 + b.abs()) / (1.0 + a.frobenius_norm()))
        .fold(0.0, f64::max);
    let max_row_norm = data.rows.iter().map(|a| a.frobenius_norm()).fold(0.0, f64::max);
    let zeta = 10f64.max((n as f64).sqrt()).max(n as f64 * row_ratio);
    let eta = 10f64.max((n as f64).sqrt()).max(max_row_norm).max(data.c_norm);

    let mut it = Iterate {
        x: DMatrix::identity(n, n) * zeta,
        x_lp: DVector::from_element(np, zeta),
        y: DVector::zeros(m),
        s: DMatrix::identity(n, n) * eta,
        s_lp: DVector::from_element(np, eta),
    };

    let mut log = Vec::new();
    let mut best: Option<Best> = None;
    let mut status = SdpStatus::MaxIters;
    let mut stalls = 0;
    let mut prev_step = 1.0f64;
    let mut iterations = 0;

    for iter in 0..=cfg.max_iters {
        iterations = iter;
        let mut rp = &data.b - data.apply(&it.x);
        for k in 0..np {
            rp[data.neq + k] -= it.x_lp[k];
        }
        let rd = &data.c - data.adjoint(&it.y) - &it.s;
        let rd_lp = DVector::from_fn(np, |k, _| -it.y[data.neq + k] - it.s_lp[k]);

        let pobj = p.cost.dot(&it.x) + p.offset;
        let dobj = data.b.dot(&it.y) + p.offset;
        let compl = inner(&it.x, &it.s) + it.x_lp.dot(&it.s_lp);
        let mu = compl / cone_dim;
        let primal = rp.iter().zip(data.b.iter()).map(|(r, b)| r.abs() / (1.0 + b.abs())).fold(0.0, f64::max);
        let dual = (rd.norm_squared() + rd_lp.norm_squared()).sqrt() / (1.0 + data.c_norm);
        let gap = (pobj - dobj).abs().max(compl) / (1.0 + pobj.abs());
        let residuals = Residuals { primal, dual, gap };
        log.push(IterationLog { iteration: iter, primal_objective: pobj, dual_objective: dobj, residuals, mu });

        if best.as_ref().is_none_or(|b| residuals.max() < b.worst) {
            best = Some(Best { worst: residuals.max(), z: it.x.clone(), y: it.y.clone(), residuals, pobj, dobj });
        }
        let target = cfg.target_tol.min(cfg.tol);
        if primal <= target && dual <= target && gap <= target {
            break;
        }
        if it.y.amax() > DIVERGENCE * (1.0 + data.c_norm) || it.x.trace() + it.x_lp.sum() > DIVERGENCE * zeta * cone_dim {
            status = SdpStatus::Infeasible;
            break;
        }
        if iter == cfg.max_iters {
            break;
        }

        // rounding can break definiteness or the Schur factorization close to
        // the boundary; the best iterate so far is then returned
        let Some(nt) = nt_scaling(&it.x, &it.s) else {
            log::debug!("lost positive definiteness at iteration {iter}");
            break;
        };
        let lp_ratio = it.x_lp.component_div(&it.s_lp);
        let Some(schur) = factor_schur(data.schur(&nt.w, &lp_ratio)) else {
            log::debug!("singular Schur complement at iteration {iter}");
            break;
        };
        let defect_tol = 1e-2 * target.max(primal);
        let newton = Newton { data: &data, it: &it, nt: &nt, schur, rp, rd, rd_lp, lp_ratio, defect_tol };

        // predictor: sigma = 0, so the scaled complementarity target is -diag(d)
        let d = &nt.d;
        let dmat = DMatrix::from_diagonal(d);
        let aff = newton.solve(&(-&dmat), &(-&it.x_lp));
        let (ap, ad) = newton.step_lengths(&aff);
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let compl_aff = inner(&(&dmat + &aff.x_scaled * ap), &(&dmat + &aff.s_scaled * ad))
            + (&it.x_lp + &aff.x_lp * ap).dot(&(&it.s_lp + &aff.s_lp * ad));
        let sigma = (compl_aff / compl).clamp(0.0, 1.0).powi(3);

        // corrector: solve the scaled Lyapunov equation diag(d) R + R diag(d) = rhs
        let cross = mul(&aff.x_scaled, &aff.s_scaled);
        let mut rtilde = -(&cross + cross.transpose());
        for i in 0..n {
            rtilde[(i, i)] += 2.0 * sigma * mu - 2.0 * d[i] * d[i];
        }
        for i in 0..n {
            for j in 0..n {
                rtilde[(i, j)] /= d[i] + d[j];
            }
        }
        let rc_lp = DVector::from_fn(np, |k, _| {
            (sigma * mu - it.x_lp[k] * it.s_lp[k] - aff.x_lp[k] * aff.s_lp[k]) / it.s_lp[k]
        });
        let dir = newton.solve(&rtilde, &rc_lp);
        let (ap, ad) = newton.step_lengths(&dir);
        let frac = cfg.step_fraction.min(0.9 + 0.09 * prev_step);
        let ap = (frac * ap).min(1.0);
        let ad = (frac * ad).min(1.0);
        prev_step = ap.min(ad);
        log::trace!("iteration {iter}: sigma {sigma:.2e}, steps {ap:.3e} / {ad:.3e}");

        it.x += &dir.x * ap;
        it.x_lp += &dir.x_lp * ap;
        it.y += &dir.y * ad;
        it.s += &dir.s * ad;
        it.s_lp += &dir.s_lp * ad;
        symmetrize(&mut it.x);
        symmetrize(&mut it.s);

        if ap < 1e-10 && ad < 1e-10 {
            stalls += 1;
            if stalls >= 5 {
                break;
            }
        } else {
            stalls = 0;
        }
    }

    let Best { z, y, residuals, pobj, dobj, .. } = best.expect("at least one iterate is recorded");
    if status != SdpStatus::Infeasible && residuals.primal <= cfg.tol && residuals.dual <= cfg.tol && residuals.gap <= cfg.tol {
        status = SdpStatus::Optimal;
    }
    Ok(ConicSolution {
        z,
        y: y.iter().copied().collect(),
        status,
        residuals,
        primal_objective: pobj,
        dual_objective: dobj,
        iterations,
        log,
    })
}
