//! Property checks shared by the proptest suite and the acceptance harness.
//! Each check returns a description of the first violation it finds.

#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

use diffloc::bounds::{fim, peb, Dim};
use diffloc::est2d::{build_lifted, build_sdr, solve_gtrs, solve_gtrs_traced, solve_sdr, solve_usr, GtrsConfig, GtrsProblem};
use diffloc::geometry::{jacobian_3d, path_length, virtual_anchor, Anchor, Target3D};
use diffloc::scenario::{sample_scenario, synthesize_measurements, NoisePolicy, Scenario, ScenarioParams};
use diffloc::sdp::{read_triplets, solve, ConicProgram, SdpConfig, SdpStatus};
use nalgebra::{DMatrix, DVector, Vector3};

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*));
        }
    };
}

pub fn scenario(seed: u64, k: usize) -> Scenario {
    sample_scenario(&ScenarioParams { k, seed, n_targets: 1, ..ScenarioParams::default() }).unwrap()
}

/// Anchors, true height, ranges and sigmas of one trial.
pub fn trial(seed: u64, k: usize, snr_db: f64, noiseless: bool) -> (Scenario, Vec<f64>, Vec<f64>) {
    let sc = scenario(seed, k);
    let policy = if noiseless {
        NoisePolicy::noiseless(snr_db, NoisePolicy::DEFAULT_BANDWIDTH_HZ)
    } else {
        NoisePolicy::new(snr_db, NoisePolicy::DEFAULT_BANDWIDTH_HZ)
    };
    let m = synthesize_measurements(&sc, 0, &policy, seed).unwrap();
    (sc, m.ranges, m.sigmas)
}

fn direct_path(a: &Anchor, t: &Target3D) -> f64 {
    let r = (a.y * a.y + (a.z - t.z) * (a.z - t.z)).sqrt();
    ((a.x - t.x) * (a.x - t.x) + (r + t.y) * (r + t.y)).sqrt()
}

pub fn virtual_anchor_exact(a: &Anchor, t: &Target3D) -> Check {
    let va = virtual_anchor(a, t.z);
    let planar = va.distance(&t.xy());
    let p = path_length(a, t);
    let reference = direct_path(a, t);
    ensure!((planar - p).abs() <= 1e-12 * p.max(1e-300), "virtual {planar} vs path {p}");
    ensure!((p - reference).abs() <= 1e-12 * reference.max(1.0), "path {p} vs direct {reference}");
    Ok(())
}

pub fn path_symmetries(a: &Anchor, t: &Target3D) -> Check {
    let flipped = Anchor::new(a.x, -a.y, a.z);
    ensure!(path_length(a, t) >= 0.0, "negative path");
    ensure!(path_length(a, t) == path_length(&flipped, t), "sign of y_k matters");
    let same_height = Anchor::new(a.x, a.y, t.z);
    let los = ((a.x - t.x).powi(2) + (a.y.abs() + t.y).powi(2)).sqrt();
    let p = path_length(&same_height, t);
    ensure!((p - los).abs() <= 1e-12 * los.max(1.0), "same-height path {p} vs {los}");
    Ok(())
}

pub fn jacobian_matches_fd(anchors: &[Anchor], t: &Target3D) -> Check {
    let j = jacobian_3d(anchors, t).map_err(|e| e.to_string())?;
    let h = 1e-6;
    for (k, a) in anchors.iter().enumerate() {
        for c in 0..3 {
            let mut plus = *t;
            let mut minus = *t;
            match c {
                0 => (plus.x += h, minus.x -= h),
                1 => (plus.y += h, minus.y -= h),
                _ => (plus.z += h, minus.z -= h),
            };
            let fd = (direct_path(a, &plus) - direct_path(a, &minus)) / (2.0 * h);
            let an = j[(k, c)];
            ensure!((an - fd).abs() <= 1e-5 * an.abs().max(1.0), "row {k} col {c}: {an} vs {fd}");
        }
    }
    Ok(())
}

fn lifted(seed: u64, k: usize, snr_db: f64, noiseless: bool) -> GtrsProblem {
    let (sc, r, s) = trial(seed, k, snr_db, noiseless);
    build_lifted(&sc.anchors, sc.targets[0].z, &r, &s).unwrap().0
}

pub fn phi_monotone(seed: u64, k: usize, snr_db: f64) -> Check {
    let p = lifted(seed, k, snr_db, false);
    let (_, brackets) = solve_gtrs_traced(&p, &GtrsConfig::default()).map_err(|e| e.to_string())?;
    for (i, b) in brackets.iter().enumerate() {
        ensure!(b.phi_lower >= b.phi_upper, "bracket {i}: phi {} < {}", b.phi_lower, b.phi_upper);
        ensure!(b.phi_lower > 0.0 && b.phi_upper < 0.0, "bracket {i} lost the sign change");
        if i > 0 {
            let prev = &brackets[i - 1];
            ensure!(b.lower >= prev.lower && b.upper <= prev.upper, "bracket {i} not nested");
        }
    }
    let lo = p.lambda_lower();
    let span = 10.0 * (1.0 + lo.abs());
    let mut last = f64::INFINITY;
    for i in 1..=200 {
        let lambda = lo + span * (i as f64 / 200.0).powi(3);
        if let Some(phi) = p.phi(lambda) {
            ensure!(phi <= last + 1e-9 * (1.0 + last.abs()), "phi increases at {lambda}: {last} -> {phi}");
            last = phi;
        }
    }
    Ok(())
}

fn usr_lift(p: &diffloc::est2d::UsrSystem) -> Vector3<f64> {
    let w = DMatrix::from_diagonal(&p.weights);
    let normal = p.design.transpose() * &w * &p.design;
    let rhs: DVector<f64> = p.design.transpose() * &w * &p.rhs;
    let u = normal.lu().solve(&rhs).unwrap();
    Vector3::new(u[0], u[1], u[2])
}

pub fn gtrs_invariants(seed: u64, k: usize, snr_db: f64) -> Check {
    let (sc, r, s) = trial(seed, k, snr_db, false);
    let z = sc.targets[0].z;
    let (g, u) = build_lifted(&sc.anchors, z, &r, &s).map_err(|e| e.to_string())?;
    let cfg = GtrsConfig::default();
    let est = solve_gtrs(&g, &cfg).map_err(|e| e.to_string())?;
    let lambda = est.diagnostics.lambda_star.ok_or("no multiplier")?;
    let ustar = g.u_of(lambda).ok_or("multiplier outside the definite interval")?;
    let tol = g.root_tolerance(&cfg);
    let feas = GtrsProblem::consistency(&ustar).abs();
    ensure!(feas <= 10.0 * tol * (1.0 + ustar.norm_squared()), "infeasible GTRS point: {feas}");

    let best = g.cost(&ustar);
    let mut rng = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    for _ in 0..100 {
        let mut unit = || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let (dx, dy) = (unit(), unit());
        let (x, y) = (ustar.x + dx, ustar.y + dy);
        let c = g.cost(&Vector3::new(x, y, x * x + y * y));
        ensure!(c >= best - 1e-9 * (1.0 + best.abs()), "feasible point beats GTRS: {c} < {best}");
    }

    let uu = usr_lift(&u);
    ensure!(g.cost(&uu) <= best + 1e-9 * (1.0 + best.abs()), "unconstrained minimizer costs more than GTRS");
    let usr = solve_usr(&u).map_err(|e| e.to_string())?;
    ensure!((usr.x - uu.x).abs() + (usr.y - uu.y).abs() <= 1e-8 * (1.0 + uu.x.abs() + uu.y.abs()), "USR differs from direct solve");

    let scaled: Vec<f64> = s.iter().map(|v| v * 3.7).collect();
    let (g2, u2) = build_lifted(&sc.anchors, z, &r, &scaled).map_err(|e| e.to_string())?;
    let est2 = solve_gtrs(&g2, &cfg).map_err(|e| e.to_string())?;
    let usr2 = solve_usr(&u2).map_err(|e| e.to_string())?;
    ensure!((est2.x - est.x).abs() + (est2.y - est.y).abs() <= 1e-7, "GTRS moves under weight scaling");
    ensure!((usr2.x - usr.x).abs() + (usr2.y - usr.y).abs() <= 1e-8, "USR moves under weight scaling");
    Ok(())
}

/// Noiseless ranges make the unconstrained minimizer a lifted point, so GTRS
/// must return the same point.
pub fn usr_gtrs_coincide(seed: u64, k: usize) -> Check {
    let (sc, r, s) = trial(seed, k, 20.0, true);
    let (g, u) = build_lifted(&sc.anchors, sc.targets[0].z, &r, &s).map_err(|e| e.to_string())?;
    let a = solve_gtrs(&g, &GtrsConfig::default()).map_err(|e| e.to_string())?;
    let b = solve_usr(&u).map_err(|e| e.to_string())?;
    let d = a.point().distance(&b.point());
    ensure!(d <= 1e-6, "GTRS and USR differ by {d}");
    let t = sc.targets[0];
    ensure!(a.point().distance(&t.xy()) <= 1e-6, "GTRS misses the target");
    Ok(())
}

pub fn sdr_rank_one(seed: u64, k: usize) -> Check {
    let (sc, r, s) = trial(seed, k, 20.0, true);
    let p = build_sdr(&sc.anchors, sc.targets[0].z, &r, &s).map_err(|e| e.to_string())?;
    let est = solve_sdr(&p, &SdpConfig::high_accuracy()).map_err(|e| e.to_string())?;
    let ratio = est.diagnostics.sdp_rank_ratio.ok_or("no rank ratio")?;
    ensure!(ratio <= 1e-6, "rank ratio {ratio}");
    Ok(())
}

pub fn fim_additive_and_peb_monotone(seed: u64, k: usize, snr_db: f64) -> Check {
    let sc = scenario(seed, k);
    let t = sc.targets[0];
    let sigmas = NoisePolicy::new(snr_db, NoisePolicy::DEFAULT_BANDWIDTH_HZ).sigmas(k).unwrap();
    let split = k / 2;
    for dim in [Dim::Two, Dim::Three] {
        let all = fim(&sc.anchors, &sigmas, &t, dim).map_err(|e| e.to_string())?;
        let a = fim(&sc.anchors[..split], &sigmas[..split], &t, dim).map_err(|e| e.to_string())?;
        let b = fim(&sc.anchors[split..], &sigmas[split..], &t, dim).map_err(|e| e.to_string())?;
        let diff = (&all.matrix - (&a.matrix + &b.matrix)).abs().max();
        ensure!(diff <= 1e-12 * all.matrix.abs().max(), "FIM not additive: {diff}");

        let mut prev = f64::INFINITY;
        for m in dim.size()..=k {
            let Ok(f) = fim(&sc.anchors[..m], &sigmas[..m], &t, dim) else { continue };
            let Ok(bound) = peb(&f) else { continue };
            ensure!(bound.value <= prev * (1.0 + 1e-12), "PEB grows from {prev} to {} at {m} anchors", bound.value);
            prev = bound.value;
        }
    }
    Ok(())
}

pub struct Regression {
    pub name: String,
    pub program: ConicProgram,
    pub reference: f64,
}

pub fn regression_instances() -> Vec<Regression> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let refs: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("reference.json")).unwrap()).unwrap();
    let mut out: Vec<Regression> = refs
        .iter()
        .map(|(name, v)| Regression {
            name: name.clone(),
            program: read_triplets(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap(),
            reference: v.as_f64().unwrap(),
        })
        .collect();
    out.sort_by(|a, b| a.name.cmp(&b.name));
    out
}

/// Residual contract, agreement with an external solver, weak duality on
/// feasible iterates and decreasing infeasibility over ten-iteration windows.
pub fn sdp_contract(r: &Regression) -> Check {
    let cfg = SdpConfig::default();
    let s = solve(&r.program, &cfg).map_err(|e| e.to_string())?;
    ensure!(s.status == SdpStatus::Optimal, "{}: status {:?}", r.name, s.status);
    ensure!(s.residuals.max() <= cfg.tol, "{}: residuals {:?}", r.name, s.residuals);
    ensure!(r.program.max_violation(&s.z) <= cfg.tol, "{}: constraint violation", r.name);
    let err = (s.primal_objective - r.reference).abs();
    ensure!(err <= 1e-6 * (1.0 + r.reference.abs()), "{}: objective {} vs {}", r.name, s.primal_objective, r.reference);
    for l in &s.log {
        if l.residuals.primal <= cfg.tol && l.residuals.dual <= cfg.tol {
            ensure!(
                l.primal_objective >= l.dual_objective - cfg.tol * (1.0 + l.primal_objective.abs()),
                "{}: dual above primal at iteration {}",
                r.name,
                l.iteration
            );
        }
    }
    let infeas: Vec<f64> = s.log.iter().map(|l| l.residuals.primal.max(l.residuals.dual)).collect();
    for t in 0..infeas.len().saturating_sub(10) {
        ensure!(
            infeas[t + 10] <= infeas[t].max(1e-12),
            "{}: infeasibility rises from {:e} to {:e} after iteration {t}",
            r.name,
            infeas[t],
            infeas[t + 10]
        );
    }
    let again = solve(&r.program, &cfg).map_err(|e| e.to_string())?;
    ensure!(again.z == s.z && again.iterations == s.iterations, "{}: not deterministic", r.name);
    Ok(())
}
