use super::*;
use crate::geometry::{path_length, Target3D};
use crate::scenario::{sample_scenario_set, synthesize_measurements, NoisePolicy, ScenarioParams};
use crate::sdp::SdpConfig;
use nalgebra::Vector3;

struct Instance {
    anchors: Vec<Anchor>,
    target: Target3D,
    ranges: Vec<f64>,
    sigmas: Vec<f64>,
}

fn instance(seed: u64, k: usize, snr_db: f64, noiseless: bool) -> Instance {
    let params = ScenarioParams { l: 15.0, k, n_targets: 1, seed };
    let sc = sample_scenario_set(&params, 0).unwrap();
    let policy = if noiseless {
        NoisePolicy::noiseless(snr_db, NoisePolicy::DEFAULT_BANDWIDTH_HZ)
    } else {
        NoisePolicy::new(snr_db, NoisePolicy::DEFAULT_BANDWIDTH_HZ)
    };
    let m = synthesize_measurements(&sc, 0, &policy, 0).unwrap();
    Instance { anchors: sc.anchors, target: sc.targets[0], ranges: m.ranges, sigmas: m.sigmas }
}

fn err(e: &Estimate2D, t: &Target3D) -> f64 {
    (e.x - t.x).hypot(e.y - t.y)
}

#[test]
fn lifted_rows_by_hand() {
    // first virtual anchor sits at (0, -5)
    let anchors = [Anchor::new(0.0, -3.0, 4.0), Anchor::new(10.0, -2.0, 0.0), Anchor::new(4.0, -7.0, 1.0)];
    let (_, usr) = build_lifted(&anchors, 0.0, &[5.0, 9.0, 11.0], &[1.0; 3]).unwrap();
    assert_eq!(usr.design.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 10.0, 1.0]);
    assert_eq!(usr.rhs[0], 0.0);
    assert_eq!(usr.weights[0], 1.0 / 100.0);
    assert_eq!(
        build_lifted(&anchors[..1], 0.0, &[5.0], &[1.0]).unwrap_err(),
        Error::TooFewAnchors { needed: 3, found: 1 }
    );
    assert!(matches!(
        build_lifted(&anchors, 0.0, &[5.0, 1e-4, 11.0], &[1.0; 3]),
        Err(Error::RangeUnderflow { index: 1, .. })
    ));
    assert!(build_lifted(&anchors, 0.0, &[5.0, 9.0], &[1.0; 3]).is_err());
}

#[test]
fn quadratic_matches_loop_and_vanishes_at_truth() {
    for seed in 0..20 {
        let inst = instance(seed, 6, 10.0, false);
        let (g, u) = build_lifted(&inst.anchors, inst.target.z, &inst.ranges, &inst.sigmas).unwrap();
        let point = Vector3::new(3.0 + seed as f64, 7.0, 40.0);
        let mut naive = 0.0;
        for k in 0..6 {
            let q = [u.design[(k, 0)], u.design[(k, 1)], u.design[(k, 2)]];
            let e = u.rhs[k] - (q[0] * point.x + q[1] * point.y + q[2] * point.z);
            naive += u.weights[k] * e * e;
        }
        assert!((g.cost(&point) - naive).abs() <= 1e-9 * naive.max(1.0));

        let clean = instance(seed, 6, 10.0, true);
        let (g, _) = build_lifted(&clean.anchors, clean.target.z, &clean.ranges, &clean.sigmas).unwrap();
        let truth = g.cost_at(&clean.target.xy());
        assert!(truth.abs() <= 1e-9 * (1.0 + g.constant), "{truth}");
    }
}

#[test]
fn noiseless_recovery() {
    for seed in 0..50 {
        let inst = instance(seed, 4, 20.0, true);
        let (g, u) = build_lifted(&inst.anchors, inst.target.z, &inst.ranges, &inst.sigmas).unwrap();
        let cfg = GtrsConfig::default();
        let e = solve_gtrs(&g, &cfg).unwrap();
        assert!(err(&e, &inst.target) <= 1e-6, "gtrs seed {seed}: {}", err(&e, &inst.target));
        let tol = cfg.tol_scale * (1.0 + g.constant.abs());
        let phi = g.phi(e.diagnostics.lambda_star.unwrap()).unwrap();
        assert!(phi.abs() <= tol);
        let e = solve_usr(&u).unwrap();
        assert!(err(&e, &inst.target) <= 1e-8, "usr seed {seed}: {}", err(&e, &inst.target));
    }
}

#[test]
fn gtrs_beats_usr_on_the_surrogate_at_lifted_points() {
    for seed in 0..100 {
        let inst = instance(seed, 6, 5.0, false);
        let (g, u) = build_lifted(&inst.anchors, inst.target.z, &inst.ranges, &inst.sigmas).unwrap();
        let eg = solve_gtrs(&g, &GtrsConfig::default()).unwrap();
        let eu = solve_usr(&u).unwrap();
        assert!(g.cost_at(&eg.point()) <= g.cost_at(&eu.point()) * (1.0 + 1e-9) + 1e-9, "seed {seed}");
    }
}

#[test]
fn collinear_virtual_anchors_are_singular() {
    let anchors = [Anchor::new(5.0, -3.0, 4.0), Anchor::new(5.0, -4.0, 3.0), Anchor::new(5.0, 3.0, -4.0)];
    let (_, u) = build_lifted(&anchors, 0.0, &[6.0, 7.0, 8.0], &[1.0; 3]).unwrap();
    assert_eq!(solve_usr(&u).unwrap_err(), Error::SingularNormalMatrix);
}

#[test]
fn usr_and_gtrs_coincide_on_consistent_data() {
    for seed in 0..20 {
        let inst = instance(seed, 5, 15.0, true);
        let (g, u) = build_lifted(&inst.anchors, inst.target.z, &inst.ranges, &inst.sigmas).unwrap();
        let eu = solve_usr(&u).unwrap();
        let eg = solve_gtrs(&g, &GtrsConfig::default()).unwrap();
        assert!((eu.x - eg.x).abs() <= 1e-8 && (eu.y - eg.y).abs() <= 1e-8);
    }
}

#[test]
fn sdr_noiseless_is_tight() {
    for seed in 0..10 {
        let inst = instance(seed, 5, 20.0, true);
        let p = build_sdr(&inst.anchors, inst.target.z, &inst.ranges, &inst.sigmas).unwrap();
        let e = solve_sdr(&p, &SdpConfig::high_accuracy()).unwrap();
        assert!(err(&e, &inst.target) <= 1e-4, "seed {seed}: {}", err(&e, &inst.target));
        let ratio = e.diagnostics.sdp_rank_ratio.unwrap();
        assert!(ratio <= 1e-6, "seed {seed}: ratio {ratio}");
    }
}

#[test]
fn sdr_solution_meets_the_feasibility_contract() {
    let inst = instance(4, 6, 10.0, false);
    let p = build_sdr(&inst.anchors, inst.target.z, &inst.ranges, &inst.sigmas).unwrap();
    let (ls, ws) = p.normalization();
    let program = p.to_conic_scaled(ls, ws);
    let sol = crate::sdp::solve(&program, &SdpConfig::default()).unwrap();
    assert!(program.max_violation(&sol.z) <= 1e-7);
    assert!(nalgebra::SymmetricEigen::new(sol.z.clone()).eigenvalues.min() >= -1e-7);
}

#[test]
fn sdr_usually_beats_usr_in_range_domain() {
    let mut wins = 0;
    for seed in 0..200 {
        let inst = instance(1000 + seed, 6, 25.0, false);
        let z = inst.target.z;
        let p = build_sdr(&inst.anchors, z, &inst.ranges, &inst.sigmas).unwrap();
        let (_, u) = build_lifted(&inst.anchors, z, &inst.ranges, &inst.sigmas).unwrap();
        let es = solve_sdr(&p, &SdpConfig::high_accuracy()).unwrap();
        let eu = solve_usr(&u).unwrap();
        if es.objective <= eu.objective {
            wins += 1;
        }
    }
    assert!(wins >= 160, "{wins} of 200");
}

#[test]
fn sdr_objective_lower_bounds_truth() {
    for seed in 0..20 {
        let inst = instance(seed, 6, 10.0, false);
        let p = build_sdr(&inst.anchors, inst.target.z, &inst.ranges, &inst.sigmas).unwrap();
        let e = solve_sdr(&p, &SdpConfig::high_accuracy()).unwrap();
        let at_truth = p.plane.rls_cost(&inst.target.xy());
        assert!(e.diagnostics.surrogate_objective <= at_truth + 1e-6 * (1.0 + at_truth));
    }
}

#[test]
fn rls_cost_2d_examples() {
    let inst = instance(9, 5, 10.0, true);
    let w = Weights::from_sigmas(&inst.sigmas).unwrap();
    let c = rls_cost_2d(&inst.anchors, inst.target.z, &w, &inst.ranges, &inst.target.xy()).unwrap();
    assert!(c <= 1e-20);

    let a = [Anchor::new(3.0, 4.0, 0.0)];
    let c = rls_cost_2d(&a, 0.0, &Weights::uniform(1), &[6.0], &Target2D::new(0.0, 0.0)).unwrap();
    assert!((c - 1.0).abs() < 1e-12);

    let inst = instance(10, 6, 5.0, false);
    let w = Weights::from_sigmas(&inst.sigmas).unwrap();
    let pt = Target2D::new(4.0, 11.0);
    let mut naive = 0.0;
    for k in 0..6 {
        let p = path_length(&inst.anchors[k], &Target3D::from_xy(pt, inst.target.z));
        naive += (p - inst.ranges[k]).powi(2) / (inst.sigmas[k] * inst.sigmas[k]);
    }
    let c = rls_cost_2d(&inst.anchors, inst.target.z, &w, &inst.ranges, &pt).unwrap();
    assert!((c - naive).abs() <= 1e-10 * naive);
    assert!(rls_cost_2d(&inst.anchors, 0.0, &w, &inst.ranges[..3], &pt).is_err());
}
