//! Full 3D estimators.
//!
//! The height is the only coordinate that enters the model nonlinearly
//! through `r_perp`, so the search over 3D is reduced to a grid over `z`:
//! every grid height yields a horizontal estimate from one of the fixed-height
//! solvers, the resulting 3D seed is polished by a few Gauss-Newton
//! iterations, and the polished candidate with the smallest range-domain cost
//! wins. Single-start and lattice multi-start Gauss-Newton are provided as
//! baselines.

mod gn;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::est2d::{build_lifted, build_sdr, solve_gtrs, solve_sdr, solve_usr, GtrsConfig};
use crate::geometry::{rls_cost_3d, virtual_anchors, Anchor, Target2D, Target3D, Weights};
use crate::scenario::BuildingBox;
use crate::sdp::SdpConfig;

pub use gn::{gn_step, GnConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverTag {
    Gtrs,
    Usr,
    Sdr,
    GnTrue,
    GnOnly,
}

impl SolverTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverTag::Gtrs => "gtrs",
            SolverTag::Usr => "usr",
            SolverTag::Sdr => "sdr",
            SolverTag::GnTrue => "gn-true",
            SolverTag::GnOnly => "gn-only",
        }
    }
}

/// Fixed-height solver used to turn a grid height into a horizontal estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerSolver {
    Gtrs(GtrsConfig),
    Usr,
    Sdr(SdpConfig),
    /// Fixed-height Gauss-Newton started from the given horizontal point;
    /// started from the truth it traces the exact profile.
    GnFrom(Target2D),
}

impl InnerSolver {
    pub fn gtrs() -> Self {
        InnerSolver::Gtrs(GtrsConfig::default())
    }

    pub fn sdr() -> Self {
        InnerSolver::Sdr(SdpConfig::high_accuracy())
    }

    pub fn tag(&self) -> SolverTag {
        match self {
            InnerSolver::Gtrs(_) => SolverTag::Gtrs,
            InnerSolver::Usr => SolverTag::Usr,
            InnerSolver::Sdr(_) => SolverTag::Sdr,
            InnerSolver::GnFrom(_) => SolverTag::GnTrue,
        }
    }

    /// Horizontal estimate at height `z`.
    pub fn solve(&self, anchors: &[Anchor], z: f64, ranges: &[f64], sigmas: &[f64]) -> Result<Target2D> {
        match self {
            InnerSolver::Gtrs(cfg) => {
                let (g, _) = build_lifted(anchors, z, ranges, sigmas)?;
                Ok(solve_gtrs(&g, cfg)?.point())
            }
            InnerSolver::Usr => {
                let (_, u) = build_lifted(anchors, z, ranges, sigmas)?;
                Ok(solve_usr(&u)?.point())
            }
            InnerSolver::Sdr(cfg) => Ok(solve_sdr(&build_sdr(anchors, z, ranges, sigmas)?, cfg)?.point()),
            InnerSolver::GnFrom(start) => {
                let w: Vec<f64> = sigmas.iter().map(|s| 1.0 / (s * s)).collect();
                let cfg = GnConfig::default().with_halving(true);
                gn::run_2d(&virtual_anchors(anchors, z), &w, ranges, start, &cfg)
            }
        }
    }
}

/// Uniform grid of candidate heights, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZGrid {
    pub z_min: f64,
    pub z_max: f64,
    pub n: usize,
}

impl ZGrid {
    pub fn new(z_min: f64, z_max: f64, n: usize) -> Result<Self> {
        if !(z_min.is_finite() && z_max.is_finite() && z_min < z_max) {
            return Err(Error::InvalidParams(format!("height range [{z_min}, {z_max}] is empty")));
        }
        if n < 2 {
            return Err(Error::InvalidParams(format!("a height grid needs at least 2 points, got {n}")));
        }
        Ok(Self { z_min, z_max, n })
    }

    /// Grid spanning the building from floor to roof.
    pub fn for_building(building: &BuildingBox, n: usize) -> Result<Self> {
        Self::new(0.0, building.lz, n)
    }

    pub fn height(&self, i: usize) -> f64 {
        self.z_min + (self.z_max - self.z_min) * (i as f64 / (self.n - 1) as f64)
    }

    pub fn heights(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.height(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfilePoint {
    pub z: f64,
    pub xy: Target2D,
    /// Range-domain cost of `[xy; z]`.
    pub j_rls: f64,
    pub solver: SolverTag,
    /// Inner-solver failure; the point is then excluded from any selection.
    pub error: Option<String>,
}

impl ProfilePoint {
    pub fn valid(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub objective: f64,
    /// Grid index for sample-polish-select, lattice index for multi-start.
    pub seed_index: usize,
    pub solver: SolverTag,
    pub gn_iterations: usize,
}

impl Estimate3D {
    pub fn point(&self) -> Target3D {
        Target3D::new(self.x, self.y, self.z)
    }
}

fn sigmas_of(weights: &Weights) -> Vec<f64> {
    weights.as_slice().iter().map(|w| 1.0 / w.sqrt()).collect()
}

fn check(anchors: &[Anchor], weights: &Weights, ranges: &[f64]) -> Result<()> {
    check_len(anchors.len(), weights.len())?;
    check_len(anchors.len(), ranges.len())
}

/// Approximate z-profile: for every grid height the inner solver supplies the
/// horizontal coordinates and the exact 3D cost is evaluated there.
pub fn z_profile(
    anchors: &[Anchor],
    weights: &Weights,
    ranges: &[f64],
    grid: &ZGrid,
    inner: &InnerSolver,
) -> Result<Vec<ProfilePoint>> {
    check(anchors, weights, ranges)?;
    let grid = ZGrid::new(grid.z_min, grid.z_max, grid.n)?;
    let sigmas = sigmas_of(weights);
    grid.heights()
        .into_iter()
        .map(|z| {
            let point = match inner.solve(anchors, z, ranges, &sigmas) {
                Ok(xy) => ProfilePoint {
                    z,
                    xy,
                    j_rls: rls_cost_3d(anchors, weights, ranges, &Target3D::from_xy(xy, z))?,
                    solver: inner.tag(),
                    error: None,
                },
                Err(e) => ProfilePoint {
                    z,
                    xy: Target2D::new(f64::NAN, f64::NAN),
                    j_rls: f64::NAN,
                    solver: inner.tag(),
                    error: Some(e.to_string()),
                },
            };
            Ok(point)
        })
        .collect()
}

/// Writes a profile as CSV with columns `z,x,y,j_rls,solver,valid`. Invalid
/// points keep their height and leave the numeric columns empty.
pub fn write_profile_csv<W: Write>(points: &[ProfilePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["z", "x", "y", "j_rls", "solver", "valid"]).map_err(csv_err)?;
    for p in points {
        let num = |v: f64| if p.valid() { v.to_string() } else { String::new() };
        w.write_record([
            p.z.to_string(),
            num(p.xy.x),
            num(p.xy.y),
            num(p.j_rls),
            p.solver.as_str().to_string(),
            p.valid().to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// One grid height of the sample-polish-select pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub index: usize,
    pub z: f64,
    /// Seed `[xy(z); z]` before polishing.
    pub seed: Option<Target3D>,
    pub seed_objective: Option<f64>,
    /// Polished point and its cost, or the reason the seed was dropped.
    pub polished: std::result::Result<(Target3D, f64), String>,
}

/// Seeds every grid height and polishes each seed with exactly
/// `gn_cfg.polish_steps` Gauss-Newton iterations.
pub fn polish_candidates(
    anchors: &[Anchor],
    weights: &Weights,
    ranges: &[f64],
    grid: &ZGrid,
    inner: &InnerSolver,
    gn_cfg: &GnConfig,
) -> Result<Vec<Candidate>> {
    check(anchors, weights, ranges)?;
    if anchors.len() < 4 {
        return Err(Error::TooFewAnchors { needed: 4, found: anchors.len() });
    }
    gn_cfg.validate()?;
    let grid = ZGrid::new(grid.z_min, grid.z_max, grid.n)?;
    let sigmas = sigmas_of(weights);
    Ok(grid
        .heights()
        .into_iter()
        .enumerate()
        .map(|(index, z)| match inner.solve(anchors, z, ranges, &sigmas) {
            Err(e) => Candidate { index, z, seed: None, seed_objective: None, polished: Err(e.to_string()) },
            Ok(xy) => {
                let seed = Target3D::from_xy(xy, z);
                let seed_objective = rls_cost_3d(anchors, weights, ranges, &seed).ok();
                let polished = gn::run_3d(anchors, weights, ranges, &seed, gn_cfg.polish_steps, false, gn_cfg)
                    .map(|(p, run)| (p, run.cost))
                    .map_err(|e| e.to_string());
                Candidate { index, z, seed: Some(seed), seed_objective, polished }
            }
        })
        .collect())
}

/// Sample, polish, select: the polished candidate with the smallest cost,
/// ties resolved toward the lowest grid index.
pub fn sample_polish_select(
    anchors: &[Anchor],
    weights: &Weights,
    ranges: &[f64],
    grid: &ZGrid,
    inner: &InnerSolver,
    gn_cfg: &GnConfig,
) -> Result<Estimate3D> {
    let candidates = polish_candidates(anchors, weights, ranges, grid, inner, gn_cfg)?;
    let mut best: Option<Estimate3D> = None;
    let mut failures = Vec::new();
    for c in &candidates {
        match &c.polished {
            Ok((p, cost)) if cost.is_finite() => {
                if best.is_none_or(|b| *cost < b.objective) {
                    best = Some(Estimate3D {
                        x: p.x,
                        y: p.y,
                        z: p.z,
                        objective: *cost,
                        seed_index: c.index,
                        solver: inner.tag(),
                        gn_iterations: gn_cfg.polish_steps,
                    });
                }
            }
            Ok(_) => failures.push((c.index, "non-finite polished cost".to_string())),
            Err(e) => failures.push((c.index, e.clone())),
        }
    }
    best.ok_or(Error::AllSeedsFailed(failures))
}

/// Single-start Gauss-Newton from `init`, run until the step falls below
/// `cfg.step_tol` or `cfg.max_iters` is reached.
pub fn d_nls(anchors: &[Anchor], weights: &Weights, ranges: &[f64], init: &Target3D, cfg: &GnConfig) -> Result<Estimate3D> {
    d_nls_traced(anchors, weights, ranges, init, cfg).map(|(e, _)| e)
}

/// [`d_nls`] that also returns the cost at the start and after every iteration.
pub fn d_nls_traced(
    anchors: &[Anchor],
    weights: &Weights,
    ranges: &[f64],
    init: &Target3D,
    cfg: &GnConfig,
) -> Result<(Estimate3D, Vec<f64>)> {
    cfg.validate()?;
    let (p, run) = gn::run_3d(anchors, weights, ranges, init, cfg.max_iters, true, cfg)?;
    let est = Estimate3D {
        x: p.x,
        y: p.y,
        z: p.z,
        objective: run.cost,
        seed_index: 0,
        solver: SolverTag::GnOnly,
        gn_iterations: run.iterations,
    };
    Ok((est, run.costs))
}

/// `seeds_per_dim^3` lattice over the building, faces included. Index
/// `(i * s + j) * s + k` holds the point with x, y and z steps `i`, `j`, `k`.
pub fn seed_lattice(building: &BuildingBox, seeds_per_dim: usize) -> Vec<Target3D> {
    let s = seeds_per_dim;
    let at = |len: f64, i: usize| len * (i as f64 / (s - 1) as f64);
    let mut out = Vec::with_capacity(s * s * s);
    for i in 0..s {
        for j in 0..s {
            for k in 0..s {
                out.push(Target3D::new(at(building.lx, i), at(building.ly, j), at(building.lz, k)));
            }
        }
    }
    out
}

/// Multi-start Gauss-Newton over [`seed_lattice`]; the lowest achieved cost
/// wins, ties resolved toward the lowest seed index.
pub fn ms_gn(
    anchors: &[Anchor],
    weights: &Weights,
    ranges: &[f64],
    building: &BuildingBox,
    seeds_per_dim: usize,
    cfg: &GnConfig,
) -> Result<Estimate3D> {
    if seeds_per_dim < 2 {
        return Err(Error::InvalidParams(format!("need at least 2 seeds per dimension, got {seeds_per_dim}")));
    }
    let mut best: Option<Estimate3D> = None;
    let mut failures = Vec::new();
    for (index, seed) in seed_lattice(building, seeds_per_dim).iter().enumerate() {
        match d_nls(anchors, weights, ranges, seed, cfg) {
            Ok(e) if e.objective.is_finite() => {
                if best.is_none_or(|b| e.objective < b.objective) {
                    best = Some(Estimate3D { seed_index: index, ..e });
                }
            }
            Ok(_) => failures.push((index, "non-finite cost".to_string())),
            Err(e) => failures.push((index, e.to_string())),
        }
    }
    best.ok_or(Error::AllSeedsFailed(failures))
}
