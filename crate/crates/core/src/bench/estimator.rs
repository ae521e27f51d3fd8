use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::est2d::{build_lifted, build_sdr, solve_gtrs, solve_sdr, solve_usr, Estimate2D, GtrsConfig};
use crate::est3d::{d_nls, ms_gn, sample_polish_select, Estimate3D, GnConfig, InnerSolver, ZGrid};
use crate::geometry::{Anchor, Target3D, Weights};
use crate::scenario::BuildingBox;
use crate::sdp::SdpConfig;

/// One estimator of the benchmark, with its own parameters. Missing grid
/// sizes fall back to the experiment-wide value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EstimatorSpec {
    Gtrs2d,
    Usr2d,
    Sdr2d,
    SpselGtrs {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nz: Option<usize>,
    },
    SpselUsr {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nz: Option<usize>,
    },
    SpselSdr {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nz: Option<usize>,
    },
    Dnls {
        #[serde(default = "halving_default")]
        step_halving: bool,
    },
    Msgn {
        seeds_per_dim: usize,
    },
}

fn halving_default() -> bool {
    true
}

impl EstimatorSpec {
    /// Whether the estimator needs the target height.
    pub fn is_planar(&self) -> bool {
        matches!(self, EstimatorSpec::Gtrs2d | EstimatorSpec::Usr2d | EstimatorSpec::Sdr2d)
    }

    fn grid_size(&self, default_nz: usize) -> Option<usize> {
        match self {
            EstimatorSpec::SpselGtrs { nz } | EstimatorSpec::SpselUsr { nz } | EstimatorSpec::SpselSdr { nz } => {
                Some(nz.unwrap_or(default_nz))
            }
            _ => None,
        }
    }

    /// Report label, e.g. `gtrs2d`, `spsel-usr-nz8`, `msgn-s27`.
    pub fn label(&self, default_nz: usize) -> String {
        let nz = self.grid_size(default_nz).unwrap_or(0);
        match self {
            EstimatorSpec::Gtrs2d => "gtrs2d".into(),
            EstimatorSpec::Usr2d => "usr2d".into(),
            EstimatorSpec::Sdr2d => "sdr2d".into(),
            EstimatorSpec::SpselGtrs { .. } => format!("spsel-gtrs-nz{nz}"),
            EstimatorSpec::SpselUsr { .. } => format!("spsel-usr-nz{nz}"),
            EstimatorSpec::SpselSdr { .. } => format!("spsel-sdr-nz{nz}"),
            EstimatorSpec::Dnls { step_halving: true } => "dnls".into(),
            EstimatorSpec::Dnls { step_halving: false } => "dnls-plain".into(),
            EstimatorSpec::Msgn { seeds_per_dim } => format!("msgn-s{}", seeds_per_dim.pow(3)),
        }
    }

    pub fn validate(&self, k: usize, default_nz: usize) -> Result<()> {
        if let Some(nz) = self.grid_size(default_nz) {
            if nz < 2 {
                return Err(Error::InvalidParams(format!("{}: height grid needs at least 2 points", self.label(default_nz))));
            }
        }
        if let EstimatorSpec::Msgn { seeds_per_dim } = self {
            if *seeds_per_dim < 2 {
                return Err(Error::InvalidParams("msgn needs at least 2 seeds per dimension".into()));
            }
        }
        let needed = if self.is_planar() { 3 } else { 4 };
        if k < needed {
            return Err(Error::TooFewAnchors { needed, found: k });
        }
        Ok(())
    }
}

/// Solver settings shared by every estimator of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    pub n_z: usize,
    /// Polish length and Gauss-Newton safeguards.
    pub gn: GnConfig,
    pub gtrs: GtrsConfig,
    pub sdp: SdpConfig,
}

impl Settings {
    pub fn new(n_z: usize, polish_steps: usize) -> Self {
        Self {
            n_z,
            gn: GnConfig { polish_steps, ..GnConfig::default() },
            gtrs: GtrsConfig::default(),
            sdp: SdpConfig::high_accuracy(),
        }
    }
}

/// Everything an estimator may look at for one measurement set.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub anchors: &'a [Anchor],
    pub building: &'a BuildingBox,
    pub ranges: &'a [f64],
    pub sigmas: &'a [f64],
    /// Target height, required by the planar estimators.
    pub known_z: Option<f64>,
    /// Start point of the single-start baseline.
    pub init: Target3D,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EstimateOutput {
    Planar { z: f64, estimate: Estimate2D },
    Spatial { estimate: Estimate3D },
}

impl EstimateOutput {
    pub fn point(&self) -> Target3D {
        match self {
            EstimateOutput::Planar { z, estimate } => Target3D::new(estimate.x, estimate.y, *z),
            EstimateOutput::Spatial { estimate } => estimate.point(),
        }
    }

    pub fn objective(&self) -> f64 {
        match self {
            EstimateOutput::Planar { estimate, .. } => estimate.objective,
            EstimateOutput::Spatial { estimate } => estimate.objective,
        }
    }
}

/// Runs one estimator on one measurement set.
pub fn run_estimator(spec: &EstimatorSpec, settings: &Settings, p: &Problem) -> Result<EstimateOutput> {
    let planar = |z: Option<f64>| z.ok_or_else(|| Error::InvalidParams("planar estimators need the target height".into()));
    let weights = || Weights::from_sigmas(p.sigmas);
    let grid = |nz: &Option<usize>| ZGrid::for_building(p.building, nz.unwrap_or(settings.n_z));
    let spsel = |nz: &Option<usize>, inner: InnerSolver| -> Result<EstimateOutput> {
        let estimate = sample_polish_select(p.anchors, &weights()?, p.ranges, &grid(nz)?, &inner, &settings.gn)?;
        Ok(EstimateOutput::Spatial { estimate })
    };
    match spec {
        EstimatorSpec::Gtrs2d => {
            let z = planar(p.known_z)?;
            let (g, _) = build_lifted(p.anchors, z, p.ranges, p.sigmas)?;
            Ok(EstimateOutput::Planar { z, estimate: solve_gtrs(&g, &settings.gtrs)? })
        }
        EstimatorSpec::Usr2d => {
            let z = planar(p.known_z)?;
            let (_, u) = build_lifted(p.anchors, z, p.ranges, p.sigmas)?;
            Ok(EstimateOutput::Planar { z, estimate: solve_usr(&u)? })
        }
        EstimatorSpec::Sdr2d => {
            let z = planar(p.known_z)?;
            let s = build_sdr(p.anchors, z, p.ranges, p.sigmas)?;
            Ok(EstimateOutput::Planar { z, estimate: solve_sdr(&s, &settings.sdp)? })
        }
        EstimatorSpec::SpselGtrs { nz } => spsel(nz, InnerSolver::Gtrs(settings.gtrs)),
        EstimatorSpec::SpselUsr { nz } => spsel(nz, InnerSolver::Usr),
        EstimatorSpec::SpselSdr { nz } => spsel(nz, InnerSolver::Sdr(settings.sdp)),
        EstimatorSpec::Dnls { step_halving } => {
            let cfg = settings.gn.with_halving(*step_halving);
            let estimate = d_nls(p.anchors, &weights()?, p.ranges, &p.init, &cfg)?;
            Ok(EstimateOutput::Spatial { estimate })
        }
        EstimatorSpec::Msgn { seeds_per_dim } => {
            let cfg = settings.gn.with_halving(true);
            let estimate = ms_gn(p.anchors, &weights()?, p.ranges, p.building, *seeds_per_dim, &cfg)?;
            Ok(EstimateOutput::Spatial { estimate })
        }
    }
}
