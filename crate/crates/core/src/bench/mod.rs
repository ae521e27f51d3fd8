//! Monte Carlo experiments: RMSE against SNR, position error bounds and
//! wall time per estimate.
//!
//! A run visits every (anchor set, target) pair. For each SNR and noise
//! trial it synthesizes one measurement set and hands that same set to every
//! configured estimator. The unit-variance noise draws of a trial are shared
//! by all SNR points. Squared errors are pooled over all successful trials
//! before the single square root, and failed trials are counted separately.

mod estimator;
mod scaling;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bounds::{fim, peb, Dim};
use crate::error::{Error, Result};
use crate::est3d::csv_err;
use crate::par::{map_indexed, ExecutionMode};
use crate::scenario::{random_point_in, sample_scenario_set, synthesize_measurements, NoisePolicy, Scenario, ScenarioParams};

pub use estimator::{run_estimator, EstimateOutput, EstimatorSpec, Problem, Settings};
pub use scaling::{loglog_slope, time_scaling, ScalingMethod, ScalingPoint};

pub const CSV_HEADER: &str = "estimator,snr_db,K,rmse_m,peb_m,mean_walltime_s,n_trials,n_fail";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub estimators: Vec<EstimatorSpec>,
    pub snr_db: Vec<f64>,
    pub n_anchor_sets: usize,
    pub n_targets: usize,
    pub n_noise: usize,
    pub k: usize,
    /// Building half-size; the building is a `2L` cube.
    pub l: f64,
    /// Default height-grid size of the sample-polish-select estimators.
    pub n_z: usize,
    /// Gauss-Newton polish iterations.
    pub t_gn: usize,
    pub seed: u64,
    pub bandwidth_hz: f64,
    /// Exact ranges; the SNR still sets the weights and the bounds.
    pub noiseless: bool,
    /// Repeats per estimate when timing; the median is kept.
    pub timing_repeats: usize,
    /// CSV destination; the resolved config goes next to it as JSON.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            estimators: vec![EstimatorSpec::Gtrs2d, EstimatorSpec::Usr2d],
            snr_db: vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            n_anchor_sets: 10,
            n_targets: 8,
            n_noise: 10,
            k: 6,
            l: 15.0,
            n_z: 8,
            t_gn: 5,
            seed: 1,
            bandwidth_hz: NoisePolicy::DEFAULT_BANDWIDTH_HZ,
            noiseless: false,
            timing_repeats: 5,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_anchor_sets", self.n_anchor_sets),
            ("n_targets", self.n_targets),
            ("n_noise", self.n_noise),
            ("t_gn", self.t_gn),
            ("timing_repeats", self.timing_repeats),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidParams(format!("{name} must be at least 1")));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidParams("no estimators configured".into()));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidParams("snr_db must be a nonempty list of finite values".into()));
        }
        if !(self.bandwidth_hz.is_finite() && self.bandwidth_hz > 0.0) {
            return Err(Error::InvalidParams("bandwidth_hz must be positive".into()));
        }
        if self.n_z < 2 {
            return Err(Error::InvalidParams("n_z must be at least 2".into()));
        }
        self.scenario_params().validate()?;
        for e in &self.estimators {
            e.validate(self.k, self.n_z)?;
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn scenario_params(&self) -> ScenarioParams {
        ScenarioParams { l: self.l, k: self.k, n_targets: self.n_targets, seed: self.seed }
    }

    pub fn settings(&self) -> Settings {
        Settings::new(self.n_z, self.t_gn)
    }

    pub fn labels(&self) -> Vec<String> {
        self.estimators.iter().map(|e| e.label(self.n_z)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub estimator: String,
    pub snr_db: f64,
    #[serde(rename = "K")]
    pub k: usize,
    /// `sqrt` of the pooled mean squared error over successful trials.
    pub rmse_m: f64,
    /// `sqrt` of the mean squared bound over the (anchor set, target) pairs;
    /// 2D bound for planar estimators, 3D otherwise.
    pub peb_m: f64,
    pub mean_walltime_s: f64,
    pub n_trials: usize,
    pub n_fail: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub config: ExperimentConfig,
    pub rows: Vec<McRow>,
}

impl McReport {
    pub fn row(&self, estimator: &str, snr_db: f64) -> Option<&McRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.snr_db == snr_db)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }

    /// Writes the CSV and, next to it with a `.json` extension, the resolved
    /// config. Returns the sidecar path.
    pub fn write(&self, csv_path: impl AsRef<Path>) -> Result<PathBuf> {
        let csv_path = csv_path.as_ref();
        if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(csv_path, self.to_csv_string()?)?;
        let sidecar = csv_path.with_extension("json");
        std::fs::write(&sidecar, serde_json::to_string_pretty(&self.config)? + "\n")?;
        Ok(sidecar)
    }
}

/// Per-(estimator, SNR) sums over the trials of one (anchor set, target) pair.
#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    sq_err: f64,
    ok: usize,
    fail: usize,
    time_s: f64,
}

/// Squared bounds of one pair at one SNR; `None` for a singular FIM.
#[derive(Debug, Clone, Copy, Default)]
struct PairBounds {
    peb2_sq: Option<f64>,
    peb3_sq: Option<f64>,
}

struct PairResult {
    /// Indexed `[snr][estimator]`.
    tallies: Vec<Vec<Tally>>,
    bounds: Vec<PairBounds>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn run_pair(cfg: &ExperimentConfig, settings: &Settings, scenario: &Scenario, target_index: usize, repeats: usize) -> PairResult {
    let target = scenario.targets[target_index];
    let k = scenario.anchors.len();
    let mut tallies = vec![vec![Tally::default(); cfg.estimators.len()]; cfg.snr_db.len()];
    let mut bounds = Vec::with_capacity(cfg.snr_db.len());
    let mut times = vec![0.0; repeats];
    for (si, &snr) in cfg.snr_db.iter().enumerate() {
        let policy = NoisePolicy { noiseless: cfg.noiseless, ..NoisePolicy::new(snr, cfg.bandwidth_hz) };
        let sigmas = vec![policy.sigma(); k];
        let bound = |dim| fim(&scenario.anchors, &sigmas, &target, dim).and_then(|f| peb(&f)).ok().map(|p| p.value * p.value);
        bounds.push(PairBounds { peb2_sq: bound(Dim::Two), peb3_sq: bound(Dim::Three) });
        for trial in 0..cfg.n_noise {
            let trial_seed = trial as u64;
            let m = match synthesize_measurements(scenario, target_index, &policy, trial_seed) {
                Ok(m) => m,
                Err(e) => {
                    log::warn!("measurement synthesis failed: {e}");
                    tallies[si].iter_mut().for_each(|t| t.fail += 1);
                    continue;
                }
            };
            let init_key = (target_index * cfg.n_noise + trial) as u64;
            let problem = Problem {
                anchors: &scenario.anchors,
                building: &scenario.building,
                ranges: &m.ranges,
                sigmas: &m.sigmas,
                known_z: Some(target.z),
                init: random_point_in(&scenario.building, scenario.seed, init_key),
            };
            for (ei, spec) in cfg.estimators.iter().enumerate() {
                let mut result = None;
                for t in times.iter_mut() {
                    let start = Instant::now();
                    let r = run_estimator(spec, settings, &problem);
                    *t = start.elapsed().as_secs_f64();
                    result.get_or_insert(r);
                }
                let tally = &mut tallies[si][ei];
                tally.time_s += median(&mut times);
                match result.expect("at least one repeat") {
                    Ok(out) => {
                        let e = out.point().distance(&target);
                        tally.sq_err += e * e;
                        tally.ok += 1;
                    }
                    Err(e) => {
                        log::debug!(
                            "{} failed at snr {snr} dB, seed {}, target {target_index}, trial {trial}: {e}",
                            spec.label(cfg.n_z),
                            scenario.seed
                        );
                        tally.fail += 1;
                    }
                }
            }
        }
    }
    PairResult { tallies, bounds }
}

fn run(cfg: &ExperimentConfig, mode: ExecutionMode, repeats: usize) -> Result<McReport> {
    cfg.validate()?;
    let params = cfg.scenario_params();
    let scenarios: Vec<Scenario> =
        (0..cfg.n_anchor_sets as u64).map(|s| sample_scenario_set(&params, s)).collect::<Result<_>>()?;
    let settings = cfg.settings();
    let pairs = cfg.n_anchor_sets * cfg.n_targets;
    let results = map_indexed(pairs, mode, |i| {
        run_pair(cfg, &settings, &scenarios[i / cfg.n_targets], i % cfg.n_targets, repeats)
    });

    let labels = cfg.labels();
    let mut rows = Vec::with_capacity(labels.len() * cfg.snr_db.len());
    for (ei, spec) in cfg.estimators.iter().enumerate() {
        for (si, &snr) in cfg.snr_db.iter().enumerate() {
            let mut total = Tally::default();
            let (mut peb_sum, mut peb_n) = (0.0, 0usize);
            for r in &results {
                let t = r.tallies[si][ei];
                total.sq_err += t.sq_err;
                total.ok += t.ok;
                total.fail += t.fail;
                total.time_s += t.time_s;
                let b = r.bounds[si];
                if let Some(v) = if spec.is_planar() { b.peb2_sq } else { b.peb3_sq } {
                    peb_sum += v;
                    peb_n += 1;
                }
            }
            let n_trials = total.ok + total.fail;
            if total.fail > 0 {
                log::warn!("{}: {} of {n_trials} trials failed at {snr} dB and are excluded", labels[ei], total.fail);
            }
            rows.push(McRow {
                estimator: labels[ei].clone(),
                snr_db: snr,
                k: cfg.k,
                rmse_m: if total.ok > 0 { (total.sq_err / total.ok as f64).sqrt() } else { f64::NAN },
                peb_m: if peb_n > 0 { (peb_sum / peb_n as f64).sqrt() } else { f64::NAN },
                mean_walltime_s: total.time_s / n_trials.max(1) as f64,
                n_trials,
                n_fail: total.fail,
            });
        }
    }
    Ok(McReport { config: cfg.clone(), rows })
}

/// Full Monte Carlo run. Everything except the wall-time column is a
/// deterministic function of the config, whatever the execution mode.
pub fn run_experiment(cfg: &ExperimentConfig, mode: ExecutionMode) -> Result<McReport> {
    run(cfg, mode, 1)
}

/// Same trials as [`run_experiment`], run sequentially with every estimate
/// repeated `timing_repeats` times; the wall-time column holds the mean over
/// trials of the per-trial median.
pub fn time_estimators(cfg: &ExperimentConfig) -> Result<McReport> {
    run(cfg, ExecutionMode::Sequential, cfg.timing_repeats)
}
