//! Random geometries, SNR-to-noise mapping and measurement synthesis.
//!
//! Every random quantity is drawn from a ChaCha8 stream whose 256-bit key is
//! built from `(seed, index_a, index_b, domain)`. Streams for different keys
//! are independent, so results never depend on evaluation order.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{path_length, Anchor, Target3D};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Anchors closer than this to the diffracting facade (|y| < 0.1 m) are redrawn.
pub const MIN_ANCHOR_FACADE_OFFSET: f64 = 0.1;

const DOMAIN_TARGETS: u64 = 0x7461_7267;
const DOMAIN_ANCHORS: u64 = 0x616e_6368;
const DOMAIN_NOISE: u64 = 0x6e6f_6973;
const DOMAIN_INIT: u64 = 0x696e_6974;
const DOMAIN_SET_SEED: u64 = 0x7365_7473;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Keyed generator for the stream `(seed, a, b, domain)`.
pub(crate) fn stream_rng(seed: u64, a: u64, b: u64, domain: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (i, word) in [seed, a, b, domain].into_iter().enumerate() {
        key[8 * i..8 * (i + 1)].copy_from_slice(&splitmix64(word ^ (i as u64).rotate_left(17)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Axis-aligned building `[0, lx] x [0, ly] x [0, lz]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildingBox {
    pub lx: f64,
    pub ly: f64,
    pub lz: f64,
}

impl BuildingBox {
    /// The cube of side `2L` used throughout the experiments.
    pub fn cube(l: f64) -> Self {
        Self { lx: 2.0 * l, ly: 2.0 * l, lz: 2.0 * l }
    }

    pub fn contains_strictly(&self, t: &Target3D) -> bool {
        t.x > 0.0 && t.x < self.lx && t.y > 0.0 && t.y < self.ly && t.z > 0.0 && t.z < self.lz
    }

    pub fn contains(&self, t: &Target3D) -> bool {
        (0.0..=self.lx).contains(&t.x) && (0.0..=self.ly).contains(&t.y) && (0.0..=self.lz).contains(&t.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    /// Building half-size `L`; the building is a `2L` cube.
    pub l: f64,
    pub k: usize,
    pub n_targets: usize,
    pub seed: u64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self { l: 15.0, k: 6, n_targets: 64, seed: 1 }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.l.is_finite() && self.l > 0.0) {
            return Err(Error::InvalidParams(format!("building parameter L must be positive, got {}", self.l)));
        }
        if self.k < 3 {
            return Err(Error::TooFewAnchors { needed: 3, found: self.k });
        }
        if self.n_targets == 0 {
            return Err(Error::InvalidParams("n_targets must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub building: BuildingBox,
    pub anchors: Vec<Anchor>,
    pub targets: Vec<Target3D>,
    pub seed: u64,
}

/// Targets i.i.d. uniform in the open building box.
pub fn sample_targets(building: &BuildingBox, n: usize, seed: u64) -> Vec<Target3D> {
    let mut rng = stream_rng(seed, 0, 0, DOMAIN_TARGETS);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let t = Target3D::new(
            rng.random_range(0.0..building.lx),
            rng.random_range(0.0..building.ly),
            rng.random_range(0.0..building.lz),
        );
        if building.contains_strictly(&t) {
            out.push(t);
        }
    }
    out
}

/// Anchors i.i.d. uniform in the exterior box `[0, lx] x [-ly, 0] x [0, lz]`.
pub fn sample_anchors(building: &BuildingBox, k: usize, seed: u64, set_index: u64) -> Vec<Anchor> {
    let mut rng = stream_rng(seed, set_index, 0, DOMAIN_ANCHORS);
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let a = Anchor::new(
            rng.random_range(0.0..=building.lx),
            -rng.random_range(0.0..=building.ly),
            rng.random_range(0.0..=building.lz),
        );
        if a.y.abs() >= MIN_ANCHOR_FACADE_OFFSET {
            out.push(a);
        }
    }
    out
}

pub fn sample_scenario(params: &ScenarioParams) -> Result<Scenario> {
    sample_scenario_set(params, 0)
}

/// Scenario for anchor set `set_index`. Targets depend only on `params.seed`
/// and are shared by every set; anchors and noise streams are per set.
pub fn sample_scenario_set(params: &ScenarioParams, set_index: u64) -> Result<Scenario> {
    params.validate()?;
    let building = BuildingBox::cube(params.l);
    let seed = if set_index == 0 {
        params.seed
    } else {
        splitmix64(params.seed ^ splitmix64(set_index ^ DOMAIN_SET_SEED))
    };
    Ok(Scenario {
        building,
        anchors: sample_anchors(&building, params.k, params.seed, set_index),
        targets: sample_targets(&building, params.n_targets, params.seed),
        seed,
    })
}

/// Range-noise standard deviation for a given SNR and bandwidth:
/// `sigma = c / (2 sqrt(2) pi B sqrt(SNR))`.
pub fn sigma_from_snr(snr_db: f64, bandwidth_hz: f64) -> f64 {
    let snr = 10f64.powf(snr_db / 10.0);
    SPEED_OF_LIGHT / (2.0 * std::f64::consts::SQRT_2 * std::f64::consts::PI * bandwidth_hz * snr.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePolicy {
    pub snr_db: f64,
    pub bandwidth_hz: f64,
    /// Per-anchor override of the SNR-derived sigma.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigmas: Option<Vec<f64>>,
    /// Keep the sigmas for weighting but add no noise to the ranges.
    #[serde(default)]
    pub noiseless: bool,
}

impl NoisePolicy {
    pub const DEFAULT_BANDWIDTH_HZ: f64 = 100e6;

    pub fn new(snr_db: f64, bandwidth_hz: f64) -> Self {
        Self { snr_db, bandwidth_hz, sigmas: None, noiseless: false }
    }

    pub fn noiseless(snr_db: f64, bandwidth_hz: f64) -> Self {
        Self { noiseless: true, ..Self::new(snr_db, bandwidth_hz) }
    }

    pub fn sigma(&self) -> f64 {
        sigma_from_snr(self.snr_db, self.bandwidth_hz)
    }

    pub fn sigmas(&self, k: usize) -> Result<Vec<f64>> {
        let sigmas = match &self.sigmas {
            Some(s) if s.len() != k => return Err(Error::LengthMismatch { expected: k, found: s.len() }),
            Some(s) => s.clone(),
            None => {
                if !(self.bandwidth_hz.is_finite() && self.bandwidth_hz > 0.0) {
                    return Err(Error::InvalidParams(format!("bandwidth must be positive, got {}", self.bandwidth_hz)));
                }
                vec![self.sigma(); k]
            }
        };
        if let Some(bad) = sigmas.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidParams(format!("sigma {bad} is not positive and finite")));
        }
        Ok(sigmas)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub ranges: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub trial_seed: u64,
}

impl MeasurementSet {
    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }
}

/// The `k` unit-variance normal draws behind trial `trial_seed` of a target.
/// Scaling them by sigma gives the additive range noise, so every SNR point of
/// a trial shares the same underlying realization.
pub fn standard_normals(scenario_seed: u64, target_index: usize, trial_seed: u64, k: usize) -> Vec<f64> {
    let mut rng = stream_rng(scenario_seed, target_index as u64, trial_seed, DOMAIN_NOISE);
    (0..k).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn true_ranges(anchors: &[Anchor], target: &Target3D) -> Vec<f64> {
    anchors.iter().map(|a| path_length(a, target)).collect()
}

/// `r_k = p_k + n_k` with `n_k ~ N(0, sigma_k^2)` independent across anchors.
pub fn synthesize_measurements(
    scenario: &Scenario,
    target_index: usize,
    policy: &NoisePolicy,
    trial_seed: u64,
) -> Result<MeasurementSet> {
    let target = scenario.targets.get(target_index).ok_or_else(|| {
        Error::InvalidParams(format!("target index {target_index} out of range ({} targets)", scenario.targets.len()))
    })?;
    let k = scenario.anchors.len();
    let sigmas = policy.sigmas(k)?;
    let mut ranges = true_ranges(&scenario.anchors, target);
    if !policy.noiseless {
        let xi = standard_normals(scenario.seed, target_index, trial_seed, k);
        for ((r, s), n) in ranges.iter_mut().zip(&sigmas).zip(xi) {
            *r += s * n;
        }
    }
    Ok(MeasurementSet { ranges, sigmas, trial_seed })
}

/// Deterministic point uniform in the building, keyed by a trial seed.
pub fn random_point_in(building: &BuildingBox, seed: u64, trial_seed: u64) -> Target3D {
    let mut rng = stream_rng(seed, trial_seed, 0, DOMAIN_INIT);
    Target3D::new(
        rng.random_range(0.0..=building.lx),
        rng.random_range(0.0..=building.ly),
        rng.random_range(0.0..=building.lz),
    )
}

#[derive(Serialize, Deserialize)]
struct ScenarioDoc {
    building: BuildingBox,
    anchors: Vec<[f64; 3]>,
    targets: Vec<[f64; 3]>,
    seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let b = &self.building;
        if ![b.lx, b.ly, b.lz].iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::InvalidParams("building dimensions must be positive".into()));
        }
        if self.anchors.len() < 3 {
            return Err(Error::TooFewAnchors { needed: 3, found: self.anchors.len() });
        }
        if let Some(i) = self.anchors.iter().position(|a| !a.is_finite()) {
            return Err(Error::InvalidParams(format!("anchor {i} has non-finite coordinates")));
        }
        if let Some(i) = self.targets.iter().position(|t| !(t.is_finite() && b.contains_strictly(t))) {
            return Err(Error::InvalidParams(format!("target {i} is not strictly inside the building")));
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        let doc = ScenarioDoc {
            building: self.building,
            anchors: self.anchors.iter().map(|a| [a.x, a.y, a.z]).collect(),
            targets: self.targets.iter().map(|t| [t.x, t.y, t.z]).collect(),
            seed: self.seed,
        };
        serde_json::to_string_pretty(&doc).expect("scenario serialization cannot fail")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: ScenarioDoc = serde_json::from_str(s)?;
        let scenario = Scenario {
            building: doc.building,
            anchors: doc.anchors.into_iter().map(|[x, y, z]| Anchor::new(x, y, z)).collect(),
            targets: doc.targets.into_iter().map(|[x, y, z]| Target3D::new(x, y, z)).collect(),
            seed: doc.seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = self.to_json_string();
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn building_is_two_l_cube() {
        let s = sample_scenario(&ScenarioParams { l: 15.0, k: 6, n_targets: 4, seed: 9 }).unwrap();
        assert_eq!(s.building, BuildingBox { lx: 30.0, ly: 30.0, lz: 30.0 });
        assert_eq!(s.anchors.len(), 6);
        assert_eq!(s.targets.len(), 4);
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = ScenarioParams { l: 15.0, k: 7, n_targets: 10, seed: 42 };
        assert_eq!(sample_scenario(&p).unwrap(), sample_scenario(&p).unwrap());
        let other = sample_scenario(&ScenarioParams { seed: 43, ..p }).unwrap();
        assert_ne!(sample_scenario(&p).unwrap().anchors, other.anchors);
    }

    #[test]
    fn anchor_sets_share_targets() {
        let p = ScenarioParams { l: 15.0, k: 5, n_targets: 3, seed: 1 };
        let a = sample_scenario_set(&p, 0).unwrap();
        let b = sample_scenario_set(&p, 1).unwrap();
        assert_eq!(a.targets, b.targets);
        assert_ne!(a.anchors, b.anchors);
        assert_ne!(a.seed, b.seed);
    }

    #[test]
    fn samples_stay_in_their_boxes() {
        let p = ScenarioParams { l: 15.0, k: 2000, n_targets: 10_000, seed: 5 };
        let s = sample_scenario(&p).unwrap();
        for t in &s.targets {
            assert!(s.building.contains_strictly(t));
        }
        let (mut lo, mut hi) = ([f64::MAX; 3], [f64::MIN; 3]);
        for t in &s.targets {
            for (i, v) in [t.x, t.y, t.z].into_iter().enumerate() {
                lo[i] = lo[i].min(v);
                hi[i] = hi[i].max(v);
            }
        }
        // 10^4 uniform draws cover the box to within a few cm of each face
        for i in 0..3 {
            assert!(lo[i] > 0.0 && lo[i] < 0.05);
            assert!(hi[i] < 30.0 && hi[i] > 29.95);
        }
        for a in &s.anchors {
            assert!((0.0..=30.0).contains(&a.x) && (-30.0..=-MIN_ANCHOR_FACADE_OFFSET).contains(&a.y));
            assert!((0.0..=30.0).contains(&a.z));
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(sample_scenario(&ScenarioParams { k: 2, ..Default::default() }).is_err());
        assert!(sample_scenario(&ScenarioParams { n_targets: 0, ..Default::default() }).is_err());
        assert!(sample_scenario(&ScenarioParams { l: -1.0, ..Default::default() }).is_err());
    }

    #[test]
    fn sigma_mapping() {
        let s0 = sigma_from_snr(0.0, 100e6);
        let expected = SPEED_OF_LIGHT / (2.0 * 2f64.sqrt() * std::f64::consts::PI * 1e8);
        assert_relative_eq!(s0, expected, max_relative = 1e-15);
        assert_relative_eq!(s0, 0.3374, max_relative = 1e-3);
        assert_relative_eq!(sigma_from_snr(20.0, 100e6), s0 / 10.0, max_relative = 1e-12);
        assert!(sigma_from_snr(400.0, 100e6) < 1e-20);
        let mut prev = f64::MAX;
        for snr in 0..=30 {
            let s = sigma_from_snr(snr as f64, 100e6);
            assert!(s < prev);
            prev = s;
        }
    }

    fn small_scenario() -> Scenario {
        sample_scenario(&ScenarioParams { l: 15.0, k: 6, n_targets: 3, seed: 77 }).unwrap()
    }

    #[test]
    fn noiseless_measurements_are_exact() {
        let s = small_scenario();
        let m = synthesize_measurements(&s, 1, &NoisePolicy::noiseless(10.0, 100e6), 3).unwrap();
        assert_eq!(m.ranges, true_ranges(&s.anchors, &s.targets[1]));
        assert!(m.sigmas.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn measurements_are_reproducible() {
        let s = small_scenario();
        let policy = NoisePolicy::new(10.0, 100e6);
        let a = synthesize_measurements(&s, 2, &policy, 99).unwrap();
        assert_eq!(a, synthesize_measurements(&s, 2, &policy, 99).unwrap());
        assert_ne!(a.ranges, synthesize_measurements(&s, 2, &policy, 100).unwrap().ranges);
        assert!(synthesize_measurements(&s, 3, &policy, 0).is_err());
    }

    #[test]
    fn noise_statistics() {
        let s = Scenario {
            building: BuildingBox::cube(15.0),
            anchors: vec![Anchor::new(1.0, -2.0, 3.0); 3],
            targets: vec![Target3D::new(10.0, 10.0, 10.0)],
            seed: 4,
        };
        let policy = NoisePolicy::new(5.0, 100e6);
        let sigma = policy.sigma();
        let p = path_length(&s.anchors[0], &s.targets[0]);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|t| synthesize_measurements(&s, 0, &policy, t).unwrap().ranges[0] - p)
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 * sigma / (n as f64).sqrt(), "mean {mean}");
        assert!((var.sqrt() / sigma - 1.0).abs() < 0.02, "std {}", var.sqrt());
    }

    #[test]
    fn json_round_trip_and_validation() {
        let s = small_scenario();
        let back = Scenario::from_json_str(&s.to_json_string()).unwrap();
        assert_eq!(back, s);

        let bad = s.to_json_string().replacen("\"lx\": 30.0", "\"lx\": 1.0", 1);
        assert!(Scenario::from_json_str(&bad).is_err());
        assert!(Scenario::from_json_str("{}").is_err());
    }
}
