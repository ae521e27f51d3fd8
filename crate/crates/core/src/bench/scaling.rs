use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::est2d::{build_lifted, build_sdr, solve_gtrs, solve_sdr, GtrsConfig};
use crate::scenario::{sample_scenario_set, synthesize_measurements, NoisePolicy, ScenarioParams};
use crate::sdp::SdpConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingMethod {
    Gtrs2d,
    Sdr2d,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingPoint {
    #[serde(rename = "K")]
    pub k: usize,
    /// Mean wall time of one estimate, including problem construction.
    pub mean_walltime_s: f64,
}

/// Times the fixed-height estimator for every anchor count in `ks` on
/// `instances` random noisy problems. Each instance set is timed `repeats`
/// times and the fastest pass is kept.
pub fn time_scaling(
    method: ScalingMethod,
    ks: &[usize],
    instances: usize,
    repeats: usize,
    snr_db: f64,
    seed: u64,
) -> Result<Vec<ScalingPoint>> {
    if instances == 0 || repeats == 0 {
        return Err(Error::InvalidParams("instances and repeats must be at least 1".into()));
    }
    let policy = NoisePolicy::new(snr_db, NoisePolicy::DEFAULT_BANDWIDTH_HZ);
    let sdp = SdpConfig::high_accuracy();
    let gtrs = GtrsConfig::default();
    ks.iter()
        .map(|&k| {
            let params = ScenarioParams { l: 15.0, k, n_targets: 1, seed };
            let data = (0..instances as u64)
                .map(|i| {
                    let sc = sample_scenario_set(&params, i)?;
                    let m = synthesize_measurements(&sc, 0, &policy, 0)?;
                    Ok((sc.anchors, sc.targets[0].z, m))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut best = f64::INFINITY;
            for _ in 0..repeats {
                let start = Instant::now();
                for (anchors, z, m) in &data {
                    // failures cost time too and stay in the measurement
                    let r = match method {
                        ScalingMethod::Gtrs2d => {
                            build_lifted(anchors, *z, &m.ranges, &m.sigmas).and_then(|(g, _)| solve_gtrs(&g, &gtrs))
                        }
                        ScalingMethod::Sdr2d => {
                            build_sdr(anchors, *z, &m.ranges, &m.sigmas).and_then(|p| solve_sdr(&p, &sdp))
                        }
                    };
                    std::hint::black_box(r.ok());
                }
                best = best.min(start.elapsed().as_secs_f64());
            }
            Ok(ScalingPoint { k, mean_walltime_s: best / instances as f64 })
        })
        .collect()
}

/// Least-squares slope of `log t` against `log K`.
pub fn loglog_slope(points: &[ScalingPoint]) -> f64 {
    let xy: Vec<(f64, f64)> = points.iter().map(|p| ((p.k as f64).ln(), p.mean_walltime_s.ln())).collect();
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = xy.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xy.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
