//! Two-sample bootstrap confidence intervals for the COT estimate.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::cot::{estimate_cot, CotConfig};
use crate::data::JointSample;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, substream};

const TAG_RESAMPLE: u64 = 0x42;
const TAG_REPLICATE: u64 = 0x52;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    /// `point +- z * sd_hat`.
    #[default]
    Normal,
    /// Empirical quantiles of the replicate values.
    Percentile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    /// Number of resamples.
    pub b: usize,
    pub level: f64,
    pub seed: u64,
    pub method: IntervalMethod,
    /// Replaces the bootstrap standard deviation in the normal interval.
    pub sd_override: Option<f64>,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { b: 100, level: 0.95, seed: 0, method: IntervalMethod::Normal, sd_override: None }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b < 2 {
            return Err(Error::Config(format!("bootstrap needs at least 2 resamples, got {}", self.b)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("confidence level {} is outside (0, 1)", self.level)));
        }
        if let Some(sd) = self.sd_override {
            if sd.is_nan() || sd < 0.0 {
                return Err(Error::Config("sd override must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub sd_hat: f64,
    pub b_used: usize,
    pub level: f64,
    pub method: IntervalMethod,
    /// Replicate values in resample order.
    pub replicates: Vec<f64>,
}

impl ConfidenceInterval {
    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383_577_518_672_69e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] =
        [-5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2, 6.680131188771972e1, -1.328068155288572e1];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549671010624976,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Inverse standard normal CDF: rational approximation refined by one Halley step.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Argument(format!("probability {p} is outside (0, 1)")));
    }
    if p > 0.5 {
        return normal_quantile(1.0 - p).map(|x| -x);
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let x = acklam(p);
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    Ok(x - u / (1.0 + x * u / 2.0))
}

/// Sample standard deviation accumulated over sorted values.
fn sorted_sd(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    (ss / (n - 1.0)).sqrt()
}

/// Linear-interpolation empirical quantile of sorted values.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Interval from a point estimate and its bootstrap replicates.
pub fn interval_from_replicates(
    point: f64,
    replicates: Vec<f64>,
    config: &BootstrapConfig,
) -> Result<ConfidenceInterval> {
    config.validate()?;
    if replicates.len() < 2 {
        return Err(Error::Config("at least 2 replicates are needed".into()));
    }
    let sd_hat = sorted_sd(&replicates);
    let (lower, upper) = match config.method {
        IntervalMethod::Normal => {
            let z = normal_quantile((1.0 + config.level) / 2.0)?;
            let half = z * config.sd_override.unwrap_or(sd_hat);
            if half.is_finite() {
                (point - half, point + half)
            } else {
                (f64::NEG_INFINITY, f64::INFINITY)
            }
        }
        IntervalMethod::Percentile => {
            let mut sorted = replicates.clone();
            sorted.sort_by(f64::total_cmp);
            let alpha = (1.0 - config.level) / 2.0;
            (quantile_sorted(&sorted, alpha), quantile_sorted(&sorted, 1.0 - alpha))
        }
    };
    Ok(ConfidenceInterval {
        point,
        lower,
        upper,
        sd_hat,
        b_used: replicates.len(),
        level: config.level,
        method: config.method,
        replicates,
    })
}

fn resample<R: Rng>(sample: &JointSample, rng: &mut R) -> JointSample {
    let n = sample.len();
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    sample.select(&idx)
}

/// Resamples `(control, treated)` for replicate `b`; group sizes are preserved.
pub fn bootstrap_resample(
    control: &JointSample,
    treated: &JointSample,
    seed: u64,
    b: usize,
) -> (JointSample, JointSample) {
    let c = resample(control, &mut substream(seed, &[TAG_RESAMPLE, b as u64, 0]));
    let t = resample(treated, &mut substream(seed, &[TAG_RESAMPLE, b as u64, 1]));
    (c, t)
}

/// Two-sample bootstrap: each replicate resamples both arms with replacement
/// and reruns the full estimator with its own Monte Carlo seed.
pub fn bootstrap_ci(
    control: &JointSample,
    treated: &JointSample,
    cot_config: &CotConfig,
    boot_config: &BootstrapConfig,
) -> Result<ConfidenceInterval> {
    boot_config.validate()?;
    let point = estimate_cot(control, treated, cot_config)?.value;
    let replicates = (0..boot_config.b)
        .into_par_iter()
        .map(|b| {
            let (c, t) = bootstrap_resample(control, treated, boot_config.seed, b);
            let cfg =
                CotConfig { seed: derive_seed(cot_config.seed, &[TAG_REPLICATE, b as u64]), ..cot_config.clone() };
            estimate_cot(&c, &t, &cfg).map(|e| e.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    interval_from_replicates(point, replicates, boot_config)
}
