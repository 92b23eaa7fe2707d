//! Gaussian conditional simulation models, the closed-form COT oracle and
//! the rate and coverage experiment drivers.
//!
//! Every model draws `Z ~ Uniform([0,1]^d_Z)` and `Y(w) | Z = z ~ N(mu_w(z), Sigma_w(z))`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cot::{estimate_cot, CotConfig};
use crate::data::{JointSample, Points};
use crate::error::{Error, Result};
use crate::infer::{bootstrap_ci, BootstrapConfig};
use crate::ot::gelbrich_w2sq;
use crate::rng::{derive_seed, substream};

const TAG_DATA: u64 = 0x44;
const TAG_ESTIMATE: u64 = 0x45;
const TAG_BOOT: u64 = 0x46;

/// Names accepted by [`builtin_scenario`].
pub const SCENARIOS: [&str; 6] = ["s1_dy2_dz1", "s2_dy2_dz2", "s3_dy3_dz2", "loc_dy1_dz1", "quad", "scale"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// `mu(z) = intercept + slope z`, constant covariance.
    Location,
    /// `mu(z) = slope (z - center)^2 + intercept` with an entrywise square, constant covariance.
    Quadratic,
    /// `mu(z) = intercept`, covariance `(scale . z) * covariance`.
    Scale,
}

/// Parameters of one arm. Matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmParams {
    /// Length `d_Y`.
    pub intercept: Vec<f64>,
    /// `d_Y x d_Z`; unused by the scale model.
    pub slope: Vec<f64>,
    /// Length `d_Z`; quadratic model only.
    pub center: Vec<f64>,
    /// Length `d_Z`; scale model only.
    pub scale: Vec<f64>,
    /// `d_Y x d_Y`, symmetric positive definite.
    pub covariance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelParams", into = "ModelParams")]
pub struct GaussianCondModel {
    name: String,
    kind: ModelKind,
    d_y: usize,
    d_z: usize,
    arms: [ArmParams; 2],
    published_parameters: bool,
    chol: [Vec<f64>; 2],
}

#[derive(Serialize, Deserialize)]
struct ModelParams {
    name: String,
    kind: ModelKind,
    d_y: usize,
    d_z: usize,
    arms: [ArmParams; 2],
    published_parameters: bool,
}

impl TryFrom<ModelParams> for GaussianCondModel {
    type Error = Error;

    fn try_from(p: ModelParams) -> Result<Self> {
        GaussianCondModel::new(p.name, p.kind, p.d_y, p.d_z, p.arms, p.published_parameters)
    }
}

impl From<GaussianCondModel> for ModelParams {
    fn from(m: GaussianCondModel) -> Self {
        ModelParams {
            name: m.name,
            kind: m.kind,
            d_y: m.d_y,
            d_z: m.d_z,
            arms: m.arms,
            published_parameters: m.published_parameters,
        }
    }
}

fn cholesky(d: usize, s: &[f64]) -> Option<Vec<f64>> {
    let m = DMatrix::from_row_slice(d, d, s);
    for i in 0..d {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-14 {
                return None;
            }
        }
    }
    let l = m.cholesky()?.l();
    Some((0..d * d).map(|k| l[(k / d, k % d)]).collect())
}

impl GaussianCondModel {
    pub fn new(
        name: impl Into<String>,
        kind: ModelKind,
        d_y: usize,
        d_z: usize,
        arms: [ArmParams; 2],
        published_parameters: bool,
    ) -> Result<Self> {
        if d_y == 0 || d_z == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        let mut chol: [Vec<f64>; 2] = Default::default();
        for (w, arm) in arms.iter().enumerate() {
            let check = |what: &str, v: &[f64], len: usize| {
                if v.len() != len || v.iter().any(|x| !x.is_finite()) {
                    Err(Error::Config(format!("arm {w}: {what} needs {len} finite entries, got {}", v.len())))
                } else {
                    Ok(())
                }
            };
            check("intercept", &arm.intercept, d_y)?;
            check("covariance", &arm.covariance, d_y * d_y)?;
            match kind {
                ModelKind::Location => check("slope", &arm.slope, d_y * d_z)?,
                ModelKind::Quadratic => {
                    check("slope", &arm.slope, d_y * d_z)?;
                    check("center", &arm.center, d_z)?;
                }
                ModelKind::Scale => {
                    check("scale", &arm.scale, d_z)?;
                    // the origin is a null set; positivity elsewhere on the cube needs every entry > 0
                    if arm.scale.iter().any(|&v| v <= 0.0) {
                        return Err(Error::Config(format!(
                            "arm {w}: scale vector must be strictly positive so the covariance stays positive definite"
                        )));
                    }
                }
            }
            chol[w] = cholesky(d_y, &arm.covariance)
                .ok_or_else(|| Error::Config(format!("arm {w}: covariance is not symmetric positive definite")))?;
        }
        Ok(GaussianCondModel { name: name.into(), kind, d_y, d_z, arms, published_parameters, chol })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn d_y(&self) -> usize {
        self.d_y
    }

    pub fn d_z(&self) -> usize {
        self.d_z
    }

    /// `[control, treated]` parameters.
    pub fn arms(&self) -> &[ArmParams; 2] {
        &self.arms
    }

    /// False when the parameters are local stand-ins rather than published values.
    pub fn published_parameters(&self) -> bool {
        self.published_parameters
    }

    /// Conditional mean of arm `w` at `z`.
    pub fn mean(&self, w: usize, z: &[f64]) -> Vec<f64> {
        let arm = &self.arms[w];
        let (dy, dz) = (self.d_y, self.d_z);
        match self.kind {
            ModelKind::Location => {
                (0..dy).map(|r| arm.intercept[r] + (0..dz).map(|c| arm.slope[r * dz + c] * z[c]).sum::<f64>()).collect()
            }
            ModelKind::Quadratic => (0..dy)
                .map(|r| {
                    arm.intercept[r]
                        + (0..dz).map(|c| arm.slope[r * dz + c] * (z[c] - arm.center[c]).powi(2)).sum::<f64>()
                })
                .collect(),
            ModelKind::Scale => arm.intercept.clone(),
        }
    }

    /// Multiplier applied to the base covariance of arm `w` at `z`.
    pub fn covariance_factor(&self, w: usize, z: &[f64]) -> f64 {
        match self.kind {
            ModelKind::Scale => self.arms[w].scale.iter().zip(z).map(|(a, b)| a * b).sum(),
            _ => 1.0,
        }
    }

    /// Conditional covariance of arm `w` at `z`, row-major.
    pub fn covariance(&self, w: usize, z: &[f64]) -> Vec<f64> {
        let f = self.covariance_factor(w, z);
        self.arms[w].covariance.iter().map(|v| v * f).collect()
    }

    fn draw_y<R: Rng>(&self, w: usize, z: &[f64], rng: &mut R, out: &mut Vec<f64>) -> bool {
        let dy = self.d_y;
        let mu = self.mean(w, z);
        let sd = self.covariance_factor(w, z).max(0.0).sqrt();
        let xi: Vec<f64> = (0..dy).map(|_| rng.sample(StandardNormal)).collect();
        let l = &self.chol[w];
        let mut clamped = false;
        for r in 0..dy {
            let v = mu[r] + sd * (0..=r).map(|c| l[r * dy + c] * xi[c]).sum::<f64>();
            let c = v.clamp(0.0, 1.0);
            clamped |= c != v;
            out.push(c);
        }
        clamped
    }
}

/// One simulated two-arm data set.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub control: JointSample,
    pub treated: JointSample,
    /// Fraction of rows (over both arms) with at least one clamped outcome coordinate.
    pub clamp_fraction: f64,
}

/// Draws `n` observations per arm. Outcomes outside `[0,1]` are clamped to the cube.
pub fn generate<R: Rng>(model: &GaussianCondModel, n: usize, rng: &mut R) -> Result<Simulated> {
    if n == 0 {
        return Err(Error::Argument("at least one observation per arm is required".into()));
    }
    let dim = model.d_y + model.d_z;
    let mut clamped = 0usize;
    let mut arms = Vec::with_capacity(2);
    for w in 0..2 {
        let mut coords = Vec::with_capacity(n * dim);
        for _ in 0..n {
            let z: Vec<f64> = (0..model.d_z).map(|_| rng.random::<f64>()).collect();
            if model.draw_y(w, &z, rng, &mut coords) {
                clamped += 1;
            }
            coords.extend_from_slice(&z);
        }
        arms.push(JointSample::new(model.d_y, model.d_z, Points::new(dim, coords)?)?);
    }
    let treated = arms.pop().expect("two arms");
    let control = arms.pop().expect("two arms");
    Ok(Simulated { control, treated, clamp_fraction: clamped as f64 / (2 * n) as f64 })
}

/// Monte Carlo quadrature of the closed-form COT value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub value: f64,
    pub std_error: f64,
    pub points: usize,
}

/// Averages the Gaussian closed form over `m` i.i.d. uniform covariate draws.
///
/// The covariance part of every model factors through constants, so only the
/// mean term varies with `z`: for the scale model with factors `a`, `b` it is
/// `a tr S0 + b tr S1 - 2 sqrt(ab) tr (S1^{1/2} S0 S1^{1/2})^{1/2}`.
pub fn true_cw2(model: &GaussianCondModel, m: usize, seed: u64) -> Result<OracleValue> {
    if m < 1000 {
        return Err(Error::Argument(format!("oracle needs at least 1000 quadrature points, got {m}")));
    }
    let dy = model.d_y;
    let zeros = vec![0.0; dy];
    let (s0, s1) = (&model.arms[0].covariance, &model.arms[1].covariance);
    let bures = gelbrich_w2sq(&zeros, s0, &zeros, s1)?;
    let trace = |s: &[f64]| (0..dy).map(|i| s[i * dy + i]).sum::<f64>();
    let (t0, t1) = (trace(s0), trace(s1));
    let cross = (t0 + t1 - bures) / 2.0;

    let mut rng = substream(seed, &[]);
    let mut values = Vec::with_capacity(m);
    let mut z = vec![0.0; model.d_z];
    for _ in 0..m {
        for v in z.iter_mut() {
            *v = rng.random::<f64>();
        }
        let (m0, m1) = (model.mean(0, &z), model.mean(1, &z));
        let mean_term: f64 = m0.iter().zip(&m1).map(|(a, b)| (a - b) * (a - b)).sum();
        let cov_term = match model.kind {
            ModelKind::Scale => {
                let (a, b) = (model.covariance_factor(0, &z), model.covariance_factor(1, &z));
                (a * t0 + b * t1 - 2.0 * (a * b).sqrt() * cross).max(0.0)
            }
            _ => bures,
        };
        values.push(mean_term + cov_term);
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
    Ok(OracleValue { value: mean, std_error: (var / m as f64).sqrt(), points: m })
}

fn matrix_sum(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn diag(v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d * d).map(|k| if k / d == k % d { v[k / d] * v[k / d] } else { 0.0 }).collect()
}

fn location(
    name: &str,
    d_z: usize,
    base: (&[f64], &[f64]),
    shift: (&[f64], &[f64]),
    cov: [Vec<f64>; 2],
    published: bool,
) -> Result<GaussianCondModel> {
    let d_y = base.0.len();
    let arm = |intercept: Vec<f64>, slope: Vec<f64>, covariance: Vec<f64>| ArmParams {
        intercept,
        slope,
        center: Vec::new(),
        scale: Vec::new(),
        covariance,
    };
    let [c0, c1] = cov;
    GaussianCondModel::new(
        name,
        ModelKind::Location,
        d_y,
        d_z,
        [arm(base.0.to_vec(), base.1.to_vec(), c0), arm(matrix_sum(base.0, shift.0), matrix_sum(base.1, shift.1), c1)],
        published,
    )
}

/// Built-in simulation scenarios; see [`SCENARIOS`].
///
/// `s1_dy2_dz1`, `s2_dy2_dz2` and `s3_dy3_dz2` carry published parameters.
/// `loc_dy1_dz1`, `quad` and `scale` are local stand-ins.
/// `s1`, `s2` and `s3` abbreviate the published scenarios.
pub fn builtin_scenario(name: &str) -> Result<GaussianCondModel> {
    let name = match name {
        "s1" => "s1_dy2_dz1",
        "s2" => "s2_dy2_dz2",
        "s3" => "s3_dy3_dz2",
        other => other,
    };
    let rho = 0.01 * 0.07 * 0.04;
    let cov2 = || [diag(&[0.05, 0.03]), vec![0.07 * 0.07, rho, rho, 0.04 * 0.04]];
    let intercept2 = [0.35, 0.55];
    let shift2 = [0.12, -0.08];
    match name {
        "s1_dy2_dz1" => location(name, 1, (&intercept2, &[0.10, -0.05]), (&shift2, &[0.10, 0.02]), cov2(), true),
        "s2_dy2_dz2" => location(
            name,
            2,
            (&intercept2, &[0.20, -0.10, 0.05, 0.15]),
            (&shift2, &[0.10, 0.04, 0.02, 0.06]),
            cov2(),
            true,
        ),
        "s3_dy3_dz2" => location(
            name,
            2,
            (&[0.35, 0.55, 0.45], &[0.20, -0.10, 0.05, 0.15, -0.12, 0.08]),
            (&[0.12, -0.08, 0.05], &[0.10, 0.04, 0.02, 0.06, -0.03, 0.01]),
            [diag(&[0.05, 0.03, 0.04]), vec![0.07 * 0.07, rho, 0.0, rho, 0.04 * 0.04, 0.0, 0.0, 0.0, 0.05 * 0.05]],
            true,
        ),
        // first coordinates of s1_dy2_dz1
        "loc_dy1_dz1" => {
            location(name, 1, (&[0.35], &[0.10]), (&[0.12], &[0.10]), [diag(&[0.05]), diag(&[0.07])], false)
        }
        "quad" => {
            let [c0, c1] = cov2();
            let arm = |intercept: Vec<f64>, slope: Vec<f64>, center: Vec<f64>, covariance: Vec<f64>| ArmParams {
                intercept,
                slope,
                center,
                scale: Vec::new(),
                covariance,
            };
            GaussianCondModel::new(
                name,
                ModelKind::Quadratic,
                2,
                2,
                [
                    arm(intercept2.to_vec(), vec![0.3, -0.1, 0.1, 0.2], vec![0.5, 0.5], c0),
                    arm(matrix_sum(&intercept2, &shift2), vec![0.4, 0.0, 0.05, 0.25], vec![0.4, 0.6], c1),
                ],
                false,
            )
        }
        "scale" => {
            let [c0, c1] = cov2();
            let arm = |intercept: Vec<f64>, scale: Vec<f64>, covariance: Vec<f64>| ArmParams {
                intercept,
                slope: Vec::new(),
                center: Vec::new(),
                scale,
                covariance,
            };
            GaussianCondModel::new(
                name,
                ModelKind::Scale,
                2,
                2,
                [arm(vec![0.4, 0.5], vec![1.0, 1.0], c0), arm(vec![0.55, 0.45], vec![1.5, 0.5], c1)],
                false,
            )
        }
        other => Err(Error::Config(format!("unknown scenario '{other}'; expected one of {}", SCENARIOS.join(", ")))),
    }
}

/// One `(n, rep)` cell of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub scenario: String,
    pub n: usize,
    pub rep: usize,
    pub estimate: f64,
    pub true_value: f64,
    pub error: f64,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub covered: Option<bool>,
    /// Seed from which this row's data and estimate derive.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub n: usize,
    pub reps: usize,
    pub mean_error: f64,
    /// Standard error of `mean_error`; zero for a single replicate.
    pub error_se: f64,
    pub mean_estimate: f64,
    pub coverage: Option<f64>,
    pub mean_clamp_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentMode {
    Rates,
    Coverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSettings {
    pub mode: ExperimentMode,
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub oracle_points: usize,
    pub cot: CotConfig,
    pub bootstrap: Option<BootstrapConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub model: GaussianCondModel,
    pub oracle: OracleValue,
    pub settings: ExperimentSettings,
    pub rows: Vec<ReplicateRow>,
    pub clamp_fractions: Vec<f64>,
    pub summaries: Vec<SizeSummary>,
    /// Least-squares slope of `ln(mean_error)` against `ln(n)`; absent with fewer than two sizes.
    pub log_log_slope: Option<f64>,
}

/// Per-size aggregates computed from the stored rows alone.
pub fn summarize(rows: &[ReplicateRow], clamp_fractions: &[f64]) -> Vec<SizeSummary> {
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.n).collect();
    sizes.sort_unstable();
    sizes.dedup();
    sizes
        .into_iter()
        .map(|n| {
            let idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].n == n).collect();
            let k = idx.len() as f64;
            let mean_error = idx.iter().map(|&i| rows[i].error).sum::<f64>() / k;
            let error_se = if idx.len() > 1 {
                let ss: f64 = idx.iter().map(|&i| (rows[i].error - mean_error).powi(2)).sum();
                (ss / (k - 1.0) / k).sqrt()
            } else {
                0.0
            };
            let flags: Vec<bool> = idx.iter().filter_map(|&i| rows[i].covered).collect();
            let coverage =
                (!flags.is_empty()).then(|| flags.iter().filter(|&&c| c).count() as f64 / flags.len() as f64);
            SizeSummary {
                n,
                reps: idx.len(),
                mean_error,
                error_se,
                mean_estimate: idx.iter().map(|&i| rows[i].estimate).sum::<f64>() / k,
                coverage,
                mean_clamp_fraction: idx.iter().map(|&i| clamp_fractions.get(i).copied().unwrap_or(0.0)).sum::<f64>()
                    / k,
            }
        })
        .collect()
}

/// Ordinary least-squares slope of `ln y` on `ln x`; `None` for fewer than two
/// distinct `x` or any nonpositive value.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return None;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    Some(logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Default oracle quadrature size used by the experiment drivers.
pub const ORACLE_POINTS: usize = 100_000;

/// Runs every `(n, rep)` cell of `settings`; intervals are computed when a
/// bootstrap configuration is present.
pub fn run_experiment(model: &GaussianCondModel, settings: ExperimentSettings) -> Result<ExperimentReport> {
    settings.cot.validate()?;
    if let Some(b) = &settings.bootstrap {
        b.validate()?;
    }
    if settings.reps == 0 || settings.n_list.is_empty() {
        return Err(Error::Argument("experiment needs at least one size and one replicate".into()));
    }
    if settings.n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument("sample sizes must be strictly increasing".into()));
    }
    let oracle = true_cw2(model, settings.oracle_points, derive_seed(settings.seed, &[0x4f]))?;
    let cells: Vec<(usize, usize)> =
        settings.n_list.iter().flat_map(|&n| (0..settings.reps).map(move |r| (n, r))).collect();
    let results = cells
        .par_iter()
        .map(|&(n, rep)| {
            let seed = derive_seed(settings.seed, &[n as u64, rep as u64]);
            let sim = generate(model, n, &mut substream(seed, &[TAG_DATA]))?;
            let cot = CotConfig { seed: derive_seed(seed, &[TAG_ESTIMATE]), ..settings.cot.clone() };
            let (estimate, ci) = match &settings.bootstrap {
                None => (estimate_cot(&sim.control, &sim.treated, &cot)?.value, None),
                Some(b) => {
                    let boot = BootstrapConfig { seed: derive_seed(seed, &[TAG_BOOT]), ..b.clone() };
                    let ci = bootstrap_ci(&sim.control, &sim.treated, &cot, &boot)?;
                    (ci.point, Some(ci))
                }
            };
            let row = ReplicateRow {
                scenario: model.name.clone(),
                n,
                rep,
                estimate,
                true_value: oracle.value,
                error: (estimate - oracle.value).abs(),
                ci_lower: ci.as_ref().map(|c| c.lower),
                ci_upper: ci.as_ref().map(|c| c.upper),
                covered: ci.as_ref().map(|c| c.contains(oracle.value)),
                seed,
            };
            Ok((row, sim.clamp_fraction))
        })
        .collect::<Result<Vec<_>>>()?;
    let (rows, clamp_fractions): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let summaries = summarize(&rows, &clamp_fractions);
    let log_log_slope = log_log_slope(&summaries.iter().map(|s| (s.n as f64, s.mean_error)).collect::<Vec<_>>());
    Ok(ExperimentReport { model: model.clone(), oracle, settings, rows, clamp_fractions, summaries, log_log_slope })
}

/// Estimation error of the COT estimator across sample sizes.
pub fn run_rate_experiment(
    model: &GaussianCondModel,
    n_list: &[usize],
    reps: usize,
    cot_config: &CotConfig,
    seed: u64,
) -> Result<ExperimentReport> {
    run_experiment(
        model,
        ExperimentSettings {
            mode: ExperimentMode::Rates,
            n_list: n_list.to_vec(),
            reps,
            seed,
            oracle_points: ORACLE_POINTS,
            cot: cot_config.clone(),
            bootstrap: None,
        },
    )
}

/// Coverage of bootstrap confidence intervals for the oracle value at one sample size.
pub fn run_coverage_experiment(
    model: &GaussianCondModel,
    n: usize,
    reps: usize,
    cot_config: &CotConfig,
    boot_config: &BootstrapConfig,
    seed: u64,
) -> Result<ExperimentReport> {
    if reps < 10 {
        return Err(Error::Argument(format!("coverage needs at least 10 replicates, got {reps}")));
    }
    run_experiment(
        model,
        ExperimentSettings {
            mode: ExperimentMode::Coverage,
            n_list: vec![n],
            reps,
            seed,
            oracle_points: ORACLE_POINTS,
            cot: cot_config.clone(),
            bootstrap: Some(boot_config.clone()),
        },
    )
}
