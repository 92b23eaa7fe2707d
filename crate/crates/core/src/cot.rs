//! Two-stage Monte Carlo estimate of the conditional optimal transport value
//! between the aligned conditional models of two arms.
//!
//! `N_Z` covariate values are drawn from the aligned marginal; at each one,
//! `N_Y` outcome draws per arm are matched by exact assignment and the
//! per-covariate costs are averaged.

use std::fmt;

use rayon::prelude::*;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::JointSample;
use crate::density::{
    build_conditional_model, build_conditional_model_with_marginals, fit_density, fit_density_points, ConditionalModel,
    EstimatorConfig, Group, MarginalSource,
};
use crate::error::{Error, Result};
use crate::ot::{empirical_transport, CostSpec, SolverChoice};
use crate::rng::substream;

const TAG_Z: u64 = 0x5a;
const TAG_Y: u64 = 0x59;
const TAG_POOLED: u64 = 0x50;

/// Monte Carlo budget: the automatic rule or an explicit count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleSize {
    #[default]
    Auto,
    Fixed(usize),
}

impl Serialize for SampleSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SampleSize::Auto => s.serialize_str("auto"),
            SampleSize::Fixed(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for SampleSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct SizeVisitor;
        impl Visitor<'_> for SizeVisitor {
            type Value = SampleSize;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a positive integer or \"auto\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<SampleSize, E> {
                if v == 0 {
                    return Err(E::custom("sample size must be positive"));
                }
                Ok(SampleSize::Fixed(v as usize))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<SampleSize, E> {
                if v <= 0 {
                    return Err(E::custom("sample size must be positive"));
                }
                self.visit_u64(v as u64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<SampleSize, E> {
                match v {
                    "auto" => Ok(SampleSize::Auto),
                    other => other
                        .parse::<u64>()
                        .map_err(|_| E::custom(format!("invalid sample size '{other}'")))
                        .and_then(|n| self.visit_u64(n)),
                }
            }
        }
        d.deserialize_any(SizeVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CotConfig {
    pub n_z: SampleSize,
    pub n_y: SampleSize,
    /// Upper bounds applied to automatic sample sizes.
    pub max_n_z: usize,
    pub max_n_y: usize,
    pub cost: CostSpec,
    pub seed: u64,
    pub estimator: EstimatorConfig,
}

impl Default for CotConfig {
    fn default() -> Self {
        CotConfig {
            n_z: SampleSize::Auto,
            n_y: SampleSize::Auto,
            max_n_z: 5000,
            max_n_y: 500,
            cost: CostSpec::SquaredEuclidean,
            seed: 0,
            estimator: EstimatorConfig::default(),
        }
    }
}

impl CotConfig {
    pub fn validate(&self) -> Result<()> {
        self.estimator.validate()?;
        if self.max_n_z == 0 || self.max_n_y == 0 {
            return Err(Error::Config("sample size caps must be positive".into()));
        }
        for s in [self.n_z, self.n_y] {
            if s == SampleSize::Fixed(0) {
                return Err(Error::Config("sample sizes must be positive".into()));
            }
        }
        Ok(())
    }

    /// Effective `(N_Z, N_Y)` for arm sizes `n`, `m`.
    pub fn resolve_sample_sizes(&self, n: usize, m: usize, d_y: usize) -> Result<(usize, usize)> {
        let needs_auto = self.n_z == SampleSize::Auto || self.n_y == SampleSize::Auto;
        if needs_auto && n.max(m) < 2 {
            return Err(Error::Config("automatic sample sizes need observation counts of at least 2".into()));
        }
        let (auto_z, auto_y) = if needs_auto { auto_sample_sizes(n, m, d_y) } else { (0, 0) };
        let pick = |s: SampleSize, auto: usize, cap: usize| match s {
            SampleSize::Auto => auto.min(cap),
            SampleSize::Fixed(k) => k,
        };
        Ok((pick(self.n_z, auto_z, self.max_n_z), pick(self.n_y, auto_y, self.max_n_y)))
    }
}

/// Uncapped automatic sizes with the natural logarithm:
/// `N_Z = floor(k ln k)` and `N_Y = floor(k^max(d_Y/4, 1) ln k)` for `k = max(n, m)`.
pub fn auto_sample_sizes(n: usize, m: usize, d_y: usize) -> (usize, usize) {
    let k = n.max(m) as f64;
    let log = k.ln();
    let n_z = (k * log).floor();
    let exponent = (d_y as f64 / 4.0).max(1.0);
    let n_y = (k.powf(exponent) * log).floor();
    let clamp = |v: f64| if v.is_finite() { (v as usize).max(1) } else { usize::MAX };
    (clamp(n_z), clamp(n_y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotDiagnostics {
    pub n_z: usize,
    pub n_y: usize,
    /// Observation counts `(control, treated)`.
    pub n_obs: [usize; 2],
    pub degenerate_rows: [usize; 2],
    pub clipped_mass_fraction: [f64; 2],
    pub log_base: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotEstimate {
    pub value: f64,
    pub per_z_values: Vec<f64>,
    /// Standard deviation of the per-covariate values over `sqrt(N_Z)`.
    pub mc_std_error: f64,
    pub diagnostics: CotDiagnostics,
    pub config: CotConfig,
}

fn check_samples(control: &JointSample, treated: &JointSample) -> Result<()> {
    if control.d_y() != treated.d_y() || control.d_z() != treated.d_z() {
        return Err(Error::Argument(format!(
            "arms disagree on dimensions: control (d_y = {}, d_z = {}), treated (d_y = {}, d_z = {})",
            control.d_y(),
            control.d_z(),
            treated.d_y(),
            treated.d_z()
        )));
    }
    for (name, s) in [("control", control), ("treated", treated)] {
        if s.is_empty() {
            return Err(Error::Degenerate(format!("the {name} arm is empty")));
        }
    }
    Ok(())
}

/// Fits both arms and builds their aligned conditional model.
pub fn fit_conditional_model(
    control: &JointSample,
    treated: &JointSample,
    config: &EstimatorConfig,
) -> Result<ConditionalModel> {
    check_samples(control, treated)?;
    let p_hat = fit_density(control, config)?;
    let q_hat = fit_density(treated, config)?;
    match (config.marginal, control.z_points(), treated.z_points()) {
        (MarginalSource::Separate, Some(zc), Some(zt)) => {
            let p_z = fit_density_points(&zc, 0, control.d_z(), config.j_z, config)?;
            let q_z = fit_density_points(&zt, 0, treated.d_z(), config.j_z, config)?;
            build_conditional_model_with_marginals(&p_hat, &q_hat, &p_z, &q_z)
        }
        _ => build_conditional_model(&p_hat, &q_hat),
    }
}

/// Full estimator: density fits, alignment and the two-stage Monte Carlo.
pub fn estimate_cot(control: &JointSample, treated: &JointSample, config: &CotConfig) -> Result<CotEstimate> {
    config.validate()?;
    let model = fit_conditional_model(control, treated, &config.estimator)?;
    estimate_cw_between_models(&model, config)
}

/// Two-stage Monte Carlo on an already built model.
pub fn estimate_cw_between_models(model: &ConditionalModel, config: &CotConfig) -> Result<CotEstimate> {
    estimate_with_streams(model, config, [0, 1])
}

/// `streams[g]` selects the outcome stream used for group `g`.
pub(crate) fn estimate_with_streams(
    model: &ConditionalModel,
    config: &CotConfig,
    streams: [u64; 2],
) -> Result<CotEstimate> {
    config.validate()?;
    let [n, m] = model.n_obs();
    let (n_z, n_y) = config.resolve_sample_sizes(n, m, model.d_y())?;
    let draws = model.sample_marginal_z(n_z, &mut substream(config.seed, &[TAG_Z]));

    let per_z_values: Vec<f64> = draws
        .cells
        .par_iter()
        .enumerate()
        .map(|(tau, &cell)| {
            let tau = tau as u64;
            let stream = |g: Group| substream(config.seed, &[TAG_Y, tau, streams[g.index()]]);
            let first = model.sample_conditional(Group::Control, cell, n_y, &mut stream(Group::Control))?;
            let second = model.sample_conditional(Group::Treated, cell, n_y, &mut stream(Group::Treated))?;
            empirical_transport(&first, &second, &config.cost, SolverChoice::Auto).map(|r| r.value)
        })
        .collect::<Result<_>>()?;

    let value = per_z_values.iter().sum::<f64>() / n_z as f64;
    let mc_std_error = if n_z > 1 {
        let var = per_z_values.iter().map(|v| (v - value) * (v - value)).sum::<f64>() / (n_z - 1) as f64;
        (var / n_z as f64).sqrt()
    } else {
        0.0
    };
    let md = model.diagnostics();
    Ok(CotEstimate {
        value,
        per_z_values,
        mc_std_error,
        diagnostics: CotDiagnostics {
            n_z,
            n_y,
            n_obs: [n, m],
            degenerate_rows: md.degenerate_rows,
            clipped_mass_fraction: md.clipped_mass_fraction,
            log_base: "natural".into(),
        },
        config: config.clone(),
    })
}

/// Unconditional transport cost between the outcome marginals of the two
/// aligned joints, from `count` pooled draws per arm. Both arms reuse one
/// covariate draw, as the conditional estimator does.
pub fn pooled_w2sq(model: &ConditionalModel, count: usize, cost: &CostSpec, seed: u64) -> Result<f64> {
    if count == 0 {
        return Err(Error::Argument("pooled sample size must be positive".into()));
    }
    let z = model.sample_marginal_z(count, &mut substream(seed, &[TAG_POOLED]));
    let mut clouds = Vec::with_capacity(2);
    for (role, group) in [Group::Control, Group::Treated].into_iter().enumerate() {
        let mut rng = substream(seed, &[TAG_POOLED, role as u64 + 1]);
        let mut coords = Vec::with_capacity(count * model.d_y());
        for &cell in &z.cells {
            coords.extend_from_slice(model.sample_conditional(group, cell, 1, &mut rng)?.coords());
        }
        clouds.push(crate::data::Points::new(model.d_y(), coords)?);
    }
    empirical_transport(&clouds[0], &clouds[1], cost, SolverChoice::Auto).map(|r| r.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Points;
    use crate::density::GridSpec;
    use approx::assert_abs_diff_eq;

    #[test]
    fn auto_sizes() {
        let (z, y) = auto_sample_sizes(100, 100, 2);
        let want = (100.0 * 100f64.ln()).floor() as usize;
        assert_eq!((z, y), (want, want));
        assert_eq!(auto_sample_sizes(100, 200, 1), auto_sample_sizes(200, 200, 1));
        let (_, y8) = auto_sample_sizes(100, 100, 8);
        assert_eq!(y8, (10_000.0 * 100f64.ln()).floor() as usize);
        assert_eq!(auto_sample_sizes(1, 1, 1), (1, 1));
    }

    #[test]
    fn caps_apply_to_automatic_sizes_only() {
        let cfg = CotConfig::default();
        assert_eq!(cfg.resolve_sample_sizes(2000, 2000, 2).unwrap(), (5000, 500));
        let cfg = CotConfig { n_z: SampleSize::Fixed(7000), n_y: SampleSize::Fixed(3), ..Default::default() };
        assert_eq!(cfg.resolve_sample_sizes(0, 0, 2).unwrap(), (7000, 3));
        assert!(CotConfig::default().resolve_sample_sizes(0, 0, 1).is_err());
    }

    #[test]
    fn sample_size_serde() {
        assert_eq!(serde_json::to_string(&SampleSize::Auto).unwrap(), "\"auto\"");
        assert_eq!(serde_json::to_string(&SampleSize::Fixed(12)).unwrap(), "12");
        assert_eq!(serde_json::from_str::<SampleSize>("12").unwrap(), SampleSize::Fixed(12));
        assert_eq!(serde_json::from_str::<SampleSize>("\"auto\"").unwrap(), SampleSize::Auto);
        assert!(serde_json::from_str::<SampleSize>("0").is_err());
        assert!(serde_json::from_str::<SampleSize>("\"many\"").is_err());
        let cfg = CotConfig::default();
        let back: CotConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    fn grid() -> GridSpec {
        GridSpec { d_y: 2, d_z: 1, grid_ny: 8, grid_nz: 8 }
    }

    fn point_mass_table(cell: usize) -> Vec<f64> {
        let mut row = vec![0.0; 64];
        row[cell] = 1.0;
        (0..8).flat_map(|_| row.clone()).collect()
    }

    fn fixed(n_z: usize, n_y: usize, seed: u64) -> CotConfig {
        CotConfig { n_z: SampleSize::Fixed(n_z), n_y: SampleSize::Fixed(n_y), seed, ..Default::default() }
    }

    #[test]
    fn identical_tables_give_value_within_jitter_scale() {
        let uniform: Vec<f64> = vec![1.0 / 64.0; 64 * 8];
        let model = ConditionalModel::from_tables(grid(), vec![0.125; 8], uniform.clone(), uniform).unwrap();
        let est = estimate_cw_between_models(&model, &fixed(20, 60, 3)).unwrap();
        let cell_diameter_sq = 2.0 / 64.0;
        assert!(est.value >= 0.0);
        assert!(est.value < 2.0 * cell_diameter_sq, "{}", est.value);
        let pm = point_mass_table(9);
        let model = ConditionalModel::from_tables(grid(), vec![0.125; 8], pm.clone(), pm).unwrap();
        let est = estimate_cw_between_models(&model, &fixed(20, 60, 3)).unwrap();
        assert!(est.value < 2.0 * cell_diameter_sq);
    }

    #[test]
    fn point_masses_give_squared_distance() {
        // cells (1, 1) and (5, 6) on an 8 x 8 outcome grid
        let a = point_mass_table(8 + 1);
        let b = point_mass_table(5 * 8 + 6);
        let model = ConditionalModel::from_tables(grid(), vec![0.125; 8], a, b).unwrap();
        let est = estimate_cw_between_models(&model, &fixed(30, 40, 1)).unwrap();
        let centre = |i: f64| (i + 0.5) / 8.0;
        let truth = (centre(1.0) - centre(5.0)).powi(2) + (centre(1.0) - centre(6.0)).powi(2);
        // jitter adds at most a cell's worth of spread; its mean effect is 2 * var(U)/64 per axis pair
        assert!((est.value - truth).abs() < 2.0 / 64.0, "{} vs {truth}", est.value);
        assert_abs_diff_eq!(
            est.value,
            est.per_z_values.iter().sum::<f64>() / est.per_z_values.len() as f64,
            epsilon = 1e-12
        );
    }

    #[test]
    fn deterministic_and_role_symmetric() {
        let mut rng = substream(8, &[]);
        use rand::Rng;
        let rows = |rng: &mut crate::rng::StreamRng| -> Vec<f64> {
            let mut v: Vec<f64> = (0..64 * 8).map(|_| rng.random::<f64>()).collect();
            for r in v.chunks_exact_mut(64) {
                let s: f64 = r.iter().sum();
                r.iter_mut().for_each(|x| *x /= s);
            }
            v
        };
        let (a, b) = (rows(&mut rng), rows(&mut rng));
        let model = ConditionalModel::from_tables(grid(), vec![0.125; 8], a, b).unwrap();
        let cfg = fixed(25, 30, 77);
        let e1 = estimate_cw_between_models(&model, &cfg).unwrap();
        let e2 = estimate_cw_between_models(&model, &cfg).unwrap();
        assert_eq!(e1, e2);
        let mirrored_model = ConditionalModel::from_tables(
            grid(),
            vec![0.125; 8],
            model.conditional_table(Group::Treated).to_vec(),
            model.conditional_table(Group::Control).to_vec(),
        )
        .unwrap();
        let mirrored = estimate_with_streams(&mirrored_model, &cfg, [1, 0]).unwrap();
        for (x, y) in mirrored.per_z_values.iter().zip(&e1.per_z_values) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        let unmirrored = estimate_cw_between_models(&mirrored_model, &cfg).unwrap();
        assert_ne!(unmirrored.per_z_values, e1.per_z_values);
    }

    #[test]
    fn rejects_inconsistent_arms() {
        let c = JointSample::new(1, 1, Points::from_rows(&[[0.1, 0.2], [0.3, 0.4]]).unwrap()).unwrap();
        let t = JointSample::new(2, 0, Points::from_rows(&[[0.1, 0.2], [0.3, 0.4]]).unwrap()).unwrap();
        assert!(matches!(estimate_cot(&c, &t, &CotConfig::default()), Err(Error::Argument(_))));
    }
}
