//! Wavelet projection density estimates on `[0, 1]^{d_Y + d_Z}` and the aligned
//! conditional model built from two of them.
//!
//! A fit computes empirical scaling coefficients at the finest level `J`,
//! transforms them into the coarse-scaling plus detail pyramid (where optional
//! soft-thresholding acts), and evaluates the projection on a cell-centred
//! grid. Negative values are clipped and the result renormalised by grid
//! quadrature, so evaluation and sampling share one quadrature table.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{JointSample, Points};
use crate::error::{Error, Result};
use crate::wavelet::WaveletBasis;

/// Points this close outside the unit cube are clamped onto it.
const BOUNDARY_SLACK: f64 = 1e-12;
/// Conditional rows whose marginal cell mass falls below this are replaced by
/// the uniform row.
const DEGENERATE_MASS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MarginalSource {
    /// Sum the joint grid masses over the outcome cells.
    #[default]
    Joint,
    /// Fit a separate covariate-only estimate at level `j_z`.
    Separate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub wavelet_order: usize,
    pub j0: u32,
    pub j_joint: u32,
    pub j_z: u32,
    /// Smoothness used by [`default_resolution`] only.
    pub smoothness: f64,
    /// Soft-threshold levels `lambda_j` for `j = j0, j0 + 1, ...`; a single
    /// entry applies to every level.
    pub threshold: Option<Vec<f64>>,
    pub nonnegativity: bool,
    pub renormalize: bool,
    pub grid_ny: usize,
    pub grid_nz: usize,
    pub cascade_depth: u32,
    pub marginal: MarginalSource,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            wavelet_order: 4,
            j0: 0,
            j_joint: 4,
            j_z: 6,
            smoothness: 2.0,
            threshold: None,
            nonnegativity: true,
            renormalize: true,
            grid_ny: 32,
            grid_nz: 16,
            cascade_depth: 10,
            marginal: MarginalSource::Joint,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.j_joint < self.j0 || self.j_z < self.j0 {
            return Err(Error::Config(format!(
                "resolution levels (j_joint = {}, j_z = {}) must be at least j0 = {}",
                self.j_joint, self.j_z, self.j0
            )));
        }
        if self.grid_ny < 8 || self.grid_nz < 8 {
            return Err(Error::Config(format!(
                "grid sizes must be at least 8 (grid_ny = {}, grid_nz = {})",
                self.grid_ny, self.grid_nz
            )));
        }
        if self.smoothness.is_nan() || self.smoothness <= 0.0 {
            return Err(Error::Config("smoothness must be positive".into()));
        }
        if let Some(t) = &self.threshold {
            if t.is_empty() || t.iter().any(|v| v.is_nan() || *v < 0.0) {
                return Err(Error::Config("threshold levels must be nonnegative".into()));
            }
        }
        if !(1..=10).contains(&self.wavelet_order) {
            return Err(Error::Config(format!("unsupported wavelet order {}", self.wavelet_order)));
        }
        Ok(())
    }

    fn threshold_at(&self, offset: usize) -> Option<f64> {
        self.threshold.as_ref().map(|t| if t.len() == 1 { t[0] } else { t.get(offset).copied().unwrap_or(0.0) })
    }
}

/// `floor(log2(n) / (2s + d))`, floored at `j0`.
pub fn default_resolution(n: usize, smoothness: f64, dim: usize, j0: u32) -> u32 {
    let j = ((n as f64).log2() / (2.0 * smoothness + dim as f64)).floor();
    (j.max(0.0) as u32).max(j0)
}

/// Soft-thresholding `sign(b) max(|b| - lambda, 0)`.
pub fn soft_threshold(beta: f64, lambda: f64) -> f64 {
    beta.signum() * (beta.abs() - lambda).max(0.0)
}

/// Cell-centred regular grid over `[0, 1]^{d_Y + d_Z}`.
///
/// Tables are laid out with the covariate cell as the outer index, so each
/// covariate cell owns a contiguous block of outcome cells. Multi-indices are
/// row-major within each block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub d_y: usize,
    pub d_z: usize,
    pub grid_ny: usize,
    pub grid_nz: usize,
}

impl GridSpec {
    pub fn y_cells(&self) -> usize {
        self.grid_ny.pow(self.d_y as u32)
    }

    pub fn z_cells(&self) -> usize {
        self.grid_nz.pow(self.d_z as u32)
    }

    pub fn cells(&self) -> usize {
        self.y_cells() * self.z_cells()
    }

    pub fn cell_volume(&self) -> f64 {
        (self.grid_ny as f64).powi(-(self.d_y as i32)) * (self.grid_nz as f64).powi(-(self.d_z as i32))
    }

    fn side(&self, axis: usize) -> usize {
        if axis < self.d_y {
            self.grid_ny
        } else {
            self.grid_nz
        }
    }

    fn unravel(mut lin: usize, side: usize, dims: usize) -> Vec<usize> {
        let mut idx = vec![0; dims];
        for slot in idx.iter_mut().rev() {
            *slot = lin % side;
            lin /= side;
        }
        idx
    }

    /// Centre of outcome cell `y_cell`.
    pub fn y_center(&self, y_cell: usize) -> Vec<f64> {
        Self::unravel(y_cell, self.grid_ny, self.d_y)
            .into_iter()
            .map(|i| (i as f64 + 0.5) / self.grid_ny as f64)
            .collect()
    }

    /// Centre of covariate cell `z_cell`.
    pub fn z_center(&self, z_cell: usize) -> Vec<f64> {
        Self::unravel(z_cell, self.grid_nz, self.d_z)
            .into_iter()
            .map(|i| (i as f64 + 0.5) / self.grid_nz as f64)
            .collect()
    }

    /// Joint point `(y, z)` at the centre of a table cell.
    pub fn cell_center(&self, z_cell: usize, y_cell: usize) -> Vec<f64> {
        let mut x = self.y_center(y_cell);
        x.extend(self.z_center(z_cell));
        x
    }
}

/// Fitted, clipped and renormalised density estimate.
#[derive(Debug, Clone)]
pub struct DensityEstimate {
    basis: Arc<WaveletBasis>,
    level: u32,
    n_obs: usize,
    raw_coeffs: Vec<f64>,
    coeffs: Vec<f64>,
    synthesis: Vec<f64>,
    nonnegativity: bool,
    normalizing_constant: f64,
    grid: GridSpec,
    table: Vec<f64>,
    negative_mass: f64,
}

fn validate_points(points: &Points) -> Result<Vec<f64>> {
    let mut coords = points.coords().to_vec();
    let dim = points.dim();
    for (i, v) in coords.iter_mut().enumerate() {
        if !v.is_finite() || *v < -BOUNDARY_SLACK || *v > 1.0 + BOUNDARY_SLACK {
            return Err(Error::data_at(i / dim, format!("coordinate {} = {v} lies outside [0, 1]", i % dim)));
        }
        *v = v.clamp(0.0, 1.0);
    }
    Ok(coords)
}

/// Contracts `tensor` (row-major, `shape`) along `axis` with the dense matrix
/// `mat` of shape `rows x shape[axis]`.
fn contract_axis(tensor: &[f64], shape: &mut [usize], axis: usize, mat: &[f64], rows: usize) -> Vec<f64> {
    let cols = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * rows * inner];
    for o in 0..outer {
        for r in 0..rows {
            let dst = &mut out[(o * rows + r) * inner..(o * rows + r + 1) * inner];
            for c in 0..cols {
                let w = mat[r * cols + c];
                if w == 0.0 {
                    continue;
                }
                let src = &tensor[(o * cols + c) * inner..(o * cols + c + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    shape[axis] = rows;
    out
}

/// Fits the joint density of one arm at resolution `j_joint`.
pub fn fit_density(sample: &JointSample, config: &EstimatorConfig) -> Result<DensityEstimate> {
    fit_density_points(sample.points(), sample.d_y(), sample.d_z(), config.j_joint, config)
}

/// Fits a density on `[0, 1]^{d_y + d_z}` from raw points; the first `d_y`
/// coordinates use the outcome grid and the rest the covariate grid.
pub fn fit_density_points(
    points: &Points,
    d_y: usize,
    d_z: usize,
    level: u32,
    config: &EstimatorConfig,
) -> Result<DensityEstimate> {
    config.validate()?;
    let dim = d_y + d_z;
    if dim == 0 || points.dim() != dim {
        return Err(Error::Argument(format!("points have dimension {}, expected {dim}", points.dim())));
    }
    let n = points.len();
    if n < 2 {
        return Err(Error::data(format!("need at least 2 observations, got {n}")));
    }
    if level < config.j0 {
        return Err(Error::Config(format!("level {level} below j0 = {}", config.j0)));
    }
    if (level as usize) * dim > 26 {
        return Err(Error::Config(format!("coefficient cube 2^({level} * {dim}) is too large; lower the resolution")));
    }
    let coords = validate_points(points)?;
    let basis = Arc::new(WaveletBasis::new(config.wavelet_order, dim, config.j0, level, config.cascade_depth)?);
    let side = 1usize << level;
    let mut cube = vec![0.0; side.pow(dim as u32)];

    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); dim];
    let mut cursor = vec![0usize; dim];
    for point in coords.chunks_exact(dim) {
        for (r, &x) in point.iter().enumerate() {
            basis.scaling_row(level, x, &mut rows[r]);
        }
        if rows.iter().any(|r| r.is_empty()) {
            continue;
        }
        cursor.iter_mut().for_each(|c| *c = 0);
        'outer: loop {
            let mut offset = 0usize;
            let mut value = 1.0;
            for r in 0..dim {
                let (k, v) = rows[r][cursor[r]];
                offset = offset * side + k;
                value *= v;
            }
            cube[offset] += value;
            for r in (0..dim).rev() {
                cursor[r] += 1;
                if cursor[r] < rows[r].len() {
                    continue 'outer;
                }
                cursor[r] = 0;
            }
            break;
        }
    }
    let inv_n = 1.0 / n as f64;
    cube.iter_mut().for_each(|c| *c *= inv_n);

    let mut raw_coeffs = cube.clone();
    basis.forward(&mut raw_coeffs, level);
    let (coeffs, synthesis) = if config.threshold.is_some() {
        let mut shrunk = raw_coeffs.clone();
        for (lin, c) in shrunk.iter_mut().enumerate() {
            if let Some(j) = detail_level(lin, side, dim, config.j0) {
                if let Some(lambda) = config.threshold_at((j - config.j0) as usize) {
                    *c = soft_threshold(*c, lambda);
                }
            }
        }
        let mut synth = shrunk.clone();
        basis.inverse(&mut synth, level);
        (shrunk, synth)
    } else {
        (raw_coeffs.clone(), cube)
    };

    let grid = GridSpec { d_y, d_z, grid_ny: config.grid_ny, grid_nz: config.grid_nz };
    let raw_table = evaluate_on_grid(&basis, level, &synthesis, &grid);
    let vol = grid.cell_volume();
    let abs_mass: f64 = raw_table.iter().map(|v| v.abs()).sum::<f64>() * vol;
    let negative_mass = if abs_mass > 0.0 {
        raw_table.iter().filter(|v| **v < 0.0).map(|v| -v).sum::<f64>() * vol / abs_mass
    } else {
        0.0
    };
    let mut table = raw_table;
    if config.nonnegativity {
        table.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let normalizing_constant = if config.renormalize {
        let c = table.iter().sum::<f64>() * vol;
        if c.is_nan() || c <= 0.0 {
            return Err(Error::Degenerate("density estimate has no positive mass on the grid".into()));
        }
        c
    } else {
        1.0
    };
    if normalizing_constant != 1.0 {
        table.iter_mut().for_each(|v| *v /= normalizing_constant);
    }

    Ok(DensityEstimate {
        basis,
        level,
        n_obs: n,
        raw_coeffs,
        coeffs,
        synthesis,
        nonnegativity: config.nonnegativity,
        normalizing_constant,
        grid,
        table,
        negative_mass,
    })
}

/// Level of the detail block holding Mallat-layout entry `lin`, or `None` for
/// the coarse scaling block.
fn detail_level(mut lin: usize, side: usize, dim: usize, j0: u32) -> Option<u32> {
    let mut level: Option<u32> = None;
    for _ in 0..dim {
        let p = lin % side;
        lin /= side;
        if p >= (1usize << j0) {
            let j = usize::BITS - 1 - p.leading_zeros();
            level = Some(level.map_or(j, |l| l.max(j)));
        }
    }
    level
}

/// Projection values at cell centres, laid out `[z_cell][y_cell]`.
fn evaluate_on_grid(basis: &WaveletBasis, level: u32, synthesis: &[f64], grid: &GridSpec) -> Vec<f64> {
    let dim = grid.d_y + grid.d_z;
    let side = 1usize << level;
    let mut shape = vec![side; dim];
    let mut tensor = synthesis.to_vec();
    for axis in 0..dim {
        let g = grid.side(axis);
        let centers: Vec<f64> = (0..g).map(|i| (i as f64 + 0.5) / g as f64).collect();
        let mat = basis.scaling_matrix(level, &centers);
        tensor = contract_axis(&tensor, &mut shape, axis, &mat, g);
    }
    // tensor is row-major over (y..., z...); move the covariate block outside.
    let (yc, zc) = (grid.y_cells(), grid.z_cells());
    if grid.d_z == 0 || grid.d_y == 0 {
        return tensor;
    }
    let mut out = vec![0.0; yc * zc];
    for y in 0..yc {
        for z in 0..zc {
            out[z * yc + y] = tensor[y * zc + z];
        }
    }
    out
}

impl DensityEstimate {
    pub fn basis(&self) -> &WaveletBasis {
        &self.basis
    }

    /// Finest resolution `J`: the estimate lives in the level-`J` scaling space,
    /// i.e. coarse scaling at `j0` plus details at `j0..J`.
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.grid.d_y, self.grid.d_z)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Density values at cell centres, `[z_cell][y_cell]`.
    pub fn grid_table(&self) -> &[f64] {
        &self.table
    }

    pub fn normalizing_constant(&self) -> f64 {
        self.normalizing_constant
    }

    /// Fraction of the projection's absolute grid mass removed by clipping.
    pub fn negative_mass_fraction(&self) -> f64 {
        self.negative_mass
    }

    /// Empirical coefficient pyramid before any shrinkage (Mallat layout).
    pub fn raw_coefficients(&self) -> &[f64] {
        &self.raw_coeffs
    }

    /// Coefficient pyramid after optional soft-thresholding.
    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    fn side(&self) -> usize {
        1usize << self.level
    }

    fn dim(&self) -> usize {
        self.grid.d_y + self.grid.d_z
    }

    fn flat(&self, positions: impl Iterator<Item = usize>) -> usize {
        positions.fold(0, |acc, p| acc * self.side() + p)
    }

    /// Coarse scaling coefficient with shifts `k` at level `j0`.
    pub fn scaling_coefficient(&self, shifts: &[usize]) -> Result<f64> {
        let j0 = self.basis.coarse_level();
        if shifts.len() != self.dim() || shifts.iter().any(|&k| k >= 1usize << j0) {
            return Err(Error::Argument(format!("invalid scaling shifts {shifts:?}")));
        }
        Ok(self.coeffs[self.flat(shifts.iter().copied())])
    }

    /// Detail coefficient of type `types` (`0` scaling, `1` wavelet per axis,
    /// not all zero) at level `j` with shifts `k`.
    pub fn detail_coefficient(&self, level: u32, types: &[u8], shifts: &[usize]) -> Result<f64> {
        if level < self.basis.coarse_level() || level >= self.level {
            return Err(Error::Argument(format!(
                "detail level {level} outside [{}, {})",
                self.basis.coarse_level(),
                self.level
            )));
        }
        let n = 1usize << level;
        if types.len() != self.dim() || shifts.len() != self.dim() {
            return Err(Error::Argument("dimension mismatch".into()));
        }
        if types.iter().all(|&t| t == 0) || types.iter().any(|&t| t > 1) {
            return Err(Error::Argument(format!("invalid detail type {types:?}")));
        }
        if shifts.iter().any(|&k| k >= n) {
            return Err(Error::Argument(format!("shifts {shifts:?} outside [0, {n})")));
        }
        let pos = types.iter().zip(shifts).map(|(&t, &k)| if t == 0 { k } else { n + k });
        Ok(self.coeffs[self.flat(pos)])
    }

    /// Raw projection value before clipping and renormalisation.
    pub fn projection(&self, x: &[f64]) -> Result<f64> {
        let dim = self.dim();
        if x.len() != dim {
            return Err(Error::Argument(format!("expected {dim} coordinates, got {}", x.len())));
        }
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Argument(format!("point {x:?} outside the unit cube")));
        }
        let rows: Vec<Vec<(usize, f64)>> = x
            .iter()
            .map(|&v| {
                let mut r = Vec::new();
                self.basis.scaling_row(self.level, v, &mut r);
                r
            })
            .collect();
        if rows.iter().any(|r| r.is_empty()) {
            return Ok(0.0);
        }
        let side = self.side();
        let mut cursor = vec![0usize; dim];
        let mut acc = 0.0;
        'outer: loop {
            let mut offset = 0usize;
            let mut value = 1.0;
            for r in 0..dim {
                let (k, v) = rows[r][cursor[r]];
                offset = offset * side + k;
                value *= v;
            }
            acc += value * self.synthesis[offset];
            for r in (0..dim).rev() {
                cursor[r] += 1;
                if cursor[r] < rows[r].len() {
                    continue 'outer;
                }
                cursor[r] = 0;
            }
            break;
        }
        Ok(acc)
    }

    /// Clipped, renormalised density at `x`.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        let mut v = self.projection(x)?;
        if self.nonnegativity {
            v = v.max(0.0);
        }
        Ok(v / self.normalizing_constant)
    }

    /// Cell masses of the covariate marginal, normalised to sum to one.
    pub fn z_marginal_masses(&self) -> Vec<f64> {
        let yc = self.grid.y_cells();
        let mut m: Vec<f64> = self.table.chunks_exact(yc).map(|row| row.iter().sum::<f64>()).collect();
        let total: f64 = m.iter().sum();
        if total > 0.0 {
            m.iter_mut().for_each(|v| *v /= total);
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Control,
    Treated,
}

impl Group {
    pub fn index(self) -> usize {
        match self {
            Group::Control => 0,
            Group::Treated => 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelDiagnostics {
    /// Conditional rows replaced by the uniform row, per group.
    pub degenerate_rows: [usize; 2],
    /// Fraction of absolute projection mass removed by clipping, per group.
    pub clipped_mass_fraction: [f64; 2],
}

/// Covariate draws from the aligned marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct ZDraws {
    pub cells: Vec<usize>,
    /// Jittered covariate values, row-major with `d_z` columns (empty when `d_z = 0`).
    pub points: Vec<f64>,
}

/// The aligned pair `P(dy | z) R(dz)`, `Q(dy | z) R(dz)` on the grid.
#[derive(Debug, Clone)]
pub struct ConditionalModel {
    grid: GridSpec,
    r_hat: Vec<f64>,
    rows: [Vec<f64>; 2],
    degenerate: [Vec<bool>; 2],
    n_obs: [usize; 2],
    diagnostics: ModelDiagnostics,
}

fn conditional_rows(est: &DensityEstimate, marginal: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let yc = est.grid.y_cells();
    let mut rows = est.table.clone();
    let mut degenerate = vec![false; marginal.len()];
    for ((row, m), flag) in rows.chunks_exact_mut(yc).zip(marginal).zip(degenerate.iter_mut()) {
        let s: f64 = row.iter().sum();
        if *m < DEGENERATE_MASS || s.is_nan() || s <= 0.0 {
            row.iter_mut().for_each(|v| *v = 1.0 / yc as f64);
            *flag = true;
        } else {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    (rows, degenerate)
}

/// Builds the aligned conditional model with `R = (P_Z + Q_Z) / 2` taken from
/// the joint grid masses.
pub fn build_conditional_model(p_hat: &DensityEstimate, q_hat: &DensityEstimate) -> Result<ConditionalModel> {
    let (pm, qm) = (p_hat.z_marginal_masses(), q_hat.z_marginal_masses());
    assemble(p_hat, q_hat, &pm, &qm)
}

/// As [`build_conditional_model`], with the covariate marginals taken from
/// separate covariate-only estimates on the same covariate grid.
pub fn build_conditional_model_with_marginals(
    p_hat: &DensityEstimate,
    q_hat: &DensityEstimate,
    p_z: &DensityEstimate,
    q_z: &DensityEstimate,
) -> Result<ConditionalModel> {
    for m in [p_z, q_z] {
        let g = m.grid();
        if g.d_y != 0 || g.d_z != p_hat.grid.d_z || g.grid_nz != p_hat.grid.grid_nz {
            return Err(Error::Argument("covariate marginal grid does not match the joint grid".into()));
        }
    }
    let norm = |m: &DensityEstimate| {
        let t = m.grid_table();
        let s: f64 = t.iter().sum();
        t.iter().map(|v| v / s).collect::<Vec<_>>()
    };
    assemble(p_hat, q_hat, &norm(p_z), &norm(q_z))
}

fn assemble(p_hat: &DensityEstimate, q_hat: &DensityEstimate, pm: &[f64], qm: &[f64]) -> Result<ConditionalModel> {
    if p_hat.grid != q_hat.grid {
        return Err(Error::Argument(format!(
            "control and treated estimates disagree on dimensions or grid ({:?} vs {:?})",
            p_hat.grid, q_hat.grid
        )));
    }
    let mut r_hat: Vec<f64> = pm.iter().zip(qm).map(|(a, b)| 0.5 * (a + b)).collect();
    let total: f64 = r_hat.iter().sum();
    r_hat.iter_mut().for_each(|v| *v /= total);
    let (rp, dp) = conditional_rows(p_hat, pm);
    let (rq, dq) = conditional_rows(q_hat, qm);
    let diagnostics = ModelDiagnostics {
        degenerate_rows: [dp.iter().filter(|d| **d).count(), dq.iter().filter(|d| **d).count()],
        clipped_mass_fraction: [p_hat.negative_mass, q_hat.negative_mass],
    };
    Ok(ConditionalModel {
        grid: p_hat.grid.clone(),
        r_hat,
        rows: [rp, rq],
        degenerate: [dp, dq],
        n_obs: [p_hat.n_obs, q_hat.n_obs],
        diagnostics,
    })
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn draw_index<R: Rng + ?Sized>(cdf: &[f64], rng: &mut R) -> usize {
    let total = *cdf.last().expect("nonempty cdf");
    let u = rng.random::<f64>() * total;
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

impl ConditionalModel {
    /// Model from explicit tables: `r_hat` over covariate cells and one
    /// row-major `[z_cell][y_cell]` table of conditional probabilities per group.
    pub fn from_tables(grid: GridSpec, r_hat: Vec<f64>, control: Vec<f64>, treated: Vec<f64>) -> Result<Self> {
        let (yc, zc) = (grid.y_cells(), grid.z_cells());
        if r_hat.len() != zc || control.len() != yc * zc || treated.len() != yc * zc {
            return Err(Error::Argument("table sizes do not match the grid".into()));
        }
        let check_prob = |v: &[f64]| {
            let s: f64 = v.iter().sum();
            v.iter().all(|x| *x >= 0.0 && x.is_finite()) && (s - 1.0).abs() < 1e-9
        };
        if !check_prob(&r_hat) || !control.chunks_exact(yc).chain(treated.chunks_exact(yc)).all(check_prob) {
            return Err(Error::Argument("tables must hold probability vectors".into()));
        }
        Ok(ConditionalModel {
            grid,
            r_hat,
            rows: [control, treated],
            degenerate: [vec![false; zc], vec![false; zc]],
            n_obs: [0, 0],
            diagnostics: ModelDiagnostics::default(),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn d_y(&self) -> usize {
        self.grid.d_y
    }

    pub fn d_z(&self) -> usize {
        self.grid.d_z
    }

    /// Observation counts `(n, m)` behind the two fits (zero for table-built models).
    pub fn n_obs(&self) -> [usize; 2] {
        self.n_obs
    }

    pub fn diagnostics(&self) -> &ModelDiagnostics {
        &self.diagnostics
    }

    /// Aligned covariate marginal `R`, as cell masses.
    pub fn r_hat(&self) -> &[f64] {
        &self.r_hat
    }

    /// Covariate marginal of the group's aligned joint law. Both groups share
    /// the same array by construction.
    pub fn z_marginal(&self, _group: Group) -> &[f64] {
        &self.r_hat
    }

    /// Conditional outcome distribution over outcome cells at covariate cell `z_cell`.
    pub fn conditional_row(&self, group: Group, z_cell: usize) -> &[f64] {
        let yc = self.grid.y_cells();
        &self.rows[group.index()][z_cell * yc..(z_cell + 1) * yc]
    }

    /// Full `[z_cell][y_cell]` conditional table of a group.
    pub fn conditional_table(&self, group: Group) -> &[f64] {
        &self.rows[group.index()]
    }

    pub fn is_degenerate(&self, group: Group, z_cell: usize) -> bool {
        self.degenerate[group.index()][z_cell]
    }

    /// Mean of the conditional row using cell centres.
    pub fn conditional_mean(&self, group: Group, z_cell: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.grid.d_y];
        for (y, p) in self.conditional_row(group, z_cell).iter().enumerate() {
            for (acc, c) in m.iter_mut().zip(self.grid.y_center(y)) {
                *acc += p * c;
            }
        }
        m
    }

    fn jitter<R: Rng + ?Sized>(cell: usize, side: usize, dims: usize, rng: &mut R, out: &mut Vec<f64>) {
        let start = out.len();
        out.resize(start + dims, 0.0);
        let mut lin = cell;
        for r in (0..dims).rev() {
            let i = lin % side;
            lin /= side;
            out[start + r] = (i as f64 + rng.random::<f64>()) / side as f64;
        }
    }

    /// `count` i.i.d. outcome draws at covariate cell `z_cell`: a categorical
    /// cell draw followed by uniform jitter inside the cell.
    pub fn sample_conditional<R: Rng + ?Sized>(
        &self,
        group: Group,
        z_cell: usize,
        count: usize,
        rng: &mut R,
    ) -> Result<Points> {
        if z_cell >= self.grid.z_cells() {
            return Err(Error::Argument(format!("covariate cell {z_cell} outside [0, {})", self.grid.z_cells())));
        }
        let cdf = cumulative(self.conditional_row(group, z_cell));
        let mut coords = Vec::with_capacity(count * self.grid.d_y);
        for _ in 0..count {
            let cell = draw_index(&cdf, rng);
            Self::jitter(cell, self.grid.grid_ny, self.grid.d_y, rng, &mut coords);
        }
        Points::new(self.grid.d_y, coords)
    }

    /// `count` i.i.d. covariate draws from `R` with in-cell jitter.
    pub fn sample_marginal_z<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> ZDraws {
        let cdf = cumulative(&self.r_hat);
        let mut cells = Vec::with_capacity(count);
        let mut points = Vec::with_capacity(count * self.grid.d_z);
        for _ in 0..count {
            let cell = draw_index(&cdf, rng);
            cells.push(cell);
            Self::jitter(cell, self.grid.grid_nz, self.grid.d_z, rng, &mut points);
        }
        ZDraws { cells, points }
    }
}
