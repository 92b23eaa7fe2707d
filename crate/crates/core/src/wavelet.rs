//! Periodized tensor-product Daubechies wavelets on `[0, 1]^d`.
//!
//! Filters are derived by spectral factorisation of the Daubechies
//! half-band polynomial and checked against the orthonormality conditions.
//! Mother functions are sampled on a dyadic grid by exact refinement from
//! their integer values; pointwise values between nodes use linear
//! interpolation. Level-`j` basis functions are periodized on `[0, 1]`, so each
//! level has exactly `2^j` translates.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FILTER_TOL: f64 = 1e-12;

/// Orthonormal low-pass filter of a Daubechies wavelet with `order` vanishing
/// moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    taps: Vec<f64>,
    order: usize,
}

impl FilterBank {
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Quadrature-mirror high-pass filter `g_k = (-1)^k h_{L-1-k}`.
    pub fn high_pass(&self) -> Vec<f64> {
        let l = self.taps.len();
        (0..l)
            .map(|k| {
                let h = self.taps[l - 1 - k];
                if k % 2 == 0 {
                    h
                } else {
                    -h
                }
            })
            .collect()
    }

    /// Largest violation of the three orthonormality conditions:
    /// unit DC gain `sum h = sqrt(2)`, unit energy, and orthogonality to even shifts.
    pub fn orthonormality_defect(&self) -> f64 {
        let h = &self.taps;
        let sum: f64 = h.iter().sum();
        let energy: f64 = h.iter().map(|v| v * v).sum();
        let mut worst = (sum - std::f64::consts::SQRT_2).abs().max((energy - 1.0).abs());
        for shift in (2..h.len()).step_by(2) {
            let dot: f64 = (0..h.len() - shift).map(|i| h[i] * h[i + shift]).sum();
            worst = worst.max(dot.abs());
        }
        worst
    }

    /// Largest `|sum_k (-1)^k x_k^m h_k|` over `m < order`, with tap positions
    /// rescaled to `x_k = k / (L - 1)` in `[0, 1]`: the failure of the high-pass
    /// filter to annihilate polynomials of degree below `order`. Raw positions
    /// `k^m` reach 1e11 for long filters and would swamp the measure with rounding.
    pub fn vanishing_moment_defect(&self) -> f64 {
        let span = (self.taps.len() - 1) as f64;
        (0..self.order)
            .map(|m| {
                self.taps
                    .iter()
                    .enumerate()
                    .map(|(k, h)| {
                        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                        sign * (k as f64 / span).powi(m as i32) * h
                    })
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Roots of the real polynomial `sum_k coeffs[k] x^k` via companion-matrix
/// eigenvalues followed by Newton polishing.
fn polynomial_roots(coeffs: &[f64]) -> Vec<Complex<f64>> {
    let deg = coeffs.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    let lead = coeffs[deg];
    let mut companion = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        companion[(i, deg - 1)] = -coeffs[i] / lead;
    }
    let eval = |x: Complex<f64>| -> (Complex<f64>, Complex<f64>) {
        let mut p = Complex::new(0.0, 0.0);
        let mut dp = Complex::new(0.0, 0.0);
        for &c in coeffs.iter().rev() {
            dp = dp * x + p;
            p = p * x + Complex::new(c, 0.0);
        }
        (p, dp)
    };
    companion
        .complex_eigenvalues()
        .iter()
        .map(|&r| {
            let mut x = r;
            for _ in 0..50 {
                let (p, dp) = eval(x);
                if dp.norm() == 0.0 {
                    break;
                }
                let step = p / dp;
                x -= step;
                if step.norm() < 1e-17 * x.norm().max(1.0) {
                    break;
                }
            }
            x
        })
        .collect()
}

/// Daubechies low-pass filter with `order` vanishing moments (`2 * order` taps).
///
/// `order = 1` is the Haar filter; `order = 4` is "db4".
pub fn build_filter(order: usize) -> Result<FilterBank> {
    if !(1..=10).contains(&order) {
        return Err(Error::Config(format!("unsupported Daubechies order {order}; expected 1..=10")));
    }
    // |H(w)|^2 = cos^{2N}(w/2) P(sin^2(w/2)), P(y) = sum_k C(N-1+k, k) y^k.
    let p: Vec<f64> = (0..order).map(|k| binomial(order - 1 + k, k)).collect();
    // Each root y of P contributes the z-root of z^2 - 2(1-2y) z + 1 inside the unit circle.
    let zroots: Vec<Complex<f64>> = polynomial_roots(&p)
        .into_iter()
        .map(|y| {
            let b = Complex::new(1.0, 0.0) - y * 2.0;
            let disc = (b * b - Complex::new(1.0, 0.0)).sqrt();
            let (z1, z2) = (b + disc, b - disc);
            if z1.norm() < z2.norm() {
                z1
            } else {
                z2
            }
        })
        .collect();
    // Ascending coefficients of (1 + z)^N prod (z - z_i).
    let mut poly = vec![Complex::new(1.0, 0.0)];
    let mut mul = |root: Complex<f64>| {
        let mut next = vec![Complex::new(0.0, 0.0); poly.len() + 1];
        for (i, c) in poly.iter().enumerate() {
            next[i] -= c * root;
            next[i + 1] += c;
        }
        poly = next;
    };
    for _ in 0..order {
        mul(Complex::new(-1.0, 0.0));
    }
    for &z in &zroots {
        mul(z);
    }
    let mut taps: Vec<f64> = poly.iter().rev().map(|c| c.re).collect();
    let sum: f64 = taps.iter().sum();
    let scale = std::f64::consts::SQRT_2 / sum;
    taps.iter_mut().for_each(|t| *t *= scale);
    let bank = FilterBank { taps, order };
    let defect = bank.orthonormality_defect();
    if defect > FILTER_TOL {
        return Err(Error::Config(format!(
            "Daubechies order {order} filter failed orthonormality check (defect {defect:e})"
        )));
    }
    Ok(bank)
}

/// Scaling and wavelet functions sampled at `x = i / 2^depth` on `[0, 2N - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    depth: u32,
    support: usize,
    scaling: Vec<f64>,
    wavelet: Vec<f64>,
}

impl Cascade {
    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Support length `2N - 1`.
    pub fn support(&self) -> usize {
        self.support
    }

    pub fn scaling_samples(&self) -> &[f64] {
        &self.scaling
    }

    pub fn wavelet_samples(&self) -> &[f64] {
        &self.wavelet
    }

    fn sample(table: &[f64], depth: u32, x: f64) -> f64 {
        let pos = x * (1u64 << depth) as f64;
        if pos < 0.0 {
            return 0.0;
        }
        let i = pos.floor() as usize;
        if i + 1 >= table.len() {
            return if i + 1 == table.len() && pos == i as f64 { table[i] } else { 0.0 };
        }
        let frac = pos - i as f64;
        if frac == 0.0 {
            table[i]
        } else {
            table[i] * (1.0 - frac) + table[i + 1] * frac
        }
    }

    /// Mother scaling function at `x` (zero outside the support).
    pub fn phi(&self, x: f64) -> f64 {
        Self::sample(&self.scaling, self.depth, x)
    }

    /// Mother wavelet at `x` (zero outside the support).
    pub fn psi(&self, x: f64) -> f64 {
        Self::sample(&self.wavelet, self.depth, x)
    }

    /// Sup-norm residual of `phi(x) = sqrt(2) sum_k h_k phi(2x - k)` over the
    /// grid nodes whose refinement arguments are themselves grid nodes.
    pub fn refinement_residual(&self, filter: &FilterBank) -> f64 {
        let scale = 1usize << self.depth;
        let last = self.scaling.len() - 1;
        let mut worst: f64 = 0.0;
        // 2x - k lands on the grid for every x = i / 2^depth with 2i - k 2^depth in range.
        for i in 0..=last {
            let mut acc = 0.0;
            for (k, h) in filter.taps().iter().enumerate() {
                let idx = 2 * i as i64 - (k * scale) as i64;
                if idx >= 0 && (idx as usize) <= last {
                    acc += h * self.scaling[idx as usize];
                }
            }
            worst = worst.max((self.scaling[i] - std::f64::consts::SQRT_2 * acc).abs());
        }
        worst
    }
}

/// Samples the mother scaling function and wavelet by dyadic refinement.
pub fn cascade_evaluate(filter: &FilterBank, depth: u32) -> Result<Cascade> {
    if depth < 6 {
        return Err(Error::Argument(format!("cascade depth {depth} is below the minimum of 6")));
    }
    if depth > 20 {
        return Err(Error::Argument(format!("cascade depth {depth} exceeds 20")));
    }
    let h = filter.taps();
    let taps = h.len();
    let support = taps - 1;
    let scale = 1usize << depth;
    let len = support * scale + 1;
    if support == 1 {
        // Haar in closed form; the refinement would round sqrt(2) * 2^{-1/2} away from one.
        let mut phi = vec![1.0; len];
        phi[len - 1] = 0.0;
        let psi = (0..len)
            .map(|i| {
                if i == len - 1 {
                    0.0
                } else if 2 * i < scale {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        return Ok(Cascade { depth, support, scaling: phi, wavelet: psi });
    }
    let mut phi = vec![0.0; len];

    // Values at the integers: eigenvector of M[i][m] = sqrt(2) h[2i - m] for
    // eigenvalue one, normalised by sum phi(k) = 1. phi vanishes at both ends.
    {
        let interior = support - 1;
        let mut a = DMatrix::<f64>::zeros(interior, interior);
        for r in 0..interior {
            let i = r + 1;
            for c in 0..interior {
                let m = c + 1;
                let k = 2 * i as i64 - m as i64;
                if k >= 0 && (k as usize) < taps {
                    a[(r, c)] = std::f64::consts::SQRT_2 * h[k as usize];
                }
            }
            a[(r, r)] -= 1.0;
        }
        let mut rhs = DVector::<f64>::zeros(interior);
        for c in 0..interior {
            a[(interior - 1, c)] = 1.0;
        }
        rhs[interior - 1] = 1.0;
        let v = a.lu().solve(&rhs).ok_or_else(|| Error::Config("singular refinement system".into()))?;
        for (r, val) in v.iter().enumerate() {
            phi[(r + 1) * scale] = *val;
        }
    }

    for level in 1..=depth {
        let stride = scale >> level;
        let mut i = stride;
        while i < len {
            let mut acc = 0.0;
            for (k, hk) in h.iter().enumerate() {
                let idx = 2 * i as i64 - (k * scale) as i64;
                if idx >= 0 && (idx as usize) < len {
                    acc += hk * phi[idx as usize];
                }
            }
            phi[i] = std::f64::consts::SQRT_2 * acc;
            i += 2 * stride;
        }
    }

    let g = filter.high_pass();
    let psi = (0..len)
        .map(|i| {
            let acc: f64 = g
                .iter()
                .enumerate()
                .filter_map(|(k, gk)| {
                    let idx = 2 * i as i64 - (k * scale) as i64;
                    (idx >= 0 && (idx as usize) < len).then(|| gk * phi[idx as usize])
                })
                .sum();
            std::f64::consts::SQRT_2 * acc
        })
        .collect();

    Ok(Cascade { depth, support, scaling: phi, wavelet: psi })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    Periodization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FunctionKind {
    Scaling,
    Wavelet,
}

/// Periodized tensor-product Daubechies basis on `[0, 1]^dim` for levels
/// `coarse_level..=max_level`. Immutable once built.
#[derive(Debug, Clone)]
pub struct WaveletBasis {
    filter: FilterBank,
    high_pass: Vec<f64>,
    cascade: Cascade,
    dim: usize,
    coarse_level: u32,
    max_level: u32,
    boundary_mode: BoundaryMode,
}

impl WaveletBasis {
    pub fn new(order: usize, dim: usize, coarse_level: u32, max_level: u32, cascade_depth: u32) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("basis dimension must be positive".into()));
        }
        if max_level < coarse_level {
            return Err(Error::Config(format!("max level {max_level} is below coarse level {coarse_level}")));
        }
        if max_level > 16 {
            return Err(Error::Config(format!("max level {max_level} exceeds 16")));
        }
        let filter = build_filter(order)?;
        let cascade = cascade_evaluate(&filter, cascade_depth)?;
        Ok(WaveletBasis {
            high_pass: filter.high_pass(),
            filter,
            cascade,
            dim,
            coarse_level,
            max_level,
            boundary_mode: BoundaryMode::Periodization,
        })
    }

    pub fn filter(&self) -> &FilterBank {
        &self.filter
    }

    pub fn cascade(&self) -> &Cascade {
        &self.cascade
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coarse_level(&self) -> u32 {
        self.coarse_level
    }

    pub fn max_level(&self) -> u32 {
        self.max_level
    }

    pub fn boundary_mode(&self) -> BoundaryMode {
        self.boundary_mode
    }

    fn check_level(&self, level: u32) -> Result<()> {
        if level < self.coarse_level || level > self.max_level {
            return Err(Error::Argument(format!("level {level} outside [{}, {}]", self.coarse_level, self.max_level)));
        }
        Ok(())
    }

    /// Periodized `2^{j/2} f(2^j x - k)` for the chosen mother function.
    pub fn eval_1d(&self, kind: FunctionKind, level: u32, shift: usize, x: f64) -> Result<f64> {
        self.check_level(level)?;
        let n = 1usize << level;
        if shift >= n {
            return Err(Error::Argument(format!("shift {shift} outside [0, {n}) at level {level}")));
        }
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Argument(format!("x = {x} outside [0, 1]")));
        }
        Ok(self.periodized(kind, level, shift, x))
    }

    fn periodized(&self, kind: FunctionKind, level: u32, shift: usize, x: f64) -> f64 {
        let n = (1usize << level) as f64;
        let mut t = (n * x - shift as f64).rem_euclid(n);
        let support = self.cascade.support as f64;
        let mut acc = 0.0;
        while t < support {
            acc += match kind {
                FunctionKind::Scaling => self.cascade.phi(t),
                FunctionKind::Wavelet => self.cascade.psi(t),
            };
            t += n;
        }
        n.sqrt() * acc
    }

    /// Tensor-product function `prod_r f_{l_r}(x_r)`; `types[r] = 0` selects the
    /// scaling function and `1` the wavelet in coordinate `r`.
    pub fn eval_tensor(&self, level: u32, shifts: &[usize], types: &[u8], x: &[f64]) -> Result<f64> {
        if shifts.len() != self.dim || types.len() != self.dim || x.len() != self.dim {
            return Err(Error::Argument(format!(
                "expected {} shifts, types and coordinates; got {}, {}, {}",
                self.dim,
                shifts.len(),
                types.len(),
                x.len()
            )));
        }
        let mut acc = 1.0;
        for r in 0..self.dim {
            let kind = match types[r] {
                0 => FunctionKind::Scaling,
                1 => FunctionKind::Wavelet,
                t => return Err(Error::Argument(format!("type entry {t} is not 0 or 1"))),
            };
            acc *= self.eval_1d(kind, level, shifts[r], x[r])?;
        }
        Ok(acc)
    }

    /// All nonzero level-`level` periodized scaling values at `x`, as
    /// `(shift, value)` pairs with distinct shifts.
    pub(crate) fn scaling_row(&self, level: u32, x: f64, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let n = 1usize << level;
        let base = (n as f64) * x;
        let fl = base.floor();
        let scale = (n as f64).sqrt();
        for q in 0..self.cascade.support {
            let k_raw = fl as i64 - q as i64;
            let u = base - k_raw as f64;
            let v = self.cascade.phi(u);
            if v == 0.0 {
                continue;
            }
            let k = k_raw.rem_euclid(n as i64) as usize;
            match out.iter_mut().find(|(kk, _)| *kk == k) {
                Some(slot) => slot.1 += scale * v,
                None => out.push((k, scale * v)),
            }
        }
    }

    /// Dense `points.len() x 2^level` matrix of periodized scaling values.
    pub(crate) fn scaling_matrix(&self, level: u32, points: &[f64]) -> Vec<f64> {
        let n = 1usize << level;
        let mut m = vec![0.0; points.len() * n];
        let mut row = Vec::new();
        for (i, &x) in points.iter().enumerate() {
            self.scaling_row(level, x, &mut row);
            for &(k, v) in &row {
                m[i * n + k] = v;
            }
        }
        m
    }

    /// In-place multilevel periodic DWT of a cube of side `2^level` in `dim`
    /// dimensions, from scaling coefficients at `level` down to `coarse_level`.
    /// The result uses the Mallat layout: along each axis, at level `j` the
    /// scaling half occupies `[0, 2^j)` and the detail half `[2^j, 2^{j+1})`.
    pub(crate) fn forward(&self, cube: &mut [f64], level: u32) {
        let side = 1usize << level;
        debug_assert_eq!(cube.len(), side.pow(self.dim as u32));
        let mut line = Vec::new();
        let mut out = Vec::new();
        for j in (self.coarse_level..level).rev() {
            let s = 1usize << (j + 1);
            for axis in 0..self.dim {
                for_each_line(side, self.dim, s, axis, |offsets| {
                    line.clear();
                    line.extend(offsets.iter().map(|&o| cube[o]));
                    analysis_step(&self.filter.taps, &self.high_pass, &line, &mut out);
                    for (o, v) in offsets.iter().zip(&out) {
                        cube[*o] = *v;
                    }
                });
            }
        }
    }

    /// Inverse of [`WaveletBasis::forward`].
    pub(crate) fn inverse(&self, cube: &mut [f64], level: u32) {
        let side = 1usize << level;
        debug_assert_eq!(cube.len(), side.pow(self.dim as u32));
        let mut line = Vec::new();
        let mut out = Vec::new();
        for j in self.coarse_level..level {
            let s = 1usize << (j + 1);
            for axis in 0..self.dim {
                for_each_line(side, self.dim, s, axis, |offsets| {
                    line.clear();
                    line.extend(offsets.iter().map(|&o| cube[o]));
                    synthesis_step(&self.filter.taps, &self.high_pass, &line, &mut out);
                    for (o, v) in offsets.iter().zip(&out) {
                        cube[*o] = *v;
                    }
                });
            }
        }
    }
}

/// Calls `f` with the flat offsets of every axis-aligned line of length `s`
/// inside the sub-cube `[0, s)^dim` of a cube of side `side`.
fn for_each_line(side: usize, dim: usize, s: usize, axis: usize, mut f: impl FnMut(&[usize])) {
    let stride = side.pow((dim - 1 - axis) as u32);
    let others = dim - 1;
    let count = s.pow(others as u32);
    let mut offsets = vec![0usize; s];
    let mut idx = vec![0usize; others];
    for _ in 0..count {
        let mut base = 0usize;
        let mut o = 0;
        for r in 0..dim {
            let coord = if r == axis {
                0
            } else {
                let c = idx[o];
                o += 1;
                c
            };
            base = base * side + coord;
        }
        for (t, slot) in offsets.iter_mut().enumerate() {
            *slot = base + t * stride;
        }
        f(&offsets);
        for c in idx.iter_mut().rev() {
            *c += 1;
            if *c < s {
                break;
            }
            *c = 0;
        }
    }
}

fn analysis_step(h: &[f64], g: &[f64], x: &[f64], out: &mut Vec<f64>) {
    let s = x.len();
    let half = s / 2;
    out.clear();
    out.resize(s, 0.0);
    for k in 0..half {
        let (mut a, mut d) = (0.0, 0.0);
        for (m, (hm, gm)) in h.iter().zip(g).enumerate() {
            let v = x[(2 * k + m) % s];
            a += hm * v;
            d += gm * v;
        }
        out[k] = a;
        out[half + k] = d;
    }
}

fn synthesis_step(h: &[f64], g: &[f64], c: &[f64], out: &mut Vec<f64>) {
    let s = c.len();
    let half = s / 2;
    out.clear();
    out.resize(s, 0.0);
    for k in 0..half {
        let (a, d) = (c[k], c[half + k]);
        for (m, (hm, gm)) in h.iter().zip(g).enumerate() {
            out[(2 * k + m) % s] += hm * a + gm * d;
        }
    }
}
