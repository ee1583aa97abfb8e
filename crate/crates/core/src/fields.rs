//! Grids, sampled random paths and white noise.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::quad::{normal_cdf, normal_quantile};
use crate::seed;

/// Uniform grid `lower + i * step`, `i = 0..count`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub lower: f64,
    pub step: f64,
    pub count: usize,
}

impl Grid1D {
    pub fn new(lower: f64, upper: f64, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 points, got {count}")));
        }
        if !(lower.is_finite() && upper.is_finite() && upper > lower) {
            return Err(Error::InvalidGrid(format!("bad interval [{lower}, {upper}]")));
        }
        Ok(Grid1D {
            lower,
            step: (upper - lower) / (count - 1) as f64,
            count,
        })
    }

    /// Grid on `[lower, upper]` whose step does not exceed `max_step`.
    pub fn with_max_step(lower: f64, upper: f64, max_step: f64) -> Result<Self> {
        if !(max_step > 0.0) {
            return Err(Error::InvalidGrid(format!("non-positive step {max_step}")));
        }
        let cells = ((upper - lower) / max_step).ceil().max(1.0) as usize;
        Grid1D::new(lower, upper, cells + 1)
    }

    pub fn upper(&self) -> f64 {
        self.lower + self.step * (self.count - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.lower + self.step * i as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(|i| self.node(i))
    }

    pub fn nearest(&self, x: f64) -> usize {
        let i = ((x - self.lower) / self.step).round();
        i.clamp(0.0, (self.count - 1) as f64) as usize
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub x: Grid1D,
    pub t: Grid1D,
}

impl Grid2D {
    pub fn new(x: Grid1D, t: Grid1D) -> Self {
        Grid2D { x, t }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ProcessKind {
    Brownian,
    Gaussian(CovarianceKernel),
    OrnsteinUhlenbeck { theta: f64, sigma: f64 },
    Translated,
    Deterministic,
    Resampled,
}

/// Values of one path on a grid; linear interpolation between nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledProcess {
    pub grid: Grid1D,
    pub values: Vec<f64>,
    pub seed: Option<u64>,
    pub kind: ProcessKind,
}

impl SampledProcess {
    pub fn deterministic(grid: Grid1D, f: impl Fn(f64) -> f64) -> Self {
        SampledProcess {
            values: grid.nodes().map(f).collect(),
            grid,
            seed: None,
            kind: ProcessKind::Deterministic,
        }
    }

    pub fn interpolate(&self, x: f64) -> Result<f64> {
        if !self.grid.contains(x) {
            return Err(Error::Domain {
                x,
                t: 0.0,
                domain: crate::error::Rect::new(self.grid.lower, self.grid.upper(), f64::NEG_INFINITY, f64::INFINITY),
            });
        }
        let s = (x - self.grid.lower) / self.grid.step;
        let i = (s.floor() as usize).min(self.grid.count - 2);
        let w = s - i as f64;
        Ok((1.0 - w) * self.values[i] + w * self.values[i + 1])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SampledProcess {
        SampledProcess {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Natural cubic spline through the nodes.
    pub fn spline(&self) -> CubicSpline {
        CubicSpline::natural(self.grid, &self.values)
    }

    /// Resamples the spline interpolant onto `grid`.
    pub fn resample(&self, grid: Grid1D) -> Result<SampledProcess> {
        if grid.lower < self.grid.lower - 1e-12 || grid.upper() > self.grid.upper() + 1e-12 {
            return Err(Error::InvalidGrid(format!(
                "resampling grid [{}, {}] exceeds [{}, {}]",
                grid.lower,
                grid.upper(),
                self.grid.lower,
                self.grid.upper()
            )));
        }
        let sp = self.spline();
        Ok(SampledProcess {
            values: grid.nodes().map(|x| sp.eval(x, 0)).collect(),
            grid,
            seed: self.seed,
            kind: ProcessKind::Resampled,
        })
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "x,value")?;
        for (x, v) in self.grid.nodes().zip(&self.values) {
            writeln!(w, "{x},{v}")?;
        }
        Ok(())
    }
}

/// Natural cubic spline on a uniform grid.
#[derive(Clone, Debug)]
pub struct CubicSpline {
    grid: Grid1D,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn natural(grid: Grid1D, y: &[f64]) -> Self {
        let n = y.len();
        let h = grid.step;
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm for m[1..n-1] with m[0] = m[n-1] = 0.
            let k = n - 2;
            let mut c = vec![0.0; k];
            let mut d = vec![0.0; k];
            for i in 0..k {
                let rhs = 6.0 * (y[i + 2] - 2.0 * y[i + 1] + y[i]) / (h * h);
                let (a, b, cc) = (1.0, 4.0, 1.0);
                if i == 0 {
                    c[i] = cc / b;
                    d[i] = rhs / b;
                } else {
                    let den = b - a * c[i - 1];
                    c[i] = cc / den;
                    d[i] = (rhs - a * d[i - 1]) / den;
                }
            }
            for i in (0..k).rev() {
                m[i + 1] = if i + 1 < k { d[i] - c[i] * m[i + 2] } else { d[i] };
            }
        }
        CubicSpline { grid, y: y.to_vec(), m }
    }

    pub fn grid(&self) -> Grid1D {
        self.grid
    }

    /// Derivative of order `k` (0..=3) at `x`; extrapolates linearly past the ends.
    pub fn eval(&self, x: f64, k: u32) -> f64 {
        let h = self.grid.step;
        let n = self.y.len();
        let s = ((x - self.grid.lower) / h).floor();
        let i = s.clamp(0.0, (n - 2) as f64) as usize;
        let xl = self.grid.node(i);
        let a = (x - xl) / h;
        let b = 1.0 - a;
        let (yl, yr, ml, mr) = (self.y[i], self.y[i + 1], self.m[i], self.m[i + 1]);
        match k {
            0 => b * yl + a * yr + ((b * b * b - b) * ml + (a * a * a - a) * mr) * h * h / 6.0,
            1 => (yr - yl) / h + ((1.0 - 3.0 * b * b) * ml + (3.0 * a * a - 1.0) * mr) * h / 6.0,
            2 => b * ml + a * mr,
            3 => (mr - ml) / h,
            _ => 0.0,
        }
    }
}

/// Covariance function of a Gaussian process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceKernel {
    /// `exp(-|x - y| / ell)`
    Exponential { ell: f64 },
    /// `exp(-(x - y)^2 / ell^2)`
    SquaredExponential { ell: f64 },
    /// `min(|x|, |y|)` for same-sign arguments, zero otherwise.
    Brownian,
    /// Stationary correlation tabulated at lags `0, step, 2 step, ...`.
    Tabulated { step: f64, values: Vec<f64> },
}

impl CovarianceKernel {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            CovarianceKernel::Exponential { ell } => (-(x - y).abs() / ell).exp(),
            CovarianceKernel::SquaredExponential { ell } => {
                let d = (x - y) / ell;
                (-d * d).exp()
            }
            CovarianceKernel::Brownian => {
                if x * y <= 0.0 {
                    0.0
                } else {
                    x.abs().min(y.abs())
                }
            }
            CovarianceKernel::Tabulated { step, values } => {
                let s = (x - y).abs() / step;
                let i = s.floor() as usize;
                if i + 1 >= values.len() {
                    return *values.last().unwrap_or(&0.0);
                }
                let w = s - i as f64;
                (1.0 - w) * values[i] + w * values[i + 1]
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            CovarianceKernel::Exponential { ell } | CovarianceKernel::SquaredExponential { ell } => {
                if !(*ell > 0.0) {
                    return Err(param("ell", format!("must be positive, got {ell}")));
                }
            }
            CovarianceKernel::Tabulated { step, values } => {
                if !(*step > 0.0) || values.is_empty() {
                    return Err(param("values", "tabulated kernel needs a positive step and values"));
                }
            }
            CovarianceKernel::Brownian => {}
        }
        Ok(())
    }
}

pub const MAX_CHOLESKY_POINTS: usize = 4096;

fn check_grid(grid: &Grid1D) -> Result<()> {
    if grid.count < 2 || !(grid.step > 0.0) || !grid.lower.is_finite() {
        return Err(Error::InvalidGrid(format!("{grid:?}")));
    }
    Ok(())
}

/// Brownian path with `W(0) = 0`; `0` must lie in the grid interval.
pub fn sample_brownian(grid: Grid1D, seed: u64) -> Result<SampledProcess> {
    check_grid(&grid)?;
    if grid.lower > 0.0 || grid.upper() < 0.0 {
        return Err(Error::InvalidGrid(format!(
            "Brownian paths are pinned at 0, which is outside [{}, {}]",
            grid.lower,
            grid.upper()
        )));
    }
    let mut rng = seed::rng(seed);
    let mut w = vec![0.0; grid.count];
    // Nodes bracketing 0 are independent N(0, |x|); walk outward from them.
    let j0 = (((0.0 - grid.lower) / grid.step).floor() as usize).min(grid.count - 1);
    let j1 = if grid.node(j0) == 0.0 || j0 + 1 == grid.count {
        j0
    } else {
        j0 + 1
    };
    for j in [j0, j1] {
        let z: f64 = rng.sample(StandardNormal);
        w[j] = grid.node(j).abs().sqrt() * z;
    }
    if grid.node(j0) == 0.0 {
        w[j0] = 0.0;
    }
    let sd = grid.step.sqrt();
    for j in j1 + 1..grid.count {
        let z: f64 = rng.sample(StandardNormal);
        w[j] = w[j - 1] + sd * z;
    }
    for j in (0..j0).rev() {
        let z: f64 = rng.sample(StandardNormal);
        w[j] = w[j + 1] + sd * z;
    }
    Ok(SampledProcess {
        grid,
        values: w,
        seed: Some(seed),
        kind: ProcessKind::Brownian,
    })
}

/// Centred Gaussian path with covariance `variance * kernel` via Cholesky.
pub fn sample_gaussian(grid: Grid1D, kernel: &CovarianceKernel, variance: f64, seed: u64) -> Result<SampledProcess> {
    check_grid(&grid)?;
    kernel.validate()?;
    if !(variance > 0.0) {
        return Err(param("variance", format!("must be positive, got {variance}")));
    }
    let n = grid.count;
    if n > MAX_CHOLESKY_POINTS {
        return Err(Error::InvalidGrid(format!(
            "{n} points exceeds the dense Cholesky limit {MAX_CHOLESKY_POINTS}"
        )));
    }
    let jitter = 1e-10 * variance;
    let xs: Vec<f64> = grid.nodes().collect();
    let c = DMatrix::from_fn(n, n, |i, j| {
        variance * kernel.eval(xs[i], xs[j]) + if i == j { jitter } else { 0.0 }
    });
    let chol = c.cholesky().ok_or_else(|| Error::KernelNotPsd {
        pivot: first_bad_pivot(&xs, kernel, variance, jitter),
    })?;
    let l = chol.l();
    let mut rng = seed::rng(seed);
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let values = (0..n).map(|i| (0..=i).map(|j| l[(i, j)] * z[j]).sum()).collect();
    Ok(SampledProcess {
        grid,
        values,
        seed: Some(seed),
        kind: ProcessKind::Gaussian(kernel.clone()),
    })
}

fn first_bad_pivot(xs: &[f64], kernel: &CovarianceKernel, variance: f64, jitter: f64) -> usize {
    // Grow the leading block until factorisation fails.
    for m in 1..=xs.len() {
        let c = DMatrix::from_fn(m, m, |i, j| {
            variance * kernel.eval(xs[i], xs[j]) + if i == j { jitter } else { 0.0 }
        });
        if c.cholesky().is_none() {
            return m - 1;
        }
    }
    xs.len()
}

/// Stationary Ornstein-Uhlenbeck path `dX = -theta X dt + sigma dW` (exact transitions).
pub fn sample_ou(grid: Grid1D, theta: f64, sigma: f64, seed: u64) -> Result<SampledProcess> {
    check_grid(&grid)?;
    if !(theta > 0.0) || !(sigma > 0.0) {
        return Err(param(
            "theta",
            format!("need theta > 0 and sigma > 0, got {theta}, {sigma}"),
        ));
    }
    let var = sigma * sigma / (2.0 * theta);
    let a = (-theta * grid.step).exp();
    let sd = (var * (1.0 - a * a)).sqrt();
    let mut rng = seed::rng(seed);
    let mut values = Vec::with_capacity(grid.count);
    let z: f64 = rng.sample(StandardNormal);
    values.push(var.sqrt() * z);
    for i in 1..grid.count {
        let z: f64 = rng.sample(StandardNormal);
        values.push(a * values[i - 1] + sd * z);
    }
    Ok(SampledProcess {
        grid,
        values,
        seed: Some(seed),
        kind: ProcessKind::OrnsteinUhlenbeck { theta, sigma },
    })
}

/// Inverse marginal distribution used by [`translation_transform`].
pub trait MarginalQuantile: Send + Sync {
    /// Quantile at probability `p`; `q = 1 - p` is passed separately for tail accuracy.
    fn quantile(&self, p: f64, q: f64) -> f64;
}

#[derive(Clone, Copy, Debug)]
pub struct GaussianMarginal;

impl MarginalQuantile for GaussianMarginal {
    fn quantile(&self, p: f64, q: f64) -> f64 {
        if p <= 0.5 {
            normal_quantile(p)
        } else {
            -normal_quantile(q)
        }
    }
}

/// Uniform marginal on `[lo, hi]`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct UniformMarginal {
    pub lo: f64,
    pub hi: f64,
}

impl MarginalQuantile for UniformMarginal {
    fn quantile(&self, p: f64, q: f64) -> f64 {
        let v = if p <= 0.5 {
            self.lo + (self.hi - self.lo) * p
        } else {
            self.hi - (self.hi - self.lo) * q
        };
        v.clamp(self.lo, self.hi)
    }
}

pub struct QuantileFn<F>(pub F);

impl<F: Fn(f64) -> f64 + Send + Sync> MarginalQuantile for QuantileFn<F> {
    fn quantile(&self, p: f64, _q: f64) -> f64 {
        (self.0)(p)
    }
}

/// Applies `F^{-1}(Phi(x))` to a standard Gaussian value.
pub fn translate_value(x: f64, marginal: &dyn MarginalQuantile) -> f64 {
    marginal.quantile(normal_cdf(x), normal_cdf(-x))
}

/// Pointwise `F^{-1}(Phi(p(x)))` of a standardised Gaussian path.
pub fn translation_transform(p: &SampledProcess, marginal: &dyn MarginalQuantile) -> SampledProcess {
    SampledProcess {
        values: p.values.iter().map(|&x| translate_value(x, marginal)).collect(),
        grid: p.grid,
        seed: p.seed,
        kind: ProcessKind::Translated,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NoiseGrid {
    Line(Grid1D),
    Plane(Grid2D),
}

/// Gaussian white noise on grid cells.
///
/// Cell `c` is centred at a grid node and has measure `step` (or
/// `step_x * step_t`); `increments[c] ~ N(0, measure)` independently.
#[derive(Clone, Debug, PartialEq)]
pub struct WhiteNoiseField {
    pub grid: NoiseGrid,
    pub increments: Vec<f64>,
    pub seed: u64,
}

impl WhiteNoiseField {
    pub fn cell_measure(&self) -> f64 {
        match &self.grid {
            NoiseGrid::Line(g) => g.step,
            NoiseGrid::Plane(g) => g.x.step * g.t.step,
        }
    }

    /// Cell centre of flat index `c` (plane cells are stored row-major in `t`).
    pub fn centre(&self, c: usize) -> (f64, f64) {
        match &self.grid {
            NoiseGrid::Line(g) => (g.node(c), 0.0),
            NoiseGrid::Plane(g) => (g.x.node(c % g.x.count), g.t.node(c / g.x.count)),
        }
    }
}

pub fn sample_white_noise(grid: NoiseGrid, seed: u64) -> Result<WhiteNoiseField> {
    let (count, measure) = match &grid {
        NoiseGrid::Line(g) => {
            check_grid(g)?;
            (g.count, g.step)
        }
        NoiseGrid::Plane(g) => {
            check_grid(&g.x)?;
            check_grid(&g.t)?;
            (g.x.count * g.t.count, g.x.step * g.t.step)
        }
    };
    let sd = measure.sqrt();
    let mut rng = seed::rng(seed);
    let increments = (0..count)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            sd * z
        })
        .collect();
    Ok(WhiteNoiseField { grid, increments, seed })
}

/// Action `<W, psi> = sum_c psi(centre_c) dW_c`.
pub fn white_noise_action(noise: &WhiteNoiseField, psi: impl Fn(f64, f64) -> f64) -> f64 {
    (0..noise.increments.len())
        .map(|c| {
            let (x, t) = noise.centre(c);
            psi(x, t) * noise.increments[c]
        })
        .sum()
}

/// Action against precomputed weights on a sparse set of cells.
pub fn white_noise_action_sparse(noise: &WhiteNoiseField, weights: &[(usize, f64)]) -> Result<f64> {
    let mut s = 0.0;
    for &(c, w) in weights {
        let dw = noise.increments.get(c).ok_or_else(|| {
            Error::Shape(format!(
                "cell {c} outside noise grid of {} cells",
                noise.increments.len()
            ))
        })?;
        s += w * dw;
    }
    Ok(s)
}

/// Brownian sheet on a first-quadrant grid starting at the origin,
/// `W(x, t) = white noise measure of [0, x] x [0, t]`. Values are row-major in `t`.
pub fn sample_brownian_sheet(grid: Grid2D, seed: u64) -> Result<Vec<f64>> {
    check_grid(&grid.x)?;
    check_grid(&grid.t)?;
    if grid.x.lower != 0.0 || grid.t.lower != 0.0 {
        return Err(Error::InvalidGrid(
            "Brownian sheet grids must start at the origin".into(),
        ));
    }
    let (nx, nt) = (grid.x.count, grid.t.count);
    let sd = (grid.x.step * grid.t.step).sqrt();
    let mut rng = seed::rng(seed);
    let mut w = vec![0.0; nx * nt];
    for j in 1..nt {
        for i in 1..nx {
            let z: f64 = rng.sample(StandardNormal);
            w[j * nx + i] = sd * z + w[(j - 1) * nx + i] + w[j * nx + i - 1] - w[(j - 1) * nx + i - 1];
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn grid_rejects_inverted_interval() {
        assert!(matches!(Grid1D::new(1.0, 0.0, 10), Err(Error::InvalidGrid(_))));
        assert!(matches!(Grid1D::new(0.0, 1.0, 1), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn brownian_is_pinned_and_reproducible() {
        let g = Grid1D::new(-1.0, 1.0, 201).unwrap();
        let a = sample_brownian(g, 9).unwrap();
        let b = sample_brownian(g, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values[100], 0.0);
        assert!(sample_brownian(Grid1D::new(0.5, 1.0, 11).unwrap(), 1).is_err());
    }

    #[test]
    fn brownian_variance_at_one() {
        let g = Grid1D::new(0.0, 1.0, 101).unwrap();
        let w1: Vec<f64> = (0..10_000)
            .map(|s| sample_brownian(g, s).unwrap().values[100])
            .collect();
        let (m, v) = mean_var(&w1);
        // se of the variance estimate is about sqrt(2/n)
        assert!(m.abs() < 4.0 * 0.01);
        assert!((v - 1.0).abs() < 5.0 * (2.0f64 / 10_000.0).sqrt());
    }

    #[test]
    fn brownian_pin_between_nodes() {
        let g = Grid1D::new(-0.95, 1.05, 21).unwrap();
        let w: Vec<f64> = (0..20_000).map(|s| sample_brownian(g, s).unwrap().values[20]).collect();
        let (_, v) = mean_var(&w);
        assert!((v - 1.05).abs() < 5.0 * 1.05 * (2.0f64 / 20_000.0).sqrt());
    }

    #[test]
    fn exponential_kernel_covariance() {
        let g = Grid1D::new(0.0, 1.0, 11).unwrap();
        let k = CovarianceKernel::Exponential { ell: 0.5 };
        let n = 8000;
        let paths: Vec<SampledProcess> = (0..n).map(|s| sample_gaussian(g, &k, 2.0, s).unwrap()).collect();
        let c: f64 = paths.iter().map(|p| p.values[0] * p.values[4]).sum::<f64>() / n as f64;
        let want = 2.0 * (-0.4f64 / 0.5).exp();
        // product of two N(0,2) has sd at most 2*sqrt(2)
        assert!((c - want).abs() < 5.0 * 2.0 * 2f64.sqrt() / (n as f64).sqrt());
    }

    #[test]
    fn non_psd_kernel_is_rejected() {
        let g = Grid1D::new(0.0, 1.0, 5).unwrap();
        let k = CovarianceKernel::Tabulated {
            step: 0.25,
            values: vec![1.0, 0.9, -0.9, 0.0, 0.0],
        };
        assert!(matches!(
            sample_gaussian(g, &k, 1.0, 0),
            Err(Error::KernelNotPsd { .. })
        ));
    }

    #[test]
    fn ou_stationary_variance() {
        let g = Grid1D::new(0.0, 1.0, 3).unwrap();
        let xs: Vec<f64> = (0..20_000)
            .map(|s| sample_ou(g, 2.0, 1.0, s).unwrap().values[2])
            .collect();
        let (_, v) = mean_var(&xs);
        assert!((v - 0.25).abs() < 5.0 * 0.25 * (2.0f64 / 20_000.0).sqrt());
    }

    #[test]
    fn translation_identity_and_range() {
        let g = Grid1D::new(0.0, 10.0, 1001).unwrap();
        let p = sample_ou(g, 1.0, 2f64.sqrt(), 5).unwrap();
        let id = translation_transform(&p, &GaussianMarginal);
        for (a, b) in p.values.iter().zip(&id.values) {
            assert!((a - b).abs() < 1e-12);
        }
        let u = translation_transform(&p, &UniformMarginal { lo: 0.5, hi: 2.0 });
        assert!(u.values.iter().all(|v| (0.5..=2.0).contains(v)));
    }

    #[test]
    fn white_noise_action_variance() {
        let g = Grid1D::new(0.0, 1.0, 51).unwrap();
        let n = 20_000;
        let a: Vec<f64> = (0..n)
            .map(|s| {
                let w = sample_white_noise(NoiseGrid::Line(g), s).unwrap();
                white_noise_action(&w, |x, _| x)
            })
            .collect();
        let (_, v) = mean_var(&a);
        let want: f64 = g.nodes().map(|x| x * x * g.step).sum();
        assert!((v - want).abs() < 5.0 * want * (2.0f64 / n as f64).sqrt());
    }

    #[test]
    fn spline_reproduces_cubic_interior() {
        let g = Grid1D::new(0.0, 1.0, 41).unwrap();
        let p = SampledProcess::deterministic(g, |x| (3.0 * x).sin());
        let s = p.spline();
        for &x in &[0.3, 0.51, 0.77] {
            assert!((s.eval(x, 0) - (3.0 * x).sin()).abs() < 1e-6);
            assert!((s.eval(x, 1) - 3.0 * (3.0 * x).cos()).abs() < 1e-4);
        }
    }

    #[test]
    fn sheet_variance() {
        let g = Grid2D::new(Grid1D::new(0.0, 1.0, 11).unwrap(), Grid1D::new(0.0, 1.0, 11).unwrap());
        let n = 10_000;
        let v: Vec<f64> = (0..n)
            .map(|s| sample_brownian_sheet(g, s).unwrap()[10 * 11 + 5])
            .collect();
        let (_, var) = mean_var(&v);
        assert!((var - 0.5).abs() < 5.0 * 0.5 * (2.0f64 / n as f64).sqrt());
    }

    #[test]
    fn csv_has_header() {
        let g = Grid1D::new(0.0, 1.0, 3).unwrap();
        let p = SampledProcess::deterministic(g, |x| x);
        let mut out = Vec::new();
        p.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "x,value\n0,0\n0.5,0.5\n1,1\n");
    }
}
